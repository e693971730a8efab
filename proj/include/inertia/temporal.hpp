#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "components.hpp"
#include "thresholds.hpp"

namespace inertia {

/// Component as seen by the persistence analysis: no arcs, just membership.
struct ComponentSummary {
  std::size_t id = 0;
  TimePair pair;
  std::vector<std::string> pipe_ids;     // sorted
  std::vector<double> abs_flow_changes;  // m^3/s, aligned with pipe_ids
  double longest_path_value = 0.0;       // Pa
  double cycle_correction = 0.0;         // Pa
  RelevanceClass relevance = RelevanceClass::none;

  double max_abs_flow_change() const {
    double m = 0.0;
    for (const double q : abs_flow_changes) m = std::max(m, q);
    return m;
  }

  bool operator==(const ComponentSummary&) const = default;
};

inline ComponentSummary summarize(const Component& c, std::size_t id) {
  return {id, c.pair, c.pipe_ids, c.abs_flow_changes, c.longest_path_value, c.cycle_correction, c.relevance};
}

/// Maximal run of consecutive time pairs in which a pipe sits in a high component.
struct EventSeries {
  std::string pipe_id;
  std::size_t start_pair_index = 0;  // index among the distinct pairs of the input stream
  std::size_t length = 0;

  bool operator==(const EventSeries&) const = default;
};

struct RunHistogram {
  std::map<std::size_t, std::size_t> series_count;  // run length -> number of series
  std::size_t total_datapoints = 0;                 // (pipe, pair) memberships
  std::vector<EventSeries> series;                  // ordered by start, then pipe id

  /// Share of all data points that belong to series of this length.
  double datapoint_share(std::size_t length) const {
    const auto it = series_count.find(length);
    if (it == series_count.end() || total_datapoints == 0) return 0.0;
    return static_cast<double>(length * it->second) / static_cast<double>(total_datapoints);
  }
  std::size_t longest() const { return series_count.empty() ? 0 : series_count.rbegin()->first; }
};

namespace detail {

inline void check_time_order(std::span<const ComponentSummary> stream) {
  for (std::size_t i = 1; i < stream.size(); ++i) {
    const auto& a = stream[i - 1].pair;
    const auto& b = stream[i].pair;
    if (b.t0 < a.t0 || (b.t0 == a.t0 && b.t1 != a.t1) || (b.t0 > a.t0 && b.t0 < a.t1))
      throw std::invalid_argument("components out of time order: pair starting " + io::format_instant(b.t0) +
                                  " follows pair starting " + io::format_instant(a.t0));
  }
}

/// Start offsets of the groups of components sharing a time pair.
inline std::vector<std::size_t> pair_groups(std::span<const ComponentSummary> stream) {
  std::vector<std::size_t> starts;
  for (std::size_t i = 0; i < stream.size(); ++i)
    if (i == 0 || stream[i].pair != stream[i - 1].pair) starts.push_back(i);
  starts.push_back(stream.size());
  return starts;
}

inline bool intersects(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i < *j) ++i;
    else if (*j < *i) ++j;
    else return true;
  }
  return false;
}

}  // namespace detail

/// Per-pipe maximal runs over a time-ordered stream of high components.
/// Pairs are consecutive when one ends where the next begins.
inline RunHistogram pipe_run_lengths(std::span<const ComponentSummary> high) {
  detail::check_time_order(high);
  const auto groups = detail::pair_groups(high);

  struct OpenRun {
    std::size_t start;
    std::size_t length;
    Instant last_t1;
  };
  std::map<std::string, OpenRun, std::less<>> open;
  RunHistogram h;
  auto close = [&h](const std::string& pipe, const OpenRun& run) {
    h.series.push_back({pipe, run.start, run.length});
    ++h.series_count[run.length];
  };

  for (std::size_t g = 0; g + 1 < groups.size(); ++g) {
    const TimePair pair = high[groups[g]].pair;
    for (std::size_t i = groups[g]; i < groups[g + 1]; ++i) {
      for (const auto& pipe : high[i].pipe_ids) {
        ++h.total_datapoints;
        auto it = open.find(pipe);
        if (it != open.end() && it->second.last_t1 == pair.t0) {
          ++it->second.length;
          it->second.last_t1 = pair.t1;
          continue;
        }
        if (it != open.end()) {
          close(pipe, it->second);
          it->second = {g, 1, pair.t1};
        } else {
          open.emplace(pipe, OpenRun{g, 1, pair.t1});
        }
      }
    }
  }
  for (const auto& [pipe, run] : open) close(pipe, run);
  std::sort(h.series.begin(), h.series.end(), [](const EventSeries& a, const EventSeries& b) {
    return a.start_pair_index != b.start_pair_index ? a.start_pair_index < b.start_pair_index : a.pipe_id < b.pipe_id;
  });
  return h;
}

/// Conservative count of consecutive series: every series spans at least two
/// components, so there are at most half as many series as components.
inline std::size_t chain_upper_bound(std::size_t participating_components) { return participating_components / 2; }

struct ChainReport {
  std::vector<std::vector<std::size_t>> chains;  // component ids, length >= 2
  std::size_t participating = 0;  // components intersecting a component at an adjacent pair
  std::size_t upper_bound = 0;
  std::size_t event_count = 0;  // chains plus components that belong to no chain
};

/// Greedy chains of components at consecutive pairs with intersecting pipe
/// sets. Each component extends the earliest open chain it can; otherwise it
/// starts a new one.
inline ChainReport component_chains(std::span<const ComponentSummary> high) {
  detail::check_time_order(high);
  const auto groups = detail::pair_groups(high);
  ChainReport report;
  std::vector<bool> participates(high.size(), false);

  std::vector<std::vector<std::size_t>> all;  // positions into `high`
  std::vector<std::size_t> previous_open;     // chains whose last member is in the previous group
  for (std::size_t g = 0; g + 1 < groups.size(); ++g) {
    const TimePair pair = high[groups[g]].pair;
    const bool adjacent = g > 0 && high[groups[g - 1]].pair.t1 == pair.t0;
    std::vector<std::size_t> current_open;
    std::vector<bool> taken(previous_open.size(), false);
    for (std::size_t i = groups[g]; i < groups[g + 1]; ++i) {
      bool extended = false;
      if (adjacent) {
        for (std::size_t k = groups[g - 1]; k < groups[g]; ++k) {
          if (detail::intersects(high[k].pipe_ids, high[i].pipe_ids)) participates[k] = participates[i] = true;
        }
        for (std::size_t c = 0; c < previous_open.size() && !extended; ++c) {
          auto& chain = all[previous_open[c]];
          if (!taken[c] && detail::intersects(high[chain.back()].pipe_ids, high[i].pipe_ids)) {
            chain.push_back(i);
            taken[c] = true;
            current_open.push_back(previous_open[c]);
            extended = true;
          }
        }
      }
      if (!extended) {
        current_open.push_back(all.size());
        all.push_back({i});
      }
    }
    previous_open = std::move(current_open);
  }

  for (const auto& chain : all) {
    if (chain.size() < 2) continue;
    std::vector<std::size_t> ids;
    for (const auto pos : chain) ids.push_back(high[pos].id);
    report.chains.push_back(std::move(ids));
  }
  report.participating = static_cast<std::size_t>(std::count(participates.begin(), participates.end(), true));
  report.upper_bound = chain_upper_bound(report.participating);
  report.event_count = all.size();
  return report;
}

/// Drops every component containing a pipe whose flow change exceeds the realistic limit.
inline std::vector<ComponentSummary> realism_filter(std::span<const ComponentSummary> components,
                                                    const ThresholdConfig& cfg) {
  std::vector<ComponentSummary> kept;
  for (const auto& c : components)
    if (!(c.max_abs_flow_change() > cfg.realistic_flow_change)) kept.push_back(c);
  return kept;
}

/// `value` rounded to `digits` significant digits.
inline double round_significant(double value, int digits) {
  if (value == 0.0 || !std::isfinite(value)) return value;
  const int exponent = static_cast<int>(std::floor(std::log10(std::abs(value))));
  const double scale = std::pow(10.0, digits - 1 - exponent);
  return std::round(value * scale) / scale;
}

/// Formats with `digits` significant digits, keeping trailing zeros ("4.0").
inline std::string format_significant(double value, int digits) {
  const double r = round_significant(value, digits);
  if (r == 0.0) return "0";
  const int exponent = static_cast<int>(std::floor(std::log10(std::abs(r))));
  const int decimals = std::max(0, digits - 1 - exponent);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, r);
  return buf;
}

/// Human-readable duration in the largest fitting unit among seconds,
/// minutes, hours (up to 30 h) and days, with two significant digits.
inline std::string format_interval(double seconds) {
  const char* unit = "seconds";
  double v = seconds;
  if (seconds >= 30.0 * 3600.0) {
    unit = "days";
    v = seconds / 86400.0;
  } else if (seconds >= 3600.0) {
    unit = "hours";
    v = seconds / 3600.0;
  } else if (seconds >= 60.0) {
    unit = "minutes";
    v = seconds / 60.0;
  }
  return format_significant(v, 2) + " " + unit;
}

struct OccurrenceRate {
  std::optional<double> interval_seconds;  // empty: never
  std::string human;                       // e.g. "23 minutes" or "never"
};

inline OccurrenceRate occurrence_rate(std::size_t event_count, double horizon_seconds) {
  if (!(horizon_seconds > 0.0)) throw std::invalid_argument("occurrence_rate: horizon must be positive");
  if (event_count == 0) return {std::nullopt, "never"};
  const double interval = horizon_seconds / static_cast<double>(event_count);
  return {interval, format_interval(interval)};
}

inline double datapoint_share(std::size_t contained, std::size_t total) {
  if (total == 0) throw std::invalid_argument("datapoint_share: total must be positive");
  return static_cast<double>(contained) / static_cast<double>(total);
}

}  // namespace inertia

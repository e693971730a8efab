#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <span>
#include <utility>
#include <vector>

#include "csv.hpp"
#include "temporal.hpp"
#include "units.hpp"

namespace inertia {

struct SweepRow {
  double threshold = 0.0;  // Pa
  std::size_t n_components = 0;
  std::size_t n_pipe_datapoints = 0;
  OccurrenceRate rate;
};

/// Per threshold: components whose longest path reaches it, their pipe data
/// points and the average interval between such components.
inline std::vector<SweepRow> sweep_table(std::span<const ComponentSummary> components, std::span<const double> thresholds,
                                         double horizon_seconds) {
  std::vector<SweepRow> rows;
  rows.reserve(thresholds.size());
  for (const double t : thresholds) {
    SweepRow row;
    row.threshold = t;
    for (const auto& c : components) {
      if (c.longest_path_value >= t) {
        ++row.n_components;
        row.n_pipe_datapoints += c.pipe_ids.size();
      }
    }
    row.rate = occurrence_rate(row.n_components, horizon_seconds);
    rows.push_back(std::move(row));
  }
  return rows;
}

/// 0.1, 0.2, ..., 1.0 bar.
inline std::vector<double> default_sweep_thresholds() {
  std::vector<double> t;
  for (int i = 1; i <= 10; ++i) t.push_back(units::bar_to_pa(i / 10.0));
  return t;
}

inline std::string interval_column(const OccurrenceRate& rate) {
  return rate.interval_seconds ? "1 every " + rate.human : rate.human;
}

inline void write_sweep_csv(std::span<const SweepRow> rows, std::ostream& out) {
  out << "threshold_bar,n_components,n_pipe_datapoints,avg_interval_human,avg_interval_seconds\n";
  for (const auto& r : rows) {
    out << io::format_double(units::pa_to_bar(r.threshold)) << ',' << r.n_components << ',' << r.n_pipe_datapoints
        << ',' << interval_column(r.rate) << ',' << (r.rate.interval_seconds ? io::format_double(*r.rate.interval_seconds) : "inf")
        << '\n';
  }
}

// ---------------------------------------------------------------------------
// Hexagonal binning in log10-log10 space (pointy-top hexagons).

struct HexBin {
  double center_x = 0.0;  // log10 of |alpha| per 10 km in bar
  double center_y = 0.0;  // log10 of |alpha|/|beta|
  std::size_t count = 0;

  bool operator==(const HexBin&) const = default;
};

struct HexbinResult {
  std::vector<HexBin> bins;          // count >= min_count, sorted by (center_x, center_y)
  std::size_t suppressed_points = 0;  // points in bins below min_count
  std::size_t sentinel_points = 0;    // non-positive or non-finite coordinates
};

/// `size` is the hexagon circumradius in log10 units.
inline HexbinResult hexbin(std::span<const std::pair<double, double>> points, double size, std::size_t min_count) {
  if (!(size > 0.0)) throw std::invalid_argument("hexbin: size must be positive");
  const double sqrt3 = std::sqrt(3.0);
  auto center = [&](long long q, long long r) {
    return std::pair{size * sqrt3 * (static_cast<double>(q) + static_cast<double>(r) / 2.0),
                     size * 1.5 * static_cast<double>(r)};
  };

  HexbinResult result;
  std::map<std::pair<long long, long long>, std::size_t> counts;
  for (const auto& [px, py] : points) {
    if (!(px > 0.0) || !(py > 0.0) || !std::isfinite(px) || !std::isfinite(py)) {
      ++result.sentinel_points;
      continue;
    }
    const double x = std::log10(px), y = std::log10(py);
    const double rf = y / (1.5 * size);
    const double qf = x / (sqrt3 * size) - rf / 2.0;
    const auto q0 = static_cast<long long>(std::floor(qf)), r0 = static_cast<long long>(std::floor(rf));

    // The nearest center is a corner of the enclosing lattice rhombus. Ties go
    // to the lexicographically smallest center.
    std::pair<long long, long long> best{};
    std::pair<double, double> best_center{};
    double best_d2 = INFINITY;
    const double tie = 1e-12 * size * size;
    for (long long dq = 0; dq <= 1; ++dq) {
      for (long long dr = 0; dr <= 1; ++dr) {
        const auto c = center(q0 + dq, r0 + dr);
        const double d2 = (x - c.first) * (x - c.first) + (y - c.second) * (y - c.second);
        if (d2 < best_d2 - tie || (d2 <= best_d2 + tie && c < best_center)) {
          best_d2 = std::min(d2, best_d2);
          best = {q0 + dq, r0 + dr};
          best_center = c;
        }
      }
    }
    ++counts[best];
  }

  for (const auto& [qr, n] : counts) {
    if (n < min_count) {
      result.suppressed_points += n;
      continue;
    }
    const auto c = center(qr.first, qr.second);
    result.bins.push_back({c.first, c.second, n});
  }
  std::sort(result.bins.begin(), result.bins.end(), [](const HexBin& a, const HexBin& b) {
    return a.center_x != b.center_x ? a.center_x < b.center_x : a.center_y < b.center_y;
  });
  return result;
}

inline void write_hexbin_csv(const HexbinResult& h, std::ostream& out) {
  out << "cx,cy,count\n";
  for (const auto& b : h.bins)
    out << io::format_double(b.center_x) << ',' << io::format_double(b.center_y) << ',' << b.count << '\n';
}

}  // namespace inertia

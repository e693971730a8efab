#pragma once

// Batch stages and their file formats.
//
//   scan         states + topology (+ exclusions) -> terms.csv, scan_summary.txt
//   components   terms.csv + topology + states    -> components.csv, component_pipes.csv, components_summary.txt
//   persistence  components.csv + component_pipes.csv -> histogram*.csv, chains.csv, persistence_summary.txt
//   report       components.csv + terms.csv + scan_summary.txt -> sweep.csv, hexbin.csv
//
// run_all() does the same work in memory and writes the same files byte for
// byte. Work is split over time pairs and merged in time order, so output
// never depends on the number of threads.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "components.hpp"
#include "csv.hpp"
#include "ingest.hpp"
#include "model.hpp"
#include "parallel.hpp"
#include "physics.hpp"
#include "report.hpp"
#include "temporal.hpp"
#include "thresholds.hpp"
#include "units.hpp"

namespace inertia {

/// Bad configuration or command-line input, as opposed to bad data.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::string topology;
  std::string states;
  std::string exclusions;  // optional
  std::string out_dir = "out";
  double tau = 180.0;  // s; pairs further apart are gaps
  GasParams gas;
  ThresholdConfig thresholds;
  std::size_t threads = 1;
  std::size_t chunk_pairs = 256;
  double hexbin_size = 0.1;  // log10 units
  std::size_t hexbin_min_count = 1;
  std::vector<double> sweep_thresholds = default_sweep_thresholds();  // Pa
  std::optional<double> horizon;  // s; report stage falls back to scan_summary.txt

  void validate() const {
    if (!(tau > 0.0)) throw UsageError("tau must be positive");
    if (threads < 1) throw UsageError("threads must be at least 1");
    if (chunk_pairs < 1) throw UsageError("chunk size must be at least 1");
    if (!(hexbin_size > 0.0)) throw UsageError("hexbin size must be positive");
    if (horizon && !(*horizon > 0.0)) throw UsageError("horizon must be positive");
    try {
      gas.validate();
      thresholds.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
};

/// Applies `key = value` lines to `cfg`. Unknown keys are an error.
inline void apply_config(RunConfig& cfg, std::istream& in, const std::string& source = "config") {
  std::string line;
  std::size_t n = 0;
  auto fail = [&](const std::string& what) { throw UsageError(source + ":" + std::to_string(n) + ": " + what); };
  while (std::getline(in, line)) {
    ++n;
    std::string_view v = line;
    if (const auto hash = v.find('#'); hash != std::string_view::npos) v = v.substr(0, hash);
    v = io::trim(v);
    if (v.empty()) continue;
    const auto eq = v.find('=');
    if (eq == std::string_view::npos) fail("expected key = value");
    const std::string key(io::trim(v.substr(0, eq)));
    const std::string value(io::trim(v.substr(eq + 1)));
    auto num = [&] {
      const auto d = io::parse_double(value);
      if (!d || !std::isfinite(*d)) fail("malformed number for '" + key + "'");
      return *d;
    };
    auto count = [&] {
      const auto i = io::parse_int(value);
      if (!i || *i < 0) fail("expected a non-negative integer for '" + key + "'");
      return static_cast<std::size_t>(*i);
    };
    if (key == "topology") cfg.topology = value;
    else if (key == "states") cfg.states = value;
    else if (key == "exclusions") cfg.exclusions = value;
    else if (key == "out") cfg.out_dir = value;
    else if (key == "tau_s") cfg.tau = num();
    else if (key == "temperature_K") cfg.gas.temperature = num();
    else if (key == "pseudo_critical_pressure_bar") cfg.gas.pseudo_critical_pressure = units::bar_to_pa(num());
    else if (key == "pseudo_critical_temperature_K") cfg.gas.pseudo_critical_temperature = num();
    else if (key == "viscosity_Pas") cfg.gas.dynamic_viscosity = num();
    else if (key == "threads") cfg.threads = count();
    else if (key == "chunk_pairs") cfg.chunk_pairs = count();
    else if (key == "abs_small_bar") cfg.thresholds.abs_small = units::bar_to_pa(num());
    else if (key == "abs_high_bar") cfg.thresholds.abs_high = units::bar_to_pa(num());
    else if (key == "ratio_min") cfg.thresholds.ratio_min = num();
    else if (key == "reference_length_km") cfg.thresholds.reference_length = num() * 1e3;
    else if (key == "min_flow_change_kNm3h") cfg.thresholds.min_flow_change = units::knm3h_to_m3s(num());
    else if (key == "realistic_flow_change_kNm3h") cfg.thresholds.realistic_flow_change = units::knm3h_to_m3s(num());
    else if (key == "hexbin_size") cfg.hexbin_size = num();
    else if (key == "hexbin_min_count") cfg.hexbin_min_count = count();
    else if (key == "horizon_s") cfg.horizon = num();
    else if (key == "sweep_thresholds_bar") {
      cfg.sweep_thresholds.clear();
      for (const auto part : io::split(value, ' ')) {
        if (io::trim(part).empty()) continue;
        const auto d = io::parse_double(io::trim(part));
        if (!d || !(*d > 0.0)) fail("malformed threshold '" + std::string(part) + "'");
        cfg.sweep_thresholds.push_back(units::bar_to_pa(*d));
      }
    } else fail("unknown key '" + key + "'");
  }
}

inline void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file '" + path + "'");
  apply_config(cfg, in, path);
}

// ---------------------------------------------------------------------------
// Shared file plumbing.

namespace detail {

inline std::ofstream open_output(const std::string& dir, const std::string& name) {
  std::filesystem::create_directories(dir);
  const auto path = (std::filesystem::path(dir) / name).string();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  return out;
}

inline std::string in_dir(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

/// Key-value summary file: `key=value` per line.
inline std::map<std::string, std::string> read_summary(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, "cannot open file");
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

inline std::string fmt(double v) { return io::format_double(v); }

/// Reads consecutive frames and hands out pairs in batches.
class PairBatcher {
 public:
  PairBatcher(StateReader& reader, std::size_t batch) : reader_(reader), batch_(batch) {}

  /// Frames for the next batch; consecutive entries form the pairs. The last
  /// frame is kept as the first one of the following batch.
  bool next(std::vector<StateFrame>& frames) {
    frames.clear();
    if (carry_) frames.push_back(std::move(*carry_));
    carry_.reset();
    while (frames.size() < batch_ + 1) {
      auto f = reader_.next();
      if (!f) break;
      if (!first_) first_ = f->timestamp;
      last_ = f->timestamp;
      ++frame_count_;
      frames.push_back(std::move(*f));
    }
    if (frames.size() < 2) return false;
    carry_ = frames.back();
    return true;
  }

  std::size_t frame_count() const { return frame_count_; }
  std::optional<Instant> first() const { return first_; }
  std::optional<Instant> last() const { return last_; }

 private:
  StateReader& reader_;
  std::size_t batch_;
  std::optional<StateFrame> carry_;
  std::size_t frame_count_ = 0;
  std::optional<Instant> first_, last_;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Scan.

struct ScanCounts {
  std::size_t frames = 0;
  std::size_t pairs = 0;           // regular pairs evaluated
  std::size_t records_total = 0;   // pipes x regular pairs
  std::size_t records_missing = 0;
  std::size_t records_excluded = 0;
  std::size_t prefilter_passed = 0;
  std::size_t relevant = 0;
  std::optional<Instant> first, last;
  Diagnostics diag;

  std::size_t records_evaluated() const { return records_total - records_missing - records_excluded; }
  double horizon_seconds() const {
    return first && last ? std::chrono::duration<double>(*last - *first).count() : 0.0;
  }

  void merge(const ScanCounts& o) {
    pairs += o.pairs;
    records_total += o.records_total;
    records_missing += o.records_missing;
    records_excluded += o.records_excluded;
    prefilter_passed += o.prefilter_passed;
    relevant += o.relevant;
    diag += o.diag;
  }
};

struct ScannedRecord {
  TermRecord record;
  std::size_t element = 0;
  bool relevant = false;
};

struct PairScan {
  TimePair pair;
  std::vector<ScannedRecord> records;  // prefilter-passed, not excluded, element order
  ScanCounts counts;
};

/// Evaluates every pipe for one pair of frames.
inline PairScan scan_pair(const Network& net, const StateFrame& f0, const StateFrame& f1, const RunConfig& cfg,
                          const ExclusionIndex& exclusions) {
  PairScan out;
  out.pair = make_time_pair(f0.timestamp, f1.timestamp);
  if (out.pair.tau() > cfg.tau) {
    ++out.counts.diag.irregular_pairs;
    return out;
  }
  ++out.counts.pairs;
  for (const auto e : net.pipes()) {
    ++out.counts.records_total;
    const auto& el = net.element(e);
    const auto& q0 = f0.arc_flow[e];
    const auto& q1 = f1.arc_flow[e];
    const auto& pl = f1.node_pressure[net.from_index(e)];
    const auto& pr = f1.node_pressure[net.to_index(e)];
    const auto& rho = f1.pipe_normal_density[e] ? f1.pipe_normal_density[e] : f0.pipe_normal_density[e];
    if (!q0 || !q1 || !pl || !pr || !rho) {
      ++out.counts.records_missing;
      ++out.counts.diag.missing_data;
      continue;
    }
    if (!exclusions.empty() && exclusions.excluded(el.id, out.pair.t1)) {
      ++out.counts.records_excluded;
      ++out.counts.diag.excluded;
      continue;
    }
    if (!prefilter(*q0, *q1, cfg.thresholds)) continue;
    ++out.counts.prefilter_passed;
    ScannedRecord s{make_term_record(el.id, out.pair, el.pipe(), cfg.gas, *rho, *q0, *q1, *pl, *pr, &out.counts.diag),
                    e, false};
    s.relevant = pipe_relevant(s.record, cfg.thresholds);
    if (s.relevant) ++out.counts.relevant;
    out.records.push_back(std::move(s));
  }
  return out;
}

inline double alpha_per_10km_bar(const TermRecord& r) { return units::pa_to_bar(r.alpha_per_length * 1e4); }

inline void write_terms_header(std::ostream& out) {
  out << "t0,t1,pipe_id,flow_t0_kNm3h,flow_t1_kNm3h,dflow_kNm3h,alpha_bar,beta_bar,alpha_per_10km_bar,ratio,relevant\n";
}

inline void write_term_row(const ScannedRecord& s, std::ostream& out) {
  using detail::fmt;
  const auto& r = s.record;
  out << io::format_instant(r.pair.t0) << ',' << io::format_instant(r.pair.t1) << ',' << r.pipe_id << ','
      << fmt(units::m3s_to_knm3h(r.flow_t0)) << ',' << fmt(units::m3s_to_knm3h(r.flow_t1)) << ','
      << fmt(units::m3s_to_knm3h(r.flow_change)) << ',' << fmt(units::pa_to_bar(r.alpha)) << ','
      << fmt(units::pa_to_bar(r.beta)) << ',' << fmt(alpha_per_10km_bar(r)) << ',' << fmt(r.ratio) << ','
      << (s.relevant ? 1 : 0) << '\n';
}

inline void write_scan_summary(const ScanCounts& c, std::ostream& out) {
  out << "frames=" << c.frames << '\n'
      << "pairs=" << c.pairs << '\n'
      << "records_total=" << c.records_total << '\n'
      << "records_missing=" << c.records_missing << '\n'
      << "records_excluded=" << c.records_excluded << '\n'
      << "records_evaluated=" << c.records_evaluated() << '\n'
      << "prefilter_passed=" << c.prefilter_passed << '\n'
      << "relevant=" << c.relevant << '\n'
      << "first_timestamp=" << (c.first ? io::format_instant(*c.first) : "") << '\n'
      << "last_timestamp=" << (c.last ? io::format_instant(*c.last) : "") << '\n'
      << "horizon_seconds=" << detail::fmt(c.horizon_seconds()) << '\n';
  c.diag.write(out);
}

/// Terms as read back from terms.csv.
struct TermRow {
  TimePair pair;
  std::string pipe_id;
  double flow_change = 0.0;     // m^3/s
  double alpha = 0.0;           // Pa
  double alpha_per_10km = 0.0;  // bar, as written
  double ratio = 0.0;
  bool relevant = false;
};

inline std::vector<TermRow> read_terms(std::istream& in, const std::string& source = "terms.csv") {
  io::CsvReader csv(in, source);
  csv.expect_header({"t0", "t1", "pipe_id", "flow_t0_kNm3h", "flow_t1_kNm3h", "dflow_kNm3h", "alpha_bar", "beta_bar",
                     "alpha_per_10km_bar", "ratio", "relevant"});
  std::vector<TermRow> rows;
  std::vector<std::string_view> f;
  while (csv.next(f)) {
    TermRow r;
    r.pair = TimePair{csv.instant(f[0]), csv.instant(f[1])};
    if (!(r.pair.t1 > r.pair.t0)) csv.fail("t1 must be after t0");
    r.pipe_id = std::string(f[2]);
    r.flow_change = units::knm3h_to_m3s(csv.number(f[5], "dflow_kNm3h"));
    r.alpha = units::bar_to_pa(csv.number(f[6], "alpha_bar"));
    r.alpha_per_10km = csv.number(f[8], "alpha_per_10km_bar");
    r.ratio = csv.number(f[9], "ratio");
    if (f[10] == "1") r.relevant = true;
    else if (f[10] != "0") csv.fail("relevant must be 0 or 1");
    rows.push_back(std::move(r));
  }
  return rows;
}

inline std::vector<TermRow> read_terms_file(const std::string& path) {
  auto in = detail::open_input(path);
  return read_terms(in, path);
}

// ---------------------------------------------------------------------------
// Components.

struct ComponentCounts {
  std::size_t total = 0;
  std::size_t by_class[3] = {0, 0, 0};
  Diagnostics diag;
};

inline void write_components_header(std::ostream& out) {
  out << "t0,t1,component_id,n_pipes,longest_path_bar,cycle_correction_bar,class,max_abs_flow_change\n";
}
inline void write_component_pipes_header(std::ostream& out) {
  out << "component_id,pipe_id,abs_flow_change_kNm3h\n";
}

inline void write_component(const ComponentSummary& c, std::ostream& components, std::ostream& pipes) {
  using detail::fmt;
  components << io::format_instant(c.pair.t0) << ',' << io::format_instant(c.pair.t1) << ',' << c.id << ','
             << c.pipe_ids.size() << ',' << fmt(units::pa_to_bar(c.longest_path_value)) << ','
             << fmt(units::pa_to_bar(c.cycle_correction)) << ',' << to_string(c.relevance) << ','
             << fmt(units::m3s_to_knm3h(c.max_abs_flow_change())) << '\n';
  for (std::size_t i = 0; i < c.pipe_ids.size(); ++i)
    pipes << c.id << ',' << c.pipe_ids[i] << ',' << fmt(units::m3s_to_knm3h(c.abs_flow_changes[i])) << '\n';
}

inline void write_components_summary(const ComponentCounts& c, std::ostream& out) {
  out << "components=" << c.total << '\n'
      << "class_none=" << c.by_class[0] << '\n'
      << "class_small=" << c.by_class[1] << '\n'
      << "class_high=" << c.by_class[2] << '\n';
  c.diag.write(out);
}

/// Reads components.csv and component_pipes.csv back into summaries.
inline std::vector<ComponentSummary> read_components(std::istream& components, std::istream& pipes,
                                                     const std::string& components_source = "components.csv",
                                                     const std::string& pipes_source = "component_pipes.csv") {
  std::vector<ComponentSummary> out;
  std::map<std::size_t, std::size_t> position;
  {
    io::CsvReader csv(components, components_source);
    csv.expect_header({"t0", "t1", "component_id", "n_pipes", "longest_path_bar", "cycle_correction_bar", "class",
                       "max_abs_flow_change"});
    std::vector<std::string_view> f;
    while (csv.next(f)) {
      ComponentSummary c;
      c.pair = TimePair{csv.instant(f[0]), csv.instant(f[1])};
      const auto id = io::parse_int(f[2]);
      if (!id || *id < 0) csv.fail("malformed component_id");
      c.id = static_cast<std::size_t>(*id);
      c.longest_path_value = units::bar_to_pa(csv.number(f[4], "longest_path_bar"));
      c.cycle_correction = units::bar_to_pa(csv.number(f[5], "cycle_correction_bar"));
      const auto cls = parse_relevance(f[6]);
      if (!cls) csv.fail("malformed class '" + std::string(f[6]) + "'");
      c.relevance = *cls;
      if (!position.emplace(c.id, out.size()).second) csv.fail("duplicate component_id");
      out.push_back(std::move(c));
    }
  }
  {
    io::CsvReader csv(pipes, pipes_source);
    csv.expect_header({"component_id", "pipe_id", "abs_flow_change_kNm3h"});
    std::vector<std::string_view> f;
    while (csv.next(f)) {
      const auto id = io::parse_int(f[0]);
      if (!id || *id < 0) csv.fail("malformed component_id");
      const auto it = position.find(static_cast<std::size_t>(*id));
      if (it == position.end()) csv.fail("unknown component_id " + std::string(f[0]));
      auto& c = out[it->second];
      c.pipe_ids.emplace_back(f[1]);
      c.abs_flow_changes.push_back(units::knm3h_to_m3s(csv.number(f[2], "abs_flow_change_kNm3h")));
    }
  }
  for (auto& c : out) {
    std::vector<std::size_t> order(c.pipe_ids.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return c.pipe_ids[a] < c.pipe_ids[b]; });
    std::vector<std::string> ids;
    std::vector<double> dq;
    for (const auto i : order) {
      ids.push_back(c.pipe_ids[i]);
      dq.push_back(c.abs_flow_changes[i]);
    }
    c.pipe_ids = std::move(ids);
    c.abs_flow_changes = std::move(dq);
  }
  return out;
}

inline std::vector<ComponentSummary> read_components_dir(const std::string& dir) {
  const auto cpath = detail::in_dir(dir, "components.csv");
  const auto ppath = detail::in_dir(dir, "component_pipes.csv");
  auto c = detail::open_input(cpath);
  auto p = detail::open_input(ppath);
  return read_components(c, p, cpath, ppath);
}

// ---------------------------------------------------------------------------
// Persistence.

struct PersistenceResult {
  std::size_t components = 0;
  std::size_t relevant_components = 0;  // small or high
  std::size_t high_components = 0;
  std::size_t dropped_by_realism = 0;   // high components dropped
  RunHistogram histogram;               // high components
  RunHistogram histogram_realistic;     // high components after the realism filter
  ChainReport chains;
  ChainReport chains_realistic;
  std::size_t relevant_events_realistic = 0;  // relevant components with consecutive intersecting ones merged
};

inline PersistenceResult analyze_persistence(std::span<const ComponentSummary> all, const ThresholdConfig& cfg) {
  PersistenceResult r;
  r.components = all.size();
  std::vector<ComponentSummary> relevant, high;
  for (const auto& c : all) {
    if (c.relevance != RelevanceClass::none) relevant.push_back(c);
    if (c.relevance == RelevanceClass::high) high.push_back(c);
  }
  r.relevant_components = relevant.size();
  r.high_components = high.size();
  const auto high_real = realism_filter(high, cfg);
  r.dropped_by_realism = high.size() - high_real.size();
  r.histogram = pipe_run_lengths(high);
  r.histogram_realistic = pipe_run_lengths(high_real);
  r.chains = component_chains(high);
  r.chains_realistic = component_chains(high_real);
  r.relevant_events_realistic = component_chains(realism_filter(relevant, cfg)).event_count;
  return r;
}

inline void write_histogram(const RunHistogram& h, std::ostream& out) {
  out << "length,series_count,datapoint_share\n";
  for (const auto& [len, n] : h.series_count) out << len << ',' << n << ',' << detail::fmt(h.datapoint_share(len)) << '\n';
}

inline void write_chains(const PersistenceResult& r, std::ostream& out) {
  out << "set,chain_id,position,component_id\n";
  auto emit = [&out](const char* set, const ChainReport& c) {
    for (std::size_t i = 0; i < c.chains.size(); ++i)
      for (std::size_t k = 0; k < c.chains[i].size(); ++k) out << set << ',' << i << ',' << k << ',' << c.chains[i][k] << '\n';
  };
  emit("all", r.chains);
  emit("realistic", r.chains_realistic);
}

inline void write_persistence_summary(const PersistenceResult& r, std::ostream& out) {
  auto series = [](const RunHistogram& h) {
    std::size_t n = 0;
    for (const auto& [len, c] : h.series_count) n += c;
    return n;
  };
  out << "components=" << r.components << '\n'
      << "relevant_components=" << r.relevant_components << '\n'
      << "high_components=" << r.high_components << '\n'
      << "high_datapoints=" << r.histogram.total_datapoints << '\n'
      << "series=" << series(r.histogram) << '\n'
      << "longest_series=" << r.histogram.longest() << '\n'
      << "share_single_step=" << detail::fmt(r.histogram.datapoint_share(1)) << '\n'
      << "chains=" << r.chains.chains.size() << '\n'
      << "chain_participants=" << r.chains.participating << '\n'
      << "chain_upper_bound=" << r.chains.upper_bound << '\n'
      << "high_events=" << r.chains.event_count << '\n'
      << "realism_dropped=" << r.dropped_by_realism << '\n'
      << "realistic_high_components=" << r.high_components - r.dropped_by_realism << '\n'
      << "realistic_high_datapoints=" << r.histogram_realistic.total_datapoints << '\n'
      << "realistic_series=" << series(r.histogram_realistic) << '\n'
      << "realistic_longest_series=" << r.histogram_realistic.longest() << '\n'
      << "realistic_chains=" << r.chains_realistic.chains.size() << '\n'
      << "realistic_chain_participants=" << r.chains_realistic.participating << '\n'
      << "realistic_chain_upper_bound=" << r.chains_realistic.upper_bound << '\n'
      << "realistic_high_events=" << r.chains_realistic.event_count << '\n'
      << "realistic_relevant_events=" << r.relevant_events_realistic << '\n';
}

inline void write_persistence_outputs(const PersistenceResult& r, const std::string& dir) {
  auto h = detail::open_output(dir, "histogram.csv");
  write_histogram(r.histogram, h);
  auto hr = detail::open_output(dir, "histogram_realistic.csv");
  write_histogram(r.histogram_realistic, hr);
  auto c = detail::open_output(dir, "chains.csv");
  write_chains(r, c);
  auto s = detail::open_output(dir, "persistence_summary.txt");
  write_persistence_summary(r, s);
}

// ---------------------------------------------------------------------------
// Report.

inline void write_report_outputs(std::span<const ComponentSummary> components,
                                 std::span<const std::pair<double, double>> points, double horizon,
                                 const RunConfig& cfg) {
  const auto rows = sweep_table(components, cfg.sweep_thresholds, horizon);
  auto s = detail::open_output(cfg.out_dir, "sweep.csv");
  write_sweep_csv(rows, s);
  const auto bins = hexbin(points, cfg.hexbin_size, cfg.hexbin_min_count);
  auto h = detail::open_output(cfg.out_dir, "hexbin.csv");
  write_hexbin_csv(bins, h);
}

// ---------------------------------------------------------------------------
// Stage drivers.

namespace detail {

inline ExclusionIndex load_exclusions(const RunConfig& cfg) {
  if (cfg.exclusions.empty()) return {};
  const auto windows = parse_exclusions_file(cfg.exclusions);
  return ExclusionIndex(windows);
}

struct PairWork {
  PairScan scan;
  std::vector<Component> components;
  Diagnostics component_diag;
};

/// Streams the state file once, evaluating pairs in parallel batches and
/// handing results to `sink` in time order.
template <class Fn, class Sink>
ScanCounts for_each_pair(const Network& net, const RunConfig& cfg, Fn&& work, Sink&& sink) {
  auto in = open_input(cfg.states);
  StateReader reader(in, net, cfg.states);
  PairBatcher batcher(reader, cfg.chunk_pairs);
  ScanCounts totals;
  std::vector<StateFrame> frames;
  while (batcher.next(frames)) {
    auto results = ordered_parallel_map<PairWork>(frames.size() - 1, cfg.threads,
                                                  [&](std::size_t i) { return work(frames[i], frames[i + 1]); });
    for (auto& r : results) {
      totals.merge(r.scan.counts);
      sink(r);
    }
  }
  totals.frames = batcher.frame_count();
  totals.first = batcher.first();
  totals.last = batcher.last();
  return totals;
}

/// Relevant pipes of one scanned pair, with alpha and the flow change at the
/// precision terms.csv stores them, so that the components stage reading the
/// file sees the very same numbers.
inline std::vector<RelevantPipe> relevant_of(const PairScan& s) {
  std::vector<RelevantPipe> out;
  for (const auto& r : s.records)
    if (r.relevant)
      out.push_back({r.element, units::bar_to_pa(units::pa_to_bar(r.record.alpha)),
                     units::knm3h_to_m3s(units::m3s_to_knm3h(r.record.flow_change))});
  return out;
}

/// Hexbin coordinates of terms.csv rows: |alpha| per 10 km in bar and |alpha|/|beta|.
inline std::vector<std::pair<double, double>> hexbin_points(std::span<const TermRow> rows) {
  std::vector<std::pair<double, double>> pts;
  pts.reserve(rows.size());
  for (const auto& r : rows) pts.emplace_back(std::abs(r.alpha_per_10km), r.ratio);
  return pts;
}

inline double resolve_horizon(const RunConfig& cfg) {
  if (cfg.horizon) return *cfg.horizon;
  const auto kv = read_summary(in_dir(cfg.out_dir, "scan_summary.txt"));
  const auto it = kv.find("horizon_seconds");
  const auto v = it == kv.end() ? std::nullopt : io::parse_double(it->second);
  if (!v) throw ParseError(in_dir(cfg.out_dir, "scan_summary.txt"), 0, "missing horizon_seconds");
  if (!(*v > 0.0)) throw ParseError(in_dir(cfg.out_dir, "scan_summary.txt"), 0, "horizon must be positive");
  return *v;
}

}  // namespace detail

inline ScanCounts run_scan(const RunConfig& cfg) {
  cfg.validate();
  const auto net = parse_topology_file(cfg.topology);
  const auto excl = detail::load_exclusions(cfg);
  auto terms = detail::open_output(cfg.out_dir, "terms.csv");
  write_terms_header(terms);
  const auto counts = detail::for_each_pair(
      net, cfg,
      [&](const StateFrame& f0, const StateFrame& f1) {
        return detail::PairWork{scan_pair(net, f0, f1, cfg, excl), {}, {}};
      },
      [&](const detail::PairWork& w) {
        for (const auto& r : w.scan.records) write_term_row(r, terms);
      });
  auto summary = detail::open_output(cfg.out_dir, "scan_summary.txt");
  write_scan_summary(counts, summary);
  return counts;
}

inline ComponentCounts run_components(const RunConfig& cfg) {
  cfg.validate();
  const auto net = parse_topology_file(cfg.topology);
  std::map<std::pair<Instant, Instant>, std::vector<RelevantPipe>> by_pair;
  for (const auto& row : read_terms_file(detail::in_dir(cfg.out_dir, "terms.csv"))) {
    if (!row.relevant) continue;
    const auto e = net.element_index(row.pipe_id);
    if (!e || !net.element(*e).is_pipe())
      throw ParseError(detail::in_dir(cfg.out_dir, "terms.csv"), 0, "unknown pipe '" + row.pipe_id + "'");
    by_pair[{row.pair.t0, row.pair.t1}].push_back({*e, row.alpha, row.flow_change});
  }

  ComponentCounts counts;
  auto comps = detail::open_output(cfg.out_dir, "components.csv");
  auto pipes = detail::open_output(cfg.out_dir, "component_pipes.csv");
  write_components_header(comps);
  write_component_pipes_header(pipes);
  std::size_t matched = 0;
  detail::for_each_pair(
      net, cfg,
      [&](const StateFrame& f0, const StateFrame& f1) {
        detail::PairWork w;
        const auto it = by_pair.find({f0.timestamp, f1.timestamp});
        if (it == by_pair.end()) return w;
        w.scan.pair = TimePair{f0.timestamp, f1.timestamp};
        w.components = analyze_pair(net, w.scan.pair, it->second, f0, f1, cfg.thresholds, &w.component_diag);
        return w;
      },
      [&](const detail::PairWork& w) {
        if (by_pair.contains({w.scan.pair.t0, w.scan.pair.t1})) ++matched;
        counts.diag += w.component_diag;
        for (const auto& c : w.components) {
          const auto s = summarize(c, counts.total++);
          ++counts.by_class[static_cast<int>(s.relevance)];
          write_component(s, comps, pipes);
        }
      });
  if (matched != by_pair.size())
    throw ParseError(detail::in_dir(cfg.out_dir, "terms.csv"), 0, "terms reference time pairs absent from the states");
  auto summary = detail::open_output(cfg.out_dir, "components_summary.txt");
  write_components_summary(counts, summary);
  return counts;
}

inline PersistenceResult run_persistence(const RunConfig& cfg) {
  cfg.validate();
  const auto components = read_components_dir(cfg.out_dir);
  const auto r = analyze_persistence(components, cfg.thresholds);
  write_persistence_outputs(r, cfg.out_dir);
  return r;
}

inline std::vector<SweepRow> run_report(const RunConfig& cfg) {
  cfg.validate();
  const auto components = read_components_dir(cfg.out_dir);
  const auto terms = read_terms_file(detail::in_dir(cfg.out_dir, "terms.csv"));
  const double horizon = detail::resolve_horizon(cfg);
  write_report_outputs(components, detail::hexbin_points(terms), horizon, cfg);
  return sweep_table(components, cfg.sweep_thresholds, horizon);
}

struct RunSummary {
  ScanCounts scan;
  ComponentCounts components;
  PersistenceResult persistence;
  std::vector<SweepRow> sweep;
};

/// All stages in one pass over the states, without re-reading intermediate files.
inline RunSummary run_all(const RunConfig& cfg) {
  cfg.validate();
  const auto net = parse_topology_file(cfg.topology);
  const auto excl = detail::load_exclusions(cfg);
  RunSummary out;
  auto terms = detail::open_output(cfg.out_dir, "terms.csv");
  auto comps = detail::open_output(cfg.out_dir, "components.csv");
  auto pipes = detail::open_output(cfg.out_dir, "component_pipes.csv");
  write_terms_header(terms);
  write_components_header(comps);
  write_component_pipes_header(pipes);

  std::vector<ComponentSummary> summaries;
  std::vector<std::pair<double, double>> points;
  out.scan = detail::for_each_pair(
      net, cfg,
      [&](const StateFrame& f0, const StateFrame& f1) {
        detail::PairWork w{scan_pair(net, f0, f1, cfg, excl), {}, {}};
        auto relevant = detail::relevant_of(w.scan);
        if (!relevant.empty())
          w.components = analyze_pair(net, w.scan.pair, std::move(relevant), f0, f1, cfg.thresholds, &w.component_diag);
        return w;
      },
      [&](const detail::PairWork& w) {
        for (const auto& r : w.scan.records) {
          write_term_row(r, terms);
          points.emplace_back(std::abs(alpha_per_10km_bar(r.record)), r.record.ratio);
        }
        out.components.diag += w.component_diag;
        for (const auto& c : w.components) {
          summaries.push_back(summarize(c, out.components.total++));
          ++out.components.by_class[static_cast<int>(summaries.back().relevance)];
          write_component(summaries.back(), comps, pipes);
        }
      });
  {
    auto s = detail::open_output(cfg.out_dir, "scan_summary.txt");
    write_scan_summary(out.scan, s);
    auto cs = detail::open_output(cfg.out_dir, "components_summary.txt");
    write_components_summary(out.components, cs);
  }
  out.persistence = analyze_persistence(summaries, cfg.thresholds);
  write_persistence_outputs(out.persistence, cfg.out_dir);

  const double horizon = cfg.horizon ? *cfg.horizon : out.scan.horizon_seconds();
  if (!(horizon > 0.0)) throw ParseError(cfg.states, 0, "state history spans no time");
  write_report_outputs(summaries, points, horizon, cfg);
  out.sweep = sweep_table(summaries, cfg.sweep_thresholds, horizon);
  return out;
}

}  // namespace inertia

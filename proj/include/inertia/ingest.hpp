#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "csv.hpp"
#include "model.hpp"
#include "physics.hpp"
#include "units.hpp"

namespace inertia {

namespace detail {
inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, "cannot open file");
  return in;
}
}  // namespace detail

// ---------------------------------------------------------------------------
// topology.csv: element_id,kind,from_node,to_node,length_m,diameter_m,roughness_m,slope
// Geometry columns are filled for pipes and empty for every other kind. An
// empty slope means the slope follows from node elevations (zero here, since
// the file carries none).

inline Network parse_topology(std::istream& in, const std::string& source = "topology.csv") {
  io::CsvReader csv(in, source);
  csv.expect_header({"element_id", "kind", "from_node", "to_node", "length_m", "diameter_m", "roughness_m", "slope"});
  std::vector<Element> elements;
  std::map<std::string, std::size_t, std::less<>> seen;
  std::vector<std::string_view> f;
  while (csv.next(f)) {
    Element e;
    e.id = std::string(f[0]);
    if (e.id.empty()) csv.fail("empty element_id");
    const auto kind = parse_element_kind(f[1]);
    if (!kind) csv.fail("unknown element kind '" + std::string(f[1]) + "'");
    e.kind = *kind;
    e.from_node = std::string(f[2]);
    e.to_node = std::string(f[3]);
    if (e.from_node.empty() || e.to_node.empty()) csv.fail("element '" + e.id + "' has an empty node reference");
    if (e.from_node == e.to_node) csv.fail("element '" + e.id + "' connects node '" + e.from_node + "' to itself");
    if (const auto [it, inserted] = seen.emplace(e.id, csv.line()); !inserted)
      csv.fail("duplicate element id '" + e.id + "' (first defined on line " + std::to_string(it->second) + ")");
    if (e.is_pipe()) {
      PipeGeometry g;
      g.length = csv.number(f[4], "length_m");
      g.diameter = csv.number(f[5], "diameter_m");
      g.roughness = csv.number(f[6], "roughness_m");
      std::optional<double> slope;
      if (!f[7].empty()) slope = csv.number(f[7], "slope");
      g.slope = resolve_slope(slope, 0.0, 0.0, g.length);
      try {
        g.validate();
      } catch (const NetworkError& err) {
        csv.fail("element '" + e.id + "': " + err.what());
      }
      e.geometry = g;
    } else {
      for (std::size_t i = 4; i < 8; ++i)
        if (!f[i].empty()) csv.fail("geometry given for non-pipe element '" + e.id + "'");
    }
    elements.push_back(std::move(e));
  }
  try {
    return Network::from_elements(std::move(elements));
  } catch (const NetworkError& err) {
    throw ParseError(source, 0, err.what());
  }
}

inline Network parse_topology_file(const std::string& path) {
  auto in = detail::open_input(path);
  return parse_topology(in, path);
}

inline void serialize_topology(const Network& net, std::ostream& out) {
  out << "element_id,kind,from_node,to_node,length_m,diameter_m,roughness_m,slope\n";
  for (const auto& e : net.elements()) {
    out << e.id << ',' << to_string(e.kind) << ',' << e.from_node << ',' << e.to_node << ',';
    if (e.geometry)
      out << io::format_double(e.geometry->length) << ',' << io::format_double(e.geometry->diameter) << ','
          << io::format_double(e.geometry->roughness) << ',' << io::format_double(e.geometry->slope);
    else
      out << ",,,";
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// states.csv: timestamp_iso8601,entity_id,quantity,value (long format)
//   node.pressure_bar   node id     bar
//   arc.flow_kNm3h      element id  1000 m^3/h at normal conditions
//   valve.open          valve id    1/0 (also true/false, open/closed)
//   pipe.rho_n_kgNm3    pipe id     kg/m^3 at normal conditions
// Rows of one timestamp are contiguous; timestamps strictly increase.

/// Streams StateFrames one timestamp at a time.
class StateReader {
 public:
  StateReader(std::istream& in, const Network& net, std::string source = "states.csv")
      : net_(net), csv_(in, std::move(source)) {
    csv_.expect_header({"timestamp_iso8601", "entity_id", "quantity", "value"});
    advance();
  }

  std::optional<StateFrame> next() {
    if (!pending_) return std::nullopt;
    StateFrame frame = StateFrame::empty(net_, pending_->timestamp);
    const Instant t = pending_->timestamp;
    while (pending_ && pending_->timestamp == t) {
      apply(frame, *pending_);
      advance();
    }
    if (pending_ && pending_->timestamp < t)
      throw ParseError(csv_.source(), pending_->line,
                       "timestamp " + io::format_instant(pending_->timestamp) + " is not after " +
                           io::format_instant(t));
    return frame;
  }

 private:
  struct Row {
    Instant timestamp;
    std::string entity;
    std::string quantity;
    std::string value;
    std::size_t line;
  };

  void advance() {
    std::vector<std::string_view> f;
    if (!csv_.next(f)) {
      pending_.reset();
      return;
    }
    pending_ = Row{csv_.instant(f[0]), std::string(f[1]), std::string(f[2]), std::string(f[3]), csv_.line()};
  }

  [[noreturn]] void fail(const Row& r, const std::string& what) const {
    throw ParseError(csv_.source(), r.line, what);
  }

  double number(const Row& r) const {
    const auto v = io::parse_double(r.value);
    if (!v || !std::isfinite(*v)) fail(r, "malformed number '" + r.value + "'");
    return *v;
  }

  std::size_t element_of_kind(const Row& r, std::optional<ElementKind> kind) const {
    const auto idx = net_.element_index(r.entity);
    if (!idx) fail(r, "unknown element id '" + r.entity + "'");
    if (kind && net_.element(*idx).kind != *kind)
      fail(r, "element '" + r.entity + "' is not a " + std::string(to_string(*kind)));
    return *idx;
  }

  template <class T>
  void set_once(std::optional<T>& slot, T value, const Row& r) const {
    if (slot) fail(r, "duplicate " + r.quantity + " for '" + r.entity + "'");
    slot = value;
  }

  void apply(StateFrame& frame, const Row& r) const {
    if (r.quantity == "node.pressure_bar") {
      const auto idx = net_.node_index(r.entity);
      if (!idx) fail(r, "unknown node id '" + r.entity + "'");
      const double p = units::bar_to_pa(number(r));
      if (!(p > 0.0)) fail(r, "pressure must be positive");
      set_once(frame.node_pressure[*idx], p, r);
    } else if (r.quantity == "arc.flow_kNm3h") {
      const auto idx = element_of_kind(r, std::nullopt);
      set_once(frame.arc_flow[idx], units::knm3h_to_m3s(number(r)), r);
    } else if (r.quantity == "valve.open") {
      const auto idx = element_of_kind(r, ElementKind::valve);
      bool open;
      if (r.value == "1" || r.value == "true" || r.value == "open") open = true;
      else if (r.value == "0" || r.value == "false" || r.value == "closed") open = false;
      else fail(r, "malformed valve state '" + r.value + "'");
      set_once(frame.valve_open[idx], open, r);
    } else if (r.quantity == "pipe.rho_n_kgNm3") {
      const auto idx = element_of_kind(r, ElementKind::pipe);
      const double rho = number(r);
      if (!normal_density_in_range(rho)) fail(r, "normal density outside (0.5, 1.3] kg/m^3");
      set_once(frame.pipe_normal_density[idx], rho, r);
    } else {
      fail(r, "unknown quantity '" + r.quantity + "'");
    }
  }

  const Network& net_;
  io::CsvReader csv_;
  std::optional<Row> pending_;
};

inline std::vector<StateFrame> parse_states(std::istream& in, const Network& net,
                                            const std::string& source = "states.csv") {
  StateReader reader(in, net, source);
  std::vector<StateFrame> frames;
  while (auto f = reader.next()) frames.push_back(std::move(*f));
  return frames;
}

inline std::vector<StateFrame> parse_states_file(const std::string& path, const Network& net) {
  auto in = detail::open_input(path);
  return parse_states(in, net, path);
}

inline void write_states_header(std::ostream& out) { out << "timestamp_iso8601,entity_id,quantity,value\n"; }

/// Writes one frame in a fixed order: pressures by node, then flows, valve
/// states and normal densities by element.
inline void write_state_frame(const Network& net, const StateFrame& frame, std::ostream& out) {
  const std::string ts = io::format_instant(frame.timestamp);
  for (std::size_t i = 0; i < net.nodes().size(); ++i)
    if (const auto& p = frame.node_pressure[i])
      out << ts << ',' << net.nodes()[i].id << ",node.pressure_bar," << io::format_double(units::pa_to_bar(*p))
          << '\n';
  for (std::size_t i = 0; i < net.elements().size(); ++i)
    if (const auto& q = frame.arc_flow[i])
      out << ts << ',' << net.element(i).id << ",arc.flow_kNm3h," << io::format_double(units::m3s_to_knm3h(*q))
          << '\n';
  for (std::size_t i = 0; i < net.elements().size(); ++i)
    if (const auto& v = frame.valve_open[i]) out << ts << ',' << net.element(i).id << ",valve.open," << (*v ? 1 : 0) << '\n';
  for (std::size_t i = 0; i < net.elements().size(); ++i)
    if (const auto& rho = frame.pipe_normal_density[i])
      out << ts << ',' << net.element(i).id << ",pipe.rho_n_kgNm3," << io::format_double(*rho) << '\n';
}

inline void serialize_states(const Network& net, std::span<const StateFrame> frames, std::ostream& out) {
  write_states_header(out);
  for (const auto& f : frames) write_state_frame(net, f, out);
}

// ---------------------------------------------------------------------------
// exclusions.csv: pipe_id,start_iso8601,end_iso8601

struct ExclusionWindow {
  std::string pipe_id;
  Instant start{};
  Instant end{};

  /// Half-open membership test [start, end).
  bool contains(Instant t) const { return t >= start && t < end; }
  bool operator==(const ExclusionWindow&) const = default;
};

inline std::vector<ExclusionWindow> parse_exclusions(std::istream& in, const std::string& source = "exclusions.csv") {
  io::CsvReader csv(in, source);
  csv.expect_header({"pipe_id", "start_iso8601", "end_iso8601"});
  std::vector<ExclusionWindow> windows;
  std::vector<std::string_view> f;
  while (csv.next(f)) {
    ExclusionWindow w{std::string(f[0]), csv.instant(f[1]), csv.instant(f[2])};
    if (w.pipe_id.empty()) csv.fail("empty pipe_id");
    if (!(w.start < w.end)) csv.fail("exclusion window must satisfy start < end");
    windows.push_back(std::move(w));
  }
  return windows;
}

inline std::vector<ExclusionWindow> parse_exclusions_file(const std::string& path) {
  auto in = detail::open_input(path);
  return parse_exclusions(in, path);
}

/// Per-pipe lookup of exclusion windows. A record is excluded when the end
/// instant t1 of its time pair lies inside a window of its pipe.
class ExclusionIndex {
 public:
  ExclusionIndex() = default;
  explicit ExclusionIndex(std::span<const ExclusionWindow> windows) {
    for (const auto& w : windows) by_pipe_[w.pipe_id].push_back(w);
  }

  bool excluded(std::string_view pipe_id, Instant t1) const {
    const auto it = by_pipe_.find(pipe_id);
    if (it == by_pipe_.end()) return false;
    return std::any_of(it->second.begin(), it->second.end(), [&](const ExclusionWindow& w) { return w.contains(t1); });
  }

  bool empty() const { return by_pipe_.empty(); }

 private:
  std::map<std::string, std::vector<ExclusionWindow>, std::less<>> by_pipe_;
};

struct ExclusionResult {
  std::vector<TermRecord> kept;
  std::size_t excluded_count = 0;
};

inline ExclusionResult apply_exclusions(std::vector<TermRecord> records, std::span<const ExclusionWindow> windows) {
  const ExclusionIndex index(windows);
  ExclusionResult result;
  for (auto& r : records) {
    if (index.excluded(r.pipe_id, r.pair.t1)) ++result.excluded_count;
    else result.kept.push_back(std::move(r));
  }
  return result;
}

}  // namespace inertia

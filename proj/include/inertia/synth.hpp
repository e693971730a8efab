#pragma once

// Synthetic state histories. Each frame solves, for the unknown node
// pressures and element flows,
//
//   p_l - p_r = alpha + beta + gamma     for every pipe (alpha against the previous frame)
//   p_l = p_r                            for every open valve (closed valves carry no flow)
//   sum(inflow) - sum(outflow) + injection = 0   for every node without a pressure setpoint
//
// by damped Newton iteration starting from the previous frame. Pipes do not
// store gas, so a boundary change moves flows within a single step.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "csv.hpp"
#include "ingest.hpp"
#include "model.hpp"
#include "physics.hpp"
#include "units.hpp"

namespace inertia {

class SimulationError : public std::runtime_error {
 public:
  SimulationError(std::size_t frame, const std::string& what)
      : std::runtime_error("frame " + std::to_string(frame) + ": " + what), frame_(frame) {}
  std::size_t frame() const noexcept { return frame_; }

 private:
  std::size_t frame_;
};

enum class SetpointKind { pressure, inflow };

/// Piecewise-constant boundary value taking effect at `frame`.
struct ScheduleEntry {
  std::string node;
  std::size_t frame = 0;
  SetpointKind kind = SetpointKind::inflow;
  double value = 0.0;  // Pa for pressure, m^3/s normal for inflow (positive = into the network)

  bool operator==(const ScheduleEntry&) const = default;
};

struct Scenario {
  Network network;
  std::string fixture;  // name of a built-in network or the topology path
  std::size_t frames = 1;
  double tau = 180.0;   // s, whole seconds
  Instant start = std::chrono::sys_days{std::chrono::year{2021} / 1 / 1};
  std::vector<ScheduleEntry> schedule;
  double noise = 0.0;  // relative amplitude applied to inflow setpoints
  std::uint64_t seed = 0;
  GasParams gas;
  double normal_density = 0.8;                     // kg/m^3, default for every pipe
  std::map<std::string, double> pipe_density;      // per-pipe overrides
  std::map<std::string, bool> valve_open;          // default open

  void validate() const {
    if (frames == 0) throw std::invalid_argument("scenario needs at least one frame");
    if (!(tau >= 1.0) || tau != std::floor(tau)) throw std::invalid_argument("scenario tau must be a whole number of seconds");
    if (!(noise >= 0.0 && noise < 1.0)) throw std::invalid_argument("scenario noise must lie in [0, 1)");
    if (!normal_density_in_range(normal_density)) throw std::invalid_argument("scenario normal density out of range");
    for (const auto& [id, rho] : pipe_density) {
      const auto idx = network.element_index(id);
      if (!idx || !network.element(*idx).is_pipe()) throw std::invalid_argument("density override for unknown pipe '" + id + "'");
      if (!normal_density_in_range(rho)) throw std::invalid_argument("normal density out of range for '" + id + "'");
    }
    for (const auto& [id, open] : valve_open) {
      const auto idx = network.element_index(id);
      if (!idx || network.element(*idx).kind != ElementKind::valve)
        throw std::invalid_argument("valve state for unknown valve '" + id + "'");
    }
    std::map<std::string, SetpointKind> kinds;
    for (const auto& e : schedule) {
      if (!network.node_index(e.node)) throw std::invalid_argument("schedule references unknown node '" + e.node + "'");
      if (e.frame >= frames) throw std::invalid_argument("schedule entry for '" + e.node + "' beyond the horizon");
      const auto [it, inserted] = kinds.emplace(e.node, e.kind);
      if (!inserted && it->second != e.kind)
        throw std::invalid_argument("node '" + e.node + "' mixes pressure and inflow setpoints");
      if (e.kind == SetpointKind::pressure && !(e.value > 0.0))
        throw std::invalid_argument("pressure setpoint for '" + e.node + "' must be positive");
    }
  }

  double density_of(const std::string& pipe) const {
    const auto it = pipe_density.find(pipe);
    return it == pipe_density.end() ? normal_density : it->second;
  }

  bool valve_is_open(const std::string& valve) const {
    const auto it = valve_open.find(valve);
    return it == valve_open.end() || it->second;
  }
};

// ---------------------------------------------------------------------------
// Built-in networks.

/// One flat pipe P1 from S to E: 100 km, 0.9 m, 0.01 mm roughness.
inline Network single_pipe_network() {
  return Network::from_elements({Element{"P1", ElementKind::pipe, "S", "E", PipeGeometry{100e3, 0.9, 1e-5, 0.0}}});
}

/// Fifty pipes: a trunk of nine 20 km / 1.0 m pipes TR01..TR09 from S through
/// T1..T9; ten branches of four 10 km / 0.4 m pipes Bb1..Bb4 hanging off S
/// (b = 0) and T1..T9, ending in Nb4; branch 3 starts behind valve V3; and an
/// export pipe EX (30 km, 1.4 m) from S to X.
inline Network trunkline50_network() {
  std::vector<Element> elements;
  auto trunk_node = [](int i) { return i == 0 ? std::string("S") : "T" + std::to_string(i); };
  for (int i = 1; i <= 9; ++i) {
    char id[8];
    std::snprintf(id, sizeof id, "TR%02d", i);
    elements.push_back({id, ElementKind::pipe, trunk_node(i - 1), trunk_node(i), PipeGeometry{20e3, 1.0, 1.2e-5, 0.0}});
  }
  for (int b = 0; b <= 9; ++b) {
    std::string prev = trunk_node(b);
    if (b == 3) {
      elements.push_back({"V3", ElementKind::valve, prev, "N30", std::nullopt});
      prev = "N30";
    }
    for (int j = 1; j <= 4; ++j) {
      const std::string node = "N" + std::to_string(b) + std::to_string(j);
      elements.push_back({"B" + std::to_string(b) + std::to_string(j), ElementKind::pipe, prev, node,
                          PipeGeometry{10e3, 0.4, 2e-5, 0.0}});
      prev = node;
    }
  }
  elements.push_back({"EX", ElementKind::pipe, "S", "X", PipeGeometry{30e3, 1.4, 1.2e-5, 0.0}});
  return Network::from_elements(std::move(elements));
}

inline std::optional<Network> builtin_network(std::string_view name) {
  if (name == "single_pipe") return single_pipe_network();
  if (name == "trunkline50") return trunkline50_network();
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Boundary schedule helpers.

/// Setpoint of `node` in effect at `frame`, if any entry precedes it.
inline std::optional<double> setpoint_at(const Scenario& s, const std::string& node, std::size_t frame) {
  std::optional<double> value;
  std::size_t best = 0;
  for (const auto& e : s.schedule) {
    if (e.node == node && e.frame <= frame && (!value || e.frame >= best)) {
      value = e.value;
      best = e.frame;
    }
  }
  return value;
}

namespace detail {

/// Nodes reachable from `start` over pipes and open valves without using `skip`.
inline std::vector<bool> reachable(const Scenario& s, std::size_t start, std::size_t skip) {
  const auto& net = s.network;
  std::vector<std::vector<std::size_t>> adj(net.nodes().size());
  for (std::size_t e = 0; e < net.elements().size(); ++e) {
    if (e == skip) continue;
    const auto& el = net.element(e);
    if (el.is_pipe() || (el.kind == ElementKind::valve && s.valve_is_open(el.id))) {
      adj[net.from_index(e)].push_back(net.to_index(e));
      adj[net.to_index(e)].push_back(net.from_index(e));
    }
  }
  std::vector<bool> seen(net.nodes().size(), false);
  std::vector<std::size_t> stack{start};
  seen[start] = true;
  while (!stack.empty()) {
    const auto u = stack.back();
    stack.pop_back();
    for (const auto v : adj[u])
      if (!seen[v]) {
        seen[v] = true;
        stack.push_back(v);
      }
  }
  return seen;
}

inline bool has_pressure_node(const Scenario& s, const std::vector<bool>& nodes) {
  for (const auto& e : s.schedule)
    if (e.kind == SetpointKind::pressure && nodes[*s.network.node_index(e.node)]) return true;
  return false;
}

}  // namespace detail

/// Changes the boundary schedule so that, from `frame` on, the flow of
/// `pipe_id` (in its from->to orientation) grows by about `delta_flow`.
/// The extra demand or supply is placed on the pipe end that is cut off from
/// every pressure setpoint when the pipe is removed; in a tree this moves
/// the pipe flow by exactly `delta_flow`.
inline Scenario inject_step(Scenario s, const std::string& pipe_id, double delta_flow, std::size_t frame) {
  if (delta_flow == 0.0) return s;
  const auto idx = s.network.element_index(pipe_id);
  if (!idx || !s.network.element(*idx).is_pipe()) throw std::invalid_argument("inject_step: unknown pipe '" + pipe_id + "'");
  if (frame >= s.frames) throw std::invalid_argument("inject_step: frame beyond the horizon");
  const auto& el = s.network.element(*idx);
  const bool to_side_free = !detail::has_pressure_node(s, detail::reachable(s, s.network.to_index(*idx), *idx));
  const bool from_side_free = !detail::has_pressure_node(s, detail::reachable(s, s.network.from_index(*idx), *idx));

  std::string node;
  double injection_change;
  if (to_side_free || !from_side_free) {
    node = el.to_node;  // extra demand downstream
    injection_change = -delta_flow;
  } else {
    node = el.from_node;  // extra supply upstream
    injection_change = delta_flow;
  }
  for (const auto& e : s.schedule)
    if (e.node == node && e.kind == SetpointKind::pressure)
      throw std::invalid_argument("inject_step: pipe '" + pipe_id + "' is not reachable from an inflow boundary");

  const double base = setpoint_at(s, node, frame).value_or(0.0);
  bool replaced = false;
  for (auto& e : s.schedule) {
    if (e.node != node) continue;
    if (e.frame > frame) e.value += injection_change;
    if (e.frame == frame) {
      e.value = base + injection_change;
      replaced = true;
    }
  }
  if (!replaced) s.schedule.push_back({node, frame, SetpointKind::inflow, base + injection_change});
  std::stable_sort(s.schedule.begin(), s.schedule.end(),
                   [](const ScheduleEntry& a, const ScheduleEntry& b) { return a.frame < b.frame; });
  return s;
}

// ---------------------------------------------------------------------------
// Scenario files: `key = value` lines, `#` starts a comment.
//
//   fixture = trunkline50 | single_pipe      built-in network, or
//   topology = path/to/topology.csv          (relative to the scenario file)
//   frames = 1000
//   tau_s = 180
//   start = 2021-01-01T00:00:00Z
//   seed = 42
//   noise = 0.0005
//   temperature_K = 283.15
//   rho_n = 0.8                  default normal density, kg/m^3
//   rho_n.<pipe> = 0.85
//   valve.<valve> = open | closed
//   pressure.<node>@<frame> = 70 bar setpoint
//   inflow.<node>@<frame> = -40  kNm3/h, positive into the network
//   step.<pipe>@<frame> = 25     kNm3/h flow step applied through inject_step

inline Scenario parse_scenario(std::istream& in, const std::string& source = "scenario",
                               const std::string& base_dir = ".") {
  Scenario s;
  std::vector<std::tuple<std::string, std::size_t, double, std::size_t>> steps;
  std::optional<std::string> fixture, topology;
  std::vector<std::tuple<std::string, std::string, std::size_t>> deferred;  // key, value, line
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) -> void { throw ParseError(source, line_no, what); };

  auto number = [&](std::string_view v) {
    const auto d = io::parse_double(v);
    if (!d || !std::isfinite(*d)) fail("malformed number '" + std::string(v) + "'");
    return *d;
  };
  // "<name>@<frame>", frame defaulting to 0
  auto target = [&](std::string_view rest) {
    const auto at = rest.find('@');
    std::string name(rest.substr(0, at));
    std::size_t frame = 0;
    if (at != std::string_view::npos) {
      const auto f = io::parse_int(rest.substr(at + 1));
      if (!f || *f < 0) fail("malformed frame index in '" + std::string(rest) + "'");
      frame = static_cast<std::size_t>(*f);
    }
    if (name.empty()) fail("missing name in '" + std::string(rest) + "'");
    return std::pair{name, frame};
  };

  while (std::getline(in, line)) {
    ++line_no;
    std::string_view v = line;
    if (const auto hash = v.find('#'); hash != std::string_view::npos) v = v.substr(0, hash);
    v = io::trim(v);
    if (v.empty()) continue;
    const auto eq = v.find('=');
    if (eq == std::string_view::npos) fail("expected key = value");
    const std::string key(io::trim(v.substr(0, eq)));
    const std::string value(io::trim(v.substr(eq + 1)));
    if (key == "fixture") fixture = value;
    else if (key == "topology") topology = value;
    else deferred.emplace_back(key, value, line_no);
  }

  if (fixture.has_value() == topology.has_value()) {
    line_no = 0;
    fail("exactly one of 'fixture' or 'topology' is required");
  }
  if (fixture) {
    auto net = builtin_network(*fixture);
    if (!net) {
      line_no = 0;
      fail("unknown fixture '" + *fixture + "'");
    }
    s.network = std::move(*net);
    s.fixture = *fixture;
  } else {
    const std::string path = topology->starts_with('/') ? *topology : base_dir + "/" + *topology;
    s.network = parse_topology_file(path);
    s.fixture = *topology;
  }

  for (const auto& [key, value, ln] : deferred) {
    line_no = ln;
    if (key == "frames") {
      const auto f = io::parse_int(value);
      if (!f || *f <= 0) fail("frames must be a positive integer");
      s.frames = static_cast<std::size_t>(*f);
    } else if (key == "tau_s") {
      s.tau = number(value);
      if (!(s.tau >= 1.0) || s.tau != std::floor(s.tau)) fail("tau_s must be a whole number of seconds");
    } else if (key == "start") {
      const auto t = io::parse_instant(value);
      if (!t) fail("malformed timestamp '" + value + "'");
      s.start = *t;
    } else if (key == "seed") {
      const auto f = io::parse_int(value);
      if (!f || *f < 0) fail("seed must be a non-negative integer");
      s.seed = static_cast<std::uint64_t>(*f);
    } else if (key == "noise") {
      s.noise = number(value);
      if (!(s.noise >= 0.0 && s.noise < 1.0)) fail("noise must lie in [0, 1)");
    } else if (key == "temperature_K") {
      s.gas.temperature = number(value);
      if (!(s.gas.temperature > 0.0)) fail("temperature must be positive");
    } else if (key == "rho_n") {
      s.normal_density = number(value);
      if (!normal_density_in_range(s.normal_density)) fail("normal density outside (0.5, 1.3] kg/m^3");
    } else if (key.starts_with("rho_n.")) {
      s.pipe_density[key.substr(6)] = number(value);
    } else if (key.starts_with("valve.")) {
      if (value != "open" && value != "closed") fail("valve state must be 'open' or 'closed'");
      s.valve_open[key.substr(6)] = value == "open";
    } else if (key.starts_with("pressure.")) {
      const auto [node, frame] = target(std::string_view(key).substr(9));
      s.schedule.push_back({node, frame, SetpointKind::pressure, units::bar_to_pa(number(value))});
    } else if (key.starts_with("inflow.")) {
      const auto [node, frame] = target(std::string_view(key).substr(7));
      s.schedule.push_back({node, frame, SetpointKind::inflow, units::knm3h_to_m3s(number(value))});
    } else if (key.starts_with("step.")) {
      const auto [pipe, frame] = target(std::string_view(key).substr(5));
      steps.emplace_back(pipe, frame, units::knm3h_to_m3s(number(value)), ln);
    } else {
      fail("unknown key '" + key + "'");
    }
  }

  std::stable_sort(s.schedule.begin(), s.schedule.end(),
                   [](const ScheduleEntry& a, const ScheduleEntry& b) { return a.frame < b.frame; });
  line_no = 0;  // remaining checks concern the file as a whole
  try {
    s.gas.validate();
    s.validate();
    for (const auto& [pipe, frame, dq, ln] : steps) {
      line_no = ln;
      s = inject_step(std::move(s), pipe, dq, frame);
    }
  } catch (const std::invalid_argument& err) {
    fail(err.what());
  }
  return s;
}

inline Scenario parse_scenario_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, "cannot open file");
  const auto slash = path.find_last_of('/');
  return parse_scenario(in, path, slash == std::string::npos ? "." : path.substr(0, slash));
}

// ---------------------------------------------------------------------------
// Solver.

struct SolverSettings {
  std::size_t max_iterations = 50;
  std::size_t max_steady_iterations = 200;
  double pressure_tolerance = 1e-8;  // relative to the pressure scale
  double mass_tolerance = 1e-10;     // m^3/s
};

namespace detail {

/// Residual system of one frame.
class FrameSystem {
 public:
  FrameSystem(const Scenario& s, const SolverSettings& settings) : s_(s), net_(s.network), settings_(settings) {
    const auto n_nodes = net_.nodes().size();
    fixed_pressure_.assign(n_nodes, std::nullopt);
    for (const auto& e : s.schedule)
      if (e.kind == SetpointKind::pressure) fixed_pressure_[*net_.node_index(e.node)] = 0.0;
    node_var_.assign(n_nodes, none);
    for (std::size_t i = 0; i < n_nodes; ++i)
      if (!fixed_pressure_[i]) {
        node_var_[i] = free_nodes_.size();
        free_nodes_.push_back(i);
      }
    for (std::size_t e = 0; e < net_.elements().size(); ++e) {
      const auto& el = net_.element(e);
      if (el.is_pipe() || (el.kind == ElementKind::valve && s.valve_is_open(el.id))) flow_elements_.push_back(e);
      else if (el.kind != ElementKind::valve)
        throw std::invalid_argument("simulation does not support element kind '" + std::string(to_string(el.kind)) +
                                    "' ('" + el.id + "')");
    }
    flow_var_.assign(net_.elements().size(), none);
    for (std::size_t k = 0; k < flow_elements_.size(); ++k) flow_var_[flow_elements_[k]] = free_nodes_.size() + k;
    density_.resize(net_.elements().size(), 0.0);
    for (const auto p : net_.pipes()) density_[p] = s.density_of(net_.element(p).id);
    check_well_posed();
  }

  std::size_t size() const { return free_nodes_.size() + flow_elements_.size(); }
  std::size_t first_flow_row() const { return free_nodes_.size(); }
  std::size_t flow_count() const { return flow_elements_.size(); }

  void set_boundary(std::size_t frame, const std::vector<double>& injection) {
    for (std::size_t i = 0; i < fixed_pressure_.size(); ++i)
      if (fixed_pressure_[i]) {
        const auto p = setpoint_at(s_, net_.nodes()[i].id, frame);
        if (!p) throw SimulationError(frame, "no pressure setpoint for node '" + net_.nodes()[i].id + "'");
        fixed_pressure_[i] = *p;
      }
    injection_ = injection;
    pressure_scale_ = 0.0;
    for (const auto& p : fixed_pressure_)
      if (p) pressure_scale_ = std::max(pressure_scale_, *p);
  }

  double pressure_scale() const { return pressure_scale_; }

  double pressure(const Eigen::VectorXd& x, std::size_t node) const {
    return fixed_pressure_[node] ? *fixed_pressure_[node] : x[node_var_[node]] * pressure_scale_;
  }
  double flow(const Eigen::VectorXd& x, std::size_t element) const {
    return flow_var_[element] == none ? 0.0 : x[flow_var_[element]];
  }

  /// Pipe momentum residual in Pa; tau == 0 means steady state (no inertia).
  double pipe_residual(std::size_t e, double q, double q_prev, double pl, double pr, double tau) const {
    const auto& g = net_.element(e).pipe();
    const double rho = density_[e];
    double drop = friction_term(g, s_.gas, rho, q, pl, pr) + remaining_terms(g, s_.gas, rho, q, pl, pr);
    if (tau > 0.0) drop += inertia_term(g, rho, tau, q_prev, q);
    return pl - pr - drop;
  }

  /// Scaled residual: pipe and valve rows divided by the pressure scale,
  /// mass rows in m^3/s.
  Eigen::VectorXd residual(const Eigen::VectorXd& x, const std::vector<double>& prev_flow, double tau) const {
    Eigen::VectorXd r(size());
    for (std::size_t k = 0; k < free_nodes_.size(); ++k) r[k] = injection_[free_nodes_[k]];
    for (std::size_t k = 0; k < flow_elements_.size(); ++k) {
      const auto e = flow_elements_[k];
      const auto f = net_.from_index(e), t = net_.to_index(e);
      const double q = x[free_nodes_.size() + k];
      if (node_var_[f] != none) r[node_var_[f]] -= q;
      if (node_var_[t] != none) r[node_var_[t]] += q;
      const double pl = pressure(x, f), pr = pressure(x, t);
      const double res = net_.element(e).is_pipe() ? pipe_residual(e, q, prev_flow[e], pl, pr, tau) : pl - pr;
      r[free_nodes_.size() + k] = res / pressure_scale_;
    }
    return r;
  }

  /// Jacobian of `residual`; pipe rows by central differences on their three local variables.
  Eigen::MatrixXd jacobian(const Eigen::VectorXd& x, const std::vector<double>& prev_flow, double tau) const {
    const std::size_t n = size();
    Eigen::MatrixXd j = Eigen::MatrixXd::Zero(n, n);
    for (std::size_t k = 0; k < flow_elements_.size(); ++k) {
      const auto e = flow_elements_[k];
      const auto f = net_.from_index(e), t = net_.to_index(e);
      const std::size_t row = free_nodes_.size() + k;
      if (node_var_[f] != none) j(node_var_[f], row) -= 1.0;
      if (node_var_[t] != none) j(node_var_[t], row) += 1.0;
      const double q = x[row], pl = pressure(x, f), pr = pressure(x, t);
      if (!net_.element(e).is_pipe()) {
        if (node_var_[f] != none) j(row, node_var_[f]) += 1.0;
        if (node_var_[t] != none) j(row, node_var_[t]) -= 1.0;
        continue;
      }
      const double hq = 1e-6 * std::max(std::abs(q), 1.0);
      j(row, row) = (pipe_residual(e, q + hq, prev_flow[e], pl, pr, tau) -
                     pipe_residual(e, q - hq, prev_flow[e], pl, pr, tau)) /
                    (2.0 * hq) / pressure_scale_;
      const double hp = 1e-7 * pressure_scale_;
      if (node_var_[f] != none)
        j(row, node_var_[f]) = (pipe_residual(e, q, prev_flow[e], pl + hp, pr, tau) -
                                pipe_residual(e, q, prev_flow[e], pl - hp, pr, tau)) /
                               (2.0 * hp);
      if (node_var_[t] != none)
        j(row, node_var_[t]) = (pipe_residual(e, q, prev_flow[e], pl, pr + hp, tau) -
                                pipe_residual(e, q, prev_flow[e], pl, pr - hp, tau)) /
                               (2.0 * hp);
    }
    return j;
  }

  /// Inertia-like diagonal used to regularize the steady start-up solve.
  double pipe_shift(std::size_t k, double tau) const {
    const auto e = flow_elements_[k];
    if (!net_.element(e).is_pipe()) return 0.0;
    const auto& g = net_.element(e).pipe();
    return g.length * density_[e] / (g.area() * tau) / pressure_scale_;
  }

  bool converged(const Eigen::VectorXd& r) const {
    for (std::size_t k = 0; k < free_nodes_.size(); ++k)
      if (!(std::abs(r[k]) < settings_.mass_tolerance)) return false;
    for (std::size_t k = free_nodes_.size(); k < size(); ++k)
      if (!(std::abs(r[k]) < settings_.pressure_tolerance)) return false;
    return true;
  }

  bool pressures_positive(const Eigen::VectorXd& x) const {
    for (std::size_t k = 0; k < free_nodes_.size(); ++k)
      if (!(x[k] > 0.0)) return false;
    return true;
  }

  Eigen::VectorXd initial_guess() const {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(size());
    for (std::size_t k = 0; k < free_nodes_.size(); ++k) x[k] = 1.0;
    return x;
  }

  StateFrame to_frame(const Eigen::VectorXd& x, Instant t) const {
    StateFrame f = StateFrame::empty(net_, t);
    for (std::size_t i = 0; i < net_.nodes().size(); ++i) f.node_pressure[i] = pressure(x, i);
    for (std::size_t e = 0; e < net_.elements().size(); ++e) {
      const auto& el = net_.element(e);
      if (el.is_pipe()) {
        f.arc_flow[e] = flow(x, e);
        f.pipe_normal_density[e] = density_[e];
      } else if (el.kind == ElementKind::valve) {
        f.arc_flow[e] = flow(x, e);
        f.valve_open[e] = s_.valve_is_open(el.id);
      }
    }
    return f;
  }

  std::vector<double> flows(const Eigen::VectorXd& x) const {
    std::vector<double> q(net_.elements().size(), 0.0);
    for (std::size_t e = 0; e < q.size(); ++e) q[e] = flow(x, e);
    return q;
  }

 private:
  void check_well_posed() const {
    std::vector<bool> covered(net_.nodes().size(), false);
    for (std::size_t i = 0; i < net_.nodes().size(); ++i) {
      if (covered[i]) continue;
      const auto comp = reachable(s_, i, none);
      bool has_reference = false;
      for (std::size_t j = 0; j < comp.size(); ++j)
        if (comp[j]) {
          covered[j] = true;
          has_reference = has_reference || fixed_pressure_[j].has_value();
        }
      if (!has_reference)
        throw std::invalid_argument("subnetwork containing node '" + net_.nodes()[i].id +
                                    "' has no pressure setpoint");
    }
  }

  static constexpr std::size_t none = static_cast<std::size_t>(-1);
  const Scenario& s_;
  const Network& net_;
  SolverSettings settings_;
  std::vector<std::optional<double>> fixed_pressure_;
  std::vector<std::size_t> node_var_, free_nodes_, flow_elements_, flow_var_;
  std::vector<double> density_;
  std::vector<double> injection_;
  double pressure_scale_ = 1.0;
};

/// Damped Newton on `system`. With `shift_tau` > 0 an inertia-like diagonal,
/// decaying tenfold per iteration, is added to the pipe rows of the Jacobian
/// so that the first steps behave like a pseudo-transient march from rest.
inline Eigen::VectorXd newton(const FrameSystem& system, Eigen::VectorXd x, const std::vector<double>& prev_flow,
                              double tau, double shift_tau, std::size_t max_iterations, std::size_t frame) {
  Eigen::VectorXd r = system.residual(x, prev_flow, tau);
  double shift = shift_tau > 0.0 ? 1.0 : 0.0;
  for (std::size_t it = 0; it < max_iterations; ++it) {
    if (system.converged(r)) return x;
    Eigen::MatrixXd j = system.jacobian(x, prev_flow, tau);
    if (shift > 0.0) {
      for (std::size_t k = 0; k < system.flow_count(); ++k) {
        const auto row = static_cast<Eigen::Index>(system.first_flow_row() + k);
        j(row, row) -= shift * system.pipe_shift(k, shift_tau);
      }
    }
    const Eigen::VectorXd step = j.partialPivLu().solve(-r);
    if (!step.allFinite()) throw SimulationError(frame, "singular Newton system");

    const double norm = r.norm();
    double damping = 1.0;
    for (int halving = 0;; ++halving) {
      Eigen::VectorXd trial = x + damping * step;
      if (system.pressures_positive(trial)) {
        Eigen::VectorXd rt = system.residual(trial, prev_flow, tau);
        // The shifted start-up steps are allowed to raise the residual.
        if (rt.allFinite() && (rt.norm() <= norm || shift > 0.0)) {
          x = std::move(trial);
          r = std::move(rt);
          break;
        }
      }
      if (halving >= 40) throw SimulationError(frame, "Newton line search failed");
      damping *= 0.5;
    }
    shift = shift * 0.1 < 1e-10 ? 0.0 : shift * 0.1;
  }
  if (system.converged(r)) return x;
  throw SimulationError(frame, "Newton iteration did not converge");
}

}  // namespace detail

/// Solves every frame of `s` in order and hands each to `sink`. Frame 0 is a
/// steady state; later frames are implicit steps of length tau from the
/// previous frame. Output is a pure function of the scenario.
inline void simulate(const Scenario& s, const std::function<void(const StateFrame&)>& sink,
                     const SolverSettings& settings = {}) {
  s.gas.validate();
  s.validate();
  detail::FrameSystem system(s, settings);
  const auto& net = s.network;

  std::vector<std::size_t> inflow_nodes;
  {
    std::set<std::size_t> seen;
    for (const auto& e : s.schedule)
      if (e.kind == SetpointKind::inflow && seen.insert(*net.node_index(e.node)).second)
        inflow_nodes.push_back(*net.node_index(e.node));
  }

  std::mt19937_64 rng(s.seed);
  auto unit_uniform = [&rng] {
    // 53 random bits mapped to [-1, 1); portable unlike std::uniform_real_distribution.
    return static_cast<double>(rng() >> 11) * 0x1.0p-52 - 1.0;
  };

  Eigen::VectorXd x = system.initial_guess();
  std::vector<double> prev_flow(net.elements().size(), 0.0);
  std::vector<double> injection(net.nodes().size(), 0.0);
  for (std::size_t frame = 0; frame < s.frames; ++frame) {
    std::fill(injection.begin(), injection.end(), 0.0);
    for (const auto node : inflow_nodes) {
      double q = setpoint_at(s, net.nodes()[node].id, frame).value_or(0.0);
      if (s.noise > 0.0) q *= 1.0 + s.noise * unit_uniform();
      injection[node] = q;
    }
    system.set_boundary(frame, injection);
    if (frame == 0) {
      // Scale the initial pressures to the reference before the steady solve.
      x = system.initial_guess();
      x = detail::newton(system, std::move(x), prev_flow, 0.0, s.tau, settings.max_steady_iterations, frame);
    } else {
      x = detail::newton(system, std::move(x), prev_flow, s.tau, 0.0, settings.max_iterations, frame);
    }
    const Instant t = s.start + std::chrono::seconds(static_cast<long long>(s.tau) * static_cast<long long>(frame));
    sink(system.to_frame(x, t));
    prev_flow = system.flows(x);
  }
}

inline std::vector<StateFrame> simulate(const Scenario& s, const SolverSettings& settings = {}) {
  std::vector<StateFrame> frames;
  frames.reserve(s.frames);
  simulate(s, [&frames](const StateFrame& f) { frames.push_back(f); }, settings);
  return frames;
}

}  // namespace inertia

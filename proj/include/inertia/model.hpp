#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "csv.hpp"
#include "units.hpp"

namespace inertia {

/// Invalid network topology or element data.
class NetworkError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ElementKind { pipe, valve, resistor, regulator, compressor };

inline std::string_view to_string(ElementKind kind) {
  switch (kind) {
    case ElementKind::pipe: return "pipe";
    case ElementKind::valve: return "valve";
    case ElementKind::resistor: return "resistor";
    case ElementKind::regulator: return "regulator";
    case ElementKind::compressor: return "compressor";
  }
  return "?";
}

inline std::optional<ElementKind> parse_element_kind(std::string_view s) {
  for (auto k : {ElementKind::pipe, ElementKind::valve, ElementKind::resistor, ElementKind::regulator,
                 ElementKind::compressor})
    if (to_string(k) == s) return k;
  return std::nullopt;
}

struct PipeGeometry {
  double length = 0.0;     // m
  double diameter = 0.0;   // m
  double roughness = 0.0;  // m
  double slope = 0.0;      // rise over run

  double area() const { return std::numbers::pi * diameter * diameter / 4.0; }
  double relative_roughness() const { return roughness / diameter; }

  void validate() const {
    if (!(length > 0.0)) throw NetworkError("pipe length must be positive");
    if (!(diameter > 0.0)) throw NetworkError("pipe diameter must be positive");
    if (!(roughness >= 0.0)) throw NetworkError("pipe roughness must be non-negative");
    if (!(std::abs(slope) < 1.0)) throw NetworkError("pipe slope must satisfy |s| < 1");
  }

  bool operator==(const PipeGeometry&) const = default;
};

inline double derived_area(const PipeGeometry& g) { return g.area(); }

/// A supplied slope wins; otherwise the slope follows from endpoint elevations.
inline double resolve_slope(std::optional<double> supplied, double elevation_from, double elevation_to,
                            double length) {
  if (supplied) return *supplied;
  return (elevation_to - elevation_from) / length;
}

struct Node {
  std::string id;
  double elevation = 0.0;  // m

  bool operator==(const Node&) const = default;
};

struct Element {
  std::string id;
  ElementKind kind = ElementKind::pipe;
  std::string from_node;
  std::string to_node;
  std::optional<PipeGeometry> geometry;  // present iff kind == pipe

  bool is_pipe() const { return kind == ElementKind::pipe; }
  const PipeGeometry& pipe() const { return *geometry; }

  bool operator==(const Element&) const = default;
};

/// Immutable, validated network graph. Elements keep their input order;
/// indices into nodes() and elements() are stable and used throughout.
class Network {
 public:
  Network() = default;

  Network(std::vector<Node> nodes, std::vector<Element> elements)
      : nodes_(std::move(nodes)), elements_(std::move(elements)) {
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (!node_index_.emplace(nodes_[i].id, i).second) throw NetworkError("duplicate node id '" + nodes_[i].id + "'");
    from_.reserve(elements_.size());
    to_.reserve(elements_.size());
    for (std::size_t i = 0; i < elements_.size(); ++i) {
      const auto& e = elements_[i];
      if (e.id.empty()) throw NetworkError("element with empty id");
      if (!element_index_.emplace(e.id, i).second) throw NetworkError("duplicate element id '" + e.id + "'");
      const auto f = node_index(e.from_node), t = node_index(e.to_node);
      if (!f) throw NetworkError("element '" + e.id + "' references unknown node '" + e.from_node + "'");
      if (!t) throw NetworkError("element '" + e.id + "' references unknown node '" + e.to_node + "'");
      if (*f == *t) throw NetworkError("element '" + e.id + "' connects node '" + e.from_node + "' to itself");
      if (e.is_pipe() != e.geometry.has_value())
        throw NetworkError("element '" + e.id + "': geometry must be present exactly for pipes");
      if (e.geometry) {
        try {
          e.geometry->validate();
        } catch (const NetworkError& err) {
          throw NetworkError("element '" + e.id + "': " + err.what());
        }
      }
      from_.push_back(*f);
      to_.push_back(*t);
      switch (e.kind) {
        case ElementKind::pipe: pipes_.push_back(i); break;
        case ElementKind::valve: valves_.push_back(i); break;
        case ElementKind::resistor: resistors_.push_back(i); break;
        default: break;
      }
    }
  }

  /// Builds a network whose nodes are implied by element endpoints, in order of first appearance.
  static Network from_elements(std::vector<Element> elements) {
    std::vector<Node> nodes;
    std::map<std::string, std::size_t, std::less<>> seen;
    for (const auto& e : elements)
      for (const auto* id : {&e.from_node, &e.to_node})
        if (seen.emplace(*id, nodes.size()).second) nodes.push_back(Node{*id, 0.0});
    return Network(std::move(nodes), std::move(elements));
  }

  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  const std::vector<Element>& elements() const noexcept { return elements_; }
  const Element& element(std::size_t i) const { return elements_.at(i); }

  std::optional<std::size_t> node_index(std::string_view id) const {
    const auto it = node_index_.find(id);
    return it == node_index_.end() ? std::nullopt : std::optional{it->second};
  }
  std::optional<std::size_t> element_index(std::string_view id) const {
    const auto it = element_index_.find(id);
    return it == element_index_.end() ? std::nullopt : std::optional{it->second};
  }

  std::size_t from_index(std::size_t element) const { return from_[element]; }
  std::size_t to_index(std::size_t element) const { return to_[element]; }

  const std::vector<std::size_t>& pipes() const noexcept { return pipes_; }
  const std::vector<std::size_t>& valves() const noexcept { return valves_; }
  const std::vector<std::size_t>& resistors() const noexcept { return resistors_; }

  bool operator==(const Network& other) const { return nodes_ == other.nodes_ && elements_ == other.elements_; }

 private:
  std::vector<Node> nodes_;
  std::vector<Element> elements_;
  std::map<std::string, std::size_t, std::less<>> node_index_;
  std::map<std::string, std::size_t, std::less<>> element_index_;
  std::vector<std::size_t> from_, to_;
  std::vector<std::size_t> pipes_, valves_, resistors_;
};

/// Gas and model constants. Normal density is not here: it is carried per pipe per frame.
struct GasParams {
  double temperature = 283.15;                   // K
  double pseudo_critical_pressure = 46.4e5;      // Pa
  double pseudo_critical_temperature = 192.0;    // K
  double dynamic_viscosity = 1.1e-5;             // Pa s
  double gravity = units::standard_gravity;      // m/s^2

  void validate() const {
    if (!(temperature > 0.0)) throw std::invalid_argument("gas temperature must be positive");
    if (!(pseudo_critical_pressure > 0.0)) throw std::invalid_argument("pseudo-critical pressure must be positive");
    if (!(pseudo_critical_temperature > 0.0))
      throw std::invalid_argument("pseudo-critical temperature must be positive");
    if (!(dynamic_viscosity > 0.0)) throw std::invalid_argument("dynamic viscosity must be positive");
  }
};

inline constexpr double min_normal_density = 0.5;  // kg/m^3, exclusive
inline constexpr double max_normal_density = 1.3;  // kg/m^3, inclusive

inline bool normal_density_in_range(double rho_n) {
  return rho_n > min_normal_density && rho_n <= max_normal_density;
}

/// Network state at one timestamp. Vectors are indexed by node or element
/// index; absent measurements stay empty.
struct StateFrame {
  Instant timestamp{};
  std::vector<std::optional<double>> node_pressure;        // Pa
  std::vector<std::optional<double>> arc_flow;             // m^3/s at normal conditions
  std::vector<std::optional<bool>> valve_open;
  std::vector<std::optional<double>> pipe_normal_density;  // kg/m^3

  static StateFrame empty(const Network& net, Instant t) {
    StateFrame f;
    f.timestamp = t;
    f.node_pressure.resize(net.nodes().size());
    f.arc_flow.resize(net.elements().size());
    f.valve_open.resize(net.elements().size());
    f.pipe_normal_density.resize(net.elements().size());
    return f;
  }

  bool operator==(const StateFrame&) const = default;
};

struct TimePair {
  Instant t0{};
  Instant t1{};

  double tau() const { return std::chrono::duration<double>(t1 - t0).count(); }
  bool operator==(const TimePair&) const = default;
};

inline TimePair make_time_pair(Instant t0, Instant t1) {
  if (!(t1 > t0)) throw std::invalid_argument("time pair requires t1 > t0");
  return TimePair{t0, t1};
}

/// Counters for data that was skipped, clamped or out of a correlation's validity range.
struct Diagnostics {
  std::size_t missing_data = 0;
  std::size_t excluded = 0;
  std::size_t valve_state_missing = 0;
  std::size_t resistor_pressure_missing = 0;
  std::size_t compressibility_clamped = 0;
  std::size_t friction_out_of_validity = 0;
  std::size_t irregular_pairs = 0;

  Diagnostics& operator+=(const Diagnostics& o) {
    missing_data += o.missing_data;
    excluded += o.excluded;
    valve_state_missing += o.valve_state_missing;
    resistor_pressure_missing += o.resistor_pressure_missing;
    compressibility_clamped += o.compressibility_clamped;
    friction_out_of_validity += o.friction_out_of_validity;
    irregular_pairs += o.irregular_pairs;
    return *this;
  }

  void write(std::ostream& out) const {
    out << "diag.missing_data=" << missing_data << '\n'
        << "diag.excluded=" << excluded << '\n'
        << "diag.valve_state_missing=" << valve_state_missing << '\n'
        << "diag.resistor_pressure_missing=" << resistor_pressure_missing << '\n'
        << "diag.compressibility_clamped=" << compressibility_clamped << '\n'
        << "diag.friction_out_of_validity=" << friction_out_of_validity << '\n'
        << "diag.irregular_pairs=" << irregular_pairs << '\n';
  }

  bool operator==(const Diagnostics&) const = default;
};

}  // namespace inertia

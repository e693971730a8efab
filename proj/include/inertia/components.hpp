#pragma once

#include <algorithm>
#include <limits>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "model.hpp"
#include "thresholds.hpp"
#include "union_find.hpp"

namespace inertia {

/// A pipe that passed the single-pipe relevance test for one time pair.
struct RelevantPipe {
  std::size_t element = 0;   // element index in the network
  double alpha = 0.0;        // Pa, signed
  double flow_change = 0.0;  // m^3/s normal, signed
};

enum class ArcOrigin { pipe_forward, pipe_reverse, valve, resistor };

/// Arc of the directed alpha graph. Endpoints are node indices.
struct DirectedArc {
  std::size_t from = 0;
  std::size_t to = 0;
  double weight = 0.0;  // |alpha| for pipes, 0 otherwise
  ArcOrigin origin = ArcOrigin::pipe_forward;

  bool operator==(const DirectedArc&) const = default;
};

struct ComponentSkeleton {
  std::vector<std::size_t> members;  // indices into the relevant-pipe list, ascending
  std::vector<std::size_t> bridges;  // open valves and resistors joining the members (element indices)
};

/// Groups relevant pipes that share nodes directly or through open valves
/// (state at t1) and resistors. Regulators and compressors never connect.
/// Valves without a recorded state count as closed.
inline std::vector<ComponentSkeleton> build_components(const Network& net, std::span<const RelevantPipe> relevant,
                                                       const StateFrame& frame_t1, Diagnostics* diag = nullptr) {
  UnionFind uf(net.nodes().size());
  for (const auto& r : relevant) {
    if (r.element >= net.elements().size() || !net.element(r.element).is_pipe())
      throw std::invalid_argument("relevant entry is not a pipe of the network");
    uf.unite(net.from_index(r.element), net.to_index(r.element));
  }
  std::vector<std::size_t> open_bridges;
  for (const auto v : net.valves()) {
    const auto& state = frame_t1.valve_open[v];
    if (!state) {
      if (diag) ++diag->valve_state_missing;
      continue;
    }
    if (*state) {
      uf.unite(net.from_index(v), net.to_index(v));
      open_bridges.push_back(v);
    }
  }
  for (const auto r : net.resistors()) {
    uf.unite(net.from_index(r), net.to_index(r));
    open_bridges.push_back(r);
  }
  std::sort(open_bridges.begin(), open_bridges.end());

  std::vector<ComponentSkeleton> out;
  std::map<std::size_t, std::size_t> by_root;
  for (std::size_t i = 0; i < relevant.size(); ++i) {
    const auto root = uf.find(net.from_index(relevant[i].element));
    const auto [it, inserted] = by_root.emplace(root, out.size());
    if (inserted) out.emplace_back();
    out[it->second].members.push_back(i);
  }
  for (const auto b : open_bridges) {
    const auto it = by_root.find(uf.find(net.from_index(b)));
    if (it != by_root.end()) out[it->second].bridges.push_back(b);
  }
  return out;
}

/// Directs pipes by the sign of alpha, adds open valves in both directions and
/// orients resistors by the change of their pressure drop between t0 and t1.
inline std::vector<DirectedArc> orient_arcs(const Network& net, const ComponentSkeleton& skeleton,
                                            std::span<const RelevantPipe> relevant, const StateFrame& frame_t0,
                                            const StateFrame& frame_t1, Diagnostics* diag = nullptr) {
  std::vector<DirectedArc> arcs;
  arcs.reserve(skeleton.members.size() + 2 * skeleton.bridges.size());
  for (const auto m : skeleton.members) {
    const auto& r = relevant[m];
    const auto f = net.from_index(r.element), t = net.to_index(r.element);
    if (r.alpha >= 0.0)
      arcs.push_back({f, t, r.alpha, ArcOrigin::pipe_forward});
    else
      arcs.push_back({t, f, -r.alpha, ArcOrigin::pipe_reverse});
  }
  for (const auto b : skeleton.bridges) {
    const auto f = net.from_index(b), t = net.to_index(b);
    if (net.element(b).kind == ElementKind::valve) {
      arcs.push_back({f, t, 0.0, ArcOrigin::valve});
      arcs.push_back({t, f, 0.0, ArcOrigin::valve});
      continue;
    }
    const auto &pf0 = frame_t0.node_pressure[f], &pt0 = frame_t0.node_pressure[t];
    const auto &pf1 = frame_t1.node_pressure[f], &pt1 = frame_t1.node_pressure[t];
    bool forward = true, backward = true;
    if (pf0 && pt0 && pf1 && pt1) {
      const double d0 = *pf0 - *pt0, d1 = *pf1 - *pt1;
      forward = d1 >= d0;
      backward = d1 <= d0;
    } else if (diag) {
      ++diag->resistor_pressure_missing;
    }
    if (forward) arcs.push_back({f, t, 0.0, ArcOrigin::resistor});
    if (backward) arcs.push_back({t, f, 0.0, ArcOrigin::resistor});
  }
  return arcs;
}

struct LongestPath {
  double value = 0.0;             // Pa
  double cycle_correction = 0.0;  // Pa, total weight of zeroed cycles

  bool operator==(const LongestPath&) const = default;
};

/// Longest directed path over all node pairs, computed as a shortest path with
/// negated weights from a virtual source attached to every node (Bellman-Ford).
/// Whenever a negative cycle shows up, its length is recorded, its arcs are
/// set to zero and the search restarts; the recorded lengths are added to the
/// final value. On graphs with cycles the result is an upper bound of the
/// longest simple path.
inline LongestPath longest_path_value(std::span<const DirectedArc> arcs) {
  if (arcs.empty()) throw std::invalid_argument("longest_path_value: empty arc list");

  std::vector<std::size_t> ids;
  ids.reserve(2 * arcs.size());
  for (const auto& a : arcs) {
    if (!(a.weight >= 0.0) || !std::isfinite(a.weight))
      throw std::invalid_argument("longest_path_value: arc weights must be finite and non-negative");
    ids.push_back(a.from);
    ids.push_back(a.to);
  }
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  auto local = [&](std::size_t node) {
    return static_cast<std::size_t>(std::lower_bound(ids.begin(), ids.end(), node) - ids.begin());
  };

  const std::size_t n = ids.size();
  struct Edge {
    std::size_t from, to;
    double cost;  // negated weight
  };
  std::vector<Edge> edges;
  edges.reserve(arcs.size());
  for (const auto& a : arcs) edges.push_back({local(a.from), local(a.to), -a.weight});

  constexpr auto none = std::numeric_limits<std::size_t>::max();
  std::vector<double> dist(n);
  std::vector<std::size_t> pred(n);
  double correction = 0.0;

  // Returns the edges of a cycle in the predecessor graph, or nothing.
  auto predecessor_cycle = [&]() -> std::vector<std::size_t> {
    std::vector<std::size_t> mark(n, none);
    for (std::size_t start = 0; start < n; ++start) {
      std::size_t u = start;
      while (u != none && mark[u] == none) {
        mark[u] = start;
        u = pred[u] == none ? none : edges[pred[u]].from;
      }
      if (u == none || mark[u] != start) continue;
      std::vector<std::size_t> cycle;
      const std::size_t anchor = u;
      do {
        cycle.push_back(pred[u]);
        u = edges[pred[u]].from;
      } while (u != anchor);
      return cycle;
    }
    return {};
  };

  for (;;) {
    std::fill(dist.begin(), dist.end(), 0.0);
    std::fill(pred.begin(), pred.end(), none);
    bool relaxed = false;
    auto pass = [&] {
      relaxed = false;
      for (std::size_t e = 0; e < edges.size(); ++e) {
        const auto& ed = edges[e];
        if (dist[ed.from] + ed.cost < dist[ed.to]) {
          dist[ed.to] = dist[ed.from] + ed.cost;
          pred[ed.to] = e;
          relaxed = true;
        }
      }
    };
    for (std::size_t i = 0; i < n; ++i) {
      pass();
      if (!relaxed) break;
    }
    if (!relaxed) break;

    // Relaxation beyond n passes implies a negative cycle. Keep relaxing until
    // it shows up as a cycle of the predecessor graph.
    std::vector<std::size_t> cycle = predecessor_cycle();
    for (std::size_t extra = 0; cycle.empty() && extra < 4 * n + 4; ++extra) {
      pass();
      cycle = predecessor_cycle();
    }
    if (cycle.empty()) throw std::logic_error("longest_path_value: negative cycle not located");
    double length = 0.0;
    for (const auto e : cycle) length += edges[e].cost;
    if (!(length < 0.0)) throw std::logic_error("longest_path_value: detected cycle is not negative");
    correction += -length;
    for (const auto e : cycle) edges[e].cost = 0.0;
  }

  const double shortest = *std::min_element(dist.begin(), dist.end());
  return {-shortest + correction, correction};
}

inline RelevanceClass classify_component(double value, const ThresholdConfig& cfg) {
  return classify_absolute(value, cfg);
}

struct Component {
  TimePair pair;
  std::vector<std::string> pipe_ids;     // sorted
  std::vector<double> abs_flow_changes;  // m^3/s, aligned with pipe_ids
  std::vector<DirectedArc> arcs;
  double longest_path_value = 0.0;  // Pa
  double cycle_correction = 0.0;    // Pa
  RelevanceClass relevance = RelevanceClass::none;

  double max_abs_flow_change() const {
    double m = 0.0;
    for (const double q : abs_flow_changes) m = std::max(m, q);
    return m;
  }
};

/// Components of one time pair, ordered by their smallest pipe element index.
inline std::vector<Component> analyze_pair(const Network& net, const TimePair& pair,
                                           std::vector<RelevantPipe> relevant, const StateFrame& frame_t0,
                                           const StateFrame& frame_t1, const ThresholdConfig& cfg,
                                           Diagnostics* diag = nullptr) {
  std::sort(relevant.begin(), relevant.end(),
            [](const RelevantPipe& a, const RelevantPipe& b) { return a.element < b.element; });
  std::vector<Component> out;
  for (const auto& sk : build_components(net, relevant, frame_t1, diag)) {
    Component c;
    c.pair = pair;
    std::vector<std::pair<std::string, double>> pipes;
    for (const auto m : sk.members)
      pipes.emplace_back(net.element(relevant[m].element).id, std::abs(relevant[m].flow_change));
    std::sort(pipes.begin(), pipes.end());
    for (auto& [id, dq] : pipes) {
      c.pipe_ids.push_back(std::move(id));
      c.abs_flow_changes.push_back(dq);
    }
    c.arcs = orient_arcs(net, sk, relevant, frame_t0, frame_t1, diag);
    const auto lp = longest_path_value(c.arcs);
    c.longest_path_value = lp.value;
    c.cycle_correction = lp.cycle_correction;
    c.relevance = classify_component(lp.value, cfg);
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace inertia

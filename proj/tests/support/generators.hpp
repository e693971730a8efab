#pragma once

// Seeded random generators for property tests.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "inertia/components.hpp"
#include "inertia/temporal.hpp"

namespace gen {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform(double lo, double hi) {
    return lo + (hi - lo) * (static_cast<double>(engine_() >> 11) * 0x1.0p-53);
  }
  double log_uniform(double lo, double hi) { return std::exp(uniform(std::log(lo), std::log(hi))); }
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(engine_() % n); }
  int integer(int lo, int hi) { return lo + static_cast<int>(engine_() % static_cast<std::uint64_t>(hi - lo + 1)); }
  bool coin(double p = 0.5) { return uniform(0.0, 1.0) < p; }

 private:
  std::mt19937_64 engine_;
};

/// Arcs over `nodes` nodes with small integer weights. With `acyclic` the
/// arcs respect a random topological order; parallel arcs are allowed.
inline std::vector<inertia::DirectedArc> arcs(Rng& rng, std::size_t nodes, std::size_t count, bool acyclic) {
  std::vector<std::size_t> order(nodes);
  for (std::size_t i = 0; i < nodes; ++i) order[i] = i;
  for (std::size_t i = nodes; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  std::vector<inertia::DirectedArc> out;
  while (out.size() < count) {
    std::size_t a = rng.index(nodes), b = rng.index(nodes);
    if (a == b) continue;
    if (acyclic && a > b) std::swap(a, b);
    const bool zero = rng.coin(0.15);
    out.push_back({acyclic ? order[a] : a, acyclic ? order[b] : b, zero ? 0.0 : static_cast<double>(rng.integer(1, 60)),
                   zero ? inertia::ArcOrigin::valve : inertia::ArcOrigin::pipe_forward});
  }
  return out;
}

inline std::string pipe_name(std::size_t i) { return "P" + std::to_string(100 + i); }

/// Time-ordered stream of high components over `pairs` consecutive 180 s
/// pairs with occasional gaps, drawing pipes from a pool of `pool` ids.
inline std::vector<inertia::ComponentSummary> component_stream(Rng& rng, std::size_t pairs, std::size_t pool) {
  using namespace std::chrono;
  std::vector<inertia::ComponentSummary> out;
  inertia::Instant t = sys_days{year{2020} / 1 / 1};
  std::size_t id = 0;
  for (std::size_t k = 0; k < pairs; ++k) {
    if (rng.coin(0.1)) t += seconds(180);  // gap
    const inertia::TimePair pair{t, t + seconds(180)};
    const int n_comp = rng.integer(0, 3);
    std::vector<bool> used(pool, false);
    for (int c = 0; c < n_comp; ++c) {
      inertia::ComponentSummary s;
      s.id = id++;
      s.pair = pair;
      s.relevance = inertia::RelevanceClass::high;
      const int n_pipes = rng.integer(1, 4);
      for (int p = 0; p < n_pipes; ++p) {
        const auto i = rng.index(pool);
        if (used[i]) continue;  // components of one pair are disjoint
        used[i] = true;
        s.pipe_ids.push_back(pipe_name(i));
      }
      if (s.pipe_ids.empty()) continue;
      std::sort(s.pipe_ids.begin(), s.pipe_ids.end());
      for (std::size_t p = 0; p < s.pipe_ids.size(); ++p) s.abs_flow_changes.push_back(rng.uniform(0.1, 800.0));
      s.longest_path_value = rng.uniform(5e4, 2e5);
      out.push_back(std::move(s));
    }
    t += seconds(180);
  }
  return out;
}

}  // namespace gen

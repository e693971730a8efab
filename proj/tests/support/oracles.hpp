#pragma once

// Independent reference implementations used only by tests.

#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "inertia/components.hpp"
#include "inertia/ingest.hpp"
#include "inertia/temporal.hpp"

namespace oracle {

/// Longest simple directed path by exhaustive depth-first enumeration.
inline double longest_simple_path(const std::vector<inertia::DirectedArc>& arcs) {
  std::size_t n = 0;
  for (const auto& a : arcs) n = std::max({n, a.from + 1, a.to + 1});
  std::vector<std::vector<std::pair<std::size_t, double>>> out(n);
  for (const auto& a : arcs) out[a.from].emplace_back(a.to, a.weight);
  double best = 0.0;
  std::vector<bool> on_path(n, false);
  auto dfs = [&](auto&& self, std::size_t u, double len) -> void {
    best = std::max(best, len);
    on_path[u] = true;
    for (const auto& [v, w] : out[u])
      if (!on_path[v]) self(self, v, len + w);
    on_path[u] = false;
  };
  for (std::size_t s = 0; s < n; ++s) dfs(dfs, s, 0.0);
  return best;
}

/// Longest simple path ignoring arc direction.
inline double longest_undirected_path(const std::vector<inertia::DirectedArc>& arcs) {
  std::vector<inertia::DirectedArc> both = arcs;
  for (const auto& a : arcs) both.push_back({a.to, a.from, a.weight, a.origin});
  return longest_simple_path(both);
}

/// Longest trail ignoring arc direction: every arc is used at most once but
/// nodes may repeat. This is what summing pipe terms without orientation does.
inline double longest_undirected_trail(const std::vector<inertia::DirectedArc>& arcs) {
  std::size_t n = 0;
  for (const auto& a : arcs) n = std::max({n, a.from + 1, a.to + 1});
  std::vector<bool> used(arcs.size(), false);
  double best = 0.0;
  auto dfs = [&](auto&& self, std::size_t u, double len) -> void {
    best = std::max(best, len);
    for (std::size_t i = 0; i < arcs.size(); ++i) {
      if (used[i] || (arcs[i].from != u && arcs[i].to != u)) continue;
      used[i] = true;
      self(self, arcs[i].from == u ? arcs[i].to : arcs[i].from, len + arcs[i].weight);
      used[i] = false;
    }
  };
  for (std::size_t s = 0; s < n; ++s) dfs(dfs, s, 0.0);
  return best;
}

/// Colebrook-White friction factor by bisection on x = 1/sqrt(lambda).
inline double colebrook(double re, double rel) {
  auto f = [&](double x) { return x + 2.0 * std::log10(rel / 3.7 + 2.51 * x / re); };
  double lo = 0.5, hi = 50.0;  // f(lo) < 0 < f(hi) for turbulent flow
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (f(mid) > 0.0 ? hi : lo) = mid;
  }
  const double x = 0.5 * (lo + hi);
  return 1.0 / (x * x);
}

/// Per-pipe run lengths from a membership table over the distinct pairs.
inline std::map<std::size_t, std::size_t> run_histogram(const std::vector<inertia::ComponentSummary>& high) {
  std::vector<inertia::TimePair> pairs;
  for (const auto& c : high)
    if (pairs.empty() || pairs.back() != c.pair) pairs.push_back(c.pair);
  std::set<std::string> pipes;
  for (const auto& c : high) pipes.insert(c.pipe_ids.begin(), c.pipe_ids.end());
  std::map<std::size_t, std::size_t> hist;
  for (const auto& pipe : pipes) {
    std::vector<bool> in(pairs.size(), false);
    for (std::size_t k = 0; k < pairs.size(); ++k)
      for (const auto& c : high)
        if (c.pair == pairs[k] && std::find(c.pipe_ids.begin(), c.pipe_ids.end(), pipe) != c.pipe_ids.end())
          in[k] = true;
    std::size_t run = 0;
    for (std::size_t k = 0; k <= pairs.size(); ++k) {
      const bool extends = k < pairs.size() && in[k] && run > 0 && pairs[k - 1].t1 == pairs[k].t0;
      if (run > 0 && !extends) {
        ++hist[run];
        run = 0;
      }
      if (k < pairs.size() && in[k]) ++run;
    }
  }
  return hist;
}

/// Records surviving the exclusion windows, by testing every window.
inline std::size_t excluded_count(const std::vector<inertia::TermRecord>& records,
                                  const std::vector<inertia::ExclusionWindow>& windows) {
  std::size_t n = 0;
  for (const auto& r : records) {
    bool hit = false;
    for (const auto& w : windows)
      if (w.pipe_id == r.pipe_id && !(r.pair.t1 < w.start) && r.pair.t1 < w.end) hit = true;
    n += hit ? 1 : 0;
  }
  return n;
}

}  // namespace oracle

namespace oracle {

/// Pipe friction and remaining terms in long double, written out from the
/// textbook formulas without the library's helpers.
struct PipeCase {
  long double length, diameter, roughness, slope;
  long double rho_n, temperature;
  long double flow;  // m^3/s normal
  long double p_left, p_right;
  long double p_pc = 46.4e5L, t_pc = 192.0L, viscosity = 1.1e-5L, gravity = 9.80665L;
};

inline long double papay(long double p, const PipeCase& c) {
  const long double pr = p / c.p_pc, tr = c.temperature / c.t_pc;
  return 1.0L - 3.52L * pr * std::exp(-2.26L * tr) + 0.274L * pr * pr * std::exp(-1.878L * tr);
}

inline long double darcy(const PipeCase& c) {
  const long double pi = 3.141592653589793238462643383279502884L;
  const long double area = pi * c.diameter * c.diameter / 4.0L;
  const long double mass = std::fabs(c.rho_n * c.flow);
  if (mass == 0.0L) return 0.0L;
  const long double re = mass * c.diameter / (area * c.viscosity);
  if (re < 2320.0L) return 64.0L / re;
  const long double rel = c.roughness / c.diameter;
  const long double a = std::pow(rel, 1.1098L) / 2.8257L + 5.8506L / std::pow(re, 0.8981L);
  const long double x = -2.0L * std::log10(rel / 3.7065L - 5.0452L / re * std::log10(a));
  return 1.0L / (x * x);
}

inline long double beta(const PipeCase& c) {
  const long double pi = 3.141592653589793238462643383279502884L;
  const long double area = pi * c.diameter * c.diameter / 4.0L;
  const long double rs = 101325.0L / (c.rho_n * 273.15L);
  const long double pm = (c.p_left + c.p_right) / 2.0L;
  return darcy(c) * rs * c.temperature * c.length * c.rho_n * c.rho_n / (2.0L * area * area * c.diameter) *
         std::fabs(c.flow) * c.flow * papay(pm, c) / pm;
}

inline long double gamma(const PipeCase& c) {
  const long double pi = 3.141592653589793238462643383279502884L;
  const long double area = pi * c.diameter * c.diameter / 4.0L;
  const long double rs = 101325.0L / (c.rho_n * 273.15L);
  const long double q = c.rho_n * c.flow;
  const long double pm = (c.p_left + c.p_right) / 2.0L;
  const long double kinetic = rs * c.temperature / (area * area) *
                              (q * q * papay(c.p_right, c) / c.p_right - q * q * papay(c.p_left, c) / c.p_left);
  const long double gravity = c.gravity * c.slope * c.length / (rs * c.temperature) * pm / papay(pm, c);
  return kinetic + gravity;
}

}  // namespace oracle

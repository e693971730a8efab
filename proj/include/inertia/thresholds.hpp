#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string_view>

#include "physics.hpp"
#include "units.hpp"

namespace inertia {

/// Relevance thresholds. Every comparison is inclusive on the relevant side.
struct ThresholdConfig {
  double abs_small = units::bar_to_pa(0.1);                     // Pa
  double abs_high = units::bar_to_pa(0.5);                      // Pa
  double ratio_min = 0.01;                                      // |alpha|/|beta|
  double reference_length = 200e3;                              // m
  double min_flow_change = units::knm3h_to_m3s(0.5);            // m^3/s normal
  double realistic_flow_change = units::knm3h_to_m3s(2000.0);   // m^3/s normal

  /// Small-relevance threshold spread over the reference pipeline length.
  double per_length_min() const { return abs_small / reference_length; }

  void validate() const {
    if (!(abs_small > 0.0 && abs_small < abs_high))
      throw std::invalid_argument("thresholds must satisfy 0 < abs_small < abs_high");
    if (!(ratio_min > 0.0)) throw std::invalid_argument("ratio_min must be positive");
    if (!(reference_length > 0.0)) throw std::invalid_argument("reference_length must be positive");
    if (!(min_flow_change >= 0.0)) throw std::invalid_argument("min_flow_change must be non-negative");
    if (!(realistic_flow_change > 0.0)) throw std::invalid_argument("realistic_flow_change must be positive");
  }
};

enum class RelevanceClass { none = 0, small = 1, high = 2 };

inline std::string_view to_string(RelevanceClass c) {
  switch (c) {
    case RelevanceClass::none: return "none";
    case RelevanceClass::small: return "small";
    case RelevanceClass::high: return "high";
  }
  return "?";
}

inline std::optional<RelevanceClass> parse_relevance(std::string_view s) {
  for (auto c : {RelevanceClass::none, RelevanceClass::small, RelevanceClass::high})
    if (to_string(c) == s) return c;
  return std::nullopt;
}

/// Largest flow change that cannot push |alpha| to `abs_small` on any pipe
/// no longer than `max_length`, no thinner than `min_diameter`, with gas no
/// denser than `max_density` and time steps no shorter than `min_tau`.
inline double derive_min_flow_change(double max_length, double min_tau, double min_diameter, double max_density,
                                     double abs_small) {
  if (!(max_length > 0.0) || !(min_tau > 0.0) || !(min_diameter > 0.0) || !(max_density > 0.0))
    throw std::invalid_argument("derive_min_flow_change: length, time step, diameter and density must be positive");
  if (!(abs_small >= 0.0)) throw std::invalid_argument("derive_min_flow_change: threshold must be non-negative");
  const double min_area = derived_area(PipeGeometry{1.0, min_diameter, 0.0, 0.0});
  return abs_small * min_area * min_tau / (max_length * max_density);
}

inline bool prefilter(double flow_t0, double flow_t1, const ThresholdConfig& cfg) {
  return std::abs(flow_t1 - flow_t0) >= cfg.min_flow_change;
}

inline RelevanceClass classify_absolute(double alpha, const ThresholdConfig& cfg) {
  const double a = std::abs(alpha);
  if (a < cfg.abs_small) return RelevanceClass::none;
  if (a < cfg.abs_high) return RelevanceClass::small;
  return RelevanceClass::high;
}

inline bool pipe_relevant(const TermRecord& r, const ThresholdConfig& cfg) {
  return std::abs(r.alpha_per_length) >= cfg.per_length_min() && r.ratio >= cfg.ratio_min;
}

}  // namespace inertia

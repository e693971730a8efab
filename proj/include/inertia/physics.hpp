#pragma once

// Discretized isothermal momentum equation for a single pipe (l, r) between
// two time steps t0 and t1 (implicit Euler in time, midpoint rule in space):
//
//   p_l(t1) - p_r(t1) = alpha + beta + gamma
//
//   alpha  inertia      L rho_n / (A tau) * (Q0_t1 - Q0_t0)
//   beta   friction     lambda R_s T L rho_n^2 / (2 A^2 D) * |Q0_t1| Q0_t1 z(p_m) / p_m
//   gamma  remaining    kinetic difference between the pipe ends plus gravity
//
// Flows are normal volumetric flows Q0 in m^3/s; mass flow is q = rho_n Q0.

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "model.hpp"
#include "units.hpp"

namespace inertia {

struct TermRecord {
  std::string pipe_id;
  TimePair pair;
  double flow_t0 = 0.0;      // m^3/s normal
  double flow_t1 = 0.0;      // m^3/s normal
  double flow_change = 0.0;  // flow_t1 - flow_t0
  double alpha = 0.0;        // Pa
  double beta = 0.0;         // Pa
  double alpha_per_length = 0.0;  // Pa/m
  double ratio = 0.0;             // |alpha|/|beta|, +inf when beta == 0 and alpha != 0

  bool operator==(const TermRecord&) const = default;
};

/// Ideal-gas specific gas constant implied by the normal density.
inline double specific_gas_constant(double normal_density) {
  if (!(normal_density > 0.0)) throw std::domain_error("normal density must be positive");
  return units::normal_pressure / (normal_density * units::normal_temperature);
}

/// Papay compressibility factor, clamped below at 0.1.
inline double compressibility(double pressure, const GasParams& gas, Diagnostics* diag = nullptr) {
  if (pressure == 0.0) return 1.0;
  const double pr = pressure / gas.pseudo_critical_pressure;
  const double tr = gas.temperature / gas.pseudo_critical_temperature;
  const double z = 1.0 - 3.52 * pr * std::exp(-2.26 * tr) + 0.274 * pr * pr * std::exp(-1.878 * tr);
  if (z < 0.1) {
    if (diag) ++diag->compressibility_clamped;
    return 0.1;
  }
  return z;
}

inline double reynolds_number(double mass_flow, const PipeGeometry& g, const GasParams& gas) {
  return std::abs(mass_flow) * g.diameter / (g.area() * gas.dynamic_viscosity);
}

inline constexpr double laminar_reynolds_limit = 2320.0;
inline constexpr double chen_max_relative_roughness = 0.05;

/// Chen's explicit approximation of Colebrook-White.
inline double chen_friction(double reynolds, double relative_roughness) {
  const double inner = std::pow(relative_roughness, 1.1098) / 2.8257 + 5.8506 / std::pow(reynolds, 0.8981);
  const double x = -2.0 * std::log10(relative_roughness / 3.7065 - 5.0452 / reynolds * std::log10(inner));
  return 1.0 / (x * x);
}

/// Darcy friction factor: Chen above the laminar limit, 64/Re below it.
/// Zero flow yields 0 since the friction term vanishes anyway.
inline double friction_factor(double mass_flow, const PipeGeometry& g, const GasParams& gas,
                              Diagnostics* diag = nullptr) {
  if (mass_flow == 0.0) return 0.0;
  const double re = reynolds_number(mass_flow, g, gas);
  if (re < laminar_reynolds_limit) return 64.0 / re;
  const double rel = g.relative_roughness();
  if (rel >= chen_max_relative_roughness && diag) ++diag->friction_out_of_validity;
  return chen_friction(re, rel);
}

inline double inertia_term(const PipeGeometry& g, double normal_density, double tau, double flow_t0,
                           double flow_t1) {
  if (!(tau > 0.0)) throw std::domain_error("time step must be positive");
  return g.length * normal_density / (g.area() * tau) * (flow_t1 - flow_t0);
}

inline double friction_term(const PipeGeometry& g, const GasParams& gas, double normal_density, double flow_t1,
                            double p_left, double p_right, Diagnostics* diag = nullptr) {
  if (!(p_left > 0.0) || !(p_right > 0.0)) throw std::domain_error("pressures must be positive");
  const double pm = 0.5 * (p_left + p_right);
  const double a = g.area();
  const double lambda = friction_factor(normal_density * flow_t1, g, gas, diag);
  const double rs = specific_gas_constant(normal_density);
  return lambda * rs * gas.temperature * g.length * normal_density * normal_density / (2.0 * a * a * g.diameter) *
         std::abs(flow_t1) * flow_t1 * compressibility(pm, gas, diag) / pm;
}

/// Kinetic and gravity contributions. Both end flows are approximated by the
/// single average pipe flow.
inline double remaining_terms(const PipeGeometry& g, const GasParams& gas, double normal_density, double flow_t1,
                              double p_left, double p_right, Diagnostics* diag = nullptr) {
  if (!(p_left > 0.0) || !(p_right > 0.0)) throw std::domain_error("pressures must be positive");
  const double rs = specific_gas_constant(normal_density);
  const double rt = rs * gas.temperature;
  const double a = g.area();
  const double q = normal_density * flow_t1;
  const double pm = 0.5 * (p_left + p_right);
  const double kinetic = rt / (a * a) * q * q *
                         (compressibility(p_right, gas, diag) / p_right - compressibility(p_left, gas, diag) / p_left);
  const double gravity = gas.gravity * g.slope * g.length / rt * pm / compressibility(pm, gas, diag);
  return kinetic + gravity;
}

/// alpha + beta + gamma, i.e. the modelled p_l(t1) - p_r(t1).
inline double discretized_pressure_drop(const PipeGeometry& g, const GasParams& gas, double normal_density,
                                        double tau, double flow_t0, double flow_t1, double p_left, double p_right,
                                        Diagnostics* diag = nullptr) {
  return inertia_term(g, normal_density, tau, flow_t0, flow_t1) +
         friction_term(g, gas, normal_density, flow_t1, p_left, p_right, diag) +
         remaining_terms(g, gas, normal_density, flow_t1, p_left, p_right, diag);
}

inline double alpha_beta_ratio(double alpha, double beta) {
  if (beta == 0.0) return alpha == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return std::abs(alpha) / std::abs(beta);
}

inline TermRecord make_term_record(std::string pipe_id, const TimePair& pair, const PipeGeometry& g,
                                   const GasParams& gas, double normal_density, double flow_t0, double flow_t1,
                                   double p_left, double p_right, Diagnostics* diag = nullptr) {
  TermRecord r;
  r.pipe_id = std::move(pipe_id);
  r.pair = pair;
  r.flow_t0 = flow_t0;
  r.flow_t1 = flow_t1;
  r.flow_change = flow_t1 - flow_t0;
  r.alpha = inertia_term(g, normal_density, pair.tau(), flow_t0, flow_t1);
  r.beta = friction_term(g, gas, normal_density, flow_t1, p_left, p_right, diag);
  r.alpha_per_length = r.alpha / g.length;
  r.ratio = alpha_beta_ratio(r.alpha, r.beta);
  return r;
}

}  // namespace inertia

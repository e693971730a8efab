#pragma once

#include <cmath>

// SI is used everywhere inside the library. Conversions happen only when
// reading or writing files.
namespace inertia::units {

inline constexpr double pascal_per_bar = 1e5;
inline constexpr double m3s_per_knm3h = 1000.0 / 3600.0;  // 1000 m^3/h -> m^3/s
inline constexpr double normal_pressure = 101325.0;       // Pa, 1.01325 bar
inline constexpr double normal_temperature = 273.15;      // K, 0 degC
inline constexpr double standard_gravity = 9.80665;       // m/s^2

constexpr double bar_to_pa(double bar) { return bar * pascal_per_bar; }
constexpr double knm3h_to_m3s(double q) { return q * m3s_per_knm3h; }

// Inverse of `si = value * factor` that survives a write/read cycle:
// the returned value multiplied by `factor` reproduces `si` bit for bit
// whenever such a value exists within a few ulps of the naive quotient.
inline double from_si(double si, double factor) {
  const double guess = si / factor;
  if (!std::isfinite(guess) || guess * factor == si) return guess;
  double up = guess, down = guess;
  for (int i = 0; i < 8; ++i) {
    up = std::nextafter(up, INFINITY);
    if (up * factor == si) return up;
    down = std::nextafter(down, -INFINITY);
    if (down * factor == si) return down;
  }
  return guess;
}

inline double pa_to_bar(double pa) { return from_si(pa, pascal_per_bar); }
inline double m3s_to_knm3h(double q) { return from_si(q, m3s_per_knm3h); }

}  // namespace inertia::units

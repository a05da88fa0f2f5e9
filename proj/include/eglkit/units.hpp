#pragma once

#include <cmath>
#include <numbers>

namespace eglkit {

// All internal angular frequencies and rates are rad/ps. File and CLI
// values are ordinary frequencies ("value/2pi") in THz.
inline constexpr double two_pi = 2.0 * std::numbers::pi;

// h * (1 THz) / k_B, kelvin per THz of ordinary frequency.
inline constexpr double kelvin_per_thz = 47.9924;

// hbar / k_B in K*ps: converts an angular frequency (rad/ps) to the
// dimensionless Bose argument via hbar*omega/(k_B T) = kelvin_per_radps * omega / T.
inline constexpr double kelvin_per_radps = kelvin_per_thz / two_pi;

inline constexpr double thz_to_radps(double f_thz) { return two_pi * f_thz; }
inline constexpr double radps_to_thz(double w_radps) { return w_radps / two_pi; }

}  // namespace eglkit

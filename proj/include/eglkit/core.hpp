#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "eglkit/units.hpp"

namespace eglkit {

using cplx = std::complex<double>;

// One nuclear coordinate. All rates/frequencies angular (rad/ps).
struct VibrationalMode {
  double nu = 0.0;     // angular vibrational frequency, > 0
  double s = 0.0;      // Huang-Rhys factor, >= 0
  double gamma = 0.0;  // angular vibrational relaxation rate, >= 0
  double c1 = 0.0;     // angular linear non-adiabatic coupling (may be 0 or negative)

  void validate() const {
    if (!(nu > 0.0)) throw std::invalid_argument("VibrationalMode: nu must be > 0");
    if (!(s >= 0.0)) throw std::invalid_argument("VibrationalMode: s must be >= 0");
    if (!(gamma >= 0.0)) throw std::invalid_argument("VibrationalMode: gamma must be >= 0");
    if (!std::isfinite(c1)) throw std::invalid_argument("VibrationalMode: c1 must be finite");
  }
};

// Two-level emitter coupled to N damped vibrational modes.
struct MoleculeSpec {
  std::string name;
  double omega0 = 0.0;      // angular electronic gap, > 0
  double gamma_r = 0.0;     // angular radiative rate (HWHM), >= 0
  double gamma_d = 0.0;     // angular dephasing rate, >= 0
  double coupling_c = 0.0;  // angular constant non-adiabatic coupling
  std::vector<VibrationalMode> modes;

  double gamma_t() const { return gamma_r + gamma_d; }

  // Throws on violated invariants. An empty mode list is permitted (analytic
  // degenerate limits); engines that cannot handle it reject it themselves.
  void validate() const {
    if (!(omega0 > 0.0)) throw std::invalid_argument("MoleculeSpec: omega0 must be > 0");
    if (!(gamma_r >= 0.0)) throw std::invalid_argument("MoleculeSpec: gamma_r must be >= 0");
    if (!(gamma_d >= 0.0)) throw std::invalid_argument("MoleculeSpec: gamma_d must be >= 0");
    if (!std::isfinite(coupling_c))
      throw std::invalid_argument("MoleculeSpec: coupling_c must be finite");
    for (const auto& m : modes) m.validate();
  }

  // Soft checks: conditions the engines assume but do not enforce.
  std::vector<std::string> warnings() const {
    std::vector<std::string> w;
    if (omega0 < 10.0 * gamma_t())
      w.push_back("omega0 is not large against gamma_r+gamma_d; the asymptotic "
                  "expansion assumes omega0 >> gamma_t");
    return w;
  }
};

// thermal_occupancy: Bose occupancy of an angular frequency at temperature T.
// Exactly 0 at T = 0 and for hbar*nu/kT > 700 (no overflow).
inline double thermal_occupancy(double nu, double temperature_k) {
  if (!(nu > 0.0)) throw std::invalid_argument("thermal_occupancy: nu must be > 0");
  if (temperature_k < 0.0)
    throw std::invalid_argument("thermal_occupancy: temperature must be >= 0");
  if (temperature_k == 0.0) return 0.0;
  const double x = kelvin_per_radps * nu / temperature_k;
  if (x > 700.0) return 0.0;
  return 1.0 / std::expm1(x);
}

// Temperature plus cached per-mode occupancies.
struct ThermalContext {
  double temperature = 0.0;          // kelvin
  std::vector<double> occupancy;     // per-mode N-bar

  static ThermalContext at(const MoleculeSpec& mol, double temperature_k) {
    ThermalContext ctx;
    ctx.temperature = temperature_k;
    ctx.occupancy.reserve(mol.modes.size());
    for (const auto& m : mol.modes)
      ctx.occupancy.push_back(thermal_occupancy(m.nu, temperature_k));
    return ctx;
  }
};

// weighted_sum: <O> = sum_p s_p O_p.
inline double weighted_sum(const std::vector<VibrationalMode>& modes,
                           const std::vector<double>& values) {
  if (modes.size() != values.size())
    throw std::invalid_argument("weighted_sum: one value per mode required");
  double acc = 0.0;
  for (std::size_t p = 0; p < modes.size(); ++p) acc += modes[p].s * values[p];
  return acc;
}

// exponent_G: G = sum_p s_p (1 + 2 Nbar_p). The Franck-Condon prefactor is exp(-G).
inline double exponent_G(const std::vector<VibrationalMode>& modes,
                         const ThermalContext& thermal) {
  if (modes.size() != thermal.occupancy.size())
    throw std::invalid_argument("exponent_G: thermal context does not match mode list");
  double g = 0.0;
  for (std::size_t p = 0; p < modes.size(); ++p)
    g += modes[p].s * (1.0 + 2.0 * thermal.occupancy[p]);
  return g;
}

enum class Engine { asymptotic, channels, quadrature, oracle };

inline const char* engine_name(Engine e) {
  switch (e) {
    case Engine::asymptotic: return "asymptotic";
    case Engine::channels: return "channels";
    case Engine::quadrature: return "quadrature";
    case Engine::oracle: return "oracle";
  }
  return "?";
}

// A rate value with per-engine metadata.
struct RateResult {
  double rate = 0.0;            // rad/ps
  Engine engine = Engine::channels;
  std::string order_or_truncation;
  double error_estimate = 0.0;  // rad/ps, >= 0
  std::vector<std::pair<std::string, double>> breakdown;
  bool flagged = false;         // non-convergence / truncation failure
  std::string flag_reason;
};

}  // namespace eglkit

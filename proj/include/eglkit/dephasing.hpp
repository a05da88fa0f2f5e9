#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "eglkit/bell.hpp"
#include "eglkit/channels.hpp"
#include "eglkit/core.hpp"

namespace eglkit {

namespace detail {

// Adaptive Gauss(7)-Kronrod(15) quadrature on [a, b].
inline double adaptive_gk15(const std::function<double(double)>& f, double a, double b,
                            double rel_tol, int max_depth = 48) {
  static const double xgk[8] = {0.9914553711208126, 0.9491079123427585, 0.8648644233597691,
                                0.7415311855993945, 0.5860872354676911, 0.4058451513773972,
                                0.2077849550078985, 0.0};
  static const double wgk[8] = {0.0229353220105292, 0.0630920926299785, 0.1047900103222502,
                                0.1406532597155259, 0.1690047266392679, 0.1903505780647854,
                                0.2044329400752989, 0.2094821410847278};
  static const double wg[4] = {0.1294849661688697, 0.2797053914892767, 0.3818300505051189,
                               0.4179591836734694};

  struct Panel { double a, b; int depth; };
  const auto gk = [&](double lo, double hi, double& err) {
    const double c = 0.5 * (lo + hi);
    const double h = 0.5 * (hi - lo);
    double fv[15];
    for (int i = 0; i < 7; ++i) {
      fv[i] = f(c - h * xgk[i]);
      fv[14 - i] = f(c + h * xgk[i]);
    }
    fv[7] = f(c);
    double k15 = wgk[7] * fv[7];
    double g7 = wg[3] * fv[7];
    for (int i = 0; i < 7; ++i) k15 += wgk[i] * (fv[i] + fv[14 - i]);
    for (int i = 0; i < 3; ++i) g7 += wg[i] * (fv[2 * i + 1] + fv[13 - 2 * i]);
    err = std::abs(k15 - g7) * h;
    return k15 * h;
  };

  double err0 = 0.0;
  double total = gk(a, b, err0);
  std::vector<Panel> stack{{a, b, 0}};
  double acc = 0.0;
  double scale = std::abs(total);
  while (!stack.empty()) {
    const Panel p = stack.back();
    stack.pop_back();
    double perr = 0.0;
    const double pval = gk(p.a, p.b, perr);
    scale = std::max(scale, std::abs(acc) + std::abs(pval));
    if (perr < rel_tol * scale * (p.b - p.a) / (b - a) || p.depth >= max_depth) {
      acc += pval;
    } else {
      const double mid = 0.5 * (p.a + p.b);
      stack.push_back({p.a, mid, p.depth + 1});
      stack.push_back({mid, p.b, p.depth + 1});
    }
  }
  return acc;
}

// int_0^2 u^4 e^{-a u} du in closed form (lower incomplete gamma), with a
// series branch where the gamma recursion would cancel.
inline double angular_overlap_integral(double a) {
  if (a < 1e-14) return 32.0 / 5.0;
  if (a < 1.0) {
    double total = 0.0;
    double term = 1.0;  // (-a)^j / j!
    for (int j = 0; j < 80; ++j) {
      total += term * std::pow(2.0, 5 + j) / (5 + j);
      term *= -a / (j + 1);
      if (std::abs(term) * std::pow(2.0, 5 + j + 1) / (5 + j + 1) < 1e-18 * std::abs(total))
        break;
    }
    return total;
  }
  const double x = 2.0 * a;
  double s = 1.0, t = 1.0;
  for (int k = 1; k <= 4; ++k) {
    t *= x / k;
    s += t;
  }
  return 24.0 / (a * a * a * a * a) * (1.0 - std::exp(-x) * s);
}

}  // namespace detail

struct DephasingParams {
  double mu = 4.7e-7;  // ps^5
  double eta = 8.6;    // 1/ps

  void validate() const {
    if (!(mu > 0.0)) throw std::invalid_argument("DephasingParams: mu must be > 0");
    if (!(eta > 0.0)) throw std::invalid_argument("DephasingParams: eta must be > 0");
  }
};

// dephasing_rate: bulk-phonon pure dephasing
//   gamma_d(T) = mu * int dw w^6 N(w)[N(w)+1] int_0^pi dtheta sin(theta)
//                [1+cos(theta)]^4 exp(-2 w^2 [1+cos(theta)]/eta^2)
// with w in rad/ps. The spectral-density integral (with its conventional
// leading factor 2) gives the full linewidth of the coherence; gamma_d here
// follows the half-width convention used for every other rate, hence mu * I
// rather than 2 mu * I. Inner theta integral via u = 1+cos(theta) in closed
// form; outer integral adaptive with a Boltzmann-tail cutoff.
inline double dephasing_rate(const DephasingParams& params, double temperature_k) {
  params.validate();
  if (temperature_k < 0.0)
    throw std::invalid_argument("dephasing_rate: temperature must be >= 0");
  if (temperature_k == 0.0) return 0.0;
  const double kt = temperature_k / kelvin_per_radps;  // k_B T / hbar, rad/ps
  const double w_max = 30.0 * kt;
  const double eta2 = params.eta * params.eta;
  const auto integrand = [&](double w) {
    if (w <= 0.0) return 0.0;
    const double x = w / kt;
    if (x > 700.0) return 0.0;
    const double nb = 1.0 / std::expm1(x);
    const double a = 2.0 * w * w / eta2;
    const double w2 = w * w;
    return w2 * w2 * w2 * nb * (nb + 1.0) * detail::angular_overlap_integral(a);
  };
  return params.mu * detail::adaptive_gk15(integrand, 0.0, w_max, 1e-11);
}

// quantum_efficiency: QE = gamma_r / (gamma_r + gamma_nr).
inline double quantum_efficiency(double gamma_r, double gamma_nr) {
  if (gamma_r < 0.0 || gamma_nr < 0.0)
    throw std::invalid_argument("quantum_efficiency: rates must be >= 0");
  if (gamma_r + gamma_nr <= 0.0)
    throw std::domain_error("quantum_efficiency: gamma_r + gamma_nr must be > 0");
  return gamma_r / (gamma_r + gamma_nr);
}

enum class RateEngine { asymptotic, channels };

inline RateResult run_engine(const MoleculeSpec& mol, const ThermalContext& thermal,
                             RateEngine engine) {
  if (engine == RateEngine::asymptotic) return converged_asymptotic_rate(mol, thermal);
  return channel_rate(mol, thermal);
}

// calibrate_coupling: gamma_nr is exactly proportional to C^2, so the target
// QE fixes C in one algebraic step from the engine's rate at C = 1.
inline double calibrate_coupling(const MoleculeSpec& mol, const ThermalContext& thermal,
                                 double target_qe, RateEngine engine) {
  if (!(target_qe > 0.0 && target_qe < 1.0))
    throw std::invalid_argument("calibrate_coupling: target QE must be in (0, 1)");
  MoleculeSpec unit = mol;
  unit.coupling_c = 1.0;
  const RateResult r = run_engine(unit, thermal, engine);
  if (r.flagged)
    throw std::runtime_error("calibrate_coupling: engine flagged: " + r.flag_reason);
  if (!(r.rate > 0.0))
    throw std::domain_error("calibrate_coupling: unit rate is not positive");
  return std::sqrt(mol.gamma_r * (1.0 - target_qe) / (target_qe * r.rate));
}

inline double predict_qe(const MoleculeSpec& mol, const ThermalContext& thermal,
                         RateEngine engine) {
  if (mol.coupling_c == 0.0) return 1.0;
  const RateResult r = run_engine(mol, thermal, engine);
  return quantum_efficiency(mol.gamma_r, r.rate);
}

}  // namespace eglkit

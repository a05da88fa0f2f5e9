#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "eglkit/core.hpp"

namespace eglkit {

// Binomial coefficients: exact 64-bit integers up to n = 62, lgamma beyond.
inline double binomial(int n, int k) {
  if (k < 0 || k > n) return 0.0;
  if (n <= 62) {
    std::uint64_t num = 1;
    int kk = k > n - k ? n - k : k;
    for (int i = 1; i <= kk; ++i) {
      num = num * static_cast<std::uint64_t>(n - kk + i) / static_cast<std::uint64_t>(i);
    }
    return static_cast<double>(num);
  }
  return std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0));
}

// Arguments x_1..x_K of the complete Bell polynomials for the rate expansion:
//   x_1 = -(gamma_r+gamma_d) + <(1+N)z> + <N z*>,   z_p = i nu_p - Gamma_p
//   x_j = <(1+N)z^j> + <N (z^j)*>                    for j > 1
struct BellCoefficients {
  std::vector<cplx> xs;  // xs[j-1] = x_j
};

inline BellCoefficients bell_coefficients(const MoleculeSpec& mol,
                                          const ThermalContext& thermal, int k_max) {
  if (k_max < 1) throw std::invalid_argument("bell_coefficients: k_max must be >= 1");
  if (thermal.occupancy.size() != mol.modes.size())
    throw std::invalid_argument("bell_coefficients: thermal context does not match molecule");
  BellCoefficients out;
  out.xs.assign(k_max, cplx(0.0, 0.0));
  // powers z^j by iterated complex multiplication
  for (std::size_t p = 0; p < mol.modes.size(); ++p) {
    const auto& m = mol.modes[p];
    const double nb = thermal.occupancy[p];
    const cplx z(-m.gamma, m.nu);
    cplx zj(1.0, 0.0);
    for (int j = 1; j <= k_max; ++j) {
      zj *= z;
      out.xs[j - 1] += m.s * ((1.0 + nb) * zj + nb * std::conj(zj));
    }
  }
  out.xs[0] -= mol.gamma_t();
  return out;
}

// Complete Bell polynomials B_0..B_K from the recurrence
//   B_{n+1} = sum_{k=0}^{n} binom(n,k) B_{n-k} x_{k+1}.
inline std::vector<cplx> complete_bell(const std::vector<cplx>& xs) {
  const int K = static_cast<int>(xs.size());
  std::vector<cplx> B(K + 1);
  B[0] = cplx(1.0, 0.0);
  for (int n = 0; n < K; ++n) {
    cplx acc(0.0, 0.0);
    for (int k = 0; k <= n; ++k) acc += binomial(n, k) * B[n - k] * xs[k];
    B[n + 1] = acc;
  }
  return B;
}

struct AsymptoticOptions {
  int k_max = 12;            // hard cap on the order
  double rel_stop = 5e-3;    // converged once |term_k| < rel_stop * |partial sum|
  bool stop_on_converged = false;
};

namespace detail {

inline RateResult asymptotic_impl(const MoleculeSpec& mol, const ThermalContext& thermal,
                                  const AsymptoticOptions& opt) {
  if (opt.k_max < 1) throw std::invalid_argument("asymptotic_rate: k_max must be >= 1");
  if (!std::isfinite(mol.coupling_c))
    throw std::invalid_argument("asymptotic_rate: coupling must be finite");

  const auto xs = bell_coefficients(mol, thermal, opt.k_max);
  const auto B = complete_bell(xs.xs);
  const double c2 = mol.coupling_c * mol.coupling_c;
  const cplx iw0(0.0, mol.omega0);

  RateResult res;
  res.engine = Engine::asymptotic;

  // k = 0 term has no real part; assert instead of silently skipping.
  cplx pw = iw0;  // (i omega0)^{k+1}
  const double zeroth = (c2 * B[0] / pw).real();
  if (std::abs(zeroth) > 1e-12 * c2 / mol.omega0)
    throw std::logic_error("asymptotic_rate: k=0 term acquired a real part");

  double total = 0.0;
  int converged_at = 0;
  int growing = 0;
  double prev_mag = 0.0;
  for (int k = 1; k <= opt.k_max; ++k) {
    pw *= iw0;
    const double term = (c2 * B[k] / pw).real();
    total += term;
    res.breakdown.emplace_back("order " + std::to_string(k), term);
    const double mag = std::abs(term);
    if (k > 1) growing = mag > prev_mag ? growing + 1 : 0;
    prev_mag = mag;
    res.error_estimate = mag;
    if (converged_at == 0 && mag < opt.rel_stop * std::abs(total)) converged_at = k;
    if (opt.stop_on_converged && converged_at) break;
  }
  res.rate = total;
  if (converged_at) {
    res.order_or_truncation = "converged at order " + std::to_string(converged_at);
  } else {
    res.order_or_truncation = "k_max=" + std::to_string(opt.k_max);
    if (opt.stop_on_converged) {
      res.flagged = true;
      res.flag_reason = "series not converged at k_max";
    }
  }
  if (growing >= 3) {
    res.flagged = true;
    res.flag_reason = "asymptotic terms growing over the last 3 orders";
  }
  return res;
}

}  // namespace detail

// Fixed-order evaluation: sums exactly k_max orders, breakdown per order.
inline RateResult asymptotic_rate(const MoleculeSpec& mol, const ThermalContext& thermal,
                                  int k_max) {
  AsymptoticOptions opt;
  opt.k_max = k_max;
  return detail::asymptotic_impl(mol, thermal, opt);
}

// Converged evaluation: stops at the first order whose contribution drops
// below rel_stop of the running sum, hard-capped at k_max.
inline RateResult converged_asymptotic_rate(const MoleculeSpec& mol,
                                            const ThermalContext& thermal,
                                            AsymptoticOptions opt = {}) {
  opt.stop_on_converged = true;
  return detail::asymptotic_impl(mol, thermal, opt);
}

}  // namespace eglkit

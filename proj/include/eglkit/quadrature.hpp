#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "eglkit/core.hpp"
#include "eglkit/kahan.hpp"

namespace eglkit {

struct KernelSample {
  double t = 0.0;   // ps
  cplx value;       // f(t), dimensionless
};

namespace detail {

// Vibrational exponent V(t) as a list of complex poles: V(t) = sum c_j e^{w_j t}.
struct PoleSet {
  std::vector<double> c;
  std::vector<cplx> w;
  double gamma_min = std::numeric_limits<double>::infinity();
  double nu_max = 0.0;
  double mass = 0.0;       // sum |c_j| = G at t = 0
  double slope = 0.0;      // sum |c_j| |w_j|, bounds |V'(0)| envelope

  static PoleSet build(const MoleculeSpec& mol, const ThermalContext& thermal, bool pump) {
    PoleSet ps;
    for (std::size_t p = 0; p < mol.modes.size(); ++p) {
      const auto& md = mol.modes[p];
      const double nb = thermal.occupancy[p];
      const double ce = md.s * (1.0 + nb);  // emission-side pole
      const double ca = md.s * nb;          // absorption-side pole
      const cplx we = pump ? cplx(-md.gamma, -md.nu) : cplx(-md.gamma, md.nu);
      const cplx wa = std::conj(we);
      if (ce != 0.0) { ps.c.push_back(ce); ps.w.push_back(we); }
      if (ca != 0.0) { ps.c.push_back(ca); ps.w.push_back(wa); }
      if (md.s != 0.0) {
        ps.gamma_min = std::min(ps.gamma_min, md.gamma);
        ps.nu_max = std::max(ps.nu_max, md.nu);
      }
    }
    for (std::size_t j = 0; j < ps.c.size(); ++j) {
      ps.mass += std::abs(ps.c[j]);
      ps.slope += std::abs(ps.c[j]) * std::abs(ps.w[j]);
    }
    return ps;
  }

  cplx eval(double t) const {
    cplx v(0.0, 0.0);
    for (std::size_t j = 0; j < c.size(); ++j) v += c[j] * std::exp(w[j] * t);
    return v;
  }
};

// exp(v) - 1 - v - v^2/2, evaluated without cancellation for small |v|.
inline cplx expm1_order3(const cplx& v) {
  if (std::abs(v) > 0.01) return std::exp(v) - 1.0 - v - 0.5 * v * v;
  cplx term = v * v * v / 6.0;
  cplx sum = term;
  for (int k = 4; k < 40; ++k) {
    term *= v / static_cast<double>(k);
    sum += term;
    if (std::abs(term) < 1e-20 * std::abs(sum)) break;
  }
  return sum;
}

// Moments M_k = int_{-1}^{1} u^k e^{-i theta u} du for k = 0..deg.
inline void oscillatory_moments(double theta, int deg, std::vector<cplx>& M) {
  M.assign(deg + 1, cplx(0.0, 0.0));
  if (theta < 30.0) {
    // series in (-i theta)^j / j!, only k+j even survives
    for (int k = 0; k <= deg; ++k) {
      cplx term(1.0, 0.0);
      cplx acc(0.0, 0.0);
      for (int j = 0; j < 200; ++j) {
        if ((k + j) % 2 == 0) {
          const cplx contrib = term * (2.0 / (k + j + 1));
          acc += contrib;
          if (std::abs(term) < 1e-18 && j > theta) break;
        }
        term *= cplx(0.0, -theta) / static_cast<double>(j + 1);
      }
      M[k] = acc;
    }
    return;
  }
  const cplx em = std::exp(cplx(0.0, -theta));
  const cplx ep = std::exp(cplx(0.0, theta));
  M[0] = (em - ep) / cplx(0.0, -theta);
  for (int k = 1; k <= deg; ++k) {
    const double sg = (k % 2 == 0) ? 1.0 : -1.0;
    M[k] = (em - sg * ep) / cplx(0.0, -theta) + (static_cast<double>(k) / cplx(0.0, theta)) * M[k - 1];
  }
}

constexpr int kFilonDeg = 8;

struct FilonBasis {
  std::array<double, kFilonDeg + 1> nodes{};              // Chebyshev-Lobatto on [-1,1]
  std::array<std::array<double, kFilonDeg + 1>, kFilonDeg + 1> to_monomial{};

  FilonBasis() {
    const int N = kFilonDeg;
    for (int i = 0; i <= N; ++i) nodes[i] = std::cos(M_PI * i / N);
    // invert the Vandermonde V[i][k] = nodes[i]^k by Gauss-Jordan
    double a[kFilonDeg + 1][2 * (kFilonDeg + 1)];
    for (int i = 0; i <= N; ++i) {
      double pw = 1.0;
      for (int k = 0; k <= N; ++k) { a[i][k] = pw; pw *= nodes[i]; }
      for (int k = 0; k <= N; ++k) a[i][N + 1 + k] = (i == k) ? 1.0 : 0.0;
    }
    for (int col = 0; col <= N; ++col) {
      int piv = col;
      for (int r = col + 1; r <= N; ++r)
        if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
      for (int k = 0; k < 2 * (N + 1); ++k) std::swap(a[col][k], a[piv][k]);
      const double d = a[col][col];
      for (int k = 0; k < 2 * (N + 1); ++k) a[col][k] /= d;
      for (int r = 0; r <= N; ++r) {
        if (r == col) continue;
        const double f = a[r][col];
        for (int k = 0; k < 2 * (N + 1); ++k) a[r][k] -= f * a[col][k];
      }
    }
    for (int k = 0; k <= N; ++k)
      for (int i = 0; i <= N; ++i) to_monomial[k][i] = a[k][N + 1 + i];
  }
};

inline const FilonBasis& filon_basis() {
  static const FilonBasis basis;
  return basis;
}

}  // namespace detail

// kernel_f: f(t) = e^{-gamma_t t} exp( sum_p s_p[(N+1)e^{i nu t} + N e^{-i nu t}]e^{-Gamma t} ).
// alpha * f(0) = 1 with alpha = e^{-G}.
inline cplx kernel_f(double t, const MoleculeSpec& mol, const ThermalContext& thermal) {
  if (t < 0.0) throw std::invalid_argument("kernel_f: t must be >= 0");
  const auto ps = detail::PoleSet::build(mol, thermal, false);
  return std::exp(-mol.gamma_t() * t) * std::exp(ps.eval(t));
}

inline std::vector<KernelSample> sample_kernel(const MoleculeSpec& mol,
                                               const ThermalContext& thermal, double t_max,
                                               int points) {
  std::vector<KernelSample> out;
  out.reserve(points);
  for (int i = 0; i < points; ++i) {
    const double t = t_max * i / (points > 1 ? points - 1 : 1);
    out.push_back({t, kernel_f(t, mol, thermal)});
  }
  return out;
}

struct QuadratureOptions {
  double tolerance = 1e-9;        // relative
  std::size_t panel_budget = 1u << 22;
  bool pump = false;
};

// quadrature_rate: gamma_nr = alpha C^2 Re[ int_0^inf e^{-i omega0 t} f(t) dt ].
// The constant, one-vibron, and two-vibron parts of exp(V) integrate in closed
// form; the remainder (which decays like e^{-3 Gamma_min t}) is integrated by
// Filon panels that treat e^{-i omega0 t} analytically against a degree-8
// polynomial fit of the slow factor.
inline RateResult quadrature_rate(const MoleculeSpec& mol, const ThermalContext& thermal,
                                  QuadratureOptions opt = {}) {
  if (!(mol.omega0 > 0.0)) throw std::invalid_argument("quadrature_rate: omega0 must be > 0");
  if (!(opt.tolerance > 0.0)) throw std::invalid_argument("quadrature_rate: tolerance must be > 0");
  for (const auto& m : mol.modes)
    if (m.s > 0.0 && m.gamma <= 0.0)
      throw std::invalid_argument(
          "quadrature_rate: undamped mode (Gamma = 0) never decays; use the channel engine");

  const auto ps = detail::PoleSet::build(mol, thermal, opt.pump);
  const double gt = mol.gamma_t();
  const double g_exp = ps.mass;  // G = sum s (1+2N)
  const double alpha_c2 = std::exp(-g_exp) * mol.coupling_c * mol.coupling_c;
  const cplx s0(gt, mol.omega0);

  RateResult res;
  res.engine = Engine::quadrature;

  // analytic poles through second order in V
  cplx analytic = 1.0 / s0;
  double abs_analytic = std::abs(analytic);
  for (std::size_t j = 0; j < ps.c.size(); ++j) {
    const cplx term = ps.c[j] / (s0 - ps.w[j]);
    analytic += term;
    abs_analytic += std::abs(term);
  }
  for (std::size_t j = 0; j < ps.c.size(); ++j) {
    for (std::size_t k = j; k < ps.c.size(); ++k) {
      const double fac = (j == k) ? 0.5 : 1.0;
      const cplx term = fac * ps.c[j] * ps.c[k] / (s0 - ps.w[j] - ps.w[k]);
      analytic += term;
      abs_analytic += std::abs(term);
    }
  }

  double total = analytic.real();
  double err = 16.0 * std::numeric_limits<double>::epsilon() * abs_analytic;

  if (!ps.c.empty()) {
    const double t_end = 16.0 / ps.gamma_min;
    // The subtracted integrand exp(V)-1-V-V^2/2 carries vibrational harmonics
    // k >= 3 with amplitudes G^k/k!; the panel width must resolve every
    // harmonic whose amplitude matters at the degree-8 interpolation order.
    const double nu_base = std::max(ps.nu_max, mol.omega0 * 1e-6);
    double h_max = two_pi / (4.0 * nu_base);
    {
      const double eps_p = 1e-12;
      const double interp_const = 256.0 * 362880.0;  // 2^8 * 9!
      double amp = ps.mass * ps.mass / 2.0;           // G^k/k! at k=2
      for (int k = 3; k < 80; ++k) {
        amp *= ps.mass / k;
        if (amp < 1e-17) break;
        const double phase_cap = 2.0 * std::pow(eps_p * interp_const / amp, 1.0 / 9.0);
        h_max = std::min(h_max, phase_cap / (k * nu_base));
      }
    }
    const auto& basis = detail::filon_basis();

    const auto slow = [&](double t) {
      return std::exp(-gt * t) * detail::expm1_order3(ps.eval(t));
    };

    struct PanelResult {
      double real_part;
      double err;
      double fmax;
    };

    std::vector<cplx> moments;
    double theta_cached = -1.0;
    const auto integrate_panel = [&](double a, double b) {
      const double hh = b - a;
      const double tc = 0.5 * (a + b);
      const double theta = mol.omega0 * hh * 0.5;
      if (theta != theta_cached) {
        detail::oscillatory_moments(theta, detail::kFilonDeg, moments);
        theta_cached = theta;
      }
      std::array<cplx, detail::kFilonDeg + 1> fv;
      double fmax = 0.0;
      for (int i = 0; i <= detail::kFilonDeg; ++i) {
        fv[i] = slow(tc + 0.5 * hh * basis.nodes[i]);
        fmax = std::max(fmax, std::abs(fv[i]));
      }
      // monomial coefficients of the interpolant
      cplx integral(0.0, 0.0);
      for (int k = 0; k <= detail::kFilonDeg; ++k) {
        cplx ak(0.0, 0.0);
        for (int i = 0; i <= detail::kFilonDeg; ++i) ak += basis.to_monomial[k][i] * fv[i];
        integral += ak * moments[k];
      }
      integral *= 0.5 * hh * std::exp(cplx(0.0, -mol.omega0 * tc));
      // interpolation error from the top Chebyshev coefficients
      cplx c7(0.0, 0.0), c8(0.0, 0.0);
      const int N = detail::kFilonDeg;
      for (int i = 0; i <= N; ++i) {
        const double wgt = (i == 0 || i == N) ? 0.5 : 1.0;
        c7 += wgt * fv[i] * std::cos(M_PI * 7.0 * i / N);
        c8 += wgt * fv[i] * std::cos(M_PI * 8.0 * i / N);
      }
      c7 *= 2.0 / N;
      c8 *= 2.0 / N;
      return PanelResult{integral.real(), (std::abs(c7) + std::abs(c8)) * hh, fmax};
    };

    // two passes: the second only runs if the first misses the error target
    double num_total = 0.0, num_err = 0.0;
    bool budget_hit = false;
    for (int pass = 0; pass < 2; ++pass) {
      const double scale =
          pass == 0 ? std::max(std::abs(total), 0.1 * abs_analytic) : std::abs(total + num_total);
      const double tol_abs = opt.tolerance * std::max(scale, 1e-300);
      KahanSum acc, eacc;
      std::size_t panels_used = 0;
      budget_hit = false;
      const std::size_t base_panels =
          static_cast<std::size_t>(std::ceil(t_end / h_max));
      const double h = t_end / static_cast<double>(base_panels);
      for (std::size_t i = 0; i < base_panels; ++i) {
        const double a = h * static_cast<double>(i);
        const double b = (i + 1 == base_panels) ? t_end : a + h;
        // adaptive bisection on the slow factor's interpolation error
        struct Seg { double a, b; int depth; };
        std::vector<Seg> stack{{a, b, 0}};
        while (!stack.empty()) {
          const Seg sg = stack.back();
          stack.pop_back();
          const auto pr = integrate_panel(sg.a, sg.b);
          // error-budget floor: a panel cannot beat the roundoff of its values
          const double budget =
              std::max(tol_abs * (sg.b - sg.a) / t_end,
                       64.0 * std::numeric_limits<double>::epsilon() * pr.fmax * (sg.b - sg.a));
          if (pr.err > budget && sg.depth < 30 && panels_used < opt.panel_budget) {
            const double mid = 0.5 * (sg.a + sg.b);
            stack.push_back({sg.a, mid, sg.depth + 1});
            stack.push_back({mid, sg.b, sg.depth + 1});
            if (panels_used + stack.size() >= opt.panel_budget) budget_hit = true;
          } else {
            if (pr.err > budget) budget_hit = true;
            acc.add(pr.real_part);
            eacc.add(pr.err);
            ++panels_used;
          }
        }
      }
      num_total = acc.value();
      num_err = eacc.value();
      if (num_err <= opt.tolerance * std::abs(total + num_total) || budget_hit) break;
    }
    total += num_total;
    err += num_err;
    if (budget_hit) {
      res.flagged = true;
      res.flag_reason = "oscillatory panels failed to meet tolerance within the budget";
    }

    // analytic remainder past t_end: integrand is below |V|^3 e^{|V|}/6 there
    const double g_t = g_exp * std::exp(-ps.gamma_min * t_end);
    const double boundary = std::exp(-gt * t_end) * std::exp(g_t) *
                            (g_t * g_t * g_t / 6.0 * (1.0 + gt / (3.0 * ps.gamma_min)) +
                             ps.slope * g_t * g_t / (6.0 * ps.gamma_min));
    err += boundary / mol.omega0;
  }

  res.rate = alpha_c2 * total;
  res.error_estimate = alpha_c2 * err;
  res.order_or_truncation = "filon tol=" + std::to_string(opt.tolerance);
  return res;
}

// Pump-side integral: same machinery on the conjugated vibrational kernel.
inline RateResult quadrature_pump_rate(const MoleculeSpec& mol, const ThermalContext& thermal,
                                       QuadratureOptions opt = {}) {
  opt.pump = true;
  return quadrature_rate(mol, thermal, opt);
}

}  // namespace eglkit

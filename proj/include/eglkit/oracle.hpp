#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "eglkit/core.hpp"

namespace eglkit {

// Brute-force validator: Holstein + non-adiabatic Hamiltonian on a truncated
// Fock space with the radiative, dephasing, and vibrational-relaxation
// dissipators, propagated as a density matrix.
struct TruncatedSystem {
  MoleculeSpec molecule;     // at most 2 modes
  std::vector<int> cutoffs;  // per-mode Fock cutoff n_cut

  int dimension() const {
    int d = 2;
    for (int c : cutoffs) d *= c + 1;
    return d;
  }

  void validate() const {
    molecule.validate();
    if (molecule.modes.size() > 2)
      throw std::invalid_argument("TruncatedSystem: at most 2 modes supported");
    if (cutoffs.size() != molecule.modes.size())
      throw std::invalid_argument("TruncatedSystem: one cutoff per mode required");
    for (int c : cutoffs)
      if (c < 1) throw std::invalid_argument("TruncatedSystem: cutoffs must be >= 1");
    if (dimension() > 4096)
      throw std::invalid_argument("TruncatedSystem: dimension guard exceeded (> 4096)");
  }
};

struct PopulationTrace {
  std::vector<double> times;  // ps
  std::vector<double> p_e;    // excited-state population
  bool leakage_flag = false;      // top Fock level population reached 1e-6
  bool positivity_flag = false;   // eigenvalue below -1e-8
  bool trace_flag = false;        // trace drift beyond 1e-9 per unit time
  double max_top_population = 0.0;
  double min_eigenvalue = 0.0;
  double max_trace_drift = 0.0;

  bool flagged() const { return leakage_flag || positivity_flag || trace_flag; }
};

enum class OracleInitialState { displaced_excited, bare_excited };

namespace detail {

using SparseC = Eigen::SparseMatrix<cplx>;
using DenseC = Eigen::MatrixXcd;

// exp(A) * e0 for small dense real matrices by scaling-and-squaring Taylor.
inline Eigen::VectorXd expm_column0(Eigen::MatrixXd A) {
  const double nrm = A.cwiseAbs().rowwise().sum().maxCoeff();
  int squarings = 0;
  while (nrm / std::pow(2.0, squarings) > 0.5) ++squarings;
  A /= std::pow(2.0, squarings);
  Eigen::MatrixXd E = Eigen::MatrixXd::Identity(A.rows(), A.cols());
  Eigen::MatrixXd term = E;
  for (int k = 1; k <= 24; ++k) {
    term = (term * A) / static_cast<double>(k);
    E += term;
    if (term.cwiseAbs().maxCoeff() < 1e-18) break;
  }
  for (int s = 0; s < squarings; ++s) E = E * E;
  return E.col(0);
}

}  // namespace detail

// The Lindblad generator rho -> i[rho, H] + sum_c gamma_c (2 L rho L+ - {L+L, rho}).
// Operators are kept sparse; the superoperator is never materialized.
class LindbladGenerator {
 public:
  LindbladGenerator(const TruncatedSystem& system, const ThermalContext& thermal)
      : sys_(system) {
    sys_.validate();
    if (thermal.temperature != 0.0)
      throw std::invalid_argument("LindbladGenerator: only T = 0 baths are supported");
    build();
  }

  int dimension() const { return sys_.dimension(); }
  const detail::SparseC& hamiltonian() const { return h_; }

  detail::DenseC apply(const detail::DenseC& rho) const {
    const cplx i1(0.0, 1.0);
    detail::DenseC out = i1 * (rho * h_ - h_ * rho);
    for (const auto& ch : collapse_) {
      out += ch.rate * (2.0 * (ch.op * rho * ch.op_dag) - ch.op_sq * rho - rho * ch.op_sq);
    }
    return out;
  }

  // projector onto the excited electronic manifold, diag only
  double excited_population(const detail::DenseC& rho) const {
    double p = 0.0;
    for (int k = vib_dim_; k < 2 * vib_dim_; ++k) p += rho(k, k).real();
    return p;
  }

  // total population of the top Fock level of any mode
  double top_level_population(const detail::DenseC& rho) const {
    double p = 0.0;
    for (int e = 0; e < 2; ++e)
      for (int k = 0; k < vib_dim_; ++k) {
        if (!is_top_level(k)) continue;
        const int idx = e * vib_dim_ + k;
        p += rho(idx, idx).real();
      }
    return p;
  }

  Eigen::VectorXcd initial_state(OracleInitialState kind) const {
    Eigen::VectorXcd vib = Eigen::VectorXcd::Zero(vib_dim_);
    if (kind == OracleInitialState::bare_excited) {
      vib(0) = 1.0;
    } else {
      // exact displacement exp[sqrt(s)(b+ - b)] applied mode by mode
      Eigen::VectorXd acc(1);
      acc(0) = 1.0;
      for (std::size_t p = 0; p < sys_.molecule.modes.size(); ++p) {
        const int d = sys_.cutoffs[p] + 1;
        Eigen::MatrixXd k = Eigen::MatrixXd::Zero(d, d);
        const double rs = std::sqrt(sys_.molecule.modes[p].s);
        for (int n = 0; n < d - 1; ++n) {
          const double v = rs * std::sqrt(n + 1.0);
          k(n + 1, n) += v;   // b+
          k(n, n + 1) -= v;   // -b
        }
        const Eigen::VectorXd dcol = detail::expm_column0(k);
        Eigen::VectorXd next(acc.size() * d);
        for (int i = 0; i < acc.size(); ++i)
          for (int n = 0; n < d; ++n) next(i * d + n) = acc(i) * dcol(n);
        acc = next;
      }
      vib = acc.cast<cplx>();
    }
    Eigen::VectorXcd psi = Eigen::VectorXcd::Zero(2 * vib_dim_);
    psi.segment(vib_dim_, vib_dim_) = vib;  // excited manifold
    return psi;
  }

 private:
  struct Collapse {
    double rate;
    detail::SparseC op, op_dag, op_sq;  // op_sq = op+ * op
  };

  bool is_top_level(int vib_index) const {
    int rem = vib_index;
    for (std::size_t p = sys_.molecule.modes.size(); p-- > 0;) {
      const int d = sys_.cutoffs[p] + 1;
      if (rem % d == d - 1) return true;
      rem /= d;
    }
    return false;
  }

  void build() {
    const auto& mol = sys_.molecule;
    const std::size_t nm = mol.modes.size();
    vib_dim_ = 1;
    for (std::size_t p = 0; p < nm; ++p) vib_dim_ *= sys_.cutoffs[p] + 1;
    const int dim = 2 * vib_dim_;

    // vibrational index: k = k_0 * d_1 + k_1 (mode 0 major); electron major overall
    std::vector<int> stride(nm, 1);
    for (std::size_t p = nm; p-- > 1;) stride[p - 1] = stride[p] * (sys_.cutoffs[p] + 1);

    using T = Eigen::Triplet<cplx>;
    std::vector<T> th;

    const auto vib_occ = [&](int k, std::size_t p) {
      return (k / stride[p]) % (sys_.cutoffs[p] + 1);
    };

    double delta = 0.0;
    for (const auto& m : mol.modes) delta += m.s * m.nu;
    const double wbar = mol.omega0 + delta;

    std::vector<T> tsig;  // sigma = |g><e|
    for (int k = 0; k < vib_dim_; ++k) {
      th.emplace_back(vib_dim_ + k, vib_dim_ + k, cplx(wbar, 0.0));
      tsig.emplace_back(k, vib_dim_ + k, cplx(1.0, 0.0));
    }

    // per-mode b operators on the full space
    std::vector<detail::SparseC> b_ops;
    for (std::size_t p = 0; p < nm; ++p) {
      std::vector<T> tb;
      for (int e = 0; e < 2; ++e)
        for (int k = 0; k < vib_dim_; ++k) {
          const int n = vib_occ(k, p);
          if (n == 0) continue;
          const int from = e * vib_dim_ + k;
          const int to = e * vib_dim_ + k - stride[p];
          tb.emplace_back(to, from, cplx(std::sqrt(static_cast<double>(n)), 0.0));
        }
      detail::SparseC b(dim, dim);
      b.setFromTriplets(tb.begin(), tb.end());
      b_ops.push_back(std::move(b));
    }

    for (std::size_t p = 0; p < nm; ++p) {
      const auto& m = mol.modes[p];
      for (int e = 0; e < 2; ++e)
        for (int k = 0; k < vib_dim_; ++k) {
          const int n = vib_occ(k, p);
          const int idx = e * vib_dim_ + k;
          th.emplace_back(idx, idx, cplx(m.nu * n, 0.0));
        }
      // -sqrt(s) nu (b+ + b) sigma+sigma  on the excited manifold
      for (int k = 0; k < vib_dim_; ++k) {
        const int n = vib_occ(k, p);
        if (n < sys_.cutoffs[p]) {
          const double v = -std::sqrt(m.s) * m.nu * std::sqrt(n + 1.0);
          th.emplace_back(vib_dim_ + k + stride[p], vib_dim_ + k, cplx(v, 0.0));
          th.emplace_back(vib_dim_ + k, vib_dim_ + k + stride[p], cplx(v, 0.0));
        }
      }
    }

    // [C + sum C1 (b+ + b)] (sigma + sigma+)
    for (int k = 0; k < vib_dim_; ++k) {
      th.emplace_back(k, vib_dim_ + k, cplx(mol.coupling_c, 0.0));
      th.emplace_back(vib_dim_ + k, k, cplx(mol.coupling_c, 0.0));
    }
    for (std::size_t p = 0; p < nm; ++p) {
      const double c1 = mol.modes[p].c1;
      if (c1 == 0.0) continue;
      for (int k = 0; k < vib_dim_; ++k) {
        const int n = vib_occ(k, p);
        if (n < sys_.cutoffs[p]) {
          const double v = c1 * std::sqrt(n + 1.0);
          // (b+)(sigma + sigma+): from (e,k) to (1-e, k+stride)
          th.emplace_back(vib_dim_ + k + stride[p], k, cplx(v, 0.0));
          th.emplace_back(k + stride[p], vib_dim_ + k, cplx(v, 0.0));
          // b term is the Hermitian conjugate
          th.emplace_back(k, vib_dim_ + k + stride[p], cplx(v, 0.0));
          th.emplace_back(vib_dim_ + k, k + stride[p], cplx(v, 0.0));
        }
      }
    }

    h_.resize(dim, dim);
    h_.setFromTriplets(th.begin(), th.end());

    detail::SparseC sigma(dim, dim);
    sigma.setFromTriplets(tsig.begin(), tsig.end());

    const auto add_collapse = [&](double rate, const detail::SparseC& op) {
      if (rate <= 0.0) return;
      Collapse c;
      c.rate = rate;
      c.op = op;
      c.op_dag = detail::SparseC(op.adjoint());
      c.op_sq = detail::SparseC(c.op_dag * op);
      collapse_.push_back(std::move(c));
    };

    add_collapse(mol.gamma_r, sigma);
    {
      detail::SparseC proj_e(dim, dim);
      std::vector<T> tp;
      for (int k = 0; k < vib_dim_; ++k)
        tp.emplace_back(vib_dim_ + k, vib_dim_ + k, cplx(1.0, 0.0));
      proj_e.setFromTriplets(tp.begin(), tp.end());
      add_collapse(mol.gamma_d, proj_e);
      for (std::size_t p = 0; p < nm; ++p) {
        detail::SparseC op = b_ops[p] - detail::SparseC(std::sqrt(mol.modes[p].s) * proj_e);
        add_collapse(mol.modes[p].gamma, op);
      }
    }
  }

  TruncatedSystem sys_;
  int vib_dim_ = 0;
  detail::SparseC h_;
  std::vector<Collapse> collapse_;
};

struct PropagateOptions {
  double t_end = 0.0;   // ps
  double dt = 0.0;      // ps; must satisfy dt <= 0.05 / max(omega0, nu_max)
  int samples = 400;    // population samples along the trace
};

// propagate: fixed-step fourth-order integration of the master equation.
// Trace samples are averaged over one optical period: the raw population
// carries an O((C/omega0)^2) dressing oscillation at omega0 that is sampling
// noise for the rate fit.
inline PopulationTrace propagate(const TruncatedSystem& system,
                                 OracleInitialState initial, const PropagateOptions& opt) {
  const ThermalContext t0{0.0, std::vector<double>(system.molecule.modes.size(), 0.0)};
  LindbladGenerator gen(system, t0);
  const auto& mol = system.molecule;
  double f_max = mol.omega0;
  for (const auto& m : mol.modes) f_max = std::max(f_max, m.nu);
  if (!(opt.dt > 0.0) || opt.dt > 0.05 / f_max)
    throw std::invalid_argument("propagate: dt must satisfy dt <= 0.05/max(omega0, nu_max)");
  if (!(opt.t_end > opt.dt)) throw std::invalid_argument("propagate: t_end too small");

  const long steps = static_cast<long>(std::ceil(opt.t_end / opt.dt));
  const double dt = opt.t_end / static_cast<double>(steps);
  const long period_steps =
      std::max<long>(1, static_cast<long>(std::llround(two_pi / (mol.omega0 * dt))));
  const long stride = std::max<long>(period_steps, steps / std::max(1, opt.samples));

  const Eigen::VectorXcd psi0 = gen.initial_state(initial);
  detail::DenseC rho = psi0 * psi0.adjoint();

  PopulationTrace trace;
  trace.times.push_back(0.0);
  trace.p_e.push_back(gen.excited_population(rho));

  const int dim = gen.dimension();
  detail::DenseC k1(dim, dim), k2(dim, dim), k3(dim, dim), k4(dim, dim), tmp(dim, dim);

  double window_sum = 0.0;
  long window_count = 0;
  long next_eig_check = steps / 8 + 1;

  for (long s = 1; s <= steps; ++s) {
    k1 = gen.apply(rho);
    tmp = rho + (0.5 * dt) * k1;
    k2 = gen.apply(tmp);
    tmp = rho + (0.5 * dt) * k2;
    k3 = gen.apply(tmp);
    tmp = rho + dt * k3;
    k4 = gen.apply(tmp);
    rho += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);

    window_sum += gen.excited_population(rho);
    ++window_count;
    if (window_count >= stride || s == steps) {
      trace.times.push_back((static_cast<double>(s) - 0.5 * (window_count - 1)) * dt);
      trace.p_e.push_back(window_sum / window_count);
      window_sum = 0.0;
      window_count = 0;

      const double top = gen.top_level_population(rho);
      trace.max_top_population = std::max(trace.max_top_population, top);
      if (top >= 1e-6) trace.leakage_flag = true;
      const double drift = std::abs(rho.trace().real() - 1.0);
      trace.max_trace_drift = std::max(trace.max_trace_drift, drift);
      if (drift > 1e-9 * (s * dt + 1.0)) trace.trace_flag = true;
    }
    if (s >= next_eig_check && dim <= 1024) {
      next_eig_check += steps / 8 + 1;
      Eigen::SelfAdjointEigenSolver<detail::DenseC> es(0.5 * (rho + rho.adjoint()),
                                                       Eigen::EigenvaluesOnly);
      const double mn = es.eigenvalues().minCoeff();
      trace.min_eigenvalue = std::min(trace.min_eigenvalue, mn);
      if (mn < -1e-8) trace.positivity_flag = true;
    }
  }
  return trace;
}

struct RateExtraction {
  double rate = 0.0;         // rad/ps
  double r_squared = 0.0;
  double rms_residual = 0.0;
  bool flagged = false;      // non-exponential decay
  std::string flag_reason;
};

// extract_rate: least-squares slope of ln p_e over [t_lo, end], divided by -2,
// minus gamma_r.
inline RateExtraction extract_rate(const PopulationTrace& trace, double gamma_r,
                                   double t_lo) {
  std::vector<double> ts, ys;
  for (std::size_t i = 0; i < trace.times.size(); ++i) {
    if (trace.times[i] >= t_lo && trace.p_e[i] > 0.0) {
      ts.push_back(trace.times[i]);
      ys.push_back(std::log(trace.p_e[i]));
    }
  }
  RateExtraction out;
  if (ts.size() < 4) {
    out.flagged = true;
    out.flag_reason = "too few samples in the fit window";
    return out;
  }
  double st = 0, sy = 0, stt = 0, sty = 0;
  const double n = static_cast<double>(ts.size());
  for (std::size_t i = 0; i < ts.size(); ++i) {
    st += ts[i];
    sy += ys[i];
    stt += ts[i] * ts[i];
    sty += ts[i] * ys[i];
  }
  const double denom = n * stt - st * st;
  const double slope = (n * sty - st * sy) / denom;
  const double icept = (sy - slope * st) / n;
  double ss_res = 0.0, ss_tot = 0.0;
  const double ymean = sy / n;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const double r = ys[i] - (icept + slope * ts[i]);
    ss_res += r * r;
    ss_tot += (ys[i] - ymean) * (ys[i] - ymean);
  }
  out.rate = -0.5 * slope - gamma_r;
  out.rms_residual = std::sqrt(ss_res / n);
  out.r_squared = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 0.0;
  if (out.r_squared < 0.999) {
    out.flagged = true;
    out.flag_reason = "population decay is not exponential in the fit window (R^2 < 0.999)";
  }
  return out;
}

}  // namespace eglkit

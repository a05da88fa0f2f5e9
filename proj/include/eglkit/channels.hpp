#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "eglkit/core.hpp"
#include "eglkit/kahan.hpp"

namespace eglkit {

// One (n, m) multi-vibron pathway.
struct ChannelIndex {
  std::vector<int> n;  // absorbed quanta per mode
  std::vector<int> m;  // emitted quanta per mode
};

struct ChannelContribution {
  ChannelIndex index;
  double fc_weight = 0.0;        // product of per-mode F factors
  double lorentzian = 0.0;       // S, 1/(rad/ps)
  double coupling_weight = 0.0;  // squared effective coupling, (rad/ps)^2
  double rate_share = 0.0;       // rad/ps
  double detuning = 0.0;         // omega0 + sum (n-m) nu, rad/ps
  double width = 0.0;            // gamma_t + sum (n+m) Gamma, rad/ps
};

struct Truncation {
  double epsilon_rel = 1e-6;
  int max_total_quanta = 40;
};

// franck_condon_weight: F_{n,m} = Nbar^n (Nbar+1)^m s^(n+m) / (n! m!),
// evaluated in log space once n+m grows to dodge overflow/underflow.
inline double franck_condon_weight(const VibrationalMode& mode, int n, int m, double nbar) {
  if (n < 0 || m < 0) throw std::invalid_argument("franck_condon_weight: n, m must be >= 0");
  if (n == 0 && m == 0) return 1.0;
  const double lam_n = mode.s * nbar;
  const double lam_m = mode.s * (1.0 + nbar);
  if (n > 0 && lam_n == 0.0) return 0.0;
  if (m > 0 && lam_m == 0.0) return 0.0;
  if (n + m <= 20) {
    double f = 1.0;
    for (int k = 1; k <= n; ++k) f *= lam_n / k;
    for (int k = 1; k <= m; ++k) f *= lam_m / k;
    return f;
  }
  double lg = -std::lgamma(n + 1.0) - std::lgamma(m + 1.0);
  if (n > 0) lg += n * std::log(lam_n);
  if (m > 0) lg += m * std::log(lam_m);
  return std::exp(lg);
}

// lorentzian_amplitude: S = w / (d^2 + w^2) with w the channel width and d the
// channel detuning. Maximal at zero detuning.
inline double lorentzian_amplitude(const MoleculeSpec& mol, const ChannelIndex& idx) {
  if (idx.n.size() != mol.modes.size() || idx.m.size() != mol.modes.size())
    throw std::invalid_argument("lorentzian_amplitude: index length mismatch");
  double w = mol.gamma_t();
  double d = mol.omega0;
  for (std::size_t p = 0; p < mol.modes.size(); ++p) {
    w += (idx.n[p] + idx.m[p]) * mol.modes[p].gamma;
    d += (idx.n[p] - idx.m[p]) * mol.modes[p].nu;
  }
  if (w <= 0.0) throw std::domain_error("lorentzian_amplitude: zero total width");
  return w / (d * d + w * w);
}

// coupling_weight: squared effective coupling of a channel,
//   ( C + sum_p C1_p sqrt(s_p) + sum_p (C1_p/sqrt(s_p)) (m_p - n_p) )^2.
// Equals C^2 when all C1 vanish.
inline double coupling_weight(const MoleculeSpec& mol, const ChannelIndex& idx) {
  if (idx.n.size() != mol.modes.size() || idx.m.size() != mol.modes.size())
    throw std::invalid_argument("coupling_weight: index length mismatch");
  double b = mol.coupling_c;
  for (std::size_t p = 0; p < mol.modes.size(); ++p) {
    const auto& md = mol.modes[p];
    if (md.c1 != 0.0) {
      if (md.s <= 0.0)
        throw std::domain_error("coupling_weight: linear coupling requires s > 0");
      const double rs = std::sqrt(md.s);
      b += md.c1 * rs + md.c1 / rs * (idx.m[p] - idx.n[p]);
    }
  }
  return b * b;
}

namespace detail {

// Upper bound on the Poisson tail sum_{k >= K} lam^k / k!.
inline double poisson_tail(double lam, int K) {
  if (K <= 0) return std::exp(lam);
  // term lam^K/K!
  double t = 1.0;
  for (int k = 1; k <= K; ++k) t *= lam / k;
  if (lam < K + 1) return t / (1.0 - lam / (K + 1));
  return std::exp(lam);  // crude fallback, only reachable far from stop points
}

enum class ChannelKind { decay, pump };

struct ModeTable {
  double nu = 0, gamma = 0, lam_n = 0, lam_m = 0, lam_tot = 0;
  double c1 = 0, c_over_rs = 0;     // C1/sqrt(s)
  std::vector<double> pn, pm;       // lam^k / k!
  void grow(int q) {
    while (static_cast<int>(pn.size()) <= q)
      pn.push_back(lam_n == 0.0 ? 0.0 : pn.back() * lam_n / static_cast<double>(pn.size()));
    while (static_cast<int>(pm.size()) <= q)
      pm.push_back(lam_m == 0.0 ? 0.0 : pm.back() * lam_m / static_cast<double>(pm.size()));
  }
};

class ChannelEnumerator {
 public:
  ChannelEnumerator(const MoleculeSpec& mol, const ThermalContext& thermal,
                    const Truncation& trunc, ChannelKind kind)
      : mol_(mol), trunc_(trunc), kind_(kind) {
    if (!(trunc.epsilon_rel > 0.0))
      throw std::invalid_argument("channel_rate: epsilon_rel must be > 0");
    if (trunc.max_total_quanta < 1)
      throw std::invalid_argument("channel_rate: max_total_quanta must be >= 1");
    if (thermal.occupancy.size() != mol.modes.size())
      throw std::invalid_argument("channel_rate: thermal context does not match molecule");
    const std::size_t N = mol.modes.size();
    tab_.resize(N);
    c_eff0_ = mol.coupling_c;
    double c_env = 0.0;
    for (std::size_t p = 0; p < N; ++p) {
      const auto& md = mol.modes[p];
      const double nb = thermal.occupancy[p];
      auto& t = tab_[p];
      t.nu = md.nu;
      t.gamma = md.gamma;
      t.lam_n = md.s * nb;
      t.lam_m = md.s * (1.0 + nb);
      t.lam_tot = md.s * (1.0 + 2.0 * nb);
      t.c1 = md.c1;
      if (md.c1 != 0.0) {
        if (md.s <= 0.0)
          throw std::domain_error("channel_rate: linear coupling requires s > 0");
        const double rs = std::sqrt(md.s);
        t.c_over_rs = md.c1 / rs;
        c_eff0_ += md.c1 * rs;
        c_env = std::max(c_env, std::abs(t.c_over_rs));
      }
      t.pn.push_back(1.0);
      t.pm.push_back(1.0);
    }
    exp_g_ = 0.0;
    for (const auto& t : tab_) exp_g_ += t.lam_tot;
    pref_ = std::exp(-exp_g_);
    // envelope on the coupling weight for pruning bounds
    const double benv = std::abs(c_eff0_) + c_env * trunc.max_total_quanta;
    w_env_ = 2.0 * c_eff0_ * c_eff0_ + 2.0 * benv * benv;
    // suffix completion mass and max remaining vibration frequency
    e_suffix_.assign(N + 1, 1.0);
    nu_max_suffix_.assign(N + 1, 0.0);
    for (std::size_t p = N; p-- > 0;) {
      e_suffix_[p] = e_suffix_[p + 1] * std::exp(tab_[p].lam_tot);
      nu_max_suffix_[p] = std::max(nu_max_suffix_[p + 1], tab_[p].nu);
    }
    n_idx_.assign(N, 0);
    m_idx_.assign(N, 0);
  }

  struct Output {
    double total = 0.0;
    double tail_bound = 0.0;
    std::size_t channels = 0;
    bool tail_ok = true;
  };

  // collector: optional, keeps the largest `top` shares
  Output run(double theta_div, std::vector<ChannelContribution>* collect = nullptr,
             std::size_t top = 0) {
    sum_ = KahanSum{};
    tail_ = KahanSum{};
    leaves_ = 0;
    theta_div_ = theta_div;
    collect_ = collect;
    top_ = top;
    if (w_env_ > 0.0) recurse(0, 1.0, mol_.omega0, mol_.gamma_t(), 0);
    Output out;
    out.total = sum_.value();
    out.tail_bound = tail_.value();
    out.channels = leaves_;
    out.tail_ok = out.tail_bound <= trunc_.epsilon_rel * std::max(out.total, 0.0) ||
                  out.tail_bound == 0.0;
    if (collect_) {
      std::sort(collect_->begin(), collect_->end(),
                [](const ChannelContribution& a, const ChannelContribution& b) {
                  if (a.rate_share != b.rate_share) return a.rate_share > b.rate_share;
                  if (a.index.n != b.index.n) return a.index.n < b.index.n;
                  return a.index.m < b.index.m;
                });
      if (top_ && collect_->size() > top_) collect_->resize(top_);
    }
    return out;
  }

  double exp_g() const { return exp_g_; }

 private:
  double theta() const {
    return trunc_.epsilon_rel * sum_.value() / theta_div_;
  }

  // Denominator for the Lorentzian bound S <= 1/max(w, 2 d_reach): completing
  // the channel can only widen it, and the detuning cannot get closer to zero
  // than d_reach given the remaining quanta budget. Pump shares evaluate the
  // mirrored detuning, so the reach is measured from there.
  double bound_denom(double wid, double det, int quanta_used, std::size_t p) const {
    const double eff = kind_ == ChannelKind::pump ? 2.0 * mol_.omega0 - det : det;
    const double shift = (trunc_.max_total_quanta - quanta_used) * nu_max_suffix_[p];
    const double d_reach = std::max(0.0, std::abs(eff) - shift);
    return std::max(wid, 2.0 * d_reach);
  }

  void recurse(std::size_t p, double fprod, double det, double wid, int quanta_used) {
    if (p == tab_.size()) {
      leaf(fprod, det, wid);
      return;
    }
    auto& t = tab_[p];
    const double esuf_next = e_suffix_[p + 1];
    for (int q = 0;; ++q) {
      // remaining channels have >= q quanta in this mode; their width is at
      // least wid + q*gamma while the detuning budget is everything unassigned
      const double mass_tail = q == 0 ? std::exp(t.lam_tot) : poisson_tail(t.lam_tot, q);
      const double denom = bound_denom(wid + q * t.gamma, det, quanta_used, p);
      const double bnd = pref_ * w_env_ * fprod * mass_tail * esuf_next / denom;
      if (quanta_used + q > trunc_.max_total_quanta || q > 0) {
        const bool over_cap = quanta_used + q > trunc_.max_total_quanta;
        if (over_cap || bnd < theta() || mass_tail < 1e-18 * std::exp(t.lam_tot)) {
          tail_.add(bnd);
          break;
        }
      }
      t.grow(q);
      for (int n = 0; n <= q; ++n) {
        const int m = q - n;
        if (n > 0 && t.lam_n == 0.0) continue;
        if (m > 0 && t.lam_m == 0.0) continue;
        const double f = fprod * t.pn[n] * t.pm[m];
        if (f == 0.0) continue;
        const double wid2 = wid + q * t.gamma;
        const double det2 = det + (n - m) * t.nu;
        if (q > 0) {
          const double bc = pref_ * w_env_ * f * esuf_next /
                            bound_denom(wid2, det2, quanta_used + q, p + 1);
          if (bc < theta()) {
            tail_.add(bc);
            continue;
          }
        }
        n_idx_[p] = n;
        m_idx_[p] = m;
        recurse(p + 1, f, det2, wid2, quanta_used + q);
        n_idx_[p] = 0;
        m_idx_[p] = 0;
      }
    }
  }

  void leaf(double fprod, double det, double wid) {
    ++leaves_;
    // effective coupling: b = C + sum C1 sqrt(s) + sum (C1/sqrt(s)) (m - n)
    double b = c_eff0_;
    bool has_c1 = false;
    for (std::size_t p = 0; p < tab_.size(); ++p) {
      if (tab_[p].c1 != 0.0) {
        has_c1 = true;
        b += tab_[p].c_over_rs * (m_idx_[p] - n_idx_[p]);
      }
    }
    double d = det;
    if (kind_ == ChannelKind::pump) {
      // pump channels mirror the detuning and flip the linear-coupling shift
      d = 2.0 * mol_.omega0 - det;
      if (has_c1) {
        b = c_eff0_;
        for (std::size_t p = 0; p < tab_.size(); ++p)
          b += tab_[p].c_over_rs * (n_idx_[p] - m_idx_[p]);
      }
    }
    if (wid <= 0.0) return;  // zero-width channel carries no weight off resonance
    const double S = wid / (d * d + wid * wid);
    const double share = pref_ * b * b * S * fprod;
    sum_.add(share);
    if (collect_) {
      ChannelContribution c;
      c.index.n = n_idx_;
      c.index.m = m_idx_;
      c.fc_weight = fprod;
      c.lorentzian = S;
      c.coupling_weight = b * b;
      c.rate_share = share;
      c.detuning = d;
      c.width = wid;
      collect_->push_back(std::move(c));
      if (top_ && collect_->size() > 4 * top_ + 1024) {
        std::nth_element(collect_->begin(), collect_->begin() + top_, collect_->end(),
                         [](const ChannelContribution& a, const ChannelContribution& b2) {
                           return a.rate_share > b2.rate_share;
                         });
        collect_->resize(top_);
      }
    }
  }

  const MoleculeSpec& mol_;
  Truncation trunc_;
  ChannelKind kind_;
  std::vector<ModeTable> tab_;
  std::vector<double> e_suffix_, nu_max_suffix_;
  std::vector<int> n_idx_, m_idx_;
  double pref_ = 0.0, exp_g_ = 0.0, c_eff0_ = 0.0, w_env_ = 0.0;
  double theta_div_ = 1e4;
  KahanSum sum_, tail_;
  std::size_t leaves_ = 0;
  std::vector<ChannelContribution>* collect_ = nullptr;
  std::size_t top_ = 0;
};

inline RateResult channel_engine(const MoleculeSpec& mol, const ThermalContext& thermal,
                                 const Truncation& trunc, ChannelKind kind,
                                 std::vector<ChannelContribution>* collect = nullptr,
                                 std::size_t top = 0) {
  RateResult res;
  res.engine = Engine::channels;
  ChannelEnumerator::Output out;
  double theta_div = 1e4;
  for (int attempt = 0;; ++attempt) {
    ChannelEnumerator e(mol, thermal, trunc, kind);
    if (collect) collect->clear();
    out = e.run(theta_div, collect, top);
    if (out.tail_ok || attempt >= 2) break;
    theta_div *= 1e3;  // cuts were too aggressive; retry with a finer threshold
  }
  res.rate = out.total;
  res.error_estimate = out.tail_bound;
  res.order_or_truncation = "eps=" + std::to_string(trunc.epsilon_rel) +
                            " qcap=" + std::to_string(trunc.max_total_quanta) +
                            " channels=" + std::to_string(out.channels);
  if (!out.tail_ok) {
    res.flagged = true;
    res.flag_reason = "pruned-tail bound exceeds epsilon_rel * rate at max_total_quanta";
  }
  return res;
}

}  // namespace detail

// channel_rate: Lorentzian multi-vibron expansion
//   gamma_nr = e^-G sum_{n,m} W(n,m) S(n,m) prod_p F^{(p)}_{n_p,m_p}
// over all channels surviving the certified pruning policy.
inline RateResult channel_rate(const MoleculeSpec& mol, const ThermalContext& thermal,
                               Truncation trunc = {},
                               std::vector<ChannelContribution>* collect = nullptr,
                               std::size_t top = 0) {
  return detail::channel_engine(mol, thermal, trunc, detail::ChannelKind::decay, collect, top);
}

// pump_rate: same expansion with swapped Franck-Condon indices (F_{m,n}),
// equivalently mirrored channel detunings.
inline RateResult pump_rate(const MoleculeSpec& mol, const ThermalContext& thermal,
                            Truncation trunc = {}) {
  return detail::channel_engine(mol, thermal, trunc, detail::ChannelKind::pump);
}

// Zero-temperature single-sum form (emission quanta only, with the
// linear-coupling weight); used as an independent code path for validation.
inline double channel_rate_t0(const MoleculeSpec& mol, Truncation trunc = {}) {
  ThermalContext t0;
  t0.temperature = 0.0;
  t0.occupancy.assign(mol.modes.size(), 0.0);
  const double g = [&] {
    double acc = 0.0;
    for (const auto& m : mol.modes) acc += m.s;
    return acc;
  }();
  const double pref = std::exp(-g);
  double c_eff0 = mol.coupling_c;
  for (const auto& m : mol.modes)
    if (m.c1 != 0.0) c_eff0 += m.c1 * std::sqrt(m.s);

  KahanSum sum;
  std::vector<int> mvec(mol.modes.size(), 0);
  const double gt = mol.gamma_t();

  // plain product recursion over emission quanta with a fixed per-mode cap
  auto rec = [&](auto&& self, std::size_t p, double fprod, double det, double wid,
                 double b, int used) -> void {
    if (p == mol.modes.size()) {
      if (wid <= 0.0) return;
      const double S = wid / (det * det + wid * wid);
      sum.add(pref * b * b * S * fprod);
      return;
    }
    const auto& md = mol.modes[p];
    double fm = 1.0;
    for (int m = 0; m + used <= trunc.max_total_quanta; ++m) {
      if (m > 0) {
        fm *= md.s / m;
        if (fm * fprod < 1e-30 * std::exp(g)) break;
      }
      double b2 = b;
      if (md.c1 != 0.0) b2 += md.c1 / std::sqrt(md.s) * m;
      self(self, p + 1, fprod * fm, det - m * md.nu, wid + m * md.gamma, b2, used + m);
    }
  };
  rec(rec, 0, 1.0, mol.omega0, gt, c_eff0, 0);
  return sum.value();
}

struct DiagonalDecomposition {
  RateResult total;
  double zero_channel = 0.0;
  std::vector<double> per_mode;  // channels where only mode p is active
  double residual = 0.0;         // multi-mode remainder
};

// diagonal_decomposition: splits the channel sum into the zero channel, the
// single-coordinate (diagonal) pathways, and the multi-mode residual.
inline DiagonalDecomposition diagonal_decomposition(const MoleculeSpec& mol,
                                                    const ThermalContext& thermal,
                                                    Truncation trunc = {}) {
  DiagonalDecomposition out;
  out.total = channel_rate(mol, thermal, trunc);
  const std::size_t N = mol.modes.size();
  double g = 0.0;
  for (std::size_t p = 0; p < N; ++p)
    g += mol.modes[p].s * (1.0 + 2.0 * thermal.occupancy[p]);
  const double pref = std::exp(-g);
  ChannelIndex zero;
  zero.n.assign(N, 0);
  zero.m.assign(N, 0);
  const double w00 = coupling_weight(mol, zero);
  const double gt = mol.gamma_t();
  out.zero_channel = gt > 0.0 ? pref * w00 * gt / (mol.omega0 * mol.omega0 + gt * gt) : 0.0;

  out.per_mode.assign(N, 0.0);
  for (std::size_t p = 0; p < N; ++p) {
    const auto& md = mol.modes[p];
    const double nb = thermal.occupancy[p];
    const double lam_tot = md.s * (1.0 + 2.0 * nb);
    KahanSum acc;
    ChannelIndex idx = zero;
    for (int q = 1; q <= trunc.max_total_quanta; ++q) {
      if (detail::poisson_tail(lam_tot, q) < 1e-18 * std::exp(lam_tot)) break;
      for (int n = 0; n <= q; ++n) {
        const int m = q - n;
        const double f = franck_condon_weight(md, n, m, nb);
        if (f == 0.0) continue;
        idx.n[p] = n;
        idx.m[p] = m;
        acc.add(pref * coupling_weight(mol, idx) * lorentzian_amplitude(mol, idx) * f);
      }
    }
    idx.n[p] = 0;
    idx.m[p] = 0;
    out.per_mode[p] = acc.value();
  }
  double diag_sum = 0.0;
  for (double v : out.per_mode) diag_sum += v;
  out.residual = out.total.rate - diag_sum - out.zero_channel;
  return out;
}

}  // namespace eglkit

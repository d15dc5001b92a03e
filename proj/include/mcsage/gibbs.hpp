#pragma once

// Gibbs sampler over p(d | r, theta) for the linear Gaussian model r = Gd + w,
// plus Rao-Blackwellized estimators of the single-symbol posterior means and
// the pairwise cross-user correlation soft values.
//
// Full conditionals are exact sigmoids of the interference-cancelled LLR
//   lambda_q = (4/N0) Re{ g_q^dag (r - G_qbar d_qbar) },
// so each sweep visits every non-pilot position once (user-major order) and
// redraws it from sigmoid(lambda). Estimators average exact conditional
// probabilities over retained sweeps instead of raw indicator frequencies.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "mcsage/config.hpp"
#include "mcsage/effective_model.hpp"
#include "mcsage/rng.hpp"
#include "mcsage/soft_stats.hpp"

namespace mcsage {

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

struct ChainState {
    std::vector<std::int8_t> d;  // K*L flat, q = k*L + ell
    long sweeps = 0;
    Rng rng;
};

inline ChainState make_chain_state(const EffectiveModel& model, const PilotSet& pilots, std::uint64_t seed) {
    ChainState st;
    st.rng.reseed(mix(seed, 0x6b5));
    st.d.resize((std::size_t)model.num_cols());
    for (int q = 0; q < model.num_cols(); ++q)
        st.d[(std::size_t)q] = pilots.pilot(q) ? pilots.value[(std::size_t)q] : (std::int8_t)st.rng.sign();
    return st;
}

// Exact LLR of symbol q given all other symbols; d carries the full
// assignment, the entry at q is ignored.
inline double llr_single(const EffectiveModel& model, int q, std::span<const std::int8_t> d) {
    if (q < 0 || q >= model.num_cols()) throw std::out_of_range("llr_single: symbol index");
    if ((int)d.size() != model.num_cols()) throw std::invalid_argument("llr_single: assignment length");
    ComplexVec u = model.received();
    for (int p = 0; p < model.num_cols(); ++p) {
        if (p == q) continue;
        model.axpy_col(u, p, Complex(-(double)d[(std::size_t)p], 0.0));
    }
    return 4.0 / model.noise_level() * model.dot_col(q, u).real();
}

namespace detail {

// One in-place sweep; res must equal r - G d on entry and is kept consistent.
inline void sweep_inplace(const EffectiveModel& model, ChainState& st, const PilotSet& pilots, ComplexVec& res) {
    const double scale = 4.0 / model.noise_level();
    for (int q = 0; q < model.num_cols(); ++q) {
        if (pilots.pilot(q)) continue;
        const double old = (double)st.d[(std::size_t)q];
        // g_q^dag (res + d_q g_q) = g_q^dag (r - G_qbar d_qbar)
        const double lam = scale * (model.dot_col(q, res).real() + old * model.col_energy(q));
        const std::int8_t next = (st.rng.uniform() < sigmoid(lam)) ? 1 : -1;
        if (next != st.d[(std::size_t)q]) {
            model.axpy_col(res, q, Complex(old - (double)next, 0.0));
            st.d[(std::size_t)q] = next;
        }
    }
    ++st.sweeps;
}

// lambda_q for the current assignment, given precomputed dots_q = g_q^dag res.
inline double llr_from_dots(const EffectiveModel& model, std::span<const Complex> dots,
                            std::span<const std::int8_t> d, int q) {
    return 4.0 / model.noise_level() *
           (dots[(std::size_t)q].real() + (double)d[(std::size_t)q] * model.col_energy(q));
}

// Rao-Blackwellized soft value of d_q * d_p for one retained sample. For two
// free positions this is E[d_q d_p] under the exact four-point conditional;
// pilot positions contribute their fixed value times the other symbol's
// conditional mean.
inline double rb_pair_value(const EffectiveModel& model, const PilotSet& pilots, std::span<const Complex> dots,
                            std::span<const std::int8_t> d, int q, int p) {
    const bool qpil = pilots.pilot(q), ppil = pilots.pilot(p);
    if (qpil && ppil) return (double)pilots.value[(std::size_t)q] * (double)pilots.value[(std::size_t)p];
    if (qpil || ppil) {
        const int fix = qpil ? q : p;
        const int var = qpil ? p : q;
        return (double)pilots.value[(std::size_t)fix] * std::tanh(0.5 * llr_from_dots(model, dots, d, var));
    }
    const double s = 2.0 / model.noise_level();
    const double dq = (double)d[(std::size_t)q];
    const double dp = (double)d[(std::size_t)p];
    const double gqp = model.gram(q, p).real();
    // u = res + d_q g_q + d_p g_p removes both symbols from the residual.
    const double A = s * (dots[(std::size_t)q].real() + dq * model.col_energy(q) + dp * gqp);
    const double B = s * (dots[(std::size_t)p].real() + dp * model.col_energy(p) + dq * gqp);
    const double C = s * gqp;
    const std::array<double, 4> lw{A + B - C, A - B + C, -A + B + C, -A - B - C};
    const double mx = std::max(std::max(lw[0], lw[1]), std::max(lw[2], lw[3]));
    const double wpp = std::exp(lw[0] - mx);
    const double wpm = std::exp(lw[1] - mx);
    const double wmp = std::exp(lw[2] - mx);
    const double wmm = std::exp(lw[3] - mx);
    return (wpp - wpm - wmp + wmm) / (wpp + wpm + wmp + wmm);
}

// Accumulate all needed pair soft values for one sample into acc (layout of
// SoftStatistics::corr); each unordered pair is evaluated once and mirrored.
inline void accumulate_pairs(const EffectiveModel& model, const PilotSet& pilots, std::span<const Complex> dots,
                             std::span<const std::int8_t> d, std::vector<double>& acc) {
    const int K = model.users(), L = model.frame_len();
    for (int k = 0; k < K; ++k) {
        for (int kp = k + 1; kp < K; ++kp) {
            for (int l = 0; l < L; ++l) {
                const int q = k * L + l;
                for (int lag = -1; lag <= 1; ++lag) {
                    const int lp = l + lag;
                    if (lp < 0 || lp >= L) continue;
                    const int p = kp * L + lp;
                    const double value = rb_pair_value(model, pilots, dots, d, q, p);
                    acc[(std::size_t)((q * K + kp) * 3 + lag + 1)] += value;
                    acc[(std::size_t)((p * K + k) * 3 - lag + 1)] += value;
                }
            }
        }
    }
}

// Fused E-step pass: runs burn_in + Nt sweeps from the given chain and
// accumulates both estimators in one traversal; the per-sample column dots
// g_q^dag res make every accumulator update O(1).
inline SoftStatistics run_estep(const EffectiveModel& model, const PilotSet& pilots, int Nt, int burn_in,
                                ChainState& chain, std::vector<std::vector<std::int8_t>>* samples_out,
                                bool want_corr) {
    if (Nt < 1) throw std::invalid_argument("run_estep: Nt must be >= 1");
    const int n = model.num_cols();
    ComplexVec res = model.residual(chain.d);
    for (int b = 0; b < burn_in; ++b) sweep_inplace(model, chain, pilots, res);

    SoftStatistics soft;
    soft.resize(model.users(), model.frame_len());
    std::vector<double> p_plus((std::size_t)n, 0.0);
    std::vector<Complex> dots((std::size_t)n);
    if (samples_out) {
        samples_out->clear();
        samples_out->reserve((std::size_t)Nt);
    }

    for (int t = 0; t < Nt; ++t) {
        sweep_inplace(model, chain, pilots, res);
        if (samples_out) samples_out->push_back(chain.d);
        for (int q = 0; q < n; ++q) dots[(std::size_t)q] = model.dot_col(q, res);
        for (int q = 0; q < n; ++q) {
            if (pilots.pilot(q)) continue;
            p_plus[(std::size_t)q] += sigmoid(llr_from_dots(model, dots, chain.d, q));
        }
        if (want_corr) accumulate_pairs(model, pilots, dots, chain.d, soft.corr);
    }

    for (int q = 0; q < n; ++q) {
        if (pilots.pilot(q))
            soft.d_tilde[(std::size_t)q] = (double)pilots.value[(std::size_t)q];
        else
            soft.d_tilde[(std::size_t)q] = std::clamp(2.0 * p_plus[(std::size_t)q] / Nt - 1.0, -1.0, 1.0);
    }
    if (want_corr)
        for (auto& v : soft.corr) v = std::clamp(v / Nt, -1.0, 1.0);
    return soft;
}

}  // namespace detail

inline void gibbs_sweep(const EffectiveModel& model, ChainState& st, const PilotSet& pilots) {
    ComplexVec res = model.residual(st.d);
    detail::sweep_inplace(model, st, pilots, res);
}

// Exact conditional joint p(d_q = m, d_p = n | all others, r, theta): the
// four Gaussian exponents are normalized directly, which reduces to the
// product-of-sigmoids factorization whenever g_p^dag g_q = 0. The entries of
// d at p and q are ignored.
inline double pairwise_joint_prob(const EffectiveModel& model, int p, int q, int m, int n,
                                  std::span<const std::int8_t> d) {
    if (p == q) throw std::invalid_argument("pairwise_joint_prob: requires p != q");
    if (p < 0 || p >= model.num_cols() || q < 0 || q >= model.num_cols())
        throw std::out_of_range("pairwise_joint_prob: symbol index");
    if ((m != 1 && m != -1) || (n != 1 && n != -1))
        throw std::invalid_argument("pairwise_joint_prob: symbols must be +-1");
    ComplexVec u = model.received();
    for (int j = 0; j < model.num_cols(); ++j) {
        if (j == p || j == q) continue;
        model.axpy_col(u, j, Complex(-(double)d[(std::size_t)j], 0.0));
    }
    const double s = 2.0 / model.noise_level();
    const double A = s * model.dot_col(q, u).real();
    const double B = s * model.dot_col(p, u).real();
    const double C = s * model.gram(q, p).real();
    const std::array<double, 4> lw{A + B - C, A - B + C, -A + B + C, -A - B - C};
    const double mx = std::max(std::max(lw[0], lw[1]), std::max(lw[2], lw[3]));
    double z = 0.0;
    for (double v : lw) z += std::exp(v - mx);
    const int idx = (m == 1 ? 0 : 2) + (n == 1 ? 0 : 1);
    return std::exp(lw[(std::size_t)idx] - mx) / z;
}

struct GibbsEstimate {
    std::vector<double> d_tilde;                    // K*L
    std::vector<std::vector<std::int8_t>> samples;  // Nt retained sweeps
};

// Posterior-mean estimates plus the retained sample list, from a fresh chain.
inline GibbsEstimate estimate_soft_symbols(const EffectiveModel& model, const PilotSet& pilots, int Nt,
                                           int burn_in, std::uint64_t seed) {
    ChainState chain = make_chain_state(model, pilots, seed);
    GibbsEstimate est;
    SoftStatistics soft = detail::run_estep(model, pilots, Nt, burn_in, chain, &est.samples, false);
    est.d_tilde = std::move(soft.d_tilde);
    return est;
}

// Warm-start variant; the chain continues from (and is left at) its state.
inline GibbsEstimate estimate_soft_symbols(const EffectiveModel& model, const PilotSet& pilots, int Nt,
                                           int burn_in, ChainState& chain) {
    GibbsEstimate est;
    SoftStatistics soft = detail::run_estep(model, pilots, Nt, burn_in, chain, &est.samples, false);
    est.d_tilde = std::move(soft.d_tilde);
    return est;
}

// Correlation soft values from an existing retained sample list (same layout
// as SoftStatistics::corr).
inline std::vector<double> estimate_soft_correlations(const EffectiveModel& model, const PilotSet& pilots,
                                                      const std::vector<std::vector<std::int8_t>>& samples) {
    if (samples.empty()) throw std::invalid_argument("estimate_soft_correlations: no samples");
    const int n = model.num_cols();
    std::vector<double> corr((std::size_t)n * model.users() * 3, 0.0);
    std::vector<Complex> dots((std::size_t)n);
    for (const auto& d : samples) {
        if ((int)d.size() != n) throw std::invalid_argument("estimate_soft_correlations: bad sample length");
        ComplexVec res = model.residual(d);
        for (int q = 0; q < n; ++q) dots[(std::size_t)q] = model.dot_col(q, res);
        detail::accumulate_pairs(model, pilots, dots, d, corr);
    }
    const double inv = 1.0 / (double)samples.size();
    for (auto& v : corr) v = std::clamp(v * inv, -1.0, 1.0);
    return corr;
}

}  // namespace mcsage

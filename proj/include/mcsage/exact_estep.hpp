#pragma once

// Exact E-step by posterior enumeration over all symbol assignments.
// Feasible only for tiny instances; the receiver's exact mode is gated to at
// most 20 free symbol positions and exists for tests and diagnostics. The
// production path always samples.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "mcsage/effective_model.hpp"
#include "mcsage/soft_stats.hpp"

namespace mcsage {

inline constexpr int kExactEStepMaxFree = 20;

inline SoftStatistics exact_soft_statistics(const EffectiveModel& model, const PilotSet& pilots) {
    const int n = model.num_cols();
    const int K = model.users(), L = model.frame_len();
    std::vector<int> free_pos;
    for (int q = 0; q < n; ++q)
        if (!pilots.pilot(q)) free_pos.push_back(q);
    const int F = (int)free_pos.size();
    if (F > kExactEStepMaxFree) throw std::invalid_argument("exact_soft_statistics: instance too large");

    // log w(d) = sum_q d_q b_q - sum_{q<p} d_q d_p J_qp  (constants dropped)
    const double s = 2.0 / model.noise_level();
    std::vector<double> b((std::size_t)n);
    for (int q = 0; q < n; ++q) b[(std::size_t)q] = s * model.dot_col_r(q).real();
    struct Pair {
        int q, p;
        double J;
    };
    std::vector<Pair> coupling;
    for (int q = 0; q < n; ++q) {
        for (int p = q + 1; p < n; ++p) {
            const double J = s * model.gram(q, p).real();
            if (J != 0.0) coupling.push_back({q, p, J});
        }
    }

    std::vector<std::int8_t> d((std::size_t)n);
    for (int q = 0; q < n; ++q) d[(std::size_t)q] = pilots.pilot(q) ? pilots.value[(std::size_t)q] : 1;

    const std::size_t total = (std::size_t)1 << F;
    std::vector<double> logw(total);
    double mx = -1e300;
    for (std::size_t c = 0; c < total; ++c) {
        for (int j = 0; j < F; ++j)
            d[(std::size_t)free_pos[(std::size_t)j]] = ((c >> j) & 1) ? 1 : -1;
        double lw = 0.0;
        for (int q = 0; q < n; ++q) lw += (double)d[(std::size_t)q] * b[(std::size_t)q];
        for (const auto& cp : coupling)
            lw -= (double)d[(std::size_t)cp.q] * (double)d[(std::size_t)cp.p] * cp.J;
        logw[c] = lw;
        mx = std::max(mx, lw);
    }

    SoftStatistics soft;
    soft.resize(K, L);
    double z = 0.0;
    std::vector<double> mean((std::size_t)n, 0.0);
    std::vector<double> corr_acc(soft.corr.size(), 0.0);
    for (std::size_t c = 0; c < total; ++c) {
        for (int j = 0; j < F; ++j)
            d[(std::size_t)free_pos[(std::size_t)j]] = ((c >> j) & 1) ? 1 : -1;
        const double w = std::exp(logw[c] - mx);
        z += w;
        for (int q = 0; q < n; ++q) mean[(std::size_t)q] += w * (double)d[(std::size_t)q];
        for (int k = 0; k < K; ++k) {
            for (int kp = k + 1; kp < K; ++kp) {
                for (int l = 0; l < L; ++l) {
                    const int q = k * L + l;
                    for (int lag = -1; lag <= 1; ++lag) {
                        const int lp = l + lag;
                        if (lp < 0 || lp >= L) continue;
                        const int p = kp * L + lp;
                        const double v = w * (double)d[(std::size_t)q] * (double)d[(std::size_t)p];
                        corr_acc[(std::size_t)((q * K + kp) * 3 + lag + 1)] += v;
                        corr_acc[(std::size_t)((p * K + k) * 3 - lag + 1)] += v;
                    }
                }
            }
        }
    }
    for (int q = 0; q < n; ++q) soft.d_tilde[(std::size_t)q] = mean[(std::size_t)q] / z;
    for (std::size_t i = 0; i < corr_acc.size(); ++i) soft.corr[i] = corr_acc[i] / z;
    return soft;
}

}  // namespace mcsage

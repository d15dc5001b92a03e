#pragma once

// Soft symbol statistics feeding the SAGE E-step: per-symbol posterior means
// d_tilde and pairwise cross-user correlation soft values at lags -1, 0, +1.

#include <stdexcept>
#include <vector>

namespace mcsage {

struct SoftStatistics {
    int K = 0;
    int L = 0;
    std::vector<double> d_tilde;  // K*L, in [-1, 1]
    // corr[(q*K + kp)*3 + (lag+1)] = soft value of d_k(ell)*d_kp(ell+lag),
    // q = k*L + ell. Entries with kp == k or a clipped lag stay 0 and are
    // never read by consumers.
    std::vector<double> corr;

    void resize(int K_, int L_) {
        K = K_;
        L = L_;
        d_tilde.assign((std::size_t)K * L, 0.0);
        corr.assign((std::size_t)K * L * K * 3, 0.0);
    }

    double dtilde(int k, int l) const { return d_tilde[(std::size_t)(k * L + l)]; }

    double& corr_at(int k, int l, int kp, int lag) {
        if (kp == k) throw std::invalid_argument("SoftStatistics: correlation requires kp != k");
        return corr[(std::size_t)(((k * L + l) * K + kp) * 3 + lag + 1)];
    }
    double corr_at(int k, int l, int kp, int lag) const {
        if (kp == k) throw std::invalid_argument("SoftStatistics: correlation requires kp != k");
        return corr[(std::size_t)(((k * L + l) * K + kp) * 3 + lag + 1)];
    }
};

}  // namespace mcsage

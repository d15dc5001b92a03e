#pragma once

// Ground-truth scenario draw and the received-vector simulator,
// r = sum_k sum_ell S_k(tau_k, ell) a_k d_k(ell) + w.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "mcsage/config.hpp"
#include "mcsage/rng.hpp"
#include "mcsage/signature.hpp"

namespace mcsage {

struct ScenarioTruth {
    std::vector<Complex> a;                       // K channel coefficients
    std::vector<DelayIndex> tau;                  // K delays on the sample grid
    std::vector<std::vector<int>> d;              // K x L symbols, +-1
    std::vector<std::vector<std::uint8_t>> pilot_mask;  // K x L
};

using ReceivedVector = ComplexVec;

inline PilotSet pilots_from(const SystemConfig& cfg, const ScenarioTruth& truth) {
    PilotSet p;
    p.is_pilot.assign((std::size_t)cfg.K * cfg.L, 0);
    p.value.assign((std::size_t)cfg.K * cfg.L, 1);
    for (int k = 0; k < cfg.K; ++k) {
        for (int l = 0; l < cfg.L; ++l) {
            if (truth.pilot_mask[k][l]) {
                p.is_pilot[(std::size_t)(k * cfg.L + l)] = 1;
                p.value[(std::size_t)(k * cfg.L + l)] = (std::int8_t)truth.d[k][l];
            }
        }
    }
    return p;
}

// a_k ~ CN(0, sigma_k^2); delta_k uniform on the grid covering
// [0, tau_max_fraction*Tb); payload symbols i.i.d. +-1; pilots +1 at the
// first Lp slots of every user.
inline ScenarioTruth draw_scenario(const SystemConfig& cfg, std::uint64_t seed, double tau_max_fraction) {
    cfg.validate();
    if (!(tau_max_fraction > 0.0) || tau_max_fraction > 0.5)
        throw std::invalid_argument("draw_scenario: tau_max_fraction must be in (0, 0.5]");
    Rng rng(mix(seed, 0x5ce7a));
    ScenarioTruth t;
    t.a.resize(cfg.K);
    t.tau.resize(cfg.K);
    t.d.assign(cfg.K, std::vector<int>(cfg.L, 1));
    t.pilot_mask.assign(cfg.K, std::vector<std::uint8_t>(cfg.L, 0));
    const int grid = (int)std::ceil(tau_max_fraction * cfg.symbol_samples() - 1e-9);
    for (int k = 0; k < cfg.K; ++k) {
        t.a[k] = rng.complex_gaussian(cfg.sigma2[k]);
        t.tau[k].delta = (int)rng.uniform_int((std::uint64_t)grid);
        for (int l = 0; l < cfg.L; ++l) {
            if (l < cfg.Lp) {
                t.d[k][l] = 1;
                t.pilot_mask[k][l] = 1;
            } else {
                t.d[k][l] = rng.sign();
            }
        }
    }
    return t;
}

// Noise is complex circular white Gaussian with per-sample variance N0
// (covariance N0*I). Deterministic given seed.
inline ReceivedVector simulate_received(const SystemConfig& cfg, const SignatureSet& sig,
                                        const ScenarioTruth& truth, std::uint64_t seed) {
    cfg.validate();
    if (sig.users() != cfg.K || sig.symbol_samples() != cfg.symbol_samples())
        throw std::invalid_argument("simulate_received: signature set does not match cfg");
    if ((int)truth.a.size() != cfg.K || (int)truth.d.size() != cfg.K)
        throw std::invalid_argument("simulate_received: truth does not match cfg");
    const int M = cfg.frame_samples();
    const int S = cfg.symbol_samples();
    ReceivedVector r((std::size_t)M, Complex(0.0, 0.0));
    for (int k = 0; k < cfg.K; ++k) {
        if (truth.tau[k].delta < 0 || truth.tau[k].delta >= cfg.delay_grid_size())
            throw std::invalid_argument("simulate_received: delay off the grid");
        const auto& w = sig.waveforms[k];
        for (int l = 0; l < cfg.L; ++l) {
            const Complex g = truth.a[k] * (double)truth.d[k][l];
            const int off = S * l + truth.tau[k].delta;
            for (int i = 0; i < S; ++i) r[(std::size_t)(off + i)] += g * w[i];
        }
    }
    if (cfg.N0 > 0.0) {
        Rng rng(mix(seed, 0x01532));
        for (auto& x : r) x += rng.complex_gaussian(cfg.N0);
    }
    return r;
}

}  // namespace mcsage

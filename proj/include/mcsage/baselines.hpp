#pragma once

// Initialization and comparison receivers: pilot-based MMSE separate
// estimation (MMSE-SE), the SAGE receiver with known delays, and the
// single-user known-channel BER bound.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "mcsage/config.hpp"
#include "mcsage/rng.hpp"
#include "mcsage/sage.hpp"
#include "mcsage/scenario.hpp"
#include "mcsage/signature.hpp"

namespace mcsage {

struct InitEstimate {
    std::vector<Complex> a0;        // K
    std::vector<DelayIndex> tau0;   // K
    std::vector<std::int8_t> d0;    // K*L hard symbols, pilots reproduced
};

namespace detail {

// In-place Cholesky solve of A x = b for hermitian positive definite A
// (row-major n x n). A and b are clobbered; x lands in b.
inline void cholesky_solve(std::vector<Complex>& A, std::vector<Complex>& b, int n) {
    for (int j = 0; j < n; ++j) {
        double d = A[(std::size_t)(j * n + j)].real();
        for (int p = 0; p < j; ++p) d -= std::norm(A[(std::size_t)(j * n + p)]);
        if (d <= 0.0) throw std::runtime_error("cholesky_solve: matrix not positive definite");
        const double Ljj = std::sqrt(d);
        A[(std::size_t)(j * n + j)] = Complex(Ljj, 0.0);
        for (int i = j + 1; i < n; ++i) {
            Complex s = A[(std::size_t)(i * n + j)];
            for (int p = 0; p < j; ++p)
                s -= A[(std::size_t)(i * n + p)] * std::conj(A[(std::size_t)(j * n + p)]);
            A[(std::size_t)(i * n + j)] = s / Ljj;
        }
    }
    // forward: L y = b
    for (int i = 0; i < n; ++i) {
        Complex s = b[(std::size_t)i];
        for (int p = 0; p < i; ++p) s -= A[(std::size_t)(i * n + p)] * b[(std::size_t)p];
        b[(std::size_t)i] = s / A[(std::size_t)(i * n + i)].real();
    }
    // backward: L^H x = y
    for (int i = n - 1; i >= 0; --i) {
        Complex s = b[(std::size_t)i];
        for (int p = i + 1; p < n; ++p) s -= std::conj(A[(std::size_t)(p * n + i)]) * b[(std::size_t)p];
        b[(std::size_t)i] = s / A[(std::size_t)(i * n + i)].real();
    }
}

}  // namespace detail

namespace detail {

// Dense pilot train of user k at delay d on [0, used).
inline ComplexVec pilot_train(const SystemConfig& cfg, const SignatureSet& sig, const PilotSet& pilots, int k,
                              int d, int used) {
    ComplexVec u((std::size_t)used, Complex(0.0, 0.0));
    const int S = cfg.symbol_samples();
    const auto& w = sig.waveforms[(std::size_t)k];
    for (int l = 0; l < cfg.Lp; ++l) {
        const double pv = (double)pilots.value[(std::size_t)(k * cfg.L + l)];
        const int off = S * l + d;
        for (int i = 0; i < S && off + i < used; ++i) u[(std::size_t)(off + i)] += pv * w[i];
    }
    return u;
}

// Per-user ridge matched filter on the given signal slice; returns the delay
// maximizing |a_hat(delta)| and the estimate there.
inline std::pair<int, Complex> pilot_ridge_peak(const SystemConfig& cfg, const SignatureSet& sig,
                                                const PilotSet& pilots, const ComplexVec& sig_used, int k) {
    const int S = cfg.symbol_samples();
    const int grid = cfg.delay_grid_size();
    const int used = (int)sig_used.size();
    const auto& w = sig.waveforms[(std::size_t)k];
    const double ridge = cfg.N0 / cfg.sigma2[(std::size_t)k];
    int best_delta = 0;
    Complex best_a(0.0, 0.0);
    double best_mag = -1.0;
    for (int d = 0; d < grid; ++d) {
        Complex z(0.0, 0.0);
        for (int l = 0; l < cfg.Lp; ++l) {
            const double pv = (double)pilots.value[(std::size_t)(k * cfg.L + l)];
            const int off = S * l + d;
            double re = 0.0, im = 0.0;
            for (int i = 0; i < S && off + i < used; ++i) {
                re += w[i] * sig_used[(std::size_t)(off + i)].real();
                im += w[i] * sig_used[(std::size_t)(off + i)].imag();
            }
            z += pv * Complex(re, im);
        }
        const Complex a_hat = z / ((double)cfg.Lp + ridge);
        if (std::abs(a_hat) > best_mag) {
            best_mag = std::abs(a_hat);
            best_delta = d;
            best_a = a_hat;
        }
    }
    return {best_delta, best_a};
}

}  // namespace detail

// Pilot-window MMSE separate estimation. Delays and coefficients come from
// per-user ridge matched filters over the delay grid, claimed strongest
// first; after each claim the already-claimed users' coefficients are refit
// jointly (ridge MMSE on their pilot trains) and their fitted trains removed
// from the residual, so the shared all-+1 pilot trains compete instead of
// biasing each other coherently. A few alternating delay re-search passes
// polish the assignment. Full-frame matched-filter signs give d0 with pilots
// overwritten.
inline InitEstimate mmse_se_init(const SystemConfig& cfg, const SignatureSet& sig, const ComplexVec& r,
                                 const PilotSet& pilots) {
    cfg.validate();
    if (cfg.Lp < 1)
        throw std::invalid_argument("mmse_se_init: needs Lp >= 1 pilot symbols (phase is unresolvable)");
    if (!(cfg.N0 > 0.0)) throw std::invalid_argument("mmse_se_init: N0 must be > 0");
    if ((int)r.size() != cfg.frame_samples()) throw std::invalid_argument("mmse_se_init: bad frame length");
    const int S = cfg.symbol_samples();
    // The estimator runs on [0, S*Lp): within the spec's S*(Lp+1)-1 pilot
    // window, samples past S*Lp carry the first payload symbol, which the
    // pilot trains cannot model.
    const int used = S * cfg.Lp;

    InitEstimate init;
    init.a0.assign((std::size_t)cfg.K, Complex(0.0, 0.0));
    init.tau0.assign((std::size_t)cfg.K, DelayIndex{0});
    init.d0.assign((std::size_t)cfg.K * cfg.L, 1);

    const ComplexVec window(r.begin(), r.begin() + used);
    std::vector<int> claimed;
    std::vector<int> delta((std::size_t)cfg.K, 0);
    std::vector<Complex> coef((std::size_t)cfg.K, Complex(0.0, 0.0));

    // Joint ridge refit of the claimed users' coefficients at their current
    // delays; updates coef and returns the residual window.
    auto refit = [&]() -> ComplexVec {
        const int n = (int)claimed.size();
        std::vector<ComplexVec> cols((std::size_t)n);
        for (int i = 0; i < n; ++i)
            cols[(std::size_t)i] =
                detail::pilot_train(cfg, sig, pilots, claimed[(std::size_t)i], delta[(std::size_t)claimed[(std::size_t)i]], used);
        std::vector<Complex> A((std::size_t)n * n), b((std::size_t)n);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                Complex acc(0.0, 0.0);
                for (int s = 0; s < used; ++s) acc += std::conj(cols[(std::size_t)i][(std::size_t)s]) * cols[(std::size_t)j][(std::size_t)s];
                A[(std::size_t)(i * n + j)] = acc;
            }
            A[(std::size_t)(i * n + i)] += cfg.N0 / cfg.sigma2[(std::size_t)claimed[(std::size_t)i]];
            Complex acc(0.0, 0.0);
            for (int s = 0; s < used; ++s) acc += std::conj(cols[(std::size_t)i][(std::size_t)s]) * window[(std::size_t)s];
            b[(std::size_t)i] = acc;
        }
        detail::cholesky_solve(A, b, n);
        ComplexVec res = window;
        for (int i = 0; i < n; ++i) {
            coef[(std::size_t)claimed[(std::size_t)i]] = b[(std::size_t)i];
            for (int s = 0; s < used; ++s) res[(std::size_t)s] -= b[(std::size_t)i] * cols[(std::size_t)i][(std::size_t)s];
        }
        return res;
    };

    // Greedy claims on the shrinking residual.
    ComplexVec residual = window;
    std::vector<bool> assigned((std::size_t)cfg.K, false);
    for (int round = 0; round < cfg.K; ++round) {
        int best_k = -1, best_d = 0;
        double best_mag = -1.0;
        for (int k = 0; k < cfg.K; ++k) {
            if (assigned[(std::size_t)k]) continue;
            const auto [d, a_hat] = detail::pilot_ridge_peak(cfg, sig, pilots, residual, k);
            if (std::abs(a_hat) > best_mag) {
                best_mag = std::abs(a_hat);
                best_k = k;
                best_d = d;
            }
        }
        assigned[(std::size_t)best_k] = true;
        claimed.push_back(best_k);
        delta[(std::size_t)best_k] = best_d;
        residual = refit();
    }

    // Alternating delay re-search with the other users' fits removed.
    for (int pass = 0; pass < 4; ++pass) {
        bool moved = false;
        for (int k : claimed) {
            ComplexVec solo = residual;
            const ComplexVec own = detail::pilot_train(cfg, sig, pilots, k, delta[(std::size_t)k], used);
            for (int s = 0; s < used; ++s) solo[(std::size_t)s] += coef[(std::size_t)k] * own[(std::size_t)s];
            const auto [d, a_hat] = detail::pilot_ridge_peak(cfg, sig, pilots, solo, k);
            (void)a_hat;
            if (d != delta[(std::size_t)k]) {
                delta[(std::size_t)k] = d;
                moved = true;
            }
            residual = refit();
        }
        if (!moved) break;
    }

    // The ridge objective the refits minimize at fixed delays; used to accept
    // or reject combinatorial repair probes.
    auto objective = [&](const ComplexVec& res) {
        double J = 0.0;
        for (const Complex& x : res) J += std::norm(x);
        for (int k = 0; k < cfg.K; ++k)
            J += cfg.N0 / cfg.sigma2[(std::size_t)k] * std::norm(coef[(std::size_t)k]);
        return J;
    };

    // Pairwise re-claim probes: two users captured on each other's signals
    // form a local optimum of the coordinate updates above. Removing both and
    // re-claiming them (in either order) lets each code grab its own signal;
    // a probe is kept only when it strictly lowers the objective.
    if (cfg.K > 1) {
        double best_J = objective(residual);
        for (int probe_pass = 0; probe_pass < 2; ++probe_pass) {
            bool improved = false;
            for (int i = 0; i < cfg.K; ++i) {
                for (int j = 0; j < cfg.K; ++j) {
                    if (i == j) continue;
                    const std::vector<int> delta_saved = delta;
                    const std::vector<Complex> coef_saved = coef;
                    ComplexVec pair_res = residual;
                    for (int u : {i, j}) {
                        const ComplexVec train = detail::pilot_train(cfg, sig, pilots, u, delta[(std::size_t)u], used);
                        for (int s = 0; s < used; ++s) pair_res[(std::size_t)s] += coef[(std::size_t)u] * train[(std::size_t)s];
                    }
                    const auto [di, ai] = detail::pilot_ridge_peak(cfg, sig, pilots, pair_res, i);
                    delta[(std::size_t)i] = di;
                    {
                        const ComplexVec train = detail::pilot_train(cfg, sig, pilots, i, di, used);
                        for (int s = 0; s < used; ++s) pair_res[(std::size_t)s] -= ai * train[(std::size_t)s];
                    }
                    const auto [dj, aj] = detail::pilot_ridge_peak(cfg, sig, pilots, pair_res, j);
                    (void)aj;
                    delta[(std::size_t)j] = dj;
                    ComplexVec probe_res = refit();
                    const double J = objective(probe_res);
                    if (J < best_J - 1e-12) {
                        best_J = J;
                        residual = std::move(probe_res);
                        improved = true;
                    } else {
                        delta = delta_saved;
                        coef = coef_saved;
                    }
                }
            }
            if (!improved) break;
        }
        residual = refit();
    }

    for (int k = 0; k < cfg.K; ++k) {
        init.tau0[(std::size_t)k].delta = delta[(std::size_t)k];
        init.a0[(std::size_t)k] = coef[(std::size_t)k];
    }

    for (int k = 0; k < cfg.K; ++k) {
        const auto& w = sig.waveforms[(std::size_t)k];
        const Complex best_a = init.a0[(std::size_t)k];
        const int best_delta = init.tau0[(std::size_t)k].delta;

        for (int l = 0; l < cfg.L; ++l) {
            const int q = k * cfg.L + l;
            if (pilots.pilot(q)) {
                init.d0[(std::size_t)q] = pilots.value[(std::size_t)q];
                continue;
            }
            const int off = S * l + best_delta;
            double re = 0.0, im = 0.0;
            for (int i = 0; i < S; ++i) {
                re += w[i] * r[(std::size_t)(off + i)].real();
                im += w[i] * r[(std::size_t)(off + i)].imag();
            }
            const double stat = (std::conj(best_a) * Complex(re, im)).real();
            init.d0[(std::size_t)q] = (stat < 0.0) ? -1 : 1;
        }
    }
    return init;
}

inline ParameterState init_to_state(const InitEstimate& init) {
    return ParameterState{init.a0, init.tau0, 0};
}

// SAGE receiver with the delay M-step skipped and delays pinned to the given
// truth; every other code path is shared with run_receiver.
inline ReceiverResult sage_known_tau(const SystemConfig& cfg, const SignatureSet& sig, const ComplexVec& r,
                                     std::span<const DelayIndex> tau_true, std::span<const Complex> a_init,
                                     const PilotSet& pilots, std::uint64_t seed = 0) {
    ParameterState init;
    init.a_hat.assign(a_init.begin(), a_init.end());
    init.tau_hat.assign(tau_true.begin(), tau_true.end());
    ReceiverOptions opts;
    opts.update_tau = false;
    return run_receiver(cfg, sig, r, init, pilots, opts, seed);
}

// Coherent BPSK over flat Rayleigh fading: BER = (1 - sqrt(g/(1+g)))/2.
inline double rayleigh_bpsk_ber(double avg_snr) {
    return 0.5 * (1.0 - std::sqrt(avg_snr / (1.0 + avg_snr)));
}

// Average SNR that the Rayleigh law assigns to a given BER (its inverse).
inline double rayleigh_bpsk_snr(double ber) {
    const double c = 1.0 - 2.0 * ber;
    return c * c / (1.0 - c * c);
}

struct SuBerPoint {
    double avg_snr = 0.0;  // linear
    double ber = 0.0;
    int frames = 0;
    int payload_per_frame = 0;
    std::vector<int> frame_errors;  // per-frame payload error counts
};

// Single-user bound: K = 1 frames with the receiver given the true a and tau
// (coherent matched filter, sign detection), channel redrawn per frame; BER
// over payload symbols.
inline std::vector<SuBerPoint> single_user_bound(const SystemConfig& cfg_any, std::span<const double> snr_grid,
                                                 int trials, std::uint64_t seed) {
    if (trials < 1) throw std::invalid_argument("single_user_bound: trials must be >= 1");
    SystemConfig cfg = cfg_any;
    cfg.K = 1;
    cfg.sigma2.assign(1, 1.0);
    const int S = cfg.symbol_samples();

    std::vector<SuBerPoint> out;
    out.reserve(snr_grid.size());
    for (std::size_t gi = 0; gi < snr_grid.size(); ++gi) {
        const double gamma = snr_grid[gi];
        if (!(gamma > 0.0)) throw std::invalid_argument("single_user_bound: SNR must be > 0");
        cfg.N0 = cfg.sigma2[0] / gamma;
        cfg.validate();
        const SignatureSet sig = generate_signatures(cfg, mix(seed, gi));

        SuBerPoint pt;
        pt.avg_snr = gamma;
        pt.frames = trials;
        pt.payload_per_frame = cfg.payload_symbols();
        pt.frame_errors.resize((std::size_t)trials);
        long total_err = 0;
        for (int t = 0; t < trials; ++t) {
            const std::uint64_t st = mix(mix(seed, gi), (std::uint64_t)t);
            const ScenarioTruth truth = draw_scenario(cfg, mix(st, 0), 0.5);
            const ComplexVec r = simulate_received(cfg, sig, truth, mix(st, 1));
            const auto& w = sig.waveforms[0];
            int errs = 0;
            for (int l = cfg.Lp; l < cfg.L; ++l) {
                const int off = S * l + truth.tau[0].delta;
                double re = 0.0, im = 0.0;
                for (int i = 0; i < S; ++i) {
                    re += w[i] * r[(std::size_t)(off + i)].real();
                    im += w[i] * r[(std::size_t)(off + i)].imag();
                }
                const double stat = (std::conj(truth.a[0]) * Complex(re, im)).real();
                const int dec = (stat < 0.0) ? -1 : 1;
                if (dec != truth.d[0][l]) ++errs;
            }
            pt.frame_errors[(std::size_t)t] = errs;
            total_err += errs;
        }
        pt.ber = (double)total_err / ((double)trials * pt.payload_per_frame);
        out.push_back(std::move(pt));
    }
    return out;
}

}  // namespace mcsage

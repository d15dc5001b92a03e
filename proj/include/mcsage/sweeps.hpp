#pragma once

// The two experiment families: estimator MSE versus maximum delay spread and
// BER versus effective SNR. Trials within an axis point run in parallel on
// independent derived seeds; accumulation happens afterwards in trial order,
// so output is byte-identical for any thread count.

#include <cmath>
#include <cstdint>
#include <exception>
#include <stdexcept>
#include <thread>
#include <vector>

#include "mcsage/baselines.hpp"
#include "mcsage/bounds.hpp"
#include "mcsage/experiment.hpp"
#include "mcsage/sage.hpp"
#include "mcsage/scenario.hpp"
#include "mcsage/signature.hpp"

namespace mcsage {

namespace detail {

template <typename Fn>
inline void parallel_for(int n, int threads, Fn&& fn) {
    threads = std::max(1, std::min(threads, n));
    if (threads == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors((std::size_t)threads);
    std::vector<std::thread> pool;
    pool.reserve((std::size_t)threads);
    for (int w = 0; w < threads; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (int i = w; i < n; i += threads) fn(i);
            } catch (...) {
                errors[(std::size_t)w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

inline ParameterState make_init(const ExperimentSpec& spec, const SystemConfig& cfg, const SignatureSet& sig,
                                const ComplexVec& r, const PilotSet& pilots, const ScenarioTruth& truth) {
    if (spec.init == InitKind::truth) return ParameterState{truth.a, truth.tau, 0};
    return init_to_state(mmse_se_init(cfg, sig, r, pilots));
}

// Relative parameter change of (Re a, Im a, tau/Tb) between two states; used
// for the round-5 to round-6 settling diagnostic.
inline bool settled_between(const ParameterState& before, const ParameterState& after, int symbol_samples,
                            double tol) {
    const double inv = 1.0 / (double)symbol_samples;
    for (std::size_t k = 0; k < before.a_hat.size(); ++k) {
        const double num = std::hypot(std::abs(after.a_hat[k] - before.a_hat[k]),
                                      inv * std::abs((double)(after.tau_hat[k].delta - before.tau_hat[k].delta)));
        const double den = std::hypot(std::abs(before.a_hat[k]), inv * (double)before.tau_hat[k].delta) + 1e-15;
        if (num / den >= tol) return false;
    }
    return true;
}

}  // namespace detail

inline SweepResult run_mse_sweep(const ExperimentSpec& spec, int threads = 1) {
    spec.validate();
    if (spec.axis != SweepAxis::tau_max_fraction)
        throw std::invalid_argument("run_mse_sweep: axis must be tau_max_fraction");
    for (double v : spec.axis_values)
        if (!(v > 0.0) || v > 0.5)
            throw std::invalid_argument("run_mse_sweep: axis values must be in (0, 0.5]");
    for (ReceiverKind r : spec.receivers)
        if (r == ReceiverKind::single_user)
            throw std::invalid_argument("run_mse_sweep: single_user has no parameter estimates");

    const SystemConfig& cfg = spec.base;
    const SignatureSet sig = generate_signatures(cfg, cfg.seed);
    const McrbReport mcrb = make_mcrb_report(cfg, sig);
    const std::uint64_t master = cfg.seed;

    struct TrialErr {
        std::vector<double> sq_a;    // per receiver*K
        std::vector<double> sq_tau;  // per receiver*K, (tau/Tb)^2
        int stable = -1;             // mcmc_sage settling flag, -1 = not counted
    };

    const int R = (int)spec.receivers.size();
    const double inv_grid = 1.0 / (double)cfg.symbol_samples();

    SweepResult result;
    std::vector<std::vector<double>> mse_a((std::size_t)spec.axis_values.size()),
        mse_tau((std::size_t)spec.axis_values.size());

    for (std::size_t ai = 0; ai < spec.axis_values.size(); ++ai) {
        const double axis_value = spec.axis_values[ai];
        std::vector<TrialErr> trials((std::size_t)spec.trials);

        detail::parallel_for(spec.trials, threads, [&](int t) {
            const std::uint64_t st = mix(mix(master, ai), (std::uint64_t)t);
            const ScenarioTruth truth = draw_scenario(cfg, mix(st, 0), axis_value);
            const ComplexVec r = simulate_received(cfg, sig, truth, mix(st, 1));
            const PilotSet pilots = pilots_from(cfg, truth);
            const ParameterState init = detail::make_init(spec, cfg, sig, r, pilots, truth);

            TrialErr te;
            te.sq_a.assign((std::size_t)R * cfg.K, 0.0);
            te.sq_tau.assign((std::size_t)R * cfg.K, 0.0);
            for (int ri = 0; ri < R; ++ri) {
                std::vector<Complex> a_hat;
                std::vector<DelayIndex> tau_hat;
                switch (spec.receivers[(std::size_t)ri]) {
                    case ReceiverKind::mcmc_sage: {
                        const ReceiverResult res =
                            run_receiver(cfg, sig, r, init, pilots, ReceiverOptions{}, mix(st, 2));
                        a_hat = res.state.a_hat;
                        tau_hat = res.state.tau_hat;
                        if ((int)res.param_history.size() >= 6 * cfg.K)
                            te.stable = detail::settled_between(round_state(res, cfg.K, 5),
                                                                round_state(res, cfg.K, 6),
                                                                cfg.symbol_samples(), 0.01)
                                            ? 1
                                            : 0;
                        break;
                    }
                    case ReceiverKind::sage_known_tau: {
                        const ReceiverResult res =
                            sage_known_tau(cfg, sig, r, truth.tau, init.a_hat, pilots, mix(st, 3));
                        a_hat = res.state.a_hat;
                        tau_hat = res.state.tau_hat;
                        break;
                    }
                    case ReceiverKind::mmse_se: {
                        const InitEstimate ie = mmse_se_init(cfg, sig, r, pilots);
                        a_hat = ie.a0;
                        tau_hat = ie.tau0;
                        break;
                    }
                    case ReceiverKind::single_user:
                        break;
                }
                if (a_hat.empty()) continue;
                for (int k = 0; k < cfg.K; ++k) {
                    const double ea = std::norm(a_hat[(std::size_t)k] - truth.a[(std::size_t)k]);
                    const double dt =
                        inv_grid * (double)(tau_hat[(std::size_t)k].delta - truth.tau[(std::size_t)k].delta);
                    te.sq_a[(std::size_t)(ri * cfg.K + k)] = ea;
                    te.sq_tau[(std::size_t)(ri * cfg.K + k)] = dt * dt;
                }
            }
            trials[(std::size_t)t] = std::move(te);
        });

        mse_a[ai].assign((std::size_t)R * cfg.K, 0.0);
        mse_tau[ai].assign((std::size_t)R * cfg.K, 0.0);
        ConvergenceDiag diag;
        diag.axis = axis_value;
        for (const TrialErr& te : trials) {
            for (std::size_t i = 0; i < te.sq_a.size(); ++i) {
                mse_a[ai][i] += te.sq_a[i];
                mse_tau[ai][i] += te.sq_tau[i];
            }
            if (te.stable >= 0) {
                ++diag.counted;
                diag.stable += te.stable;
            }
        }
        for (auto& v : mse_a[ai]) v /= spec.trials;
        for (auto& v : mse_tau[ai]) v /= spec.trials;
        result.convergence.push_back(diag);
    }

    for (int ri = 0; ri < R; ++ri) {
        const std::string name = to_string(spec.receivers[(std::size_t)ri]);
        for (std::size_t ai = 0; ai < spec.axis_values.size(); ++ai) {
            for (int k = 0; k < cfg.K; ++k) {
                result.rows.push_back({name, spec.axis_values[ai], k + 1, "mse_a",
                                       mse_a[ai][(std::size_t)(ri * cfg.K + k)], mcrb.var_a_bound[(std::size_t)k],
                                       spec.trials, master});
                result.rows.push_back({name, spec.axis_values[ai], k + 1, "mse_tau",
                                       mse_tau[ai][(std::size_t)(ri * cfg.K + k)],
                                       mcrb.var_tau_bound[(std::size_t)k], spec.trials, master});
            }
        }
    }
    return result;
}

inline SweepResult run_ber_sweep(const ExperimentSpec& spec, int threads = 1) {
    spec.validate();
    if (spec.axis != SweepAxis::effective_snr_db)
        throw std::invalid_argument("run_ber_sweep: axis must be effective_snr_db");

    const int R = (int)spec.receivers.size();
    const std::uint64_t master = spec.base.seed;
    const double pilot_factor = (double)spec.base.payload_symbols() / (double)spec.base.L;
    const double sigma_nominal = spec.base.sigma2[(std::size_t)spec.nominal_user];

    SweepResult result;
    std::vector<std::vector<double>> ber((std::size_t)spec.axis_values.size());

    for (std::size_t ai = 0; ai < spec.axis_values.size(); ++ai) {
        const double eff_snr = std::pow(10.0, spec.axis_values[ai] / 10.0);
        SystemConfig cfg = spec.base;
        // N0 moves, the near-far profile stays; axis value is the nominal
        // user's effective SNR (L-Lp)/L * sigma_nom^2 / N0.
        cfg.N0 = sigma_nominal * pilot_factor / eff_snr;
        const SignatureSet sig = generate_signatures(cfg, cfg.seed);

        struct TrialErr {
            std::vector<int> errors;  // per receiver*K payload errors
        };
        std::vector<TrialErr> trials((std::size_t)spec.trials);

        detail::parallel_for(spec.trials, threads, [&](int t) {
            const std::uint64_t st = mix(mix(master, ai), (std::uint64_t)t);
            const ScenarioTruth truth = draw_scenario(cfg, mix(st, 0), spec.tau_max_fraction);
            const ComplexVec r = simulate_received(cfg, sig, truth, mix(st, 1));
            const PilotSet pilots = pilots_from(cfg, truth);
            const ParameterState init = detail::make_init(spec, cfg, sig, r, pilots, truth);

            TrialErr te;
            te.errors.assign((std::size_t)R * cfg.K, 0);
            auto count_errors = [&](int ri, const std::vector<std::int8_t>& hard) {
                for (int k = 0; k < cfg.K; ++k) {
                    int errs = 0;
                    for (int l = cfg.Lp; l < cfg.L; ++l)
                        if ((int)hard[(std::size_t)(k * cfg.L + l)] != truth.d[(std::size_t)k][(std::size_t)l])
                            ++errs;
                    te.errors[(std::size_t)(ri * cfg.K + k)] = errs;
                }
            };
            for (int ri = 0; ri < R; ++ri) {
                switch (spec.receivers[(std::size_t)ri]) {
                    case ReceiverKind::mcmc_sage:
                        count_errors(ri, run_receiver(cfg, sig, r, init, pilots, ReceiverOptions{}, mix(st, 2)).hard);
                        break;
                    case ReceiverKind::sage_known_tau:
                        count_errors(ri, sage_known_tau(cfg, sig, r, truth.tau, init.a_hat, pilots, mix(st, 3)).hard);
                        break;
                    case ReceiverKind::mmse_se: {
                        const InitEstimate ie = mmse_se_init(cfg, sig, r, pilots);
                        count_errors(ri, ie.d0);
                        break;
                    }
                    case ReceiverKind::single_user:
                        break;  // simulated separately below
                }
            }
            trials[(std::size_t)t] = std::move(te);
        });

        ber[ai].assign((std::size_t)R * cfg.K, 0.0);
        const double denom = (double)spec.trials * cfg.payload_symbols();
        for (const TrialErr& te : trials)
            for (std::size_t i = 0; i < te.errors.size(); ++i) ber[ai][i] += te.errors[i];
        for (auto& v : ber[ai]) v /= denom;

        for (int ri = 0; ri < R; ++ri) {
            if (spec.receivers[(std::size_t)ri] != ReceiverKind::single_user) continue;
            for (int k = 0; k < cfg.K; ++k) {
                const double gamma = cfg.sigma2[(std::size_t)k] / cfg.N0;
                const double grid[1] = {gamma};
                const auto su = single_user_bound(cfg, grid, spec.trials, mix(mix(master, ai), 0x50u + (std::uint64_t)k));
                ber[ai][(std::size_t)(ri * cfg.K + k)] = su[0].ber;
            }
        }
    }

    for (int ri = 0; ri < R; ++ri) {
        const std::string name = to_string(spec.receivers[(std::size_t)ri]);
        for (std::size_t ai = 0; ai < spec.axis_values.size(); ++ai) {
            for (int k = 0; k < spec.base.K; ++k) {
                result.rows.push_back({name, spec.axis_values[ai], k + 1, "ber",
                                       ber[ai][(std::size_t)(ri * spec.base.K + k)], std::nullopt, spec.trials,
                                       master});
            }
        }
    }
    return result;
}

}  // namespace mcsage

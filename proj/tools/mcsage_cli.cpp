// Command-line front end: the experiment sweeps, the bound report, and a
// single-frame demo of the receiver chain.

#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mcsage/baselines.hpp"
#include "mcsage/bounds.hpp"
#include "mcsage/experiment.hpp"
#include "mcsage/sweeps.hpp"

namespace {

using namespace mcsage;

struct CommonArgs {
    std::string spec_path;
    std::string out_path;
    std::uint64_t seed = 0;
    int trials = 0;
    int threads = 0;
    bool seed_set = false;
    bool trials_set = false;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool needs_spec) {
    auto* spec = cmd->add_option("--spec", args.spec_path, "experiment spec file");
    if (needs_spec) spec->required();
    cmd->add_option("--out", args.out_path, "output CSV path (JSON mirror written alongside)");
    cmd->add_option("--seed", args.seed, "override the spec's master seed")->each([&](const std::string&) {
        args.seed_set = true;
    });
    cmd->add_option("--trials", args.trials, "override the spec's trials per axis point")
        ->each([&](const std::string&) { args.trials_set = true; });
    cmd->add_option("--threads", args.threads, "worker threads for trials (default: hardware)");
}

ExperimentSpec load_with_overrides(const CommonArgs& args) {
    ExperimentSpec spec = load_spec(args.spec_path);
    if (args.seed_set) spec.base.seed = args.seed;
    if (args.trials_set) spec.trials = args.trials;
    if (!args.out_path.empty()) spec.output_path = args.out_path;
    return spec;
}

int resolve_threads(int requested) {
    if (requested > 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : (int)hw;
}

int run_sweep_cmd(const CommonArgs& args, bool mse) {
    const ExperimentSpec spec = load_with_overrides(args);
    const int threads = resolve_threads(args.threads);
    const SweepResult result = mse ? run_mse_sweep(spec, threads) : run_ber_sweep(spec, threads);
    write_results(result, spec.output_path);
    std::cout << "wrote " << result.rows.size() << " rows to " << spec.output_path << " and "
              << json_mirror_path(spec.output_path) << "\n";
    for (const auto& diag : result.convergence) {
        if (diag.counted == 0) continue;
        std::cout << "axis " << format_double(diag.axis) << ": " << diag.stable << "/" << diag.counted
                  << " trials settled between rounds 5 and 6\n";
    }
    return 0;
}

int run_bounds_cmd(const CommonArgs& args) {
    ExperimentSpec spec = load_with_overrides(args);
    const SystemConfig& cfg = spec.base;
    const SignatureSet sig = generate_signatures(cfg, cfg.seed);
    const McrbReport rep = make_mcrb_report(cfg, sig);

    std::string csv = "user,gabor_bandwidth_tc,mcrb_a,mcrb_tau,tau_bound_divergent\n";
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (int k = 0; k < cfg.K; ++k) {
        csv += std::to_string(k + 1) + "," + format_double(rep.gabor_bandwidth_tc[(std::size_t)k]) + "," +
               format_double(rep.var_a_bound[(std::size_t)k]) + "," +
               format_double(rep.var_tau_bound[(std::size_t)k]) + "," +
               (rep.tau_divergent[(std::size_t)k] ? "1" : "0") + "\n";
        nlohmann::ordered_json j;
        j["user"] = k + 1;
        j["gabor_bandwidth_tc"] = rep.gabor_bandwidth_tc[(std::size_t)k];
        j["mcrb_a"] = rep.var_a_bound[(std::size_t)k];
        j["mcrb_tau"] = rep.var_tau_bound[(std::size_t)k];
        j["tau_bound_divergent"] = rep.tau_divergent[(std::size_t)k] != 0;
        rows.push_back(std::move(j));
    }
    std::cout << csv;
    if (!args.out_path.empty()) {
        std::ofstream out(args.out_path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot open '" + args.out_path + "'");
        out << csv;
        std::ofstream jout(json_mirror_path(args.out_path), std::ios::binary);
        jout << rows.dump(2) << "\n";
        std::cout << "wrote " << args.out_path << " and " << json_mirror_path(args.out_path) << "\n";
    }
    return 0;
}

int run_demo_cmd(std::uint64_t seed) {
    SystemConfig cfg;
    cfg.K = 5;
    cfg.Nc = 8;
    cfg.Q = 12;
    cfg.L = 80;
    cfg.Lp = 4;
    cfg.N0 = 0.095;  // effective SNR of the 0 dB user: 10 dB
    cfg.sigma2 = {std::pow(10.0, -0.4), std::pow(10.0, -0.2), 1.0, std::pow(10.0, 0.2), std::pow(10.0, 0.4)};
    cfg.Nt = 50;
    cfg.burn_in = 10;
    cfg.sage_iters = 25;
    cfg.seed = seed;

    std::cout << "asynchronous DS-CDMA uplink, K=5 users, Nc=8 chips, Q=12 samples/chip, L=80 symbols\n";
    std::cout << "near-far powers -4..+4 dB, pilot symbols per user: " << cfg.Lp << ", seed " << seed << "\n\n";

    const SignatureSet sig = generate_signatures(cfg, cfg.seed);
    const ScenarioTruth truth = draw_scenario(cfg, mix(cfg.seed, 1), 0.5);
    const ComplexVec r = simulate_received(cfg, sig, truth, mix(cfg.seed, 2));
    const PilotSet pilots = pilots_from(cfg, truth);

    const InitEstimate init = mmse_se_init(cfg, sig, r, pilots);
    const ReceiverResult res = run_receiver(cfg, sig, r, init_to_state(init), pilots, ReceiverOptions{}, mix(cfg.seed, 3));

    const McrbReport rep = make_mcrb_report(cfg, sig);
    std::printf("%-5s %-22s %-22s %-9s %-6s %-6s %-8s\n", "user", "a (true)", "a (estimate)", "|err|^2", "tau",
                "tau^", "ber");
    for (int k = 0; k < cfg.K; ++k) {
        int errs = 0;
        for (int l = cfg.Lp; l < cfg.L; ++l)
            if ((int)res.hard[(std::size_t)(k * cfg.L + l)] != truth.d[(std::size_t)k][(std::size_t)l]) ++errs;
        const double ber = (double)errs / (double)(cfg.L - cfg.Lp);
        char true_a[32], est_a[32];
        std::snprintf(true_a, sizeof true_a, "%+.3f%+.3fi", truth.a[(std::size_t)k].real(),
                      truth.a[(std::size_t)k].imag());
        std::snprintf(est_a, sizeof est_a, "%+.3f%+.3fi", res.state.a_hat[(std::size_t)k].real(),
                      res.state.a_hat[(std::size_t)k].imag());
        std::printf("%-5d %-22s %-22s %-9.2e %-6d %-6d %-8.4f\n", k + 1, true_a, est_a,
                    std::norm(res.state.a_hat[(std::size_t)k] - truth.a[(std::size_t)k]),
                    truth.tau[(std::size_t)k].delta, res.state.tau_hat[(std::size_t)k].delta, ber);
    }
    std::printf("\nchannel MCRB (all users): %s   iterations: %d   gibbs sweeps/iteration: %d\n",
                format_double(rep.var_a_bound[0]).c_str(), (int)res.trace.size(), cfg.Nt);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Monte-Carlo SAGE receiver for asynchronous DS-CDMA: simulator, bounds, experiment sweeps"};
    app.require_subcommand(1);

    CommonArgs mse_args, ber_args, bounds_args;
    std::uint64_t demo_seed = 1;

    CLI::App* mse = app.add_subcommand("mse-sweep", "estimator MSE versus maximum delay spread");
    add_common(mse, mse_args, true);
    CLI::App* ber = app.add_subcommand("ber-sweep", "BER versus effective SNR");
    add_common(ber, ber_args, true);
    CLI::App* bnd = app.add_subcommand("bounds", "modified Cramer-Rao bound report for a scenario");
    add_common(bnd, bounds_args, true);
    CLI::App* demo = app.add_subcommand("demo", "run one frame through the receiver and print estimates");
    demo->add_option("--seed", demo_seed, "scenario seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (mse->parsed()) return run_sweep_cmd(mse_args, true);
        if (ber->parsed()) return run_sweep_cmd(ber_args, false);
        if (bnd->parsed()) return run_bounds_cmd(bounds_args);
        if (demo->parsed()) return run_demo_cmd(demo_seed);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}

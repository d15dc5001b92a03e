#include <catch2/catch.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "mcsage/experiment.hpp"
#include "mcsage/sweeps.hpp"

using namespace mcsage;

namespace {

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& name, const std::string& content = "") : path("harness_tmp_" + name) {
        if (!content.empty()) {
            std::ofstream out(path);
            out << content;
        }
    }
    ~TempFile() { std::remove(path.c_str()); }
};

const char* kGoodSpec =
    "# full-scale near-far scenario\n"
    "K = 5\n"
    "Nc = 8\n"
    "Q = 12\n"
    "L = 80\n"
    "Lp = 4\n"
    "N0 = 0.1\n"
    "sigma2_db = -4,-2,0,2,4\n"
    "Nt = 50\n"
    "burn_in = 10\n"
    "sage_iters = 25\n"
    "seed = 1\n"
    "axis = tau_max_fraction\n"
    "axis_values = 0.1,0.3,0.5\n"
    "trials = 4\n"
    "receivers = mcmc_sage,mmse_se\n"
    "out = results.csv\n";

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("spec files load and round-trip through the writer") {
    TempFile spec("good.spec", kGoodSpec);
    const ExperimentSpec a = load_spec(spec.path);
    CHECK(a.base.K == 5);
    CHECK(a.base.L == 80);
    CHECK(a.base.Nt == 50);
    CHECK(a.base.sigma2[2] == Approx(1.0));
    CHECK(a.base.sigma2[0] == Approx(std::pow(10.0, -0.4)));
    CHECK(a.axis == SweepAxis::tau_max_fraction);
    CHECK(a.axis_values == std::vector<double>{0.1, 0.3, 0.5});
    CHECK(a.nominal_user == 2);  // defaults to the middle user
    CHECK(a.receivers.size() == 2);

    TempFile round("round.spec");
    write_spec(a, round.path);
    const ExperimentSpec b = load_spec(round.path);
    CHECK(b.base.K == a.base.K);
    CHECK(b.base.Nc == a.base.Nc);
    CHECK(b.base.Q == a.base.Q);
    CHECK(b.base.L == a.base.L);
    CHECK(b.base.Lp == a.base.Lp);
    CHECK(b.base.N0 == a.base.N0);
    CHECK(b.base.sigma2 == a.base.sigma2);
    CHECK(b.base.Nt == a.base.Nt);
    CHECK(b.base.burn_in == a.base.burn_in);
    CHECK(b.base.sage_iters == a.base.sage_iters);
    CHECK(b.base.seed == a.base.seed);
    CHECK(b.axis == a.axis);
    CHECK(b.axis_values == a.axis_values);
    CHECK(b.trials == a.trials);
    CHECK(b.receivers == a.receivers);
    CHECK(b.output_path == a.output_path);
    CHECK(b.nominal_user == a.nominal_user);
    CHECK(b.init == a.init);
    CHECK(b.tau_max_fraction == a.tau_max_fraction);
}

TEST_CASE("spec parser reports precise errors") {
    SECTION("unknown key is named with its line") {
        TempFile spec("unknown.spec", "K = 2\nfoo = 3\n");
        try {
            load_spec(spec.path);
            FAIL("expected a parse error");
        } catch (const std::exception& e) {
            const std::string msg = e.what();
            CHECK(msg.find("foo") != std::string::npos);
            CHECK(msg.find(":2:") != std::string::npos);
        }
    }
    SECTION("missing required key") {
        TempFile spec("missing.spec", "K = 2\nNc = 8\nQ = 2\nL = 8\nLp = 2\nsigma2 = 1,1\ntrials = 1\n");
        CHECK_THROWS_WITH(load_spec(spec.path), Catch::Contains("axis"));
    }
    SECTION("type errors") {
        TempFile spec("type.spec", "K = two\n");
        CHECK_THROWS_WITH(load_spec(spec.path), Catch::Contains("integer"));
    }
    SECTION("duplicate keys") {
        TempFile spec("dup.spec", "K = 2\nK = 3\n");
        CHECK_THROWS_WITH(load_spec(spec.path), Catch::Contains("duplicate"));
    }
    SECTION("both sigma2 forms at once") {
        TempFile spec("sig.spec",
                      "K = 1\nNc = 4\nQ = 2\nL = 4\nLp = 1\nsigma2 = 1\nsigma2_db = 0\naxis = "
                      "tau_max_fraction\naxis_values = 0.5\ntrials = 1\nreceivers = mcmc_sage\n");
        CHECK_THROWS_WITH(load_spec(spec.path), Catch::Contains("sigma2"));
    }
}

TEST_CASE("mse sweep: row schema, bound column, exact recovery") {
    ExperimentSpec spec;
    spec.base.K = 1;
    spec.base.Nc = 8;
    spec.base.Q = 4;
    spec.base.L = 80;
    spec.base.Lp = 2;
    spec.base.N0 = 1e-12;
    spec.base.sigma2 = {1.0};
    spec.base.Nt = 10;
    spec.base.burn_in = 3;
    spec.base.sage_iters = 4;
    spec.base.seed = 5;
    spec.axis = SweepAxis::tau_max_fraction;
    spec.axis_values = {0.25, 0.5};
    spec.trials = 1;
    spec.receivers = {ReceiverKind::mcmc_sage};
    spec.init = InitKind::truth;  // diagnostics mode: exact recovery expected

    const SweepResult result = run_mse_sweep(spec);
    CHECK(result.rows.size() == 1 * 2 * 1 * 2);  // receivers * axis * K * metrics
    for (const auto& row : result.rows) {
        if (row.metric == "mse_a") {
            CHECK(row.value < 1e-12);
            CHECK(row.bound.has_value());
            CHECK(*row.bound == Approx(spec.base.N0 / spec.base.L).epsilon(1e-14));
        } else {
            CHECK(row.metric == "mse_tau");
            CHECK(row.value == 0.0);
            CHECK(row.bound.has_value());
        }
        CHECK(row.trials == 1);
        CHECK(row.user == 1);
    }
}

TEST_CASE("mse sweep bound column literally reads 0.0125 for N0=1, L=80") {
    ExperimentSpec spec;
    spec.base.K = 1;
    spec.base.Nc = 4;
    spec.base.Q = 2;
    spec.base.L = 80;
    spec.base.Lp = 2;
    spec.base.N0 = 1.0;
    spec.base.sigma2 = {1.0};
    spec.base.Nt = 5;
    spec.base.burn_in = 2;
    spec.base.sage_iters = 2;
    spec.axis = SweepAxis::tau_max_fraction;
    spec.axis_values = {0.5};
    spec.trials = 1;
    spec.receivers = {ReceiverKind::mmse_se};
    const std::string csv = render_csv(run_mse_sweep(spec));
    CHECK(csv.find(",mse_a,") != std::string::npos);
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    CHECK(line == "receiver,axis,user,metric,value,bound,trials,seed");
    bool found = false;
    while (std::getline(in, line)) {
        if (line.find(",mse_a,") == std::string::npos) continue;
        // receiver,axis,user,metric,value,bound,trials,seed
        std::size_t pos = 0;
        std::vector<std::string> fields;
        std::string f;
        std::istringstream ls(line);
        while (std::getline(ls, f, ',')) fields.push_back(f);
        (void)pos;
        REQUIRE(fields.size() == 8);
        CHECK(fields[5] == "0.0125");
        found = true;
    }
    CHECK(found);
}

TEST_CASE("sweeps are reproducible and thread-count independent") {
    ExperimentSpec spec;
    spec.base.K = 2;
    spec.base.Nc = 8;
    spec.base.Q = 2;
    spec.base.L = 16;
    spec.base.Lp = 2;
    spec.base.N0 = 0.2;
    spec.base.sigma2 = {1.0, 1.0};
    spec.base.Nt = 10;
    spec.base.burn_in = 3;
    spec.base.sage_iters = 4;
    spec.base.seed = 9;
    spec.axis = SweepAxis::tau_max_fraction;
    spec.axis_values = {0.2, 0.5};
    spec.trials = 6;
    spec.receivers = {ReceiverKind::mcmc_sage, ReceiverKind::mmse_se};

    const std::string csv1 = render_csv(run_mse_sweep(spec, 1));
    const std::string csv2 = render_csv(run_mse_sweep(spec, 2));
    const std::string csv3 = render_csv(run_mse_sweep(spec, 1));
    CHECK(csv1 == csv2);
    CHECK(csv1 == csv3);

    TempFile out("repro.csv");
    write_results(run_mse_sweep(spec, 2), out.path);
    const std::string file1 = slurp(out.path);
    write_results(run_mse_sweep(spec, 1), out.path);
    CHECK(slurp(out.path) == file1);
    std::remove(json_mirror_path(out.path).c_str());
}

TEST_CASE("ber sweep: noise level tracks the effective SNR axis") {
    ExperimentSpec spec;
    spec.base.K = 2;
    spec.base.Nc = 8;
    spec.base.Q = 2;
    spec.base.L = 16;
    spec.base.Lp = 4;
    spec.base.N0 = 1.0;  // overridden per axis point
    spec.base.sigma2 = {0.5, 2.0};
    spec.base.Nt = 10;
    spec.base.burn_in = 3;
    spec.base.sage_iters = 4;
    spec.base.seed = 21;
    spec.axis = SweepAxis::effective_snr_db;
    spec.axis_values = {6.0, 12.0};
    spec.trials = 3;
    spec.receivers = {ReceiverKind::mcmc_sage, ReceiverKind::mmse_se, ReceiverKind::single_user};
    spec.nominal_user = 1;

    const SweepResult result = run_ber_sweep(spec);
    CHECK(result.rows.size() == 3 * 2 * 2 * 1);
    for (const auto& row : result.rows) {
        CHECK(row.metric == "ber");
        CHECK_FALSE(row.bound.has_value());
        CHECK(row.value >= 0.0);
        CHECK(row.value <= 1.0);
    }
    // payload-only denominator: BER quantum is 1/(trials*(L-Lp))
    const double quantum = 1.0 / (3.0 * 12.0);
    for (const auto& row : result.rows) {
        const double steps = row.value / quantum;
        CHECK(std::abs(steps - std::round(steps)) < 1e-9);
    }
}

TEST_CASE("json mirror carries the same rows") {
    ExperimentSpec spec;
    spec.base.K = 1;
    spec.base.Nc = 4;
    spec.base.Q = 2;
    spec.base.L = 8;
    spec.base.Lp = 2;
    spec.base.N0 = 0.5;
    spec.base.sigma2 = {1.0};
    spec.base.Nt = 5;
    spec.base.burn_in = 2;
    spec.base.sage_iters = 2;
    spec.axis = SweepAxis::tau_max_fraction;
    spec.axis_values = {0.5};
    spec.trials = 2;
    spec.receivers = {ReceiverKind::mmse_se};

    const SweepResult result = run_mse_sweep(spec);
    TempFile out("mirror.csv");
    write_results(result, out.path);
    const std::string jpath = json_mirror_path(out.path);
    const auto j = nlohmann::json::parse(slurp(jpath));
    REQUIRE(j.is_array());
    CHECK(j.size() == result.rows.size());
    CHECK(j[0]["receiver"] == "mmse_se");
    CHECK(j[0]["metric"] == "mse_a");
    CHECK(j[0]["bound"].is_number());
    std::remove(jpath.c_str());
}

TEST_CASE("sweep validation rejects mismatched axes and receivers") {
    ExperimentSpec spec;
    spec.base.K = 1;
    spec.base.Nc = 4;
    spec.base.Q = 2;
    spec.base.L = 8;
    spec.base.Lp = 2;
    spec.base.N0 = 0.5;
    spec.base.sigma2 = {1.0};
    spec.axis = SweepAxis::effective_snr_db;
    spec.axis_values = {6.0};
    spec.trials = 1;
    spec.receivers = {ReceiverKind::mcmc_sage};
    CHECK_THROWS_AS(run_mse_sweep(spec), std::invalid_argument);
    spec.axis = SweepAxis::tau_max_fraction;
    spec.axis_values = {0.5};
    spec.receivers = {ReceiverKind::single_user};
    CHECK_THROWS_AS(run_mse_sweep(spec), std::invalid_argument);
    spec.receivers = {ReceiverKind::mcmc_sage};
    CHECK_THROWS_AS(run_ber_sweep(spec), std::invalid_argument);
}

#include <catch2/catch.hpp>

#include <cmath>
#include <complex>
#include <vector>

#include "mcsage/baselines.hpp"
#include "mcsage/exact_estep.hpp"
#include "mcsage/sage.hpp"
#include "testutil.hpp"

using namespace mcsage;

namespace {

Complex dot(const ComplexVec& a, const ComplexVec& b) {
    Complex acc(0.0, 0.0);
    for (std::size_t i = 0; i < a.size(); ++i) acc += std::conj(a[i]) * b[i];
    return acc;
}

}  // namespace

TEST_CASE("single-user branch metric: no interference term") {
    auto inst = testutil::random_instance(21, 1, 4, 8, 2, 0.0);
    inst.cfg.N0 = 0.25;
    const ParameterState state{inst.truth.a, inst.truth.tau, 0};
    SoftStatistics soft;
    soft.resize(1, 4);
    Rng rng(5);
    for (auto& v : soft.d_tilde) v = 2.0 * rng.uniform() - 1.0;

    for (int l = 0; l < 4; ++l) {
        for (int delta : {0, 3, 7}) {
            const ComplexVec col = spreading_vector(inst.cfg, inst.sig, 0, DelayIndex{delta}, l);
            const Complex expect = soft.d_tilde[(std::size_t)l] * dot(col, inst.r);
            const Complex psi = branch_psi(inst.cfg, inst.sig, inst.r, state, soft, 0, l, delta);
            CHECK(std::abs(psi - expect) < 1e-12);
        }
    }
}

TEST_CASE("matched single-user branch metric recovers the coefficient") {
    // Noise-free, exact soft symbols, true delay: Psi(ell, tau) = a for all ell.
    auto inst = testutil::random_instance(22, 1, 6, 8, 2, 0.0);
    inst.cfg.N0 = 1e-12;
    const ParameterState state{inst.truth.a, inst.truth.tau, 0};
    SoftStatistics soft;
    soft.resize(1, 6);
    for (int l = 0; l < 6; ++l) soft.d_tilde[(std::size_t)l] = (double)inst.truth.d[0][(std::size_t)l];
    for (int l = 0; l < 6; ++l) {
        const Complex psi = branch_psi(inst.cfg, inst.sig, inst.r, state, soft, 0, l, inst.truth.tau[0].delta);
        CHECK(std::abs(psi - inst.truth.a[0]) < 1e-12);
    }
}

TEST_CASE("orthogonal interferer leaves the branch metric single-user") {
    SystemConfig cfg;
    cfg.K = 2;
    cfg.Nc = 4;
    cfg.Q = 1;
    cfg.L = 3;
    cfg.Lp = 0;
    cfg.N0 = 0.5;
    cfg.sigma2 = {1.0, 1.0};
    const double h = 0.5;
    const SignatureSet sig = make_signature_set(4, 1, {{h, h, h, h}, {h, -h, h, -h}});
    ScenarioTruth truth;
    truth.a = {Complex(0.8, -0.3), Complex(-0.2, 1.1)};
    truth.tau = {DelayIndex{0}, DelayIndex{0}};
    truth.d = {{1, -1, 1}, {-1, -1, 1}};
    truth.pilot_mask = {{0, 0, 0}, {0, 0, 0}};
    SystemConfig cfg0 = cfg;
    cfg0.N0 = 0.0;
    const ComplexVec r = simulate_received(cfg0, sig, truth, 1);

    const ParameterState state{truth.a, truth.tau, 0};
    SoftStatistics soft;
    soft.resize(2, 3);
    Rng rng(6);
    for (auto& v : soft.d_tilde) v = 2.0 * rng.uniform() - 1.0;
    for (int l = 0; l < 3; ++l)
        for (int lag = -1; lag <= 1; ++lag) {
            if (l + lag < 0 || l + lag >= 3) continue;
            soft.corr_at(0, l, 1, lag) = 2.0 * rng.uniform() - 1.0;
        }

    // with S_1^dag S_2 = 0 at the probed shifts, the interference projects out
    for (int l = 0; l < 3; ++l) {
        const ComplexVec col = spreading_vector(cfg, sig, 0, DelayIndex{0}, l);
        const Complex expect = soft.d_tilde[(std::size_t)l] * dot(col, r);
        const Complex psi = branch_psi(cfg, sig, r, state, soft, 0, l, 0);
        CHECK(std::abs(psi - expect) < 1e-12);
    }
}

TEST_CASE("delay M-step finds the true delay in the clean case") {
    auto inst = testutil::random_instance(23, 1, 5, 8, 3, 0.0);
    inst.cfg.N0 = 1e-9;
    const ParameterState state{inst.truth.a, inst.truth.tau, 0};
    SoftStatistics soft;
    soft.resize(1, 5);
    for (int l = 0; l < 5; ++l) soft.d_tilde[(std::size_t)l] = (double)inst.truth.d[0][(std::size_t)l];
    const MatchedFilterBank bank(inst.cfg, inst.sig, inst.r);
    const PsiTable table = build_psi_table(inst.cfg, inst.sig, bank, state, soft, 0);

    const DelayIndex best = m_step_tau(table);
    CHECK(best.delta == inst.truth.tau[0].delta);

    // objective at the true delay is L |a|, and it is the unique maximizer
    Complex sum(0.0, 0.0);
    for (int l = 0; l < 5; ++l) sum += table.at(best.delta, l);
    CHECK(std::abs(sum) == Approx(5.0 * std::abs(inst.truth.a[0])).margin(1e-9));
    for (int delta = 0; delta < table.grid; ++delta) {
        if (delta == best.delta) continue;
        Complex s(0.0, 0.0);
        for (int l = 0; l < 5; ++l) s += table.at(delta, l);
        CHECK(std::abs(s) < std::abs(sum));
    }
}

TEST_CASE("delay M-step tie-break picks the smallest index") {
    PsiTable table;
    table.L = 3;
    table.grid = 6;
    table.psi.assign(18, Complex(0.4, -0.1));
    CHECK(m_step_tau(table).delta == 0);
}

TEST_CASE("coefficient M-step closed form") {
    std::vector<Complex> psi(80, Complex(0.3, -0.7));
    SECTION("finite prior shrinkage") {
        const Complex a = m_step_a(psi, 1.0, 1.0);
        CHECK(std::abs(a - Complex(0.3, -0.7) * (80.0 / 81.0)) < 1e-12);
    }
    SECTION("vanishing noise removes the shrinkage") {
        const Complex a = m_step_a(psi, 1e-15, 1.0);
        CHECK(std::abs(a - Complex(0.3, -0.7)) < 1e-12);
    }
    SECTION("zero statistics give zero") {
        std::vector<Complex> zeros(80, Complex(0.0, 0.0));
        CHECK(std::abs(m_step_a(zeros, 1.0, 1.0)) == 0.0);
    }
}

TEST_CASE("complete log-likelihood kernel") {
    const auto inst = testutil::random_instance(24, 2, 2, 4, 2, 1.0);
    const EffectiveModel model(inst.cfg, inst.sig, inst.truth.a, inst.truth.tau, inst.r);

    SECTION("perfect fit gives half the received energy") {
        // build a model whose r equals G d exactly
        std::vector<std::int8_t> d((std::size_t)model.num_cols(), 1);
        ComplexVec gd((std::size_t)inst.cfg.frame_samples(), Complex(0.0, 0.0));
        for (int q = 0; q < model.num_cols(); ++q) model.axpy_col(gd, q, Complex(1.0, 0.0));
        const EffectiveModel fit(inst.cfg, inst.sig, inst.truth.a, inst.truth.tau, gd);
        double e = 0.0;
        for (const auto& x : gd) e += std::norm(x);
        CHECK(complete_loglik(fit, d) == Approx(0.5 * e).margin(1e-9 * std::max(1.0, e)));
    }
    SECTION("orthogonal mean gives minus half its energy") {
        std::vector<std::int8_t> d((std::size_t)model.num_cols(), 1);
        ComplexVec gd((std::size_t)inst.cfg.frame_samples(), Complex(0.0, 0.0));
        for (int q = 0; q < model.num_cols(); ++q) model.axpy_col(gd, q, Complex(1.0, 0.0));
        // received vector orthogonal to G d: put energy far outside the support
        ComplexVec r0((std::size_t)inst.cfg.frame_samples(), Complex(0.0, 0.0));
        r0.back() = Complex(2.0, 1.0);
        double overlap = std::abs(dot(gd, r0));
        REQUIRE(overlap < 1e-12);
        const EffectiveModel ortho(inst.cfg, inst.sig, inst.truth.a, inst.truth.tau, r0);
        double e = 0.0;
        for (const auto& x : gd) e += std::norm(x);
        CHECK(complete_loglik(ortho, d) == Approx(-0.5 * e).margin(1e-9 * std::max(1.0, e)));
    }
    SECTION("ranks all assignments like the exact Gaussian exponent") {
        const int n = model.num_cols();
        std::vector<std::pair<double, double>> scores;  // (kernel, exact)
        for (int c = 0; c < (1 << n); ++c) {
            std::vector<std::int8_t> d((std::size_t)n);
            for (int j = 0; j < n; ++j) d[(std::size_t)j] = ((c >> j) & 1) ? 1 : -1;
            scores.emplace_back(complete_loglik(model, d), testutil::gaussian_exponent(inst, d));
        }
        for (std::size_t i = 0; i < scores.size(); ++i)
            for (std::size_t j = i + 1; j < scores.size(); ++j)
                CHECK((scores[i].first < scores[j].first) == (scores[i].second < scores[j].second));
    }
}

TEST_CASE("surrogate decomposition matches the direct sample average") {
    // Q_k assembled from (d_tilde, corr) must differ between two probes by the
    // same amount as the sample-averaged complete log-joint (the theta_k
    // independent constant cancels).
    const auto inst = testutil::random_instance(25, 2, 3, 4, 2, 0.8);
    const int K = inst.cfg.K, L = inst.cfg.L;
    const EffectiveModel model(inst.cfg, inst.sig, inst.truth.a, inst.truth.tau, inst.r);
    const GibbsEstimate est = estimate_soft_symbols(model, inst.pilots, 60, 10, (std::uint64_t)9);

    // raw sample-mean statistics (the two routes share these sufficient stats)
    SoftStatistics soft;
    soft.resize(K, L);
    for (const auto& s : est.samples)
        for (int q = 0; q < K * L; ++q) soft.d_tilde[(std::size_t)q] += (double)s[(std::size_t)q];
    for (auto& v : soft.d_tilde) v /= (double)est.samples.size();
    for (int k = 0; k < K; ++k)
        for (int kp = 0; kp < K; ++kp) {
            if (kp == k) continue;
            for (int l = 0; l < L; ++l)
                for (int lag = -1; lag <= 1; ++lag) {
                    const int lp = l + lag;
                    if (lp < 0 || lp >= L) continue;
                    double acc = 0.0;
                    for (const auto& s : est.samples)
                        acc += (double)s[(std::size_t)(k * L + l)] * (double)s[(std::size_t)(kp * L + lp)];
                    soft.corr_at(k, l, kp, lag) = acc / (double)est.samples.size();
                }
        }

    const int k = 0;
    const ParameterState state{inst.truth.a, inst.truth.tau, 0};
    const MatchedFilterBank bank(inst.cfg, inst.sig, inst.r);
    const PsiTable table = build_psi_table(inst.cfg, inst.sig, bank, state, soft, k);

    struct Probe {
        Complex a;
        int delta;
    };
    const Probe p1{Complex(0.6, -0.2), inst.truth.tau[0].delta};
    const Probe p2{Complex(-0.9, 0.4), (inst.truth.tau[0].delta + 2) % inst.cfg.delay_grid_size()};

    auto q_from_psi = [&](const Probe& p) {
        return surrogate_q(table.row(p.delta), p.a, inst.cfg.N0, inst.cfg.sigma2[0]);
    };
    auto q_direct = [&](const Probe& p) {
        std::vector<Complex> a = inst.truth.a;
        std::vector<DelayIndex> tau = inst.truth.tau;
        a[(std::size_t)k] = p.a;
        tau[(std::size_t)k].delta = p.delta;
        const EffectiveModel pm(inst.cfg, inst.sig, a, tau, inst.r);
        double acc = 0.0;
        for (const auto& s : est.samples) acc += complete_loglik(pm, s);
        acc /= (double)est.samples.size();
        return 2.0 / inst.cfg.N0 * acc - std::norm(p.a) / inst.cfg.sigma2[0];
    };

    const double lhs = q_from_psi(p1) - q_from_psi(p2);
    const double rhs = q_direct(p1) - q_direct(p2);
    CHECK(lhs == Approx(rhs).margin(1e-9 * std::max(1.0, std::abs(rhs))));
}

TEST_CASE("noise-free single-user truth is a receiver fixed point") {
    SystemConfig cfg;
    cfg.K = 1;
    cfg.Nc = 8;
    cfg.Q = 4;
    cfg.L = 8;
    cfg.Lp = 2;
    cfg.N0 = 0.0;
    cfg.sigma2 = {1.0};
    cfg.Nt = 20;
    cfg.burn_in = 5;
    cfg.sage_iters = 6;
    const SignatureSet sig = generate_signatures(cfg, 31);
    const ScenarioTruth truth = draw_scenario(cfg, 32, 0.5);
    const ComplexVec r = simulate_received(cfg, sig, truth, 33);
    cfg.N0 = 1e-12;
    const PilotSet pilots = pilots_from(cfg, truth);
    const ParameterState init{truth.a, truth.tau, 0};
    const ReceiverResult res = run_receiver(cfg, sig, r, init, pilots, ReceiverOptions{}, 34);
    for (const auto& st : res.param_history) {
        CHECK(st.tau_hat[0].delta == truth.tau[0].delta);
        CHECK(std::abs(st.a_hat[0] - truth.a[0]) < 1e-9);
    }
    for (int q = 0; q < cfg.K * cfg.L; ++q)
        CHECK((int)res.hard[(std::size_t)q] == truth.d[0][(std::size_t)(q % cfg.L)]);
}

TEST_CASE("full-scale receiver runs and schedules every user round-robin", "[slow]") {
    SystemConfig cfg;
    cfg.K = 5;
    cfg.Nc = 8;
    cfg.Q = 12;
    cfg.L = 80;
    cfg.Lp = 4;
    cfg.N0 = 0.095;
    cfg.sigma2 = {std::pow(10.0, -0.4), std::pow(10.0, -0.2), 1.0, std::pow(10.0, 0.2), std::pow(10.0, 0.4)};
    cfg.Nt = 50;
    cfg.burn_in = 10;
    cfg.sage_iters = 25;
    const SignatureSet sig = generate_signatures(cfg, 41);
    const ScenarioTruth truth = draw_scenario(cfg, 42, 0.5);
    const ComplexVec r = simulate_received(cfg, sig, truth, 43);
    const PilotSet pilots = pilots_from(cfg, truth);
    const InitEstimate init = mmse_se_init(cfg, sig, r, pilots);
    const ReceiverResult res = run_receiver(cfg, sig, r, init_to_state(init), pilots, ReceiverOptions{}, 44);
    REQUIRE(res.trace.size() == 25);
    std::vector<int> updates(5, 0);
    for (const auto& rec : res.trace) ++updates[(std::size_t)rec.user];
    for (int k = 0; k < 5; ++k) CHECK(updates[(std::size_t)k] == 5);
    for (int k = 0; k < 5; ++k) {
        CHECK(std::isfinite(res.state.a_hat[(std::size_t)k].real()));
        CHECK(res.state.tau_hat[(std::size_t)k].delta >= 0);
        CHECK(res.state.tau_hat[(std::size_t)k].delta < cfg.delay_grid_size());
    }
}

TEST_CASE("exact E-step surrogate never decreases at its own update") {
    for (std::uint64_t seed : {61, 62}) {
        auto inst = testutil::random_instance(seed, 2, 5, 4, 2, 1.0, /*Lp=*/1);
        inst.cfg.sage_iters = 10;
        ReceiverOptions opts;
        opts.estep = EStepMode::exact;
        // start away from the truth
        ParameterState init;
        init.a_hat = {Complex(0.5, 0.5), Complex(-0.5, 0.25)};
        init.tau_hat = {DelayIndex{0}, DelayIndex{0}};
        const ReceiverResult res = run_receiver(inst.cfg, inst.sig, inst.r, init, inst.pilots, opts, 71);
        for (const auto& rec : res.trace)
            CHECK(rec.q_after >= rec.q_before - 1e-12 * std::max(1.0, std::abs(rec.q_before)));
    }
}

TEST_CASE("exact E-step is gated to small instances") {
    const auto inst = testutil::random_instance(26, 2, 16, 4, 2, 1.0);  // 32 free symbols
    const EffectiveModel model(inst.cfg, inst.sig, inst.truth.a, inst.truth.tau, inst.r);
    CHECK_THROWS_AS(exact_soft_statistics(model, inst.pilots), std::invalid_argument);
}

TEST_CASE("exact E-step matches the enumeration oracle") {
    const auto inst = testutil::random_instance(27, 2, 2, 4, 2, 1.0);
    const EffectiveModel model(inst.cfg, inst.sig, inst.truth.a, inst.truth.tau, inst.r);
    const SoftStatistics soft = exact_soft_statistics(model, inst.pilots);
    const auto post = testutil::enumerate_posterior(inst);
    for (int q = 0; q < model.num_cols(); ++q)
        CHECK(soft.d_tilde[(std::size_t)q] == Approx(post.mean[(std::size_t)q]).margin(1e-9));
    const int L = 2;
    for (int l = 0; l < L; ++l)
        for (int lag = -1; lag <= 1; ++lag) {
            const int lp = l + lag;
            if (lp < 0 || lp >= L) continue;
            CHECK(soft.corr_at(0, l, 1, lag) ==
                  Approx(post.second[(std::size_t)(0 * L + l)][(std::size_t)(1 * L + lp)]).margin(1e-9));
        }
}

TEST_CASE("early stop cuts the iteration count on an easy instance") {
    SystemConfig cfg;
    cfg.K = 2;
    cfg.Nc = 8;
    cfg.Q = 4;
    cfg.L = 16;
    cfg.Lp = 2;
    cfg.N0 = 1e-10;
    cfg.sigma2 = {1.0, 1.0};
    cfg.Nt = 20;
    cfg.burn_in = 5;
    cfg.sage_iters = 40;
    SystemConfig cfg0 = cfg;
    cfg0.N0 = 0.0;
    const SignatureSet sig = generate_signatures(cfg, 51);
    const ScenarioTruth truth = draw_scenario(cfg, 52, 0.5);
    const ComplexVec r = simulate_received(cfg0, sig, truth, 53);
    const PilotSet pilots = pilots_from(cfg, truth);
    ReceiverOptions opts;
    opts.early_stop_tol = 1e-4;
    const ReceiverResult res =
        run_receiver(cfg, sig, r, ParameterState{truth.a, truth.tau, 0}, pilots, opts, 54);
    CHECK(res.param_history.size() < 40);
}

#pragma once

// Modified Cramer-Rao bounds for the channel coefficients and transmission
// delays, the Fisher information diagonal they come from, and the Gabor
// (root second spectral moment) bandwidth of a spreading waveform.
//
// Times are handled in units of Tb = 1, so Ts = 1/(Q*Nc) and delay bounds
// come out in (tau/Tb)^2 directly. For continuous-time rectangular chips the
// Gabor bandwidth diverges and the delay bound tends to zero; the sampled
// waveform gives a finite discrete-grid proxy, which is what gets reported,
// flagged as divergent.

#include <cmath>
#include <complex>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "mcsage/config.hpp"
#include "mcsage/signature.hpp"

namespace mcsage {

inline constexpr double kPi = 3.14159265358979323846;

// Root second spectral moment sqrt( sum f^2 |S(f)|^2 / sum |S(f)|^2 ) over
// the DFT of the sampled waveform; frequencies in cycles per unit of
// sample_interval.
inline double gabor_bandwidth(std::span<const Complex> waveform, double sample_interval) {
    const int N = (int)waveform.size();
    if (N == 0) throw std::invalid_argument("gabor_bandwidth: empty waveform");
    if (!(sample_interval > 0.0)) throw std::invalid_argument("gabor_bandwidth: sample_interval must be > 0");
    double energy = 0.0;
    for (const Complex& x : waveform) energy += std::norm(x);
    if (energy == 0.0) throw std::invalid_argument("gabor_bandwidth: all-zero waveform");

    double num = 0.0, den = 0.0;
    for (int nf = 0; nf < N; ++nf) {
        Complex bin(0.0, 0.0);
        for (int j = 0; j < N; ++j) {
            const double phase = -2.0 * kPi * (double)nf * (double)j / (double)N;
            bin += waveform[(std::size_t)j] * Complex(std::cos(phase), std::sin(phase));
        }
        const int n_signed = (nf < (N + 1) / 2) ? nf : nf - N;
        const double f = (double)n_signed / ((double)N * sample_interval);
        const double p = std::norm(bin);
        num += f * f * p;
        den += p;
    }
    return std::sqrt(num / den);
}

inline double gabor_bandwidth(std::span<const double> waveform, double sample_interval) {
    ComplexVec w(waveform.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = Complex(waveform[i], 0.0);
    return gabor_bandwidth(std::span<const Complex>(w), sample_interval);
}

// Sampled derivative energy ||s'||^2 * Ts of one waveform: central
// differences at interior samples, one-sided at the support edges.
inline double derivative_energy(std::span<const double> w, double Ts) {
    const int N = (int)w.size();
    if (N < 2) throw std::invalid_argument("derivative_energy: waveform too short");
    double acc = 0.0;
    for (int i = 0; i < N; ++i) {
        double ds;
        if (i == 0)
            ds = (w[1] - w[0]) / Ts;
        else if (i == N - 1)
            ds = (w[(std::size_t)(N - 1)] - w[(std::size_t)(N - 2)]) / Ts;
        else
            ds = (w[(std::size_t)(i + 1)] - w[(std::size_t)(i - 1)]) / (2.0 * Ts);
        acc += ds * ds;
    }
    return acc;
}

// Diagonal of the 3K x 3K modified Fisher information matrix:
// (2/N0) L for the 2K real channel dimensions, and
// (2/N0) sigma_k^2 sum_ell ||S'(ell)||^2 for the K delay entries.
inline std::vector<double> fisher_diagonal(const SystemConfig& cfg, const SignatureSet& sig,
                                           std::span<const DelayIndex> delays) {
    cfg.validate();
    if (!(cfg.N0 > 0.0)) throw std::invalid_argument("fisher_diagonal: N0 must be > 0");
    if (sig.users() != cfg.K) throw std::invalid_argument("fisher_diagonal: signature set mismatch");
    for (const DelayIndex& t : delays)
        if (t.delta < 0 || t.delta >= cfg.delay_grid_size())
            throw std::invalid_argument("fisher_diagonal: delay off the grid");
    const double Ts = 1.0 / (double)cfg.symbol_samples();  // Tb = 1
    std::vector<double> diag((std::size_t)3 * cfg.K);
    for (int p = 0; p < 2 * cfg.K; ++p) diag[(std::size_t)p] = 2.0 / cfg.N0 * (double)cfg.L;
    for (int k = 0; k < cfg.K; ++k) {
        const double denergy = derivative_energy(sig.waveforms[(std::size_t)k], Ts);
        diag[(std::size_t)(2 * cfg.K + k)] = 2.0 / cfg.N0 * cfg.sigma2[(std::size_t)k] * (double)cfg.L * denergy;
    }
    return diag;
}

// Channel-coefficient MCRB: N0/L for the complex coefficient (the two real
// dimensions each contribute N0/2L).
inline double mcrb_channel(double N0, int L) {
    if (!(N0 > 0.0) || L < 1) throw std::invalid_argument("mcrb_channel: need N0 > 0 and L >= 1");
    return N0 / (double)L;
}

// Delay MCRB 1/(8 pi^2 L gamma B^2); with B in cycles/Tb the bound is in
// (tau/Tb)^2.
inline double mcrb_delay(double avg_snr, int L, double gabor_bw) {
    if (!(avg_snr > 0.0) || L < 1) throw std::invalid_argument("mcrb_delay: need avg_snr > 0 and L >= 1");
    if (!(gabor_bw > 0.0)) throw std::invalid_argument("mcrb_delay: Gabor bandwidth must be > 0");
    return 1.0 / (8.0 * kPi * kPi * (double)L * avg_snr * gabor_bw * gabor_bw);
}

// True for waveforms that are constant over each Q-sample chip run, in which
// case the continuous-time Gabor bandwidth diverges and the delay MCRB tends
// to zero.
inline bool is_rectangular_waveform(std::span<const double> w, int Q, double tol = 1e-12) {
    for (std::size_t c = 0; c * (std::size_t)Q < w.size(); ++c) {
        const double v = w[c * (std::size_t)Q];
        for (int j = 1; j < Q && c * (std::size_t)Q + (std::size_t)j < w.size(); ++j)
            if (std::abs(w[c * (std::size_t)Q + (std::size_t)j] - v) > tol) return false;
    }
    return true;
}

struct McrbReport {
    std::vector<double> var_a_bound;        // K, N0/L each
    std::vector<double> var_tau_bound;      // K, discrete-grid proxy, (tau/Tb)^2
    std::vector<std::uint8_t> tau_divergent;  // K, continuous-time bound -> 0
    std::vector<double> gabor_bandwidth_tb;   // K, cycles per Tb
    std::vector<double> gabor_bandwidth_tc;   // K, cycles per Tc
    std::vector<double> fisher_diag;          // 3K
};

inline McrbReport make_mcrb_report(const SystemConfig& cfg, const SignatureSet& sig) {
    cfg.validate();
    if (!(cfg.N0 > 0.0)) throw std::invalid_argument("make_mcrb_report: N0 must be > 0");
    McrbReport rep;
    rep.var_a_bound.assign((std::size_t)cfg.K, mcrb_channel(cfg.N0, cfg.L));
    rep.var_tau_bound.resize((std::size_t)cfg.K);
    rep.tau_divergent.resize((std::size_t)cfg.K);
    rep.gabor_bandwidth_tb.resize((std::size_t)cfg.K);
    rep.gabor_bandwidth_tc.resize((std::size_t)cfg.K);
    const double Ts = 1.0 / (double)cfg.symbol_samples();
    for (int k = 0; k < cfg.K; ++k) {
        const auto& w = sig.waveforms[(std::size_t)k];
        const double B = gabor_bandwidth(std::span<const double>(w), Ts);
        rep.gabor_bandwidth_tb[(std::size_t)k] = B;
        rep.gabor_bandwidth_tc[(std::size_t)k] = B / (double)cfg.Nc;
        rep.var_tau_bound[(std::size_t)k] = mcrb_delay(cfg.sigma2[(std::size_t)k] / cfg.N0, cfg.L, B);
        rep.tau_divergent[(std::size_t)k] = is_rectangular_waveform(w, cfg.Q) ? 1 : 0;
    }
    std::vector<DelayIndex> zeros((std::size_t)cfg.K, DelayIndex{0});
    rep.fisher_diag = fisher_diagonal(cfg, sig, zeros);
    return rep;
}

}  // namespace mcsage

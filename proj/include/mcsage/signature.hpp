#pragma once

// Per-user spreading waveforms and the delay-shifted column construction.
// A signature is an oversampled unit-energy vector of Q*Nc samples; the
// column for (user k, delay delta, symbol ell) places it at sample
// Q*Nc*ell + delta inside the length-M observation window.

#include <cmath>
#include <cstdlib>
#include <stdexcept>
#include <vector>

#include "mcsage/config.hpp"
#include "mcsage/rng.hpp"

namespace mcsage {

struct SignatureSet {
    int Nc = 0;
    int Q = 0;
    std::vector<std::vector<int>> chips;         // K x Nc, entries +-1 (empty for custom waveforms)
    std::vector<std::vector<double>> waveforms;  // K x (Q*Nc), each energy 1
    // Cross-correlation table x[k][kp][shift + S-1] = sum_i s_k[i] * s_kp[i + shift],
    // shift in [-(S-1), S-1], S = Q*Nc.
    std::vector<double> crosscorr;

    int users() const { return (int)waveforms.size(); }
    int symbol_samples() const { return Q * Nc; }

    double xcorr(int k, int kp, int shift) const {
        const int S = symbol_samples();
        if (shift <= -S || shift >= S) return 0.0;
        const int span = 2 * S - 1;
        return crosscorr[(std::size_t)((k * users() + kp) * span + shift + S - 1)];
    }
};

inline void build_crosscorr(SignatureSet& sig) {
    const int K = sig.users();
    const int S = sig.symbol_samples();
    const int span = 2 * S - 1;
    sig.crosscorr.assign((std::size_t)K * K * span, 0.0);
    for (int k = 0; k < K; ++k) {
        for (int kp = 0; kp < K; ++kp) {
            for (int shift = -(S - 1); shift <= S - 1; ++shift) {
                double acc = 0.0;
                const int lo = std::max(0, -shift);
                const int hi = std::min(S, S - shift);
                for (int i = lo; i < hi; ++i) acc += sig.waveforms[k][i] * sig.waveforms[kp][i + shift];
                sig.crosscorr[(std::size_t)((k * K + kp) * span + shift + S - 1)] = acc;
            }
        }
    }
}

// Wraps externally built waveforms (tests use this for orthogonal or smooth
// shapes); waveforms must already be unit energy.
inline SignatureSet make_signature_set(int Nc, int Q, std::vector<std::vector<double>> waveforms) {
    SignatureSet sig;
    sig.Nc = Nc;
    sig.Q = Q;
    sig.waveforms = std::move(waveforms);
    for (const auto& w : sig.waveforms)
        if ((int)w.size() != Q * Nc) throw std::invalid_argument("make_signature_set: waveform length != Q*Nc");
    build_crosscorr(sig);
    return sig;
}

// Random antipodal chips, rectangular shape (each chip sign held for Q
// samples), scaled to unit energy. Deterministic in (cfg dims, seed).
inline SignatureSet generate_signatures(const SystemConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    SignatureSet sig;
    sig.Nc = cfg.Nc;
    sig.Q = cfg.Q;
    Rng rng(mix(seed, 0x51674));
    const int S = cfg.symbol_samples();
    const double amp = 1.0 / std::sqrt((double)S);
    sig.chips.resize(cfg.K);
    sig.waveforms.resize(cfg.K);
    for (int k = 0; k < cfg.K; ++k) {
        sig.chips[k].resize(cfg.Nc);
        // Users must stay separable: a chip sequence equal to an earlier
        // user's (up to sign) is redrawn. Bounded so degenerate sizes where
        // no distinct code exists still terminate.
        for (int attempt = 0; attempt < 100; ++attempt) {
            for (int c = 0; c < cfg.Nc; ++c) sig.chips[k][c] = rng.sign();
            bool collides = false;
            for (int j = 0; j < k && !collides; ++j) {
                bool same = true, negated = true;
                for (int c = 0; c < cfg.Nc; ++c) {
                    same = same && sig.chips[k][c] == sig.chips[j][c];
                    negated = negated && sig.chips[k][c] == -sig.chips[j][c];
                }
                collides = same || negated;
            }
            if (!collides) break;
        }
        sig.waveforms[k].resize(S);
        for (int c = 0; c < cfg.Nc; ++c)
            for (int j = 0; j < cfg.Q; ++j) sig.waveforms[k][c * cfg.Q + j] = sig.chips[k][c] * amp;
    }
    build_crosscorr(sig);
    return sig;
}

// Dense delay-shifted column S_k(tau_k, ell), length M. Test/oracle path;
// hot paths work on the implicit (offset, waveform) form.
inline ComplexVec spreading_vector(const SystemConfig& cfg, const SignatureSet& sig, int k, DelayIndex delta,
                                   int ell) {
    if (k < 0 || k >= sig.users()) throw std::out_of_range("spreading_vector: user index");
    if (ell < 0 || ell >= cfg.L) throw std::out_of_range("spreading_vector: symbol index");
    if (delta.delta < 0 || delta.delta >= cfg.delay_grid_size())
        throw std::out_of_range("spreading_vector: delay off the grid");
    ComplexVec v((std::size_t)cfg.frame_samples(), Complex(0.0, 0.0));
    const int off = cfg.symbol_samples() * ell + delta.delta;
    const auto& w = sig.waveforms[k];
    for (int i = 0; i < (int)w.size(); ++i) v[(std::size_t)(off + i)] = Complex(w[i], 0.0);
    return v;
}

}  // namespace mcsage

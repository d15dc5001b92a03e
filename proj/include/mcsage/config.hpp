#pragma once

// Scenario constants for the asynchronous DS-CDMA uplink model and the
// receiver budgets (Gibbs samples, SAGE iterations).

#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mcsage {

using Complex = std::complex<double>;
using ComplexVec = std::vector<Complex>;

// Sub-chip transmission delay on the receiver sample grid:
// tau = delta * Ts with Ts = Tc / Q, constrained to [0, Tb/2).
struct DelayIndex {
    int delta = 0;
};

inline bool operator==(DelayIndex a, DelayIndex b) { return a.delta == b.delta; }

struct SystemConfig {
    int K = 1;    // active users
    int Nc = 8;   // chips per symbol
    int Q = 4;    // samples per chip
    int L = 16;   // symbols per frame
    int Lp = 4;   // pilot symbols at the frame head
    double N0 = 1.0;              // complex noise variance per sample
    std::vector<double> sigma2;   // per-user channel variance, K entries
    int Nt = 50;                  // retained Gibbs sweeps per E-step
    int burn_in = 10;             // discarded Gibbs sweeps per E-step
    int sage_iters = 25;          // total single-user parameter updates
    std::uint64_t seed = 1;

    int symbol_samples() const { return Q * Nc; }
    // Observation vector length M = Q*Nc*(L+1) - 1.
    int frame_samples() const { return Q * Nc * (L + 1) - 1; }
    // Delay hypotheses delta with delta*Ts < Tb/2.
    int delay_grid_size() const { return (Q * Nc + 1) / 2; }
    int payload_symbols() const { return L - Lp; }

    void validate() const {
        auto fail = [](const std::string& msg) { throw std::invalid_argument("SystemConfig: " + msg); };
        if (K < 1) fail("K must be >= 1");
        if (Nc < 1) fail("Nc must be >= 1");
        if (Q < 1) fail("Q must be >= 1");
        if (L < 1) fail("L must be >= 1");
        if (Lp < 0 || Lp >= L) fail("need 0 <= Lp < L");
        // N0 == 0 is allowed for noise-free simulator diagnostics; receiver
        // paths that divide by N0 check positivity themselves.
        if (!(N0 >= 0.0)) fail("N0 must be >= 0");
        if ((int)sigma2.size() != K) fail("sigma2 must have exactly K entries");
        for (double s : sigma2)
            if (!(s > 0.0)) fail("sigma2 entries must be > 0");
        if (Nt < 1) fail("Nt must be >= 1");
        if (burn_in < 0) fail("burn_in must be >= 0");
        if (sage_iters < 1) fail("sage_iters must be >= 1");
    }
};

// Receiver-side pilot knowledge, flat index q = k*L + ell.
struct PilotSet {
    std::vector<std::uint8_t> is_pilot;  // K*L
    std::vector<std::int8_t> value;      // K*L, meaningful where is_pilot

    bool pilot(int q) const { return is_pilot[q] != 0; }
};

}  // namespace mcsage

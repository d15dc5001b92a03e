#pragma once

// The working model at a parameter iterate: G = S(tau)A with columns
// g_q = a_k * S_k(tau_k, ell), q = k*L + ell, together with r and N0.
// Columns are kept implicit (per-user scaled waveform + offset); dense
// accessors exist for tests and oracles.

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "mcsage/config.hpp"
#include "mcsage/signature.hpp"

namespace mcsage {

class EffectiveModel {
public:
    EffectiveModel(const SystemConfig& cfg, const SignatureSet& sig, std::span<const Complex> a_hat,
                   std::span<const DelayIndex> tau_hat, const ComplexVec& r)
        : K_(cfg.K),
          L_(cfg.L),
          M_(cfg.frame_samples()),
          S_(cfg.symbol_samples()),
          N0_(cfg.N0),
          sig_(&sig),
          r_(&r) {
        if (!(N0_ > 0.0)) throw std::invalid_argument("EffectiveModel: N0 must be > 0");
        if ((int)a_hat.size() != K_ || (int)tau_hat.size() != K_)
            throw std::invalid_argument("EffectiveModel: parameter size mismatch");
        if ((int)r.size() != M_) throw std::invalid_argument("EffectiveModel: received vector length != M");
        if (sig.users() != K_ || sig.symbol_samples() != S_)
            throw std::invalid_argument("EffectiveModel: signature set mismatch");
        a_.assign(a_hat.begin(), a_hat.end());
        delta_.resize(K_);
        const int grid = cfg.delay_grid_size();
        for (int k = 0; k < K_; ++k) {
            if (tau_hat[k].delta < 0 || tau_hat[k].delta >= grid)
                throw std::invalid_argument("EffectiveModel: delay off the grid");
            delta_[k] = tau_hat[k].delta;
        }
        // g_q^dag r for every column.
        dot_r_.resize((std::size_t)K_ * L_);
        for (int q = 0; q < K_ * L_; ++q) dot_r_[(std::size_t)q] = dot_col(q, r);
    }

    int users() const { return K_; }
    int frame_len() const { return L_; }
    int num_cols() const { return K_ * L_; }
    int samples() const { return M_; }
    int support_len() const { return S_; }
    double noise_level() const { return N0_; }
    const ComplexVec& received() const { return *r_; }
    const SignatureSet& signatures() const { return *sig_; }

    int col_user(int q) const { return q / L_; }
    int col_symbol(int q) const { return q % L_; }
    int col_offset(int q) const { return S_ * col_symbol(q) + delta_[col_user(q)]; }
    Complex coeff(int k) const { return a_[(std::size_t)k]; }
    int delay(int k) const { return delta_[(std::size_t)k]; }

    double col_energy(int q) const { return std::norm(a_[(std::size_t)col_user(q)]); }

    // g_q^dag v over the column support; v must have length M.
    Complex dot_col(int q, std::span<const Complex> v) const {
        const int k = col_user(q);
        const int off = col_offset(q);
        const auto& w = sig_->waveforms[(std::size_t)k];
        double re = 0.0, im = 0.0;
        for (int i = 0; i < S_; ++i) {
            re += w[i] * v[(std::size_t)(off + i)].real();
            im += w[i] * v[(std::size_t)(off + i)].imag();
        }
        return std::conj(a_[(std::size_t)k]) * Complex(re, im);
    }

    Complex dot_col_r(int q) const { return dot_r_[(std::size_t)q]; }

    // g_p^dag g_q from the waveform cross-correlation table:
    // sum_j w_kp[j - off_p] w_kq[j - off_q] = x_{kp,kq}(off_p - off_q).
    Complex gram(int p, int q) const {
        const int kp = col_user(p), kq = col_user(q);
        const int shift = col_offset(p) - col_offset(q);
        const double x = sig_->xcorr(kp, kq, shift);
        return std::conj(a_[(std::size_t)kp]) * a_[(std::size_t)kq] * x;
    }

    // v += s * g_q.
    void axpy_col(ComplexVec& v, int q, Complex s) const {
        const int k = col_user(q);
        const int off = col_offset(q);
        const auto& w = sig_->waveforms[(std::size_t)k];
        const Complex g = s * a_[(std::size_t)k];
        for (int i = 0; i < S_; ++i) v[(std::size_t)(off + i)] += g * w[i];
    }

    ComplexVec dense_column(int q) const {
        ComplexVec v((std::size_t)M_, Complex(0.0, 0.0));
        axpy_col(v, q, Complex(1.0, 0.0));
        return v;
    }

    // r - G d for a full symbol assignment (flat, +-1).
    ComplexVec residual(std::span<const std::int8_t> d) const {
        ComplexVec res = *r_;
        for (int q = 0; q < num_cols(); ++q) axpy_col(res, q, Complex(-(double)d[(std::size_t)q], 0.0));
        return res;
    }

private:
    int K_, L_, M_, S_;
    double N0_;
    const SignatureSet* sig_;
    const ComplexVec* r_;  // caller keeps r alive for the model's lifetime
    std::vector<Complex> a_;
    std::vector<int> delta_;
    std::vector<Complex> dot_r_;
};

}  // namespace mcsage

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cdcd/mat.hpp"
#include "cdcd/params.hpp"
#include "cdcd/score.hpp"

namespace cdcd {

struct DenoiserConfig {
    int blocks = 2;
    int width = 64;
    int heads = 2;
    int d = 16;     // embedding dimensionality
    int vocab = 0;  // V
    int fourier_features = 32;
    int time_mlp_width = 64;
    void validate() const;
};

// One batch element. x holds raw noisy embeddings (zero rows where mask=0),
// c the conditioning embeddings (zero rows where mask=1), p the previous
// prediction embeddings (zero rows for given positions). mask is the 0/1
// channel as presented to the network (1 = noisy/generate).
struct DenoiserInput {
    Mat x;
    Mat c;
    Mat p;
    std::vector<double> mask;
    double t = 1.0;
};

class Denoiser {
 public:
    virtual ~Denoiser() = default;
    // L x V logits per position.
    virtual Mat forward(const DenoiserInput& in) const = 0;
    virtual int vocab() const = 0;
};

// Exact Bayes logits under the Gaussian-mixture oracle; ignores c, p and mask.
class OracleDenoiser : public Denoiser {
 public:
    explicit OracleDenoiser(OracleSpec spec);
    Mat forward(const DenoiserInput& in) const override;
    int vocab() const override { return spec_.vocab(); }
    const OracleSpec& spec() const { return spec_; }

 private:
    OracleSpec spec_;
};

// Pre-LN Transformer without attention masking. Every layer norm is followed
// by a scale/shift conditioned on the timestep embedding (random Fourier
// features of log t through a 2-layer MLP), positions enter through rotary
// encodings in attention, and the input projection maps the per-position
// concatenation of x (scaled by 1/sqrt(t^2+1)), c, p and the mask channel.
class LearnedDenoiser : public Denoiser {
 public:
    LearnedDenoiser(const DenoiserConfig& cfg, uint64_t param_seed);

    // Reusable activation storage; forward() sizes it to the sequence length.
    struct Workspace;

    Mat forward(const DenoiserInput& in) const override;
    const Mat& forward(Workspace& ws, const DenoiserInput& in) const;

    // Accumulates parameter gradients (same layout as params().all()) and, when
    // requested, the gradients w.r.t. the raw x and c input channels.
    void backward(Workspace& ws, const Mat& dlogits, std::span<double> param_grad, Mat* grad_x,
                  Mat* grad_c) const;

    int vocab() const override { return cfg_.vocab; }
    const DenoiserConfig& config() const { return cfg_; }
    ParamStore& params() { return store_; }
    const ParamStore& params() const { return store_; }

 private:
    DenoiserConfig cfg_;
    ParamStore store_;

    size_t time_freqs_ = 0, time_w1_ = 0, time_b1_ = 0, time_w2_ = 0, time_b2_ = 0;
    size_t in_w_ = 0, in_b_ = 0;
    struct BlockOffsets {
        size_t film1_w, film1_b;
        size_t wq, bq, wk, bk, wv, bv, wo, bo;
        size_t film2_w, film2_b;
        size_t mlp_w1, mlp_b1, mlp_w2, mlp_b2;
    };
    std::vector<BlockOffsets> blk_;
    size_t film_out_w_ = 0, film_out_b_ = 0, ro_w_ = 0, ro_b_ = 0;

    void init_params(uint64_t param_seed);
};

struct LearnedDenoiser::Workspace {
    int seq_len = 0;
    double x_scale = 1.0;

    // time conditioning
    Mat tfeat, th_pre, th_act, ht;

    // input
    Mat in_cat, stream0;

    struct BlockWs {
        Mat ln1_xhat, film1_sb, film1_out;
        std::vector<double> ln1_inv;
        Mat q, k, v;  // q, k stored rotated
        Mat probs;    // heads*L x L attention rows
        Mat ctx, att_out, res1;
        Mat ln2_xhat, film2_sb, film2_out;
        std::vector<double> ln2_inv;
        Mat mlp_pre, mlp_act, mlp_out, res2;
    };
    std::vector<BlockWs> blocks;

    Mat lnf_xhat, filmf_sb, filmf_out, logits;
    std::vector<double> lnf_inv;

    Mat rope_cos, rope_sin;  // L x head_dim/2

    // backward scratch
    Mat d_in_cat, d_ht_acc;
};

}  // namespace cdcd

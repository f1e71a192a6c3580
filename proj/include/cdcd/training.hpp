#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "cdcd/denoiser.hpp"
#include "cdcd/embedding.hpp"
#include "cdcd/mat.hpp"
#include "cdcd/numerics.hpp"
#include "cdcd/params.hpp"
#include "cdcd/warp.hpp"

namespace cdcd {

enum class MaskKind { prefix_fixed, prefix_random, fully_random, mixed };

struct MaskStrategy {
    MaskKind kind = MaskKind::mixed;
    int prefix_len = 0;            // prefix_fixed
    double prefix_fraction = 0.5;  // mixed
};

struct MaskSample {
    std::vector<uint8_t> mask;  // 1 = noisy/generate, 0 = clean/given
    bool drew_prefix = false;   // branch taken by a mixed draw
};

// Prefix masks are 0^k 1^(L-k) with k ~ U{0..L}; fully random masks draw a
// clean count k ~ U{0..L} and then a uniform k-subset of clean positions.
MaskSample sample_mask(const MaskStrategy& strategy, int seq_len, RngStream& rng);

// Mean over noisy positions of -log softmax(logits)[target]; 0 when no
// position is noisy.
double masked_cross_entropy(const Mat& logits, std::span<const int> targets,
                            std::span<const uint8_t> mask);

// Writes scale * (softmax - onehot) / n_noisy into dlogits rows with mask=1
// (zero elsewhere) and returns the unscaled cross-entropy.
double masked_cross_entropy_backward(const Mat& logits, std::span<const int> targets,
                                     std::span<const uint8_t> mask, double scale, Mat& dlogits);

struct TrainConfig {
    int batch = 64;
    int seq_len = 16;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double cond_dropout = 0.1;
    double self_cond_fraction = 0.5;
    int steps = 5000;
    uint64_t seed = 0;
    double grad_clip = 1.0;  // global norm; <= 0 disables
    int threads = 1;
    MaskStrategy mask;
    bool warp_enabled = true;  // off: uniform timesteps, unit weights, no fit
    void validate() const;
};

struct LossStats {
    int64_t step = 0;
    double mean_weighted_ce = 0.0;                       // nats per noisy token
    std::vector<std::pair<double, double>> per_example;  // (t, raw ce)
};

// Owns the optimizer state and RNG streams of one training run. Parameters
// (embedding, denoiser, warp) are borrowed and mutated by train_step. Any
// Denoiser works: with an oracle denoiser the loop still evaluates losses and
// fits the warp, and the optimizer step is skipped (nothing to train).
class Trainer {
 public:
    Trainer(EmbeddingTable& emb, Denoiser& den, WarpCdf& warp, const TrainConfig& cfg);

    LossStats train_step(const std::vector<std::vector<int>>& batch);

    int64_t step() const { return step_; }
    void set_step(int64_t s) { step_ = s; }
    AdamState& model_opt() { return opt_model_; }
    AdamState& warp_opt() { return opt_warp_; }
    const AdamState& model_opt() const { return opt_model_; }
    const AdamState& warp_opt() const { return opt_warp_; }
    RngStream& mask_rng() { return mask_rng_; }
    RngStream& noise_rng() { return noise_rng_; }
    RngStream& u_rng() { return u_rng_; }
    RngStream& drop_rng() { return drop_rng_; }
    const RngStream& mask_rng() const { return mask_rng_; }
    const RngStream& noise_rng() const { return noise_rng_; }
    const RngStream& u_rng() const { return u_rng_; }
    const RngStream& drop_rng() const { return drop_rng_; }
    const TrainConfig& config() const { return cfg_; }

 private:
    EmbeddingTable& emb_;
    Denoiser& den_;
    LearnedDenoiser* learned_;  // null for oracle denoisers
    WarpCdf& warp_;
    TrainConfig cfg_;

    AdamState opt_model_;
    AdamState opt_warp_;
    RngStream mask_rng_, noise_rng_, u_rng_, drop_rng_;
    int64_t step_ = 0;

    // per-thread scratch, reduced in thread order
    std::vector<std::vector<double>> net_grad_;
    std::vector<Mat> emb_norm_grad_;
    std::vector<double> emb_raw_grad_;
};

}  // namespace cdcd

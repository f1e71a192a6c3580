#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace cdcd {

// Counter-based random stream. The n-th draw is a pure function of
// (seed, stream_id, n), so streams can be copied and handed to parallel
// workers, and a checkpointed counter resumes the exact sequence.
// Distinct stream_ids give statistically independent sequences.
class RngStream {
 public:
    RngStream() : RngStream(0, 0) {}
    RngStream(uint64_t seed, uint64_t stream_id);

    // Uniform in [0, 1). Advances the counter by 1.
    double uniform();
    // Standard normal via Box-Muller. Advances the counter by exactly 2.
    double gaussian();
    void gaussian_fill(std::span<double> out);

    uint64_t raw_u64();

    uint64_t seed() const { return seed_; }
    uint64_t stream_id() const { return stream_id_; }
    uint64_t counter() const { return counter_; }
    void set_counter(uint64_t c) { counter_ = c; }

 private:
    uint64_t seed_ = 0;
    uint64_t stream_id_ = 0;
    uint64_t counter_ = 0;
    uint64_t key_ = 0;
};

// log(sum_i exp(v_i)) with max subtraction. v must be non-empty.
double log_sum_exp(std::span<const double> v);

// Stratified uniforms: u_i = (i + u0) / batch for i = 0..batch-1 with a single
// fresh u0, so every stratum [i/B, (i+1)/B) holds exactly one sample.
std::vector<double> low_discrepancy_uniforms(RngStream& rng, int batch);

// accum_i <- decay * accum_i + (1 - decay) * target_i
void ema_update(std::span<double> accum, std::span<const double> target, double decay);

struct GradCheckReport {
    std::string parameter_name;
    double max_rel_err = 0.0;
    int worst_index = -1;
};

// A named view of trainable parameters together with their analytic gradient.
struct ParamBlock {
    std::string name;
    std::span<double> values;
    std::span<const double> analytic_grad;
};

// Central-difference check of analytic gradients. `loss` is evaluated at the
// current parameter values; each entry is perturbed by +/- eps and restored.
// rel_err = |g_fd - g| / max(|g_fd|, |g|, 1e-12). A non-finite loss at a
// perturbed point marks the whole block as failed (max_rel_err = inf).
std::vector<GradCheckReport> finite_diff_check(std::span<ParamBlock> blocks,
                                               const std::function<double()>& loss,
                                               double eps = 1e-5);

}  // namespace cdcd

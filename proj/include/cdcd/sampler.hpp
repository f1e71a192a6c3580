#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "cdcd/denoiser.hpp"
#include "cdcd/mat.hpp"
#include "cdcd/numerics.hpp"
#include "cdcd/score.hpp"
#include "cdcd/warp.hpp"

namespace cdcd {

enum class Solver { euler, heun };
enum class Spacing { warped, rho, warped_rho };
enum class Decode { argmax, nearest_embedding };

struct SamplerConfig {
    Solver solver = Solver::euler;
    int n_steps = 200;
    Spacing spacing = Spacing::warped;
    double rho = 7.0;
    double sigma_init = 1.0;
    double score_temp = 1.0;
    double softmax_temp = 1.0;
    double nucleus_p = 1.0;
    double guidance = 1.0;
    ScoreMode mode = ScoreMode::plain;
    Decode decode = Decode::argmax;
    bool truncate_self_cond = false;  // feed truncated predictions back as p
    bool record_trajectory = false;
    void validate() const;
};

struct Trajectory {
    std::vector<double> timesteps;  // strictly decreasing, n_steps + 1 entries
    std::vector<Mat> states;        // recorded only on request
};

// Descending timestep grid from t_max to t_min (n_steps + 1 points).
// warped: uniform u mapped through the warp's inverse CDF; rho: the power
// spacing t_k = (t_max^(1/rho) + k/N (t_min^(1/rho) - t_max^(1/rho)))^rho;
// warped_rho: the rho grid re-normalized to [0,1] and pushed through the warp.
std::vector<double> step_grid(const SamplerConfig& cfg, const WarpCdf& warp, double t_min,
                              double t_max);

using ScoreField = std::function<Mat(const Mat& x, double t)>;

// x + (t_next - t_k) * (-t_k * score(x, t_k))
Mat euler_step(const Mat& x, double t_k, double t_next, const ScoreField& score);
// Predictor Euler step, then the average of the endpoint derivatives.
Mat heun_step(const Mat& x, double t_k, double t_next, const ScoreField& score);

// Temperature-sharpen then nucleus-truncate a categorical distribution. Ties
// at the nucleus boundary are broken by token index.
std::vector<double> truncate_posterior(std::span<const double> probs, double softmax_temp,
                                       double nucleus_p);

struct Conditioning {
    std::vector<int> tokens;     // meaningful where mask = 0
    std::vector<uint8_t> mask;   // 1 = generate, 0 = given
};

struct SampleResult {
    std::vector<int> tokens;
    Trajectory trajectory;
};

// Probability-flow ODE sampling. Noisy positions start at sigma_init * t_start
// Gaussian noise and clean positions stay fixed on their conditioning
// embeddings throughout. Each score evaluation runs the denoiser with the most
// recent prediction as self-conditioning, shapes the posterior, interpolates
// the score, applies guidance (unconditional pass with dropped conditioning
// when guidance != 1) and the score temperature.
SampleResult sample(const Denoiser& denoiser, const Mat& embeddings, const WarpCdf& warp,
                    const SamplerConfig& cfg, const Conditioning& cond, double t_min, double t_max,
                    RngStream& rng);

}  // namespace cdcd

#pragma once

#include <span>
#include <vector>

#include "cdcd/mat.hpp"

namespace cdcd {

enum class ScoreMode { plain, renormalise, clamp, renormalise_clamp };

// Per-position categorical beliefs p(x0 = e_i | x, t).
struct PosteriorDistribution {
    Mat probs;  // L x V
    // Non-negative rows summing to 1 within tol.
    bool valid(double tol = 1e-8) const;
};

// Known token prior and fixed normalized embeddings: defines the closed-form
// Gaussian-mixture ground truth used as the test oracle.
struct OracleSpec {
    std::vector<double> prior;
    Mat embeddings;  // V x d, rows with norm sqrt(d)
    int vocab() const { return embeddings.rows; }
    int dim() const { return embeddings.cols; }
    void validate() const;
};

// (x0 - x) / t^2. Requires t > 0.
std::vector<double> conditional_score(std::span<const double> x0, std::span<const double> x,
                                      double t);

// Posterior-weighted average of embedding rows.
std::vector<double> interpolate_x0(std::span<const double> probs, const Mat& embeddings);

// Index of the Euclidean-nearest embedding row; ties go to the lowest index.
int nearest_embedding(const Mat& embeddings, std::span<const double> v);

// Score estimate from a categorical posterior: clamp replaces x0_hat by the
// nearest embedding row (applied before renormalise when both are set),
// renormalise rescales x0_hat to norm sqrt(d); the result is (x0_hat - x)/t^2.
std::vector<double> interpolate_score(std::span<const double> probs, const Mat& embeddings,
                                      std::span<const double> x, double t, ScoreMode mode);

// Exact posterior under Gaussian corruption: probs_i ∝ prior_i * exp(-||x - e_i||^2 / (2 t^2)).
std::vector<double> bayes_posterior(const OracleSpec& spec, std::span<const double> x, double t);

// Analytic gradient of log sum_i prior_i N(x; e_i, t^2 I), computed in log space.
std::vector<double> oracle_score(const OracleSpec& spec, std::span<const double> x, double t);

// log p_t(x) for the mixture, up to the Gaussian normalizing constant.
double oracle_log_density(const OracleSpec& spec, std::span<const double> x, double t);

// uncond + gamma * (cond - uncond)
std::vector<double> cfg_combine(std::span<const double> score_cond,
                                std::span<const double> score_uncond, double gamma);

// score / temperature (the tempered density p^(1/T) has its score scaled by 1/T).
std::vector<double> apply_score_temperature(std::span<const double> score, double temperature);

}  // namespace cdcd

#include "cdcd/score.hpp"

#include <cmath>
#include <stdexcept>

#include "cdcd/numerics.hpp"

namespace cdcd {

namespace {
constexpr double kDegenerateNorm = 1e-30;

double sq_dist(std::span<const double> x, std::span<const double> y) {
    double s = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - y[i];
        s += d * d;
    }
    return s;
}
}  // namespace

bool PosteriorDistribution::valid(double tol) const {
    for (int r = 0; r < probs.rows; ++r) {
        double s = 0.0;
        for (int j = 0; j < probs.cols; ++j) {
            const double p = probs(r, j);
            if (!(p >= 0.0)) return false;
            s += p;
        }
        if (std::abs(s - 1.0) > tol) return false;
    }
    return true;
}

void OracleSpec::validate() const {
    if (static_cast<int>(prior.size()) != embeddings.rows)
        throw std::invalid_argument("OracleSpec: prior size does not match embedding count");
    double s = 0.0;
    for (double p : prior) {
        if (p < 0.0) throw std::invalid_argument("OracleSpec: negative prior entry");
        s += p;
    }
    if (std::abs(s - 1.0) > 1e-8) throw std::invalid_argument("OracleSpec: prior does not sum to 1");
    const double want = std::sqrt(static_cast<double>(embeddings.cols));
    for (int i = 0; i < embeddings.rows; ++i) {
        if (std::abs(l2_norm(embeddings.row(i)) - want) > 1e-8)
            throw std::invalid_argument("OracleSpec: embedding row without norm sqrt(d)");
    }
}

std::vector<double> conditional_score(std::span<const double> x0, std::span<const double> x,
                                      double t) {
    if (t <= 0.0) throw std::invalid_argument("conditional_score: t must be positive");
    if (x0.size() != x.size()) throw std::invalid_argument("conditional_score: size mismatch");
    std::vector<double> out(x.size());
    const double inv_t2 = 1.0 / (t * t);
    for (size_t i = 0; i < x.size(); ++i) out[i] = (x0[i] - x[i]) * inv_t2;
    return out;
}

std::vector<double> interpolate_x0(std::span<const double> probs, const Mat& embeddings) {
    if (static_cast<int>(probs.size()) != embeddings.rows)
        throw std::invalid_argument("interpolate_x0: probs size does not match vocab");
    std::vector<double> out(static_cast<size_t>(embeddings.cols), 0.0);
    for (int i = 0; i < embeddings.rows; ++i) {
        const double p = probs[static_cast<size_t>(i)];
        if (p == 0.0) continue;
        const double* e = embeddings.row_ptr(i);
        for (int j = 0; j < embeddings.cols; ++j) out[static_cast<size_t>(j)] += p * e[j];
    }
    return out;
}

int nearest_embedding(const Mat& embeddings, std::span<const double> v) {
    int best = 0;
    double best_d = sq_dist(embeddings.row(0), v);
    for (int i = 1; i < embeddings.rows; ++i) {
        const double d = sq_dist(embeddings.row(i), v);
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

std::vector<double> interpolate_score(std::span<const double> probs, const Mat& embeddings,
                                      std::span<const double> x, double t, ScoreMode mode) {
    if (t <= 0.0) throw std::invalid_argument("interpolate_score: t must be positive");
    std::vector<double> x0 = interpolate_x0(probs, embeddings);
    if (mode == ScoreMode::clamp || mode == ScoreMode::renormalise_clamp) {
        const int idx = nearest_embedding(embeddings, x0);
        x0.assign(embeddings.row_ptr(idx), embeddings.row_ptr(idx) + embeddings.cols);
    }
    if (mode == ScoreMode::renormalise || mode == ScoreMode::renormalise_clamp) {
        const double n = l2_norm(x0);
        if (n < kDegenerateNorm)
            throw std::runtime_error("interpolate_score: degenerate x0_hat, cannot renormalise");
        const double f = std::sqrt(static_cast<double>(embeddings.cols)) / n;
        for (double& v : x0) v *= f;
    }
    return conditional_score(x0, x, t);
}

std::vector<double> bayes_posterior(const OracleSpec& spec, std::span<const double> x, double t) {
    if (t <= 0.0) throw std::invalid_argument("bayes_posterior: t must be positive");
    const int v = spec.vocab();
    std::vector<double> logits(static_cast<size_t>(v));
    const double inv_2t2 = 1.0 / (2.0 * t * t);
    for (int i = 0; i < v; ++i)
        logits[static_cast<size_t>(i)] =
            std::log(spec.prior[static_cast<size_t>(i)]) - sq_dist(x, spec.embeddings.row(i)) * inv_2t2;
    const double lse = log_sum_exp(logits);
    std::vector<double> probs(static_cast<size_t>(v));
    for (int i = 0; i < v; ++i) probs[static_cast<size_t>(i)] = std::exp(logits[static_cast<size_t>(i)] - lse);
    return probs;
}

std::vector<double> oracle_score(const OracleSpec& spec, std::span<const double> x, double t) {
    if (t <= 0.0) throw std::invalid_argument("oracle_score: t must be positive");
    const int v = spec.vocab();
    const int d = spec.dim();
    std::vector<double> logits(static_cast<size_t>(v));
    const double inv_2t2 = 1.0 / (2.0 * t * t);
    for (int i = 0; i < v; ++i)
        logits[static_cast<size_t>(i)] =
            std::log(spec.prior[static_cast<size_t>(i)]) - sq_dist(x, spec.embeddings.row(i)) * inv_2t2;
    const double lse = log_sum_exp(logits);
    std::vector<double> out(static_cast<size_t>(d), 0.0);
    const double inv_t2 = 1.0 / (t * t);
    for (int i = 0; i < v; ++i) {
        const double w = std::exp(logits[static_cast<size_t>(i)] - lse);
        if (w == 0.0) continue;
        const double* e = spec.embeddings.row_ptr(i);
        for (int j = 0; j < d; ++j) out[static_cast<size_t>(j)] += w * (e[j] - x[static_cast<size_t>(j)]) * inv_t2;
    }
    return out;
}

double oracle_log_density(const OracleSpec& spec, std::span<const double> x, double t) {
    if (t <= 0.0) throw std::invalid_argument("oracle_log_density: t must be positive");
    const int v = spec.vocab();
    std::vector<double> logits(static_cast<size_t>(v));
    const double inv_2t2 = 1.0 / (2.0 * t * t);
    for (int i = 0; i < v; ++i)
        logits[static_cast<size_t>(i)] =
            std::log(spec.prior[static_cast<size_t>(i)]) - sq_dist(x, spec.embeddings.row(i)) * inv_2t2;
    return log_sum_exp(logits);
}

std::vector<double> cfg_combine(std::span<const double> score_cond,
                                std::span<const double> score_uncond, double gamma) {
    if (score_cond.size() != score_uncond.size())
        throw std::invalid_argument("cfg_combine: size mismatch");
    std::vector<double> out(score_cond.size());
    for (size_t i = 0; i < out.size(); ++i)
        out[i] = score_uncond[i] + gamma * (score_cond[i] - score_uncond[i]);
    return out;
}

std::vector<double> apply_score_temperature(std::span<const double> score, double temperature) {
    if (temperature <= 0.0) throw std::invalid_argument("apply_score_temperature: T must be positive");
    std::vector<double> out(score.begin(), score.end());
    for (double& v : out) v /= temperature;
    return out;
}

}  // namespace cdcd

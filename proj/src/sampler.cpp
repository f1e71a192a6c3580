#include "cdcd/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace cdcd {

void SamplerConfig::validate() const {
    if (n_steps < 1) throw std::invalid_argument("SamplerConfig: n_steps must be >= 1");
    if (!(sigma_init > 0.0) || sigma_init > 1.0)
        throw std::invalid_argument("SamplerConfig: sigma_init must be in (0, 1]");
    if (!(score_temp > 0.0) || !(softmax_temp > 0.0))
        throw std::invalid_argument("SamplerConfig: temperatures must be positive");
    if (!(nucleus_p > 0.0) || nucleus_p > 1.0)
        throw std::invalid_argument("SamplerConfig: nucleus_p must be in (0, 1]");
    if (!(rho > 0.0)) throw std::invalid_argument("SamplerConfig: rho must be positive");
}

std::vector<double> step_grid(const SamplerConfig& cfg, const WarpCdf& warp, double t_min,
                              double t_max) {
    const int n = cfg.n_steps;
    std::vector<double> grid(static_cast<size_t>(n) + 1);
    auto rho_point = [&](int k) {
        const double a = std::pow(t_max, 1.0 / cfg.rho);
        const double b = std::pow(t_min, 1.0 / cfg.rho);
        const double f = static_cast<double>(k) / n;
        return std::pow(a + f * (b - a), cfg.rho);
    };
    switch (cfg.spacing) {
        case Spacing::warped:
            for (int k = 0; k <= n; ++k)
                grid[static_cast<size_t>(k)] = warp.sample_timestep(1.0 - static_cast<double>(k) / n);
            break;
        case Spacing::rho:
            for (int k = 0; k <= n; ++k) grid[static_cast<size_t>(k)] = rho_point(k);
            break;
        case Spacing::warped_rho:
            for (int k = 0; k <= n; ++k) {
                const double u = (rho_point(k) - t_min) / (t_max - t_min);
                grid[static_cast<size_t>(k)] = warp.sample_timestep(std::clamp(u, 0.0, 1.0));
            }
            break;
    }
    grid.front() = t_max;
    grid.back() = t_min;
    for (int k = 0; k < n; ++k)
        if (!(grid[static_cast<size_t>(k)] > grid[static_cast<size_t>(k) + 1]))
            throw std::runtime_error("step_grid: grid is not strictly decreasing");
    return grid;
}

Mat euler_step(const Mat& x, double t_k, double t_next, const ScoreField& score) {
    const Mat s = score(x, t_k);
    Mat out = x;
    const double dt = t_next - t_k;
    for (size_t i = 0; i < out.size(); ++i) out.a[i] += dt * (-t_k * s.a[i]);
    return out;
}

Mat heun_step(const Mat& x, double t_k, double t_next, const ScoreField& score) {
    const double dt = t_next - t_k;
    const Mat s1 = score(x, t_k);
    Mat d1(x.rows, x.cols);
    for (size_t i = 0; i < d1.size(); ++i) d1.a[i] = -t_k * s1.a[i];
    Mat xt = x;
    for (size_t i = 0; i < xt.size(); ++i) xt.a[i] += dt * d1.a[i];
    const Mat s2 = score(xt, t_next);
    Mat out = x;
    for (size_t i = 0; i < out.size(); ++i)
        out.a[i] += dt * 0.5 * (d1.a[i] + (-t_next * s2.a[i]));
    return out;
}

std::vector<double> truncate_posterior(std::span<const double> probs, double softmax_temp,
                                       double nucleus_p) {
    if (!(softmax_temp > 0.0)) throw std::invalid_argument("truncate_posterior: temperature <= 0");
    if (!(nucleus_p > 0.0) || nucleus_p > 1.0)
        throw std::invalid_argument("truncate_posterior: nucleus_p outside (0, 1]");
    const size_t v = probs.size();
    std::vector<double> out(v);
    if (softmax_temp == 1.0) {
        std::copy(probs.begin(), probs.end(), out.begin());
    } else {
        // logits / T == p^(1/T) up to normalization
        double total = 0.0;
        for (size_t i = 0; i < v; ++i) {
            out[i] = probs[i] > 0.0 ? std::pow(probs[i], 1.0 / softmax_temp) : 0.0;
            total += out[i];
        }
        for (double& p : out) p /= total;
    }
    if (nucleus_p < 1.0) {
        std::vector<int> order(v);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            if (out[static_cast<size_t>(a)] != out[static_cast<size_t>(b)])
                return out[static_cast<size_t>(a)] > out[static_cast<size_t>(b)];
            return a < b;
        });
        double cum = 0.0;
        size_t keep = v;
        for (size_t i = 0; i < v; ++i) {
            cum += out[static_cast<size_t>(order[i])];
            if (cum >= nucleus_p - 1e-15) {
                keep = i + 1;
                break;
            }
        }
        std::vector<double> kept(v, 0.0);
        double total = 0.0;
        for (size_t i = 0; i < keep; ++i) {
            kept[static_cast<size_t>(order[i])] = out[static_cast<size_t>(order[i])];
            total += out[static_cast<size_t>(order[i])];
        }
        for (double& p : kept) p /= total;
        out = std::move(kept);
    }
    return out;
}

SampleResult sample(const Denoiser& denoiser, const Mat& embeddings, const WarpCdf& warp,
                    const SamplerConfig& cfg, const Conditioning& cond, double t_min, double t_max,
                    RngStream& rng) {
    cfg.validate();
    const int L = static_cast<int>(cond.mask.size());
    const int d = embeddings.cols;
    const int v = embeddings.rows;
    if (L < 1) throw std::invalid_argument("sample: empty conditioning mask");
    if (static_cast<int>(cond.tokens.size()) != L)
        throw std::invalid_argument("sample: tokens/mask size mismatch");
    if (denoiser.vocab() != v) throw std::invalid_argument("sample: vocab mismatch");

    const std::vector<double> grid = step_grid(cfg, warp, t_min, t_max);

    Mat c(L, d);
    std::vector<double> chan_mask(static_cast<size_t>(L), 1.0);
    for (int r = 0; r < L; ++r) {
        if (cond.mask[static_cast<size_t>(r)] != 0) continue;
        const int tok = cond.tokens[static_cast<size_t>(r)];
        if (tok < 0 || tok >= v) throw std::invalid_argument("sample: conditioning token out of range");
        axpy(1.0, embeddings.row(tok), c.row(r));
        chan_mask[static_cast<size_t>(r)] = 0.0;
    }
    const Mat zero_c(L, d);
    const std::vector<double> all_noisy(static_cast<size_t>(L), 1.0);

    Mat x(L, d);
    for (int r = 0; r < L; ++r) {
        if (cond.mask[static_cast<size_t>(r)] == 0) continue;
        double* row = x.row_ptr(r);
        for (int j = 0; j < d; ++j) row[j] = cfg.sigma_init * grid.front() * rng.gaussian();
    }

    Mat p(L, d);  // most recent prediction, zero rows at clean positions
    int step_index = 0;

    auto posterior_scores = [&](const Mat& logits, const Mat& xs, double t, Mat& scores,
                                Mat* new_p) {
        scores.resize(L, d);
        scores.zero();
        for (int r = 0; r < L; ++r) {
            if (cond.mask[static_cast<size_t>(r)] == 0) continue;
            std::vector<double> probs(logits.row(r).begin(), logits.row(r).end());
            const double lse = log_sum_exp(probs);
            for (double& q : probs) q = std::exp(q - lse);
            const std::vector<double> trunc =
                truncate_posterior(probs, cfg.softmax_temp, cfg.nucleus_p);
            const std::vector<double> s =
                interpolate_score(trunc, embeddings, xs.row(r), t, cfg.mode);
            std::copy(s.begin(), s.end(), scores.row_ptr(r));
            if (new_p != nullptr) {
                const std::vector<double> x0 =
                    interpolate_x0(cfg.truncate_self_cond ? trunc : probs, embeddings);
                std::copy(x0.begin(), x0.end(), new_p->row_ptr(r));
            }
        }
    };

    ScoreField field = [&](const Mat& xs, double t) -> Mat {
        if (!all_finite(xs))
            throw std::runtime_error("sample: non-finite state at step " + std::to_string(step_index));
        DenoiserInput in{xs, c, p, chan_mask, t};
        const Mat logits = denoiser.forward(in);
        Mat scores, new_p(L, d);
        posterior_scores(logits, xs, t, scores, &new_p);
        if (cfg.guidance != 1.0) {
            DenoiserInput un{xs, zero_c, p, all_noisy, t};
            const Mat logits_u = denoiser.forward(un);
            Mat scores_u;
            posterior_scores(logits_u, xs, t, scores_u, nullptr);
            for (size_t i = 0; i < scores.size(); ++i)
                scores.a[i] = scores_u.a[i] + cfg.guidance * (scores.a[i] - scores_u.a[i]);
        }
        if (cfg.score_temp != 1.0)
            for (double& s : scores.a) s /= cfg.score_temp;
        p = std::move(new_p);
        return scores;
    };

    SampleResult result;
    result.trajectory.timesteps = grid;
    if (cfg.record_trajectory) result.trajectory.states.push_back(x);
    for (step_index = 0; step_index < cfg.n_steps; ++step_index) {
        const double t_k = grid[static_cast<size_t>(step_index)];
        const double t_next = grid[static_cast<size_t>(step_index) + 1];
        x = cfg.solver == Solver::euler ? euler_step(x, t_k, t_next, field)
                                        : heun_step(x, t_k, t_next, field);
        if (cfg.record_trajectory) result.trajectory.states.push_back(x);
    }
    if (!all_finite(x)) throw std::runtime_error("sample: non-finite final state");

    result.tokens.assign(static_cast<size_t>(L), 0);
    if (cfg.decode == Decode::argmax) {
        // one additional model evaluation at the final timestep
        DenoiserInput in{x, c, p, chan_mask, grid.back()};
        const Mat logits = denoiser.forward(in);
        for (int r = 0; r < L; ++r) {
            if (cond.mask[static_cast<size_t>(r)] == 0) continue;
            int best = 0;
            for (int j = 1; j < v; ++j)
                if (logits(r, j) > logits(r, best)) best = j;
            result.tokens[static_cast<size_t>(r)] = best;
        }
    } else {
        for (int r = 0; r < L; ++r) {
            if (cond.mask[static_cast<size_t>(r)] == 0) continue;
            result.tokens[static_cast<size_t>(r)] = nearest_embedding(embeddings, p.row(r));
        }
    }
    for (int r = 0; r < L; ++r)
        if (cond.mask[static_cast<size_t>(r)] == 0)
            result.tokens[static_cast<size_t>(r)] = cond.tokens[static_cast<size_t>(r)];
    return result;
}

}  // namespace cdcd

#include "cdcd/training.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <stdexcept>
#include <thread>

namespace cdcd {

MaskSample sample_mask(const MaskStrategy& strategy, int seq_len, RngStream& rng) {
    if (seq_len < 1) throw std::invalid_argument("sample_mask: seq_len must be >= 1");
    MaskSample out;
    out.mask.assign(static_cast<size_t>(seq_len), 1);

    auto prefix = [&](int k) {
        for (int i = 0; i < k && i < seq_len; ++i) out.mask[static_cast<size_t>(i)] = 0;
    };
    auto draw_count = [&]() {  // uniform on {0 .. L}
        const int k = static_cast<int>(rng.uniform() * (seq_len + 1));
        return std::min(k, seq_len);
    };

    switch (strategy.kind) {
        case MaskKind::prefix_fixed:
            if (strategy.prefix_len < 0 || strategy.prefix_len > seq_len)
                throw std::invalid_argument("sample_mask: prefix_len out of range");
            prefix(strategy.prefix_len);
            out.drew_prefix = true;
            break;
        case MaskKind::prefix_random:
            prefix(draw_count());
            out.drew_prefix = true;
            break;
        case MaskKind::fully_random: {
            const int clean = draw_count();
            // uniform k-subset via partial Fisher-Yates
            std::vector<int> idx(static_cast<size_t>(seq_len));
            std::iota(idx.begin(), idx.end(), 0);
            for (int i = 0; i < clean; ++i) {
                const int j = i + static_cast<int>(rng.uniform() * (seq_len - i));
                std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(std::min(j, seq_len - 1))]);
                out.mask[static_cast<size_t>(idx[static_cast<size_t>(i)])] = 0;
            }
            break;
        }
        case MaskKind::mixed: {
            if (strategy.prefix_fraction < 0.0 || strategy.prefix_fraction > 1.0)
                throw std::invalid_argument("sample_mask: prefix_fraction outside [0,1]");
            MaskStrategy sub;
            sub.kind = rng.uniform() < strategy.prefix_fraction ? MaskKind::prefix_random
                                                                : MaskKind::fully_random;
            return sample_mask(sub, seq_len, rng);
        }
    }
    return out;
}

double masked_cross_entropy(const Mat& logits, std::span<const int> targets,
                            std::span<const uint8_t> mask) {
    if (static_cast<int>(targets.size()) != logits.rows || targets.size() != mask.size())
        throw std::invalid_argument("masked_cross_entropy: shape mismatch");
    double total = 0.0;
    int n = 0;
    for (int r = 0; r < logits.rows; ++r) {
        if (mask[static_cast<size_t>(r)] == 0) continue;
        const double lse = log_sum_exp(logits.row(r));
        total += lse - logits(r, targets[static_cast<size_t>(r)]);
        ++n;
    }
    return n == 0 ? 0.0 : total / n;
}

double masked_cross_entropy_backward(const Mat& logits, std::span<const int> targets,
                                     std::span<const uint8_t> mask, double scale, Mat& dlogits) {
    if (static_cast<int>(targets.size()) != logits.rows || targets.size() != mask.size())
        throw std::invalid_argument("masked_cross_entropy_backward: shape mismatch");
    dlogits.resize(logits.rows, logits.cols);
    dlogits.zero();
    int n = 0;
    for (int r = 0; r < logits.rows; ++r)
        if (mask[static_cast<size_t>(r)] != 0) ++n;
    if (n == 0) return 0.0;
    const double f = scale / n;
    double total = 0.0;
    for (int r = 0; r < logits.rows; ++r) {
        if (mask[static_cast<size_t>(r)] == 0) continue;
        const double lse = log_sum_exp(logits.row(r));
        total += lse - logits(r, targets[static_cast<size_t>(r)]);
        double* out = dlogits.row_ptr(r);
        const double* in = logits.row_ptr(r);
        for (int j = 0; j < logits.cols; ++j) out[j] = f * std::exp(in[j] - lse);
        out[targets[static_cast<size_t>(r)]] -= f;
    }
    return total / n;
}

void TrainConfig::validate() const {
    if (batch < 1 || seq_len < 1 || steps < 0 || threads < 1)
        throw std::invalid_argument("TrainConfig: batch, seq_len, threads must be positive");
    if (cond_dropout < 0.0 || cond_dropout > 1.0 || self_cond_fraction < 0.0 ||
        self_cond_fraction > 1.0)
        throw std::invalid_argument("TrainConfig: cond_dropout and self_cond_fraction in [0,1]");
    if (lr <= 0.0) throw std::invalid_argument("TrainConfig: lr must be positive");
}

Trainer::Trainer(EmbeddingTable& emb, Denoiser& den, WarpCdf& warp, const TrainConfig& cfg)
    : emb_(emb),
      den_(den),
      learned_(dynamic_cast<LearnedDenoiser*>(&den)),
      warp_(warp),
      cfg_(cfg),
      opt_model_(emb.raw().size() + (learned_ != nullptr ? learned_->params().size() : 0),
                 AdamConfig{cfg.lr, cfg.beta1, cfg.beta2, 1e-8}),
      opt_warp_(2 * static_cast<size_t>(warp.n_bins()), AdamConfig{cfg.lr, cfg.beta1, cfg.beta2, 1e-8}),
      mask_rng_(cfg.seed, 10),
      noise_rng_(cfg.seed, 11),
      u_rng_(cfg.seed, 12),
      drop_rng_(cfg.seed, 13) {
    cfg_.validate();
    if (learned_ != nullptr && learned_->config().d != emb.dim())
        throw std::invalid_argument("Trainer: embedding dim does not match denoiser");
    net_grad_.assign(static_cast<size_t>(cfg_.threads), {});
    emb_norm_grad_.assign(static_cast<size_t>(cfg_.threads), Mat(emb.vocab(), emb.dim()));
    emb_raw_grad_.assign(emb.raw().size(), 0.0);
}

namespace {

struct ExamplePlan {
    std::vector<uint8_t> loss_mask;  // original mask (1 = noisy)
    bool dropped = false;
    bool self_cond = false;
    double t = 1.0;
    double weight = 1.0;
    Mat eps;  // L x d corruption noise
    double ce = 0.0;
};

}  // namespace

LossStats Trainer::train_step(const std::vector<std::vector<int>>& batch) {
    if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
    const int b_size = static_cast<int>(batch.size());
    const int L = cfg_.seq_len;
    const int d = emb_.dim();
    for (const auto& seq : batch)
        if (static_cast<int>(seq.size()) != L)
            throw std::invalid_argument("train_step: sequence length mismatch");

    // All randomness is drawn serially up front so results are independent of
    // the worker count.
    const std::vector<double> us = low_discrepancy_uniforms(u_rng_, b_size);
    const int n_self_cond = static_cast<int>(std::llround(cfg_.self_cond_fraction * b_size));
    std::vector<ExamplePlan> plan(static_cast<size_t>(b_size));
    for (int i = 0; i < b_size; ++i) {
        ExamplePlan& ex = plan[static_cast<size_t>(i)];
        if (cfg_.warp_enabled) {
            ex.t = warp_.sample_timestep(us[static_cast<size_t>(i)]);
            ex.weight = warp_.sampling_importance_weight(warp_.normalize_time(ex.t));
        } else {
            ex.t = warp_.denormalize_time(us[static_cast<size_t>(i)]);
            ex.weight = 1.0;
        }
        ex.loss_mask = sample_mask(cfg_.mask, L, mask_rng_).mask;
        ex.dropped = drop_rng_.uniform() < cfg_.cond_dropout;
        ex.self_cond = i < n_self_cond;
        ex.eps.resize(L, d);
        noise_rng_.gaussian_fill(ex.eps.a);
    }

    const Mat norm_emb = emb_.normalized();
    const size_t net_size = learned_ != nullptr ? learned_->params().size() : 0;
    for (int k = 0; k < cfg_.threads; ++k) {
        net_grad_[static_cast<size_t>(k)].assign(net_size, 0.0);
        emb_norm_grad_[static_cast<size_t>(k)].resize(emb_.vocab(), d);
    }

    auto process_range = [&](int thread_idx, int begin, int end) {
        LearnedDenoiser::Workspace ws;
        std::span<double> net_g = net_grad_[static_cast<size_t>(thread_idx)];
        Mat& emb_g = emb_norm_grad_[static_cast<size_t>(thread_idx)];
        Mat dlogits, grad_x, grad_c;
        for (int i = begin; i < end; ++i) {
            ExamplePlan& ex = plan[static_cast<size_t>(i)];
            const std::vector<int>& tokens = batch[static_cast<size_t>(i)];

            DenoiserInput in;
            in.t = ex.t;
            in.x.resize(L, d);
            in.c.resize(L, d);
            in.p.resize(L, d);
            in.mask.assign(static_cast<size_t>(L), 1.0);
            for (int r = 0; r < L; ++r) {
                const int tok = tokens[static_cast<size_t>(r)];
                if (ex.loss_mask[static_cast<size_t>(r)] != 0) {
                    const double* e = norm_emb.row_ptr(tok);
                    const double* n = ex.eps.row_ptr(r);
                    double* x = in.x.row_ptr(r);
                    for (int j = 0; j < d; ++j) x[j] = e[j] + ex.t * n[j];
                } else {
                    if (!ex.dropped) {
                        const double* e = norm_emb.row_ptr(tok);
                        double* c = in.c.row_ptr(r);
                        for (int j = 0; j < d; ++j) c[j] = e[j];
                    }
                    if (!ex.dropped) in.mask[static_cast<size_t>(r)] = 0.0;
                }
            }

            if (ex.self_cond) {
                // extra forward pass with p = 0; its predictions feed the
                // gradient pass as a detached input
                const Mat logits0 = learned_ != nullptr ? learned_->forward(ws, in) : den_.forward(in);
                for (int r = 0; r < L; ++r) {
                    if (ex.loss_mask[static_cast<size_t>(r)] == 0) continue;
                    std::vector<double> probs(logits0.row(r).begin(), logits0.row(r).end());
                    const double lse = log_sum_exp(probs);
                    for (double& p : probs) p = std::exp(p - lse);
                    const std::vector<double> x0 = interpolate_x0(probs, norm_emb);
                    double* pr = in.p.row_ptr(r);
                    for (int j = 0; j < d; ++j) pr[j] = x0[static_cast<size_t>(j)];
                }
            }

            if (learned_ != nullptr) {
                const Mat& logits = learned_->forward(ws, in);
                ex.ce = masked_cross_entropy_backward(logits, tokens, ex.loss_mask,
                                                      ex.weight / b_size, dlogits);
                learned_->backward(ws, dlogits, net_g, &grad_x, &grad_c);
                for (int r = 0; r < L; ++r) {
                    const int tok = tokens[static_cast<size_t>(r)];
                    if (ex.loss_mask[static_cast<size_t>(r)] != 0) {
                        axpy(1.0, grad_x.row(r), emb_g.row(tok));
                    } else if (!ex.dropped) {
                        axpy(1.0, grad_c.row(r), emb_g.row(tok));
                    }
                }
            } else {
                ex.ce = masked_cross_entropy(den_.forward(in), tokens, ex.loss_mask);
            }
        }
    };

    if (cfg_.threads == 1) {
        process_range(0, 0, b_size);
    } else {
        std::vector<std::thread> workers;
        std::vector<std::exception_ptr> errors(static_cast<size_t>(cfg_.threads));
        for (int k = 0; k < cfg_.threads; ++k) {
            const int begin = static_cast<int>(static_cast<int64_t>(b_size) * k / cfg_.threads);
            const int end = static_cast<int>(static_cast<int64_t>(b_size) * (k + 1) / cfg_.threads);
            workers.emplace_back([&, k, begin, end] {
                try {
                    process_range(k, begin, end);
                } catch (...) {
                    errors[static_cast<size_t>(k)] = std::current_exception();
                }
            });
        }
        for (auto& th : workers) th.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }

    LossStats stats;
    stats.step = step_ + 1;
    double weighted = 0.0;
    std::vector<double> ts(static_cast<size_t>(b_size)), ces(static_cast<size_t>(b_size)),
        weights(static_cast<size_t>(b_size));
    for (int i = 0; i < b_size; ++i) {
        const ExamplePlan& ex = plan[static_cast<size_t>(i)];
        weighted += ex.weight * ex.ce / b_size;
        stats.per_example.emplace_back(ex.t, ex.ce);
        ts[static_cast<size_t>(i)] = ex.t;
        ces[static_cast<size_t>(i)] = ex.ce;
        weights[static_cast<size_t>(i)] = ex.weight;
    }
    stats.mean_weighted_ce = weighted;
    if (!std::isfinite(weighted))
        throw std::runtime_error("train_step: non-finite loss at step " + std::to_string(stats.step));

    if (learned_ != nullptr) {
        // reduce per-thread gradients in thread order
        for (int k = 1; k < cfg_.threads; ++k) {
            axpy(1.0, net_grad_[static_cast<size_t>(k)], net_grad_[0]);
            axpy(1.0, emb_norm_grad_[static_cast<size_t>(k)].a, emb_norm_grad_[0].a);
        }
        std::fill(emb_raw_grad_.begin(), emb_raw_grad_.end(), 0.0);
        emb_.normalized_backward(emb_norm_grad_[0], emb_raw_grad_);

        std::span<double> grads[2] = {emb_raw_grad_, net_grad_[0]};
        clip_global_norm(std::span<std::span<double>>(grads, 2), cfg_.grad_clip);
        std::span<double> params[2] = {emb_.raw(), learned_->params().all()};
        std::span<const double> cgrads[2] = {emb_raw_grad_, net_grad_[0]};
        opt_model_.step(std::span<std::span<double>>(params, 2),
                        std::span<std::span<const double>>(cgrads, 2));
    }

    if (cfg_.warp_enabled) warp_.fit_step(ts, ces, weights, std::nullopt, opt_warp_);

    step_ = stats.step;
    return stats;
}

}  // namespace cdcd

#include "cdcd/embedding.hpp"

#include <cmath>
#include <stdexcept>

namespace cdcd {

namespace {
constexpr double kZeroRowThreshold = 1e-30;
}

EmbeddingTable::EmbeddingTable(int vocab, int dim, double init_scale, RngStream& rng)
    : vocab_(vocab), dim_(dim), init_scale_(init_scale), raw_(vocab, dim) {
    if (vocab < 1 || dim < 1) throw std::invalid_argument("EmbeddingTable: vocab and dim must be positive");
    if (init_scale <= 0.0) throw std::invalid_argument("EmbeddingTable: init_scale must be positive");
    for (double& v : raw_.a) v = init_scale * rng.gaussian();
}

Mat EmbeddingTable::normalized() const {
    Mat out(vocab_, dim_);
    const double scale = std::sqrt(static_cast<double>(dim_));
    for (int i = 0; i < vocab_; ++i) {
        const double n = l2_norm(raw_.row(i));
        if (n < kZeroRowThreshold)
            throw std::runtime_error("EmbeddingTable: near-zero raw row " + std::to_string(i) +
                                     " (collapsed initialization)");
        const double f = scale / n;
        const double* src = raw_.row_ptr(i);
        double* dst = out.row_ptr(i);
        for (int j = 0; j < dim_; ++j) dst[j] = f * src[j];
    }
    return out;
}

void EmbeddingTable::normalized_backward(const Mat& grad_normalized, std::span<double> raw_grad) const {
    if (grad_normalized.rows != vocab_ || grad_normalized.cols != dim_ ||
        raw_grad.size() != raw_.size())
        throw std::invalid_argument("normalized_backward: shape mismatch");
    const double scale = std::sqrt(static_cast<double>(dim_));
    for (int i = 0; i < vocab_; ++i) {
        const double* x = raw_.row_ptr(i);
        const double* g = grad_normalized.row_ptr(i);
        double* out = raw_grad.data() + static_cast<size_t>(i) * dim_;
        const double n = l2_norm(raw_.row(i));
        if (n < kZeroRowThreshold)
            throw std::runtime_error("normalized_backward: near-zero raw row " + std::to_string(i));
        // y = scale * x / ||x||  =>  dx = (scale/||x||) * (g - (g.u) u), u = x/||x||
        double gu = 0.0;
        for (int j = 0; j < dim_; ++j) gu += g[j] * x[j] / n;
        for (int j = 0; j < dim_; ++j) out[j] += (scale / n) * (g[j] - gu * x[j] / n);
    }
}

Mat corrupt(const Mat& x0, double t, RngStream& rng) {
    if (t < 0.0) throw std::invalid_argument("corrupt: t must be non-negative");
    Mat out = x0;
    for (double& v : out.a) v += t * rng.gaussian();
    return out;
}

Mat input_scale(const Mat& x, double t) {
    Mat out = x;
    input_scale_inplace(out, t);
    return out;
}

void input_scale_inplace(Mat& x, double t) {
    if (t < 0.0) throw std::invalid_argument("input_scale: t must be non-negative");
    const double f = 1.0 / std::sqrt(t * t + 1.0);
    for (double& v : x.a) v *= f;
}

}  // namespace cdcd

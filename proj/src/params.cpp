#include "cdcd/params.hpp"

#include <cmath>
#include <stdexcept>

namespace cdcd {

void AdamState::step(std::span<std::span<double>> params, std::span<std::span<const double>> grads) {
    if (params.size() != grads.size()) throw std::invalid_argument("AdamState: group size mismatch");
    size_t total = 0;
    for (size_t k = 0; k < params.size(); ++k) {
        if (params[k].size() != grads[k].size())
            throw std::invalid_argument("AdamState: span size mismatch");
        total += params[k].size();
    }
    if (total != m_.size()) throw std::invalid_argument("AdamState: parameter count mismatch");

    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    size_t off = 0;
    for (size_t k = 0; k < params.size(); ++k) {
        std::span<double> p = params[k];
        std::span<const double> g = grads[k];
        for (size_t i = 0; i < p.size(); ++i) {
            double& m = m_[off + i];
            double& v = v_[off + i];
            m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g[i];
            v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g[i] * g[i];
            const double mhat = m / bc1;
            const double vhat = v / bc2;
            p[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
        off += p.size();
    }
}

double clip_global_norm(std::span<std::span<double>> grads, double max_norm) {
    double sq = 0.0;
    for (auto g : grads)
        for (double x : g) sq += x * x;
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double f = max_norm / norm;
        for (auto g : grads)
            for (double& x : g) x *= f;
    }
    return norm;
}

}  // namespace cdcd

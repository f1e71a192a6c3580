#include "cdcd/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace cdcd {

namespace {

uint64_t splitmix64(uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

}  // namespace

RngStream::RngStream(uint64_t seed, uint64_t stream_id) : seed_(seed), stream_id_(stream_id) {
    key_ = splitmix64(splitmix64(seed) ^ splitmix64(stream_id ^ 0xA02BDBF7BB3C0A7ull));
}

uint64_t RngStream::raw_u64() {
    uint64_t v = splitmix64(key_ + counter_ * 0x9E3779B97F4A7C15ull);
    ++counter_;
    return v;
}

double RngStream::uniform() {
    return static_cast<double>(raw_u64() >> 11) * 0x1.0p-53;
}

double RngStream::gaussian() {
    // u1 in (0, 1] so the log is finite.
    const double u1 = static_cast<double>((raw_u64() >> 11) + 1) * 0x1.0p-53;
    const double u2 = static_cast<double>(raw_u64() >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

void RngStream::gaussian_fill(std::span<double> out) {
    for (double& x : out) x = gaussian();
}

double log_sum_exp(std::span<const double> v) {
    if (v.empty()) throw std::invalid_argument("log_sum_exp: empty input");
    double m = v[0];
    for (double x : v) m = std::max(m, x);
    if (!std::isfinite(m)) return m;  // all -inf, or a +inf/nan present
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

std::vector<double> low_discrepancy_uniforms(RngStream& rng, int batch) {
    if (batch < 1) throw std::invalid_argument("low_discrepancy_uniforms: batch must be >= 1");
    const double u0 = rng.uniform();
    std::vector<double> out(static_cast<size_t>(batch));
    for (int i = 0; i < batch; ++i) out[i] = (static_cast<double>(i) + u0) / batch;
    return out;
}

void ema_update(std::span<double> accum, std::span<const double> target, double decay) {
    if (accum.size() != target.size()) throw std::invalid_argument("ema_update: length mismatch");
    if (decay < 0.0 || decay >= 1.0) throw std::invalid_argument("ema_update: decay must be in [0,1)");
    for (size_t i = 0; i < accum.size(); ++i)
        accum[i] = decay * accum[i] + (1.0 - decay) * target[i];
}

std::vector<GradCheckReport> finite_diff_check(std::span<ParamBlock> blocks,
                                               const std::function<double()>& loss,
                                               double eps) {
    if (eps <= 0.0) throw std::invalid_argument("finite_diff_check: eps must be positive");
    std::vector<GradCheckReport> reports;
    reports.reserve(blocks.size());
    for (ParamBlock& blk : blocks) {
        GradCheckReport rep;
        rep.parameter_name = blk.name;
        for (size_t i = 0; i < blk.values.size(); ++i) {
            const double orig = blk.values[i];
            blk.values[i] = orig + eps;
            const double lp = loss();
            blk.values[i] = orig - eps;
            const double lm = loss();
            blk.values[i] = orig;
            double rel;
            if (!std::isfinite(lp) || !std::isfinite(lm)) {
                rel = std::numeric_limits<double>::infinity();
            } else {
                const double g_fd = (lp - lm) / (2.0 * eps);
                const double g = blk.analytic_grad[i];
                rel = std::abs(g_fd - g) / std::max({std::abs(g_fd), std::abs(g), 1e-12});
            }
            if (rel > rep.max_rel_err || rep.worst_index < 0) {
                rep.max_rel_err = rel;
                rep.worst_index = static_cast<int>(i);
            }
        }
        reports.push_back(std::move(rep));
    }
    return reports;
}

}  // namespace cdcd

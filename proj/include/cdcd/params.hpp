#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace cdcd {

struct ParamInfo {
    std::string name;
    int rows = 0;
    int cols = 0;
    size_t offset = 0;
    bool trainable = true;
};

// Flat parameter storage with a named manifest. Offsets stay valid because the
// backing vector only grows during construction.
class ParamStore {
 public:
    size_t add(const std::string& name, int rows, int cols, bool trainable = true) {
        ParamInfo info{name, rows, cols, values_.size(), trainable};
        infos_.push_back(info);
        values_.resize(values_.size() + static_cast<size_t>(rows) * cols, 0.0);
        return info.offset;
    }

    double* data(size_t offset) { return values_.data() + offset; }
    const double* data(size_t offset) const { return values_.data() + offset; }
    std::span<double> slice(size_t offset, size_t n) { return {values_.data() + offset, n}; }
    std::span<const double> slice(size_t offset, size_t n) const { return {values_.data() + offset, n}; }
    std::span<double> all() { return values_; }
    std::span<const double> all() const { return values_; }
    size_t size() const { return values_.size(); }
    const std::vector<ParamInfo>& manifest() const { return infos_; }

 private:
    std::vector<double> values_;
    std::vector<ParamInfo> infos_;
};

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double eps = 1e-8;
};

// Standard Adam with bias correction, no weight decay. Operates on a group of
// parameter spans so embeddings and network weights share one optimizer.
class AdamState {
 public:
    AdamState() = default;
    AdamState(size_t n, AdamConfig cfg) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

    void step(std::span<std::span<double>> params, std::span<std::span<const double>> grads);
    void step(std::span<double> params, std::span<const double> grads) {
        std::span<double> p[1] = {params};
        std::span<const double> g[1] = {grads};
        step(std::span<std::span<double>>(p, 1), std::span<std::span<const double>>(g, 1));
    }

    const AdamConfig& config() const { return cfg_; }
    std::span<double> m() { return m_; }
    std::span<double> v() { return v_; }
    std::span<const double> m() const { return m_; }
    std::span<const double> v() const { return v_; }
    int64_t step_count() const { return t_; }
    void set_step_count(int64_t t) { t_ = t; }
    size_t size() const { return m_.size(); }

 private:
    AdamConfig cfg_;
    std::vector<double> m_;
    std::vector<double> v_;
    int64_t t_ = 0;
};

// Scales the group so its global L2 norm is at most max_norm; returns the
// pre-clip norm. max_norm <= 0 disables clipping.
double clip_global_norm(std::span<std::span<double>> grads, double max_norm);

}  // namespace cdcd

#pragma once

#include <span>
#include <string>
#include <vector>

#include "cdcd/mat.hpp"
#include "cdcd/numerics.hpp"

namespace cdcd {

struct Vocabulary {
    std::vector<std::string> tokens;
    int size() const { return static_cast<int>(tokens.size()); }
};

// Learnable token embeddings. The raw parameters vary freely; every consumer
// goes through the normalized view, whose rows have L2 norm exactly sqrt(d).
class EmbeddingTable {
 public:
    EmbeddingTable(int vocab, int dim, double init_scale, RngStream& rng);

    int vocab() const { return vocab_; }
    int dim() const { return dim_; }
    double init_scale() const { return init_scale_; }

    std::span<double> raw() { return raw_.a; }
    std::span<const double> raw() const { return raw_.a; }

    // Row i = sqrt(d) * raw_i / ||raw_i||. Throws if a raw row is near zero.
    Mat normalized() const;

    // Accumulates dL/draw into raw_grad given dL/dnormalized (both V x d flat).
    void normalized_backward(const Mat& grad_normalized, std::span<double> raw_grad) const;

 private:
    int vocab_;
    int dim_;
    double init_scale_;
    Mat raw_;
};

// x0 + t * eps with eps i.i.d. standard normal.
Mat corrupt(const Mat& x0, double t, RngStream& rng);

// Every component multiplied by 1 / sqrt(t^2 + 1).
Mat input_scale(const Mat& x, double t);
void input_scale_inplace(Mat& x, double t);

}  // namespace cdcd

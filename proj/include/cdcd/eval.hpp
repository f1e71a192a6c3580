#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cdcd/embedding.hpp"
#include "cdcd/mat.hpp"
#include "cdcd/numerics.hpp"
#include "cdcd/sampler.hpp"
#include "cdcd/score.hpp"

namespace cdcd {

// Exact synthetic generator standing in for a corpus: i.i.d. tokens or a
// first-order Markov chain with known transition matrix.
struct SyntheticSource {
    enum class Kind { iid, markov };
    Kind kind = Kind::iid;
    std::vector<double> pi;  // iid token probabilities, or the initial distribution
    Mat transition;          // V x V row-stochastic (markov only)
    Vocabulary vocab;

    static SyntheticSource make_iid(std::vector<double> probs);
    static SyntheticSource make_markov(Mat transition, std::vector<double> initial);

    int vocab_size() const { return vocab.size(); }
    std::vector<int> sample_sequence(int seq_len, RngStream& rng) const;
    // Stationary distribution of the chain (power iteration); pi for iid.
    std::vector<double> stationary() const;
    // iid: H(pi). markov: -sum_i mu_i sum_j P_ij ln P_ij.
    double entropy_rate() const;
    void validate() const;
};

// Entropy (nats) of the empirical token frequency distribution.
double unigram_entropy(const std::vector<std::vector<int>>& samples);

// Mean -log p of the samples under the generator, nats per token. A zero-
// probability token or transition yields +infinity.
double source_nll(const SyntheticSource& source, const std::vector<std::vector<int>>& samples);

// 0.5 * sum_i |empirical_i - truth_i| over the token marginal.
double marginal_tv(const std::vector<std::vector<int>>& samples, std::span<const double> truth);

// Empirical joint distribution of adjacent token pairs, V x V.
Mat bigram_joint(const std::vector<std::vector<int>>& samples, int vocab);

struct MetricsReport {
    double unigram_entropy_nats = 0.0;
    double tv_to_truth = 0.0;
    double nll_truth = 0.0;
    int64_t n_samples = 0;
};

struct ConvergenceResult {
    std::vector<int> ns;
    std::vector<double> errors;  // mean endpoint L2 distance to the reference
    double slope = 0.0;          // fitted order: -d log(err) / d log(N)
};

// Integrates the oracle probability-flow ODE on linearly spaced grids for each
// N and compares endpoints against an Euler reference with ref_n steps. The
// initial noise draws are shared across all N.
ConvergenceResult convergence_study(const OracleSpec& oracle, Solver solver, std::span<const int> ns,
                                    int ref_n, double t_min, double t_max, int n_trajectories,
                                    uint64_t seed);

}  // namespace cdcd

#include "cdcd/eval.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace cdcd {

namespace {

void check_distribution(std::span<const double> p, const std::string& what) {
    double s = 0.0;
    for (double x : p) {
        if (x < 0.0) throw std::invalid_argument(what + ": negative probability");
        s += x;
    }
    if (std::abs(s - 1.0) > 1e-8) throw std::invalid_argument(what + ": does not sum to 1");
}

int draw_categorical(std::span<const double> p, RngStream& rng) {
    const double u = rng.uniform();
    double cum = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        cum += p[i];
        if (u < cum) return static_cast<int>(i);
    }
    return static_cast<int>(p.size()) - 1;
}

Vocabulary index_vocab(int v) {
    Vocabulary out;
    for (int i = 0; i < v; ++i) out.tokens.push_back(std::to_string(i));
    return out;
}

}  // namespace

SyntheticSource SyntheticSource::make_iid(std::vector<double> probs) {
    SyntheticSource s;
    s.kind = Kind::iid;
    s.pi = std::move(probs);
    s.vocab = index_vocab(static_cast<int>(s.pi.size()));
    s.validate();
    return s;
}

SyntheticSource SyntheticSource::make_markov(Mat transition, std::vector<double> initial) {
    SyntheticSource s;
    s.kind = Kind::markov;
    s.transition = std::move(transition);
    s.pi = std::move(initial);
    s.vocab = index_vocab(s.transition.rows);
    s.validate();
    return s;
}

void SyntheticSource::validate() const {
    check_distribution(pi, "SyntheticSource initial/prior");
    if (kind == Kind::markov) {
        if (transition.rows != transition.cols || transition.rows != static_cast<int>(pi.size()))
            throw std::invalid_argument("SyntheticSource: transition shape mismatch");
        for (int i = 0; i < transition.rows; ++i) check_distribution(transition.row(i), "SyntheticSource row");
    }
}

std::vector<int> SyntheticSource::sample_sequence(int seq_len, RngStream& rng) const {
    if (seq_len < 1) throw std::invalid_argument("sample_sequence: seq_len must be >= 1");
    std::vector<int> out(static_cast<size_t>(seq_len));
    out[0] = draw_categorical(pi, rng);
    for (int i = 1; i < seq_len; ++i) {
        if (kind == Kind::iid)
            out[static_cast<size_t>(i)] = draw_categorical(pi, rng);
        else
            out[static_cast<size_t>(i)] = draw_categorical(transition.row(out[static_cast<size_t>(i) - 1]), rng);
    }
    return out;
}

std::vector<double> SyntheticSource::stationary() const {
    if (kind == Kind::iid) return pi;
    const int v = transition.rows;
    std::vector<double> mu(pi), next(static_cast<size_t>(v));
    for (int iter = 0; iter < 10000; ++iter) {
        std::fill(next.begin(), next.end(), 0.0);
        for (int i = 0; i < v; ++i)
            for (int j = 0; j < v; ++j) next[static_cast<size_t>(j)] += mu[static_cast<size_t>(i)] * transition(i, j);
        double diff = 0.0;
        for (int j = 0; j < v; ++j) diff += std::abs(next[static_cast<size_t>(j)] - mu[static_cast<size_t>(j)]);
        mu.swap(next);
        if (diff < 1e-14) break;
    }
    return mu;
}

double SyntheticSource::entropy_rate() const {
    if (kind == Kind::iid) {
        double h = 0.0;
        for (double p : pi)
            if (p > 0.0) h -= p * std::log(p);
        return h;
    }
    const std::vector<double> mu = stationary();
    double h = 0.0;
    for (int i = 0; i < transition.rows; ++i)
        for (int j = 0; j < transition.cols; ++j) {
            const double p = transition(i, j);
            if (p > 0.0) h -= mu[static_cast<size_t>(i)] * p * std::log(p);
        }
    return h;
}

double unigram_entropy(const std::vector<std::vector<int>>& samples) {
    int64_t total = 0;
    std::vector<int64_t> counts;
    for (const auto& seq : samples)
        for (int tok : seq) {
            if (tok < 0) throw std::invalid_argument("unigram_entropy: negative token");
            if (tok >= static_cast<int>(counts.size())) counts.resize(static_cast<size_t>(tok) + 1, 0);
            ++counts[static_cast<size_t>(tok)];
            ++total;
        }
    if (total == 0) throw std::invalid_argument("unigram_entropy: no tokens");
    double h = 0.0;
    for (int64_t c : counts) {
        if (c == 0) continue;
        const double p = static_cast<double>(c) / static_cast<double>(total);
        h -= p * std::log(p);
    }
    return h;
}

double source_nll(const SyntheticSource& source, const std::vector<std::vector<int>>& samples) {
    const int v = source.vocab_size();
    double total = 0.0;
    int64_t n = 0;
    for (const auto& seq : samples) {
        for (size_t i = 0; i < seq.size(); ++i) {
            const int tok = seq[i];
            if (tok < 0 || tok >= v) throw std::invalid_argument("source_nll: token outside vocabulary");
            double p;
            if (source.kind == SyntheticSource::Kind::iid || i == 0)
                p = source.pi[static_cast<size_t>(tok)];
            else
                p = source.transition(seq[i - 1], tok);
            total += p > 0.0 ? -std::log(p) : std::numeric_limits<double>::infinity();
            ++n;
        }
    }
    if (n == 0) throw std::invalid_argument("source_nll: no tokens");
    return total / static_cast<double>(n);
}

double marginal_tv(const std::vector<std::vector<int>>& samples, std::span<const double> truth) {
    std::vector<double> counts(truth.size(), 0.0);
    double total = 0.0;
    for (const auto& seq : samples)
        for (int tok : seq) {
            if (tok >= 0 && tok < static_cast<int>(truth.size())) counts[static_cast<size_t>(tok)] += 1.0;
            total += 1.0;
        }
    double tv = 0.0;
    for (size_t i = 0; i < truth.size(); ++i)
        tv += std::abs((total > 0.0 ? counts[i] / total : 0.0) - truth[i]);
    return 0.5 * tv;
}

Mat bigram_joint(const std::vector<std::vector<int>>& samples, int vocab) {
    Mat joint(vocab, vocab);
    double total = 0.0;
    for (const auto& seq : samples)
        for (size_t i = 0; i + 1 < seq.size(); ++i) {
            joint(seq[i], seq[i + 1]) += 1.0;
            total += 1.0;
        }
    if (total > 0.0)
        for (double& x : joint.a) x /= total;
    return joint;
}

ConvergenceResult convergence_study(const OracleSpec& oracle, Solver solver, std::span<const int> ns,
                                    int ref_n, double t_min, double t_max, int n_trajectories,
                                    uint64_t seed) {
    oracle.validate();
    const int d = oracle.dim();
    RngStream rng(seed, 0xC0);
    std::vector<Mat> starts;
    for (int i = 0; i < n_trajectories; ++i) {
        Mat x(1, d);
        for (double& v : x.a) v = t_max * rng.gaussian();
        starts.push_back(std::move(x));
    }

    ScoreField field = [&](const Mat& x, double t) {
        Mat s(x.rows, x.cols);
        for (int r = 0; r < x.rows; ++r) {
            const std::vector<double> sc = oracle_score(oracle, x.row(r), t);
            std::copy(sc.begin(), sc.end(), s.row_ptr(r));
        }
        return s;
    };

    auto integrate = [&](const Mat& x0, int n, Solver how) {
        Mat x = x0;
        for (int k = 0; k < n; ++k) {
            const double t_k = t_max + (t_min - t_max) * static_cast<double>(k) / n;
            const double t_next = t_max + (t_min - t_max) * static_cast<double>(k + 1) / n;
            x = how == Solver::euler ? euler_step(x, t_k, t_next, field)
                                     : heun_step(x, t_k, t_next, field);
        }
        return x;
    };

    std::vector<Mat> refs;
    for (const Mat& x0 : starts) refs.push_back(integrate(x0, ref_n, Solver::euler));

    ConvergenceResult result;
    for (int n : ns) {
        double err = 0.0;
        for (size_t i = 0; i < starts.size(); ++i) {
            const Mat x = integrate(starts[i], n, solver);
            double sq = 0.0;
            for (size_t j = 0; j < x.size(); ++j) {
                const double dji = x.a[j] - refs[i].a[j];
                sq += dji * dji;
            }
            err += std::sqrt(sq);
        }
        result.ns.push_back(n);
        result.errors.push_back(err / static_cast<double>(starts.size()));
    }

    // least-squares slope of log(err) against log(N); report the order
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    const int m = static_cast<int>(result.ns.size());
    for (int i = 0; i < m; ++i) {
        const double x = std::log(static_cast<double>(result.ns[static_cast<size_t>(i)]));
        const double y = std::log(result.errors[static_cast<size_t>(i)]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    result.slope = -(m * sxy - sx * sy) / (m * sxx - sx * sx);
    return result;
}

}  // namespace cdcd

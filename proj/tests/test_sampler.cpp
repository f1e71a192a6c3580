#include <cmath>
#include <numbers>
#include <vector>

#include "doctest.h"

#include "cdcd/eval.hpp"
#include "cdcd/numerics.hpp"
#include "cdcd/sampler.hpp"
#include "cdcd/warp.hpp"

using namespace cdcd;

namespace {

OracleSpec make_spec(int v, int d, uint64_t seed, bool uniform_prior = false) {
    RngStream rng(seed, 0);
    OracleSpec spec;
    spec.embeddings.resize(v, d);
    const double scale = std::sqrt(static_cast<double>(d));
    for (int i = 0; i < v; ++i) {
        double norm = 0.0;
        for (int j = 0; j < d; ++j) {
            spec.embeddings(i, j) = rng.gaussian();
            norm += spec.embeddings(i, j) * spec.embeddings(i, j);
        }
        norm = std::sqrt(norm);
        for (int j = 0; j < d; ++j) spec.embeddings(i, j) *= scale / norm;
    }
    if (uniform_prior) {
        spec.prior.assign(static_cast<size_t>(v), 1.0 / v);
    } else {
        spec.prior.resize(static_cast<size_t>(v));
        double total = 0.0;
        for (int i = 0; i < v; ++i) {
            spec.prior[static_cast<size_t>(i)] = static_cast<double>(v - i);
            total += spec.prior[static_cast<size_t>(i)];
        }
        for (double& p : spec.prior) p /= total;
    }
    return spec;
}

SamplerConfig oracle_sampler(int n_steps) {
    SamplerConfig cfg;
    cfg.solver = Solver::euler;
    cfg.n_steps = n_steps;
    cfg.spacing = Spacing::rho;
    cfg.rho = 7.0;
    return cfg;
}

}  // namespace

TEST_SUITE_BEGIN("sampler");

TEST_CASE("step_grid: endpoints exact and strictly decreasing for every spacing") {
    WarpCdf warp(8, 1e-4, 1.0, 300.0, 0.9);
    for (Spacing spacing : {Spacing::warped, Spacing::rho, Spacing::warped_rho}) {
        SamplerConfig cfg;
        cfg.n_steps = 17;
        cfg.spacing = spacing;
        const auto grid = step_grid(cfg, warp, 1.0, 300.0);
        REQUIRE(grid.size() == 18);
        CHECK(grid.front() == 300.0);
        CHECK(grid.back() == 1.0);
        for (size_t k = 0; k + 1 < grid.size(); ++k) CHECK(grid[k] > grid[k + 1]);
    }
}

TEST_CASE("step_grid: rho(7) with N=2 has its middle step near 30.5") {
    WarpCdf warp(4, 1e-4, 1.0, 300.0, 0.9);
    SamplerConfig cfg;
    cfg.n_steps = 2;
    cfg.spacing = Spacing::rho;
    cfg.rho = 7.0;
    const auto grid = step_grid(cfg, warp, 1.0, 300.0);
    const double a = std::pow(300.0, 1.0 / 7.0);
    const double expected = std::pow(a + 0.5 * (1.0 - a), 7.0);
    CHECK(grid[1] == doctest::Approx(expected).epsilon(1e-12));
    CHECK(grid[1] == doctest::Approx(30.5).epsilon(0.01));
}

TEST_CASE("step_grid: identity warp makes the warped grid linear in t") {
    WarpCdf warp(16, 1e-4, 1.0, 300.0, 0.9);
    SamplerConfig cfg;
    cfg.n_steps = 10;
    cfg.spacing = Spacing::warped;
    const auto grid = step_grid(cfg, warp, 1.0, 300.0);
    for (int k = 0; k <= 10; ++k) {
        const double expect = 300.0 + (1.0 - 300.0) * static_cast<double>(k) / 10.0;
        CHECK(grid[static_cast<size_t>(k)] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("euler_step: zero score leaves the state unchanged") {
    Mat x(2, 3, 1.5);
    const auto s = euler_step(x, 2.0, 1.5, [](const Mat& xs, double) { return Mat(xs.rows, xs.cols); });
    CHECK(s.a == x.a);
}

TEST_CASE("euler_step: hand case from the two-token oracle") {
    // x = [0.5, 0], t: 1 -> 0.9, score = (x0_hat - x) with x0_hat = tanh(1/2)... frozen value
    OracleSpec spec;
    spec.prior = {0.5, 0.5};
    spec.embeddings.resize(2, 2);
    spec.embeddings(0, 0) = 1.0;
    spec.embeddings(1, 0) = -1.0;
    Mat x(1, 2);
    x(0, 0) = 0.5;
    ScoreField field = [&](const Mat& xs, double t) {
        Mat s(1, 2);
        const auto sc = oracle_score(spec, xs.row(0), t);
        s(0, 0) = sc[0];
        s(0, 1) = sc[1];
        return s;
    };
    const Mat next = euler_step(x, 1.0, 0.9, field);
    const double x0_hat = 2.0 / (1.0 + std::exp(-1.0)) - 1.0;  // 0.46211715726...
    const double expect = 0.5 + 0.1 * (x0_hat - 0.5);
    CHECK(next(0, 0) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(next(0, 0) == doctest::Approx(0.49621).epsilon(1e-4));
    CHECK(next(0, 1) == 0.0);
}

TEST_CASE("heun_step: equals euler when the drift is state- and time-free") {
    // score(x, t) = v / -t makes d = -t * score = v constant, so d1 = d2
    Mat v(1, 2);
    v(0, 0) = 0.7;
    v(0, 1) = -0.2;
    ScoreField field = [&](const Mat&, double t) {
        Mat s = v;
        for (double& e : s.a) e /= -t;
        return s;
    };
    Mat x(1, 2, 0.3);
    const Mat he = heun_step(x, 3.0, 2.0, field);
    const Mat eu = euler_step(x, 3.0, 2.0, field);
    CHECK(he(0, 0) == doctest::Approx(eu(0, 0)).epsilon(1e-14));
    CHECK(he(0, 1) == doctest::Approx(eu(0, 1)).epsilon(1e-14));
}

TEST_CASE("heun_step: zero score is the identity") {
    Mat x(2, 2, -0.4);
    const auto s = heun_step(x, 2.0, 1.0, [](const Mat& xs, double) { return Mat(xs.rows, xs.cols); });
    CHECK(s.a == x.a);
}

TEST_CASE("truncate_posterior: identity, nucleus hand case, temperature limit") {
    const std::vector<double> probs{0.5, 0.3, 0.15, 0.05};
    const auto same = truncate_posterior(probs, 1.0, 1.0);
    CHECK(same == probs);

    const auto nuc = truncate_posterior(probs, 1.0, 0.8);
    CHECK(nuc[0] == doctest::Approx(0.625).epsilon(1e-12));
    CHECK(nuc[1] == doctest::Approx(0.375).epsilon(1e-12));
    CHECK(nuc[2] == 0.0);
    CHECK(nuc[3] == 0.0);

    const auto sharp = truncate_posterior(probs, 0.01, 1.0);
    CHECK(sharp[0] == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("truncate_posterior: ties at the nucleus boundary break by token index") {
    const std::vector<double> probs{0.25, 0.25, 0.25, 0.25};
    const auto nuc = truncate_posterior(probs, 1.0, 0.5);
    CHECK(nuc[0] == doctest::Approx(0.5));
    CHECK(nuc[1] == doctest::Approx(0.5));
    CHECK(nuc[2] == 0.0);
    CHECK(nuc[3] == 0.0);
}

TEST_CASE("sample: fixed seed and config give identical tokens") {
    const OracleSpec spec = make_spec(6, 3, 5);
    const OracleDenoiser den(spec);
    WarpCdf warp(8, 1e-4, 0.1, 300.0, 0.9);
    Conditioning cond;
    cond.tokens.assign(4, 0);
    cond.mask.assign(4, 1);
    const SamplerConfig cfg = oracle_sampler(40);
    RngStream r1(77, 0x5A00), r2(77, 0x5A00);
    const auto a = sample(den, spec.embeddings, warp, cfg, cond, 0.1, 300.0, r1);
    const auto b = sample(den, spec.embeddings, warp, cfg, cond, 0.1, 300.0, r2);
    CHECK(a.tokens == b.tokens);
}

TEST_CASE("sample: clean positions hold their conditioning throughout") {
    const OracleSpec spec = make_spec(6, 3, 9);
    const OracleDenoiser den(spec);
    WarpCdf warp(8, 1e-4, 0.1, 300.0, 0.9);
    Conditioning cond;
    cond.tokens = {2, 0, 5, 0};
    cond.mask = {0, 1, 0, 1};
    SamplerConfig cfg = oracle_sampler(30);
    cfg.record_trajectory = true;
    RngStream rng(11, 0x5A01);
    const auto res = sample(den, spec.embeddings, warp, cfg, cond, 0.1, 300.0, rng);
    CHECK(res.tokens[0] == 2);
    CHECK(res.tokens[2] == 5);
    for (const Mat& state : res.trajectory.states)
        for (int j = 0; j < 3; ++j) {
            CHECK(state(0, j) == 0.0);  // clean rows of the ODE state stay zero
            CHECK(state(2, j) == 0.0);
        }
}

TEST_CASE("sample: guidance is a no-op when the denoiser ignores conditioning") {
    const OracleSpec spec = make_spec(5, 3, 13);
    const OracleDenoiser den(spec);
    WarpCdf warp(8, 1e-4, 0.1, 300.0, 0.9);
    Conditioning cond;
    cond.tokens.assign(4, 0);
    cond.mask.assign(4, 1);
    SamplerConfig base = oracle_sampler(25);
    SamplerConfig guided = base;
    guided.guidance = 2.0;  // oracle cond == uncond, so cfg_combine is the identity
    RngStream r1(5, 0x5A02), r2(5, 0x5A02);
    const auto a = sample(den, spec.embeddings, warp, base, cond, 0.1, 300.0, r1);
    const auto b = sample(den, spec.embeddings, warp, guided, cond, 0.1, 300.0, r2);
    CHECK(a.tokens == b.tokens);
}

TEST_CASE("sample: initial noise scale shrinks the starting state") {
    const OracleSpec spec = make_spec(4, 4, 17);
    const OracleDenoiser den(spec);
    WarpCdf warp(8, 1e-4, 0.1, 300.0, 0.9);
    Conditioning cond;
    cond.tokens.assign(8, 0);
    cond.mask.assign(8, 1);
    SamplerConfig cfg = oracle_sampler(1);
    cfg.record_trajectory = true;
    cfg.sigma_init = 0.5;
    double sq = 0.0;
    int n = 0;
    for (int i = 0; i < 100; ++i) {
        RngStream rng(100 + static_cast<uint64_t>(i), 0x5A03);
        const auto res = sample(den, spec.embeddings, warp, cfg, cond, 0.1, 300.0, rng);
        for (double v : res.trajectory.states[0].a) {
            sq += v * v;
            ++n;
        }
    }
    const double std_hat = std::sqrt(sq / n);
    CHECK(std_hat == doctest::Approx(0.5 * 300.0).epsilon(0.05));
}

TEST_CASE("sample: oracle marginal recovery at small scale") {
    // four equally spaced directions on the radius-sqrt(2) circle: the mixture
    // components stay resolvable at t_min so decoding is near exact
    OracleSpec spec;
    spec.prior = {0.4, 0.3, 0.2, 0.1};
    spec.embeddings.resize(4, 2);
    for (int i = 0; i < 4; ++i) {
        const double ang = 2.0 * std::numbers::pi * i / 4.0;
        spec.embeddings(i, 0) = std::sqrt(2.0) * std::cos(ang);
        spec.embeddings(i, 1) = std::sqrt(2.0) * std::sin(ang);
    }
    const OracleDenoiser den(spec);
    WarpCdf warp(8, 1e-4, 0.1, 300.0, 0.9);
    Conditioning cond;
    cond.tokens.assign(2, 0);
    cond.mask.assign(2, 1);
    const SamplerConfig cfg = oracle_sampler(50);
    std::vector<std::vector<int>> samples;
    for (int i = 0; i < 2000; ++i) {
        RngStream rng(1234, 0x6000 + static_cast<uint64_t>(i));
        samples.push_back(sample(den, spec.embeddings, warp, cfg, cond, 0.1, 300.0, rng).tokens);
    }
    CHECK(marginal_tv(samples, spec.prior) < 0.05);
}

TEST_CASE("sample: argmax and nearest-embedding decodes agree on the oracle task") {
    const OracleSpec spec = make_spec(8, 4, 25);
    const OracleDenoiser den(spec);
    WarpCdf warp(8, 1e-4, 0.1, 300.0, 0.9);
    Conditioning cond;
    cond.tokens.assign(4, 0);
    cond.mask.assign(4, 1);
    SamplerConfig argmax_cfg = oracle_sampler(200);
    SamplerConfig nearest_cfg = argmax_cfg;
    nearest_cfg.decode = Decode::nearest_embedding;
    int agree = 0, total = 0;
    for (int i = 0; i < 500; ++i) {
        RngStream r1(99, 0x7000 + static_cast<uint64_t>(i));
        RngStream r2(99, 0x7000 + static_cast<uint64_t>(i));
        const auto a = sample(den, spec.embeddings, warp, argmax_cfg, cond, 0.1, 300.0, r1);
        const auto b = sample(den, spec.embeddings, warp, nearest_cfg, cond, 0.1, 300.0, r2);
        for (int r = 0; r < 4; ++r) {
            agree += a.tokens[static_cast<size_t>(r)] == b.tokens[static_cast<size_t>(r)] ? 1 : 0;
            ++total;
        }
    }
    CHECK(static_cast<double>(agree) / total >= 0.99);
}

namespace {

// Exact per-position posteriors for a Markov source under Gaussian corruption,
// via forward-backward with Gaussian emissions. Used as a joint-structure
// oracle for the sampler: the probability flow driven by these posteriors must
// reproduce the source's bigram statistics.
class HmmOracleDenoiser : public Denoiser {
 public:
    HmmOracleDenoiser(Mat transition, std::vector<double> initial, Mat emb)
        : p_(std::move(transition)), pi0_(std::move(initial)), emb_(std::move(emb)) {}
    int vocab() const override { return p_.rows; }
    Mat forward(const DenoiserInput& in) const override {
        const int L = in.x.rows, v = p_.rows, d = emb_.cols;
        const double inv2t2 = 1.0 / (2.0 * in.t * in.t);
        Mat logem(L, v);
        for (int r = 0; r < L; ++r)
            for (int s = 0; s < v; ++s) {
                double sq = 0.0;
                for (int j = 0; j < d; ++j) {
                    const double dd = in.x(r, j) - emb_(s, j);
                    sq += dd * dd;
                }
                logem(r, s) = -sq * inv2t2;
            }
        Mat alpha(L, v), beta(L, v);
        for (int s = 0; s < v; ++s) alpha(0, s) = std::log(pi0_[static_cast<size_t>(s)]) + logem(0, s);
        std::vector<double> acc(static_cast<size_t>(v));
        for (int r = 1; r < L; ++r)
            for (int s = 0; s < v; ++s) {
                for (int q = 0; q < v; ++q) acc[static_cast<size_t>(q)] = alpha(r - 1, q) + std::log(p_(q, s));
                alpha(r, s) = log_sum_exp(acc) + logem(r, s);
            }
        for (int r = L - 2; r >= 0; --r)
            for (int s = 0; s < v; ++s) {
                for (int q = 0; q < v; ++q)
                    acc[static_cast<size_t>(q)] = std::log(p_(s, q)) + logem(r + 1, q) + beta(r + 1, q);
                beta(r, s) = log_sum_exp(acc);
            }
        Mat logits(L, v);
        for (int r = 0; r < L; ++r)
            for (int s = 0; s < v; ++s) logits(r, s) = alpha(r, s) + beta(r, s);
        return logits;
    }

 private:
    Mat p_;
    std::vector<double> pi0_;
    Mat emb_;
};

}  // namespace

TEST_CASE("sample: exact chain posteriors reproduce the bigram structure") {
    const int L = 8, v = 4, d = 8;
    Mat p(v, v);
    for (int i = 0; i < v; ++i)
        for (int j = 0; j < v; ++j) p(i, j) = (j == (i + 1) % v) ? 0.5 : 1.0 / 6.0;
    RngStream erng(2024, 0);
    Mat emb(v, d);
    for (int i = 0; i < v; ++i) {
        double norm = 0.0;
        for (int j = 0; j < d; ++j) {
            emb(i, j) = erng.gaussian();
            norm += emb(i, j) * emb(i, j);
        }
        norm = std::sqrt(norm);
        for (int j = 0; j < d; ++j) emb(i, j) *= std::sqrt(static_cast<double>(d)) / norm;
    }
    const HmmOracleDenoiser den(p, std::vector<double>(4, 0.25), emb);
    WarpCdf warp(8, 1e-4, 0.1, 300.0, 0.9);
    SamplerConfig cfg = oracle_sampler(100);
    Conditioning cond;
    cond.tokens.assign(static_cast<size_t>(L), 0);
    cond.mask.assign(static_cast<size_t>(L), 1);
    std::vector<std::vector<int>> samples;
    for (int i = 0; i < 500; ++i) {
        RngStream rng(555, 0x9000 + static_cast<uint64_t>(i));
        samples.push_back(sample(den, emb, warp, cfg, cond, 0.1, 300.0, rng).tokens);
    }
    const Mat joint = bigram_joint(samples, v);
    double tv = 0.0;
    for (int i = 0; i < v; ++i)
        for (int j = 0; j < v; ++j) tv += std::abs(joint(i, j) - p(i, j) / 4.0);
    CHECK(0.5 * tv < 0.05);
}

TEST_CASE("sample: non-finite states abort with an error") {
    const OracleSpec spec = make_spec(4, 2, 29);
    const OracleDenoiser den(spec);
    WarpCdf warp(8, 1e-4, 0.1, 300.0, 0.9);
    Conditioning cond;
    cond.tokens.assign(2, 0);
    cond.mask.assign(2, 1);
    SamplerConfig cfg = oracle_sampler(10);
    cfg.score_temp = 1e-300;  // blows the state up to overflow
    RngStream rng(3, 0x5A05);
    CHECK_THROWS_AS((void)sample(den, spec.embeddings, warp, cfg, cond, 0.1, 300.0, rng),
                    std::runtime_error);
}

TEST_SUITE_END();

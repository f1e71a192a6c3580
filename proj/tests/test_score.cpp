#include <cmath>
#include <vector>

#include "doctest.h"

#include "cdcd/numerics.hpp"
#include "cdcd/score.hpp"

using namespace cdcd;

namespace {

// Random normalized-embedding oracle for property tests.
OracleSpec random_spec(int v, int d, RngStream& rng) {
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
    spec.prior.resize(static_cast<size_t>(v));
    double total = 0.0;
    for (double& p : spec.prior) {
        p = -std::log(1.0 - rng.uniform() + 1e-12);
        total += p;
    }
    for (double& p : spec.prior) p /= total;
    return spec;
}

OracleSpec two_token_line() {
    OracleSpec spec;
    spec.prior = {0.5, 0.5};
    spec.embeddings.resize(2, 2);
    spec.embeddings(0, 0) = 1.0;  // norm sqrt(2)? no: the hand examples use unit vectors
    return spec;
}

}  // namespace

TEST_SUITE_BEGIN("score");

TEST_CASE("conditional_score basics") {
    const std::vector<double> x0{1.0, 0.0}, x{0.0, 0.0};
    auto s = conditional_score(x0, x0, 1.0);
    CHECK(s[0] == 0.0);
    CHECK(s[1] == 0.0);
    s = conditional_score(x0, x, 1.0);
    CHECK(s[0] == 1.0);
    const std::vector<double> x0b{2.0, 2.0}, xb{0.0, 0.0};
    s = conditional_score(x0b, xb, 2.0);
    CHECK(s[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(s[1] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK_THROWS(conditional_score(x0, x, 0.0));
}

TEST_CASE("interpolate_x0: one-hot, symmetry and hand expectation") {
    Mat emb(2, 2);
    emb(0, 0) = 1.0;
    emb(1, 0) = -1.0;
    const std::vector<double> onehot{1.0, 0.0};
    auto v = interpolate_x0(onehot, emb);
    CHECK(v[0] == 1.0);
    CHECK(v[1] == 0.0);
    const std::vector<double> uniform{0.5, 0.5};
    v = interpolate_x0(uniform, emb);
    CHECK(v[0] == 0.0);
    const std::vector<double> probs{0.731, 0.269};
    v = interpolate_x0(probs, emb);
    CHECK(v[0] == doctest::Approx(0.462).epsilon(1e-12));
    CHECK(v[1] == 0.0);
}

TEST_CASE("bayes_posterior: hand case p1 = 1/(1+e^-1)") {
    // V=2, e1=[1,0], e2=[-1,0], uniform prior, x=[0.5,0], t=1
    OracleSpec spec = two_token_line();
    spec.embeddings(0, 0) = 1.0;
    spec.embeddings(1, 0) = -1.0;
    const std::vector<double> x{0.5, 0.0};
    const auto probs = bayes_posterior(spec, x, 1.0);
    CHECK(probs[0] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-12));
    CHECK(probs[0] + probs[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("bayes_posterior limits: t -> 0 is one-hot, t huge recovers the prior") {
    RngStream rng(7, 0);
    OracleSpec spec = random_spec(4, 3, rng);
    const std::vector<double> x(spec.embeddings.row(1).begin(), spec.embeddings.row(1).end());
    const auto sharp = bayes_posterior(spec, x, 1e-3);
    CHECK(sharp[1] == doctest::Approx(1.0).epsilon(1e-9));
    const auto flat = bayes_posterior(spec, x, 1e6);
    for (int i = 0; i < 4; ++i)
        CHECK(flat[static_cast<size_t>(i)] ==
              doctest::Approx(spec.prior[static_cast<size_t>(i)]).epsilon(1e-6));
}

TEST_CASE("interpolate_score: hand mixture case and oracle identity") {
    OracleSpec spec = two_token_line();
    spec.embeddings(0, 0) = 1.0;
    spec.embeddings(1, 0) = -1.0;
    const std::vector<double> x{0.5, 0.0};
    const auto post = bayes_posterior(spec, x, 1.0);
    const auto x0 = interpolate_x0(post, spec.embeddings);
    CHECK(x0[0] == doctest::Approx(2.0 / (1.0 + std::exp(-1.0)) - 1.0).epsilon(1e-12));
    const auto s = interpolate_score(post, spec.embeddings, x, 1.0, ScoreMode::plain);
    CHECK(s[0] == doctest::Approx(x0[0] - 0.5).epsilon(1e-12));
    const auto oracle = oracle_score(spec, x, 1.0);
    CHECK(s[0] == doctest::Approx(oracle[0]).epsilon(1e-10));
    CHECK(std::abs(s[1] - oracle[1]) < 1e-12);
}

TEST_CASE("one-hot posterior collapses interpolation to the conditional score") {
    RngStream rng(3, 1);
    OracleSpec spec = random_spec(5, 4, rng);
    std::vector<double> onehot(5, 0.0);
    onehot[2] = 1.0;
    std::vector<double> x(4);
    for (double& v : x) v = rng.gaussian();
    const auto a = interpolate_score(onehot, spec.embeddings, x, 1.7, ScoreMode::plain);
    const auto b = conditional_score(spec.embeddings.row(2), x, 1.7);
    for (int j = 0; j < 4; ++j) CHECK(a[static_cast<size_t>(j)] == b[static_cast<size_t>(j)]);
}

TEST_CASE("affinity: interpolate_score equals conditional_score of interpolate_x0 bitwise") {
    RngStream rng(5, 2);
    for (int rep = 0; rep < 50; ++rep) {
        OracleSpec spec = random_spec(6, 3, rng);
        std::vector<double> x(3);
        for (double& v : x) v = 2.0 * rng.gaussian();
        const double t = 0.1 + 5.0 * rng.uniform();
        const auto post = bayes_posterior(spec, x, t);
        const auto a = interpolate_score(post, spec.embeddings, x, t, ScoreMode::plain);
        const auto b = conditional_score(interpolate_x0(post, spec.embeddings), x, t);
        for (int j = 0; j < 3; ++j) CHECK(a[static_cast<size_t>(j)] == b[static_cast<size_t>(j)]);
    }
}

TEST_CASE("oracle equivalence: interpolated Bayes score equals the analytic mixture score") {
    RngStream rng(11, 3);
    for (int rep = 0; rep < 300; ++rep) {
        const int v = 2 + static_cast<int>(rng.uniform() * 15);
        const int d = 1 + static_cast<int>(rng.uniform() * 8);
        OracleSpec spec = random_spec(std::min(v, 16), std::min(d, 8), rng);
        std::vector<double> x(static_cast<size_t>(spec.dim()));
        for (double& vv : x) vv = 3.0 * rng.gaussian();
        const double t = 0.1 + 299.9 * rng.uniform();
        const auto via_post = interpolate_score(bayes_posterior(spec, x, t), spec.embeddings, x, t,
                                                ScoreMode::plain);
        const auto direct = oracle_score(spec, x, t);
        for (size_t j = 0; j < x.size(); ++j) {
            const double denom = std::max({std::abs(direct[j]), std::abs(via_post[j]), 1e-12});
            if (std::abs(direct[j]) > 1e-12)
                CHECK(std::abs(via_post[j] - direct[j]) / denom < 1e-10);
            else
                CHECK(std::abs(via_post[j] - direct[j]) < 1e-12);
        }
    }
}

TEST_CASE("oracle_score matches finite differences of the log density") {
    RngStream rng(13, 4);
    for (int rep = 0; rep < 20; ++rep) {
        OracleSpec spec = random_spec(6, 4, rng);
        std::vector<double> x(4);
        for (double& vv : x) vv = 2.0 * rng.gaussian();
        const double t = 0.5 + 3.0 * rng.uniform();
        const auto s = oracle_score(spec, x, t);
        const double h = 1e-6;
        for (int j = 0; j < 4; ++j) {
            std::vector<double> xp = x, xm = x;
            xp[static_cast<size_t>(j)] += h;
            xm[static_cast<size_t>(j)] -= h;
            const double fd =
                (oracle_log_density(spec, xp, t) - oracle_log_density(spec, xm, t)) / (2.0 * h);
            CHECK(s[static_cast<size_t>(j)] == doctest::Approx(fd).epsilon(1e-6));
        }
    }
}

TEST_CASE("oracle_score: single component equals the conditional score; symmetry gives zero") {
    OracleSpec one;
    one.prior = {1.0};
    one.embeddings.resize(1, 2);
    one.embeddings(0, 0) = std::sqrt(2.0);
    const std::vector<double> x{0.3, -0.4};
    const auto a = oracle_score(one, x, 2.0);
    const auto b = conditional_score(one.embeddings.row(0), x, 2.0);
    CHECK(a[0] == doctest::Approx(b[0]).epsilon(1e-14));
    CHECK(a[1] == doctest::Approx(b[1]).epsilon(1e-14));

    OracleSpec sym = two_token_line();
    sym.embeddings(0, 0) = 1.0;
    sym.embeddings(1, 0) = -1.0;
    const std::vector<double> mid{0.0, 0.0};
    const auto z = oracle_score(sym, mid, 1.3);
    CHECK(std::abs(z[0]) < 1e-14);
    CHECK(std::abs(z[1]) < 1e-14);
}

TEST_CASE("clamp snaps to the nearest embedding; ties break to the lowest index") {
    RngStream rng(17, 5);
    OracleSpec spec = random_spec(4, 3, rng);
    // posterior dominated by token 2 built so x0_hat is strictly nearest to e2
    std::vector<double> probs{0.02, 0.03, 0.9, 0.05};
    std::vector<double> x(3, 0.0);
    const auto clamped = interpolate_score(probs, spec.embeddings, x, 1.5, ScoreMode::clamp);
    const auto direct = conditional_score(spec.embeddings.row(2), x, 1.5);
    for (int j = 0; j < 3; ++j)
        CHECK(clamped[static_cast<size_t>(j)] == doctest::Approx(direct[static_cast<size_t>(j)]).epsilon(1e-14));

    Mat emb(2, 1);
    emb(0, 0) = 1.0;
    emb(1, 0) = -1.0;
    const std::vector<double> origin{0.0};
    CHECK(nearest_embedding(emb, origin) == 0);  // equidistant -> lowest index
}

TEST_CASE("clamp is idempotent") {
    RngStream rng(19, 6);
    OracleSpec spec = random_spec(5, 4, rng);
    std::vector<double> probs{0.1, 0.2, 0.3, 0.25, 0.15};
    const auto x0 = interpolate_x0(probs, spec.embeddings);
    const int once = nearest_embedding(spec.embeddings, x0);
    const std::vector<double> snapped(spec.embeddings.row(once).begin(),
                                      spec.embeddings.row(once).end());
    CHECK(nearest_embedding(spec.embeddings, snapped) == once);
}

TEST_CASE("renormalise preserves direction and sets norm sqrt(d)") {
    RngStream rng(23, 7);
    OracleSpec spec = random_spec(6, 4, rng);
    std::vector<double> x(4, 0.0);
    const auto post = bayes_posterior(spec, x, 2.0);
    const auto plain = interpolate_score(post, spec.embeddings, x, 2.0, ScoreMode::plain);
    const auto renorm = interpolate_score(post, spec.embeddings, x, 2.0, ScoreMode::renormalise);
    // with x = 0 the score is x0_hat / t^2, so direction comparison is direct
    const auto x0 = interpolate_x0(post, spec.embeddings);
    const double n = l2_norm(x0);
    const double f = std::sqrt(4.0) / n;
    for (int j = 0; j < 4; ++j)
        CHECK(renorm[static_cast<size_t>(j)] ==
              doctest::Approx(plain[static_cast<size_t>(j)] * f).epsilon(1e-12));
    CHECK(f > 0.0);
}

TEST_CASE("renormalise+clamp: clamp first, renormalise is then a no-op") {
    RngStream rng(29, 8);
    OracleSpec spec = random_spec(4, 4, rng);
    std::vector<double> probs{0.7, 0.1, 0.1, 0.1};
    std::vector<double> x(4, 0.1);
    const auto both = interpolate_score(probs, spec.embeddings, x, 1.0, ScoreMode::renormalise_clamp);
    const auto clamp_only = interpolate_score(probs, spec.embeddings, x, 1.0, ScoreMode::clamp);
    for (int j = 0; j < 4; ++j)
        CHECK(both[static_cast<size_t>(j)] ==
              doctest::Approx(clamp_only[static_cast<size_t>(j)]).epsilon(1e-12));
}

TEST_CASE("renormalise of a degenerate x0_hat errors") {
    Mat emb(2, 2);
    emb(0, 0) = std::sqrt(2.0);
    emb(1, 0) = -std::sqrt(2.0);
    const std::vector<double> probs{0.5, 0.5};  // x0_hat is exactly zero
    const std::vector<double> x{0.2, 0.0};
    CHECK_THROWS(interpolate_score(probs, emb, x, 1.0, ScoreMode::renormalise));
}

TEST_CASE("cfg_combine identities and extrapolation") {
    const std::vector<double> cond{1.0}, uncond{0.0};
    CHECK(cfg_combine(cond, uncond, 1.0)[0] == 1.0);
    CHECK(cfg_combine(cond, uncond, 0.0)[0] == 0.0);
    CHECK(cfg_combine(cond, uncond, 2.0)[0] == 2.0);
}

TEST_CASE("apply_score_temperature") {
    const std::vector<double> s{1.0, 0.0};
    CHECK(apply_score_temperature(s, 1.0) == s);
    const auto doubled = apply_score_temperature(s, 0.5);
    CHECK(doubled[0] == 2.0);
    CHECK(doubled[1] == 0.0);
    const std::vector<double> zero{0.0, 0.0};
    CHECK(apply_score_temperature(zero, 3.0) == zero);
    CHECK_THROWS(apply_score_temperature(s, 0.0));
}

TEST_SUITE_END();

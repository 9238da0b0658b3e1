#include <catch2/catch_amalgamated.hpp>

#include "decorr/datagen.hpp"
#include "test_util.hpp"

using namespace decorr;
using Catch::Approx;

namespace {

double empirical_corr(const Vector& a, const Vector& b) {
    const double ma = a.mean(), mb = b.mean();
    const double cov = ((a.array() - ma) * (b.array() - mb)).mean();
    const double va = (a.array() - ma).square().mean();
    const double vb = (b.array() - mb).square().mean();
    return cov / std::sqrt(va * vb);
}

}  // namespace

TEST_CASE("gen_irm_example moments match the generating equations", "[montecarlo]") {
    IrmExampleConfig cfg;
    cfg.d = 2;
    cfg.sigmas = {0.1, 1.5, 2.0};
    cfg.n_per_env = 100000;
    cfg.seed = 2718;
    const auto data = gen_irm_example(cfg);
    REQUIRE(data.envs.size() == 3);
    REQUIRE(data.beta_star.head(2).isOnes());
    REQUIRE(data.beta_star.tail(2).isZero());

    const auto terms = closed_form_terms(Matrix::Identity(2, 2), Matrix::Identity(2, 2));
    for (std::size_t e = 0; e < cfg.sigmas.size(); ++e) {
        const double sigma = cfg.sigmas[e];
        const Matrix& X = data.envs[e].X;
        for (int j = 0; j < cfg.d; ++j) {
            const double var = (X.col(j).array() - X.col(j).mean()).square().mean();
            REQUIRE(var == Approx(sigma * sigma).epsilon(0.05));
        }
        for (int i = 0; i < cfg.d; ++i) {
            for (int j = 0; j < cfg.d; ++j) {
                const double expected = closed_form_corr(terms, sigma, i, j);
                const double observed = empirical_corr(X.col(i), X.col(cfg.d + j));
                REQUIRE(observed == Approx(expected).margin(0.01));
            }
        }
    }
}

TEST_CASE("gen_irm_example validation and determinism") {
    IrmExampleConfig cfg;
    cfg.n_per_env = 50;
    SECTION("sigma = 0 is rejected") {
        cfg.sigmas = {0.0};
        REQUIRE_THROWS_AS(gen_irm_example(cfg), std::invalid_argument);
    }
    SECTION("same seed, same data") {
        cfg.seed = 5;
        const auto a = gen_irm_example(cfg);
        const auto b = gen_irm_example(cfg);
        REQUIRE(a.envs[0].X == b.envs[0].X);
        REQUIRE(a.envs[0].y == b.envs[0].y);
        REQUIRE(a.envs[0].X.allFinite());
    }
}

TEST_CASE("closed_form_corr") {
    const auto identity_terms = closed_form_terms(Matrix::Identity(1, 1), Matrix::Identity(1, 1));
    SECTION("vanishes as sigma approaches zero") {
        REQUIRE(std::abs(closed_form_corr(identity_terms, 1e-8, 0, 0)) < 1e-7);
    }
    SECTION("unit case gives 1/sqrt(3)") {
        REQUIRE(closed_form_corr(identity_terms, 1.0, 0, 0) == Approx(1.0 / std::sqrt(3.0)));
    }
    SECTION("strictly increasing magnitude in sigma") {
        const double c1 = std::abs(closed_form_corr(identity_terms, 0.1, 0, 0));
        const double c2 = std::abs(closed_form_corr(identity_terms, 1.5, 0, 0));
        const double c3 = std::abs(closed_form_corr(identity_terms, 2.0, 0, 0));
        REQUIRE(c1 < c2);
        REQUIRE(c2 < c3);
    }
    SECTION("general matrices keep |corr| within 1") {
        auto rng = make_rng(31);
        const Matrix wxy = testutil::random_matrix(3, 3, rng);
        const Matrix wyx = testutil::random_matrix(3, 3, rng);
        const auto terms = closed_form_terms(wxy, wyx);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                REQUIRE(std::abs(closed_form_corr(terms, 1.7, i, j)) <= 1.0 + 1e-12);
    }
}

TEST_CASE("gen_sem honors its moments", "[montecarlo]") {
    SECTION("zero environmental mean decorrelates the feature blocks") {
        SemConfig cfg = make_sem_config(1, 99);
        cfg.n_per_env = 100000;
        const Environment env = gen_sem_env(cfg, Vector::Zero(cfg.d_e), 1234);
        const double bound = 3.0 / std::sqrt(100000.0);
        for (int i = 0; i < cfg.d_c; ++i)
            for (int j = 0; j < cfg.d_e; ++j)
                REQUIRE(std::abs(empirical_corr(env.X.col(i), env.X.col(cfg.d_c + j))) < bound);
    }
    SECTION("cross covariance equals a_c * a_e * var(y)") {
        SemConfig cfg = make_sem_config(1, 7);
        cfg.eta = 0.3;
        cfg.n_per_env = 100000;
        Vector mu_e(cfg.d_e);
        mu_e << 0.7, -0.4, 1.1, 0.2, -0.9, 0.5;
        const Environment env = gen_sem_env(cfg, mu_e, 77);
        const double var_y = 4.0 * cfg.eta * (1.0 - cfg.eta);
        for (int i = 0; i < cfg.d_c; ++i) {
            for (int j = 0; j < cfg.d_e; ++j) {
                const Vector p = env.X.col(i), q = env.X.col(cfg.d_c + j);
                const double cov = ((p.array() - p.mean()) * (q.array() - q.mean())).mean();
                const double expected = cfg.mu_c[i] * mu_e[j] * var_y;
                REQUIRE(cov == Approx(expected).margin(0.05 * std::abs(expected) + 0.01));
            }
        }
    }
    SECTION("balanced labels at eta = 0.5") {
        SemConfig cfg = make_sem_config(2, 3);
        cfg.n_per_env = 100000;
        const auto data = gen_sem(cfg);
        REQUIRE(std::abs(data.train_envs[0].y.mean()) < 3.0 / std::sqrt(100000.0));
    }
    SECTION("test factory is deterministic per sub-seed and fresh across them") {
        SemConfig cfg = make_sem_config(2, 3);
        cfg.n_per_env = 50;
        const auto factory = sem_test_env_factory(cfg);
        const Environment a = factory(10);
        const Environment b = factory(10);
        const Environment c = factory(11);
        REQUIRE(a.X == b.X);
        REQUIRE(a.X != c.X);
    }
}

TEST_CASE("mu_c construction keeps every component away from zero") {
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL, 40ULL}) {
        const SemConfig cfg = make_sem_config(2, seed);
        for (int i = 0; i < cfg.d_c; ++i) REQUIRE(std::abs(cfg.mu_c[i]) >= 0.5);
    }
}

TEST_CASE("gen_toy_2d") {
    SECTION("correlation and slope match the construction", "[montecarlo]") {
        const Environment env = gen_toy_2d(2000, 8);
        REQUIRE(empirical_corr(env.X.col(0), env.X.col(1)) == Approx(0.8).margin(0.05));
        // univariate regression of y on x0
        const Vector x0 = env.X.col(0);
        const double slope = ((x0.array() - x0.mean()) * (env.y.array() - env.y.mean())).mean() /
                             (x0.array() - x0.mean()).square().mean();
        REQUIRE(slope == Approx(1.0).margin(0.05));
    }
    SECTION("deterministic and size-checked") {
        REQUIRE(gen_toy_2d(20, 4).X == gen_toy_2d(20, 4).X);
        REQUIRE_THROWS_AS(gen_toy_2d(5, 4), std::invalid_argument);
    }
}

TEST_CASE("biased_resample") {
    // balanced synthetic binary data over the four bias/target groups
    auto rng = make_rng(61);
    const int n = 2000;
    Matrix X(n, 3);
    Vector y(n);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int i = 0; i < n; ++i) {
        X(i, 0) = g(rng);
        X(i, 1) = u(rng) < 0.5 ? 1.0 : 0.0;  // bias column
        X(i, 2) = g(rng);
        y[i] = u(rng) < 0.5 ? 1.0 : 0.0;
    }

    SECTION("group counts are conserved") {
        const auto split = biased_resample(X, y, 1, 0.4, 17);
        REQUIRE(split.train.n() + split.test.n() == n);
        auto group_count = [&](const Environment& env, int b, int t) {
            int c = 0;
            for (int i = 0; i < env.n(); ++i)
                if (env.X(i, 1) == b && env.y[i] == t) ++c;
            return c;
        };
        int full[2][2] = {};
        for (int i = 0; i < n; ++i) ++full[static_cast<int>(X(i, 1))][static_cast<int>(y[i])];
        for (int b = 0; b < 2; ++b)
            for (int t = 0; t < 2; ++t)
                REQUIRE(group_count(split.train, b, t) + group_count(split.test, b, t) ==
                        full[b][t]);
    }
    SECTION("alpha = 0.9 leaves no distributional shift") {
        const auto split = biased_resample(X, y, 1, 0.9, 17);
        auto fraction = [&](const Environment& env, int b, int t) {
            int c = 0;
            for (int i = 0; i < env.n(); ++i)
                if (env.X(i, 1) == b && env.y[i] == t) ++c;
            return static_cast<double>(c) / env.n();
        };
        for (int b = 0; b < 2; ++b)
            for (int t = 0; t < 2; ++t)
                REQUIRE(fraction(split.train, b, t) ==
                        Approx(fraction(split.test, b, t)).margin(0.02));
    }
    SECTION("alpha = 0.01 plants a strong training correlation") {
        const auto split = biased_resample(X, y, 1, 0.01, 17);
        const double corr = empirical_corr(split.train.X.col(1), split.train.y);
        REQUIRE(corr > 0.9);
    }
    SECTION("empty group is rejected") {
        Vector y_const = Vector::Zero(n);
        REQUIRE_THROWS_AS(biased_resample(X, y_const, 1, 0.5, 1), std::invalid_argument);
    }
    SECTION("deterministic under seed") {
        const auto a = biased_resample(X, y, 1, 0.4, 23);
        const auto b = biased_resample(X, y, 1, 0.4, 23);
        REQUIRE(a.train.X == b.train.X);
    }
}

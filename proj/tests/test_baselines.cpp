#include <catch2/catch_amalgamated.hpp>

#include "decorr/baselines.hpp"
#include "test_util.hpp"

using namespace decorr;
using Catch::Approx;

namespace {

// Binary task with a strongly informative but environment-unstable feature
// and a noisy invariant one.
Environment planted_spurious(int n, double spur_agreement, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Environment env;
    env.X.resize(n, 2);
    env.y.resize(n);
    for (int i = 0; i < n; ++i) {
        const double y = u(rng) < 0.5 ? 1.0 : 0.0;
        const double sign = 2.0 * y - 1.0;
        env.y[i] = y;
        env.X(i, 0) = sign + 2.0 * g(rng);                                // invariant, noisy
        env.X(i, 1) = (u(rng) < spur_agreement ? sign : -sign) + 0.3 * g(rng);  // spurious
    }
    return env;
}

double partition_penalty(const Environment& env, const ModelParams& model,
                         const Partition& part) {
    double total = 0.0;
    for (int e = 0; e < part.k; ++e) {
        const auto idx = part.env_indices(e);
        const Vector f = predict(model, select_rows(env.X, idx));
        total += irmv1_penalty(f, select_rows(env.y, idx), model.loss);
    }
    return total;
}

}  // namespace

TEST_CASE("random_partition") {
    SECTION("n = k fills every environment") {
        const auto part = random_partition(4, 4, 3);
        REQUIRE(part.sizes == std::vector<int>(4, 1));
    }
    SECTION("n = 1000, k = 2 stays near balanced") {
        const auto part = random_partition(1000, 2, 11);
        REQUIRE(part.sizes[0] >= 400);
        REQUIRE(part.sizes[0] <= 600);
    }
    SECTION("deterministic under seed") {
        REQUIRE(random_partition(50, 3, 9).assignments == random_partition(50, 3, 9).assignments);
    }
    SECTION("n < k rejected") {
        REQUIRE_THROWS_AS(random_partition(2, 3, 0), std::invalid_argument);
    }
}

TEST_CASE("kmeans recovers separated blobs") {
    auto rng = make_rng(66);
    const int n = 200;
    Matrix X(2 * n, 2);
    X.topRows(n) = testutil::random_matrix(n, 2, rng).array() + 4.0;
    X.bottomRows(n) = testutil::random_matrix(n, 2, rng).array() - 4.0;

    const auto part = kmeans_partition(X, 2, 5);
    int agree = 0;
    for (int i = 0; i < 2 * n; ++i) {
        const int truth = i < n ? 0 : 1;
        if (part.assignments[static_cast<std::size_t>(i)] == truth) ++agree;
    }
    const double rate = std::max(agree, 2 * n - agree) / static_cast<double>(2 * n);
    REQUIRE(rate >= 0.99);
}

TEST_CASE("kmeans structure") {
    auto rng = make_rng(67);
    const Matrix X = testutil::random_matrix(80, 3, rng);

    SECTION("k = 1 is a single cluster") {
        const auto part = kmeans_partition(X, 1, 0);
        REQUIRE(part.sizes == std::vector<int>{80});
    }
    SECTION("deterministic under seed and assignments are a fixed point") {
        const auto a = kmeans_partition(X, 4, 12);
        const auto b = kmeans_partition(X, 4, 12);
        REQUIRE(a.assignments == b.assignments);

        // recompute centroids from final clusters; nearest centroid must
        // reproduce every assignment
        Matrix centroids = Matrix::Zero(4, 3);
        std::vector<int> counts(4, 0);
        for (int i = 0; i < 80; ++i) {
            centroids.row(a.assignments[static_cast<std::size_t>(i)]) += X.row(i);
            ++counts[static_cast<std::size_t>(a.assignments[static_cast<std::size_t>(i)])];
        }
        for (int c = 0; c < 4; ++c) centroids.row(c) /= counts[static_cast<std::size_t>(c)];
        for (int i = 0; i < 80; ++i) {
            int best = 0;
            double bd = (X.row(i) - centroids.row(0)).squaredNorm();
            for (int c = 1; c < 4; ++c) {
                const double d = (X.row(i) - centroids.row(c)).squaredNorm();
                if (d < bd) {
                    bd = d;
                    best = c;
                }
            }
            REQUIRE(best == a.assignments[static_cast<std::size_t>(i)]);
        }
    }
    SECTION("duplicate points do not break the seeding") {
        Matrix dup = Matrix::Zero(20, 2);
        dup.topRows(10).setOnes();
        const auto part = kmeans_partition(dup, 2, 3);
        REQUIRE(part.sizes[0] + part.sizes[1] == 20);
        REQUIRE(part.sizes[0] > 0);
        REQUIRE(part.sizes[1] > 0);
    }
}

TEST_CASE("lloyd objective is non-increasing across iterations") {
    auto rng = make_rng(68);
    const Matrix X = testutil::correlated_gaussian(120, 3, 0.4, rng);
    auto lrng = make_rng(5);
    const auto res = decorr::detail::lloyd(X, 3, lrng);
    for (std::size_t i = 1; i < res.wcss_trace.size(); ++i)
        REQUIRE(res.wcss_trace[i] <= res.wcss_trace[i - 1] + 1e-9);
}

TEST_CASE("eiil ascends its objective and is deterministic") {
    auto rng = make_rng(71);
    const Environment env = planted_spurious(400, 0.85, rng);
    TrainConfig ref_cfg;
    ref_cfg.n_iter = 1500;
    ref_cfg.seed = 2;
    const ModelParams reference = fit_erm({env}, ModelKind::logistic, ref_cfg);

    EiilConfig cfg;
    cfg.seed = 13;
    SECTION("objective increases over the first 100 steps") {
        EiilConfig short_cfg = cfg;
        short_cfg.steps = 100;
        const auto part = eiil_partition(env.X, env.y, short_cfg, reference);
        REQUIRE(part.objective_trace.size() == 2);
        REQUIRE(std::isfinite(part.objective_trace[0]));
        REQUIRE(part.objective_trace[1] >= part.objective_trace[0]);
    }
    SECTION("full run keeps final objective above the initial one") {
        cfg.steps = 2000;
        const auto part = eiil_partition(env.X, env.y, cfg, reference);
        REQUIRE(part.objective_trace[1] >= part.objective_trace[0]);
        REQUIRE(part.k == 2);
        REQUIRE(part.sizes[0] > 0);
        REQUIRE(part.sizes[1] > 0);
    }
    SECTION("deterministic under seed") {
        cfg.steps = 200;
        const auto a = eiil_partition(env.X, env.y, cfg, reference);
        const auto b = eiil_partition(env.X, env.y, cfg, reference);
        REQUIRE(a.assignments == b.assignments);
    }
}

TEST_CASE("eiil finds a higher-penalty partition than chance", "[slow]") {
    auto rng = make_rng(72);
    int wins = 0;
    for (int rep = 0; rep < 10; ++rep) {
        const Environment env = planted_spurious(300, 0.85, rng);
        TrainConfig ref_cfg;
        ref_cfg.n_iter = 1200;
        ref_cfg.seed = 50 + static_cast<std::uint64_t>(rep);
        const ModelParams reference = fit_erm({env}, ModelKind::logistic, ref_cfg);

        EiilConfig cfg;
        cfg.steps = 3000;
        cfg.seed = 60 + static_cast<std::uint64_t>(rep);
        const auto inferred = eiil_partition(env.X, env.y, cfg, reference);
        const auto chance = random_partition(300, 2, 70 + static_cast<std::uint64_t>(rep));
        if (partition_penalty(env, reference, inferred) >=
            partition_penalty(env, reference, chance))
            ++wins;
    }
    REQUIRE(wins >= 8);
}

TEST_CASE("eiil input validation") {
    auto rng = make_rng(73);
    const Environment env = planted_spurious(50, 0.8, rng);
    EiilConfig cfg;

    SECTION("untrained reference") {
        ModelParams empty;
        empty.kind = ModelKind::logistic;
        empty.loss = LossKind::binary_cross_entropy;
        empty.input_dim = 2;
        REQUIRE_THROWS_AS(eiil_partition(env.X, env.y, cfg, empty), std::invalid_argument);
    }
    SECTION("non-binary targets with a classification reference") {
        TrainConfig ref_cfg;
        ref_cfg.n_iter = 100;
        const ModelParams reference = fit_erm({env}, ModelKind::logistic, ref_cfg);
        Vector bad = env.y;
        bad[0] = 0.5;
        REQUIRE_THROWS_AS(eiil_partition(env.X, bad, cfg, reference), std::invalid_argument);
    }
}

#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "decorr/models.hpp"
#include "decorr/partition.hpp"

namespace decorr {

// ---------------------------------------------------------------------------
// Random split
// ---------------------------------------------------------------------------

// Uniform assignment with retries on empty environments. After the retry
// budget, empties are filled by stealing from the largest environment.
inline Partition random_partition(int n, int k, std::uint64_t seed) {
    require(k >= 1, "environment count k must be >= 1");
    require(n >= k, "need at least k samples");
    auto rng = make_rng(seed);
    std::uniform_int_distribution<int> pick(0, k - 1);

    Partition part;
    part.k = k;
    part.seed = seed;
    part.assignments.resize(static_cast<std::size_t>(n));
    for (int attempt = 0; attempt < 100; ++attempt) {
        for (auto& a : part.assignments) a = pick(rng);
        part.sizes = count_env_sizes(part.assignments, k);
        if (std::all_of(part.sizes.begin(), part.sizes.end(), [](int s) { return s > 0; }))
            return part;
    }
    for (int env = 0; env < k; ++env) {
        while (part.sizes[static_cast<std::size_t>(env)] == 0) {
            const int donor = static_cast<int>(
                std::max_element(part.sizes.begin(), part.sizes.end()) - part.sizes.begin());
            for (std::size_t i = 0; i < part.assignments.size(); ++i) {
                if (part.assignments[i] == donor) {
                    part.assignments[i] = env;
                    --part.sizes[static_cast<std::size_t>(donor)];
                    ++part.sizes[static_cast<std::size_t>(env)];
                    break;
                }
            }
        }
    }
    return part;
}

// ---------------------------------------------------------------------------
// k-means
// ---------------------------------------------------------------------------

namespace detail {

inline Vector sq_dist_to_nearest(const Matrix& X, const Matrix& centroids, int used) {
    Vector d2 = Vector::Constant(X.rows(), std::numeric_limits<double>::infinity());
    for (int c = 0; c < used; ++c)
        d2 = d2.cwiseMin((X.rowwise() - centroids.row(c)).rowwise().squaredNorm());
    return d2;
}

// k-means++ seeding. When every remaining point duplicates a chosen centroid
// (all distances zero), the next centroid is re-seeded uniformly.
inline Matrix kmeanspp_init(const Matrix& X, int k, std::mt19937_64& rng) {
    const int n = static_cast<int>(X.rows());
    std::uniform_int_distribution<int> uniform_row(0, n - 1);
    Matrix centroids(k, X.cols());
    centroids.row(0) = X.row(uniform_row(rng));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int c = 1; c < k; ++c) {
        Vector d2 = sq_dist_to_nearest(X, centroids, c);
        const double total = d2.sum();
        if (total <= 0.0) {
            centroids.row(c) = X.row(uniform_row(rng));
            continue;
        }
        double u = unit(rng) * total;
        int chosen = n - 1;
        for (int i = 0; i < n; ++i) {
            u -= d2[i];
            if (u <= 0.0) {
                chosen = i;
                break;
            }
        }
        centroids.row(c) = X.row(chosen);
    }
    return centroids;
}

struct LloydResult {
    std::vector<int> assignments;
    double wcss = std::numeric_limits<double>::infinity();
    std::vector<double> wcss_trace;  // per-iteration cost, non-increasing
};

inline LloydResult lloyd(const Matrix& X, int k, std::mt19937_64& rng, int max_iter = 300) {
    const int n = static_cast<int>(X.rows());
    Matrix centroids = kmeanspp_init(X, k, rng);
    LloydResult res;
    res.assignments.assign(static_cast<std::size_t>(n), -1);

    for (int it = 0; it < max_iter; ++it) {
        bool changed = false;
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double best_d = (X.row(i) - centroids.row(0)).squaredNorm();
            for (int c = 1; c < k; ++c) {
                const double d = (X.row(i) - centroids.row(c)).squaredNorm();
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            if (res.assignments[static_cast<std::size_t>(i)] != best) {
                res.assignments[static_cast<std::size_t>(i)] = best;
                changed = true;
            }
        }
        // repair empty clusters with the point farthest from its centroid
        std::vector<int> counts(static_cast<std::size_t>(k), 0);
        for (int a : res.assignments) ++counts[static_cast<std::size_t>(a)];
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<std::size_t>(c)] > 0) continue;
            int far_i = -1;
            double far_d = -1.0;
            for (int i = 0; i < n; ++i) {
                const int a = res.assignments[static_cast<std::size_t>(i)];
                if (counts[static_cast<std::size_t>(a)] <= 1) continue;
                const double d = (X.row(i) - centroids.row(a)).squaredNorm();
                if (d > far_d) {
                    far_d = d;
                    far_i = i;
                }
            }
            if (far_i >= 0) {
                --counts[static_cast<std::size_t>(res.assignments[static_cast<std::size_t>(far_i)])];
                res.assignments[static_cast<std::size_t>(far_i)] = c;
                ++counts[static_cast<std::size_t>(c)];
                centroids.row(c) = X.row(far_i);
                changed = true;
            }
        }
        if (!changed) break;
        centroids.setZero();
        std::vector<int> tally(static_cast<std::size_t>(k), 0);
        for (int i = 0; i < n; ++i) {
            centroids.row(res.assignments[static_cast<std::size_t>(i)]) += X.row(i);
            ++tally[static_cast<std::size_t>(res.assignments[static_cast<std::size_t>(i)])];
        }
        for (int c = 0; c < k; ++c)
            if (tally[static_cast<std::size_t>(c)] > 0)
                centroids.row(c) /= static_cast<double>(tally[static_cast<std::size_t>(c)]);
        double cost = 0.0;
        for (int i = 0; i < n; ++i)
            cost += (X.row(i) - centroids.row(res.assignments[static_cast<std::size_t>(i)]))
                        .squaredNorm();
        res.wcss_trace.push_back(cost);
    }
    res.wcss = 0.0;
    for (int i = 0; i < n; ++i)
        res.wcss += (X.row(i) - centroids.row(res.assignments[static_cast<std::size_t>(i)])).squaredNorm();
    return res;
}

}  // namespace detail

// Lloyd's algorithm with k-means++ seeding, 10 restarts keeping the best
// within-cluster sum of squares. Callers are expected to standardize features.
inline Partition kmeans_partition(const Matrix& X, int k, std::uint64_t seed, int restarts = 10) {
    validate_data_matrix(X);
    require(k >= 1, "environment count k must be >= 1");
    require(X.rows() >= k, "need at least k samples");
    auto rng = make_rng(seed);
    detail::LloydResult best;
    for (int r = 0; r < restarts; ++r) {
        detail::LloydResult cand = detail::lloyd(X, k, rng);
        if (cand.wcss < best.wcss) best = std::move(cand);
    }
    Partition part;
    part.k = k;
    part.seed = seed;
    part.assignments = std::move(best.assignments);
    part.sizes = count_env_sizes(part.assignments, k);
    part.objective_trace = {best.wcss};
    return part;
}

// ---------------------------------------------------------------------------
// EIIL
// ---------------------------------------------------------------------------

struct EiilConfig {
    int steps = 10000;
    double lr = 0.001;
    std::uint64_t seed = 0;

    void validate() const {
        require(steps >= 1, "steps must be >= 1");
        require(lr > 0.0, "learning rate must be positive");
    }
};

// Environment inference: soft assignments q_i = sigmoid(s_i) are ascended on
// the squared dummy-gradient norm of the q-weighted risks of a fixed
// reference model, then environment 0 membership is drawn Bernoulli(q_i).
// Always yields two environments.
inline Partition eiil_partition(const Matrix& X, const Vector& y, const EiilConfig& cfg,
                                const ModelParams& reference) {
    cfg.validate();
    validate_data_matrix(X);
    require(y.size() == X.rows(), "target length mismatch");
    require(reference.trained(), "reference model is untrained");
    require(reference.loss == LossKind::squared || reference.loss == LossKind::binary_cross_entropy,
            "unsupported reference loss");
    if (reference.loss == LossKind::binary_cross_entropy)
        for (Eigen::Index i = 0; i < y.size(); ++i)
            require(y[i] == 0.0 || y[i] == 1.0, "eiil supports binary 0/1 or scalar targets only");

    const int n = static_cast<int>(X.rows());
    const Vector f = predict(reference, X);
    // per-sample dummy-gradient contributions u_i, so that the q-weighted
    // penalty inner sums are g1 = mean(q u), g2 = mean((1-q) u)
    Vector u(n);
    if (reference.loss == LossKind::squared) {
        u = 2.0 * f.array() * (f - y).array();
    } else {
        for (int i = 0; i < n; ++i) u[i] = f[i] * (sigmoid(f[i]) - y[i]);
    }

    auto rng = make_rng(cfg.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Vector s(n);
    for (int i = 0; i < n; ++i) s[i] = gauss(rng);

    auto objective = [&](const Vector& logits, Vector* grad) {
        Vector q(n);
        for (int i = 0; i < n; ++i) q[i] = sigmoid(logits[i]);
        const double g1 = q.dot(u) / n;
        const double g2 = (Vector::Ones(n) - q).dot(u) / n;
        if (grad) {
            const Vector dq = (q.array() * (1.0 - q.array())).matrix();
            *grad = (2.0 * (g1 - g2) / n) * (u.array() * dq.array()).matrix();
        }
        return g1 * g1 + g2 * g2;
    };

    Partition part;
    part.k = 2;
    part.seed = cfg.seed;
    part.objective_trace.push_back(objective(s, nullptr));

    // Adam-style ascent on the soft assignment logits
    Vector m = Vector::Zero(n), v = Vector::Zero(n);
    double b1t = 1.0, b2t = 1.0;
    Vector grad(n);
    for (int t = 0; t < cfg.steps; ++t) {
        objective(s, &grad);
        b1t *= 0.9;
        b2t *= 0.999;
        m = 0.9 * m + 0.1 * grad;
        v = 0.999 * v + 0.001 * grad.array().square().matrix();
        s += (cfg.lr / (1.0 - b1t)) *
             (m.array() / ((v.array() / (1.0 - b2t)).sqrt() + 1e-8)).matrix();
    }
    part.objective_trace.push_back(objective(s, nullptr));

    Vector q(n);
    for (int i = 0; i < n; ++i) q[i] = sigmoid(s[i]);
    std::vector<int> all(static_cast<std::size_t>(n));
    std::iota(all.begin(), all.end(), 0);
    const std::vector<int> env0 = detail::sample_environment(all, q, 1, rng);
    part.assignments.assign(static_cast<std::size_t>(n), 1);
    for (int i : env0) part.assignments[static_cast<std::size_t>(i)] = 0;
    part.sizes = count_env_sizes(part.assignments, 2);
    return part;
}

}  // namespace decorr

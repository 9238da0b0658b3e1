#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "decorr/numerics.hpp"

namespace decorr {

struct DecorrConfig {
    int k = 2;                // number of environments to extract
    double p0 = 0.1;          // lower weight bound
    double alpha = 0.1;       // gradient step size
    int max_epochs = 5000;    // iteration cap per round
    double lambda = 100.0;    // mean-constraint penalty weight
    double tol = 1e-8;        // stop when |L_t - L_{t-1}| falls below this
    std::uint64_t seed = 0;
    bool standardize = true;  // z-score features before optimizing

    void validate() const {
        require(k >= 1, "environment count k must be >= 1");
        require(p0 > 0.0 && p0 < 1.0, "p0 must lie in (0, 1)");
        require(alpha > 0.0, "learning rate alpha must be positive");
        require(max_epochs >= 1, "iteration cap must be >= 1");
        require(lambda >= 0.0, "lambda must be nonnegative");
    }
};

// Disjoint assignment of sample indices to k environments.
struct Partition {
    int k = 0;
    std::vector<int> assignments;       // sample index -> environment id in [0, k)
    std::vector<int> sizes;             // per-environment counts
    std::vector<double> objective_trace;  // per-round final loss values
    std::uint64_t seed = 0;

    std::vector<int> env_indices(int env) const {
        std::vector<int> idx;
        for (int i = 0; i < static_cast<int>(assignments.size()); ++i)
            if (assignments[i] == env) idx.push_back(i);
        return idx;
    }
};

inline std::vector<int> count_env_sizes(const std::vector<int>& assignments, int k) {
    std::vector<int> sizes(static_cast<std::size_t>(k), 0);
    for (int a : assignments) {
        require(a >= 0 && a < k, "environment id out of range");
        ++sizes[static_cast<std::size_t>(a)];
    }
    return sizes;
}

struct WeightOptResult {
    Vector w;
    double p0 = 0.1;
    double final_loss = 0.0;
    int iterations = 0;
    bool degenerate = false;
};

// Projected gradient descent on the sample weights: plain step followed by a
// clamp to [p0, 1]. Weights start Uniform[p0, 1]. Stops on |dL| < tol or at
// the epoch cap; the reported loss belongs to the final iterate.
inline WeightOptResult optimize_weights(const Matrix& X, const DecorrConfig& cfg,
                                        double target_mean, std::mt19937_64& rng) {
    cfg.validate();
    validate_data_matrix(X);

    const auto n = X.rows();
    std::uniform_real_distribution<double> init(cfg.p0, 1.0);
    Vector w(n);
    for (Eigen::Index i = 0; i < n; ++i) w[i] = init(rng);

    WeightOptResult out;
    out.p0 = cfg.p0;
    DecorrLossGrad lg = decorr_loss_and_grad(X, w, cfg.lambda, target_mean);
    out.degenerate = lg.degenerate;
    for (int t = 1; t <= cfg.max_epochs; ++t) {
        w = (w - cfg.alpha * lg.grad).cwiseMax(cfg.p0).cwiseMin(1.0);
        const double prev = lg.loss;
        lg = decorr_loss_and_grad(X, w, cfg.lambda, target_mean);
        out.degenerate = out.degenerate || lg.degenerate;
        out.iterations = t;
        if (std::abs(lg.loss - prev) < cfg.tol) break;
    }
    out.w = std::move(w);
    out.final_loss = lg.loss;
    return out;
}

inline WeightOptResult optimize_weights(const Matrix& X, const DecorrConfig& cfg,
                                        double target_mean) {
    auto rng = make_rng(cfg.seed);
    return optimize_weights(X, cfg, target_mean, rng);
}

namespace detail {

// Bernoulli draw of one environment from the remaining pool. A draw is valid
// when the environment is non-empty and enough samples remain for the rounds
// still to come. Falls back to the ceil(|X_r|/(k-j+1)) highest weights after
// max_resamples failed draws.
inline std::vector<int> sample_environment(const std::vector<int>& remaining,
                                           const Vector& w, int rounds_left,
                                           std::mt19937_64& rng, int max_resamples = 10) {
    const int n_r = static_cast<int>(remaining.size());
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int attempt = 0; attempt < max_resamples; ++attempt) {
        std::vector<int> picked;
        for (int i = 0; i < n_r; ++i)
            if (unit(rng) < w[i]) picked.push_back(i);
        const int leftover = n_r - static_cast<int>(picked.size());
        if (!picked.empty() && leftover >= rounds_left) return picked;
    }
    int m = static_cast<int>(std::ceil(static_cast<double>(n_r) / (rounds_left + 1)));
    m = std::min(m, n_r - rounds_left);
    m = std::max(m, 1);
    std::vector<int> order(static_cast<std::size_t>(n_r));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return w[a] > w[b]; });
    order.resize(static_cast<std::size_t>(m));
    std::sort(order.begin(), order.end());
    return order;
}

}  // namespace detail

// Splits X into cfg.k environments by repeatedly optimizing sample weights on
// the remaining pool (target mean 1/(k-j+1) in round j) and sampling each
// point into the new environment with its optimized weight.
inline Partition decorr_partition(const Matrix& X, const DecorrConfig& cfg) {
    cfg.validate();
    validate_data_matrix(X);
    const int n = static_cast<int>(X.rows());
    require(n >= 2 * cfg.k, "need at least 2k samples to partition into k environments");

    Partition part;
    part.k = cfg.k;
    part.seed = cfg.seed;
    part.assignments.assign(static_cast<std::size_t>(n), cfg.k - 1);
    if (cfg.k == 1) {
        part.sizes = {n};
        return part;
    }

    const Matrix Xs = cfg.standardize ? standardize_columns(X) : X;
    auto rng = make_rng(cfg.seed);
    std::vector<int> remaining(static_cast<std::size_t>(n));
    std::iota(remaining.begin(), remaining.end(), 0);

    for (int j = 1; j <= cfg.k - 1; ++j) {
        const int rounds_left = cfg.k - j;  // environments still to fill after this one
        const double target_mean = 1.0 / static_cast<double>(rounds_left + 1);
        const Matrix Xr = select_rows(Xs, remaining);
        WeightOptResult opt = optimize_weights(Xr, cfg, target_mean, rng);
        part.objective_trace.push_back(opt.final_loss);

        const std::vector<int> picked = detail::sample_environment(remaining, opt.w, rounds_left, rng);
        std::vector<bool> in_env(remaining.size(), false);
        for (int local : picked) {
            in_env[static_cast<std::size_t>(local)] = true;
            part.assignments[static_cast<std::size_t>(remaining[static_cast<std::size_t>(local)])] = j - 1;
        }
        std::vector<int> next;
        next.reserve(remaining.size() - picked.size());
        for (std::size_t i = 0; i < remaining.size(); ++i)
            if (!in_env[i]) next.push_back(remaining[i]);
        remaining = std::move(next);
    }
    part.sizes = count_env_sizes(part.assignments, part.k);
    return part;
}

}  // namespace decorr

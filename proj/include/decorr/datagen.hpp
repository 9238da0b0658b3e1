#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "decorr/common.hpp"

namespace decorr {

namespace detail {

inline Matrix gaussian_matrix(Eigen::Index n, Eigen::Index p, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Matrix out(n, p);
    for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = gauss(rng);
    return out;
}

inline Vector gaussian_vector(Eigen::Index n, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Vector out(n);
    for (Eigen::Index i = 0; i < n; ++i) out[i] = gauss(rng);
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Cause/effect regression example: x1 drives y, x2 is an effect of y
// ---------------------------------------------------------------------------

struct IrmExampleConfig {
    int d = 2;                                   // d1 = d2 = d
    std::vector<double> sigmas{0.1, 1.5, 2.0};   // per-environment noise scale
    int n_per_env = 1000;
    Matrix w_xy, w_yx;  // d x d; empty means identity
    std::uint64_t seed = 0;

    void validate() const {
        require(d >= 1, "feature dimension d must be >= 1");
        require(!sigmas.empty(), "need at least one environment sigma");
        for (double s : sigmas) require(s > 0.0, "every sigma must be positive");
        require(n_per_env >= 2, "need at least two samples per environment");
        if (w_xy.size() > 0) require(w_xy.rows() == d && w_xy.cols() == d, "w_xy must be d x d");
        if (w_yx.size() > 0) require(w_yx.rows() == d && w_yx.cols() == d, "w_yx must be d x d");
    }
    Matrix resolved_w_xy() const { return w_xy.size() > 0 ? w_xy : Matrix::Identity(d, d); }
    Matrix resolved_w_yx() const { return w_yx.size() > 0 ? w_yx : Matrix::Identity(d, d); }
};

struct IrmExampleData {
    std::vector<Environment> envs;  // X = [x1, x2] (n x 2d), y = rowsum of latent targets
    Vector beta_star;               // ground-truth coefficients (1_d, 0_d)
};

// Per environment e: x1 ~ N(0, s^2 I), latent t ~ N(W_yx x1, s^2 I),
// x2 ~ N(W_xy t, I), y = 1' t.
inline IrmExampleData gen_irm_example(const IrmExampleConfig& cfg) {
    cfg.validate();
    const Matrix wxy = cfg.resolved_w_xy();
    const Matrix wyx = cfg.resolved_w_yx();

    IrmExampleData out;
    out.beta_star = Vector::Zero(2 * cfg.d);
    out.beta_star.head(cfg.d).setOnes();
    for (std::size_t e = 0; e < cfg.sigmas.size(); ++e) {
        const double s = cfg.sigmas[e];
        auto rng = make_rng(derive_seed(cfg.seed, {0x1e, static_cast<std::uint64_t>(e)}));
        const Matrix x1 = s * detail::gaussian_matrix(cfg.n_per_env, cfg.d, rng);
        const Matrix latent = x1 * wyx.transpose() + s * detail::gaussian_matrix(cfg.n_per_env, cfg.d, rng);
        const Matrix x2 = latent * wxy.transpose() + detail::gaussian_matrix(cfg.n_per_env, cfg.d, rng);
        Environment env;
        env.X.resize(cfg.n_per_env, 2 * cfg.d);
        env.X << x1, x2;
        env.y = latent.rowwise().sum();
        out.envs.push_back(std::move(env));
    }
    return out;
}

// Pieces of the closed-form correlation between x1 and x2 coordinates:
// gamma = (W_xy W_yx)', a_sq_j / b_sq_j are the (j, j) variance contributions
// of W_xy W_yx Z and W_xy Z for standard normal Z.
struct ClosedFormCorrTerms {
    Matrix gamma;
    Vector a_sq, b_sq;
};

inline ClosedFormCorrTerms closed_form_terms(const Matrix& w_xy, const Matrix& w_yx) {
    const Matrix m = w_xy * w_yx;
    ClosedFormCorrTerms terms;
    terms.gamma = m.transpose();
    terms.a_sq = (m * m.transpose()).diagonal();
    terms.b_sq = (w_xy * w_xy.transpose()).diagonal();
    return terms;
}

// corr(x1_i, x2_j) = sigma * gamma_ij / sqrt((a_j^2 + b_j^2) sigma^2 + 1);
// strictly increasing in |.| as sigma grows.
inline double closed_form_corr(const ClosedFormCorrTerms& terms, double sigma, int i, int j) {
    require(sigma > 0.0, "sigma must be positive");
    return sigma * terms.gamma(i, j) /
           std::sqrt((terms.a_sq[j] + terms.b_sq[j]) * sigma * sigma + 1.0);
}

// ---------------------------------------------------------------------------
// Binary-label structural equation model with invariant and environmental
// features
// ---------------------------------------------------------------------------

struct SemConfig {
    int n_envs = 2;
    int d_c = 3;
    int d_e = 6;
    double eta = 0.5;       // P(y = +1)
    Vector mu_c;            // invariant-feature mean direction
    Vector mu_e_shared;     // shared part of the environmental mean
    double sigma_c_sq = 2.0;
    double sigma_e_sq = 0.1;
    int n_per_env = 1000;
    std::uint64_t seed = 0;

    void validate() const {
        require(n_envs >= 1, "need at least one environment");
        require(d_c >= 1 && d_e >= 1, "feature dimensions must be >= 1");
        require(eta > 0.0 && eta < 1.0, "eta must lie in (0, 1)");
        require(sigma_c_sq > 0.0 && sigma_e_sq > 0.0, "variances must be positive");
        require(mu_c.size() == d_c, "mu_c dimension mismatch");
        require(mu_e_shared.size() == d_e, "mu_e_shared dimension mismatch");
        require(n_per_env >= 2, "need at least two samples per environment");
    }
};

// Default construction: mu_c = Z1 + 0.5 sign(Z1), shared environmental mean
// 1.5 Z2, with Z1 in R^3 and Z2 in R^6 standard normal, drawn once per seed.
inline SemConfig make_sem_config(int n_envs, std::uint64_t seed, int d_c = 3, int d_e = 6) {
    SemConfig cfg;
    cfg.n_envs = n_envs;
    cfg.d_c = d_c;
    cfg.d_e = d_e;
    cfg.seed = seed;
    auto rng = make_rng(derive_seed(seed, {0x5e, 0}));
    const Vector z1 = detail::gaussian_vector(d_c, rng);
    cfg.mu_c = z1;
    for (int i = 0; i < d_c; ++i) cfg.mu_c[i] += z1[i] >= 0.0 ? 0.5 : -0.5;
    cfg.mu_e_shared = 1.5 * detail::gaussian_vector(d_e, rng);
    return cfg;
}

// One environment given its environmental mean: y = +1 w.p. eta else -1,
// z_c ~ N(y mu_c, sigma_c^2 I), z_e ~ N(y mu_e, sigma_e^2 I), x = (z_c, z_e).
inline Environment gen_sem_env(const SemConfig& cfg, const Vector& mu_e, std::uint64_t seed) {
    cfg.validate();
    require(mu_e.size() == cfg.d_e, "mu_e dimension mismatch");
    auto rng = make_rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double sc = std::sqrt(cfg.sigma_c_sq);
    const double se = std::sqrt(cfg.sigma_e_sq);

    Environment env;
    env.X.resize(cfg.n_per_env, cfg.d_c + cfg.d_e);
    env.y.resize(cfg.n_per_env);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int i = 0; i < cfg.n_per_env; ++i) {
        const double y = unit(rng) < cfg.eta ? 1.0 : -1.0;
        env.y[i] = y;
        for (int j = 0; j < cfg.d_c; ++j) env.X(i, j) = y * cfg.mu_c[j] + sc * gauss(rng);
        for (int j = 0; j < cfg.d_e; ++j)
            env.X(i, cfg.d_c + j) = y * mu_e[j] + se * gauss(rng);
    }
    return env;
}

struct SemData {
    SemConfig cfg;
    std::vector<Environment> train_envs;
    std::vector<Vector> train_mu_e;
};

// Training environments draw a fresh Z_e each: mu_e = mu_e_shared + Z_e.
inline SemData gen_sem(const SemConfig& cfg) {
    cfg.validate();
    SemData data;
    data.cfg = cfg;
    for (int e = 0; e < cfg.n_envs; ++e) {
        auto rng = make_rng(derive_seed(cfg.seed, {0x5e, 1, static_cast<std::uint64_t>(e)}));
        const Vector mu_e = cfg.mu_e_shared + detail::gaussian_vector(cfg.d_e, rng);
        data.train_mu_e.push_back(mu_e);
        data.train_envs.push_back(
            gen_sem_env(cfg, mu_e, derive_seed(cfg.seed, {0x5e, 2, static_cast<std::uint64_t>(e)})));
    }
    return data;
}

// Lazily generates test environments with new Z_e; every call takes an
// explicit sub-seed so parallel evaluation stays deterministic.
inline std::function<Environment(std::uint64_t)> sem_test_env_factory(SemConfig cfg) {
    return [cfg](std::uint64_t sub_seed) {
        auto rng = make_rng(derive_seed(sub_seed, {0x7e57, 0}));
        const Vector mu_e = cfg.mu_e_shared + detail::gaussian_vector(cfg.d_e, rng);
        return gen_sem_env(cfg, mu_e, derive_seed(sub_seed, {0x7e57, 1}));
    };
}

// ---------------------------------------------------------------------------
// Two-dimensional toy set and the group-biased resampler
// ---------------------------------------------------------------------------

// (x0, x1) bivariate normal, zero mean, unit variances, correlation 0.8;
// y = x0 + N(0, 0.25).
inline Environment gen_toy_2d(int n, std::uint64_t seed) {
    require(n >= 10, "toy dataset needs n >= 10");
    auto rng = make_rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double rho = 0.8;
    Environment env;
    env.X.resize(n, 2);
    env.y.resize(n);
    for (int i = 0; i < n; ++i) {
        const double g0 = gauss(rng);
        const double g1 = gauss(rng);
        env.X(i, 0) = g0;
        env.X(i, 1) = rho * g0 + std::sqrt(1.0 - rho * rho) * g1;
        env.y[i] = g0 + 0.5 * gauss(rng);
    }
    return env;
}

struct ResampleSplit {
    Environment train;
    Environment test;
};

// Group-biased resampling on a binary feature column x_b and binary target:
// groups {x_b = 0, y = 0} and {x_b = 1, y = 1} contribute 90% of their rows
// to the training set, the two crossed groups contribute fraction alpha, and
// everything left over forms the test set.
inline ResampleSplit biased_resample(const Matrix& X, const Vector& y, int bias_column,
                                     double alpha, std::uint64_t seed) {
    validate_data_matrix(X);
    require(y.size() == X.rows(), "target length mismatch");
    require(bias_column >= 0 && bias_column < X.cols(), "bias column out of range");
    require(alpha > 0.0 && alpha <= 0.9, "alpha must lie in (0, 0.9]");
    const int n = static_cast<int>(X.rows());
    for (int i = 0; i < n; ++i) {
        require(y[i] == 0.0 || y[i] == 1.0, "target must be binary 0/1");
        const double b = X(i, bias_column);
        require(b == 0.0 || b == 1.0, "bias column must be binary 0/1");
    }

    std::vector<std::vector<int>> groups(4);
    for (int i = 0; i < n; ++i) {
        const int b = static_cast<int>(X(i, bias_column));
        const int t = static_cast<int>(y[i]);
        // group order: {b=0,y=0}, {b=1,y=1}, {b=0,y=1}, {b=1,y=0}
        const int g = (b == t) ? b : (b == 0 ? 2 : 3);
        groups[static_cast<std::size_t>(g)].push_back(i);
    }
    for (const auto& g : groups) require(!g.empty(), "a bias/target group is empty");

    auto rng = make_rng(seed);
    std::vector<int> train_rows, test_rows;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const double frac = g < 2 ? 0.9 : alpha;
        auto rows = groups[g];
        std::shuffle(rows.begin(), rows.end(), rng);
        const auto take = static_cast<std::size_t>(
            std::llround(frac * static_cast<double>(rows.size())));
        for (std::size_t i = 0; i < rows.size(); ++i)
            (i < take ? train_rows : test_rows).push_back(rows[i]);
    }
    std::sort(train_rows.begin(), train_rows.end());
    std::sort(test_rows.begin(), test_rows.end());

    ResampleSplit split;
    split.train.X = select_rows(X, train_rows);
    split.train.y = select_rows(y, train_rows);
    split.test.X = select_rows(X, test_rows);
    split.test.y = select_rows(y, test_rows);
    return split;
}

}  // namespace decorr

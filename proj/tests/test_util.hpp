#pragma once

#include <algorithm>
#include <cmath>
#include <random>

#include "decorr/common.hpp"

namespace testutil {

using decorr::Matrix;
using decorr::Vector;

inline Matrix random_matrix(int n, int p, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> gauss(0.0, scale);
    Matrix out(n, p);
    for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = gauss(rng);
    return out;
}

inline Vector random_weights(int n, std::mt19937_64& rng, double lo = 0.1, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Vector w(n);
    for (int i = 0; i < n; ++i) w[i] = u(rng);
    return w;
}

// Plain Pearson correlation with population covariance, written directly as
// an oracle independent of the library's weighted path.
inline Matrix pearson_oracle(const Matrix& X) {
    const auto n = X.rows();
    const auto p = X.cols();
    Vector mu(p), sd(p);
    for (Eigen::Index j = 0; j < p; ++j) {
        mu[j] = X.col(j).mean();
        sd[j] = std::sqrt((X.col(j).array() - mu[j]).square().sum() / static_cast<double>(n));
    }
    Matrix r(p, p);
    for (Eigen::Index j = 0; j < p; ++j) {
        for (Eigen::Index k = 0; k < p; ++k) {
            const double cov =
                ((X.col(j).array() - mu[j]) * (X.col(k).array() - mu[k])).sum() / static_cast<double>(n);
            r(j, k) = cov / (sd[j] * sd[k]);
        }
    }
    return r;
}

inline double rel_err(double a, double b, double floor_scale = 1e-4) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor_scale});
}

// Equicorrelated Gaussian sample: pairwise correlation rho across p columns.
inline Matrix correlated_gaussian(int n, int p, double rho, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Matrix out(n, p);
    for (int i = 0; i < n; ++i) {
        const double shared = gauss(rng);
        for (int j = 0; j < p; ++j)
            out(i, j) = std::sqrt(rho) * shared + std::sqrt(1.0 - rho) * gauss(rng);
    }
    return out;
}

}  // namespace testutil

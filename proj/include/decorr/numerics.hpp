#pragma once

#include <cmath>

#include "decorr/common.hpp"

namespace decorr {

// Additive guard inside the correlation denominator so near-constant columns
// under extreme weights cannot produce NaN mid-optimization.
inline constexpr double kCorrDenomEps = 1e-12;
// Weighted column variance below this counts as degenerate.
inline constexpr double kDegenerateVariance = 1e-10;

inline void validate_weights(const Matrix& X, const Vector& w) {
    require(w.size() == X.rows(), "weight vector length does not match sample count");
    require(w.allFinite(), "weights contain non-finite entries");
    require((w.array() >= 0.0).all(), "weights must be nonnegative");
    require(w.sum() > 0.0, "weights must not be all zero");
}

// mu_j = sum_i w_i X_ij / sum_i w_i. Frequency-weight convention: integer
// weights behave exactly like row replication.
inline Vector weighted_mean(const Matrix& X, const Vector& w) {
    validate_weights(X, w);
    return X.transpose() * w / w.sum();
}

struct CorrelationMatrix {
    Matrix r;
    bool degenerate = false;  // some weighted column variance fell below kDegenerateVariance
};

// Weighted covariance of the columns of X: c_jk = sum_i w_i d_ij d_ik / sum_i w_i
// with d_ij = X_ij - mu_j. Symmetrized so c_jk == c_kj bit-exactly.
inline Matrix weighted_covariance(const Matrix& X, const Vector& w) {
    validate_weights(X, w);
    const double s = w.sum();
    const Vector mu = X.transpose() * w / s;
    Matrix d = X.rowwise() - mu.transpose();
    Matrix c = d.transpose() * (w.asDiagonal() * d) / s;
    c = ((c + c.transpose()) * 0.5).eval();
    return c;
}

inline CorrelationMatrix weighted_correlation(const Matrix& X, const Vector& w) {
    validate_data_matrix(X);
    const Matrix c = weighted_covariance(X, w);
    const Vector denom = (c.diagonal().array() + kCorrDenomEps).sqrt().inverse();
    CorrelationMatrix out;
    out.r = c.array() * (denom * denom.transpose()).array();
    out.degenerate = (c.diagonal().array() < kDegenerateVariance).any();
    return out;
}

// d^2(R, I) = sum_{ij} (r_ij - delta_ij)^2
inline double frobenius_dist_sq(const Matrix& r) {
    require(r.rows() == r.cols(), "correlation matrix must be square");
    return (r - Matrix::Identity(r.rows(), r.cols())).squaredNorm();
}

struct DecorrLossGrad {
    double loss = 0.0;
    Vector grad;
    bool degenerate = false;
};

// Loss L(w) = d^2(R^w_X, I) + lambda * (mean(w) - target_mean)^2 and its
// analytic gradient with respect to the sample weights.
//
// With S = sum(w), d_ij = X_ij - mu_j and v_j = c_jj + eps:
//   dc_jk/dw_i = (d_ij d_ik - c_jk) / S
//   dL/dw_i    = (1/S) [ d_i' G d_i - <G,C> - 2 sum_j h_j (d_ij^2 - c_jj) ]
//                + 2 lambda (mean(w) - target_mean) / n
// where G = 2 (R - I) ./ sqrt(v v') and h_j = (sum_k G_jk c_jk) / (2 v_j).
// Columns flagged degenerate are dropped from G, so their terms get zero
// gradient; the loss itself keeps the guarded value.
inline DecorrLossGrad decorr_loss_and_grad(const Matrix& X, const Vector& w,
                                           double lambda, double target_mean) {
    validate_data_matrix(X);
    validate_weights(X, w);
    require(lambda >= 0.0, "lambda must be nonnegative");
    require(target_mean > 0.0 && target_mean <= 1.0, "target mean must lie in (0, 1]");

    const auto n = X.rows();
    const auto p = X.cols();
    const double s = w.sum();
    const Vector mu = X.transpose() * w / s;
    const Matrix d = X.rowwise() - mu.transpose();
    Matrix c = d.transpose() * (w.asDiagonal() * d) / s;
    c = ((c + c.transpose()) * 0.5).eval();

    const Vector v = c.diagonal().array() + kCorrDenomEps;
    const Vector inv_sqrt_v = v.array().rsqrt();
    const Matrix r = c.array() * (inv_sqrt_v * inv_sqrt_v.transpose()).array();

    DecorrLossGrad out;
    const Matrix r_minus_i = r - Matrix::Identity(p, p);
    out.loss = r_minus_i.squaredNorm();

    Matrix g = 2.0 * r_minus_i.array() * (inv_sqrt_v * inv_sqrt_v.transpose()).array();
    Eigen::Array<bool, Eigen::Dynamic, 1> degen = c.diagonal().array() < kDegenerateVariance;
    if (degen.any()) {
        out.degenerate = true;
        for (Eigen::Index j = 0; j < p; ++j) {
            if (degen[j]) {
                g.row(j).setZero();
                g.col(j).setZero();
            }
        }
    }

    const Vector h = (g.array() * c.array()).rowwise().sum() / (2.0 * v.array());
    const double g_dot_c = (g.array() * c.array()).sum();
    const double h_dot_cdiag = h.dot(c.diagonal());

    const Vector quad = ((d * g).array() * d.array()).rowwise().sum();   // d_i' G d_i
    const Vector dsq_h = d.array().square().matrix() * h;                // sum_j h_j d_ij^2
    out.grad = (quad.array() - g_dot_c - 2.0 * dsq_h.array() + 2.0 * h_dot_cdiag) / s;

    const double mean_gap = w.mean() - target_mean;
    out.loss += lambda * mean_gap * mean_gap;
    out.grad.array() += 2.0 * lambda * mean_gap / static_cast<double>(n);
    return out;
}

}  // namespace decorr

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace decorr {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// A block of samples: features X (n x p) and an optional target vector y
// (size 0 when the data is unlabeled).
struct Environment {
    Matrix X;
    Vector y;

    int n() const { return static_cast<int>(X.rows()); }
    int p() const { return static_cast<int>(X.cols()); }
};

// Thrown when an iterative fit produces a non-finite loss.
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

inline void validate_data_matrix(const Matrix& X) {
    require(X.rows() >= 2, "data matrix needs at least 2 rows");
    require(X.cols() >= 1, "data matrix needs at least 1 column");
    require(X.allFinite(), "data matrix contains non-finite entries");
}

// ---------------------------------------------------------------------------
// Seeding
// ---------------------------------------------------------------------------

// splitmix64 mixing step; used for seed derivation, not as the working RNG.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Derives an independent stream seed from a master seed and a fixed id path.
// Streams keyed on (cell, method, trial) stay put when other ids are added.
inline std::uint64_t derive_seed(std::uint64_t master,
                                 std::initializer_list<std::uint64_t> path) {
    std::uint64_t s = splitmix64(master);
    for (std::uint64_t id : path) s = splitmix64(s ^ id);
    return s;
}

inline std::mt19937_64 make_rng(std::uint64_t seed) { return std::mt19937_64(seed); }

// ---------------------------------------------------------------------------
// Small data helpers
// ---------------------------------------------------------------------------

// Column z-score with population standard deviation. Near-constant columns
// are centered only.
inline Matrix standardize_columns(const Matrix& X) {
    Matrix Z = X;
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
        const double mean = X.col(j).mean();
        const double sd = std::sqrt((X.col(j).array() - mean).square().mean());
        Z.col(j).array() -= mean;
        if (sd > 1e-12) Z.col(j) /= sd;
    }
    return Z;
}

inline Matrix select_rows(const Matrix& X, const std::vector<int>& rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), X.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = X.row(rows[i]);
    return out;
}

inline Vector select_rows(const Vector& v, const std::vector<int>& rows) {
    Vector out(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[rows[i]];
    return out;
}

inline Environment pool(const std::vector<Environment>& envs) {
    require(!envs.empty(), "cannot pool zero environments");
    Eigen::Index n = 0;
    bool labeled = envs.front().y.size() > 0;
    for (const auto& e : envs) n += e.X.rows();
    Environment out;
    out.X.resize(n, envs.front().X.cols());
    if (labeled) out.y.resize(n);
    Eigen::Index at = 0;
    for (const auto& e : envs) {
        require(e.X.cols() == out.X.cols(), "environments disagree on feature count");
        out.X.middleRows(at, e.X.rows()) = e.X;
        if (labeled) out.y.segment(at, e.y.size()) = e.y;
        at += e.X.rows();
    }
    return out;
}

}  // namespace decorr

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "decorr/common.hpp"

namespace decorr {

enum class ModelKind { linear, logistic, mlp };
enum class LossKind { squared, binary_cross_entropy };
enum class Objective { erm, irmv1, vrex };

// Hidden width 2^(floor(log2 p) + 2), two hidden layers.
inline int mlp_hidden_size(int p) {
    require(p >= 1, "input dimension must be >= 1");
    int e = 0;
    while ((1 << (e + 1)) <= p) ++e;
    return 1 << (e + 2);
}

struct ModelParams {
    ModelKind kind = ModelKind::linear;
    LossKind loss = LossKind::squared;
    int input_dim = 0;
    int hidden = 0;  // mlp only
    Vector theta;    // flattened parameters

    bool trained() const { return theta.size() > 0; }

    // linear/logistic layout: [coef(p), intercept]
    Vector coefficients() const {
        require(kind != ModelKind::mlp, "coefficient view only exists for linear/logistic models");
        return theta.head(input_dim);
    }
    double intercept() const {
        require(kind != ModelKind::mlp, "intercept view only exists for linear/logistic models");
        return theta[input_dim];
    }
};

struct TrainConfig {
    double beta = 0.0;        // IRM / REx penalty weight
    double lr = 0.001;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double l2 = 0.001;
    int n_iter = 20000;
    double dropout_p = 0.5;   // mlp only, after each hidden layer
    int warmup = 100;         // iterations trained with beta = 0
    std::uint64_t seed = 0;
    LossKind loss = LossKind::squared;  // resolves the mlp task; linear/logistic imply theirs
    bool closed_form = false;           // linear ERM through ridge normal equations
    int eval_every = 100;               // validation cadence when early stopping

    void validate() const {
        require(beta >= 0.0, "beta must be nonnegative");
        require(n_iter >= 1, "n_iter must be >= 1");
        require(dropout_p >= 0.0 && dropout_p < 1.0, "dropout_p must lie in [0, 1)");
        require(lr > 0.0, "learning rate must be positive");
        require(l2 >= 0.0, "l2 must be nonnegative");
        require(warmup >= 0, "warmup must be nonnegative");
        require(eval_every >= 1, "eval_every must be >= 1");
    }
};

// ---------------------------------------------------------------------------
// Losses and the IRMv1 penalty
// ---------------------------------------------------------------------------

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// Mean loss over one environment. squared: mean (f - y)^2; bce on logits:
// mean softplus(f) - y f, for labels y in {0, 1}.
inline double risk_value(const Vector& f, const Vector& y, LossKind loss) {
    require(f.size() == y.size(), "prediction/target length mismatch");
    require(f.size() > 0, "empty environment");
    if (loss == LossKind::squared) return (f - y).squaredNorm() / static_cast<double>(f.size());
    double acc = 0.0;
    for (Eigen::Index i = 0; i < f.size(); ++i) acc += softplus(f[i]) - y[i] * f[i];
    return acc / static_cast<double>(f.size());
}

inline Vector risk_output_grad(const Vector& f, const Vector& y, LossKind loss) {
    const double n = static_cast<double>(f.size());
    if (loss == LossKind::squared) return 2.0 * (f - y) / n;
    Vector g(f.size());
    for (Eigen::Index i = 0; i < f.size(); ++i) g[i] = (sigmoid(f[i]) - y[i]) / n;
    return g;
}

// The scalar gradient of the risk with respect to a dummy multiplier w at
// w = 1. squared: (2/n) sum f_i (f_i - y_i); bce: (1/n) sum f_i (sigma(f_i) - y_i).
inline double irm_penalty_inner(const Vector& f, const Vector& y, LossKind loss) {
    require(f.size() == y.size(), "prediction/target length mismatch");
    require(f.size() > 0, "empty environment");
    const double n = static_cast<double>(f.size());
    if (loss == LossKind::squared) return 2.0 * f.dot(f - y) / n;
    double acc = 0.0;
    for (Eigen::Index i = 0; i < f.size(); ++i) acc += f[i] * (sigmoid(f[i]) - y[i]);
    return acc / n;
}

inline Vector irm_penalty_inner_output_grad(const Vector& f, const Vector& y, LossKind loss) {
    const double n = static_cast<double>(f.size());
    Vector g(f.size());
    if (loss == LossKind::squared) {
        g = (2.0 * (2.0 * f - y)) / n;
        return g;
    }
    for (Eigen::Index i = 0; i < f.size(); ++i) {
        const double s = sigmoid(f[i]);
        g[i] = (s - y[i] + f[i] * s * (1.0 - s)) / n;
    }
    return g;
}

// Squared norm of the dummy-multiplier gradient at w = 1.
inline double irmv1_penalty(const Vector& f, const Vector& y, LossKind loss) {
    const double g = irm_penalty_inner(f, y, loss);
    return g * g;
}

// ---------------------------------------------------------------------------
// Parameter layout and forward/backward passes
// ---------------------------------------------------------------------------

namespace detail {

struct ModelSpec {
    ModelKind kind = ModelKind::linear;
    LossKind loss = LossKind::squared;
    int p = 0;
    int h = 0;

    int param_count() const {
        if (kind == ModelKind::mlp) return h * p + h + h * h + h + h + 1;
        return p + 1;
    }
    // mlp flat layout: [W1(h x p), b1(h), W2(h x h), b2(h), w3(h), b3]
    int off_b1() const { return h * p; }
    int off_w2() const { return h * p + h; }
    int off_b2() const { return h * p + h + h * h; }
    int off_w3() const { return h * p + h + h * h + h; }
    int off_b3() const { return h * p + h + h * h + h + h; }
};

struct ForwardCache {
    Vector f;
    Matrix a1, a1d, a2, a2d;  // mlp activations, post-tanh and post-dropout
};

struct DropoutMasks {
    Matrix m1, m2;  // pre-scaled inverted-dropout masks (0 or 1/keep)
};

inline Matrix unpack(const Vector& theta, int offset, int rows, int cols) {
    return Eigen::Map<const Matrix>(theta.data() + offset, rows, cols);
}

inline ForwardCache forward(const ModelSpec& spec, const Vector& theta, const Matrix& X,
                            const DropoutMasks* masks) {
    ForwardCache c;
    if (spec.kind != ModelKind::mlp) {
        c.f = X * theta.head(spec.p) + Vector::Constant(X.rows(), theta[spec.p]);
        return c;
    }
    const Matrix W1 = unpack(theta, 0, spec.h, spec.p);
    const Vector b1 = theta.segment(spec.off_b1(), spec.h);
    const Matrix W2 = unpack(theta, spec.off_w2(), spec.h, spec.h);
    const Vector b2 = theta.segment(spec.off_b2(), spec.h);
    const Vector w3 = theta.segment(spec.off_w3(), spec.h);
    const double b3 = theta[spec.off_b3()];

    c.a1 = ((X * W1.transpose()).rowwise() + b1.transpose()).array().tanh();
    c.a1d = masks ? (c.a1.array() * masks->m1.array()).matrix() : c.a1;
    c.a2 = ((c.a1d * W2.transpose()).rowwise() + b2.transpose()).array().tanh();
    c.a2d = masks ? (c.a2.array() * masks->m2.array()).matrix() : c.a2;
    c.f = c.a2d * w3 + Vector::Constant(X.rows(), b3);
    return c;
}

// Accumulates d(loss)/d(theta) for df = d(loss)/d(f) into grad.
inline void backward(const ModelSpec& spec, const Vector& theta, const Matrix& X,
                     const ForwardCache& c, const DropoutMasks* masks, const Vector& df,
                     Vector& grad) {
    if (spec.kind != ModelKind::mlp) {
        grad.head(spec.p) += X.transpose() * df;
        grad[spec.p] += df.sum();
        return;
    }
    const Matrix W2 = unpack(theta, spec.off_w2(), spec.h, spec.h);
    const Vector w3 = theta.segment(spec.off_w3(), spec.h);

    grad.segment(spec.off_w3(), spec.h) += c.a2d.transpose() * df;
    grad[spec.off_b3()] += df.sum();

    Matrix da2 = df * w3.transpose();
    if (masks) da2 = (da2.array() * masks->m2.array()).matrix();
    const Matrix dz2 = (da2.array() * (1.0 - c.a2.array().square())).matrix();
    Eigen::Map<Matrix>(grad.data() + spec.off_w2(), spec.h, spec.h) += dz2.transpose() * c.a1d;
    grad.segment(spec.off_b2(), spec.h) += dz2.colwise().sum().transpose();

    Matrix da1 = dz2 * W2;
    if (masks) da1 = (da1.array() * masks->m1.array()).matrix();
    const Matrix dz1 = (da1.array() * (1.0 - c.a1.array().square())).matrix();
    Eigen::Map<Matrix>(grad.data(), spec.h, spec.p) += dz1.transpose() * X;
    grad.segment(spec.off_b1(), spec.h) += dz1.colwise().sum().transpose();
}

// l2 applies to weight matrices and coefficient vectors, not to biases.
inline void add_l2(const ModelSpec& spec, const Vector& theta, double l2, double& loss,
                   Vector& grad) {
    if (l2 <= 0.0) return;
    auto apply = [&](int offset, int count) {
        loss += l2 * theta.segment(offset, count).squaredNorm();
        grad.segment(offset, count) += 2.0 * l2 * theta.segment(offset, count);
    };
    if (spec.kind != ModelKind::mlp) {
        apply(0, spec.p);
        return;
    }
    apply(0, spec.h * spec.p);
    apply(spec.off_w2(), spec.h * spec.h);
    apply(spec.off_w3(), spec.h);
}

struct ObjectiveEval {
    double value = 0.0;
    Vector grad;
    std::vector<double> env_risks;
};

// Full training objective and gradient at theta.
//   erm:   sample-weighted pooled mean risk
//   irmv1: mean_e risk + beta * mean_e penalty
//   vrex:  mean_e risk + beta * population variance of env risks
// plus the l2 term in all cases. Environment weighting uses the pooled
// convention for erm so that irmv1 at beta = 0 on equal-sized environments
// reproduces the erm loss surface exactly.
inline ObjectiveEval objective_loss_and_grad(const std::vector<Environment>& envs,
                                             const ModelSpec& spec, const Vector& theta,
                                             Objective obj, double beta, double l2,
                                             const std::vector<DropoutMasks>* masks) {
    const int n_envs = static_cast<int>(envs.size());
    Eigen::Index n_total = 0;
    for (const auto& e : envs) n_total += e.X.rows();

    ObjectiveEval out;
    out.grad = Vector::Zero(spec.param_count());
    out.env_risks.resize(static_cast<std::size_t>(n_envs));

    std::vector<ForwardCache> caches(static_cast<std::size_t>(n_envs));
    std::vector<double> pen_inner(static_cast<std::size_t>(n_envs), 0.0);
    for (int e = 0; e < n_envs; ++e) {
        const DropoutMasks* m = masks ? &(*masks)[static_cast<std::size_t>(e)] : nullptr;
        caches[e] = forward(spec, theta, envs[e].X, m);
        out.env_risks[e] = risk_value(caches[e].f, envs[e].y, spec.loss);
        if (obj == Objective::irmv1 && beta > 0.0)
            pen_inner[e] = irm_penalty_inner(caches[e].f, envs[e].y, spec.loss);
    }

    double risk_bar = 0.0;
    for (double r : out.env_risks) risk_bar += r;
    risk_bar /= n_envs;

    for (int e = 0; e < n_envs; ++e) {
        double alpha;
        switch (obj) {
            case Objective::erm:
                alpha = static_cast<double>(envs[e].X.rows()) / static_cast<double>(n_total);
                break;
            case Objective::irmv1:
                alpha = 1.0 / n_envs;
                break;
            case Objective::vrex:
                alpha = (1.0 + 2.0 * beta * (out.env_risks[e] - risk_bar)) / n_envs;
                break;
        }
        Vector df = alpha * risk_output_grad(caches[e].f, envs[e].y, spec.loss);
        out.value += alpha * out.env_risks[e];
        if (obj == Objective::irmv1 && beta > 0.0) {
            out.value += beta / n_envs * pen_inner[e] * pen_inner[e];
            df += (beta / n_envs * 2.0 * pen_inner[e]) *
                  irm_penalty_inner_output_grad(caches[e].f, envs[e].y, spec.loss);
        }
        const DropoutMasks* m = masks ? &(*masks)[static_cast<std::size_t>(e)] : nullptr;
        backward(spec, theta, envs[e].X, caches[e], m, df, out.grad);
    }
    if (obj == Objective::vrex) {
        // value so far holds sum alpha_e R_e = mean risk + 2 beta var; fix to mean + beta var
        double var = 0.0;
        for (double r : out.env_risks) var += (r - risk_bar) * (r - risk_bar);
        var /= n_envs;
        out.value -= beta * var;
    }
    add_l2(spec, theta, l2, out.value, out.grad);
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

// Linear output for regression kinds, logits for classification. Dropout off.
inline Vector predict(const ModelParams& model, const Matrix& X) {
    require(model.trained(), "model has no parameters");
    require(static_cast<int>(X.cols()) == model.input_dim,
            "feature count does not match the trained model");
    detail::ModelSpec spec{model.kind, model.loss, model.input_dim, model.hidden};
    return detail::forward(spec, model.theta, X, nullptr).f;
}

// Thresholds logits at 0; ties go to class 0.
inline Vector predict_class(const ModelParams& model, const Matrix& X) {
    Vector f = predict(model, X);
    for (Eigen::Index i = 0; i < f.size(); ++i) f[i] = f[i] > 0.0 ? 1.0 : 0.0;
    return f;
}

inline double zero_one_error(const ModelParams& model, const Matrix& X, const Vector& y01) {
    const Vector c = predict_class(model, X);
    double wrong = 0.0;
    for (Eigen::Index i = 0; i < c.size(); ++i) wrong += (c[i] != y01[i]) ? 1.0 : 0.0;
    return wrong / static_cast<double>(c.size());
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace detail {

inline void validate_envs(const std::vector<Environment>& envs, LossKind loss) {
    require(!envs.empty(), "need at least one environment");
    const auto p = envs.front().X.cols();
    for (const auto& e : envs) {
        require(e.X.rows() >= 1, "empty environment");
        require(e.X.cols() == p, "environments disagree on feature count");
        require(e.y.size() == e.X.rows(), "environment target length mismatch");
        require(e.X.allFinite() && e.y.allFinite(), "environment contains non-finite values");
        if (loss == LossKind::binary_cross_entropy)
            for (Eigen::Index i = 0; i < e.y.size(); ++i)
                require(e.y[i] == 0.0 || e.y[i] == 1.0,
                        "classification targets must be 0/1");
    }
}

inline LossKind resolve_loss(ModelKind kind, const TrainConfig& cfg) {
    if (kind == ModelKind::linear) return LossKind::squared;
    if (kind == ModelKind::logistic) return LossKind::binary_cross_entropy;
    return cfg.loss;
}

inline Vector init_theta(const ModelSpec& spec, std::mt19937_64& rng) {
    Vector theta = Vector::Zero(spec.param_count());
    if (spec.kind != ModelKind::mlp) return theta;
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto fill = [&](int offset, int count, double scale) {
        for (int i = 0; i < count; ++i) theta[offset + i] = scale * gauss(rng);
    };
    fill(0, spec.h * spec.p, 1.0 / std::sqrt(static_cast<double>(spec.p)));
    fill(spec.off_w2(), spec.h * spec.h, 1.0 / std::sqrt(static_cast<double>(spec.h)));
    fill(spec.off_w3(), spec.h, 1.0 / std::sqrt(static_cast<double>(spec.h)));
    return theta;
}

// Ridge normal equations for the pooled linear model; intercept unpenalized.
// Returns nothing when the system is singular or the solution is non-finite.
inline std::optional<Vector> solve_linear_closed_form(const Environment& pooled, double l2) {
    const auto n = pooled.X.rows();
    const auto p = pooled.X.cols();
    const double dn = static_cast<double>(n);
    Matrix A(p + 1, p + 1);
    A.topLeftCorner(p, p) = pooled.X.transpose() * pooled.X / dn;
    A.topLeftCorner(p, p) += l2 * Matrix::Identity(p, p);
    A.topRightCorner(p, 1) = pooled.X.colwise().mean().transpose();
    A.bottomLeftCorner(1, p) = pooled.X.colwise().mean();
    A(p, p) = 1.0;
    Vector b(p + 1);
    b.head(p) = pooled.X.transpose() * pooled.y / dn;
    b[p] = pooled.y.mean();
    const Eigen::FullPivLU<Matrix> lu(A);
    if (!lu.isInvertible()) return std::nullopt;
    Vector theta = lu.solve(b);
    if (!theta.allFinite()) return std::nullopt;
    return theta;
}

inline double validation_metric(const ModelParams& model, const Environment& val) {
    if (model.loss == LossKind::binary_cross_entropy) return zero_one_error(model, val.X, val.y);
    return (predict(model, val.X) - val.y).squaredNorm() / static_cast<double>(val.y.size());
}

}  // namespace detail

// Full-batch Adam on the chosen objective. Dropout masks are redrawn every
// iteration from the seed-fixed stream, so a fit is deterministic given its
// seed. When a validation environment is supplied, parameters are
// checkpointed every cfg.eval_every iterations and the earliest best
// checkpoint is returned.
inline ModelParams fit(const std::vector<Environment>& envs, ModelKind kind, Objective obj,
                       const TrainConfig& cfg, const Environment* validation = nullptr) {
    cfg.validate();
    const LossKind loss = detail::resolve_loss(kind, cfg);
    detail::validate_envs(envs, loss);
    if (obj == Objective::vrex) require(envs.size() >= 2, "v-rex needs at least two environments");

    const int p = static_cast<int>(envs.front().X.cols());
    detail::ModelSpec spec{kind, loss, p, kind == ModelKind::mlp ? mlp_hidden_size(p) : 0};

    ModelParams model;
    model.kind = kind;
    model.loss = loss;
    model.input_dim = p;
    model.hidden = spec.h;

    if (obj == Objective::erm && kind == ModelKind::linear && cfg.closed_form) {
        if (auto theta = detail::solve_linear_closed_form(pool(envs), cfg.l2)) {
            model.theta = *theta;
            return model;
        }
        // singular system: fall through to the gradient path
    }

    auto rng = make_rng(cfg.seed);
    Vector theta = detail::init_theta(spec, rng);
    Vector m = Vector::Zero(theta.size());
    Vector v = Vector::Zero(theta.size());

    const bool use_dropout = kind == ModelKind::mlp && cfg.dropout_p > 0.0;
    const double keep = 1.0 - cfg.dropout_p;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<detail::DropoutMasks> masks(use_dropout ? envs.size() : 0);

    double best_val = std::numeric_limits<double>::infinity();
    Vector best_theta;

    double b1t = 1.0, b2t = 1.0;
    for (int t = 0; t < cfg.n_iter; ++t) {
        if (use_dropout) {
            for (std::size_t e = 0; e < envs.size(); ++e) {
                auto draw = [&](Matrix& mask) {
                    mask.resize(envs[e].X.rows(), spec.h);
                    for (Eigen::Index i = 0; i < mask.size(); ++i)
                        mask.data()[i] = unit(rng) < keep ? 1.0 / keep : 0.0;
                };
                draw(masks[e].m1);
                draw(masks[e].m2);
            }
        }
        const double beta_now = (obj != Objective::erm && t >= cfg.warmup) ? cfg.beta : 0.0;
        auto eval = detail::objective_loss_and_grad(envs, spec, theta, obj, beta_now, cfg.l2,
                                                    use_dropout ? &masks : nullptr);
        if (!std::isfinite(eval.value))
            throw DivergenceError("training diverged (non-finite loss) at iteration " +
                                  std::to_string(t));

        b1t *= cfg.adam_beta1;
        b2t *= cfg.adam_beta2;
        m = cfg.adam_beta1 * m + (1.0 - cfg.adam_beta1) * eval.grad;
        v = cfg.adam_beta2 * v + (1.0 - cfg.adam_beta2) * eval.grad.array().square().matrix();
        const double step = cfg.lr / (1.0 - b1t);
        theta -= step * (m.array() / ((v.array() / (1.0 - b2t)).sqrt() + cfg.adam_eps)).matrix();

        if (validation && ((t + 1) % cfg.eval_every == 0 || t + 1 == cfg.n_iter)) {
            model.theta = theta;
            const double err = detail::validation_metric(model, *validation);
            if (err < best_val) {  // strict: ties keep the earliest checkpoint
                best_val = err;
                best_theta = theta;
            }
        }
    }
    model.theta = validation ? best_theta : theta;
    return model;
}

inline ModelParams fit_erm(const std::vector<Environment>& envs, ModelKind kind,
                           const TrainConfig& cfg, const Environment* validation = nullptr) {
    return fit(envs, kind, Objective::erm, cfg, validation);
}

inline ModelParams fit_irmv1(const std::vector<Environment>& envs, ModelKind kind,
                             const TrainConfig& cfg, const Environment* validation = nullptr) {
    return fit(envs, kind, Objective::irmv1, cfg, validation);
}

inline ModelParams fit_vrex(const std::vector<Environment>& envs, ModelKind kind,
                            const TrainConfig& cfg, const Environment* validation = nullptr) {
    return fit(envs, kind, Objective::vrex, cfg, validation);
}

}  // namespace decorr

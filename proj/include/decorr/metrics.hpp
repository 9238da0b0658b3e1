#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "decorr/models.hpp"

namespace decorr {

inline double coef_mse(const Vector& fitted, const Vector& truth) {
    require(fitted.size() == truth.size(), "coefficient length mismatch");
    require(fitted.size() > 0, "empty coefficient vectors");
    return (fitted - truth).squaredNorm() / static_cast<double>(fitted.size());
}

// Maximum 0-1 error over freshly generated test environments. Environments
// are streamed (generate, score, discard); labels may be {-1, +1} or {0, 1}.
inline double worst_case_error(const ModelParams& model,
                               const std::function<Environment(std::uint64_t)>& test_env_factory,
                               int n_envs, std::uint64_t seed) {
    require(model.loss == LossKind::binary_cross_entropy,
            "worst-case error is defined for classification models");
    require(n_envs >= 1, "need at least one test environment");
    double worst = 0.0;
    for (int i = 0; i < n_envs; ++i) {
        Environment env = test_env_factory(derive_seed(seed, {static_cast<std::uint64_t>(i)}));
        Vector y01 = env.y;
        for (Eigen::Index j = 0; j < y01.size(); ++j)
            if (y01[j] == -1.0) y01[j] = 0.0;
        worst = std::max(worst, zero_one_error(model, env.X, y01));
    }
    return worst;
}

struct TaskSummary {
    double avg = 0.0;
    double worst = 0.0;
    double stddev = 0.0;  // population standard deviation
};

inline TaskSummary task_set_summary(const std::vector<double>& per_task_errors) {
    require(!per_task_errors.empty(), "empty task list");
    TaskSummary s;
    for (double e : per_task_errors) {
        s.avg += e;
        s.worst = std::max(s.worst, e);
    }
    s.avg /= static_cast<double>(per_task_errors.size());
    double var = 0.0;
    for (double e : per_task_errors) var += (e - s.avg) * (e - s.avg);
    s.stddev = std::sqrt(var / static_cast<double>(per_task_errors.size()));
    return s;
}

// Per-method results of one experiment cell: mean/std over trials for each
// metric, the raw per-trial values, and an echo of the resolved config.
struct ExperimentReport {
    std::string method;
    struct MetricStat {
        double mean = 0.0;
        double stddev = 0.0;
        bool has_stddev = false;  // absent when fewer than 2 trials
    };
    std::map<std::string, MetricStat> metrics;
    int n_trials = 0;
    std::map<std::string, std::vector<double>> per_trial;
    nlohmann::json config_echo;

    void add_metric(const std::string& name, const std::vector<double>& values) {
        require(!values.empty(), "metric needs at least one value");
        MetricStat stat;
        for (double v : values) stat.mean += v;
        stat.mean /= static_cast<double>(values.size());
        if (values.size() >= 2) {
            double var = 0.0;
            for (double v : values) var += (v - stat.mean) * (v - stat.mean);
            stat.stddev = std::sqrt(var / static_cast<double>(values.size()));
            stat.has_stddev = true;
        }
        metrics[name] = stat;
        per_trial[name] = values;
        n_trials = static_cast<int>(values.size());
    }
};

}  // namespace decorr

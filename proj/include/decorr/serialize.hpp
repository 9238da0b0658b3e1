#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "decorr/metrics.hpp"
#include "decorr/models.hpp"
#include "decorr/partition.hpp"

namespace decorr {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Partition <-> JSON: {"k", "assignments", "objective_trace", "seed"}
// ---------------------------------------------------------------------------

inline json partition_to_json(const Partition& part) {
    return json{{"k", part.k},
                {"assignments", part.assignments},
                {"objective_trace", part.objective_trace},
                {"seed", part.seed}};
}

inline Partition partition_from_json(const json& j) {
    Partition part;
    part.k = j.at("k").get<int>();
    part.assignments = j.at("assignments").get<std::vector<int>>();
    part.objective_trace = j.value("objective_trace", std::vector<double>{});
    part.seed = j.value("seed", std::uint64_t{0});
    part.sizes = count_env_sizes(part.assignments, part.k);
    return part;
}

// ---------------------------------------------------------------------------
// ModelParams <-> JSON: kind, loss, shapes, flattened weights
// ---------------------------------------------------------------------------

inline std::string model_kind_name(ModelKind kind) {
    switch (kind) {
        case ModelKind::linear: return "linear";
        case ModelKind::logistic: return "logistic";
        case ModelKind::mlp: return "mlp";
    }
    return "linear";
}

inline ModelKind model_kind_from_name(const std::string& name) {
    if (name == "linear") return ModelKind::linear;
    if (name == "logistic") return ModelKind::logistic;
    if (name == "mlp") return ModelKind::mlp;
    throw std::invalid_argument("unknown model kind: " + name);
}

inline json model_to_json(const ModelParams& model) {
    json shapes = json::array();
    if (model.kind == ModelKind::mlp) {
        shapes = {{model.hidden, model.input_dim}, {model.hidden},
                  {model.hidden, model.hidden},    {model.hidden},
                  {model.hidden},                  {1}};
    } else {
        shapes = {{model.input_dim}, {1}};
    }
    return json{{"kind", model_kind_name(model.kind)},
                {"loss", model.loss == LossKind::squared ? "squared" : "bce"},
                {"input_dim", model.input_dim},
                {"hidden", model.hidden},
                {"shapes", shapes},
                {"weights", std::vector<double>(model.theta.data(),
                                                model.theta.data() + model.theta.size())}};
}

inline ModelParams model_from_json(const json& j) {
    ModelParams model;
    model.kind = model_kind_from_name(j.at("kind").get<std::string>());
    model.loss = j.at("loss").get<std::string>() == "squared" ? LossKind::squared
                                                              : LossKind::binary_cross_entropy;
    model.input_dim = j.at("input_dim").get<int>();
    model.hidden = j.value("hidden", 0);
    const auto weights = j.at("weights").get<std::vector<double>>();
    model.theta = Eigen::Map<const Vector>(weights.data(), static_cast<Eigen::Index>(weights.size()));
    detail::ModelSpec spec{model.kind, model.loss, model.input_dim, model.hidden};
    require(model.theta.size() == spec.param_count(), "weight count does not match model shape");
    return model;
}

// ---------------------------------------------------------------------------
// ExperimentReport -> JSON
// ---------------------------------------------------------------------------

inline json report_to_json(const ExperimentReport& report) {
    json metrics = json::object();
    for (const auto& [name, stat] : report.metrics) {
        json entry{{"mean", stat.mean}};
        if (stat.has_stddev) entry["std"] = stat.stddev;
        metrics[name] = entry;
    }
    return json{{"method", report.method},
                {"metrics", metrics},
                {"n_trials", report.n_trials},
                {"per_trial", report.per_trial},
                {"config", report.config_echo}};
}

inline json reports_to_json(const std::vector<ExperimentReport>& reports) {
    json arr = json::array();
    for (const auto& r : reports) arr.push_back(report_to_json(r));
    return arr;
}

// ---------------------------------------------------------------------------
// File helpers
// ---------------------------------------------------------------------------

inline void write_json_file(const std::string& path, const json& j) {
    std::ofstream out(path);
    require(out.good(), "cannot write file: " + path);
    out << j.dump(2) << "\n";
    require(out.good(), "failed while writing file: " + path);
}

inline json read_json_file(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "cannot open file: " + path);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(path + ": " + e.what());
    }
}

}  // namespace decorr

// Command-line front end: dataset partitioning, invariant-model training,
// and experiment suites over CSV data.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <random>
#include <string>

#include "decorr/baselines.hpp"
#include "decorr/csv.hpp"
#include "decorr/experiments.hpp"
#include "decorr/models.hpp"
#include "decorr/partition.hpp"
#include "decorr/serialize.hpp"

namespace {

using namespace decorr;

constexpr std::uint64_t kSeedUnset = ~std::uint64_t{0};

std::uint64_t resolve_seed(std::uint64_t seed) {
    if (seed != kSeedUnset) return seed;
    const std::uint64_t drawn = std::random_device{}();
    std::cerr << "no --seed given; using random seed " << drawn << "\n";
    return drawn;
}

// --schema accepts inline JSON or @path-to-json-file.
CsvSchema parse_schema(const std::string& arg) {
    CsvSchema schema;
    schema.target = "y";
    if (arg.empty()) return schema;
    json j;
    if (arg.front() == '@') {
        j = read_json_file(arg.substr(1));
    } else {
        try {
            j = json::parse(arg);
        } catch (const json::parse_error& e) {
            throw std::invalid_argument(std::string("--schema: ") + e.what());
        }
    }
    schema.target = j.value("target", schema.target);
    schema.features = j.value("features", schema.features);
    schema.env_column = j.value("env_column", schema.env_column);
    schema.standardize = j.value("standardize", schema.standardize);
    return schema;
}

json environment_diagnostics(const CsvDataset& data, const Partition& part) {
    json envs = json::array();
    for (int e = 0; e < part.k; ++e) {
        const auto idx = part.env_indices(e);
        const Matrix sub = select_rows(data.X, idx);
        const Matrix corr = weighted_correlation(sub, Vector::Ones(sub.rows())).r;
        json corr_rows = json::array();
        for (Eigen::Index i = 0; i < corr.rows(); ++i) {
            json row = json::array();
            for (Eigen::Index j = 0; j < corr.cols(); ++j) row.push_back(corr(i, j));
            corr_rows.push_back(row);
        }
        envs.push_back(json{{"env", e},
                            {"size", static_cast<int>(idx.size())},
                            {"frobenius_dist_sq", frobenius_dist_sq(corr)},
                            {"correlation", corr_rows}});
    }
    return envs;
}

struct PartitionArgs {
    std::string input, schema, method, output;
    int k = 2;
    double p0 = 0.1;
    double alpha = 0.1;
    int iters = 0;  // 0 = method default
    double lambda = 100.0;
    std::uint64_t seed = kSeedUnset;
    bool standardize = true;
};

int run_partition(const PartitionArgs& args) {
    CsvSchema schema = parse_schema(args.schema);
    schema.standardize = args.standardize;
    const CsvDataset data = read_csv_dataset(args.input, schema);
    const std::uint64_t seed = resolve_seed(args.seed);
    const int n = static_cast<int>(data.X.rows());

    Partition part;
    if (args.method == "decorr") {
        DecorrConfig cfg;
        cfg.k = args.k;
        cfg.p0 = args.p0;
        cfg.alpha = args.alpha;
        if (args.iters > 0) cfg.max_epochs = args.iters;
        cfg.lambda = args.lambda;
        cfg.seed = seed;
        cfg.standardize = args.standardize;
        part = decorr_partition(data.X, cfg);
    } else if (args.method == "kmeans") {
        part = kmeans_partition(data.X, args.k, seed);
    } else if (args.method == "random") {
        part = random_partition(n, args.k, seed);
    } else if (args.method == "eiil") {
        const bool binary = (data.y.array() == 0.0 || data.y.array() == 1.0).all();
        TrainConfig ref_cfg;
        ref_cfg.n_iter = 2000;
        ref_cfg.closed_form = true;
        ref_cfg.seed = derive_seed(seed, {0xef});
        const ModelParams reference =
            fit_erm({Environment{data.X, data.y}},
                    binary ? ModelKind::logistic : ModelKind::linear, ref_cfg);
        EiilConfig cfg;
        if (args.iters > 0) cfg.steps = args.iters;
        cfg.seed = seed;
        part = eiil_partition(data.X, data.y, cfg, reference);
    } else {
        throw std::invalid_argument("unknown method '" + args.method +
                                    "' (valid: decorr, kmeans, random, eiil)");
    }

    json out = partition_to_json(part);
    out["diagnostics"] = environment_diagnostics(data, part);
    write_json_file(args.output, out);
    std::cout << "partitioned " << n << " rows into " << part.k << " environments (sizes:";
    for (int s : part.sizes) std::cout << " " << s;
    std::cout << ") -> " << args.output << "\n";
    return 0;
}

struct TrainArgs {
    std::string input, schema, partition, learner = "erm", model = "linear", output;
    double beta = 0.0;
    int iters = 0;
    std::uint64_t seed = kSeedUnset;
};

int run_train(const TrainArgs& args) {
    const CsvSchema schema = parse_schema(args.schema);
    const CsvDataset data = read_csv_dataset(args.input, schema);
    const Partition part = partition_from_json(read_json_file(args.partition));
    if (static_cast<Eigen::Index>(part.assignments.size()) != data.X.rows())
        throw std::invalid_argument("partition covers " + std::to_string(part.assignments.size()) +
                                    " rows but the CSV has " + std::to_string(data.X.rows()));

    std::vector<Environment> envs;
    for (int e = 0; e < part.k; ++e) {
        const auto idx = part.env_indices(e);
        require(!idx.empty(), "partition has an empty environment");
        envs.push_back(Environment{select_rows(data.X, idx), select_rows(data.y, idx)});
    }
    if (args.learner == "irmv1" && part.k < 2)
        std::cerr << "warning: irmv1 with a single environment degenerates toward erm "
                     "plus a self-penalty\n";

    const ModelKind kind = model_kind_from_name(args.model);
    TrainConfig cfg;
    cfg.beta = args.beta;
    if (args.iters > 0) cfg.n_iter = args.iters;
    cfg.seed = resolve_seed(args.seed);
    if (kind == ModelKind::mlp)
        cfg.loss = (data.y.array() == 0.0 || data.y.array() == 1.0).all()
                       ? LossKind::binary_cross_entropy
                       : LossKind::squared;
    if (kind == ModelKind::linear && args.learner == "erm") cfg.closed_form = true;

    ModelParams model;
    if (args.learner == "erm") {
        model = fit_erm({Environment{data.X, data.y}}, kind, cfg);
    } else if (args.learner == "irmv1") {
        model = fit_irmv1(envs, kind, cfg);
    } else if (args.learner == "vrex") {
        model = fit_vrex(envs, kind, cfg);
    } else {
        throw std::invalid_argument("unknown learner '" + args.learner +
                                    "' (valid: erm, irmv1, vrex)");
    }

    const bool classify = model.loss == LossKind::binary_cross_entropy;
    json per_env = json::array();
    for (std::size_t e = 0; e < envs.size(); ++e) {
        const double err =
            classify ? zero_one_error(model, envs[e].X, envs[e].y)
                     : (predict(model, envs[e].X) - envs[e].y).squaredNorm() /
                           static_cast<double>(envs[e].y.size());
        per_env.push_back(err);
    }
    const double pooled_err =
        classify ? zero_one_error(model, data.X, data.y)
                 : (predict(model, data.X) - data.y).squaredNorm() /
                       static_cast<double>(data.y.size());
    json metrics{{"metric", classify ? "error_rate" : "mse"},
                 {"train", pooled_err},
                 {"train_per_env", per_env}};

    write_json_file(args.output, model_to_json(model));
    write_json_file(args.output + ".metrics.json", metrics);
    std::cout << "trained " << args.learner << " (" << args.model << "), train "
              << metrics["metric"].get<std::string>() << " " << pooled_err << " -> "
              << args.output << "\n";
    return 0;
}

struct SuiteArgs {
    std::string config, output;
    std::uint64_t seed = kSeedUnset;
    bool full_scale = false;
    int trials = 0;
};

int run_suite_cmd(const SuiteArgs& args) {
    SuiteConfig cfg = suite_config_from_json(read_json_file(args.config), args.full_scale);
    if (!args.output.empty()) cfg.output_dir = args.output;
    if (args.seed != kSeedUnset) cfg.master_seed = args.seed;
    if (args.trials > 0) cfg.trials = args.trials;

    const SuiteResult result = run_suite(cfg);
    if (!result.reports.empty()) {
        std::cout << std::left << std::setw(14) << "method" << std::setw(26) << "cell"
                  << std::setw(20) << "metric" << "mean (std)\n";
        for (const auto& rep : result.reports) {
            std::string cell;
            for (const char* key : {"n_envs", "d", "E", "n_tasks"})
                if (rep.config_echo.contains(key))
                    cell += std::string(key) + "=" + rep.config_echo.at(key).dump() + " ";
            for (const auto& [metric, stat] : rep.metrics) {
                std::cout << std::left << std::setw(14) << rep.method << std::setw(26) << cell
                          << std::setw(20) << metric << stat.mean;
                if (stat.has_stddev) std::cout << " (" << stat.stddev << ")";
                std::cout << "\n";
            }
        }
    }
    for (const auto& f : result.files) std::cout << "wrote " << f << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"decorr: low-correlation environment partitioning and invariant-model training"};
    app.require_subcommand(1);

    PartitionArgs part_args;
    auto* part = app.add_subcommand("partition", "split a CSV dataset into environments");
    part->add_option("--input", part_args.input, "input CSV file")->required();
    part->add_option("--schema", part_args.schema, "schema JSON (inline or @file)");
    part->add_option("--method", part_args.method, "decorr | kmeans | random | eiil")->required();
    part->add_option("--k", part_args.k, "number of environments");
    part->add_option("--p0", part_args.p0, "lower weight bound");
    part->add_option("--alpha", part_args.alpha, "weight-optimization step size");
    part->add_option("--iters", part_args.iters, "iteration cap (decorr epochs / eiil steps)");
    part->add_option("--lambda", part_args.lambda, "mean-constraint penalty weight");
    part->add_option("--seed", part_args.seed, "RNG seed");
    part->add_option("--output", part_args.output, "output partition JSON")->required();
    part->add_flag("--standardize,!--no-standardize", part_args.standardize,
                   "z-score features before partitioning (default on)");

    TrainArgs train_args;
    auto* train = app.add_subcommand("train", "train a model on a partitioned CSV dataset");
    train->add_option("--input", train_args.input, "input CSV file")->required();
    train->add_option("--schema", train_args.schema, "schema JSON (inline or @file)");
    train->add_option("--partition", train_args.partition, "partition JSON file")->required();
    train->add_option("--learner", train_args.learner, "erm | irmv1 | vrex");
    train->add_option("--model", train_args.model, "linear | logistic | mlp");
    train->add_option("--beta", train_args.beta, "invariance penalty weight");
    train->add_option("--iters", train_args.iters, "training iterations");
    train->add_option("--seed", train_args.seed, "RNG seed");
    train->add_option("--output", train_args.output, "output model JSON")->required();

    SuiteArgs suite_args;
    auto* suite = app.add_subcommand("suite", "run an experiment suite from a config file");
    suite->add_option("--config", suite_args.config, "suite config JSON")->required();
    suite->add_option("--output", suite_args.output, "output directory override");
    suite->add_option("--seed", suite_args.seed, "master seed override");
    suite->add_option("--trials", suite_args.trials, "trial-count override");
    suite->add_flag("--full-scale", suite_args.full_scale,
                    "paper-scale trial and test-environment counts");

    try {
        app.parse(argc, argv);
        if (part->parsed()) return run_partition(part_args);
        if (train->parsed()) return run_train(train_args);
        if (suite->parsed()) return run_suite_cmd(suite_args);
        return 1;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const DivergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

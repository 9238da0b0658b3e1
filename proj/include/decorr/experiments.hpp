#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "decorr/baselines.hpp"
#include "decorr/csv.hpp"
#include "decorr/datagen.hpp"
#include "decorr/metrics.hpp"
#include "decorr/models.hpp"
#include "decorr/partition.hpp"
#include "decorr/serialize.hpp"

namespace decorr {

enum class Suite { irm_example, risks_of_irm, toy_dump, csv_tasks };

// Stable method ids keyed into seed derivation, so adding or removing a
// method from a run never perturbs the other methods' random streams.
enum class Method : std::uint64_t {
    erm = 1,
    random_irm = 2,
    eiil = 3,
    kmeans_irm = 4,
    decorr_irm = 5,
    irm_oracle = 6,
    vrex = 7,
};

inline const std::vector<std::pair<std::string, Method>>& method_registry() {
    static const std::vector<std::pair<std::string, Method>> table = {
        {"erm", Method::erm},           {"random+irm", Method::random_irm},
        {"eiil", Method::eiil},         {"kmeans+irm", Method::kmeans_irm},
        {"decorr+irm", Method::decorr_irm}, {"irm_oracle", Method::irm_oracle},
        {"vrex", Method::vrex},
    };
    return table;
}

inline Method method_from_name(const std::string& name) {
    for (const auto& [n, m] : method_registry())
        if (n == name) return m;
    std::string valid;
    for (const auto& [n, m] : method_registry()) valid += (valid.empty() ? "" : ", ") + n;
    throw std::invalid_argument("unknown method '" + name + "' (valid: " + valid + ")");
}

inline std::string method_name(Method m) {
    for (const auto& [n, id] : method_registry())
        if (id == m) return n;
    return "?";
}

inline Suite suite_from_name(const std::string& name) {
    if (name == "irm_example") return Suite::irm_example;
    if (name == "risks_of_irm") return Suite::risks_of_irm;
    if (name == "toy_dump") return Suite::toy_dump;
    if (name == "csv_tasks") return Suite::csv_tasks;
    throw std::invalid_argument(
        "unknown suite '" + name + "' (valid: irm_example, risks_of_irm, toy_dump, csv_tasks)");
}

inline std::string suite_name(Suite s) {
    switch (s) {
        case Suite::irm_example: return "irm_example";
        case Suite::risks_of_irm: return "risks_of_irm";
        case Suite::toy_dump: return "toy_dump";
        case Suite::csv_tasks: return "csv_tasks";
    }
    return "?";
}

struct SuiteConfig {
    Suite suite = Suite::irm_example;
    std::vector<std::string> methods;  // empty = suite default
    int trials = 5;                    // desk scale; full_scale raises to 10
    std::vector<int> dims{2, 5, 10, 20};
    std::vector<int> env_counts{2, 3};
    int e_min = 2, e_max = 8;
    int n_test_envs = 500;             // full_scale raises to 5000
    int n_per_env = 1000;
    int toy_n = 1000;
    std::string output_dir = ".";
    std::uint64_t master_seed = 0;
    bool full_scale = false;

    // csv_tasks inputs; empty csv_path synthesizes a dataset first
    std::string csv_path;
    CsvSchema schema;
    int synth_envs = 5;
    int synth_n_per_env = 300;

    // training knobs; n_iter <= 0, warmup < 0 and beta < 0 pick per-suite defaults
    int n_iter = 0;
    int warmup = -1;
    double beta = -1.0;
    DecorrConfig decorr;
    EiilConfig eiil;
    int threads = 0;  // 0 = hardware concurrency

    std::vector<std::string> resolved_methods() const {
        if (!methods.empty()) return methods;
        switch (suite) {
            case Suite::irm_example:
            case Suite::risks_of_irm:
                return {"erm", "random+irm", "eiil", "kmeans+irm", "decorr+irm", "irm_oracle"};
            case Suite::toy_dump:
                return {"eiil", "kmeans+irm", "decorr+irm"};
            case Suite::csv_tasks:
                return {"erm", "random+irm", "eiil", "kmeans+irm", "decorr+irm", "irm_oracle", "vrex"};
        }
        return {};
    }
    int resolved_n_iter() const {
        if (n_iter > 0) return n_iter;
        switch (suite) {
            case Suite::irm_example: return 4000;
            case Suite::risks_of_irm: return 20000;
            case Suite::toy_dump: return 1000;
            case Suite::csv_tasks: return 600;
        }
        return 4000;
    }
    // The penalty needs the risk-only phase to leave the small-output
    // region first, otherwise beta * penalty traps the model at f = 0.
    int resolved_warmup() const {
        if (warmup >= 0) return warmup;
        switch (suite) {
            case Suite::irm_example:
            case Suite::risks_of_irm:
            case Suite::toy_dump:
                return 1000;
            case Suite::csv_tasks:
                return 100;
        }
        return 1000;
    }
    double resolved_beta() const {
        if (beta >= 0.0) return beta;
        return suite == Suite::irm_example ? 10.0 : 1e4;
    }
    void validate() const {
        require(trials >= 1, "trials must be >= 1");
        require(!resolved_methods().empty(), "method list must not be empty");
        for (const auto& m : resolved_methods()) method_from_name(m);
        require(n_test_envs >= 1, "n_test_envs must be >= 1");
        require(n_per_env >= 2, "n_per_env must be >= 2");
    }
};

// ---------------------------------------------------------------------------
// Worker pool
// ---------------------------------------------------------------------------

// Runs fn(0..n_items) on a small thread pool; rethrows the first failure.
inline void parallel_for(int n_items, const std::function<void(int)>& fn, int n_threads = 0) {
    if (n_items <= 0) return;
    if (n_threads <= 0)
        n_threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    n_threads = std::min(n_threads, n_items);
    if (n_threads == 1) {
        for (int i = 0; i < n_items; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (;;) {
            const int i = next.fetch_add(1);
            if (i >= n_items) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(n_threads));
    for (int t = 0; t < n_threads; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------
// Shared partitioning + training plumbing
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<Environment> split_by_partition(const Environment& pooled,
                                                   const Partition& part) {
    std::vector<Environment> envs;
    envs.reserve(static_cast<std::size_t>(part.k));
    for (int e = 0; e < part.k; ++e) {
        const auto idx = part.env_indices(e);
        require(!idx.empty(), "partition produced an empty environment");
        Environment env;
        env.X = select_rows(pooled.X, idx);
        if (pooled.y.size() > 0) env.y = select_rows(pooled.y, idx);
        envs.push_back(std::move(env));
    }
    return envs;
}

// Builds the partition a method asks for. EIIL always infers two
// environments and trains its own ERM reference model.
inline Partition make_method_partition(Method method, const Environment& pooled, int k,
                                       std::uint64_t seed, const SuiteConfig& cfg,
                                       ModelKind reference_kind, const TrainConfig& reference_cfg) {
    const int n = pooled.n();
    switch (method) {
        case Method::random_irm:
            return random_partition(n, k, seed);
        case Method::kmeans_irm:
            return kmeans_partition(standardize_columns(pooled.X), k, seed);
        case Method::decorr_irm: {
            DecorrConfig dc = cfg.decorr;
            dc.k = k;
            dc.seed = seed;
            return decorr_partition(pooled.X, dc);
        }
        case Method::eiil: {
            TrainConfig ref_cfg = reference_cfg;
            ref_cfg.seed = derive_seed(seed, {0xef});
            const ModelParams reference = fit_erm({pooled}, reference_kind, ref_cfg);
            EiilConfig ec = cfg.eiil;
            ec.seed = seed;
            return eiil_partition(pooled.X, pooled.y, ec, reference);
        }
        default:
            throw std::invalid_argument("method has no partitioner: " + method_name(method));
    }
}

inline json decorr_config_echo(const DecorrConfig& dc) {
    return json{{"p0", dc.p0},   {"alpha", dc.alpha}, {"max_epochs", dc.max_epochs},
                {"lambda", dc.lambda}, {"tol", dc.tol},     {"standardize", dc.standardize}};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Suite: linear cause/effect example (coefficient recovery)
// ---------------------------------------------------------------------------

inline std::vector<ExperimentReport> run_irm_example_suite(const SuiteConfig& cfg) {
    cfg.validate();
    const auto methods = cfg.resolved_methods();
    const std::vector<double> all_sigmas{0.1, 1.5, 2.0};
    const double beta = cfg.resolved_beta();
    const int n_iter = cfg.resolved_n_iter();
    const int warmup = cfg.resolved_warmup();

    struct Cell {
        int n_envs, d;
    };
    std::vector<Cell> cells;
    for (int n_envs : cfg.env_counts)
        for (int d : cfg.dims) cells.push_back({n_envs, d});
    require(!cells.empty(), "no (env count, dimension) cells configured");
    for (const auto& c : cells)
        require(c.n_envs >= 1 && c.n_envs <= static_cast<int>(all_sigmas.size()),
                "env count must be between 1 and 3");

    // results[cell][method][trial]
    std::vector<std::vector<std::vector<double>>> results(
        cells.size(), std::vector<std::vector<double>>(
                          methods.size(), std::vector<double>(static_cast<std::size_t>(cfg.trials))));

    const int n_items = static_cast<int>(cells.size()) * cfg.trials;
    parallel_for(n_items, [&](int item) {
        const int ci = item / cfg.trials;
        const int trial = item % cfg.trials;
        const Cell cell = cells[static_cast<std::size_t>(ci)];
        const std::uint64_t cell_id =
            static_cast<std::uint64_t>(cell.n_envs) * 1000 + static_cast<std::uint64_t>(cell.d);

        IrmExampleConfig gen;
        gen.d = cell.d;
        gen.sigmas.assign(all_sigmas.begin(), all_sigmas.begin() + cell.n_envs);
        gen.n_per_env = cfg.n_per_env;
        gen.seed = derive_seed(cfg.master_seed, {1, cell_id, 0xda7a, static_cast<std::uint64_t>(trial)});
        const IrmExampleData data = gen_irm_example(gen);
        const Environment pooled = pool(data.envs);

        for (std::size_t mi = 0; mi < methods.size(); ++mi) {
            const Method method = method_from_name(methods[mi]);
            const std::uint64_t seed = derive_seed(
                cfg.master_seed,
                {1, cell_id, static_cast<std::uint64_t>(method), static_cast<std::uint64_t>(trial)});
            TrainConfig tc;
            tc.beta = beta;
            tc.n_iter = n_iter;
            tc.warmup = warmup;
            tc.seed = seed;

            ModelParams model;
            if (method == Method::erm) {
                TrainConfig erm_cfg = tc;
                erm_cfg.closed_form = true;
                model = fit_erm({pooled}, ModelKind::linear, erm_cfg);
            } else if (method == Method::irm_oracle) {
                model = fit_irmv1(data.envs, ModelKind::linear, tc);
            } else if (method == Method::vrex) {
                model = fit_vrex(data.envs, ModelKind::linear, tc);  // natural environments
            } else {
                TrainConfig ref_cfg = tc;
                ref_cfg.closed_form = true;
                const Partition part = detail::make_method_partition(
                    method, pooled, cell.n_envs, seed, cfg, ModelKind::linear, ref_cfg);
                model = fit_irmv1(detail::split_by_partition(pooled, part), ModelKind::linear, tc);
            }
            results[static_cast<std::size_t>(ci)][mi][static_cast<std::size_t>(trial)] =
                coef_mse(model.coefficients(), data.beta_star);
        }
    }, cfg.threads);

    std::vector<ExperimentReport> reports;
    for (std::size_t ci = 0; ci < cells.size(); ++ci) {
        for (std::size_t mi = 0; mi < methods.size(); ++mi) {
            ExperimentReport rep;
            rep.method = methods[mi];
            rep.add_metric("coef_mse", results[ci][mi]);
            rep.config_echo = json{{"suite", "irm_example"},
                                   {"n_envs", cells[ci].n_envs},
                                   {"d", cells[ci].d},
                                   {"n_per_env", cfg.n_per_env},
                                   {"trials", cfg.trials},
                                   {"beta", beta},
                                   {"n_iter", n_iter},
                                   {"warmup", warmup},
                                   {"seed", cfg.master_seed},
                                   {"decorr", detail::decorr_config_echo(cfg.decorr)}};
            reports.push_back(std::move(rep));
        }
    }
    return reports;
}

// ---------------------------------------------------------------------------
// Suite: worst-case error across generated test environments
// ---------------------------------------------------------------------------

inline std::vector<Environment> to_zero_one_labels(const std::vector<Environment>& envs) {
    std::vector<Environment> out = envs;
    for (auto& e : out)
        for (Eigen::Index i = 0; i < e.y.size(); ++i)
            if (e.y[i] == -1.0) e.y[i] = 0.0;
    return out;
}

inline std::vector<ExperimentReport> run_risks_suite(const SuiteConfig& cfg) {
    cfg.validate();
    require(cfg.e_min >= 1 && cfg.e_max >= cfg.e_min, "invalid environment-count range");
    const auto methods = cfg.resolved_methods();
    const double beta = cfg.resolved_beta();
    const int n_iter = cfg.resolved_n_iter();
    const int warmup = cfg.resolved_warmup();
    const int n_cells = cfg.e_max - cfg.e_min + 1;

    std::vector<std::vector<std::vector<double>>> results(
        static_cast<std::size_t>(n_cells),
        std::vector<std::vector<double>>(methods.size(),
                                         std::vector<double>(static_cast<std::size_t>(cfg.trials))));

    parallel_for(n_cells * cfg.trials, [&](int item) {
        const int ci = item / cfg.trials;
        const int trial = item % cfg.trials;
        const int n_envs = cfg.e_min + ci;
        const std::uint64_t cell_id = static_cast<std::uint64_t>(n_envs);

        SemConfig sem = make_sem_config(
            n_envs, derive_seed(cfg.master_seed, {2, cell_id, 0xda7a, static_cast<std::uint64_t>(trial)}));
        sem.n_per_env = cfg.n_per_env;
        const SemData data = gen_sem(sem);
        const std::vector<Environment> envs01 = to_zero_one_labels(data.train_envs);
        const Environment pooled = pool(envs01);
        const auto factory = sem_test_env_factory(sem);
        const std::uint64_t eval_seed =
            derive_seed(cfg.master_seed, {2, cell_id, 0xe7a1, static_cast<std::uint64_t>(trial)});

        for (std::size_t mi = 0; mi < methods.size(); ++mi) {
            const Method method = method_from_name(methods[mi]);
            const std::uint64_t seed = derive_seed(
                cfg.master_seed,
                {2, cell_id, static_cast<std::uint64_t>(method), static_cast<std::uint64_t>(trial)});
            TrainConfig tc;
            tc.beta = beta;
            tc.n_iter = n_iter;
            tc.warmup = warmup;
            tc.seed = seed;

            ModelParams model;
            if (method == Method::erm) {
                model = fit_erm({pooled}, ModelKind::logistic, tc);
            } else if (method == Method::irm_oracle) {
                model = fit_irmv1(envs01, ModelKind::logistic, tc);
            } else if (method == Method::vrex) {
                model = fit_vrex(envs01, ModelKind::logistic, tc);
            } else {
                const Partition part = detail::make_method_partition(
                    method, pooled, n_envs, seed, cfg, ModelKind::logistic, tc);
                model = fit_irmv1(detail::split_by_partition(pooled, part), ModelKind::logistic, tc);
            }
            results[static_cast<std::size_t>(ci)][mi][static_cast<std::size_t>(trial)] =
                worst_case_error(model, factory, cfg.n_test_envs, eval_seed);
        }
    }, cfg.threads);

    std::vector<ExperimentReport> reports;
    for (int ci = 0; ci < n_cells; ++ci) {
        for (std::size_t mi = 0; mi < methods.size(); ++mi) {
            ExperimentReport rep;
            rep.method = methods[mi];
            rep.add_metric("worst_case_error", results[static_cast<std::size_t>(ci)][mi]);
            rep.config_echo = json{{"suite", "risks_of_irm"},
                                   {"E", cfg.e_min + ci},
                                   {"n_per_env", cfg.n_per_env},
                                   {"n_test_envs", cfg.n_test_envs},
                                   {"trials", cfg.trials},
                                   {"beta", beta},
                                   {"n_iter", n_iter},
                                   {"warmup", warmup},
                                   {"seed", cfg.master_seed},
                                   {"decorr", detail::decorr_config_echo(cfg.decorr)}};
            reports.push_back(std::move(rep));
        }
    }
    return reports;
}

// ---------------------------------------------------------------------------
// Suite: toy scatter dump for external plotting
// ---------------------------------------------------------------------------

// Writes one CSV per method with columns x0, x1, y, env.
inline std::vector<std::string> run_toy_dump(const SuiteConfig& cfg) {
    cfg.validate();
    std::filesystem::create_directories(cfg.output_dir);
    const Environment toy = gen_toy_2d(cfg.toy_n, derive_seed(cfg.master_seed, {3, 0xda7a}));

    std::vector<std::string> written;
    for (const auto& name : cfg.resolved_methods()) {
        const Method method = method_from_name(name);
        const std::uint64_t seed =
            derive_seed(cfg.master_seed, {3, static_cast<std::uint64_t>(method)});
        Partition part;
        if (method == Method::random_irm) {
            part = random_partition(toy.n(), 2, seed);
        } else {
            TrainConfig ref;
            ref.closed_form = true;
            ref.n_iter = cfg.resolved_n_iter();
            part = detail::make_method_partition(method, toy, 2, seed, cfg, ModelKind::linear, ref);
        }
        Matrix out(toy.n(), 4);
        out.leftCols(2) = toy.X;
        out.col(2) = toy.y;
        for (int i = 0; i < toy.n(); ++i) out(i, 3) = part.assignments[static_cast<std::size_t>(i)];
        std::string file_method = name.substr(0, name.find('+'));
        const std::string path =
            (std::filesystem::path(cfg.output_dir) / ("toy_" + file_method + ".csv")).string();
        write_csv(path, {"x0", "x1", "y", "env"}, out);
        written.push_back(path);
    }
    return written;
}

// ---------------------------------------------------------------------------
// Suite: environment-labeled CSV task set
// ---------------------------------------------------------------------------

struct CsvTask {
    std::vector<int> train_envs;
    int val_env;
    int test_env;
};

// All (3 train, 1 validation, 1 test) splits of the environment levels;
// 5 environments give 20 tasks.
inline std::vector<CsvTask> enumerate_csv_tasks(int n_envs) {
    require(n_envs >= 5, "the 3-train task protocol needs at least 5 environments");
    std::vector<CsvTask> tasks;
    for (int a = 0; a < n_envs; ++a)
        for (int b = a + 1; b < n_envs; ++b)
            for (int c = b + 1; c < n_envs; ++c) {
                std::vector<int> rest;
                for (int e = 0; e < n_envs; ++e)
                    if (e != a && e != b && e != c) rest.push_back(e);
                for (int v : rest)
                    for (int t : rest)
                        if (v != t) tasks.push_back({{a, b, c}, v, t});
            }
    return tasks;
}

// Synthesizes a binary-label dataset with synth_envs pseudo-year
// environments in the CSV schema the ingestion path reads.
inline std::string synthesize_task_csv(const SuiteConfig& cfg) {
    SemConfig sem = make_sem_config(cfg.synth_envs, derive_seed(cfg.master_seed, {4, 0xda7a}));
    sem.n_per_env = cfg.synth_n_per_env;
    const SemData data = gen_sem(sem);

    Environment pooled = pool(to_zero_one_labels(data.train_envs));
    std::vector<std::string> env_labels;
    for (int e = 0; e < cfg.synth_envs; ++e)
        for (int i = 0; i < sem.n_per_env; ++i) env_labels.push_back("year" + std::to_string(2014 + e));

    std::vector<std::string> feature_names;
    for (int j = 0; j < sem.d_c; ++j) feature_names.push_back("zc" + std::to_string(j));
    for (int j = 0; j < sem.d_e; ++j) feature_names.push_back("ze" + std::to_string(j));

    std::filesystem::create_directories(cfg.output_dir);
    const std::string path =
        (std::filesystem::path(cfg.output_dir) / "synthetic_tasks.csv").string();
    write_dataset_csv(path, pooled, feature_names, "y", env_labels, "env");
    return path;
}

inline std::vector<ExperimentReport> run_csv_tasks(const SuiteConfig& cfg) {
    cfg.validate();
    SuiteConfig resolved = cfg;
    if (resolved.csv_path.empty()) resolved.csv_path = synthesize_task_csv(cfg);
    CsvSchema schema = resolved.schema;
    if (schema.target.empty()) schema.target = "y";
    if (schema.env_column.empty()) schema.env_column = "env";

    const CsvDataset data = read_csv_dataset(resolved.csv_path, schema);
    require(!data.env_ids.empty(), "csv_tasks needs an environment column");
    const auto tasks = enumerate_csv_tasks(data.n_envs());
    const auto methods = cfg.resolved_methods();
    const double beta = cfg.resolved_beta();
    const int n_iter = cfg.resolved_n_iter();
    const int warmup = cfg.resolved_warmup();

    bool binary = true;
    for (Eigen::Index i = 0; i < data.y.size(); ++i)
        if (data.y[i] != 0.0 && data.y[i] != 1.0) binary = false;
    const LossKind loss = binary ? LossKind::binary_cross_entropy : LossKind::squared;

    std::vector<Environment> env_data(static_cast<std::size_t>(data.n_envs()));
    for (int e = 0; e < data.n_envs(); ++e) {
        std::vector<int> idx;
        for (std::size_t i = 0; i < data.env_ids.size(); ++i)
            if (data.env_ids[i] == e) idx.push_back(static_cast<int>(i));
        require(!idx.empty(), "environment level with no rows");
        env_data[static_cast<std::size_t>(e)].X = select_rows(data.X, idx);
        env_data[static_cast<std::size_t>(e)].y = select_rows(data.y, idx);
    }

    // errors[task][method]
    std::vector<std::vector<double>> errors(tasks.size(), std::vector<double>(methods.size()));
    parallel_for(static_cast<int>(tasks.size()), [&](int ti) {
        const CsvTask& task = tasks[static_cast<std::size_t>(ti)];
        std::vector<Environment> train_envs;
        for (int e : task.train_envs) train_envs.push_back(env_data[static_cast<std::size_t>(e)]);
        const Environment pooled = pool(train_envs);
        const Environment& val = env_data[static_cast<std::size_t>(task.val_env)];
        const Environment& test = env_data[static_cast<std::size_t>(task.test_env)];

        for (std::size_t mi = 0; mi < methods.size(); ++mi) {
            const Method method = method_from_name(methods[mi]);
            const std::uint64_t seed = derive_seed(
                cfg.master_seed, {4, static_cast<std::uint64_t>(ti), static_cast<std::uint64_t>(method)});
            TrainConfig tc;
            tc.beta = beta;
            tc.n_iter = n_iter;
            tc.warmup = warmup;
            tc.seed = seed;
            tc.loss = loss;

            ModelParams model;
            if (method == Method::erm) {
                model = fit_erm({pooled}, ModelKind::mlp, tc, &val);
            } else if (method == Method::irm_oracle) {
                model = fit_irmv1(train_envs, ModelKind::mlp, tc, &val);
            } else if (method == Method::vrex) {
                model = fit_vrex(train_envs, ModelKind::mlp, tc, &val);
            } else {
                const Partition part =
                    detail::make_method_partition(method, pooled, 2, seed, cfg, ModelKind::mlp, tc);
                model = fit_irmv1(detail::split_by_partition(pooled, part), ModelKind::mlp, tc, &val);
            }
            errors[static_cast<std::size_t>(ti)][mi] =
                binary ? zero_one_error(model, test.X, test.y)
                       : (predict(model, test.X) - test.y).squaredNorm() /
                             static_cast<double>(test.y.size());
        }
    }, cfg.threads);

    std::vector<ExperimentReport> reports;
    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
        std::vector<double> per_task(tasks.size());
        for (std::size_t ti = 0; ti < tasks.size(); ++ti) per_task[ti] = errors[ti][mi];
        const TaskSummary summary = task_set_summary(per_task);
        ExperimentReport rep;
        rep.method = methods[mi];
        rep.add_metric(binary ? "error_rate" : "mse", per_task);
        rep.metrics["avg_error"] = {summary.avg, 0.0, false};
        rep.metrics["worst_error"] = {summary.worst, 0.0, false};
        rep.metrics["std_error"] = {summary.stddev, 0.0, false};
        rep.config_echo = json{{"suite", "csv_tasks"},
                               {"csv", resolved.csv_path},
                               {"n_tasks", tasks.size()},
                               {"beta", beta},
                               {"n_iter", n_iter},
                               {"warmup", warmup},
                               {"seed", cfg.master_seed}};
        reports.push_back(std::move(rep));
    }
    return reports;
}

// ---------------------------------------------------------------------------
// Report output
// ---------------------------------------------------------------------------

// Flat CSV, one row per method x metric. Scalar keys found in the config
// echoes become identifying columns.
inline void write_reports_csv(const std::string& path,
                              const std::vector<ExperimentReport>& reports) {
    std::set<std::string> keys;
    for (const auto& rep : reports)
        for (const auto& [key, value] : rep.config_echo.items())
            if (value.is_number() || value.is_string()) keys.insert(key);

    std::ofstream out(path);
    require(out.good(), "cannot write report CSV: " + path);
    out << "method";
    for (const auto& k : keys) out << "," << k;
    out << ",metric,mean,std,n_trials\n";
    for (const auto& rep : reports) {
        for (const auto& [metric, stat] : rep.metrics) {
            out << rep.method;
            for (const auto& k : keys) {
                out << ",";
                if (rep.config_echo.contains(k)) {
                    const auto& v = rep.config_echo.at(k);
                    if (v.is_string()) out << v.get<std::string>();
                    else out << v.dump();
                }
            }
            out << "," << metric << "," << format_double(stat.mean) << ","
                << (stat.has_stddev ? format_double(stat.stddev) : "") << "," << rep.n_trials
                << "\n";
        }
    }
}

struct SuiteResult {
    std::vector<ExperimentReport> reports;
    std::vector<std::string> files;
};

// Structured suite configuration: top-level keys plus nested "csv", "decorr"
// and "eiil" sections. The full-scale profile restores trials = 10 and
// n_test_envs = 5000 unless the file pins them explicitly.
inline SuiteConfig suite_config_from_json(const json& j, bool full_scale = false) {
    SuiteConfig cfg;
    cfg.suite = suite_from_name(j.at("suite").get<std::string>());
    cfg.full_scale = j.value("full_scale", full_scale);
    if (cfg.full_scale) {
        cfg.trials = 10;
        cfg.n_test_envs = 5000;
    }
    cfg.methods = j.value("methods", std::vector<std::string>{});
    if (j.contains("trials")) cfg.trials = j.at("trials").get<int>();
    cfg.dims = j.value("dims", cfg.dims);
    cfg.env_counts = j.value("env_counts", cfg.env_counts);
    cfg.e_min = j.value("e_min", cfg.e_min);
    cfg.e_max = j.value("e_max", cfg.e_max);
    if (j.contains("n_test_envs")) cfg.n_test_envs = j.at("n_test_envs").get<int>();
    cfg.n_per_env = j.value("n_per_env", cfg.n_per_env);
    cfg.toy_n = j.value("toy_n", cfg.toy_n);
    cfg.output_dir = j.value("output_dir", cfg.output_dir);
    cfg.master_seed = j.value("seed", cfg.master_seed);
    cfg.n_iter = j.value("n_iter", cfg.n_iter);
    cfg.warmup = j.value("warmup", cfg.warmup);
    cfg.beta = j.value("beta", cfg.beta);
    cfg.threads = j.value("threads", cfg.threads);
    if (j.contains("csv")) {
        const auto& c = j.at("csv");
        cfg.csv_path = c.value("path", cfg.csv_path);
        cfg.schema.target = c.value("target", cfg.schema.target);
        cfg.schema.env_column = c.value("env_column", cfg.schema.env_column);
        cfg.schema.features = c.value("features", cfg.schema.features);
        cfg.schema.standardize = c.value("standardize", cfg.schema.standardize);
        cfg.synth_envs = c.value("synth_envs", cfg.synth_envs);
        cfg.synth_n_per_env = c.value("synth_n_per_env", cfg.synth_n_per_env);
    }
    if (j.contains("decorr")) {
        const auto& d = j.at("decorr");
        cfg.decorr.p0 = d.value("p0", cfg.decorr.p0);
        cfg.decorr.alpha = d.value("alpha", cfg.decorr.alpha);
        cfg.decorr.max_epochs = d.value("max_epochs", cfg.decorr.max_epochs);
        cfg.decorr.lambda = d.value("lambda", cfg.decorr.lambda);
        cfg.decorr.tol = d.value("tol", cfg.decorr.tol);
        cfg.decorr.standardize = d.value("standardize", cfg.decorr.standardize);
    }
    if (j.contains("eiil")) {
        const auto& e = j.at("eiil");
        cfg.eiil.steps = e.value("steps", cfg.eiil.steps);
        cfg.eiil.lr = e.value("lr", cfg.eiil.lr);
    }
    cfg.validate();
    return cfg;
}

// Dispatches on the suite and writes reports (JSON + CSV) under output_dir.
inline SuiteResult run_suite(const SuiteConfig& cfg) {
    cfg.validate();
    std::filesystem::create_directories(cfg.output_dir);
    SuiteResult result;
    if (cfg.suite == Suite::toy_dump) {
        result.files = run_toy_dump(cfg);
        return result;
    }
    switch (cfg.suite) {
        case Suite::irm_example: result.reports = run_irm_example_suite(cfg); break;
        case Suite::risks_of_irm: result.reports = run_risks_suite(cfg); break;
        case Suite::csv_tasks: result.reports = run_csv_tasks(cfg); break;
        case Suite::toy_dump: break;
    }
    const auto base = std::filesystem::path(cfg.output_dir) / (suite_name(cfg.suite) + "_report");
    write_json_file(base.string() + ".json", reports_to_json(result.reports));
    write_reports_csv(base.string() + ".csv", result.reports);
    result.files = {base.string() + ".json", base.string() + ".csv"};
    return result;
}

}  // namespace decorr

#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "decorr/csv.hpp"
#include "decorr/datagen.hpp"
#include "decorr/serialize.hpp"
#include "test_util.hpp"

using namespace decorr;
using Catch::Approx;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("decorr_test_" + std::to_string(std::random_device{}()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("generated datasets round-trip through CSV") {
    TempDir tmp;
    const Environment toy = gen_toy_2d(50, 3);
    const std::string path = tmp.file("toy.csv");
    write_dataset_csv(path, toy, {"x0", "x1"});

    CsvSchema schema;
    schema.target = "y";
    schema.standardize = false;
    const CsvDataset back = read_csv_dataset(path, schema);
    REQUIRE(back.feature_names == std::vector<std::string>{"x0", "x1"});
    REQUIRE((back.X - toy.X).lpNorm<Eigen::Infinity>() < 1e-12);
    REQUIRE((back.y - toy.y).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("csv schema handling") {
    TempDir tmp;
    const std::string path = tmp.file("data.csv");
    {
        std::ofstream out(path);
        out << "f1,group,target,era\n";
        out << "1.5,a,0,e1\n";
        out << "2.5,b,1,e2\n";
        out << "-0.5,a,1,e1\n";
        out << "0.25,b,0,e3\n";
    }

    SECTION("two-level text columns binary-encode, env levels sort") {
        CsvSchema schema;
        schema.target = "target";
        schema.env_column = "era";
        schema.standardize = false;
        const CsvDataset data = read_csv_dataset(path, schema);
        REQUIRE(data.feature_names == std::vector<std::string>{"f1", "group"});
        REQUIRE(data.X(0, 1) == 0.0);  // "a" -> 0
        REQUIRE(data.X(1, 1) == 1.0);  // "b" -> 1
        REQUIRE(data.env_levels == std::vector<std::string>{"e1", "e2", "e3"});
        REQUIRE(data.env_ids == std::vector<int>{0, 1, 0, 2});
    }
    SECTION("standardization centers and scales features") {
        CsvSchema schema;
        schema.target = "target";
        schema.env_column = "era";
        const CsvDataset data = read_csv_dataset(path, schema);
        REQUIRE(data.X.col(0).mean() == Approx(0.0).margin(1e-12));
        REQUIRE((data.X.col(0).array().square().mean()) == Approx(1.0).epsilon(1e-9));
    }
    SECTION("explicit feature list is honored") {
        CsvSchema schema;
        schema.target = "target";
        schema.features = {"f1"};
        schema.standardize = false;
        const CsvDataset data = read_csv_dataset(path, schema);
        REQUIRE(data.X.cols() == 1);
    }
    SECTION("missing target column is reported by name") {
        CsvSchema schema;
        schema.target = "nope";
        REQUIRE_THROWS_WITH(read_csv_dataset(path, schema),
                            Catch::Matchers::ContainsSubstring("nope"));
    }
}

TEST_CASE("csv error reporting carries row context") {
    TempDir tmp;
    SECTION("ragged row") {
        const std::string path = tmp.file("ragged.csv");
        std::ofstream(path) << "a,b\n1,2\n3\n";
        REQUIRE_THROWS_WITH(read_csv_table(path), Catch::Matchers::ContainsSubstring(":3"));
    }
    SECTION("missing value") {
        const std::string path = tmp.file("gap.csv");
        std::ofstream(path) << "a,b\n1,2\n3,\n";
        CsvSchema schema;
        schema.target = "b";
        REQUIRE_THROWS_WITH(read_csv_dataset(path, schema),
                            Catch::Matchers::ContainsSubstring(":3"));
    }
    SECTION("three-level text feature") {
        const std::string path = tmp.file("multi.csv");
        std::ofstream(path) << "a,b\nx,1\ny,0\nz,1\n";
        CsvSchema schema;
        schema.target = "b";
        REQUIRE_THROWS_WITH(read_csv_dataset(path, schema),
                            Catch::Matchers::ContainsSubstring("3 levels"));
    }
}

TEST_CASE("partition json round trip") {
    Partition part;
    part.k = 3;
    part.assignments = {0, 1, 2, 1, 0, 2};
    part.sizes = {2, 2, 2};
    part.objective_trace = {1.5, 0.25};
    part.seed = 99;

    const json j = partition_to_json(part);
    REQUIRE(j.size() == 4);  // exactly k, assignments, objective_trace, seed
    const Partition back = partition_from_json(j);
    REQUIRE(back.k == part.k);
    REQUIRE(back.assignments == part.assignments);
    REQUIRE(back.sizes == part.sizes);
    REQUIRE(back.objective_trace == part.objective_trace);
    REQUIRE(back.seed == part.seed);
}

TEST_CASE("model json round trip") {
    auto rng = make_rng(12);
    ModelParams model;
    model.kind = ModelKind::mlp;
    model.loss = LossKind::binary_cross_entropy;
    model.input_dim = 3;
    model.hidden = 8;
    decorr::detail::ModelSpec spec{model.kind, model.loss, 3, 8};
    model.theta = testutil::random_matrix(spec.param_count(), 1, rng).col(0);

    const ModelParams back = model_from_json(model_to_json(model));
    REQUIRE(back.kind == model.kind);
    REQUIRE(back.loss == model.loss);
    REQUIRE(back.hidden == model.hidden);
    REQUIRE((back.theta - model.theta).lpNorm<Eigen::Infinity>() == 0.0);

    SECTION("weight count is validated against the shape") {
        json j = model_to_json(model);
        j["weights"] = std::vector<double>{1.0, 2.0};
        REQUIRE_THROWS_AS(model_from_json(j), std::invalid_argument);
    }
}

TEST_CASE("report json carries metrics and config echo") {
    ExperimentReport rep;
    rep.method = "decorr+irm";
    rep.add_metric("coef_mse", {0.1, 0.2, 0.3});
    rep.config_echo = json{{"suite", "irm_example"}, {"d", 5}};
    const json j = report_to_json(rep);
    REQUIRE(j.at("method") == "decorr+irm");
    REQUIRE(j.at("metrics").at("coef_mse").at("mean") == Approx(0.2));
    REQUIRE(j.at("config").at("d") == 5);
    REQUIRE(j.at("per_trial").at("coef_mse").size() == 3);
}

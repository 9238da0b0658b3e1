#pragma once

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "decorr/common.hpp"

namespace decorr {

// How a CSV file maps onto a dataset. Feature columns default to every
// column that is neither the target nor the environment column. Two-level
// non-numeric columns are binary-encoded {0, 1}; other non-numeric columns
// are rejected.
struct CsvSchema {
    std::string target;
    std::vector<std::string> features;  // empty = all remaining columns
    std::string env_column;             // optional
    bool standardize = true;
};

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

struct CsvDataset {
    Matrix X;
    Vector y;
    std::vector<int> env_ids;             // empty when no environment column
    std::vector<std::string> env_levels;  // sorted distinct environment values
    std::vector<std::string> feature_names;
    int n_envs() const { return static_cast<int>(env_levels.size()); }
};

namespace detail {

inline std::optional<double> parse_double(const std::string& s) {
    if (s.empty()) return std::nullopt;
    double value = 0.0;
    const char* begin = s.data();
    const char* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc{} || ptr != end) return std::nullopt;
    return value;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

}  // namespace detail

inline CsvTable read_csv_table(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "cannot open CSV file: " + path);
    CsvTable table;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = detail::split_csv_line(line);
        if (line_no == 1) {
            table.header = std::move(cells);
            continue;
        }
        if (cells.size() != table.header.size())
            throw std::invalid_argument(path + ":" + std::to_string(line_no) + ": expected " +
                                        std::to_string(table.header.size()) + " columns, got " +
                                        std::to_string(cells.size()));
        table.rows.push_back(std::move(cells));
    }
    require(!table.header.empty(), "CSV file has no header row: " + path);
    return table;
}

// Parses one column to doubles; two-level non-numeric columns map to {0, 1}
// by sorted level order.
inline Vector encode_column(const CsvTable& table, int col, const std::string& path) {
    const auto n = table.rows.size();
    Vector out(static_cast<Eigen::Index>(n));
    bool numeric = true;
    for (std::size_t i = 0; i < n; ++i) {
        const std::string& cell = table.rows[i][static_cast<std::size_t>(col)];
        if (cell.empty())
            throw std::invalid_argument(path + ":" + std::to_string(i + 2) + ": missing value in column '" +
                                        table.header[static_cast<std::size_t>(col)] + "'");
        if (auto v = detail::parse_double(cell)) {
            out[static_cast<Eigen::Index>(i)] = *v;
        } else {
            numeric = false;
            break;
        }
    }
    if (numeric) return out;

    std::set<std::string> levels;
    for (const auto& row : table.rows) levels.insert(row[static_cast<std::size_t>(col)]);
    if (levels.size() != 2)
        throw std::invalid_argument(path + ": column '" + table.header[static_cast<std::size_t>(col)] +
                                    "' is non-numeric with " + std::to_string(levels.size()) +
                                    " levels; only two-level columns can be binary-encoded");
    const std::string& one = *std::next(levels.begin());
    for (std::size_t i = 0; i < n; ++i)
        out[static_cast<Eigen::Index>(i)] = table.rows[i][static_cast<std::size_t>(col)] == one ? 1.0 : 0.0;
    return out;
}

inline int find_column(const CsvTable& table, const std::string& name, const std::string& path) {
    const auto it = std::find(table.header.begin(), table.header.end(), name);
    if (it == table.header.end())
        throw std::invalid_argument(path + ": no column named '" + name + "'");
    return static_cast<int>(it - table.header.begin());
}

inline CsvDataset read_csv_dataset(const std::string& path, const CsvSchema& schema) {
    require(!schema.target.empty(), "schema must name a target column");
    const CsvTable table = read_csv_table(path);
    require(table.rows.size() >= 2, path + ": need at least 2 data rows");

    const int target_col = find_column(table, schema.target, path);
    int env_col = -1;
    if (!schema.env_column.empty()) env_col = find_column(table, schema.env_column, path);

    std::vector<int> feature_cols;
    if (schema.features.empty()) {
        for (int c = 0; c < static_cast<int>(table.header.size()); ++c)
            if (c != target_col && c != env_col) feature_cols.push_back(c);
    } else {
        for (const auto& name : schema.features) feature_cols.push_back(find_column(table, name, path));
    }
    require(!feature_cols.empty(), path + ": schema selects no feature columns");

    CsvDataset data;
    data.X.resize(static_cast<Eigen::Index>(table.rows.size()),
                  static_cast<Eigen::Index>(feature_cols.size()));
    for (std::size_t j = 0; j < feature_cols.size(); ++j) {
        data.X.col(static_cast<Eigen::Index>(j)) = encode_column(table, feature_cols[j], path);
        data.feature_names.push_back(table.header[static_cast<std::size_t>(feature_cols[j])]);
    }
    data.y = encode_column(table, target_col, path);

    if (env_col >= 0) {
        std::set<std::string> levels;
        for (const auto& row : table.rows) levels.insert(row[static_cast<std::size_t>(env_col)]);
        data.env_levels.assign(levels.begin(), levels.end());
        std::map<std::string, int> level_id;
        for (std::size_t i = 0; i < data.env_levels.size(); ++i)
            level_id[data.env_levels[i]] = static_cast<int>(i);
        for (const auto& row : table.rows)
            data.env_ids.push_back(level_id[row[static_cast<std::size_t>(env_col)]]);
    }
    if (schema.standardize) data.X = standardize_columns(data.X);
    return data;
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// Writes header + numeric matrix columns; the optional extras map appends
// text columns (e.g. environment labels).
inline void write_csv(const std::string& path, const std::vector<std::string>& header,
                      const Matrix& columns,
                      const std::vector<std::pair<std::string, std::vector<std::string>>>& extras = {}) {
    require(static_cast<Eigen::Index>(header.size()) == columns.cols(),
            "header/column count mismatch");
    std::ofstream out(path);
    require(out.good(), "cannot write CSV file: " + path);
    for (std::size_t j = 0; j < header.size(); ++j) out << (j ? "," : "") << header[j];
    for (const auto& [name, values] : extras) {
        require(static_cast<Eigen::Index>(values.size()) == columns.rows(),
                "extra column length mismatch");
        out << "," << name;
    }
    out << "\n";
    for (Eigen::Index i = 0; i < columns.rows(); ++i) {
        for (Eigen::Index j = 0; j < columns.cols(); ++j)
            out << (j ? "," : "") << format_double(columns(i, j));
        for (const auto& [name, values] : extras) out << "," << values[static_cast<std::size_t>(i)];
        out << "\n";
    }
    require(out.good(), "failed while writing CSV file: " + path);
}

// Dataset export in the schema read_csv_dataset ingests: features, then the
// target, then (optionally) an environment column.
inline void write_dataset_csv(const std::string& path, const Environment& env,
                              const std::vector<std::string>& feature_names,
                              const std::string& target_name = "y",
                              const std::vector<std::string>& env_labels = {},
                              const std::string& env_name = "env") {
    Matrix out(env.X.rows(), env.X.cols() + 1);
    out.leftCols(env.X.cols()) = env.X;
    out.col(env.X.cols()) = env.y;
    std::vector<std::string> header = feature_names;
    header.push_back(target_name);
    std::vector<std::pair<std::string, std::vector<std::string>>> extras;
    if (!env_labels.empty()) extras.emplace_back(env_name, env_labels);
    write_csv(path, header, out, extras);
}

}  // namespace decorr

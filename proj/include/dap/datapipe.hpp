#pragma once

// Tabular data ingestion: CSV loading under a column schema, the stratified
// 175:25 train/test split with train-only normalization, a synthetic biased
// data generator, and the on-disk dataset cache.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dap/tensor.hpp"

namespace dap {

enum class ColumnKind { continuous, categorical, dropped };
enum class CategoricalEncoding { one_hot, index };

const char* to_string(ColumnKind kind) noexcept;
ColumnKind column_kind_from_string(const std::string& s);

struct ColumnMeta {
    std::string name;
    ColumnKind kind = ColumnKind::continuous;
    std::vector<std::string> categories;   // sorted, categorical only
    std::size_t offset = 0;                // first feature index
    std::size_t width = 0;                 // number of feature columns

    friend bool operator==(const ColumnMeta&, const ColumnMeta&) = default;
};

// Per-feature z-score parameters. Features with `applied == 0` (one-hot and
// index-coded categoricals) are passed through unchanged.
struct Normalization {
    std::vector<double> mean;
    std::vector<double> scale;
    std::vector<std::uint8_t> applied;

    friend bool operator==(const Normalization&, const Normalization&) = default;
};

struct TabularDataset {
    Tensor features;                        // [m x d]
    std::vector<int> task_labels;           // length m, in [0, n_classes)
    std::vector<int> sensitive;             // length m, in [0, n_domains)
    int n_classes = 2;
    int n_domains = 2;
    std::vector<std::string> class_names;
    std::vector<std::string> domain_names;
    std::vector<ColumnMeta> columns;
    std::vector<std::string> feature_names;
    std::vector<std::uint8_t> continuous;   // per feature: z-scored by split()
    std::optional<Normalization> normalization;

    std::size_t rows() const { return features.rows(); }
    std::size_t dims() const { return features.cols(); }
    void validate() const;
    TabularDataset subset(std::span<const std::size_t> rows) const;

    friend bool operator==(const TabularDataset&, const TabularDataset&) = default;
};

struct SchemaConfig {
    std::string name = "generic";
    std::string target_column;
    // Binary target: values listed here are class 1, everything else class 0.
    std::vector<std::string> target_positive;
    std::vector<std::string> target_names;
    // Explicit value -> class map; otherwise classes are the sorted observed values.
    std::map<std::string, int> target_map;
    std::string sensitive_column;
    std::map<std::string, int> sensitive_map;
    std::optional<int> sensitive_default;   // domain for values not in the map
    std::vector<std::string> sensitive_names;
    std::map<std::string, ColumnKind> column_kinds;
    std::vector<std::string> drop;
    std::map<std::string, std::string> aliases;   // header alias -> canonical name
    bool infer_unlisted = true;
    CategoricalEncoding encoding = CategoricalEncoding::one_hot;
    std::vector<std::string> missing_tokens{"", "?", "NA", "N/A", "nan", "NaN", "null"};

    static SchemaConfig adult();
    // Binary mode: African-American vs the rest. Five-class mode: African-American,
    // Asian, Hispanic, Native American, Other.
    static SchemaConfig compas(bool five_class = false);
    static SchemaConfig from_json(const nlohmann::json& j);
    static SchemaConfig load(const std::filesystem::path& path);
    nlohmann::json to_json() const;
};

struct RowError {
    std::size_t line = 0;
    std::string reason;
};

struct LoadReport {
    std::size_t rows_read = 0;
    std::size_t rows_skipped = 0;
    std::vector<RowError> errors;
};

// Parses a header-first CSV. Missing values become -1; categoricals are mapped
// to sorted category indices and one-hot expanded (or kept as the index).
// Features are left unnormalized; split() z-scores them with train statistics.
// Rows that fail to parse are skipped and recorded in `report`.
TabularDataset parse_csv(std::istream& in, const SchemaConfig& schema, LoadReport* report = nullptr);
TabularDataset load_csv(const std::filesystem::path& path, const SchemaConfig& schema,
                        LoadReport* report = nullptr);

// Splits one CSV line, honouring double quotes. Returns nullopt on an
// unterminated quote.
std::optional<std::vector<std::string>> split_csv_line(const std::string& line);

Normalization fit_normalization(const TabularDataset& ds);
void apply_normalization(TabularDataset& ds, const Normalization& norm);

struct SplitResult {
    TabularDataset train;
    TabularDataset test;
    std::vector<std::size_t> train_rows;   // indices into the source dataset
    std::vector<std::size_t> test_rows;
};

// Deterministic shuffled split, stratified jointly on (task label, domain).
// Every cell with at least two rows lands in both partitions. The test share
// is test_parts / (train_parts + test_parts), 25/200 by default. Both halves
// are normalized with statistics of the training half.
SplitResult split(const TabularDataset& ds, std::uint64_t seed, int train_parts = 175, int test_parts = 25);

struct SyntheticSpec {
    std::size_t m = 2000;
    std::size_t d_informative = 4;
    std::size_t d_noise = 2;
    int n_classes = 2;
    int n_domains = 2;
    double bias_strength = 0.5;
    std::vector<double> class_weights;   // merit-class prior; empty means uniform
    int proxy_repeats = 4;               // angular sectors per domain in the proxy pair
    std::uint64_t seed = 0;

    void validate() const;
};

// Each row draws a domain uniformly and a merit class from class_weights.
// Informative features are unit Gaussians around the merit class's mean (the
// means sit on distinct axes, 5 apart), noise features
// are standard Gaussian, and two trailing proxy features encode the domain in
// the angle of a 2-D point (sector k belongs to domain k mod N), so domain is
// recoverable only nonlinearly. Domain 0 is the reference group. In every
// other domain the label is overwritten by (domain mod C) with probability
// bias_strength; in domain 0 with probability bias_strength^20, so that at
// bias_strength = 1 the label is a function of the domain everywhere.
TabularDataset generate_synthetic(const SyntheticSpec& spec);

// Dataset cache (JSON, "dap-dataset" version 1). Doubles round-trip exactly.
nlohmann::json dataset_to_json(const TabularDataset& ds);
TabularDataset dataset_from_json(const nlohmann::json& j);
void save_dataset(const std::filesystem::path& path, const TabularDataset& ds);
TabularDataset load_dataset(const std::filesystem::path& path);

// 64-bit FNV-1a over shape, features, labels and domains, as 16 hex digits.
std::string fingerprint(const TabularDataset& ds);

}  // namespace dap

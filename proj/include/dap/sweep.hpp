#pragma once

// beta x omega grid sweeps: train, probe and report every run, stream one
// JSON record per run, and aggregate medians and spreads per grid cell.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dap/datapipe.hpp"
#include "dap/model.hpp"
#include "dap/probe.hpp"

namespace dap {

struct PipelineResult {
    TrainResult trained;
    FairnessReport report;
};

// Trains on split.train, embeds both halves with the frozen encoder and fits
// the probes on the training embeddings only.
PipelineResult run_pipeline(const SplitResult& split, const std::vector<std::size_t>& encoder_dims,
                            const TrainConfig& cfg, ProbeKind probe);

struct SweepSpec {
    std::vector<double> beta_grid{0.1, 0.5, 1, 3, 5, 10, 20, 50, 75, 100};
    std::vector<double> omega_grid{0, 1, 3, 5, 10, 15, 20, 50, 75, 100};
    int n_runs = 5;
    TrainConfig base;
    std::vector<std::size_t> encoder_dims{64, 32};
    ProbeKind probe = ProbeKind::balanced_logistic;
    std::uint64_t master_seed = 0;

    void validate() const;
};

// Seed of run k in cell (beta, omega). Depends only on its own key, so adding
// grid points leaves existing cells unchanged.
std::uint64_t run_seed(double beta, double omega, int run, std::uint64_t master_seed);

struct RunRecord {
    double beta = 0.0;
    double omega = 0.0;
    int run = 0;
    std::uint64_t seed = 0;
    bool ok = true;
    std::string error;
    FairnessReport report;
    double wall_time = 0.0;

    nlohmann::json to_json() const;
    static RunRecord from_json(const nlohmann::json& j);
};

enum class Metric { adjusted_parity, eod, dpd, sensitive_accuracy, task_accuracy };

const char* to_string(Metric m) noexcept;
Metric metric_from_string(const std::string& s);
double metric_value(const FairnessReport& r, Metric m);

struct Spread {
    double median = 0.0;
    double std = 0.0;   // population std
    int count = 0;
};

// Median and population std; count 0 and NaN fields for an empty input.
Spread summarize(std::vector<double> values);

struct SweepCellResult {
    double beta = 0.0;
    double omega = 0.0;
    std::vector<RunRecord> runs;   // sorted by run index
    int failed = 0;

    Spread spread(Metric m) const;
};

// Groups records into cells in grid order (beta-major). Cells with no record
// at all are omitted.
std::vector<SweepCellResult> aggregate(const SweepSpec& spec, std::vector<RunRecord> records);

struct SweepOptions {
    std::filesystem::path records_path;   // JSONL, appended to; empty keeps results in memory
    int jobs = 1;
    bool resume = true;                   // skip (beta, omega, run) keys already in records_path
    std::function<void(const RunRecord&)> on_record;
};

// Runs every missing (beta, omega, run) of the grid on a worker pool. A run
// that throws is recorded as failed and the sweep continues.
std::vector<SweepCellResult> run_sweep(const SweepSpec& spec, const SplitResult& split, const SweepOptions& opts);

std::vector<RunRecord> read_records(const std::filesystem::path& path);

// Columns: beta, omega, then <metric>_med and <metric>_std for adjusted_parity,
// eod, dpd, sensitive_acc, task_acc.
void write_aggregate_csv(std::ostream& out, const std::vector<SweepCellResult>& cells);

enum class Axis { beta, omega };

struct TrendPoint {
    double x = 0.0;
    Spread value;
    bool missing = false;
};

struct TrendSeries {
    double fixed = 0.0;   // the other parameter's value
    std::vector<TrendPoint> points;
    bool has_gaps = false;
};

// Metric median/std along `along` for each value of the other parameter.
// Grid points without a successful run appear as missing points.
std::vector<TrendSeries> trend_extract(const SweepSpec& spec, const std::vector<SweepCellResult>& cells, Metric metric,
                                       Axis along);

struct DeltaBin {
    double lower = 0.0;   // bin covers [lower, lower + width)
    int count = 0;
    double mean = 0.0;
};

// Task-accuracy drop of every successful run relative to the baseline cell's
// median task accuracy, binned at `width`; reports the metric mean per bin.
// The baseline defaults to (smallest beta, largest omega).
std::vector<DeltaBin> accuracy_delta_bins(const std::vector<SweepCellResult>& cells, Metric metric,
                                          double width = 0.005,
                                          std::optional<std::pair<double, double>> baseline = std::nullopt);

}  // namespace dap

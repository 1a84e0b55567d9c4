#pragma once

// Post-hoc probe classifiers fitted on frozen embeddings, and the fairness
// report built from their test-split predictions.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dap/tensor.hpp"

namespace dap {

enum class ProbeKind { balanced_logistic, balanced_tree_ensemble };
enum class ProbeTarget { task, sensitive };

const char* to_string(ProbeKind k) noexcept;
const char* to_string(ProbeTarget t) noexcept;
ProbeKind probe_kind_from_string(const std::string& s);

struct ProbeSpec {
    ProbeKind kind = ProbeKind::balanced_logistic;
    ProbeTarget target = ProbeTarget::task;
    std::uint64_t seed = 0;
    // balanced-logistic
    double l2 = 1e-3;
    int max_iterations = 5000;
    double tolerance = 1e-6;
    // balanced-tree-ensemble
    int n_trees = 50;
    int max_depth = 8;
    int min_leaf = 1;

    void validate() const;
};

// Inverse-frequency weights over the classes in [0, n_classes), normalized to
// sum to one. Absent classes get weight 0. Throws DegenerateTargetError when
// fewer than two classes are present.
std::vector<double> inverse_frequency_weights(std::span<const int> targets, int n_classes);

// Mean per-class recall over the classes present in `truth`.
double balanced_accuracy(std::span<const int> predicted, std::span<const int> truth, int n_classes);

class Probe {
public:
    struct Node {
        int feature = -1;            // -1 marks a leaf
        double threshold = 0.0;
        int left = -1;
        int right = -1;
        std::vector<double> dist;    // class distribution at a leaf
    };

    ProbeKind kind() const noexcept { return kind_; }
    int n_classes() const noexcept { return n_classes_; }
    Tensor predict_proba(const Tensor& embeddings) const;
    std::vector<int> predict(const Tensor& embeddings) const;
    int iterations() const noexcept { return iterations_; }
    double gradient_norm() const noexcept { return grad_norm_; }

private:
    friend Probe fit_probe(const Tensor&, std::span<const int>, const ProbeSpec&, int);

    ProbeKind kind_ = ProbeKind::balanced_logistic;
    int n_classes_ = 0;
    std::vector<double> mean_, scale_;
    Tensor weight_, bias_;
    std::vector<std::vector<Node>> trees_;
    int iterations_ = 0;
    double grad_norm_ = 0.0;
};

// Fits on the given (training) rows only. n_classes <= 0 means max(target)+1.
// Throws DegenerateTargetError when fewer than two classes are present.
Probe fit_probe(const Tensor& embeddings, std::span<const int> targets, const ProbeSpec& spec, int n_classes = 0);

struct FairnessReport {
    double task_accuracy = 0.0;
    double sensitive_accuracy = 0.0;
    double dpd = 0.0;
    double eod = 0.0;
    double adjusted_parity = 0.0;
    bool eod_skipped_cells = false;
    std::string probe_kind;
    std::string probe_note;

    nlohmann::json to_json() const;
    static FairnessReport from_json(const nlohmann::json& j);
};

struct ProbeInputs {
    const Tensor& train_embeddings;
    const Tensor& test_embeddings;
    std::span<const int> train_task;
    std::span<const int> test_task;
    std::span<const int> train_sensitive;
    std::span<const int> test_sensitive;
    int n_classes = 2;
    int n_domains = 2;
};

// Fits a task probe and a sensitive probe on the training embeddings and
// reports their balanced accuracies on the test embeddings. DPD, EOD and
// adjusted parity come from the task probe's test predictions.
FairnessReport probe_report(const ProbeInputs& in, ProbeKind kind, std::uint64_t seed);

}  // namespace dap

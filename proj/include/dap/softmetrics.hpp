#pragma once

// Differentiable accuracy statistics and the DAP training objective.
//
// Soft confusion counts replace the argmax of a classifier with its predicted
// probabilities, so accuracies become smooth functions of the model output.
// Per-domain soft balanced accuracies are then combined into the adjusted
// parity value
//
//     delta = (mean - s_random) / (1 - s_random) * (1 - std / gamma)
//
// where gamma is the largest population std that N values in [0, 1] can have.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "dap/graddiff.hpp"
#include "dap/tensor.hpp"

namespace dap {

// Predicted class probabilities with one-hot task labels and the sensitive
// domain of each row.
struct ProbBatch {
    ad::Var probs;              // [m x C], rows sum to 1
    Tensor labels;              // [m x C], one-hot
    std::vector<int> domains;   // length m, values in [0, n_domains)
    int n_domains = 0;

    std::size_t rows() const { return labels.rows(); }
    std::size_t classes() const { return labels.cols(); }

    // Throws ContractError when shapes or invariants are violated.
    void validate() const;
};

Tensor one_hot(std::span<const int> labels, int n_classes);

// Per-class soft counts, each a [1 x C] node on the batch's tape.
struct SoftConfusion {
    ad::Var tp;
    ad::Var fp;
    ad::Var tn;
    ad::Var fn;
};

// Soft TP/FP/TN/FN summed over the rows selected by `row_mask` (all rows when
// the mask is empty).
SoftConfusion soft_confusion(const ProbBatch& batch, std::span<const std::uint8_t> row_mask = {});

// Mean soft recall over the classes present in the confusion (tp + fn > 0).
ad::Var soft_balanced_accuracy(const SoftConfusion& conf);

// Mean over classes of (tp + tn) / (tp + tn + fp + fn).
ad::Var soft_unbalanced_accuracy(const SoftConfusion& conf);

// Maximum population std of n values in [0, 1]: 0.5 for even n,
// sqrt((1 - 1/n^2) / 4) for odd n.
double gamma(int n_domains);

struct DapConfig {
    double beta = 1.0;                  // weight on std / gamma
    double omega = 1.0;                 // weight on cross-entropy
    std::optional<double> s_random;     // chance level; defaults to 1 / C
    bool balanced = true;               // false selects the unbalanced accuracy
    bool debias = true;                 // false drops the adjusted-parity term

    double chance_level(std::size_t n_classes) const;
    void validate() const;
};

// Plain-valued summary of per-domain accuracies.
struct DomainAccuracyValues {
    std::vector<double> per_domain;
    double mean = 0.0;
    double std = 0.0;   // population std
    int n_domains = 0;
    double gamma = 0.0;
};

// Summary of already-computed accuracies (used by the hard metrics).
DomainAccuracyValues summarize_domain_accuracies(std::vector<double> per_domain);

struct DomainAccuracyStats {
    std::vector<ad::Var> per_domain;
    ad::Var mean;
    ad::Var std;
    int n_domains = 0;
    double gamma = 0.0;

    DomainAccuracyValues values() const;
};

// Soft accuracy of every sensitive domain, with their mean and population std.
// Throws EmptyDomainError when a domain has no rows in the batch.
DomainAccuracyStats domain_stats(const ProbBatch& batch, const DapConfig& cfg);

// Adjusted parity. Not clamped: negative when the mean is below chance.
double dap_value(const DomainAccuracyValues& stats, double s_random);
ad::Var dap_value(const DomainAccuracyStats& stats, double s_random);

// Mean one-hot cross-entropy, -1/m sum L * log(P + eps).
ad::Var cross_entropy(const ProbBatch& batch);

struct DapLossTerms {
    ad::Var loss;
    ad::Var cross_entropy;
    ad::Var adjusted_parity;   // unweighted, beta = 1
    DomainAccuracyStats stats;
};

// loss = omega * CE - (mean - s_r) / (1 - s_r) * (1 - beta * std / gamma),
// or omega * CE alone when cfg.debias is false.
DapLossTerms dap_loss_terms(const ProbBatch& batch, const DapConfig& cfg);
ad::Var dap_loss(const ProbBatch& batch, const DapConfig& cfg);

}  // namespace dap

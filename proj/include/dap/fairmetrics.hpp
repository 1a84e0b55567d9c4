#pragma once

// Group fairness metrics over hard (argmax) predictions.
//
// For more than two sensitive domains, DPD and EOD report the largest gap over
// all domain pairs, which reduces to the usual two-group definitions at N = 2.

#include <optional>
#include <span>
#include <vector>

namespace dap {

struct PredictionSet {
    std::vector<int> y_pred;
    std::vector<int> y_true;
    std::vector<int> domains;
    int n_classes = 2;
    int n_domains = 2;

    std::size_t size() const { return y_true.size(); }
    void validate() const;
};

// Largest absolute gap in P(pred == positive | domain) over domain pairs.
double demographic_parity_difference(const PredictionSet& p, int positive_class = 1);

struct EqualizedOddsResult {
    double value = 0.0;
    // Set when some (domain, true label) cell was empty and its rate skipped.
    bool skipped_cells = false;
};

// Largest gap in TPR or FPR (for `positive_class`) over domain pairs.
EqualizedOddsResult equalized_odds_difference(const PredictionSet& p, int positive_class = 1);

// Mean per-class recall over the classes present, optionally restricted to
// one domain.
double hard_balanced_accuracy(const PredictionSet& p, std::optional<int> domain = std::nullopt);

// Per-domain balanced accuracies combined into adjusted parity.
double adjusted_parity_report(const PredictionSet& p, double s_random);

}  // namespace dap

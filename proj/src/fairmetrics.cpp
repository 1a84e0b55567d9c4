#include "dap/fairmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dap/errors.hpp"
#include "dap/softmetrics.hpp"

namespace dap {

void PredictionSet::validate() const {
    if (y_pred.size() != y_true.size() || domains.size() != y_true.size()) {
        throw ContractError("prediction set vectors differ in length");
    }
    if (n_classes < 1 || n_domains < 1) throw ContractError("prediction set needs classes and domains");
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        if (y_pred[i] < 0 || y_pred[i] >= n_classes || y_true[i] < 0 || y_true[i] >= n_classes) {
            throw ContractError("label out of range at row " + std::to_string(i));
        }
        if (domains[i] < 0 || domains[i] >= n_domains) {
            throw ContractError("domain out of range at row " + std::to_string(i));
        }
    }
}

namespace {

double max_pairwise_gap(std::span<const double> rates, std::span<const char> valid) {
    double gap = 0.0;
    for (std::size_t i = 0; i < rates.size(); ++i) {
        if (!valid[i]) continue;
        for (std::size_t j = i + 1; j < rates.size(); ++j) {
            if (valid[j]) gap = std::max(gap, std::abs(rates[i] - rates[j]));
        }
    }
    return gap;
}

}  // namespace

double demographic_parity_difference(const PredictionSet& p, int positive_class) {
    p.validate();
    std::vector<double> selected(p.n_domains, 0.0), count(p.n_domains, 0.0);
    for (std::size_t i = 0; i < p.size(); ++i) {
        count[p.domains[i]] += 1.0;
        if (p.y_pred[i] == positive_class) selected[p.domains[i]] += 1.0;
    }
    std::vector<double> rate(p.n_domains);
    std::vector<char> valid(p.n_domains, 1);
    for (int d = 0; d < p.n_domains; ++d) {
        if (count[d] == 0.0) throw EmptyDomainError("domain " + std::to_string(d) + " is empty", d);
        rate[d] = selected[d] / count[d];
    }
    return max_pairwise_gap(rate, valid);
}

EqualizedOddsResult equalized_odds_difference(const PredictionSet& p, int positive_class) {
    p.validate();
    const int N = p.n_domains;
    // Per-domain counts of positive / non-positive true labels and how many were predicted positive.
    std::vector<double> n_pos(N, 0.0), hit_pos(N, 0.0), n_neg(N, 0.0), hit_neg(N, 0.0);
    for (std::size_t i = 0; i < p.size(); ++i) {
        const int d = p.domains[i];
        const bool pred_pos = p.y_pred[i] == positive_class;
        if (p.y_true[i] == positive_class) {
            n_pos[d] += 1.0;
            hit_pos[d] += pred_pos;
        } else {
            n_neg[d] += 1.0;
            hit_neg[d] += pred_pos;
        }
    }
    EqualizedOddsResult res;
    std::vector<double> tpr(N), fpr(N);
    std::vector<char> tpr_ok(N), fpr_ok(N);
    for (int d = 0; d < N; ++d) {
        if (n_pos[d] == 0.0 && n_neg[d] == 0.0) {
            throw EmptyDomainError("domain " + std::to_string(d) + " is empty", d);
        }
        tpr_ok[d] = n_pos[d] > 0.0;
        fpr_ok[d] = n_neg[d] > 0.0;
        res.skipped_cells = res.skipped_cells || !tpr_ok[d] || !fpr_ok[d];
        tpr[d] = tpr_ok[d] ? hit_pos[d] / n_pos[d] : 0.0;
        fpr[d] = fpr_ok[d] ? hit_neg[d] / n_neg[d] : 0.0;
    }
    res.value = std::max(max_pairwise_gap(tpr, tpr_ok), max_pairwise_gap(fpr, fpr_ok));
    return res;
}

double hard_balanced_accuracy(const PredictionSet& p, std::optional<int> domain) {
    p.validate();
    std::vector<double> support(p.n_classes, 0.0), hits(p.n_classes, 0.0);
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (domain && p.domains[i] != *domain) continue;
        support[p.y_true[i]] += 1.0;
        if (p.y_pred[i] == p.y_true[i]) hits[p.y_true[i]] += 1.0;
    }
    double total = 0.0;
    int present = 0;
    for (int c = 0; c < p.n_classes; ++c) {
        if (support[c] > 0.0) {
            total += hits[c] / support[c];
            ++present;
        }
    }
    if (present == 0) {
        throw EmptyDomainError(domain ? "domain " + std::to_string(*domain) + " is empty"
                                      : std::string("empty prediction set"),
                               domain.value_or(-1));
    }
    return total / present;
}

double adjusted_parity_report(const PredictionSet& p, double s_random) {
    std::vector<double> per_domain;
    per_domain.reserve(p.n_domains);
    for (int d = 0; d < p.n_domains; ++d) per_domain.push_back(hard_balanced_accuracy(p, d));
    return dap_value(summarize_domain_accuracies(std::move(per_domain)), s_random);
}

}  // namespace dap

#include "dap/softmetrics.hpp"

#include <cmath>
#include <string>

#include "dap/errors.hpp"

namespace dap {

void ProbBatch::validate() const {
    const Tensor& p = probs.value();
    if (!p.same_shape(labels)) {
        throw ContractError("probs " + shape_string(p.shape()) + " and labels " +
                            shape_string(labels.shape()) + " differ in shape");
    }
    if (domains.size() != labels.rows()) throw ContractError("domains length does not match batch rows");
    if (n_domains < 1) throw ContractError("n_domains must be positive");
    for (std::size_t r = 0; r < p.rows(); ++r) {
        double s = 0.0;
        int ones = 0;
        for (std::size_t c = 0; c < p.cols(); ++c) {
            s += p(r, c);
            if (labels(r, c) == 1.0) {
                ++ones;
            } else if (labels(r, c) != 0.0) {
                ones = -1;
                break;
            }
        }
        if (std::abs(s - 1.0) > 1e-6) throw ContractError("probs row " + std::to_string(r) + " does not sum to 1");
        if (ones != 1) throw ContractError("labels row " + std::to_string(r) + " is not one-hot");
        if (domains[r] < 0 || domains[r] >= n_domains) {
            throw ContractError("domain id " + std::to_string(domains[r]) + " out of range");
        }
    }
}

Tensor one_hot(std::span<const int> labels, int n_classes) {
    Tensor out(labels.size(), static_cast<std::size_t>(n_classes));
    for (std::size_t r = 0; r < labels.size(); ++r) {
        if (labels[r] < 0 || labels[r] >= n_classes) {
            throw ContractError("label " + std::to_string(labels[r]) + " outside [0, " +
                                std::to_string(n_classes) + ")");
        }
        out(r, static_cast<std::size_t>(labels[r])) = 1.0;
    }
    return out;
}

SoftConfusion soft_confusion(const ProbBatch& batch, std::span<const std::uint8_t> row_mask) {
    const std::size_t m = batch.rows();
    const std::size_t C = batch.classes();
    if (!row_mask.empty() && row_mask.size() != m) throw DimensionError("row mask length does not match batch");

    // Selected labels L and one-cold labels 1 - L; unselected rows are all zero.
    Tensor pos(m, C), negl(m, C);
    std::size_t selected = 0;
    for (std::size_t r = 0; r < m; ++r) {
        if (!row_mask.empty() && !row_mask[r]) continue;
        ++selected;
        for (std::size_t c = 0; c < C; ++c) {
            pos(r, c) = batch.labels(r, c);
            negl(r, c) = 1.0 - batch.labels(r, c);
        }
    }
    if (selected == 0) throw EmptyDomainError("soft_confusion: no rows selected");

    ad::Tape& t = batch.probs.tape();
    const ad::Var p = batch.probs;
    const ad::Var L = t.constant(std::move(pos));
    const ad::Var Lbar = t.constant(std::move(negl));
    const ad::Var q = 1.0 - p;
    return SoftConfusion{
        ad::sum_axis0(p * L),
        ad::sum_axis0(p * Lbar),
        ad::sum_axis0(q * Lbar),
        ad::sum_axis0(q * L),
    };
}

ad::Var soft_balanced_accuracy(const SoftConfusion& conf) {
    ad::Tape& t = conf.tp.tape();
    const ad::Var support = conf.tp + conf.fn;
    const Tensor& sv = support.value();
    Tensor present(1, sv.cols());
    int n_present = 0;
    for (std::size_t c = 0; c < sv.cols(); ++c) {
        if (sv[c] > 0.0) {
            present[c] = 1.0;
            ++n_present;
        }
    }
    if (n_present == 0) throw EmptyDomainError("soft_balanced_accuracy: no class present");
    const ad::Var recall = conf.tp / support;
    return ad::scale(ad::sum(recall * t.constant(std::move(present))), 1.0 / n_present);
}

ad::Var soft_unbalanced_accuracy(const SoftConfusion& conf) {
    const ad::Var total = conf.tp + conf.tn + conf.fp + conf.fn;
    for (double v : total.value().data())
        if (!(v > 0.0)) throw EmptyInputError("soft_unbalanced_accuracy: empty batch");
    return ad::mean((conf.tp + conf.tn) / total);
}

double gamma(int n_domains) {
    if (n_domains < 2) throw ContractError("gamma needs at least 2 domains, got " + std::to_string(n_domains));
    if (n_domains % 2 == 0) return 0.5;
    const double n = n_domains;
    return std::sqrt(0.25 * (1.0 - 1.0 / (n * n)));
}

double DapConfig::chance_level(std::size_t n_classes) const {
    if (s_random) return *s_random;
    return 1.0 / static_cast<double>(n_classes);
}

void DapConfig::validate() const {
    if (!(beta >= 0.0)) throw ConfigError("beta must be >= 0");
    if (!(omega >= 0.0)) throw ConfigError("omega must be >= 0");
    if (s_random && !(*s_random >= 0.0 && *s_random < 1.0)) throw ConfigError("s_random must lie in [0, 1)");
}

DomainAccuracyValues summarize_domain_accuracies(std::vector<double> per_domain) {
    DomainAccuracyValues v;
    v.n_domains = static_cast<int>(per_domain.size());
    v.gamma = gamma(v.n_domains);
    const double inv_n = 1.0 / v.n_domains;
    double s = 0.0;
    for (double x : per_domain) s += x;
    v.mean = s * inv_n;
    double ss = 0.0;
    for (double x : per_domain) ss += (x - v.mean) * (x - v.mean);
    v.std = std::sqrt(ss * inv_n);
    v.per_domain = std::move(per_domain);
    return v;
}

DomainAccuracyValues DomainAccuracyStats::values() const {
    DomainAccuracyValues v;
    for (const auto& s : per_domain) v.per_domain.push_back(s.item());
    v.mean = mean.item();
    v.std = std.item();
    v.n_domains = n_domains;
    v.gamma = gamma;
    return v;
}

DomainAccuracyStats domain_stats(const ProbBatch& batch, const DapConfig& cfg) {
    batch.validate();
    const int N = batch.n_domains;
    DomainAccuracyStats st;
    st.n_domains = N;
    st.gamma = gamma(N);
    std::vector<std::uint8_t> mask(batch.rows());
    for (int d = 0; d < N; ++d) {
        bool any = false;
        for (std::size_t r = 0; r < batch.rows(); ++r) {
            mask[r] = batch.domains[r] == d;
            any = any || mask[r];
        }
        if (!any) throw EmptyDomainError("domain " + std::to_string(d) + " has no rows in the batch", d);
        const SoftConfusion conf = soft_confusion(batch, mask);
        st.per_domain.push_back(cfg.balanced ? soft_balanced_accuracy(conf) : soft_unbalanced_accuracy(conf));
    }
    const double inv_n = 1.0 / N;
    ad::Var total = st.per_domain[0];
    for (int d = 1; d < N; ++d) total = total + st.per_domain[d];
    st.mean = ad::scale(total, inv_n);
    ad::Var ss;
    for (int d = 0; d < N; ++d) {
        const ad::Var dev = st.per_domain[d] - st.mean;
        ss = d == 0 ? dev * dev : ss + dev * dev;
    }
    st.std = ad::sqrt(ad::scale(ss, inv_n));
    return st;
}

double dap_value(const DomainAccuracyValues& stats, double s_random) {
    if (!(s_random < 1.0)) throw ContractError("s_random must be < 1");
    return (stats.mean - s_random) / (1.0 - s_random) * (1.0 - stats.std / stats.gamma);
}

ad::Var dap_value(const DomainAccuracyStats& stats, double s_random) {
    if (!(s_random < 1.0)) throw ContractError("s_random must be < 1");
    const ad::Var norm = ad::scale(stats.mean - s_random, 1.0 / (1.0 - s_random));
    return norm * (1.0 - ad::scale(stats.std, 1.0 / stats.gamma));
}

ad::Var cross_entropy(const ProbBatch& batch) {
    ad::Tape& t = batch.probs.tape();
    const ad::Var L = t.constant(batch.labels);
    return ad::scale(ad::sum(L * ad::log(batch.probs)), -1.0 / static_cast<double>(batch.rows()));
}

DapLossTerms dap_loss_terms(const ProbBatch& batch, const DapConfig& cfg) {
    cfg.validate();
    const double sr = cfg.chance_level(batch.classes());
    DapLossTerms out{.loss = {}, .cross_entropy = {}, .adjusted_parity = {}, .stats = domain_stats(batch, cfg)};
    out.cross_entropy = cross_entropy(batch);
    const ad::Var norm = ad::scale(out.stats.mean - sr, 1.0 / (1.0 - sr));
    const ad::Var spread = ad::scale(out.stats.std, 1.0 / out.stats.gamma);
    out.adjusted_parity = norm * (1.0 - spread);
    out.loss = ad::scale(out.cross_entropy, cfg.omega);
    if (cfg.debias) out.loss = out.loss - norm * (1.0 - ad::scale(spread, cfg.beta));
    return out;
}

ad::Var dap_loss(const ProbBatch& batch, const DapConfig& cfg) { return dap_loss_terms(batch, cfg).loss; }

}  // namespace dap

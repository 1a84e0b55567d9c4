#include "dap/probe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "dap/errors.hpp"
#include "dap/fairmetrics.hpp"
#include "dap/util.hpp"

namespace dap {

using nlohmann::json;

const char* to_string(ProbeKind k) noexcept {
    return k == ProbeKind::balanced_logistic ? "balanced-logistic" : "balanced-tree-ensemble";
}

const char* to_string(ProbeTarget t) noexcept { return t == ProbeTarget::task ? "task" : "sensitive"; }

ProbeKind probe_kind_from_string(const std::string& s) {
    if (s == "balanced-logistic") return ProbeKind::balanced_logistic;
    if (s == "balanced-tree-ensemble") return ProbeKind::balanced_tree_ensemble;
    throw ConfigError("unknown probe kind '" + s + "'");
}

void ProbeSpec::validate() const {
    if (!(l2 >= 0.0)) throw ConfigError("probe l2 must be >= 0");
    if (max_iterations < 1) throw ConfigError("probe max_iterations must be >= 1");
    if (!(tolerance > 0.0)) throw ConfigError("probe tolerance must be > 0");
    if (n_trees < 1) throw ConfigError("probe n_trees must be >= 1");
    if (max_depth < 1) throw ConfigError("probe max_depth must be >= 1");
    if (min_leaf < 1) throw ConfigError("probe min_leaf must be >= 1");
}

std::vector<double> inverse_frequency_weights(std::span<const int> targets, int n_classes) {
    std::vector<double> count(n_classes, 0.0);
    for (int t : targets) {
        if (t < 0 || t >= n_classes) throw ContractError("probe target out of range");
        count[t] += 1.0;
    }
    std::vector<double> w(n_classes, 0.0);
    int present = 0;
    double total = 0.0;
    for (int c = 0; c < n_classes; ++c) {
        if (count[c] > 0.0) {
            w[c] = 1.0 / count[c];
            total += w[c];
            ++present;
        }
    }
    if (present < 2) throw DegenerateTargetError("probe target has fewer than two classes");
    for (double& x : w) x /= total;
    return w;
}

double balanced_accuracy(std::span<const int> predicted, std::span<const int> truth, int n_classes) {
    if (predicted.size() != truth.size()) throw ContractError("prediction and truth lengths differ");
    if (truth.empty()) throw EmptyInputError("balanced accuracy of an empty set");
    std::vector<double> hit(n_classes, 0.0), count(n_classes, 0.0);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        count[truth[i]] += 1.0;
        if (predicted[i] == truth[i]) hit[truth[i]] += 1.0;
    }
    double sum = 0.0;
    int present = 0;
    for (int c = 0; c < n_classes; ++c) {
        if (count[c] > 0.0) {
            sum += hit[c] / count[c];
            ++present;
        }
    }
    return sum / present;
}

namespace {

// ---------------------------------------------------------------------------
// Balanced logistic regression

struct Logistic {
    const Tensor& x;          // standardized [m x e]
    std::vector<double> a;    // per-row weights, sum 1
    std::span<const int> y;
    int C;
    double l2;

    // Objective value is not needed; returns the gradient for (W, b).
    void gradient(const Tensor& W, const Tensor& b, Tensor& gW, Tensor& gb) const {
        const std::size_t m = x.rows(), e = x.cols();
        gW = Tensor(e, C);
        gb = Tensor(1, C);
        std::vector<double> z(C);
        for (std::size_t i = 0; i < m; ++i) {
            const auto xi = x.row_span(i);
            double zmax = -INFINITY;
            for (int c = 0; c < C; ++c) {
                double s = b[c];
                for (std::size_t k = 0; k < e; ++k) s += xi[k] * W(k, c);
                z[c] = s;
                zmax = std::max(zmax, s);
            }
            double den = 0.0;
            for (int c = 0; c < C; ++c) den += (z[c] = std::exp(z[c] - zmax));
            for (int c = 0; c < C; ++c) {
                const double r = a[i] * (z[c] / den - (y[i] == c ? 1.0 : 0.0));
                gb[c] += r;
                for (std::size_t k = 0; k < e; ++k) gW(k, c) += xi[k] * r;
            }
        }
        for (std::size_t k = 0; k < W.size(); ++k) gW[k] += l2 * W[k];
    }

    // Largest eigenvalue of [x 1]^T diag(a) [x 1] by power iteration.
    double curvature() const {
        const std::size_t m = x.rows(), e = x.cols();
        std::vector<double> v(e + 1, 1.0 / std::sqrt(static_cast<double>(e + 1))), w(e + 1);
        double lambda = 0.0;
        for (int it = 0; it < 100; ++it) {
            std::fill(w.begin(), w.end(), 0.0);
            for (std::size_t i = 0; i < m; ++i) {
                const auto xi = x.row_span(i);
                double s = v[e];
                for (std::size_t k = 0; k < e; ++k) s += xi[k] * v[k];
                s *= a[i];
                for (std::size_t k = 0; k < e; ++k) w[k] += xi[k] * s;
                w[e] += s;
            }
            double norm = 0.0;
            for (double q : w) norm += q * q;
            norm = std::sqrt(norm);
            if (norm == 0.0) return 0.0;
            const double prev = lambda;
            lambda = norm;
            for (std::size_t k = 0; k <= e; ++k) v[k] = w[k] / norm;
            if (std::abs(lambda - prev) <= 1e-9 * lambda) break;
        }
        return lambda;
    }
};

double norm2(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (double v : a.data()) s += v * v;
    for (double v : b.data()) s += v * v;
    return std::sqrt(s);
}

// ---------------------------------------------------------------------------
// Class-weighted decision trees

struct TreeBuilder {
    const Tensor& x;
    std::span<const int> y;
    const std::vector<double>& cw;
    int C;
    const ProbeSpec& spec;
    std::mt19937_64& rng;
    std::vector<Probe::Node>& nodes;

    std::vector<double> class_mass(const std::vector<std::size_t>& rows) const {
        std::vector<double> mass(C, 0.0);
        for (std::size_t r : rows) mass[y[r]] += cw[y[r]];
        return mass;
    }

    static double gini(const std::vector<double>& mass, double total) {
        if (total <= 0.0) return 0.0;
        double s = 0.0;
        for (double q : mass) s += (q / total) * (q / total);
        return 1.0 - s;
    }

    int leaf(const std::vector<double>& mass, double total) {
        Probe::Node n;
        n.dist.resize(C);
        for (int c = 0; c < C; ++c) n.dist[c] = total > 0.0 ? mass[c] / total : 1.0 / C;
        nodes.push_back(std::move(n));
        return static_cast<int>(nodes.size()) - 1;
    }

    int build(std::vector<std::size_t>& rows, int depth) {
        const auto mass = class_mass(rows);
        const double total = std::accumulate(mass.begin(), mass.end(), 0.0);
        const double parent = gini(mass, total);
        const auto n = rows.size();
        const auto min_leaf = static_cast<std::size_t>(spec.min_leaf);
        if (depth >= spec.max_depth || parent <= 1e-15 || n < 2 * min_leaf) return leaf(mass, total);

        const std::size_t e = x.cols();
        const std::size_t k = std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(static_cast<double>(e))));
        std::vector<std::size_t> feats(e);
        std::iota(feats.begin(), feats.end(), 0);
        for (std::size_t i = 0; i < k; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, e - 1);
            std::swap(feats[i], feats[pick(rng)]);
        }

        double best_gain = 1e-12;
        int best_feat = -1;
        double best_thr = 0.0;
        std::vector<std::size_t> order(rows);
        std::vector<double> left(C);
        for (std::size_t fi = 0; fi < k; ++fi) {
            const std::size_t f = feats[fi];
            std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x(a, f) < x(b, f); });
            std::fill(left.begin(), left.end(), 0.0);
            double wl = 0.0;
            for (std::size_t i = 0; i + 1 < n; ++i) {
                const int c = y[order[i]];
                left[c] += cw[c];
                wl += cw[c];
                const double v0 = x(order[i], f), v1 = x(order[i + 1], f);
                if (v0 == v1 || i + 1 < min_leaf || n - i - 1 < min_leaf) continue;
                std::vector<double> right(C);
                for (int q = 0; q < C; ++q) right[q] = mass[q] - left[q];
                const double wr = total - wl;
                const double gain = parent * total - wl * gini(left, wl) - wr * gini(right, wr);
                if (gain > best_gain) {
                    best_gain = gain;
                    best_feat = static_cast<int>(f);
                    best_thr = 0.5 * (v0 + v1);
                }
            }
        }
        if (best_feat < 0) return leaf(mass, total);

        std::vector<std::size_t> lrows, rrows;
        for (std::size_t r : rows) (x(r, best_feat) <= best_thr ? lrows : rrows).push_back(r);
        rows.clear();
        rows.shrink_to_fit();
        const int id = static_cast<int>(nodes.size());
        nodes.push_back(Probe::Node{best_feat, best_thr, -1, -1, {}});
        const int l = build(lrows, depth + 1);
        const int r = build(rrows, depth + 1);
        nodes[id].left = l;
        nodes[id].right = r;
        return id;
    }
};

}  // namespace

Probe fit_probe(const Tensor& embeddings, std::span<const int> targets, const ProbeSpec& spec, int n_classes) {
    spec.validate();
    const std::size_t m = embeddings.rows(), e = embeddings.cols();
    if (targets.size() != m) throw DimensionError("probe targets and embeddings differ in length");
    if (e == 0) throw DimensionError("probe embeddings have no columns");
    if (n_classes <= 0) {
        n_classes = targets.empty() ? 0 : *std::max_element(targets.begin(), targets.end()) + 1;
    }
    if (n_classes < 2 || m < 4) throw DegenerateTargetError("probe needs at least two classes and four rows");
    const auto cw = inverse_frequency_weights(targets, n_classes);

    Probe p;
    p.kind_ = spec.kind;
    p.n_classes_ = n_classes;

    if (spec.kind == ProbeKind::balanced_tree_ensemble) {
        std::mt19937_64 rng(mix64(spec.seed ^ 0x7ee5ULL));
        std::uniform_int_distribution<std::size_t> draw(0, m - 1);
        for (int t = 0; t < spec.n_trees; ++t) {
            std::vector<std::size_t> rows(m);
            for (auto& r : rows) r = draw(rng);
            std::vector<Probe::Node> nodes;
            TreeBuilder tb{embeddings, targets, cw, n_classes, spec, rng, nodes};
            tb.build(rows, 0);
            p.trees_.push_back(std::move(nodes));
        }
        return p;
    }

    // Standardize with the fitting rows' statistics.
    p.mean_.assign(e, 0.0);
    p.scale_.assign(e, 1.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t k = 0; k < e; ++k) p.mean_[k] += embeddings(i, k);
    for (double& v : p.mean_) v /= static_cast<double>(m);
    std::vector<double> var(e, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t k = 0; k < e; ++k) var[k] += std::pow(embeddings(i, k) - p.mean_[k], 2);
    for (std::size_t k = 0; k < e; ++k) {
        const double sd = std::sqrt(var[k] / static_cast<double>(m));
        p.scale_[k] = sd < 1e-12 ? 1.0 : sd;
    }
    Tensor xs(m, e);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t k = 0; k < e; ++k) xs(i, k) = (embeddings(i, k) - p.mean_[k]) / p.scale_[k];

    Logistic lr{xs, std::vector<double>(m), targets, n_classes, spec.l2};
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) total += cw[targets[i]];
    for (std::size_t i = 0; i < m; ++i) lr.a[i] = cw[targets[i]] / total;

    // Softmax cross-entropy has Hessian bounded by half the weighted Gram matrix.
    const double L = 0.5 * lr.curvature() + spec.l2;
    const double step = 1.0 / std::max(L, 1e-12);

    // Accelerated full-batch gradient descent with adaptive restart.
    Tensor W(e, n_classes), b(1, n_classes), yW = W, yb = b, gW, gb;
    double t = 1.0;
    int it = 0;
    double gnorm = INFINITY;
    for (; it < spec.max_iterations; ++it) {
        lr.gradient(yW, yb, gW, gb);
        gnorm = norm2(gW, gb);
        if (gnorm < spec.tolerance) {
            W = yW;
            b = yb;
            break;
        }
        Tensor nW = yW, nb = yb;
        for (std::size_t k = 0; k < nW.size(); ++k) nW[k] -= step * gW[k];
        for (std::size_t k = 0; k < nb.size(); ++k) nb[k] -= step * gb[k];
        double dir = 0.0;
        for (std::size_t k = 0; k < nW.size(); ++k) dir += gW[k] * (nW[k] - W[k]);
        for (std::size_t k = 0; k < nb.size(); ++k) dir += gb[k] * (nb[k] - b[k]);
        double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        double mom = (t - 1.0) / tn;
        if (dir > 0.0) {
            tn = 1.0;
            mom = 0.0;
        }
        for (std::size_t k = 0; k < nW.size(); ++k) yW[k] = nW[k] + mom * (nW[k] - W[k]);
        for (std::size_t k = 0; k < nb.size(); ++k) yb[k] = nb[k] + mom * (nb[k] - b[k]);
        W = std::move(nW);
        b = std::move(nb);
        t = tn;
    }
    p.weight_ = std::move(W);
    p.bias_ = std::move(b);
    p.iterations_ = it;
    p.grad_norm_ = gnorm;
    return p;
}

Tensor Probe::predict_proba(const Tensor& embeddings) const {
    const std::size_t m = embeddings.rows();
    Tensor out(m, n_classes_);
    if (kind_ == ProbeKind::balanced_tree_ensemble) {
        for (std::size_t i = 0; i < m; ++i) {
            for (const auto& tree : trees_) {
                int id = 0;
                while (tree[id].feature >= 0)
                    id = embeddings(i, tree[id].feature) <= tree[id].threshold ? tree[id].left : tree[id].right;
                for (int c = 0; c < n_classes_; ++c) out(i, c) += tree[id].dist[c];
            }
            for (int c = 0; c < n_classes_; ++c) out(i, c) /= static_cast<double>(trees_.size());
        }
        return out;
    }
    const std::size_t e = mean_.size();
    if (embeddings.cols() != e) throw DimensionError("probe was fitted on a different embedding width");
    std::vector<double> xs(e), z(n_classes_);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t k = 0; k < e; ++k) xs[k] = (embeddings(i, k) - mean_[k]) / scale_[k];
        double zmax = -INFINITY;
        for (int c = 0; c < n_classes_; ++c) {
            double s = bias_[c];
            for (std::size_t k = 0; k < e; ++k) s += xs[k] * weight_(k, c);
            z[c] = s;
            zmax = std::max(zmax, s);
        }
        double den = 0.0;
        for (int c = 0; c < n_classes_; ++c) den += (z[c] = std::exp(z[c] - zmax));
        for (int c = 0; c < n_classes_; ++c) out(i, c) = z[c] / den;
    }
    return out;
}

std::vector<int> Probe::predict(const Tensor& embeddings) const {
    const Tensor prob = predict_proba(embeddings);
    std::vector<int> out(prob.rows());
    for (std::size_t i = 0; i < prob.rows(); ++i) {
        const auto row = prob.row_span(i);
        out[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    return out;
}

json FairnessReport::to_json() const {
    return json{{"task_accuracy", task_accuracy},
                {"sensitive_accuracy", sensitive_accuracy},
                {"dpd", dpd},
                {"eod", eod},
                {"adjusted_parity", adjusted_parity},
                {"eod_skipped_cells", eod_skipped_cells},
                {"probe_kind", probe_kind},
                {"probe_note", probe_note}};
}

FairnessReport FairnessReport::from_json(const json& j) {
    FairnessReport r;
    try {
        r.task_accuracy = j.at("task_accuracy").get<double>();
        r.sensitive_accuracy = j.at("sensitive_accuracy").get<double>();
        r.dpd = j.at("dpd").get<double>();
        r.eod = j.at("eod").get<double>();
        r.adjusted_parity = j.at("adjusted_parity").get<double>();
        r.eod_skipped_cells = j.value("eod_skipped_cells", false);
        r.probe_kind = j.value("probe_kind", std::string());
        r.probe_note = j.value("probe_note", std::string());
    } catch (const json::exception& e) {
        throw SchemaError(std::string("malformed fairness report: ") + e.what());
    }
    return r;
}

FairnessReport probe_report(const ProbeInputs& in, ProbeKind kind, std::uint64_t seed) {
    ProbeSpec task_spec;
    task_spec.kind = kind;
    task_spec.target = ProbeTarget::task;
    task_spec.seed = combine_seed(seed, 1);
    ProbeSpec sens_spec = task_spec;
    sens_spec.target = ProbeTarget::sensitive;
    sens_spec.seed = combine_seed(seed, 2);

    const Probe task_probe = fit_probe(in.train_embeddings, in.train_task, task_spec, in.n_classes);
    const Probe sens_probe = fit_probe(in.train_embeddings, in.train_sensitive, sens_spec, in.n_domains);

    const auto task_pred = task_probe.predict(in.test_embeddings);
    const auto sens_pred = sens_probe.predict(in.test_embeddings);

    FairnessReport r;
    r.task_accuracy = balanced_accuracy(task_pred, in.test_task, in.n_classes);
    r.sensitive_accuracy = balanced_accuracy(sens_pred, in.test_sensitive, in.n_domains);

    PredictionSet ps;
    ps.y_pred = task_pred;
    ps.y_true.assign(in.test_task.begin(), in.test_task.end());
    ps.domains.assign(in.test_sensitive.begin(), in.test_sensitive.end());
    ps.n_classes = in.n_classes;
    ps.n_domains = in.n_domains;
    r.dpd = demographic_parity_difference(ps);
    const auto eod = equalized_odds_difference(ps);
    r.eod = eod.value;
    r.eod_skipped_cells = eod.skipped_cells;
    r.adjusted_parity = adjusted_parity_report(ps, 1.0 / in.n_classes);
    r.probe_kind = to_string(kind);
    r.probe_note = kind == ProbeKind::balanced_logistic
                       ? "linear probe in place of a balanced random forest"
                       : "bagged class-weighted trees approximating a balanced random forest";
    return r;
}

}  // namespace dap

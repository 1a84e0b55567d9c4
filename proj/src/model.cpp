#include "dap/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <string>

#include "dap/errors.hpp"
#include "dap/util.hpp"

namespace dap {

using nlohmann::json;

void ModelSpec::validate() const {
    if (input_dim == 0) throw ConfigError("model input_dim must be positive");
    if (encoder_dims.empty()) throw ConfigError("encoder_dims must not be empty");
    for (auto w : encoder_dims)
        if (w == 0) throw ConfigError("encoder layer width must be positive");
    if (n_classes < 2) throw ConfigError("n_classes must be >= 2");
}

Mlp::Mlp(ModelSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    std::mt19937_64 rng(mix64(spec_.seed ^ 0x6d6c70ULL));
    std::size_t fan_in = spec_.input_dim;
    auto make_layer = [&](std::size_t in, std::size_t out) {
        const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
        std::uniform_real_distribution<double> u(-limit, limit);
        DenseLayer layer{Tensor(in, out), Tensor(1, out)};
        for (double& w : layer.weight.data()) w = u(rng);
        return layer;
    };
    for (std::size_t width : spec_.encoder_dims) {
        layers_.push_back(make_layer(fan_in, width));
        fan_in = width;
    }
    layers_.push_back(make_layer(fan_in, spec_.n_classes));
}

namespace {

ad::Var dense(ad::Var x, ad::Var w, ad::Var b, ad::Var ones) {
    // Bias broadcast over rows as ones[m x 1] * b[1 x n].
    return ad::matmul(x, w) + ad::matmul(ones, b);
}

}  // namespace

Mlp::Graph Mlp::forward(ad::Tape& tape, const Tensor& features) const {
    if (features.cols() != spec_.input_dim) {
        throw DimensionError("model expects " + std::to_string(spec_.input_dim) + " features, got " +
                             std::to_string(features.cols()));
    }
    Graph g;
    const ad::Var ones = tape.constant(Tensor(features.rows(), 1, 1.0));
    ad::Var h = tape.constant(features);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const ad::Var w = tape.variable(layers_[i].weight);
        const ad::Var b = tape.variable(layers_[i].bias);
        g.params.push_back(w);
        g.params.push_back(b);
        const ad::Var z = dense(h, w, b, ones);
        if (i + 1 < layers_.size()) {
            h = ad::relu(z);
        } else {
            g.embeddings = h;
            g.logits = z;
        }
    }
    g.probs = ad::softmax_rows(g.logits);
    return g;
}

Tensor Mlp::embed(const Tensor& features) const {
    ad::Tape tape;
    return forward(tape, features).embeddings.value();
}

Tensor Mlp::predict_proba(const Tensor& features) const {
    ad::Tape tape;
    return forward(tape, features).probs.value();
}

std::vector<Tensor*> Mlp::parameters() {
    std::vector<Tensor*> out;
    for (auto& l : layers_) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
    }
    return out;
}

std::vector<const Tensor*> Mlp::parameters() const {
    std::vector<const Tensor*> out;
    for (const auto& l : layers_) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
    }
    return out;
}

std::vector<std::string> Mlp::parameter_names() const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const std::string prefix = i + 1 < layers_.size() ? "encoder." + std::to_string(i) : std::string("head");
        out.push_back(prefix + ".weight");
        out.push_back(prefix + ".bias");
    }
    return out;
}

// ---------------------------------------------------------------------------
// Optimizers

const char* to_string(OptimizerKind k) noexcept { return k == OptimizerKind::adam ? "adam" : "sgd"; }

OptimizerKind optimizer_from_string(const std::string& s) {
    if (s == "adam") return OptimizerKind::adam;
    if (s == "sgd") return OptimizerKind::sgd;
    throw ConfigError("unknown optimizer '" + s + "'");
}

void Sgd::step(std::span<Tensor* const> params, std::span<const Tensor* const> grads) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i]->data();
        auto g = grads[i]->data();
        for (std::size_t k = 0; k < p.size(); ++k) p[k] -= lr_ * g[k];
    }
}

void Adam::step(std::span<Tensor* const> params, std::span<const Tensor* const> grads) {
    if (m_.empty()) {
        for (const Tensor* p : params) {
            m_.emplace_back(p->rows(), p->cols());
            v_.emplace_back(p->rows(), p->cols());
        }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i]->data();
        auto g = grads[i]->data();
        auto m = m_[i].data();
        auto v = v_[i].data();
        for (std::size_t k = 0; k < p.size(); ++k) {
            m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
            v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
            p[k] -= lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
        }
    }
}

std::unique_ptr<Optimizer> make_optimizer(const TrainConfig& cfg) {
    if (cfg.optimizer == OptimizerKind::adam) return std::make_unique<Adam>(cfg.learning_rate);
    return std::make_unique<Sgd>(cfg.learning_rate);
}

TrainConfig TrainConfig::adult_defaults() { return TrainConfig{}; }

TrainConfig TrainConfig::compas_defaults() {
    TrainConfig c;
    c.learning_rate = 0.01;
    c.batch_size = 32;
    return c;
}

void TrainConfig::validate(int n_domains) const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < static_cast<std::size_t>(n_domains)) {
        throw ConfigError("batch_size " + std::to_string(batch_size) + " is smaller than the number of domains " +
                          std::to_string(n_domains));
    }
    dap.validate();
}

// ---------------------------------------------------------------------------
// Batching

std::vector<std::vector<std::size_t>> stratified_batches(std::span<const int> domains, int n_domains,
                                                         std::size_t batch_size, std::uint64_t seed) {
    const std::size_t m = domains.size();
    const auto N = static_cast<std::size_t>(n_domains);
    if (n_domains < 1) throw ConfigError("stratified_batches needs at least one domain");
    if (batch_size < N) throw ConfigError("batch_size is smaller than the number of domains");

    std::mt19937_64 rng(mix64(seed ^ 0xba7c4e5ULL));
    std::vector<std::vector<std::size_t>> by_domain(N);
    for (std::size_t i = 0; i < m; ++i) {
        if (domains[i] < 0 || domains[i] >= n_domains) throw ContractError("domain id out of range");
        by_domain[domains[i]].push_back(i);
    }
    for (std::size_t d = 0; d < N; ++d) {
        if (by_domain[d].empty()) throw ConfigError("domain " + std::to_string(d) + " has no rows");
        std::shuffle(by_domain[d].begin(), by_domain[d].end(), rng);
    }

    const std::size_t n_full = m / batch_size;
    std::vector<std::vector<std::size_t>> batches;
    if (n_full == 0) {
        std::vector<std::size_t> all(m);
        for (std::size_t i = 0; i < m; ++i) all[i] = i;
        std::shuffle(all.begin(), all.end(), rng);
        batches.push_back(std::move(all));
        return batches;
    }

    batches.assign(n_full, {});
    std::vector<std::size_t> cursor(N, 0);
    // One row of every domain per batch.
    for (std::size_t d = 0; d < N; ++d) {
        const auto& rows = by_domain[d];
        for (std::size_t j = 0; j < n_full; ++j) batches[j].push_back(rows[j % rows.size()]);
        cursor[d] = std::min(rows.size(), n_full);
    }
    // Remaining slots, filled proportionally to each domain's unused rows.
    std::vector<std::size_t> remaining(N);
    std::size_t pool = 0;
    for (std::size_t d = 0; d < N; ++d) {
        remaining[d] = by_domain[d].size() - cursor[d];
        pool += remaining[d];
    }
    const std::size_t slots = std::min(batch_size - N, pool / n_full);
    std::vector<std::size_t> taken(N, 0);
    for (std::size_t j = 0; j < n_full && pool > 0; ++j) {
        const double filled = static_cast<double>((j + 1) * slots);
        for (std::size_t s = 0; s < slots; ++s) {
            std::size_t best = N;
            double best_deficit = 0.0;
            for (std::size_t d = 0; d < N; ++d) {
                if (taken[d] >= remaining[d]) continue;
                const double ideal = filled * static_cast<double>(remaining[d]) / static_cast<double>(pool);
                const double deficit = ideal - static_cast<double>(taken[d]);
                if (best == N || deficit > best_deficit) {
                    best = d;
                    best_deficit = deficit;
                }
            }
            if (best == N) break;
            batches[j].push_back(by_domain[best][cursor[best] + taken[best]]);
            ++taken[best];
        }
    }
    // Leftovers form the ragged batch.
    std::vector<std::size_t> ragged;
    std::vector<char> covered(N, 0);
    for (std::size_t d = 0; d < N; ++d) {
        for (std::size_t k = cursor[d] + taken[d]; k < by_domain[d].size(); ++k) {
            ragged.push_back(by_domain[d][k]);
            covered[d] = 1;
        }
    }
    if (!ragged.empty() && std::all_of(covered.begin(), covered.end(), [](char c) { return c != 0; })) {
        batches.push_back(std::move(ragged));
    }
    for (auto& b : batches) std::shuffle(b.begin(), b.end(), rng);
    std::shuffle(batches.begin(), batches.end(), rng);
    return batches;
}

std::vector<std::vector<std::size_t>> epoch_batches(const TabularDataset& data, const TrainConfig& cfg, int epoch) {
    return stratified_batches(data.sensitive, data.n_domains, cfg.batch_size,
                              combine_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
}

// ---------------------------------------------------------------------------
// Training

namespace {

struct BatchData {
    Tensor features;
    Tensor labels;
    std::vector<int> domains;
};

BatchData gather(const TabularDataset& data, const std::vector<std::size_t>& rows) {
    BatchData b;
    b.features = data.features.gather_rows(rows);
    std::vector<int> labels;
    for (std::size_t r : rows) {
        labels.push_back(data.task_labels[r]);
        b.domains.push_back(data.sensitive[r]);
    }
    b.labels = one_hot(labels, data.n_classes);
    return b;
}

}  // namespace

EpochRecord evaluate_batches(const Mlp& model, const TabularDataset& data,
                             const std::vector<std::vector<std::size_t>>& batches, const TrainConfig& cfg) {
    EpochRecord rec;
    if (batches.empty()) return rec;
    for (const auto& rows : batches) {
        const BatchData b = gather(data, rows);
        ad::Tape tape;
        const auto g = model.forward(tape, b.features);
        if (!g.probs.value().all_finite())
            throw DivergedError("non-finite model output during evaluation", 0, 0);
        const ProbBatch pb{g.probs, b.labels, b.domains, data.n_domains};
        const DapLossTerms terms = dap_loss_terms(pb, cfg.dap);
        rec.loss += terms.loss.item();
        rec.cross_entropy += terms.cross_entropy.item();
        rec.mean_accuracy += terms.stats.mean.item();
        rec.std_accuracy += terms.stats.std.item();
        rec.adjusted_parity += terms.adjusted_parity.item();
    }
    const double n = static_cast<double>(batches.size());
    rec.loss /= n;
    rec.cross_entropy /= n;
    rec.mean_accuracy /= n;
    rec.std_accuracy /= n;
    rec.adjusted_parity /= n;
    return rec;
}

TrainResult train(const TabularDataset& data, const ModelSpec& spec, const TrainConfig& cfg) {
    spec.validate();
    cfg.validate(data.n_domains);
    if (data.dims() != spec.input_dim) throw DimensionError("dataset width does not match model input_dim");
    if (static_cast<std::size_t>(data.n_classes) != spec.n_classes)
        throw ConfigError("dataset class count does not match model n_classes");

    TrainResult result{Mlp(spec), {}};
    Mlp& model = result.model;
    auto optimizer = make_optimizer(cfg);
    const auto params = model.parameters();

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto batches = epoch_batches(data, cfg, epoch);
        for (std::size_t bi = 0; bi < batches.size(); ++bi) {
            const BatchData b = gather(data, batches[bi]);
            ad::Tape tape;
            const auto g = model.forward(tape, b.features);
            const auto where = " at epoch " + std::to_string(epoch + 1) + ", batch " + std::to_string(bi + 1);
            if (!g.probs.value().all_finite()) {
                throw DivergedError("training diverged: non-finite model output" + where, epoch + 1,
                                    static_cast<int>(bi + 1));
            }
            const ProbBatch pb{g.probs, b.labels, b.domains, data.n_domains};
            const ad::Var loss = dap_loss(pb, cfg.dap);
            if (!std::isfinite(loss.item())) {
                throw DivergedError("training diverged: non-finite loss" + where, epoch + 1,
                                    static_cast<int>(bi + 1));
            }
            tape.backward(loss);
            std::vector<const Tensor*> grads;
            for (const auto& p : g.params) {
                if (!p.grad().all_finite()) {
                    throw DivergedError("training diverged: non-finite gradient" + where, epoch + 1,
                                        static_cast<int>(bi + 1));
                }
                grads.push_back(&p.grad());
            }
            optimizer->step(params, grads);
        }
        EpochRecord rec = evaluate_batches(model, data, batches, cfg);
        rec.epoch = epoch + 1;
        if (!std::isfinite(rec.loss)) {
            throw DivergedError("training diverged: non-finite loss after epoch " + std::to_string(epoch + 1),
                                epoch + 1, 0);
        }
        result.trace.push_back(rec);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Checkpoints

json train_config_to_json(const TrainConfig& cfg) {
    json dap{{"beta", cfg.dap.beta}, {"omega", cfg.dap.omega}, {"balanced", cfg.dap.balanced},
              {"debias", cfg.dap.debias}};
    dap["s_random"] = cfg.dap.s_random ? json(*cfg.dap.s_random) : json(nullptr);
    return json{{"learning_rate", cfg.learning_rate}, {"batch_size", cfg.batch_size}, {"epochs", cfg.epochs},
                {"optimizer", to_string(cfg.optimizer)}, {"seed", cfg.seed}, {"dap", dap}};
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.optimizer = optimizer_from_string(j.value("optimizer", std::string(to_string(c.optimizer))));
    c.seed = j.value("seed", c.seed);
    if (j.contains("dap")) {
        const auto& d = j.at("dap");
        c.dap.beta = d.value("beta", c.dap.beta);
        c.dap.omega = d.value("omega", c.dap.omega);
        c.dap.balanced = d.value("balanced", c.dap.balanced);
        c.dap.debias = d.value("debias", c.dap.debias);
        if (d.contains("s_random") && !d.at("s_random").is_null()) c.dap.s_random = d.at("s_random").get<double>();
    }
    return c;
}

json checkpoint_to_json(const Checkpoint& ckpt) {
    const ModelSpec& spec = ckpt.model.spec();
    json j;
    j["format"] = "dap-checkpoint";
    j["version"] = 1;
    j["model_spec"] = {{"input_dim", spec.input_dim},
                       {"encoder_dims", spec.encoder_dims},
                       {"n_classes", spec.n_classes},
                       {"activation", "relu"},
                       {"seed", spec.seed}};
    j["train_config"] = train_config_to_json(ckpt.config);
    json params = json::array();
    const auto names = ckpt.model.parameter_names();
    const auto tensors = ckpt.model.parameters();
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        params.push_back({{"name", names[i]},
                          {"shape", {tensors[i]->rows(), tensors[i]->cols()}},
                          {"data", std::vector<double>(tensors[i]->data().begin(), tensors[i]->data().end())}});
    }
    j["parameters"] = params;
    json trace = json::array();
    for (const auto& r : ckpt.trace) {
        trace.push_back({{"epoch", r.epoch},
                         {"cross_entropy", r.cross_entropy},
                         {"mean_accuracy", r.mean_accuracy},
                         {"std_accuracy", r.std_accuracy},
                         {"adjusted_parity", r.adjusted_parity},
                         {"loss", r.loss}});
    }
    j["trace"] = trace;
    return j;
}

Checkpoint checkpoint_from_json(const json& j) {
    try {
        if (j.at("format") != "dap-checkpoint") throw SchemaError("not a dap-checkpoint file");
        if (j.at("version").get<int>() != 1) throw SchemaError("unsupported checkpoint version");
        const auto& s = j.at("model_spec");
        ModelSpec spec;
        spec.input_dim = s.at("input_dim").get<std::size_t>();
        spec.encoder_dims = s.at("encoder_dims").get<std::vector<std::size_t>>();
        spec.n_classes = s.at("n_classes").get<std::size_t>();
        spec.seed = s.at("seed").get<std::uint64_t>();
        Checkpoint ckpt{Mlp(spec), train_config_from_json(j.at("train_config")), {}};
        auto tensors = ckpt.model.parameters();
        const auto& params = j.at("parameters");
        if (params.size() != tensors.size()) throw SchemaError("checkpoint parameter count mismatch");
        for (std::size_t i = 0; i < tensors.size(); ++i) {
            const auto shape = params[i].at("shape").get<std::vector<std::size_t>>();
            if (shape.size() != 2 || shape[0] != tensors[i]->rows() || shape[1] != tensors[i]->cols())
                throw SchemaError("checkpoint parameter shape mismatch for " + params[i].at("name").get<std::string>());
            *tensors[i] = Tensor(shape[0], shape[1], params[i].at("data").get<std::vector<double>>());
        }
        for (const auto& r : j.at("trace")) {
            ckpt.trace.push_back(EpochRecord{r.at("epoch").get<int>(), r.at("cross_entropy").get<double>(),
                                             r.at("mean_accuracy").get<double>(), r.at("std_accuracy").get<double>(),
                                             r.at("adjusted_parity").get<double>(), r.at("loss").get<double>()});
        }
        return ckpt;
    } catch (const json::exception& e) {
        throw SchemaError(std::string("malformed checkpoint: ") + e.what());
    }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << checkpoint_to_json(ckpt).dump(1) << '\n';
    if (!out) throw IoError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return checkpoint_from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        throw SchemaError("checkpoint " + path.string() + ": " + e.what());
    }
}

}  // namespace dap

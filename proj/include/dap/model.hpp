#pragma once

// MLP encoder with a linear classification head, trained against the DAP
// objective on domain-stratified mini-batches.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dap/datapipe.hpp"
#include "dap/graddiff.hpp"
#include "dap/softmetrics.hpp"
#include "dap/tensor.hpp"

namespace dap {

struct ModelSpec {
    std::size_t input_dim = 0;
    std::vector<std::size_t> encoder_dims{64, 32};   // ReLU layers; last is the embedding
    std::size_t n_classes = 2;
    std::uint64_t seed = 0;

    std::size_t embedding_dim() const { return encoder_dims.back(); }
    void validate() const;
};

struct DenseLayer {
    Tensor weight;   // [in x out]
    Tensor bias;     // [1 x out]
};

class Mlp {
public:
    // Glorot-uniform weights, zero biases.
    explicit Mlp(ModelSpec spec);

    struct Graph {
        std::vector<ad::Var> params;   // same order as parameters()
        ad::Var embeddings;
        ad::Var logits;
        ad::Var probs;
    };

    // Records the forward pass on `tape`; parameters become tape variables.
    Graph forward(ad::Tape& tape, const Tensor& features) const;

    Tensor embed(const Tensor& features) const;
    Tensor predict_proba(const Tensor& features) const;

    const ModelSpec& spec() const noexcept { return spec_; }
    std::vector<Tensor*> parameters();
    std::vector<const Tensor*> parameters() const;
    std::vector<std::string> parameter_names() const;
    std::vector<DenseLayer>& layers() noexcept { return layers_; }
    const std::vector<DenseLayer>& layers() const noexcept { return layers_; }

private:
    ModelSpec spec_;
    std::vector<DenseLayer> layers_;   // encoder layers, then the head
};

enum class OptimizerKind { adam, sgd };

const char* to_string(OptimizerKind k) noexcept;
OptimizerKind optimizer_from_string(const std::string& s);

struct TrainConfig {
    double learning_rate = 0.005;
    std::size_t batch_size = 64;
    int epochs = 20;
    OptimizerKind optimizer = OptimizerKind::adam;
    DapConfig dap;
    std::uint64_t seed = 0;

    // Adult-scale defaults (lr 0.005, batch 64) and COMPAS-scale (lr 0.01, batch 32).
    static TrainConfig adult_defaults();
    static TrainConfig compas_defaults();
    void validate(int n_domains) const;
};

class Optimizer {
public:
    virtual ~Optimizer() = default;
    virtual void step(std::span<Tensor* const> params, std::span<const Tensor* const> grads) = 0;
};

class Sgd final : public Optimizer {
public:
    explicit Sgd(double lr) : lr_(lr) {}
    void step(std::span<Tensor* const> params, std::span<const Tensor* const> grads) override;

private:
    double lr_;
};

class Adam final : public Optimizer {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
    void step(std::span<Tensor* const> params, std::span<const Tensor* const> grads) override;

private:
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<Tensor> m_, v_;
};

std::unique_ptr<Optimizer> make_optimizer(const TrainConfig& cfg);

// Row-index batches in which every sensitive domain appears. Full batches hold
// exactly `batch_size` rows with domain shares proportional to the data; the
// leftover rows form a final ragged batch that is kept only if it covers every
// domain. A domain with fewer rows than there are full batches is cycled so
// it still appears in each batch.
std::vector<std::vector<std::size_t>> stratified_batches(std::span<const int> domains, int n_domains,
                                                         std::size_t batch_size, std::uint64_t seed);

struct EpochRecord {
    int epoch = 0;
    double cross_entropy = 0.0;
    double mean_accuracy = 0.0;    // mean over domains of soft (balanced) accuracy
    double std_accuracy = 0.0;
    double adjusted_parity = 0.0;  // soft, with beta = 1
    double loss = 0.0;

    friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

using TrainingTrace = std::vector<EpochRecord>;

struct TrainResult {
    Mlp model;
    TrainingTrace trace;
};

// Batch-averaged loss terms of `model` over `batches`, without updating it.
// Throws DivergedError when the model output is not finite.
EpochRecord evaluate_batches(const Mlp& model, const TabularDataset& data,
                             const std::vector<std::vector<std::size_t>>& batches, const TrainConfig& cfg);

// The batches used in epoch `epoch` (0-based) of train().
std::vector<std::vector<std::size_t>> epoch_batches(const TabularDataset& data, const TrainConfig& cfg, int epoch);

// Trains for cfg.epochs epochs and returns the final model. The trace entry of
// each epoch is evaluate_batches() over that epoch's batches with the
// parameters reached at the end of the epoch. Throws DivergedError on a
// non-finite loss.
TrainResult train(const TabularDataset& data, const ModelSpec& spec, const TrainConfig& cfg);

// Checkpoint file: JSON with format "dap-checkpoint", version 1. See README.
struct Checkpoint {
    Mlp model;
    TrainConfig config;
    TrainingTrace trace;
};

nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const nlohmann::json& j);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dap

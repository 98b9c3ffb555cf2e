#pragma once

#include <cstddef>
#include <cstdint>
#include <variant>
#include <vector>

#include "json.hpp"
#include "spool/graph.hpp"
#include "spool/pooling.hpp"
#include "spool/random.hpp"
#include "spool/tensor.hpp"

namespace spool {

/// x·W + b with W in×out and b 1×out.
struct DenseLayer {
    Matrix weight;
    Matrix bias;

    std::size_t in_dim() const noexcept { return weight.rows(); }
    std::size_t out_dim() const noexcept { return weight.cols(); }
};

/// Glorot-uniform weights in ±√(6/(in+out)), zero bias.
DenseLayer glorot_layer(std::size_t in, std::size_t out, Rng& rng);

/// H ← ReLU(Â·H·W + b) per layer.
struct GcnModel {
    std::vector<DenseLayer> layers;

    std::size_t input_dim() const { return layers.front().in_dim(); }
    std::size_t output_dim() const { return layers.back().out_dim(); }
    void validate() const;
};

/// One GIN layer: T(x) = W₂·ReLU(W₁x + b₁) + b₂ applied to (A+(1+ζ)I)H.
struct GinLayer {
    DenseLayer first;
    DenseLayer second;
};

struct GinModel {
    std::vector<GinLayer> layers;
    double zeta = 0.0;

    std::size_t input_dim() const { return layers.front().first.in_dim(); }
    std::size_t output_dim() const { return layers.back().second.out_dim(); }
    void validate() const;
};

/// Pooled vector → ReLU hidden layer → logits.
struct ReadoutHead {
    DenseLayer hidden;
    DenseLayer output;

    std::size_t num_classes() const noexcept { return output.out_dim(); }
};

enum class Arch { gcn, gin };
Arch parse_arch(const std::string& s);
std::string to_string(Arch a);

struct Classifier {
    std::variant<GcnModel, GinModel> backbone;
    ReadoutHead head;
    PoolingKind pooling;

    Arch arch() const noexcept { return backbone.index() == 0 ? Arch::gcn : Arch::gin; }
    const GcnModel& gcn() const { return std::get<GcnModel>(backbone); }
    const GinModel& gin() const { return std::get<GinModel>(backbone); }
    std::size_t input_dim() const;
    std::size_t embedding_dim() const;
    /// Weight matrices whose operator norms enter the robustness bounds, in layer order.
    std::vector<const Matrix*> backbone_weights() const;
    /// Every trainable matrix, backbone first, then the head.
    std::vector<Matrix*> parameters();
    std::vector<const Matrix*> parameters() const;
    void validate() const;
};

struct ModelShape {
    Arch arch = Arch::gcn;
    std::size_t input_dim = 1;
    std::size_t hidden_dim = 32;
    std::size_t layers = 2;
    std::size_t readout_hidden = 32;
    std::size_t num_classes = 2;
};

Classifier make_classifier(const ModelShape& shape, const PoolingKind& pooling, std::uint64_t seed);

/// Tape values for one forward pass.
struct ForwardPass {
    Var embedding; // n×d_L
    Var pooled;    // 1×d_L
    Var logits;    // 1×C
    std::vector<Var> params; // aligned with Classifier::parameters()
};

/// `adjacency` is the raw 0/1 matrix (Â is formed on the tape so structure
/// gradients flow); parameters become tape variables when `trainable`.
ForwardPass forward(Tape& t, const Classifier& c, const Var& adjacency, const Var& features, bool trainable);

/// Backbone only, off-tape.
Matrix embed(const Classifier& c, const Matrix& adjacency, const Matrix& features);
Matrix embed(const Classifier& c, const Graph& g);
/// Pooled representation with the classifier's pooling, off-tape.
Matrix pooled(const Classifier& c, const Matrix& embedding);

Matrix predict(const Classifier& c, const Graph& g);
/// Argmax, ties to the lower class.
std::size_t argmax_class(const Matrix& logits);
/// Cross-entropy of the classifier on g with the given label.
double loss_on(const Classifier& c, const Matrix& adjacency, const Matrix& features, std::size_t label);

struct TrainConfig {
    std::size_t epochs = 100;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;

    void validate() const;
};

struct EpochMetrics {
    std::size_t epoch = 0;
    double mean_loss = 0.0;
    double train_accuracy = 0.0;
};

struct TrainResult {
    Classifier model;
    std::vector<EpochMetrics> curve;
    double train_accuracy = 0.0;
    double test_accuracy = 0.0;
    double seconds = 0.0;
};

/// Adam, one step per graph, graph order reshuffled every epoch.
/// TrainingError names the epoch when the loss goes non-finite.
TrainResult train(Classifier init, const Dataset& ds, const SplitSpec& split, std::size_t fold,
                  const TrainConfig& config);

/// Fraction of argmax-correct predictions. Fans out over SP_THREADS workers.
double evaluate(const Classifier& c, const std::vector<const Graph*>& graphs);
double evaluate(const Classifier& c, const Dataset& ds, const std::vector<std::size_t>& indices);

void to_json(nlohmann::json& j, const Matrix& m);
void from_json(const nlohmann::json& j, Matrix& m);
void to_json(nlohmann::json& j, const Classifier& c);
void from_json(const nlohmann::json& j, Classifier& c);

} // namespace spool

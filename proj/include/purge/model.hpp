#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "purge/data.hpp"

namespace purge {

enum class ModelKind : std::uint8_t { softmax_linear = 0, one_hidden_layer = 1 };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& name);

/// Parameter layout (row-major, flattened in this order):
///   softmax_linear:   W[d x K], b[K]
///   one_hidden_layer: W1[d x H], b1[H], W2[H x K], b2[K]   (tanh hidden units)
struct ModelArch {
    ModelKind kind = ModelKind::softmax_linear;
    std::size_t feature_dim = 1;
    std::size_t num_classes = 2;
    std::size_t hidden_units = 0;

    std::size_t param_count() const;
    void validate() const;

    friend bool operator==(const ModelArch&, const ModelArch&) = default;
};

/// A constituent classifier. Value type; equal states behave identically.
/// rng_cursor counts completed training rounds and selects the shuffle
/// stream of the next one.
struct ModelState {
    ModelArch arch;
    std::vector<double> params;
    std::uint64_t rng_cursor = 0;

    friend bool operator==(const ModelState&, const ModelState&) = default;
};

using Probabilities = std::vector<double>;

struct SoftLabel {
    PointId id = 0;
    Probabilities probs;

    friend bool operator==(const SoftLabel&, const SoftLabel&) = default;
};

/// Distillation targets of one chunk, in chunk order.
struct SoftLabelChunk {
    std::vector<SoftLabel> entries;

    const Probabilities* find(PointId id) const;
    bool erase(PointId id);

    friend bool operator==(const SoftLabelChunk&, const SoftLabelChunk&) = default;
};

struct TrainHyper {
    double learning_rate = 0.1;
    std::size_t batch_size = 32;
    double hard_label_weight = 0.0;  // alpha
    double temperature = 1.0;        // applied to teacher outputs when labelling
    std::uint64_t seed = 0;

    void validate() const;
};

/// Views into caller-owned storage.
struct TrainExample {
    std::span<const double> features;
    std::span<const double> soft_label;
    std::size_t hard_label = 0;
};

ModelState init_model(const ModelArch& arch, std::uint64_t seed);

std::vector<double> logits(const ModelState& state, std::span<const double> features);

/// softmax(logits / temperature).
Probabilities predict(const ModelState& state, std::span<const double> features, double temperature = 1.0);

/// (1-alpha)*CE(soft || p) + alpha*CE(onehot(hard) || p), with p clamped at 1e-12.
double distill_loss(std::span<const double> prediction, std::span<const double> soft_label,
                    std::size_t hard_label, double alpha);

/// d(distill_loss)/d(params) at one example.
std::vector<double> loss_gradient(const ModelState& state, const TrainExample& example, double alpha);

/// Mini-batch SGD. The example order is permuted once at call start with a
/// stream derived from (hyper.seed, state.rng_cursor); every epoch walks that
/// permutation in consecutive batches. epochs == 0 returns `state` untouched,
/// otherwise rng_cursor advances by one.
ModelState train(ModelState state, std::span<const TrainExample> examples, std::size_t epochs,
                 const TrainHyper& hyper);

double mean_loss(const ModelState& state, std::span<const TrainExample> examples, double alpha);

/// Component-wise mean.
Probabilities aggregate(std::span<const Probabilities> predictions);

/// Averaged (temperature-scaled) predictions of `members` for each point.
SoftLabelChunk subensemble_soft_labels(std::span<const ModelState* const> members, const Dataset& data,
                                       std::span<const PointId> points, double temperature = 1.0);

/// Throws InvalidArgument unless `p` is non-negative and sums to 1 within 1e-9.
void check_distribution(std::span<const double> p);

std::size_t argmax(std::span<const double> p);

}  // namespace purge

#include "purge/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "purge/error.hpp"
#include "purge/rng.hpp"

namespace purge {

namespace {

constexpr double kProbFloor = 1e-12;

struct Offsets {
    std::size_t w1 = 0, b1 = 0, w2 = 0, b2 = 0;
};

Offsets offsets_of(const ModelArch& a) {
    Offsets o;
    if (a.kind == ModelKind::softmax_linear) {
        o.w2 = 0;
        o.b2 = a.feature_dim * a.num_classes;
    } else {
        o.w1 = 0;
        o.b1 = a.feature_dim * a.hidden_units;
        o.w2 = o.b1 + a.hidden_units;
        o.b2 = o.w2 + a.hidden_units * a.num_classes;
    }
    return o;
}

void check_input(const ModelState& s, std::span<const double> features) {
    if (features.size() != s.arch.feature_dim)
        throw DimensionError("feature vector has length " + std::to_string(features.size()) +
                             ", model expects " + std::to_string(s.arch.feature_dim));
    if (s.params.size() != s.arch.param_count())
        throw DimensionError("model has " + std::to_string(s.params.size()) + " parameters, arch implies " +
                             std::to_string(s.arch.param_count()));
}

/// Forward pass; fills `hidden` (tanh activations) when the arch has one.
void forward(const ModelState& s, std::span<const double> x, std::vector<double>& hidden,
             std::vector<double>& z) {
    const auto& a = s.arch;
    const auto o = offsets_of(a);
    const double* p = s.params.data();
    const std::size_t K = a.num_classes;

    std::span<const double> input = x;
    std::size_t in_dim = a.feature_dim;
    if (a.kind == ModelKind::one_hidden_layer) {
        const std::size_t H = a.hidden_units;
        hidden.assign(p + o.b1, p + o.b1 + H);
        for (std::size_t i = 0; i < a.feature_dim; ++i) {
            const double xi = x[i];
            const double* row = p + o.w1 + i * H;
            for (std::size_t h = 0; h < H; ++h) hidden[h] += xi * row[h];
        }
        for (auto& h : hidden) h = std::tanh(h);
        input = hidden;
        in_dim = H;
    }
    z.assign(p + o.b2, p + o.b2 + K);
    for (std::size_t i = 0; i < in_dim; ++i) {
        const double xi = input[i];
        const double* row = p + o.w2 + i * K;
        for (std::size_t c = 0; c < K; ++c) z[c] += xi * row[c];
    }
}

void softmax_inplace(std::vector<double>& z, double temperature) {
    const double m = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (auto& v : z) {
        v = std::exp((v - m) / temperature);
        sum += v;
    }
    for (auto& v : z) v /= sum;
}

struct Workspace {
    std::vector<double> hidden, z, dz, dhidden;
};

/// Adds the gradient of one example into `grad`.
void accumulate_gradient(const ModelState& s, const TrainExample& ex, double alpha, std::span<double> grad,
                         Workspace& ws) {
    const auto& a = s.arch;
    const auto o = offsets_of(a);
    const std::size_t K = a.num_classes;
    forward(s, ex.features, ws.hidden, ws.z);
    softmax_inplace(ws.z, 1.0);
    const auto& prob = ws.z;

    // dL/dz_c = p_c * sum_{i unclamped} t_i - [c unclamped] t_c, with t the
    // alpha-mixed target. Clamped probabilities contribute a constant to the
    // loss, hence no gradient.
    ws.dz.assign(K, 0.0);
    double live_mass = 0.0;
    for (std::size_t i = 0; i < K; ++i) {
        const double t = (1.0 - alpha) * ex.soft_label[i] + (i == ex.hard_label ? alpha : 0.0);
        if (prob[i] >= kProbFloor) {
            live_mass += t;
            ws.dz[i] = -t;
        }
    }
    for (std::size_t c = 0; c < K; ++c) ws.dz[c] += prob[c] * live_mass;

    std::span<const double> input = ex.features;
    std::size_t in_dim = a.feature_dim;
    if (a.kind == ModelKind::one_hidden_layer) {
        input = ws.hidden;
        in_dim = a.hidden_units;
    }
    for (std::size_t i = 0; i < in_dim; ++i) {
        double* g = grad.data() + o.w2 + i * K;
        for (std::size_t c = 0; c < K; ++c) g[c] += input[i] * ws.dz[c];
    }
    for (std::size_t c = 0; c < K; ++c) grad[o.b2 + c] += ws.dz[c];

    if (a.kind == ModelKind::one_hidden_layer) {
        const std::size_t H = a.hidden_units;
        ws.dhidden.assign(H, 0.0);
        for (std::size_t h = 0; h < H; ++h) {
            const double* w = s.params.data() + o.w2 + h * K;
            double acc = 0.0;
            for (std::size_t c = 0; c < K; ++c) acc += w[c] * ws.dz[c];
            ws.dhidden[h] = acc * (1.0 - ws.hidden[h] * ws.hidden[h]);
        }
        for (std::size_t i = 0; i < a.feature_dim; ++i) {
            double* g = grad.data() + o.w1 + i * H;
            for (std::size_t h = 0; h < H; ++h) g[h] += ex.features[i] * ws.dhidden[h];
        }
        for (std::size_t h = 0; h < H; ++h) grad[o.b1 + h] += ws.dhidden[h];
    }
}

void check_example(const ModelState& s, const TrainExample& ex) {
    check_input(s, ex.features);
    if (ex.soft_label.size() != s.arch.num_classes)
        throw DimensionError("soft label has " + std::to_string(ex.soft_label.size()) + " classes, model has " +
                             std::to_string(s.arch.num_classes));
    if (ex.hard_label >= s.arch.num_classes) throw DimensionError("hard label out of range");
}

}  // namespace

std::string to_string(ModelKind kind) {
    return kind == ModelKind::softmax_linear ? "softmax_linear" : "one_hidden_layer";
}

ModelKind model_kind_from_string(const std::string& name) {
    if (name == "softmax_linear") return ModelKind::softmax_linear;
    if (name == "one_hidden_layer") return ModelKind::one_hidden_layer;
    throw InvalidArgument("unknown model kind '" + name + "'");
}

std::size_t ModelArch::param_count() const {
    if (kind == ModelKind::softmax_linear) return feature_dim * num_classes + num_classes;
    return feature_dim * hidden_units + hidden_units + hidden_units * num_classes + num_classes;
}

void ModelArch::validate() const {
    if (feature_dim == 0 || num_classes == 0) throw InvalidArgument("model dimensions must be positive");
    if (kind == ModelKind::one_hidden_layer && hidden_units == 0)
        throw InvalidArgument("one_hidden_layer needs hidden_units > 0");
}

void TrainHyper::validate() const {
    if (!(learning_rate > 0.0)) throw InvalidArgument("learning_rate must be > 0");
    if (batch_size == 0) throw InvalidArgument("batch_size must be > 0");
    if (!(hard_label_weight >= 0.0 && hard_label_weight <= 1.0))
        throw InvalidArgument("hard_label_weight must be in [0, 1]");
    if (!(temperature > 0.0)) throw InvalidArgument("temperature must be > 0");
}

const Probabilities* SoftLabelChunk::find(PointId id) const {
    for (const auto& e : entries)
        if (e.id == id) return &e.probs;
    return nullptr;
}

bool SoftLabelChunk::erase(PointId id) {
    auto it = std::find_if(entries.begin(), entries.end(), [&](const SoftLabel& e) { return e.id == id; });
    if (it == entries.end()) return false;
    entries.erase(it);
    return true;
}

ModelState init_model(const ModelArch& arch, std::uint64_t seed) {
    arch.validate();
    ModelState s{arch, std::vector<double>(arch.param_count()), 0};
    Rng rng(derive_seed(seed, {0x1417}));
    for (auto& w : s.params) w = rng.uniform(-0.05, 0.05);
    return s;
}

std::vector<double> logits(const ModelState& state, std::span<const double> features) {
    check_input(state, features);
    std::vector<double> hidden, z;
    forward(state, features, hidden, z);
    return z;
}

Probabilities predict(const ModelState& state, std::span<const double> features, double temperature) {
    if (!(temperature > 0.0)) throw InvalidArgument("temperature must be > 0");
    auto z = logits(state, features);
    softmax_inplace(z, temperature);
    return z;
}

void check_distribution(std::span<const double> p) {
    if (p.empty()) throw InvalidArgument("empty distribution");
    double sum = 0.0;
    for (double v : p) {
        if (!(v >= 0.0)) throw InvalidArgument("distribution has a negative or NaN entry");
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw InvalidArgument("distribution sums to " + std::to_string(sum));
}

double distill_loss(std::span<const double> prediction, std::span<const double> soft_label,
                    std::size_t hard_label, double alpha) {
    check_distribution(prediction);
    check_distribution(soft_label);
    if (prediction.size() != soft_label.size()) throw DimensionError("prediction/soft label length mismatch");
    if (hard_label >= prediction.size()) throw DimensionError("hard label out of range");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidArgument("alpha must be in [0, 1]");

    double soft = 0.0;
    for (std::size_t i = 0; i < prediction.size(); ++i)
        if (soft_label[i] > 0.0) soft -= soft_label[i] * std::log(std::max(prediction[i], kProbFloor));
    const double hard = -std::log(std::max(prediction[hard_label], kProbFloor));
    return (1.0 - alpha) * soft + alpha * hard;
}

std::vector<double> loss_gradient(const ModelState& state, const TrainExample& example, double alpha) {
    check_example(state, example);
    std::vector<double> grad(state.params.size(), 0.0);
    Workspace ws;
    accumulate_gradient(state, example, alpha, grad, ws);
    return grad;
}

ModelState train(ModelState state, std::span<const TrainExample> examples, std::size_t epochs,
                 const TrainHyper& hyper) {
    if (epochs == 0) return state;
    hyper.validate();
    if (examples.empty()) throw InvalidArgument("train called with no examples");
    for (const auto& ex : examples) check_example(state, ex);

    std::vector<std::size_t> order(examples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(hyper.seed, {0x7a1e, state.rng_cursor}));
    rng.shuffle(std::span(order));

    std::vector<double> grad(state.params.size());
    Workspace ws;
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        for (std::size_t start = 0; start < order.size(); start += hyper.batch_size) {
            const std::size_t end = std::min(order.size(), start + hyper.batch_size);
            std::fill(grad.begin(), grad.end(), 0.0);
            for (std::size_t b = start; b < end; ++b)
                accumulate_gradient(state, examples[order[b]], hyper.hard_label_weight, grad, ws);
            const double step = hyper.learning_rate / static_cast<double>(end - start);
            for (std::size_t i = 0; i < grad.size(); ++i) state.params[i] -= step * grad[i];
        }
    }
    ++state.rng_cursor;
    return state;
}

double mean_loss(const ModelState& state, std::span<const TrainExample> examples, double alpha) {
    if (examples.empty()) throw InvalidArgument("mean_loss over no examples");
    double total = 0.0;
    for (const auto& ex : examples) {
        check_example(state, ex);
        const auto p = predict(state, ex.features);
        total += distill_loss(p, ex.soft_label, ex.hard_label, alpha);
    }
    return total / static_cast<double>(examples.size());
}

Probabilities aggregate(std::span<const Probabilities> predictions) {
    if (predictions.empty()) throw InvalidArgument("aggregate of no predictions");
    const std::size_t K = predictions.front().size();
    Probabilities out(K, 0.0);
    for (const auto& p : predictions) {
        if (p.size() != K) throw DimensionError("aggregate inputs differ in length");
        for (std::size_t c = 0; c < K; ++c) out[c] += p[c];
    }
    const double n = static_cast<double>(predictions.size());
    for (auto& v : out) v /= n;
    return out;
}

SoftLabelChunk subensemble_soft_labels(std::span<const ModelState* const> members, const Dataset& data,
                                       std::span<const PointId> points, double temperature) {
    if (members.empty()) throw InvalidArgument("soft labels need at least one model");
    const std::size_t K = members.front()->arch.num_classes;
    for (const auto* m : members)
        if (m->arch.num_classes != K) throw DimensionError("ensemble members disagree on class count");

    SoftLabelChunk out;
    out.entries.reserve(points.size());
    std::vector<Probabilities> preds(members.size());
    for (auto id : points) {
        const auto& x = data.at(id).features;
        for (std::size_t i = 0; i < members.size(); ++i) preds[i] = predict(*members[i], x, temperature);
        out.entries.push_back(SoftLabel{id, aggregate(preds)});
    }
    return out;
}

std::size_t argmax(std::span<const double> p) {
    if (p.empty()) throw InvalidArgument("argmax of empty vector");
    std::size_t best = 0;
    for (std::size_t i = 1; i < p.size(); ++i)
        if (p[i] > p[best]) best = i;
    return best;
}

}  // namespace purge

#pragma once

// Sequential encoder-decoder network: layer stack, forward/backward passes,
// MSE loss, Adam and the training loop.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "topocnn/layers.hpp"
#include "topocnn/random.hpp"
#include "topocnn/tensor.hpp"

namespace topocnn {

enum class LayerKind : std::uint32_t { Conv = 0, MaxPool = 1, Flatten = 2, Dense = 3, Reshape = 4, TConv = 5 };
enum class Activation : std::uint32_t { None = 0, ReLU = 1 };

struct ConvLayer {
    ConvParams params;
    std::size_t in_ch = 1;
    friend bool operator==(const ConvLayer&, const ConvLayer&) = default;
};
struct PoolLayer {
    PoolParams params;
    friend bool operator==(const PoolLayer&, const PoolLayer&) = default;
};
struct FlattenLayer {
    friend bool operator==(const FlattenLayer&, const FlattenLayer&) = default;
};
struct DenseLayer {
    std::size_t in = 1;
    std::size_t out = 1;
    friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};
struct ReshapeLayer {
    std::size_t h = 1, w = 1, c = 1;
    friend bool operator==(const ReshapeLayer&, const ReshapeLayer&) = default;
};
struct TConvLayer {
    ConvParams params;
    std::size_t in_ch = 1;
    friend bool operator==(const TConvLayer&, const TConvLayer&) = default;
};

// Alternative order matches LayerKind.
using LayerParams = std::variant<ConvLayer, PoolLayer, FlattenLayer, DenseLayer, ReshapeLayer, TConvLayer>;

struct LayerSpec {
    LayerParams params;
    Activation activation = Activation::None;

    [[nodiscard]] LayerKind kind() const noexcept { return static_cast<LayerKind>(params.index()); }
    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

inline const char* kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Conv: return "Conv2D";
        case LayerKind::MaxPool: return "MaxPool2D";
        case LayerKind::Flatten: return "Flatten";
        case LayerKind::Dense: return "Dense";
        case LayerKind::Reshape: return "Reshape";
        case LayerKind::TConv: return "Conv2DTranspose";
    }
    return "?";
}

/// Learnable weights and biases of one layer; empty for parameterless layers.
struct ParamBlob {
    Tensor weights;
    std::vector<double> bias;

    [[nodiscard]] std::size_t size() const noexcept { return weights.size() + bias.size(); }
    friend bool operator==(const ParamBlob&, const ParamBlob&) = default;
};

struct Model {
    std::vector<LayerSpec> layers;
    std::vector<ParamBlob> params;  // one per layer
    std::size_t adaptive_n = 0;
    std::size_t input_h = 0, input_w = 0, input_c = 1;

    [[nodiscard]] Shape input_shape(std::size_t batch) const { return {batch, input_h, input_w, input_c}; }
};

// ---------------------------------------------------------------------------
// Shape bookkeeping
// ---------------------------------------------------------------------------

/// Weight tensor shape of a layer, or nullopt when it has no parameters.
inline std::optional<Shape> weight_shape(const LayerSpec& layer) {
    return std::visit(
        [](const auto& l) -> std::optional<Shape> {
            using T = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<T, ConvLayer>) {
                return Shape{l.params.filters, l.params.kh, l.params.kw, l.in_ch};
            } else if constexpr (std::is_same_v<T, TConvLayer>) {
                return Shape{l.in_ch, l.params.kh, l.params.kw, l.params.filters};
            } else if constexpr (std::is_same_v<T, DenseLayer>) {
                return Shape{l.out, 1, 1, l.in};
            } else {
                return std::nullopt;
            }
        },
        layer.params);
}

inline std::size_t bias_size(const LayerSpec& layer) {
    return std::visit(
        [](const auto& l) -> std::size_t {
            using T = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<T, ConvLayer> || std::is_same_v<T, TConvLayer>) {
                return l.params.filters;
            } else if constexpr (std::is_same_v<T, DenseLayer>) {
                return l.out;
            } else {
                return 0;
            }
        },
        layer.params);
}

inline std::size_t parameter_count(const LayerSpec& layer) {
    const auto ws = weight_shape(layer);
    return (ws ? ws->size() : 0) + bias_size(layer);
}

inline std::size_t parameter_count(const std::vector<LayerSpec>& layers) {
    std::size_t total = 0;
    for (const auto& l : layers) total += parameter_count(l);
    return total;
}

/// Per-sample output shape of `layer` applied to `in` (batch extent carried through).
inline Shape output_shape(const LayerSpec& layer, const Shape& in) {
    return std::visit(
        [&](const auto& l) -> Shape {
            using T = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<T, ConvLayer>) {
                if (in.c != l.in_ch) throw ShapeError("conv layer expects " + std::to_string(l.in_ch) + " channels");
                auto [h, w] = conv_output_dims(in.h, in.w, l.params);
                return {in.n, h, w, l.params.filters};
            } else if constexpr (std::is_same_v<T, PoolLayer>) {
                if (in.h % l.params.ph != 0 || in.w % l.params.pw != 0) throw ShapeError("pool window does not divide input");
                return {in.n, in.h / l.params.ph, in.w / l.params.pw, in.c};
            } else if constexpr (std::is_same_v<T, FlattenLayer>) {
                return {in.n, 1, 1, in.per_sample()};
            } else if constexpr (std::is_same_v<T, DenseLayer>) {
                if (in.h != 1 || in.w != 1 || in.c != l.in) throw ShapeError("dense layer input length mismatch");
                return {in.n, 1, 1, l.out};
            } else if constexpr (std::is_same_v<T, ReshapeLayer>) {
                if (in.per_sample() != l.h * l.w * l.c) throw ShapeError("reshape changes element count");
                return {in.n, l.h, l.w, l.c};
            } else {
                if (in.c != l.in_ch) throw ShapeError("tconv layer expects " + std::to_string(l.in_ch) + " channels");
                auto [h, w] = tconv_output_dims(in.h, in.w, l.params);
                return {in.n, h, w, l.params.filters};
            }
        },
        layer.params);
}

/// Output shape after every layer for a single-sample input.
inline std::vector<Shape> shape_chain(const Model& m) {
    std::vector<Shape> shapes;
    Shape s = m.input_shape(1);
    for (const auto& l : m.layers) {
        s = output_shape(l, s);
        shapes.push_back(s);
    }
    return shapes;
}

// ---------------------------------------------------------------------------
// Architecture
// ---------------------------------------------------------------------------

using ChannelWidths = std::array<std::size_t, 3>;

inline constexpr ChannelWidths kPaperWidths{128, 256, 512};

/// Layer stack of the encoder-decoder: three same-padded conv + max-pool
/// stages (pools 2, 2, 5), flatten, optional adaptive dense bottleneck of
/// `adaptive_n` units, dense back to the flatten width, reshape, and three
/// transpose convolutions (2/2, 5/5, 2/2) up to a single-channel image.
inline std::vector<LayerSpec> build_architecture(std::size_t adaptive_n, std::size_t input_side,
                                                 const ChannelWidths& widths = kPaperWidths) {
    if (input_side == 0 || input_side % 20 != 0) {
        throw ShapeError("input side " + std::to_string(input_side) + " must be a positive multiple of 20");
    }
    for (auto c : widths)
        if (c == 0) throw ShapeError("channel widths must be >= 1");
    const auto [c1, c2, c3] = widths;
    const std::size_t bottleneck = input_side / 20;
    const std::size_t flat = bottleneck * bottleneck * c3;

    auto conv = [](std::size_t filters, std::size_t k, std::size_t in_ch) {
        return LayerSpec{ConvLayer{{filters, k, k, 1, 1, Padding::same()}, in_ch}, Activation::ReLU};
    };
    auto pool = [](std::size_t k) { return LayerSpec{PoolLayer{PoolParams::square(k)}, Activation::None}; };
    auto tconv = [](std::size_t filters, std::size_t k, std::size_t in_ch) {
        return LayerSpec{TConvLayer{{filters, k, k, k, k, Padding::valid()}, in_ch}, Activation::ReLU};
    };

    std::vector<LayerSpec> layers{
        conv(c1, 2, 1), pool(2), conv(c2, 2, c1), pool(2), conv(c3, 5, c2), pool(5),
        LayerSpec{FlattenLayer{}, Activation::None},
    };
    if (adaptive_n > 0) {
        layers.push_back({DenseLayer{flat, adaptive_n}, Activation::ReLU});
        layers.push_back({DenseLayer{adaptive_n, flat}, Activation::ReLU});
    } else {
        layers.push_back({DenseLayer{flat, flat}, Activation::ReLU});
    }
    layers.push_back({ReshapeLayer{bottleneck, bottleneck, c3}, Activation::None});
    layers.push_back(tconv(c2, 2, c3));
    layers.push_back(tconv(c1, 5, c2));
    layers.push_back(tconv(1, 2, c1));
    return layers;
}

/// Number of inputs summed into each output of a layer, for He scaling.
inline std::size_t fan_in(const LayerSpec& layer) {
    return std::visit(
        [](const auto& l) -> std::size_t {
            using T = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<T, ConvLayer>) {
                return l.params.kh * l.params.kw * l.in_ch;
            } else if constexpr (std::is_same_v<T, TConvLayer>) {
                const std::size_t ov = (l.params.kh + l.params.sv - 1) / l.params.sv;
                const std::size_t oh = (l.params.kw + l.params.sh - 1) / l.params.sh;
                return l.in_ch * ov * oh;
            } else if constexpr (std::is_same_v<T, DenseLayer>) {
                return l.in;
            } else {
                return 0;
            }
        },
        layer.params);
}

/// He-uniform weights (bound sqrt(6 / fan_in)), zero biases. Layers are
/// initialised in order from a single seeded stream.
inline std::vector<ParamBlob> init_parameters(const std::vector<LayerSpec>& layers, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<ParamBlob> params;
    params.reserve(layers.size());
    for (const auto& l : layers) {
        ParamBlob blob;
        if (auto ws = weight_shape(l)) {
            blob.weights = Tensor(*ws);
            const double bound = std::sqrt(6.0 / static_cast<double>(fan_in(l)));
            for (double& w : blob.weights.data()) w = rng.uniform(-bound, bound);
            blob.bias.assign(bias_size(l), 0.0);
        }
        params.push_back(std::move(blob));
    }
    return params;
}

inline Model build_model(std::size_t adaptive_n, std::size_t input_side, const ChannelWidths& widths = kPaperWidths,
                         std::uint64_t seed = 0) {
    Model m;
    m.layers = build_architecture(adaptive_n, input_side, widths);
    m.adaptive_n = adaptive_n;
    m.input_h = m.input_w = input_side;
    m.input_c = 1;
    m.params = init_parameters(m.layers, seed);
    return m;
}

inline std::size_t parameter_count(const Model& m) { return parameter_count(m.layers); }

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

struct LayerCache {
    Tensor input;
    Tensor pre_activation;  // only kept for ReLU layers
    std::vector<std::size_t> argmax;
};

using ActivationCache = std::vector<LayerCache>;

struct ForwardResult {
    Tensor output;
    ActivationCache cache;
};

namespace detail {

inline Tensor apply_layer(const LayerSpec& layer, const ParamBlob& blob, const Tensor& x, LayerCache* cache) {
    Tensor pre = std::visit(
        [&](const auto& l) -> Tensor {
            using T = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<T, ConvLayer>) {
                return conv2d_forward(x, blob.weights, blob.bias, l.params);
            } else if constexpr (std::is_same_v<T, PoolLayer>) {
                auto r = maxpool_forward(x, l.params);
                if (cache) cache->argmax = std::move(r.argmax);
                return std::move(r.output);
            } else if constexpr (std::is_same_v<T, FlattenLayer>) {
                return flatten(x);
            } else if constexpr (std::is_same_v<T, DenseLayer>) {
                return dense_forward(x, blob.weights, blob.bias);
            } else if constexpr (std::is_same_v<T, ReshapeLayer>) {
                return reshape(x, l.h, l.w, l.c);
            } else {
                return tconv2d_forward(x, blob.weights, blob.bias, l.params);
            }
        },
        layer.params);
    if (layer.activation == Activation::ReLU) {
        Tensor out = relu(pre);
        if (cache) cache->pre_activation = std::move(pre);
        return out;
    }
    return pre;
}

inline void check_input(const Model& m, const Tensor& input) {
    const Shape& s = input.shape();
    if (s.h != m.input_h || s.w != m.input_w || s.c != m.input_c) {
        throw ShapeError("model expects input " + to_string(m.input_shape(s.n)) + ", got " + to_string(s));
    }
}

}  // namespace detail

/// Applies the layers in order, caching what backward needs.
inline ForwardResult forward(const Model& m, const Tensor& input) {
    detail::check_input(m, input);
    ForwardResult r;
    r.cache.resize(m.layers.size());
    Tensor x = input;
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
        r.cache[i].input = x;
        x = detail::apply_layer(m.layers[i], m.params[i], x, &r.cache[i]);
    }
    r.output = std::move(x);
    return r;
}

/// Parameter gradients for every layer (empty blobs for parameterless layers).
inline std::vector<ParamBlob> backward(const Model& m, const ActivationCache& cache, const Tensor& grad_output) {
    if (cache.size() != m.layers.size()) throw ShapeError("backward: cache does not match model");
    std::vector<ParamBlob> grads(m.layers.size());
    Tensor g = grad_output;
    for (std::size_t idx = m.layers.size(); idx-- > 0;) {
        const LayerSpec& layer = m.layers[idx];
        const LayerCache& c = cache[idx];
        if (layer.activation == Activation::ReLU) g = relu_backward(g, c.pre_activation);
        std::visit(
            [&](const auto& l) {
                using T = std::decay_t<decltype(l)>;
                if constexpr (std::is_same_v<T, ConvLayer>) {
                    auto lg = conv2d_backward(g, c.input, m.params[idx].weights, l.params);
                    grads[idx] = {std::move(lg.weights), std::move(lg.bias)};
                    g = std::move(lg.input);
                } else if constexpr (std::is_same_v<T, PoolLayer>) {
                    g = maxpool_backward(g, c.argmax, c.input.shape());
                } else if constexpr (std::is_same_v<T, FlattenLayer> || std::is_same_v<T, ReshapeLayer>) {
                    g = g.reshaped(c.input.shape());
                } else if constexpr (std::is_same_v<T, DenseLayer>) {
                    auto lg = dense_backward(g, c.input, m.params[idx].weights);
                    grads[idx] = {std::move(lg.weights), std::move(lg.bias)};
                    g = std::move(lg.input);
                } else {
                    auto lg = tconv2d_backward(g, c.input, m.params[idx].weights, l.params);
                    grads[idx] = {std::move(lg.weights), std::move(lg.bias)};
                    g = std::move(lg.input);
                }
            },
            layer.params);
    }
    return grads;
}

/// Forward pass without caching; output clamped to the physical density range [0, 1].
inline Tensor predict(const Model& m, const Tensor& input) {
    detail::check_input(m, input);
    Tensor x = input;
    for (std::size_t i = 0; i < m.layers.size(); ++i) x = detail::apply_layer(m.layers[i], m.params[i], x, nullptr);
    for (double& v : x.data()) v = std::clamp(v, 0.0, 1.0);
    return x;
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

struct LossResult {
    double loss = 0.0;
    Tensor grad;
};

/// Mean over all elements of (pred - target)^2 and its gradient 2 (pred - target) / N.
inline LossResult mse_loss(const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape()) {
        throw ShapeError("mse_loss: prediction " + to_string(pred.shape()) + " vs target " + to_string(target.shape()));
    }
    LossResult r{0.0, Tensor(pred.shape())};
    const auto n = static_cast<double>(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - target[i];
        r.loss += d * d;
        r.grad[i] = 2.0 * d / n;
    }
    r.loss /= n;
    return r;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamHyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-7;
};

struct AdamState {
    std::size_t step = 0;
    AdamHyper hyper;
    std::vector<ParamBlob> m;
    std::vector<ParamBlob> v;
};

/// Zeroed moments shaped like the model parameters.
inline AdamState make_adam(const Model& model, const AdamHyper& hyper = {}) {
    AdamState s;
    s.hyper = hyper;
    for (const auto& p : model.params) {
        ParamBlob z{Tensor(p.weights.shape()), std::vector<double>(p.bias.size(), 0.0)};
        s.m.push_back(z);
        s.v.push_back(std::move(z));
    }
    return s;
}

/// Bias-corrected Adam update of one flat parameter array at step `t` (1-based).
inline void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> m,
                        std::span<double> v, const AdamHyper& h, std::size_t t) {
    if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size()) {
        throw ShapeError("adam: parameter / gradient / moment lengths differ");
    }
    const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad[i];
        m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g;
        v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g * g;
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        param[i] -= h.lr * mhat / (std::sqrt(vhat) + h.epsilon);
    }
}

inline void adam_step(AdamState& state, std::vector<ParamBlob>& params, const std::vector<ParamBlob>& grads) {
    if (params.size() != grads.size() || state.m.size() != params.size()) {
        throw ShapeError("adam_step: parameter and gradient layer counts differ");
    }
    ++state.step;
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].size() == 0) continue;
        if (grads[i].weights.shape() != params[i].weights.shape() || grads[i].bias.size() != params[i].bias.size()) {
            throw ShapeError("adam_step: gradient shape mismatch at layer " + std::to_string(i));
        }
        adam_update(params[i].weights.data(), grads[i].weights.data(), state.m[i].weights.data(),
                    state.v[i].weights.data(), state.hyper, state.step);
        adam_update(params[i].bias, grads[i].bias, state.m[i].bias, state.v[i].bias, state.hyper, state.step);
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
    std::size_t epochs = 2000;
    std::size_t batch_size = 32;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    bool shuffle = true;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-7;
    /// Called after every epoch with (1-based epoch, epoch loss).
    std::function<void(std::size_t, double)> on_epoch;
};

struct TrainLog {
    std::vector<double> epoch_loss;  // index 0 is epoch 1
};

/// Raised when a batch loss becomes non-finite.
class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline std::vector<double> layer_weight_norms(const Model& m) {
    std::vector<double> norms;
    for (const auto& p : m.params) norms.push_back(norm2(p.weights.data()));
    return norms;
}

/// Mini-batch Adam on MSE. The epoch loss is the sample-weighted mean of the
/// batch losses seen during that epoch. Mutates `model` in place; `adam` may
/// carry state from a previous run.
inline TrainLog train(Model& model, const Tensor& inputs, const Tensor& targets, const TrainConfig& cfg,
                      AdamState* adam = nullptr) {
    const std::size_t n = inputs.shape().n;
    if (n == 0) throw std::invalid_argument("train: empty dataset");
    if (targets.shape().n != n) throw ShapeError("train: input and target sample counts differ");
    if (cfg.epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
    if (cfg.batch_size < 1 || cfg.batch_size > n) {
        throw std::invalid_argument("train: batch size must be in [1, " + std::to_string(n) + "]");
    }
    detail::check_input(model, inputs);

    AdamState local = make_adam(model, {cfg.lr, cfg.beta1, cfg.beta2, cfg.epsilon});
    AdamState& opt = adam ? *adam : local;
    if (adam && adam->m.empty()) *adam = make_adam(model, local.hyper);

    Rng rng(cfg.seed);
    std::vector<std::size_t> order(n);
    TrainLog log;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        if (cfg.shuffle) rng.shuffle(std::span<std::size_t>(order));
        double weighted = 0.0;
        for (std::size_t first = 0; first < n; first += cfg.batch_size) {
            const std::size_t count = std::min(cfg.batch_size, n - first);
            const std::span<const std::size_t> idx(order.data() + first, count);
            const Tensor xb = gather_batch(inputs, idx);
            const Tensor yb = gather_batch(targets, idx);

            ForwardResult fr = forward(model, xb);
            LossResult lr = mse_loss(fr.output, yb);
            if (!std::isfinite(lr.loss)) {
                std::ostringstream os;
                os << "non-finite loss at epoch " << epoch << "; layer weight norms:";
                for (double v : layer_weight_norms(model)) os << ' ' << v;
                throw TrainingDiverged(os.str());
            }
            weighted += lr.loss * static_cast<double>(count);
            const auto grads = backward(model, fr.cache, lr.grad);
            adam_step(opt, model.params, grads);
        }
        const double epoch_loss = weighted / static_cast<double>(n);
        log.epoch_loss.push_back(epoch_loss);
        if (cfg.on_epoch) cfg.on_epoch(epoch, epoch_loss);
    }
    return log;
}

// ---------------------------------------------------------------------------
// Summary
// ---------------------------------------------------------------------------

/// Per-layer output shape and parameter count, plus the total.
inline std::string summary(const Model& m) {
    std::ostringstream os;
    os << std::left << std::setw(24) << "Layer (type)" << std::setw(22) << "Output Shape" << "Param #\n";
    Shape s = m.input_shape(1);
    std::size_t total = 0;
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
        s = output_shape(m.layers[i], s);
        const std::size_t count = parameter_count(m.layers[i]);
        total += count;
        std::ostringstream shape;
        if (s.h == 1 && s.w == 1) {
            shape << "(None, " << s.c << ')';
        } else {
            shape << "(None, " << s.h << ", " << s.w << ", " << s.c << ')';
        }
        std::string name = std::string(kind_name(m.layers[i].kind())) + "_" + std::to_string(i);
        os << std::setw(24) << name << std::setw(22) << shape.str() << count << '\n';
    }
    os << "Total params: " << total << '\n';
    return os.str();
}

}  // namespace topocnn

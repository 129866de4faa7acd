#include "classinv/network.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>

namespace classinv {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace {

Tensor column_sums(const Tensor& x) {
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    Tensor out({cols});
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = x.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) out[c] += row[c];
    }
    return out;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
    return out;
}

Tensor as_matrix(const Tensor& t, std::size_t batch) {
    if (t.rank() == 2 && t.dim(0) == batch) return t;
    return t.reshaped({batch, t.size() / batch});
}

Tensor glorot_uniform(std::vector<std::size_t> shape, std::size_t fan_in, std::size_t fan_out,
                      std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
    return t;
}

Layer make_dense(std::size_t in, std::size_t out, Activation act, std::mt19937_64& rng) {
    Layer layer;
    layer.kind = LayerKind::Dense;
    layer.activation = act;
    layer.weights = glorot_uniform({in, out}, in, out, rng);
    layer.bias = Tensor({out});
    return layer;
}

Layer make_output(std::size_t in, std::size_t classes, std::mt19937_64& rng) {
    Layer layer;
    layer.kind = LayerKind::OutputSoftmax;
    layer.weights = glorot_uniform({in, classes}, in, classes, rng);
    layer.bias = Tensor({classes});
    return layer;
}

Layer make_convpool(std::size_t c_in, std::size_t c_out, std::size_t k, std::size_t in_h,
                    std::size_t in_w, Activation act, std::mt19937_64& rng) {
    Layer layer;
    layer.kind = LayerKind::ConvPool;
    layer.activation = act;
    layer.weights = glorot_uniform({c_out, c_in, k, k}, c_in * k * k, c_out * k * k, rng);
    layer.bias = Tensor({c_out});
    layer.in_height = in_h;
    layer.in_width = in_w;
    return layer;
}

std::size_t layer_input_size(const Layer& layer) {
    if (layer.kind == LayerKind::ConvPool) {
        return layer.weights.dim(1) * layer.in_height * layer.in_width;
    }
    return layer.weights.dim(0);
}

}  // namespace

std::size_t Layer::output_size() const {
    if (kind == LayerKind::ConvPool) {
        const std::size_t k = weights.dim(2);
        const std::size_t oh = (in_height - k + 1) / 2;
        const std::size_t ow = (in_width - weights.dim(3) + 1) / 2;
        return weights.dim(0) * oh * ow;
    }
    return weights.dim(1);
}

NetworkSplit::NetworkSplit(std::vector<Layer> layers, std::size_t tap)
    : layers_(std::move(layers)), tap_(tap) {
    validate();
}

void NetworkSplit::set_tap(std::size_t tap) {
    tap_ = tap;
    validate();
}

void NetworkSplit::validate() const {
    if (layers_.empty()) throw std::invalid_argument("NetworkSplit: no layers");
    if (tap_ < 1 || tap_ >= layers_.size()) {
        throw std::invalid_argument("NetworkSplit: tap " + std::to_string(tap_) +
                                    " must satisfy 1 <= tap < " + std::to_string(layers_.size()));
    }
    for (std::size_t i = 1; i < layers_.size(); ++i) {
        if (layer_input_size(layers_[i]) != layers_[i - 1].output_size()) {
            throw std::invalid_argument("NetworkSplit: layer " + std::to_string(i) +
                                        " expects input " +
                                        std::to_string(layer_input_size(layers_[i])) +
                                        " but gets " +
                                        std::to_string(layers_[i - 1].output_size()));
        }
    }
    if (layers_.back().kind != LayerKind::OutputSoftmax) {
        throw std::invalid_argument("NetworkSplit: last layer must be the softmax output");
    }
}

std::size_t NetworkSplit::param_count() const {
    std::size_t n = 0;
    for (const Layer& layer : layers_) n += layer.param_count();
    return n;
}

std::vector<Tensor*> NetworkSplit::parameters() {
    std::vector<Tensor*> out;
    out.reserve(layers_.size() * 2);
    for (Layer& layer : layers_) {
        out.push_back(&layer.weights);
        out.push_back(&layer.bias);
    }
    return out;
}

std::vector<const Tensor*> NetworkSplit::parameters() const {
    std::vector<const Tensor*> out;
    out.reserve(layers_.size() * 2);
    for (const Layer& layer : layers_) {
        out.push_back(&layer.weights);
        out.push_back(&layer.bias);
    }
    return out;
}

std::vector<Tensor*> NetworkSplit::representation_parameters() {
    std::vector<Tensor*> out;
    out.reserve(tap_ * 2);
    for (std::size_t i = 0; i < tap_; ++i) {
        out.push_back(&layers_[i].weights);
        out.push_back(&layers_[i].bias);
    }
    return out;
}

std::size_t NetworkSplit::input_size() const { return layer_input_size(layers_.front()); }

// ---- builders -----------------------------------------------------------------

NetworkSplit build_mlp(std::uint64_t seed, std::size_t tap) {
    return build_dense_net({784, 1200, 1200, 200, 10}, Activation::Tanh, seed, tap);
}

NetworkSplit build_lenet(std::uint64_t seed, std::size_t tap) {
    std::mt19937_64 rng(seed);
    std::vector<Layer> layers;
    layers.push_back(make_convpool(1, 20, 5, 28, 28, Activation::Tanh, rng));   // 28 -> 24 -> 12
    layers.push_back(make_convpool(20, 50, 5, 12, 12, Activation::Tanh, rng));  // 12 -> 8 -> 4
    layers.push_back(make_dense(800, 500, Activation::Tanh, rng));
    layers.push_back(make_output(500, 10, rng));
    return NetworkSplit(std::move(layers), tap);
}

NetworkSplit build_dense_net(const std::vector<std::size_t>& dims, Activation activation,
                             std::uint64_t seed, std::size_t tap) {
    if (dims.size() < 3) {
        throw std::invalid_argument("build_dense_net: need at least {in, hidden, classes}");
    }
    std::mt19937_64 rng(seed);
    std::vector<Layer> layers;
    for (std::size_t i = 0; i + 2 < dims.size(); ++i) {
        layers.push_back(make_dense(dims[i], dims[i + 1], activation, rng));
    }
    layers.push_back(make_output(dims[dims.size() - 2], dims.back(), rng));
    return NetworkSplit(std::move(layers), tap);
}

// ---- forward ------------------------------------------------------------------

ForwardCache forward_cached(const NetworkSplit& net, const Tensor& batch, std::size_t depth) {
    if (depth < 1 || depth > net.depth()) {
        throw std::invalid_argument("forward: depth " + std::to_string(depth) + " out of range");
    }
    if (batch.rank() < 2) {
        throw std::invalid_argument("forward: batch must have a leading batch dimension, got " +
                                    shape_str(batch.shape()));
    }
    const std::size_t b = batch.dim(0);
    if (batch.size() / b != net.input_size()) {
        throw std::invalid_argument("forward: batch " + shape_str(batch.shape()) +
                                    " does not match input size " +
                                    std::to_string(net.input_size()));
    }

    ForwardCache cache;
    cache.depth = depth;
    cache.batch = b;
    cache.inputs.resize(depth);
    cache.activations.resize(depth);
    cache.outputs.resize(depth);
    cache.pool_masks.resize(depth);

    Tensor current = batch;
    for (std::size_t i = 0; i < depth; ++i) {
        const Layer& layer = net.layers()[i];
        switch (layer.kind) {
            case LayerKind::Dense: {
                Tensor x = as_matrix(current, b);
                Tensor z = add_row_bias(matmul(x, layer.weights), layer.bias);
                Tensor y = apply_activation(z, layer.activation);
                cache.inputs[i] = std::move(x);
                cache.activations[i] = y;
                cache.outputs[i] = y;
                current = std::move(y);
                break;
            }
            case LayerKind::ConvPool: {
                Tensor x = current.reshaped({b, layer.weights.dim(1), layer.in_height,
                                             layer.in_width});
                Tensor z = conv2d_batch(x, layer.weights, layer.bias);
                Tensor a = apply_activation(z, layer.activation);
                MaxPoolResult pooled = maxpool2x2_batch(a);
                cache.inputs[i] = std::move(x);
                cache.activations[i] = std::move(a);
                cache.pool_masks[i] = std::move(pooled.mask);
                cache.outputs[i] = pooled.output;
                current = std::move(pooled.output);
                break;
            }
            case LayerKind::OutputSoftmax: {
                Tensor x = as_matrix(current, b);
                Tensor z = add_row_bias(matmul(x, layer.weights), layer.bias);
                Tensor probs = softmax_rows(z);
                cache.inputs[i] = std::move(x);
                cache.activations[i] = probs;
                cache.outputs[i] = probs;
                cache.probs = std::move(probs);
                break;
            }
        }
    }
    return cache;
}

TapsResult forward_with_taps(const NetworkSplit& net, const Tensor& batch) {
    ForwardCache cache = forward_cached(net, batch, net.depth());
    TapsResult result;
    result.hidden.reserve(net.depth() - 1);
    for (std::size_t i = 0; i + 1 < net.depth(); ++i) {
        result.hidden.push_back(as_matrix(cache.outputs[i], cache.batch));
    }
    result.probs = std::move(cache.probs);
    return result;
}

Tensor predict(const NetworkSplit& net, const Tensor& batch) {
    return forward_cached(net, batch, net.depth()).probs;
}

// ---- backward -----------------------------------------------------------------

std::vector<const Tensor*> Gradients::flatten(std::size_t layer_count) const {
    std::vector<const Tensor*> out;
    out.reserve(layer_count * 2);
    for (std::size_t i = 0; i < layer_count; ++i) {
        out.push_back(&weights[i]);
        out.push_back(&bias[i]);
    }
    return out;
}

namespace {

// Backpropagates `grad` (gradient at the output of layer `top - 1`) down to
// layer 0, filling parameter gradients for layers [0, top).
Gradients backprop_range(const NetworkSplit& net, const ForwardCache& cache, Tensor grad,
                         std::size_t top) {
    Gradients grads;
    grads.weights.resize(net.depth());
    grads.bias.resize(net.depth());

    const std::size_t b = cache.batch;
    for (std::size_t idx = top; idx-- > 0;) {
        const Layer& layer = net.layers()[idx];
        switch (layer.kind) {
            case LayerKind::OutputSoftmax: {
                Tensor grad_logits = softmax_rows_backward(cache.probs, as_matrix(grad, b));
                grads.weights[idx] = matmul_tn(cache.inputs[idx], grad_logits);
                grads.bias[idx] = column_sums(grad_logits);
                grad = matmul_nt(grad_logits, layer.weights);
                break;
            }
            case LayerKind::Dense: {
                Tensor dact = activation_derivative_from_output(cache.activations[idx],
                                                                layer.activation);
                Tensor grad_z = hadamard(as_matrix(grad, b), dact);
                grads.weights[idx] = matmul_tn(cache.inputs[idx], grad_z);
                grads.bias[idx] = column_sums(grad_z);
                grad = matmul_nt(grad_z, layer.weights);
                break;
            }
            case LayerKind::ConvPool: {
                const Tensor& act = cache.activations[idx];
                Tensor grad_pool = grad.reshaped(cache.outputs[idx].shape());
                Tensor grad_act = maxpool2x2_backward(grad_pool, cache.pool_masks[idx],
                                                      act.shape());
                Tensor dact = activation_derivative_from_output(act, layer.activation);
                Tensor grad_z = hadamard(grad_act, dact);
                Conv2dGrads cg = conv2d_batch_backward(cache.inputs[idx], layer.weights, grad_z);
                grads.weights[idx] = std::move(cg.kernels);
                grads.bias[idx] = std::move(cg.bias);
                grad = std::move(cg.input);
                break;
            }
        }
    }
    return grads;
}

}  // namespace

Gradients backward_from_output(const NetworkSplit& net, const ForwardCache& cache,
                               const Tensor& grad_probs) {
    if (cache.depth != net.depth() || cache.probs.empty()) {
        throw std::logic_error("backward_from_output: no cached full forward pass");
    }
    if (grad_probs.size() != cache.probs.size()) {
        throw std::invalid_argument("backward_from_output: gradient " +
                                    shape_str(grad_probs.shape()) + " does not match output " +
                                    shape_str(cache.probs.shape()));
    }
    return backprop_range(net, cache, grad_probs, net.depth());
}

Gradients backward_from_tap(const NetworkSplit& net, const ForwardCache& cache,
                            const Tensor& grad_rep) {
    const std::size_t tap = net.tap();
    if (cache.depth < tap) {
        throw std::logic_error("backward_from_tap: cached forward pass does not reach the tap");
    }
    if (grad_rep.size() != cache.outputs[tap - 1].size()) {
        throw std::invalid_argument("backward_from_tap: gradient " +
                                    shape_str(grad_rep.shape()) +
                                    " does not match tap output " +
                                    shape_str(cache.outputs[tap - 1].shape()));
    }
    return backprop_range(net, cache, grad_rep, tap);
}

// ---- checkpoints ------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'C', 'I', 'N', 'V', 'N', 'E', 'T', '1'};

template <typename T>
void write_pod(std::ostream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    return value;
}

void write_shape(std::ostream& out, const std::vector<std::size_t>& shape) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
    for (std::size_t d : shape) write_pod<std::uint64_t>(out, d);
}

std::vector<std::size_t> read_shape(std::istream& in) {
    const auto rank = read_pod<std::uint32_t>(in);
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(read_pod<std::uint64_t>(in));
    return shape;
}

}  // namespace

void save_checkpoint(const NetworkSplit& net, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    out.write(kMagic, sizeof(kMagic));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(net.depth()));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(net.tap()));
    for (const Layer& layer : net.layers()) {
        write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(layer.kind));
        write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(layer.activation));
        write_pod<std::uint64_t>(out, layer.in_height);
        write_pod<std::uint64_t>(out, layer.in_width);
        write_shape(out, layer.weights.shape());
        write_shape(out, layer.bias.shape());
    }
    for (const Layer& layer : net.layers()) {
        out.write(reinterpret_cast<const char*>(layer.weights.data()),
                  static_cast<std::streamsize>(layer.weights.size() * sizeof(double)));
        out.write(reinterpret_cast<const char*>(layer.bias.data()),
                  static_cast<std::streamsize>(layer.bias.size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

NetworkSplit load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error("checkpoint: bad magic in " + path);
    }
    const auto layer_count = read_pod<std::uint32_t>(in);
    const auto tap = read_pod<std::uint32_t>(in);
    std::vector<Layer> layers(layer_count);
    for (Layer& layer : layers) {
        layer.kind = static_cast<LayerKind>(read_pod<std::uint32_t>(in));
        layer.activation = static_cast<Activation>(read_pod<std::uint32_t>(in));
        layer.in_height = static_cast<std::size_t>(read_pod<std::uint64_t>(in));
        layer.in_width = static_cast<std::size_t>(read_pod<std::uint64_t>(in));
        layer.weights = Tensor(read_shape(in));
        layer.bias = Tensor(read_shape(in));
    }
    for (Layer& layer : layers) {
        in.read(reinterpret_cast<char*>(layer.weights.data()),
                static_cast<std::streamsize>(layer.weights.size() * sizeof(double)));
        in.read(reinterpret_cast<char*>(layer.bias.data()),
                static_cast<std::streamsize>(layer.bias.size() * sizeof(double)));
    }
    if (!in) throw std::runtime_error("checkpoint: truncated file " + path);
    return NetworkSplit(std::move(layers), tap);
}

}  // namespace classinv

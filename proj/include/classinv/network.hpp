#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "classinv/tensor.hpp"

namespace classinv {

enum class LayerKind : std::uint32_t { Dense = 0, ConvPool = 1, OutputSoftmax = 2 };

/// One layer of the stack. Parameters are owned here; forward/backward never
/// mutate them (gradients are returned, not applied).
struct Layer {
    LayerKind kind = LayerKind::Dense;
    Activation activation = Activation::Tanh;  // ignored by OutputSoftmax
    Tensor weights;  // dense/output: [in x out]; conv: [C_out x C_in x kh x kw]
    Tensor bias;     // [out] or [C_out]
    // Spatial geometry, conv layers only.
    std::size_t in_height = 0;
    std::size_t in_width = 0;

    /// Flattened per-sample output dimension.
    std::size_t output_size() const;
    std::size_t param_count() const { return weights.size() + bias.size(); }
};

/// An ordered layer stack with a tap index t: layers [0, t) form the
/// representation stage, layers [t, end) the decision stage. The tap layer's
/// post-activation output is the representation the hint penalty acts on.
class NetworkSplit {
public:
    NetworkSplit() = default;
    NetworkSplit(std::vector<Layer> layers, std::size_t tap);

    const std::vector<Layer>& layers() const { return layers_; }
    std::vector<Layer>& layers() { return layers_; }
    std::size_t depth() const { return layers_.size(); }

    std::size_t tap() const { return tap_; }
    void set_tap(std::size_t tap);

    std::size_t param_count() const;
    /// Parameter tensors in declaration order (weights, bias per layer).
    std::vector<Tensor*> parameters();
    std::vector<const Tensor*> parameters() const;
    /// The subset owned by the representation stage (layers below the tap).
    std::vector<Tensor*> representation_parameters();

    std::size_t representation_dim() const { return layers_[tap_ - 1].output_size(); }
    std::size_t input_size() const;
    std::size_t output_classes() const { return layers_.back().output_size(); }

private:
    void validate() const;

    std::vector<Layer> layers_;
    std::size_t tap_ = 1;
};

// ---- builders -----------------------------------------------------------------

/// 784 -> 1200 -> 1200 -> 200 dense stack with bounded activation, softmax
/// output over 10 classes. Tap defaults to the last hidden layer.
NetworkSplit build_mlp(std::uint64_t seed, std::size_t tap = 3);

/// conv 1->20 5x5 + pool, conv 20->50 5x5 + pool, dense 800->500, softmax
/// 500->10, for 28x28 single-channel input. Tap defaults to the dense layer.
NetworkSplit build_lenet(std::uint64_t seed, std::size_t tap = 3);

/// Generic dense stack for small problems: dims = {in, hidden..., classes}.
NetworkSplit build_dense_net(const std::vector<std::size_t>& dims, Activation activation,
                             std::uint64_t seed, std::size_t tap);

// ---- forward / backward --------------------------------------------------------

struct ForwardCache {
    std::size_t depth = 0;            // number of layers that ran
    std::vector<Tensor> inputs;       // per-layer input, as reshaped for the layer
    std::vector<Tensor> activations;  // per-layer post-activation output
                                      // (conv: pre-pool activation)
    std::vector<Tensor> outputs;      // per-layer final output (conv: post-pool)
    std::vector<std::vector<std::uint32_t>> pool_masks;  // conv layers only
    Tensor probs;                     // softmax output when the stack ran to the end
    std::size_t batch = 0;
};

struct TapsResult {
    std::vector<Tensor> hidden;  // [B x V_k] per hidden layer, flattened
    Tensor probs;                // [B x classes]
};

/// Runs the first `depth` layers (layers.size() = full pass) caching what the
/// backward pass needs. Batch may be [B x V] or [B x C x H x W].
ForwardCache forward_cached(const NetworkSplit& net, const Tensor& batch, std::size_t depth);

/// Full forward returning every hidden layer's post-activation output plus the
/// softmax probabilities. Read-only; no training state is touched.
TapsResult forward_with_taps(const NetworkSplit& net, const Tensor& batch);

/// Probabilities only.
Tensor predict(const NetworkSplit& net, const Tensor& batch);

/// Per-layer parameter gradients. Layers outside the covered range hold empty
/// tensors.
struct Gradients {
    std::vector<Tensor> weights;
    std::vector<Tensor> bias;

    /// Tensors in the same declaration order as NetworkSplit::parameters(),
    /// restricted to the first `layer_count` layers.
    std::vector<const Tensor*> flatten(std::size_t layer_count) const;
};

/// Backward from a gradient injected at the softmax output; covers every
/// parameter. Requires a full cached forward for the same batch.
Gradients backward_from_output(const NetworkSplit& net, const ForwardCache& cache,
                               const Tensor& grad_probs);

/// Backward from a gradient injected at the tap layer's output; covers only
/// the representation-stage parameters. Requires a cached forward of depth
/// >= tap for the same batch.
Gradients backward_from_tap(const NetworkSplit& net, const ForwardCache& cache,
                            const Tensor& grad_rep);

// ---- checkpoints ------------------------------------------------------------------

/// Self-describing binary container: header with layer descriptors (kind,
/// shapes, activation, tap), then parameter tensors in declaration order as
/// little-endian float64.
void save_checkpoint(const NetworkSplit& net, const std::string& path);
NetworkSplit load_checkpoint(const std::string& path);

}  // namespace classinv

#ifndef FITPATH_MODEL_HPP
#define FITPATH_MODEL_HPP

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "fitpath/compression.hpp"
#include "fitpath/tape.hpp"
#include "fitpath/tensor.hpp"

namespace fitpath {

enum class LayerKind { Conv2d, Dense, Relu, MaxPool, Flatten };

const char* layer_kind_name(LayerKind k);
LayerKind layer_kind_from_name(const std::string& s);

struct LayerSpec {
    std::string name;
    LayerKind kind = LayerKind::Relu;
    // conv2d
    int in_ch = 0, out_ch = 0, kernel = 0, stride = 1, pad = 0;
    // dense
    std::int64_t in_features = 0, out_features = 0;
    // maxpool
    int pool = 2, pool_stride = 2;
    // true iff the layer carries a weight tensor; biases are never
    // quantized or pruned.
    bool quantizable = false;
    bool prunable = false;
};

// Per-layer knobs for a forward pass under a compression config. act_scale
// is the frozen calibration maximum of the layer's *input* tensor; the input
// of the first quantizable layer is the network input, which is signed, so
// it uses the symmetric grid.
struct LayerRuntime {
    int w_bits = 32;
    int a_bits = 32;
    double act_scale = -1.0;  // < 0 means "not calibrated"
    std::shared_ptr<const KeepMask> mask;  // null = dense
};

struct RuntimeView {
    std::map<std::string, LayerRuntime> layers;
    // When set, quantizable layers use these tensors as their weight leaves
    // (already masked+quantized) instead of latent weights + fake-quant
    // nodes. Used by the Fisher estimator, which differentiates at the
    // effective parameters.
    const std::map<std::string, Tensor>* weight_override = nullptr;
};

// Node ids recorded during forward for gradient taps.
struct ForwardTaps {
    int input = -1;
    std::map<std::string, int> weights;  // quantizable layer -> weight leaf / override leaf
    std::map<std::string, int> biases;
    // the tensor feeding each quantizable layer, recorded *before* its
    // activation fake-quant node
    std::map<std::string, int> pre_quant_inputs;
};

// Ordered layer graph plus named parameters. Layers with weights own
// "<name>.weight" and "<name>.bias" entries in the parameter map.
class Model {
public:
    Model() = default;
    Model(std::vector<LayerSpec> layers, Shape input_shape);

    const std::vector<LayerSpec>& layers() const { return layers_; }
    const Shape& input_shape() const { return input_shape_; }  // [C,H,W] or [F]

    bool has_param(const std::string& name) const { return params_.count(name) > 0; }
    const Tensor& param(const std::string& name) const;
    Tensor& param(const std::string& name);
    const std::map<std::string, Tensor>& params() const { return params_; }
    void set_param(const std::string& name, Tensor value);

    std::vector<std::string> quantizable_layers() const;
    std::vector<std::string> prunable_layers() const;
    std::int64_t prunable_weight_count() const;

    // MACs per weighted layer: conv = out_h*out_w*c_out*c_in*k^2,
    // dense = in_features*out_features.
    const std::map<std::string, std::int64_t>& macs() const { return macs_; }

    // Records the forward graph on the tape and returns the logits node id.
    // view == nullptr runs the raw network (identity config, bit-exact).
    int forward(Tape& tape, const Tensor& input, const RuntimeView* view = nullptr,
                ForwardTaps* taps = nullptr) const;

    // Convenience: mean NLL loss over the batch plus gradients for every
    // trainable parameter. The tape is consumed.
    struct LossGrads {
        double loss = 0.0;
        double accuracy = 0.0;  // top-1 on this batch
        std::map<std::string, Tensor> grads;  // "<layer>.weight" / "<layer>.bias"
    };
    LossGrads loss_and_grads(const Tensor& batch_x, const std::vector<int>& batch_y,
                             const RuntimeView* view = nullptr) const;

    // One gradient map per sample, computed by micro-batching over the same
    // tape machinery. Element i equals loss_and_grads on sample i alone.
    std::vector<std::map<std::string, Tensor>> per_sample_grads(
        const Tensor& batch_x, const std::vector<int>& batch_y,
        const RuntimeView* view = nullptr) const;

    // He-uniform init of all weights, zero biases; deterministic per seed.
    void init_params(std::uint64_t seed);

    // Extra key/value metadata persisted in checkpoints (e.g. frozen
    // activation scales after fine-tuning).
    std::map<std::string, double>& meta() { return meta_; }
    const std::map<std::string, double>& meta() const { return meta_; }

private:
    void validate_and_register();

    std::vector<LayerSpec> layers_;
    Shape input_shape_;
    std::map<std::string, Tensor> params_;
    std::map<std::string, std::int64_t> macs_;
    std::map<std::string, double> meta_;
};

// LeNet-style CNN for 28x28x1 inputs, 10 classes: two conv blocks and two
// dense layers. Channel widths are sized so the full-precision cost under
// the BOPs model lands on the 4.37 GBOP reference budget.
Model build_lenet(std::uint64_t seed = 0x1e7e7);

// Plain ReLU MLP; widths[0] is the input dimension. Throws on non-positive
// widths or fewer than two entries.
Model build_mlp(const std::vector<std::int64_t>& widths, std::uint64_t seed = 0x317);

// Extracts one sample [1,...] from a batch tensor [N,...].
Tensor slice_sample(const Tensor& batch, std::int64_t index);

// Builds a RuntimeView for a config: latent weights + fake-quant nodes, with
// activation scales from `act_scales` (layer -> calibrated max); pass an
// empty map when activation quantization is disabled or all bits are 32.
RuntimeView make_runtime_view(const Model& model, const CompressionConfig& config,
                              const std::map<std::string, double>& act_scales);

}  // namespace fitpath

#endif

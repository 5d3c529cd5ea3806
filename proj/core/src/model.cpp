#include "fitpath/model.hpp"

#include <cassert>
#include <cmath>
#include <cstring>

#include "fitpath/errors.hpp"

namespace fitpath {

const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Conv2d: return "conv2d";
        case LayerKind::Dense: return "dense";
        case LayerKind::Relu: return "relu";
        case LayerKind::MaxPool: return "maxpool";
        case LayerKind::Flatten: return "flatten";
    }
    return "?";
}

LayerKind layer_kind_from_name(const std::string& s) {
    if (s == "conv2d") return LayerKind::Conv2d;
    if (s == "dense") return LayerKind::Dense;
    if (s == "relu") return LayerKind::Relu;
    if (s == "maxpool") return LayerKind::MaxPool;
    if (s == "flatten") return LayerKind::Flatten;
    throw ConfigError("unknown layer kind '" + s + "'");
}

Model::Model(std::vector<LayerSpec> layers, Shape input_shape)
    : layers_(std::move(layers)), input_shape_(std::move(input_shape)) {
    validate_and_register();
}

void Model::validate_and_register() {
    Shape cur = input_shape_;
    for (auto& spec : layers_) {
        switch (spec.kind) {
            case LayerKind::Conv2d: {
                if (cur.size() != 3 || cur[0] != spec.in_ch) {
                    throw ConfigError("model: conv layer '" + spec.name + "' expects " +
                                      std::to_string(spec.in_ch) + " channels, input is " +
                                      shape_str(cur));
                }
                const std::int64_t oh = (cur[1] + 2 * spec.pad - spec.kernel) / spec.stride + 1;
                const std::int64_t ow = (cur[2] + 2 * spec.pad - spec.kernel) / spec.stride + 1;
                if (oh <= 0 || ow <= 0) {
                    throw ConfigError("model: conv layer '" + spec.name + "' collapses input " +
                                      shape_str(cur));
                }
                macs_[spec.name] = oh * ow * spec.out_ch * spec.in_ch *
                                   static_cast<std::int64_t>(spec.kernel) * spec.kernel;
                params_.emplace(spec.name + ".weight",
                                Tensor({spec.out_ch, spec.in_ch, spec.kernel, spec.kernel}));
                params_.emplace(spec.name + ".bias", Tensor({spec.out_ch}));
                spec.quantizable = true;
                cur = {spec.out_ch, oh, ow};
                break;
            }
            case LayerKind::Dense: {
                if (spec.in_features <= 0 || spec.out_features <= 0) {
                    throw ConfigError("model: dense layer '" + spec.name +
                                      "' has non-positive width");
                }
                const std::int64_t flat = shape_numel(cur);
                if (cur.size() != 1 || flat != spec.in_features) {
                    throw ConfigError("model: dense layer '" + spec.name + "' expects " +
                                      std::to_string(spec.in_features) + " features, input is " +
                                      shape_str(cur));
                }
                macs_[spec.name] = spec.in_features * spec.out_features;
                params_.emplace(spec.name + ".weight", Tensor({spec.in_features, spec.out_features}));
                params_.emplace(spec.name + ".bias", Tensor({spec.out_features}));
                spec.quantizable = true;
                cur = {spec.out_features};
                break;
            }
            case LayerKind::Relu:
                break;
            case LayerKind::MaxPool: {
                if (cur.size() != 3) {
                    throw ConfigError("model: maxpool layer '" + spec.name +
                                      "' needs a spatial input, got " + shape_str(cur));
                }
                cur = {cur[0], (cur[1] - spec.pool) / spec.pool_stride + 1,
                       (cur[2] - spec.pool) / spec.pool_stride + 1};
                break;
            }
            case LayerKind::Flatten:
                cur = {shape_numel(cur)};
                break;
        }
    }
}

const Tensor& Model::param(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("model: no parameter '" + name + "'");
    return it->second;
}

Tensor& Model::param(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("model: no parameter '" + name + "'");
    return it->second;
}

void Model::set_param(const std::string& name, Tensor value) {
    Tensor& dst = param(name);
    if (!dst.same_shape(value)) {
        throw ShapeError("model: parameter '" + name + "' is " + shape_str(dst.shape()) +
                         ", got " + shape_str(value.shape()));
    }
    dst = std::move(value);
}

std::vector<std::string> Model::quantizable_layers() const {
    std::vector<std::string> out;
    for (const auto& l : layers_)
        if (l.quantizable) out.push_back(l.name);
    return out;
}

std::vector<std::string> Model::prunable_layers() const {
    std::vector<std::string> out;
    for (const auto& l : layers_)
        if (l.prunable) out.push_back(l.name);
    return out;
}

std::int64_t Model::prunable_weight_count() const {
    std::int64_t n = 0;
    for (const auto& name : prunable_layers()) n += param(name + ".weight").numel();
    return n;
}

int Model::forward(Tape& tape, const Tensor& input, const RuntimeView* view,
                   ForwardTaps* taps) const {
    Shape expect = input_shape_;
    expect.insert(expect.begin(), input.extent(0));
    if (input.shape() != expect) {
        throw ShapeError("forward: input " + shape_str(input.shape()) + ", model expects " +
                         shape_str(expect));
    }
    int cur = tape.leaf(input, /*requires_grad=*/taps != nullptr);
    if (taps) taps->input = cur;

    bool first_quantizable = true;
    for (const auto& spec : layers_) {
        const LayerRuntime* rt = nullptr;
        if (view && spec.quantizable) {
            auto it = view->layers.find(spec.name);
            if (it == view->layers.end()) {
                throw ConfigError("forward: runtime config is missing layer '" + spec.name + "'");
            }
            rt = &it->second;
        }
        if (spec.quantizable) {
            if (taps) taps->pre_quant_inputs[spec.name] = cur;
            if (rt && rt->a_bits < 32) {
                if (rt->act_scale < 0.0) {
                    throw ConfigError("forward: layer '" + spec.name +
                                      "' has a_bits < 32 but no calibrated activation scale");
                }
                cur = tape.fake_quant_acts(cur, rt->a_bits, rt->act_scale, first_quantizable);
            }
            int w;
            if (view && view->weight_override) {
                auto it = view->weight_override->find(spec.name);
                if (it == view->weight_override->end()) {
                    throw ConfigError("forward: weight override missing layer '" + spec.name + "'");
                }
                w = tape.leaf(it->second, true);
            } else {
                w = tape.leaf(param(spec.name + ".weight"), true);
            }
            if (taps) taps->weights[spec.name] = w;
            int w_eff = w;
            if (rt && !(view && view->weight_override) && (rt->w_bits < 32 || rt->mask)) {
                w_eff = tape.fake_quant_weights(w, rt->w_bits, rt->mask);
            }
            const int b = tape.leaf(param(spec.name + ".bias"), true);
            if (taps) taps->biases[spec.name] = b;
            if (spec.kind == LayerKind::Conv2d) {
                cur = tape.conv2d(cur, w_eff, spec.stride, spec.pad);
            } else {
                cur = tape.matmul(cur, w_eff);
            }
            cur = tape.bias_add(cur, b);
            first_quantizable = false;
        } else if (spec.kind == LayerKind::Relu) {
            cur = tape.relu(cur);
        } else if (spec.kind == LayerKind::MaxPool) {
            cur = tape.maxpool2d(cur, spec.pool, spec.pool_stride);
        } else if (spec.kind == LayerKind::Flatten) {
            cur = tape.flatten(cur);
        }
    }
    return cur;
}

Model::LossGrads Model::loss_and_grads(const Tensor& batch_x, const std::vector<int>& batch_y,
                                       const RuntimeView* view) const {
    Tape tape;
    ForwardTaps taps;
    const int logits = forward(tape, batch_x, view, &taps);
    const int loss = tape.softmax_xent(logits, batch_y);

    std::vector<int> wrt;
    std::vector<std::string> names;
    for (const auto& [name, id] : taps.weights) {
        wrt.push_back(id);
        names.push_back(name + ".weight");
    }
    for (const auto& [name, id] : taps.biases) {
        wrt.push_back(id);
        names.push_back(name + ".bias");
    }
    LossGrads out;
    out.loss = tape.value(loss)[0];
    {
        const Tensor& lg = tape.value(logits);
        const auto n = lg.extent(0), k = lg.extent(1);
        std::int64_t correct = 0;
        for (std::int64_t i = 0; i < n; ++i) {
            std::int64_t best = 0;
            for (std::int64_t c = 1; c < k; ++c)
                if (lg[i * k + c] > lg[i * k + best]) best = c;
            correct += best == batch_y[static_cast<size_t>(i)];
        }
        out.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    }
    auto grads = tape.backward(loss, wrt);
    for (size_t i = 0; i < names.size(); ++i) out.grads[names[i]] = std::move(grads[i]);
    return out;
}

std::vector<std::map<std::string, Tensor>> Model::per_sample_grads(
    const Tensor& batch_x, const std::vector<int>& batch_y, const RuntimeView* view) const {
    const std::int64_t n = batch_x.extent(0);
    if (n != static_cast<std::int64_t>(batch_y.size())) {
        throw ShapeError("per_sample_grads: " + std::to_string(n) + " samples vs " +
                         std::to_string(batch_y.size()) + " labels");
    }
    std::vector<std::map<std::string, Tensor>> out;
    out.reserve(static_cast<size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        out.push_back(loss_and_grads(slice_sample(batch_x, i),
                                     {batch_y[static_cast<size_t>(i)]}, view)
                          .grads);
    }
    return out;
}

void Model::init_params(std::uint64_t seed) {
    std::uint64_t stream = 0;
    for (const auto& spec : layers_) {
        if (!spec.quantizable) continue;
        Rng rng = make_rng(derive_seed(seed, stream++));
        const double fan_in = spec.kind == LayerKind::Conv2d
                                  ? static_cast<double>(spec.in_ch) * spec.kernel * spec.kernel
                                  : static_cast<double>(spec.in_features);
        const double limit = std::sqrt(6.0 / fan_in);
        Tensor& w = param(spec.name + ".weight");
        std::uniform_real_distribution<double> dist(-limit, limit);
        for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = dist(rng);
        Tensor& b = param(spec.name + ".bias");
        for (std::int64_t i = 0; i < b.numel(); ++i) b[i] = 0.0;
    }
}

Model build_lenet(std::uint64_t seed) {
    std::vector<LayerSpec> layers;
    LayerSpec conv1;
    conv1.name = "conv1"; conv1.kind = LayerKind::Conv2d;
    conv1.in_ch = 1; conv1.out_ch = 20; conv1.kernel = 5; conv1.stride = 1; conv1.pad = 2;
    conv1.prunable = true;
    LayerSpec relu1; relu1.name = "relu1"; relu1.kind = LayerKind::Relu;
    LayerSpec pool1; pool1.name = "pool1"; pool1.kind = LayerKind::MaxPool;
    LayerSpec conv2;
    conv2.name = "conv2"; conv2.kind = LayerKind::Conv2d;
    conv2.in_ch = 20; conv2.out_ch = 64; conv2.kernel = 5; conv2.stride = 1; conv2.pad = 0;
    conv2.prunable = true;
    LayerSpec relu2; relu2.name = "relu2"; relu2.kind = LayerKind::Relu;
    LayerSpec pool2; pool2.name = "pool2"; pool2.kind = LayerKind::MaxPool;
    LayerSpec flat; flat.name = "flat"; flat.kind = LayerKind::Flatten;
    LayerSpec fc1;
    fc1.name = "fc1"; fc1.kind = LayerKind::Dense;
    fc1.in_features = 64 * 5 * 5; fc1.out_features = 500; fc1.prunable = true;
    LayerSpec relu3; relu3.name = "relu3"; relu3.kind = LayerKind::Relu;
    LayerSpec fc2;
    fc2.name = "fc2"; fc2.kind = LayerKind::Dense;
    fc2.in_features = 500; fc2.out_features = 10; fc2.prunable = true;

    Model m({conv1, relu1, pool1, conv2, relu2, pool2, flat, fc1, relu3, fc2}, {1, 28, 28});
    m.init_params(seed);
    return m;
}

Model build_mlp(const std::vector<std::int64_t>& widths, std::uint64_t seed) {
    if (widths.size() < 2) throw ConfigError("build_mlp: need at least input and output widths");
    for (auto w : widths) {
        if (w <= 0) throw ConfigError("build_mlp: non-positive width " + std::to_string(w));
    }
    std::vector<LayerSpec> layers;
    for (size_t i = 1; i < widths.size(); ++i) {
        LayerSpec fc;
        fc.name = "fc" + std::to_string(i);
        fc.kind = LayerKind::Dense;
        fc.in_features = widths[i - 1];
        fc.out_features = widths[i];
        fc.prunable = true;
        layers.push_back(fc);
        if (i + 1 < widths.size()) {
            LayerSpec r;
            r.name = "relu" + std::to_string(i);
            r.kind = LayerKind::Relu;
            layers.push_back(r);
        }
    }
    Model m(std::move(layers), {widths[0]});
    m.init_params(seed);
    return m;
}

Tensor slice_sample(const Tensor& batch, std::int64_t index) {
    assert(index >= 0 && index < batch.extent(0));
    Shape s = batch.shape();
    s[0] = 1;
    const std::int64_t stride = batch.numel() / batch.extent(0);
    std::vector<double> data(static_cast<size_t>(stride));
    std::memcpy(data.data(), batch.data().data() + index * stride,
                sizeof(double) * static_cast<size_t>(stride));
    return Tensor(std::move(s), std::move(data));
}

RuntimeView make_runtime_view(const Model& model, const CompressionConfig& config,
                              const std::map<std::string, double>& act_scales) {
    RuntimeView view;
    for (const auto& name : model.quantizable_layers()) {
        LayerRuntime rt;
        rt.w_bits = config.w_bits(name);
        rt.a_bits = config.a_bits(name);
        auto it = act_scales.find(name);
        rt.act_scale = it == act_scales.end() ? -1.0 : it->second;
        if (config.mask.has_layer(name) && config.mask.layer_pruned(name) > 0) {
            rt.mask = config.mask.layer_shared(name);
        }
        view.layers[name] = std::move(rt);
    }
    return view;
}

}  // namespace fitpath

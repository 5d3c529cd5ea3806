#include "fitpath/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "fitpath/errors.hpp"
#include "fitpath/tape.hpp"

namespace fitpath {

OptimizerKind optimizer_from_name(const std::string& s) {
    if (s == "adam") return OptimizerKind::Adam;
    if (s == "sgd") return OptimizerKind::Sgd;
    throw ConfigError("train: unknown optimizer '" + s + "'");
}

LrSchedule schedule_from_name(const std::string& s) {
    if (s == "cosine") return LrSchedule::Cosine;
    if (s == "none") return LrSchedule::None;
    throw ConfigError("train: unknown lr schedule '" + s + "'");
}

void TrainSpec::validate() const {
    if (!(lr > 0.0)) throw ConfigError("train: learning rate must be positive");
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (batch < 1) throw ConfigError("train: batch size must be >= 1");
    if (weight_decay < 0.0) throw ConfigError("train: negative weight decay");
}

namespace {

struct AdamState {
    std::map<std::string, Tensor> m, v;
    std::int64_t t = 0;
};

double lr_at(const TrainSpec& spec, int epoch) {
    if (spec.schedule == LrSchedule::None) return spec.lr;
    const double progress = static_cast<double>(epoch) / static_cast<double>(spec.epochs);
    return spec.lr * 0.5 * (1.0 + std::cos(progress * 3.14159265358979323846));
}

void apply_update(Model& model, const std::map<std::string, Tensor>& grads, AdamState& adam,
                  const TrainSpec& spec, double lr) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    if (spec.optimizer == OptimizerKind::Adam) ++adam.t;
    for (const auto& [name, g] : grads) {
        Tensor& p = model.param(name);
        if (spec.optimizer == OptimizerKind::Sgd) {
            for (std::int64_t i = 0; i < p.numel(); ++i) {
                const double gi = g[i] + spec.weight_decay * p[i];
                p[i] -= lr * gi;
            }
            continue;
        }
        auto mit = adam.m.find(name);
        if (mit == adam.m.end()) {
            mit = adam.m.emplace(name, Tensor(p.shape())).first;
            adam.v.emplace(name, Tensor(p.shape()));
        }
        Tensor& m = mit->second;
        Tensor& v = adam.v.at(name);
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(adam.t));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(adam.t));
        for (std::int64_t i = 0; i < p.numel(); ++i) {
            const double gi = g[i] + spec.weight_decay * p[i];
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
        }
    }
}

TrainResult run_training(Model& model, const Dataset& train, const Dataset& test,
                         const TrainSpec& spec, const RuntimeView* view) {
    spec.validate();
    TrainResult result;
    AdamState adam;
    for (int epoch = 0; epoch < spec.epochs; ++epoch) {
        const double lr = lr_at(spec, epoch);
        Batches batches(train, spec.batch, derive_seed(spec.seed, static_cast<std::uint64_t>(epoch)));
        double loss_sum = 0.0, acc_sum = 0.0;
        for (std::int64_t i = 0; i < batches.count(); ++i) {
            Batch b = batches.get(i);
            auto lg = model.loss_and_grads(b.x, b.y, view);
            if (!std::isfinite(lg.loss)) {
                throw DivergenceError("training diverged: non-finite loss at epoch " +
                                      std::to_string(epoch) + ", batch " + std::to_string(i));
            }
            loss_sum += lg.loss;
            acc_sum += lg.accuracy;
            apply_update(model, lg.grads, adam, spec, lr);
        }
        const double nb = static_cast<double>(batches.count());
        result.history.push_back({epoch, "train", acc_sum / nb, loss_sum / nb});
        auto [test_acc, test_loss] = evaluate_with_loss(model, view, test);
        result.history.push_back({epoch, "test", test_acc, test_loss});
        result.final_test_accuracy = test_acc;
    }
    return result;
}

}  // namespace

TrainResult train_baseline(Model& model, const Dataset& train, const Dataset& test,
                           const TrainSpec& spec) {
    return run_training(model, train, test, spec, nullptr);
}

std::map<std::string, double> calibrate_act_scales(const Model& model,
                                                   const CompressionConfig& config,
                                                   const Dataset& train,
                                                   std::int64_t calib_samples, std::uint64_t seed,
                                                   double percentile) {
    Dataset calib = calibration_subset(train, calib_samples, seed);
    auto applied = apply_config(model, config);
    RuntimeView view;
    for (const auto& name : model.quantizable_layers()) {
        LayerRuntime rt;
        rt.a_bits = 32;  // scales measured on the unquantized stream
        view.layers[name] = rt;
    }
    view.weight_override = &applied.effective;

    std::map<std::string, std::vector<double>> mags;
    constexpr std::int64_t kChunk = 128;
    std::int64_t done = 0;
    const std::int64_t stride = calib.images.numel() / calib.size();
    while (done < calib.size()) {
        const std::int64_t take = std::min(kChunk, calib.size() - done);
        Shape s = calib.images.shape();
        s[0] = take;
        Tensor chunk(s);
        std::copy_n(calib.images.data().data() + done * stride, take * stride,
                    chunk.data().data());
        Tape tape;
        ForwardTaps taps;
        model.forward(tape, chunk, &view, &taps);
        for (const auto& [name, id] : taps.pre_quant_inputs) {
            const Tensor& v = tape.value(id);
            auto& dst = mags[name];
            dst.reserve(dst.size() + static_cast<size_t>(v.numel()));
            for (std::int64_t i = 0; i < v.numel(); ++i) dst.push_back(std::fabs(v[i]));
        }
        done += take;
    }
    std::map<std::string, double> scales;
    for (auto& [name, mag] : mags) {
        const size_t idx =
            static_cast<size_t>(percentile * static_cast<double>(mag.size() - 1));
        std::nth_element(mag.begin(), mag.begin() + static_cast<std::ptrdiff_t>(idx), mag.end());
        scales[name] = mag[idx];
    }
    return scales;
}

TrainResult finetune(Model& model, const CompressionConfig& config, const Dataset& train,
                     const Dataset& test, const TrainSpec& spec,
                     const std::map<std::string, double>& act_scales) {
    // Pin masked latents to zero; STE gives them zero gradient, so they stay
    // exactly zero through every optimizer step.
    for (const auto& name : model.quantizable_layers()) {
        if (!config.mask.has_layer(name)) continue;
        const KeepMask& keep = config.mask.layer(name);
        Tensor& w = model.param(name + ".weight");
        for (std::int64_t i = 0; i < w.numel(); ++i) {
            if (!keep[static_cast<size_t>(i)]) w[i] = 0.0;
        }
    }
    RuntimeView view = make_runtime_view(model, config, act_scales);
    return run_training(model, train, test, spec, &view);
}

std::pair<double, double> evaluate_with_loss(const Model& model, const RuntimeView* view,
                                             const Dataset& data) {
    constexpr std::int64_t kChunk = 256;
    const std::int64_t n = data.size();
    const std::int64_t stride = data.images.numel() / n;
    std::int64_t correct = 0;
    double loss_sum = 0.0;
    std::int64_t done = 0;
    while (done < n) {
        const std::int64_t take = std::min(kChunk, n - done);
        Shape s = data.images.shape();
        s[0] = take;
        Tensor chunk(s);
        std::copy_n(data.images.data().data() + done * stride, take * stride,
                    chunk.data().data());
        std::vector<int> labels(data.labels.begin() + done, data.labels.begin() + done + take);
        Tape tape;
        const int logits = model.forward(tape, chunk, view);
        const int loss = tape.softmax_xent(logits, labels);
        loss_sum += tape.value(loss)[0] * static_cast<double>(take);
        const Tensor& lg = tape.value(logits);
        const auto k = lg.extent(1);
        for (std::int64_t i = 0; i < take; ++i) {
            std::int64_t best = 0;
            for (std::int64_t c = 1; c < k; ++c)
                if (lg[i * k + c] > lg[i * k + best]) best = c;
            correct += best == labels[static_cast<size_t>(i)];
        }
        done += take;
    }
    return {static_cast<double>(correct) / static_cast<double>(n),
            loss_sum / static_cast<double>(n)};
}

double evaluate(const Model& model, const CompressionConfig& config,
                const std::map<std::string, double>& act_scales, const Dataset& data) {
    RuntimeView view = make_runtime_view(model, config, act_scales);
    return evaluate_with_loss(model, &view, data).first;
}

void write_history_csv(const std::vector<HistoryRow>& history, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("history: cannot write '" + path + "'");
    f << "epoch,split,accuracy,loss\n";
    for (const auto& row : history) {
        f << row.epoch << "," << row.split << "," << row.accuracy << "," << row.loss << "\n";
    }
}

}  // namespace fitpath

#include "fitpath/fisher.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "fitpath/errors.hpp"

namespace fitpath {

using ordered_json = nlohmann::ordered_json;

FisherEstimate estimate_fisher(const Model& model, const CompressionConfig& config,
                               const Dataset& calib, const FisherOptions& options) {
    if (calib.size() < 1) throw DataError("estimate_fisher: empty calibration batch");

    auto applied = apply_config(model, config);
    RuntimeView view = make_runtime_view(model, config, options.act_scales);
    view.weight_override = &applied.effective;
    if (!options.activation_terms) {
        // Estimation still runs the quantized forward, but no taps are read
        // beyond the weights, so nothing else changes.
    }

    FisherEstimate est;
    est.n_samples = calib.size();
    const auto qlayers = model.quantizable_layers();
    for (const auto& name : qlayers) {
        est.per_param[name] = Tensor(applied.effective.at(name).shape());
        est.act_trace[name] = 0.0;
    }

    // Micro-batching: one tape per sample, accumulate squared gradients.
    std::map<std::string, double> act_acc;
    std::map<std::string, std::int64_t> act_units;
    for (std::int64_t i = 0; i < calib.size(); ++i) {
        Tape tape;
        ForwardTaps taps;
        const Tensor x = slice_sample(calib.images, i);
        const int logits = model.forward(tape, x, &view, &taps);
        const int loss = tape.softmax_xent(logits, {calib.labels[static_cast<size_t>(i)]});

        std::vector<int> wrt;
        for (const auto& name : qlayers) wrt.push_back(taps.weights.at(name));
        if (options.activation_terms) {
            for (const auto& name : qlayers) wrt.push_back(taps.pre_quant_inputs.at(name));
        }
        auto grads = tape.backward(loss, wrt);

        for (size_t l = 0; l < qlayers.size(); ++l) {
            Tensor& acc = est.per_param[qlayers[l]];
            const Tensor& g = grads[l];
            for (std::int64_t k = 0; k < g.numel(); ++k) acc[k] += g[k] * g[k];
        }
        if (options.activation_terms) {
            for (size_t l = 0; l < qlayers.size(); ++l) {
                const Tensor& g = grads[qlayers.size() + l];
                // per-sample tensors are [1,...]; spatial dims are the last
                // two of a rank-4 activation
                double scale = 1.0;
                std::int64_t units = g.numel();
                if (g.rank() == 4) {
                    const auto hw = g.extent(2) * g.extent(3);
                    scale = 1.0 / static_cast<double>(hw);
                    units = g.extent(1);
                }
                double s = 0.0;
                for (std::int64_t k = 0; k < g.numel(); ++k) s += g[k] * g[k];
                act_acc[qlayers[l]] += s * scale;
                act_units[qlayers[l]] = units;
            }
        }
    }

    const double inv_n = 1.0 / static_cast<double>(est.n_samples);
    for (const auto& name : qlayers) {
        Tensor& F = est.per_param[name];
        const bool has_mask = config.mask.has_layer(name);
        const KeepMask* mask = has_mask ? &config.mask.layer(name) : nullptr;
        std::int64_t active = 0;
        double trace = 0.0;
        for (std::int64_t k = 0; k < F.numel(); ++k) {
            if (mask && !(*mask)[static_cast<size_t>(k)]) {
                F[k] = 0.0;  // masked coords are not parameters of the model
                continue;
            }
            F[k] *= inv_n;
            trace += F[k];
            ++active;
        }
        est.weight_trace[name] = trace;
        est.n_weights[name] = active;
        if (options.activation_terms) {
            est.act_trace[name] = act_acc[name] * inv_n;
            est.n_act_units[name] = act_units[name];
        } else {
            est.act_trace[name] = 0.0;
            est.n_act_units[name] = 0;
        }
    }
    return est;
}

double fit_from_norms(const FisherEstimate& fisher,
                      const std::map<std::string, double>& delta_theta_sq,
                      const std::map<std::string, double>* delta_act_sq) {
    double total = 0.0;
    for (const auto& [name, dsq] : delta_theta_sq) {
        auto tr = fisher.weight_trace.find(name);
        auto n = fisher.n_weights.find(name);
        if (tr == fisher.weight_trace.end() || n == fisher.n_weights.end()) {
            throw ConfigError("fit: estimate has no layer '" + name + "'");
        }
        if (n->second > 0) {
            total += tr->second * dsq / static_cast<double>(n->second);
        }
    }
    if (delta_act_sq) {
        for (const auto& [name, dsq] : *delta_act_sq) {
            auto tr = fisher.act_trace.find(name);
            auto n = fisher.n_act_units.find(name);
            if (tr == fisher.act_trace.end() || n == fisher.n_act_units.end()) {
                throw ConfigError("fit: estimate has no activation entry for layer '" + name + "'");
            }
            if (n->second > 0) {
                total += tr->second * dsq / static_cast<double>(n->second);
            }
        }
    }
    return total;
}

double fit(const FisherEstimate& fisher, const std::map<std::string, Tensor>& delta_theta,
           const std::map<std::string, double>* delta_act_sq) {
    std::map<std::string, double> norms;
    for (const auto& [name, d] : delta_theta) norms[name] = sq_norm(d);
    return fit_from_norms(fisher, norms, delta_act_sq);
}

std::vector<SaliencyEntry> prune_saliency(const FisherEstimate& fisher,
                                          const std::map<std::string, Tensor>& effective,
                                          const PruneMask& mask) {
    std::vector<SaliencyEntry> out;
    for (const auto& [name, theta] : effective) {
        if (!mask.has_layer(name)) continue;
        auto fit_it = fisher.per_param.find(name);
        if (fit_it == fisher.per_param.end()) {
            throw ConfigError("prune_saliency: estimate has no layer '" + name + "'");
        }
        const Tensor& F = fit_it->second;
        const KeepMask& keep = mask.layer(name);
        for (std::int64_t k = 0; k < theta.numel(); ++k) {
            if (!keep[static_cast<size_t>(k)]) continue;
            out.push_back({name, k, F[k] * theta[k] * theta[k]});
        }
    }
    return out;
}

std::vector<SaliencyEntry> magnitude_saliency(const std::map<std::string, Tensor>& effective,
                                              const PruneMask& mask) {
    std::vector<SaliencyEntry> out;
    for (const auto& [name, theta] : effective) {
        if (!mask.has_layer(name)) continue;
        const KeepMask& keep = mask.layer(name);
        for (std::int64_t k = 0; k < theta.numel(); ++k) {
            if (!keep[static_cast<size_t>(k)]) continue;
            out.push_back({name, k, theta[k] * theta[k]});
        }
    }
    return out;
}

std::string fisher_to_json(const FisherEstimate& fisher) {
    ordered_json j;
    j["n_samples"] = fisher.n_samples;
    ordered_json layers = ordered_json::object();
    for (const auto& [name, F] : fisher.per_param) {
        ordered_json e;
        e["weight_trace"] = fisher.weight_trace.at(name);
        e["act_trace"] = fisher.act_trace.at(name);
        e["n_weights"] = fisher.n_weights.at(name);
        e["n_act_units"] = fisher.n_act_units.at(name);
        double mn = std::numeric_limits<double>::infinity(), mx = 0.0;
        for (std::int64_t k = 0; k < F.numel(); ++k) {
            mn = std::min(mn, F[k]);
            mx = std::max(mx, F[k]);
        }
        e["per_param_min"] = F.numel() ? mn : 0.0;
        e["per_param_max"] = mx;
        e["per_param_mean"] = F.numel() ? F.sum() / static_cast<double>(F.numel()) : 0.0;
        layers[name] = e;
    }
    j["layers"] = layers;
    return j.dump(2) + "\n";
}

}  // namespace fitpath

#include "fitpath/cost.hpp"

namespace fitpath {

CostModel CostModel::from(const Model& model) {
    CostModel c;
    for (const auto& name : model.quantizable_layers()) {
        c.macs[name] = model.macs().at(name);
        c.weight_counts[name] = model.param(name + ".weight").numel();
        c.bias_count += model.param(name + ".bias").numel();
    }
    return c;
}

std::int64_t CostModel::total_macs() const {
    std::int64_t n = 0;
    for (const auto& [_, m] : macs) n += m;
    return n;
}

std::int64_t CostModel::total_weights() const {
    std::int64_t n = 0;
    for (const auto& [_, m] : weight_counts) n += m;
    return n;
}

double relative_bops(const CostModel& cost, const CompressionConfig& config) {
    double num = 0.0, den = 0.0;
    for (const auto& [name, macs] : cost.macs) {
        const double mac = static_cast<double>(macs);
        double kept = 1.0;
        if (config.mask.has_layer(name)) {
            const auto total = config.mask.layer_size(name);
            kept = static_cast<double>(total - config.mask.layer_pruned(name)) /
                   static_cast<double>(total);
        }
        num += mac * config.w_bits(name) * config.a_bits(name) * kept;
        den += mac * 32.0 * 32.0;
    }
    return num / den;
}

std::int64_t model_size_bits(const CostModel& cost, const CompressionConfig& config) {
    std::int64_t bits = 0;
    for (const auto& [name, n] : cost.weight_counts) {
        std::int64_t active = n;
        if (config.mask.has_layer(name)) active -= config.mask.layer_pruned(name);
        bits += active * config.w_bits(name);
    }
    return bits + 32 * cost.bias_count;
}

double relative_size(const CostModel& cost, const CompressionConfig& config) {
    const double full = 32.0 * static_cast<double>(cost.total_weights() + cost.bias_count);
    return static_cast<double>(model_size_bits(cost, config)) / full;
}

double alpha_value(const CostModel& cost, const CompressionConfig& config, bool size_constraint) {
    return size_constraint ? relative_size(cost, config) : relative_bops(cost, config);
}

}  // namespace fitpath

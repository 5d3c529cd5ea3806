#ifndef FITPATH_COST_HPP
#define FITPATH_COST_HPP

#include <cstdint>
#include <map>
#include <string>

#include "fitpath/compression.hpp"
#include "fitpath/model.hpp"

namespace fitpath {

// BOPs/size substrate: MACs and weight counts per quantizable layer.
struct CostModel {
    std::map<std::string, std::int64_t> macs;
    std::map<std::string, std::int64_t> weight_counts;
    std::int64_t bias_count = 0;

    static CostModel from(const Model& model);
    std::int64_t total_macs() const;
    std::int64_t total_weights() const;
};

// sum_l MACs_l * b_w(l) * b_a(l) * (1 - s_l) / sum_l MACs_l * 32 * 32,
// where s_l is the masked fraction of layer l's weights. The uncompressed
// model is exactly 1.
double relative_bops(const CostModel& cost, const CompressionConfig& config);

// sum_l n(l) * b_w(l) * (1 - s_l) over weight tensors plus 32 bits per bias.
std::int64_t model_size_bits(const CostModel& cost, const CompressionConfig& config);

double relative_size(const CostModel& cost, const CompressionConfig& config);

// The constraint variable alpha: relative BOPs by default, relative size
// under the size-constraint mode.
double alpha_value(const CostModel& cost, const CompressionConfig& config, bool size_constraint);

}  // namespace fitpath

#endif

#ifndef FITPATH_COMPRESSION_HPP
#define FITPATH_COMPRESSION_HPP

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fitpath/tensor.hpp"

namespace fitpath {

class Model;

// Largest signed level of a symmetric b-bit grid: 2^(b-1) - 1.
double signed_qmax(int bits);
// Largest unsigned level of a b-bit grid: 2^b - 1.
double unsigned_qmax(int bits);

// Scale of the symmetric max-abs weight quantizer, max|t| / qmax.
double weight_quant_scale(const Tensor& t, int bits);

// Symmetric uniform fake quantizer for weights. bits >= 32 is the identity;
// a constant-zero tensor passes through unchanged. Rounding is half away
// from zero. Throws ConfigError for bits < 2.
Tensor quantize_weights(const Tensor& t, int bits);

// Unsigned uniform fake quantizer for non-negative (post-ReLU) activations
// with a frozen calibration maximum: s = calib_max / (2^b - 1), values
// clamped to [0, calib_max]. bits >= 32 is the identity.
Tensor quantize_acts(const Tensor& t, int bits, double calib_max);

// Signed symmetric variant used for the network input tensor, which is not
// post-ReLU and may be negative.
Tensor quantize_acts_signed(const Tensor& t, int bits, double calib_max);

Tensor apply_keep_mask(const Tensor& t, const KeepMask& mask);

// Global unstructured pruning mask over all prunable layers. Masks are
// nested: advancing the schedule only ever clears more keep flags.
class PruneMask {
public:
    PruneMask() = default;
    explicit PruneMask(std::map<std::string, std::int64_t> layer_sizes);

    bool empty() const { return layers_.empty() || pruned_count() == 0; }
    const KeepMask& layer(const std::string& name) const;
    std::shared_ptr<const KeepMask> layer_shared(const std::string& name) const;
    bool has_layer(const std::string& name) const { return layers_.count(name) > 0; }

    std::int64_t total_count() const;
    std::int64_t pruned_count() const;
    double sparsity() const;  // pruned / total over prunable weights
    std::int64_t layer_pruned(const std::string& name) const;
    std::int64_t layer_size(const std::string& name) const;

    // Clears the keep flag of the given weights. Throws if a flag is already
    // cleared (nesting violation) or out of range.
    void prune(const std::string& layer, std::int64_t index);

    const std::map<std::string, std::shared_ptr<KeepMask>>& layers() const { return layers_; }

    // Bit-packed sidecar file ("FITM" container). The digest is a CRC32 over
    // the packed payload and is embedded in the config JSON for validation.
    void save(const std::string& path) const;
    static PruneMask load(const std::string& path);
    std::string digest() const;

private:
    // shared_ptr so tape nodes can hold the layer mask without copying.
    std::map<std::string, std::shared_ptr<KeepMask>> layers_;
};

// One point in compression space: per-layer weight/activation bit-widths,
// the pruning-schedule index, and the global mask.
struct CompressionConfig {
    std::map<std::string, int> weight_bits;  // quantizable layers only
    std::map<std::string, int> act_bits;
    int kappa_index = 0;                     // 0 = dense
    PruneMask mask;

    static CompressionConfig identity(const Model& model);

    bool is_identity() const;
    double sparsity() const { return mask.sparsity(); }
    int w_bits(const std::string& layer) const;
    int a_bits(const std::string& layer) const;

    // JSON: {"layers": {name: {"w_bits","a_bits"}}, "kappa_index",
    // "sparsity", "mask_digest"}; the full mask goes to `path + ".mask"`.
    void save(const std::string& path) const;
    static CompressionConfig load(const std::string& path);
    std::string to_json() const;
};

// Effective parameters under a config (mask-then-quantize), plus the
// per-layer perturbations: quant_delta = effective - masked latent, and
// prune_delta = weights newly masked relative to `previous_mask` (their
// pre-masking effective values).
struct ApplyResult {
    std::map<std::string, Tensor> effective;
    std::map<std::string, Tensor> quant_delta;
    std::map<std::string, Tensor> prune_delta;
};

ApplyResult apply_config(const Model& model, const CompressionConfig& config,
                         const PruneMask* previous_mask = nullptr);

}  // namespace fitpath

#endif

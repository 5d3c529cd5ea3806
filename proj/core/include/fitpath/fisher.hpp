#ifndef FITPATH_FISHER_HPP
#define FITPATH_FISHER_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fitpath/compression.hpp"
#include "fitpath/data.hpp"
#include "fitpath/model.hpp"
#include "fitpath/tensor.hpp"

namespace fitpath {

// Empirical Fisher diagonal over the active (unmasked) weights, plus
// per-layer traces for weights and for the activation tensors feeding each
// quantizable layer.
//
// Activation entries are spatially averaged: for a conv input [C,H,W] the
// per-sample contribution is (1/HW) * sum of squared gradients and the unit
// count is C, so wide feature maps do not dwarf dense layers.
struct FisherEstimate {
    std::map<std::string, Tensor> per_param;          // weight-shaped; 0 at masked coords
    std::map<std::string, double> weight_trace;       // Tr_l = sum of per_param over layer
    std::map<std::string, double> act_trace;
    std::map<std::string, std::int64_t> n_weights;    // active weight count n(l)
    std::map<std::string, std::int64_t> n_act_units;  // effective units of the layer input
    std::int64_t n_samples = 0;
};

struct FisherOptions {
    bool activation_terms = true;
    // Calibrated per-layer input maxima; required when the config quantizes
    // activations (a_bits < 32).
    std::map<std::string, double> act_scales;
};

// F_p = (1/N) sum_i (dL_i/dtheta_p)^2 with L_i the per-sample NLL at the data
// label, evaluated at the config's effective parameters. Throws on an empty
// calibration batch.
FisherEstimate estimate_fisher(const Model& model, const CompressionConfig& config,
                               const Dataset& calib, const FisherOptions& options = {});

// FIT(theta, dtheta) = sum_l (1/n(l)) * Tr_l * ||dtheta||_l^2, plus the
// activation analog for the layers present in `delta_act_sq` (per-layer
// squared perturbation norms, already sample- and spatially-averaged).
// Layers in `delta_theta` must exist in the estimate.
double fit(const FisherEstimate& fisher, const std::map<std::string, Tensor>& delta_theta,
           const std::map<std::string, double>* delta_act_sq = nullptr);

// Same shape of computation with precomputed per-layer ||dtheta||^2.
double fit_from_norms(const FisherEstimate& fisher,
                      const std::map<std::string, double>& delta_theta_sq,
                      const std::map<std::string, double>* delta_act_sq = nullptr);

struct SaliencyEntry {
    std::string layer;
    std::int64_t index;
    double score;
};

// Fisher-weighted pruning saliency F_p * theta_p^2 over the currently
// unmasked prunable weights (theta taken at its effective value).
std::vector<SaliencyEntry> prune_saliency(const FisherEstimate& fisher,
                                          const std::map<std::string, Tensor>& effective,
                                          const PruneMask& mask);

// L1-magnitude reference saliency (score = theta^2, same ranking as |theta|).
std::vector<SaliencyEntry> magnitude_saliency(const std::map<std::string, Tensor>& effective,
                                              const PruneMask& mask);

// Debug dump: traces and per-layer summary statistics.
std::string fisher_to_json(const FisherEstimate& fisher);

}  // namespace fitpath

#endif

#ifndef FITPATH_TRAIN_HPP
#define FITPATH_TRAIN_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fitpath/compression.hpp"
#include "fitpath/data.hpp"
#include "fitpath/model.hpp"

namespace fitpath {

enum class OptimizerKind { Adam, Sgd };
enum class LrSchedule { Cosine, None };

OptimizerKind optimizer_from_name(const std::string& s);
LrSchedule schedule_from_name(const std::string& s);

struct TrainSpec {
    OptimizerKind optimizer = OptimizerKind::Adam;
    double lr = 1e-3;
    int epochs = 1;
    std::int64_t batch = 128;
    double weight_decay = 0.0;
    LrSchedule schedule = LrSchedule::Cosine;
    std::uint64_t seed = 0;

    void validate() const;
};

struct HistoryRow {
    int epoch = 0;
    std::string split;
    double accuracy = 0.0;
    double loss = 0.0;
};

struct TrainResult {
    std::vector<HistoryRow> history;
    double final_test_accuracy = 0.0;
};

// Full-precision training with per-epoch test accuracy. Aborts with
// DivergenceError when the loss goes non-finite.
TrainResult train_baseline(Model& model, const Dataset& train, const Dataset& test,
                           const TrainSpec& spec);

// Percentile activation maxima for the config's quantized forward, measured
// on the calibration subset with weights masked+quantized and activation
// quantizers off.
std::map<std::string, double> calibrate_act_scales(const Model& model,
                                                   const CompressionConfig& config,
                                                   const Dataset& train,
                                                   std::int64_t calib_samples, std::uint64_t seed,
                                                   double percentile = 0.999);

// Single-shot quantization-aware fine-tuning under a frozen config: latent
// weights are updated through the straight-through estimator, masked weights
// are zeroed up front and stay exactly zero, activation scales are frozen to
// the values passed in. Optimizer state starts fresh.
TrainResult finetune(Model& model, const CompressionConfig& config, const Dataset& train,
                     const Dataset& test, const TrainSpec& spec,
                     const std::map<std::string, double>& act_scales);

// Top-1 accuracy under the compressed forward path.
double evaluate(const Model& model, const CompressionConfig& config,
                const std::map<std::string, double>& act_scales, const Dataset& data);

// Accuracy and mean NLL in one pass.
std::pair<double, double> evaluate_with_loss(const Model& model, const RuntimeView* view,
                                             const Dataset& data);

void write_history_csv(const std::vector<HistoryRow>& history, const std::string& path);

}  // namespace fitpath

#endif

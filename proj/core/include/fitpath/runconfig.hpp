#ifndef FITPATH_RUNCONFIG_HPP
#define FITPATH_RUNCONFIG_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "fitpath/planner.hpp"
#include "fitpath/train.hpp"

namespace fitpath {

// Everything a run needs; a run is reproducible from this + the data + the
// seed. Serialized as JSON; CLI flags override individual fields.
struct RunConfig {
    std::string data_dir;                 // falls back to $FITPATH_DATA_DIR
    std::string run_dir = "runs/default";

    // dataset: "mnist" or "blobs"
    std::string dataset = "mnist";
    int blob_classes = 10;
    std::int64_t blob_train = 8192;
    std::int64_t blob_test = 2048;
    std::int64_t blob_dim = 64;
    double blob_separation = 8.0;

    // model: "lenet" or "mlp"
    std::string arch = "lenet";
    std::vector<std::int64_t> mlp_widths{64, 32, 10};

    std::uint64_t seed = 1234;

    Schedules schedules;
    double alpha_target = 0.005;
    double lambda = 0.5;
    bool joint_wa = false;
    bool start_at_qmax = true;
    bool charge_qmax_init = true;
    bool fisher_cache = true;
    bool size_constraint = false;
    bool act_fisher = true;
    std::int64_t calib_samples = 1024;
    double act_percentile = 0.999;
    bool dump_fisher = false;

    TrainSpec train;     // baseline training
    TrainSpec finetune;  // single-shot fine-tuning

    // ablation controls
    int ablate_kappa_from = 1;
    std::vector<double> ablate_alpha_grid{0.0625, 0.05, 0.02, 0.01, 0.006, 0.0035, 0.002};
    int ablate_finetune_epochs = 3;

    static RunConfig defaults();
    static RunConfig from_file(const std::string& path);
    std::string to_json() const;
    void save(const std::string& path) const;

    PlannerOptions planner_options() const;
    std::string resolved_data_dir() const;

    // artifact paths inside run_dir
    std::string checkpoint_path() const { return run_dir + "/checkpoint.fitc"; }
    std::string finetuned_path() const { return run_dir + "/finetuned.fitc"; }
    std::string config_path() const { return run_dir + "/config.json"; }
    std::string trace_path() const { return run_dir + "/trace.jsonl"; }
    std::string metrics_path() const { return run_dir + "/metrics.json"; }
    std::string manifest_path() const { return run_dir + "/manifest.json"; }
};

}  // namespace fitpath

#endif

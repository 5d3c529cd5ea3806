// fitpath: joint mixed-precision quantization + pruning planner and trainer.
//
//   fitpath train    --config run.json [--data-dir DIR] [--epochs N] ...
//   fitpath compress --config run.json --alpha 0.005
//   fitpath finetune --config run.json
//   fitpath eval     --config run.json
//   fitpath ablate   --kind iterative-pruning|scheduling
//   fitpath report
//
// Exit codes: 0 ok, 2 config error, 3 infeasible target, 4 divergence.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fitpath/errors.hpp"
#include "fitpath/pipeline.hpp"
#include "fitpath/runconfig.hpp"

using namespace fitpath;

namespace {

struct CliOverrides {
    std::optional<std::string> data_dir, run_dir, dataset, arch;
    std::optional<double> alpha, lambda, act_percentile;
    std::optional<std::uint64_t> seed;
    std::optional<int> epochs, finetune_epochs;
    std::optional<std::int64_t> calib_samples, batch;
    std::optional<bool> joint_wa, start_at_qmax, fisher_cache, size_constraint, act_fisher,
        charge_qmax_init, dump_fisher;
};

void apply_overrides(RunConfig& cfg, const CliOverrides& o) {
    if (o.data_dir) cfg.data_dir = *o.data_dir;
    if (o.run_dir) cfg.run_dir = *o.run_dir;
    if (o.dataset) cfg.dataset = *o.dataset;
    if (o.arch) cfg.arch = *o.arch;
    if (o.alpha) cfg.alpha_target = *o.alpha;
    if (o.lambda) cfg.lambda = *o.lambda;
    if (o.act_percentile) cfg.act_percentile = *o.act_percentile;
    if (o.seed) {
        cfg.seed = *o.seed;
        cfg.train.seed = derive_seed(cfg.seed, 1);
        cfg.finetune.seed = derive_seed(cfg.seed, 2);
    }
    if (o.epochs) cfg.train.epochs = *o.epochs;
    if (o.finetune_epochs) cfg.finetune.epochs = *o.finetune_epochs;
    if (o.batch) {
        cfg.train.batch = *o.batch;
        cfg.finetune.batch = *o.batch;
    }
    if (o.calib_samples) cfg.calib_samples = *o.calib_samples;
    if (o.joint_wa) cfg.joint_wa = *o.joint_wa;
    if (o.start_at_qmax) cfg.start_at_qmax = *o.start_at_qmax;
    if (o.charge_qmax_init) cfg.charge_qmax_init = *o.charge_qmax_init;
    if (o.fisher_cache) cfg.fisher_cache = *o.fisher_cache;
    if (o.size_constraint) cfg.size_constraint = *o.size_constraint;
    if (o.act_fisher) cfg.act_fisher = *o.act_fisher;
    if (o.dump_fisher) cfg.dump_fisher = *o.dump_fisher;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"FITCompress-style joint quantization/pruning pipeline"};
    app.require_subcommand(0, 1);

    std::string config_file;
    bool print_config = false;
    CliOverrides o;

    app.add_option("--config", config_file, "Run config JSON file");
    app.add_flag("--print-config", print_config, "Print the effective config and exit");
    app.add_option("--data-dir", o.data_dir, "Dataset directory (or $FITPATH_DATA_DIR)");
    app.add_option("--run-dir", o.run_dir, "Output directory for artifacts");
    app.add_option("--dataset", o.dataset, "mnist | blobs");
    app.add_option("--arch", o.arch, "lenet | mlp");
    app.add_option("--alpha", o.alpha, "Compression target (relative BOPs or size)");
    app.add_option("--lambda", o.lambda, "Heuristic balance weight");
    app.add_option("--seed", o.seed, "Master seed (re-derives phase seeds)");
    app.add_option("--epochs", o.epochs, "Baseline training epochs");
    app.add_option("--finetune-epochs", o.finetune_epochs, "Fine-tuning epochs");
    app.add_option("--batch", o.batch, "Batch size for training phases");
    app.add_option("--calib-samples", o.calib_samples, "Fisher calibration sample count");
    app.add_option("--act-percentile", o.act_percentile, "Activation scale percentile");
    app.add_flag("--joint-wa,!--no-joint-wa", o.joint_wa,
                 "Strict Algorithm-1 action space (joint weight/act steps)");
    app.add_flag("--start-at-qmax,!--no-start-at-qmax", o.start_at_qmax,
                 "Start the search from the homogeneous max(Q) point");
    app.add_flag("--charge-qmax-init,!--no-charge-qmax-init", o.charge_qmax_init,
                 "Charge the initial 32->max(Q) step to g-hat");
    app.add_flag("--fisher-cache,!--no-fisher-cache", o.fisher_cache,
                 "Recompute Fisher traces only after prune actions");
    app.add_flag("--size-constraint,!--no-size-constraint", o.size_constraint,
                 "Constrain model size bits instead of BOPs");
    app.add_flag("--act-fisher,!--no-act-fisher", o.act_fisher,
                 "Include activation terms in the FIT metric");
    app.add_flag("--dump-fisher", o.dump_fisher, "Write fisher.json after compress");

    auto* sub_train = app.add_subcommand("train", "Train the full-precision baseline");
    auto* sub_compress = app.add_subcommand("compress", "Plan the compression configuration");
    auto* sub_finetune = app.add_subcommand("finetune", "Single-shot fine-tune a frozen config");
    auto* sub_eval = app.add_subcommand("eval", "Evaluate accuracy under the config");
    auto* sub_ablate = app.add_subcommand("ablate", "Reproduce ablation curves");
    auto* sub_report = app.add_subcommand("report", "Render table and plot data");

    std::string ablate_kind = "scheduling";
    sub_ablate->add_option("--kind", ablate_kind, "iterative-pruning | scheduling");

    // global flags are accepted after the subcommand name too
    for (auto* sub : {sub_train, sub_compress, sub_finetune, sub_eval, sub_ablate, sub_report}) {
        sub->fallthrough();
    }

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig cfg = config_file.empty() ? RunConfig::defaults()
                                            : RunConfig::from_file(config_file);
        apply_overrides(cfg, o);

        if (print_config) {
            std::cout << cfg.to_json();
            return 0;
        }

        std::string command;
        if (sub_train->parsed()) {
            command = "train";
            cmd_train(cfg);
        } else if (sub_compress->parsed()) {
            command = "compress";
            cmd_compress(cfg);
        } else if (sub_finetune->parsed()) {
            command = "finetune";
            cmd_finetune(cfg);
        } else if (sub_eval->parsed()) {
            command = "eval";
            cmd_eval(cfg);
        } else if (sub_ablate->parsed()) {
            command = "ablate";
            cmd_ablate(cfg, ablate_kind);
        } else if (sub_report->parsed()) {
            command = "report";
            cmd_report(cfg);
        } else {
            std::cerr << app.help() << std::endl;
            return 2;
        }
        std::cout << "{\"status\":\"ok\",\"command\":\"" << command << "\",\"run_dir\":\""
                  << cfg.run_dir << "\"}" << std::endl;
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << std::endl;
        return 2;
    } catch (const InfeasibleError& e) {
        std::cerr << "infeasible: " << e.what() << std::endl;
        return 3;
    } catch (const DivergenceError& e) {
        std::cerr << "divergence: " << e.what() << std::endl;
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 1;
    }
}

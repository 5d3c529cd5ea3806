#include "fitpath/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>

#include <nlohmann/json.hpp>

#include "fitpath/checkpoint.hpp"
#include "fitpath/errors.hpp"
#include "fitpath/fisher.hpp"
#include "fitpath/report.hpp"
#include "fitpath/train.hpp"

namespace fitpath {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

void write_manifest(const RunConfig& cfg, const std::string& command,
                    const std::vector<std::string>& artifacts) {
    ordered_json j;
    j["command"] = command;
    j["created_unix"] = std::chrono::duration_cast<std::chrono::seconds>(
                            std::chrono::system_clock::now().time_since_epoch())
                            .count();
    j["artifacts"] = artifacts;
    j["run_config"] = ordered_json::parse(cfg.to_json());
    std::ofstream f(cfg.manifest_path(), std::ios::trunc);
    if (!f) throw DataError("manifest: cannot write '" + cfg.manifest_path() + "'");
    f << j.dump(2) << "\n";
}

void ensure_run_dir(const RunConfig& cfg) { fs::create_directories(cfg.run_dir); }

void require_artifact(const std::string& path, const std::string& hint) {
    if (!fs::exists(path)) {
        throw ConfigError("missing artifact '" + path + "' (" + hint + ")");
    }
}

std::map<std::string, double> scales_from_meta(const Model& model) {
    std::map<std::string, double> scales;
    for (const auto& [k, v] : model.meta()) {
        constexpr const char* prefix = "act_scale.";
        if (k.rfind(prefix, 0) == 0) scales[k.substr(std::string(prefix).size())] = v;
    }
    return scales;
}

void scales_to_meta(Model& model, const std::map<std::string, double>& scales) {
    for (const auto& [layer, v] : scales) model.meta()["act_scale." + layer] = v;
}

}  // namespace

Model build_model_for(const RunConfig& cfg) {
    const std::uint64_t seed = derive_seed(cfg.seed, 0);
    if (cfg.arch == "lenet") return build_lenet(seed);
    if (cfg.arch == "mlp") return build_mlp(cfg.mlp_widths, seed);
    throw ConfigError("unknown model arch '" + cfg.arch + "'");
}

std::pair<Dataset, Dataset> load_dataset_for(const RunConfig& cfg) {
    if (cfg.dataset == "mnist") {
        const std::string dir = cfg.resolved_data_dir();
        if (dir.empty()) {
            throw ConfigError("dataset 'mnist' needs --data-dir or $FITPATH_DATA_DIR");
        }
        return load_mnist(dir);
    }
    if (cfg.dataset == "blobs") {
        // One generator call, split so train and test share cluster centers.
        Dataset all = synthetic_blobs(cfg.blob_classes, cfg.blob_train + cfg.blob_test,
                                      cfg.blob_dim, derive_seed(cfg.seed, 10),
                                      cfg.blob_separation);
        auto slice = [&](std::int64_t lo, std::int64_t n) {
            Dataset d;
            d.num_classes = all.num_classes;
            Shape s = all.images.shape();
            s[0] = n;
            const std::int64_t stride = all.images.numel() / all.size();
            d.images = Tensor(s);
            std::copy_n(all.images.data().data() + lo * stride, n * stride,
                        d.images.data().data());
            d.labels.assign(all.labels.begin() + lo, all.labels.begin() + lo + n);
            return d;
        };
        Dataset train = slice(0, cfg.blob_train);
        Dataset test = slice(cfg.blob_train, cfg.blob_test);
        if (cfg.arch == "lenet") {
            if (cfg.blob_dim != 784) {
                throw ConfigError("blobs + lenet needs dim=784 (got " +
                                  std::to_string(cfg.blob_dim) + ")");
            }
            train = reshape_images(std::move(train), {1, 28, 28});
            test = reshape_images(std::move(test), {1, 28, 28});
        }
        return {std::move(train), std::move(test)};
    }
    throw ConfigError("unknown dataset '" + cfg.dataset + "'");
}

void cmd_train(const RunConfig& cfg) {
    ensure_run_dir(cfg);
    auto [train_set, test_set] = load_dataset_for(cfg);
    Model model = build_model_for(cfg);
    TrainResult result = train_baseline(model, train_set, test_set, cfg.train);
    save_checkpoint(model, cfg.checkpoint_path());
    write_history_csv(result.history, cfg.run_dir + "/train_history.csv");

    CompressionConfig identity = CompressionConfig::identity(model);
    Metrics m = compute_metrics(CostModel::from(model), identity, result.final_test_accuracy,
                                cfg.size_constraint);
    m.save(cfg.run_dir + "/baseline_metrics.json");
    write_manifest(cfg, "train",
                   {cfg.checkpoint_path(), cfg.run_dir + "/train_history.csv",
                    cfg.run_dir + "/baseline_metrics.json"});
}

void cmd_compress(const RunConfig& cfg) {
    ensure_run_dir(cfg);
    require_artifact(cfg.checkpoint_path(), "run `fitpath train` first");
    Model model = load_checkpoint(cfg.checkpoint_path());
    auto [train_set, test_set] = load_dataset_for(cfg);
    (void)test_set;

    SearchResult result = fitcompress_search(model, train_set, cfg.schedules, cfg.alpha_target,
                                             cfg.planner_options());
    result.config.save(cfg.config_path());
    write_trace_jsonl(result.path.trace, cfg.trace_path());
    std::vector<std::string> artifacts{cfg.config_path(), cfg.trace_path()};

    if (cfg.dump_fisher) {
        FisherOptions fo;
        fo.activation_terms = cfg.act_fisher;
        fo.act_scales = calibrate_act_scales(model, result.config, train_set, cfg.calib_samples,
                                             cfg.planner_options().seed, cfg.act_percentile);
        const auto est = estimate_fisher(model, result.config,
                                         calibration_subset(train_set, cfg.calib_samples,
                                                            cfg.planner_options().seed),
                                         fo);
        std::ofstream f(cfg.run_dir + "/fisher.json", std::ios::trunc);
        f << fisher_to_json(est);
        artifacts.push_back(cfg.run_dir + "/fisher.json");
    }
    write_manifest(cfg, "compress", artifacts);
}

void cmd_finetune(const RunConfig& cfg) {
    ensure_run_dir(cfg);
    require_artifact(cfg.checkpoint_path(), "run `fitpath train` first");
    require_artifact(cfg.config_path(), "run `fitpath compress` first");
    Model model = load_checkpoint(cfg.checkpoint_path());
    CompressionConfig config = CompressionConfig::load(cfg.config_path());
    auto [train_set, test_set] = load_dataset_for(cfg);

    // Activation scales are recalibrated once here and frozen for the whole
    // fine-tuning phase (and persisted for later evaluation).
    auto scales = calibrate_act_scales(model, config, train_set, cfg.calib_samples,
                                       cfg.planner_options().seed, cfg.act_percentile);
    TrainResult result = finetune(model, config, train_set, test_set, cfg.finetune, scales);
    scales_to_meta(model, scales);
    save_checkpoint(model, cfg.finetuned_path());
    write_history_csv(result.history, cfg.run_dir + "/finetune_history.csv");
    write_manifest(cfg, "finetune",
                   {cfg.finetuned_path(), cfg.run_dir + "/finetune_history.csv"});
}

void cmd_eval(const RunConfig& cfg) {
    ensure_run_dir(cfg);
    const bool have_finetuned = fs::exists(cfg.finetuned_path());
    const std::string ckpt = have_finetuned ? cfg.finetuned_path() : cfg.checkpoint_path();
    require_artifact(ckpt, "run `fitpath train` (and optionally `finetune`) first");
    Model model = load_checkpoint(ckpt);
    auto [train_set, test_set] = load_dataset_for(cfg);

    CompressionConfig config = fs::exists(cfg.config_path())
                                   ? CompressionConfig::load(cfg.config_path())
                                   : CompressionConfig::identity(model);
    auto scales = scales_from_meta(model);
    if (scales.empty()) {
        scales = calibrate_act_scales(model, config, train_set, cfg.calib_samples,
                                      cfg.planner_options().seed, cfg.act_percentile);
    }
    const double acc = evaluate(model, config, scales, test_set);
    Metrics m = compute_metrics(CostModel::from(model), config, acc, cfg.size_constraint);
    m.save(cfg.metrics_path());
    write_manifest(cfg, "eval", {cfg.metrics_path()});
}

namespace {

// Iterative-pruning ablation: nested masks along the kappa schedule for
// (a) iterative FIT (traces refreshed after every step), (b) one-shot FIT
// (traces frozen at the dense model), (c) magnitude. Accuracy is measured
// without fine-tuning.
void ablate_iterative_pruning(const RunConfig& cfg, const Model& model, const Dataset& train_set,
                              const Dataset& test_set, std::ostream& csv) {
    csv << "method,kappa_index,kappa,one_minus_kappa,accuracy\n";

    const auto emit = [&](const std::string& method, int n, double kappa, double acc) {
        csv << method << "," << n << "," << kappa << "," << (1.0 - kappa) << "," << acc << "\n";
    };

    // Iterative FIT: drive the engine with prune actions only; Fisher is
    // refreshed after each accepted prune by the engine's caching rule.
    {
        PlannerOptions opts = cfg.planner_options();
        opts.start_at_qmax = false;  // pruning-only curves stay at FP32 bits
        CompressionEngine engine(model, train_set, cfg.schedules,
                                 /*alpha_target=*/1e-12, opts);
        for (int n = cfg.ablate_kappa_from; n <= cfg.schedules.kappa_n_max; ++n) {
            while (engine.path().config.kappa_index < n) {
                Action a;
                a.kind = ActionKind::AdvancePrune;
                a.to_kappa_index = engine.path().config.kappa_index + 1;
                engine.apply(a, engine.action_cost(a));
            }
            const double acc = evaluate(model, engine.config(), {}, test_set);
            emit("iterative_fit", n, cfg.schedules.kappa(n), acc);
        }
    }

    // One-shot saliency curves: fixed ranking, nested prefix masks.
    auto run_fixed = [&](const std::string& method, std::vector<SaliencyEntry> ranking) {
        auto less = [](const SaliencyEntry& a, const SaliencyEntry& b) {
            if (a.score != b.score) return a.score < b.score;
            if (a.layer != b.layer) return a.layer < b.layer;
            return a.index < b.index;
        };
        std::sort(ranking.begin(), ranking.end(), less);
        CompressionConfig config = CompressionConfig::identity(model);
        const std::int64_t total = config.mask.total_count();
        std::int64_t pruned = 0;
        for (int n = cfg.ablate_kappa_from; n <= cfg.schedules.kappa_n_max; ++n) {
            const std::int64_t target =
                std::llround(cfg.schedules.kappa(n) * static_cast<double>(total));
            while (pruned < target && pruned < static_cast<std::int64_t>(ranking.size())) {
                config.mask.prune(ranking[static_cast<size_t>(pruned)].layer,
                                  ranking[static_cast<size_t>(pruned)].index);
                ++pruned;
            }
            config.kappa_index = n;
            const double acc = evaluate(model, config, {}, test_set);
            emit(method, n, cfg.schedules.kappa(n), acc);
        }
    };

    CompressionConfig identity = CompressionConfig::identity(model);
    auto applied = apply_config(model, identity);
    FisherOptions fo;
    fo.activation_terms = false;
    const auto dense_fisher =
        estimate_fisher(model, identity,
                        calibration_subset(train_set, cfg.calib_samples,
                                           cfg.planner_options().seed),
                        fo);
    run_fixed("oneshot_fit", prune_saliency(dense_fisher, applied.effective, identity.mask));
    run_fixed("magnitude", magnitude_saliency(applied.effective, identity.mask));
}

// Scheduling ablation: FITCompress vs sequential orders across an alpha
// grid, each followed by short single-shot fine-tuning.
void ablate_scheduling(const RunConfig& cfg, const Model& model, const Dataset& train_set,
                       const Dataset& test_set, std::ostream& csv) {
    csv << "method,alpha_target,alpha_achieved,sparsity,accuracy\n";
    TrainSpec ft = cfg.finetune;
    ft.epochs = cfg.ablate_finetune_epochs;

    struct Entry {
        std::string name;
        std::optional<BaselineMode> mode;
    };
    const Entry entries[] = {
        {"fitcompress", std::nullopt},
        {"prune_then_quantize", BaselineMode::PruneThenQuantize},
        {"quantize_then_prune", BaselineMode::QuantizeThenPrune},
        {"magnitude_prune_then_quantize", BaselineMode::MagnitudePruneThenQuantize},
    };
    for (double alpha : cfg.ablate_alpha_grid) {
        for (const auto& entry : entries) {
            SearchResult sr = entry.mode
                                  ? sequential_baseline(model, train_set, cfg.schedules, alpha,
                                                        cfg.planner_options(), *entry.mode)
                                  : fitcompress_search(model, train_set, cfg.schedules, alpha,
                                                       cfg.planner_options());
            Model tuned = model;  // fresh copy per run
            auto scales = calibrate_act_scales(tuned, sr.config, train_set, cfg.calib_samples,
                                               cfg.planner_options().seed, cfg.act_percentile);
            finetune(tuned, sr.config, train_set, test_set, ft, scales);
            const double acc = evaluate(tuned, sr.config, scales, test_set);
            csv << entry.name << "," << alpha << "," << sr.path.alpha << ","
                << sr.config.sparsity() << "," << acc << "\n";
        }
    }
}

}  // namespace

void cmd_ablate(const RunConfig& cfg, const std::string& kind) {
    ensure_run_dir(cfg);
    require_artifact(cfg.checkpoint_path(), "run `fitpath train` first");
    Model model = load_checkpoint(cfg.checkpoint_path());
    auto [train_set, test_set] = load_dataset_for(cfg);

    const std::string path = cfg.run_dir + "/ablate_" + kind + ".csv";
    std::ofstream csv(path, std::ios::trunc);
    if (!csv) throw DataError("ablate: cannot write '" + path + "'");
    if (kind == "iterative-pruning") {
        ablate_iterative_pruning(cfg, model, train_set, test_set, csv);
    } else if (kind == "scheduling") {
        ablate_scheduling(cfg, model, train_set, test_set, csv);
    } else {
        throw ConfigError("ablate: unknown kind '" + kind +
                          "' (expected iterative-pruning or scheduling)");
    }
    write_manifest(cfg, "ablate " + kind, {path});
}

void cmd_report(const RunConfig& cfg) {
    ensure_run_dir(cfg);
    require_artifact(cfg.config_path(), "run `fitpath compress` first");
    require_artifact(cfg.trace_path(), "run `fitpath compress` first");
    require_artifact(cfg.metrics_path(), "run `fitpath eval` first");
    CompressionConfig config = CompressionConfig::load(cfg.config_path());
    auto trace = read_trace_jsonl(cfg.trace_path());
    Metrics metrics = Metrics::from_file(cfg.metrics_path());

    const std::string table = render_summary("FITCompress", metrics);
    std::ofstream rf(cfg.run_dir + "/report.txt", std::ios::trunc);
    rf << table;
    write_layer_bits_csv(config, cfg.run_dir + "/layer_bits.csv");
    write_timeline_csv(trace, cfg.run_dir + "/timeline.csv");
    write_manifest(cfg, "report",
                   {cfg.run_dir + "/report.txt", cfg.run_dir + "/layer_bits.csv",
                    cfg.run_dir + "/timeline.csv"});
}

}  // namespace fitpath

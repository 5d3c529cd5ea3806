#include "fitpath/runconfig.hpp"

#include <cstdlib>
#include <fstream>

#include <nlohmann/json.hpp>

#include "fitpath/errors.hpp"

namespace fitpath {

using ordered_json = nlohmann::ordered_json;

namespace {

const char* optimizer_name(OptimizerKind k) {
    return k == OptimizerKind::Adam ? "adam" : "sgd";
}
const char* schedule_name(LrSchedule s) { return s == LrSchedule::Cosine ? "cosine" : "none"; }

ordered_json train_to_json(const TrainSpec& t) {
    ordered_json j;
    j["optimizer"] = optimizer_name(t.optimizer);
    j["lr"] = t.lr;
    j["epochs"] = t.epochs;
    j["batch"] = t.batch;
    j["weight_decay"] = t.weight_decay;
    j["schedule"] = schedule_name(t.schedule);
    j["seed"] = t.seed;
    return j;
}

TrainSpec train_from_json(const ordered_json& j, const TrainSpec& base, std::uint64_t fallback_seed) {
    TrainSpec t = base;
    t.optimizer = optimizer_from_name(j.value("optimizer", std::string(optimizer_name(base.optimizer))));
    t.lr = j.value("lr", base.lr);
    t.epochs = j.value("epochs", base.epochs);
    t.batch = j.value("batch", base.batch);
    t.weight_decay = j.value("weight_decay", base.weight_decay);
    t.schedule = schedule_from_name(j.value("schedule", std::string(schedule_name(base.schedule))));
    t.seed = j.value("seed", fallback_seed);
    return t;
}

// Map a byte offset from a json parse error to a line number for the
// diagnostic message.
int line_of_offset(const std::string& text, size_t byte) {
    int line = 1;
    for (size_t i = 0; i < byte && i < text.size(); ++i)
        if (text[i] == '\n') ++line;
    return line;
}

}  // namespace

RunConfig RunConfig::defaults() {
    RunConfig c;
    c.train.optimizer = OptimizerKind::Adam;
    c.train.lr = 1e-3;
    c.train.epochs = 30;
    c.train.batch = 128;
    c.train.weight_decay = 0.0;
    c.train.schedule = LrSchedule::Cosine;
    c.train.seed = derive_seed(c.seed, 1);
    c.finetune = c.train;
    c.finetune.epochs = 20;
    c.finetune.seed = derive_seed(c.seed, 2);
    return c;
}

std::string RunConfig::to_json() const {
    ordered_json j;
    j["data_dir"] = data_dir;
    j["run_dir"] = run_dir;
    ordered_json ds;
    ds["kind"] = dataset;
    ds["classes"] = blob_classes;
    ds["train_n"] = blob_train;
    ds["test_n"] = blob_test;
    ds["dim"] = blob_dim;
    ds["separation"] = blob_separation;
    j["dataset"] = ds;
    ordered_json model;
    model["arch"] = arch;
    model["mlp_widths"] = mlp_widths;
    j["model"] = model;
    j["seed"] = seed;
    ordered_json sch;
    sch["q_bits"] = schedules.q_bits;
    sch["kappa_n_max"] = schedules.kappa_n_max;
    sch["kappa_divisor"] = schedules.kappa_divisor;
    j["schedules"] = sch;
    j["alpha_target"] = alpha_target;
    j["lambda"] = lambda;
    j["joint_wa"] = joint_wa;
    j["start_at_qmax"] = start_at_qmax;
    j["charge_qmax_init"] = charge_qmax_init;
    j["fisher_cache"] = fisher_cache;
    j["size_constraint"] = size_constraint;
    j["act_fisher"] = act_fisher;
    j["calib_samples"] = calib_samples;
    j["act_percentile"] = act_percentile;
    j["dump_fisher"] = dump_fisher;
    j["train"] = train_to_json(train);
    j["finetune"] = train_to_json(finetune);
    ordered_json ab;
    ab["kappa_from"] = ablate_kappa_from;
    ab["alpha_grid"] = ablate_alpha_grid;
    ab["finetune_epochs"] = ablate_finetune_epochs;
    j["ablate"] = ab;
    return j.dump(2) + "\n";
}

void RunConfig::save(const std::string& path) const {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("run config: cannot write '" + path + "'");
    f << to_json();
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("run config: cannot read '" + path + "'");
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("run config: parse error at " + path + ":" +
                          std::to_string(line_of_offset(text, e.byte)) + ": " + e.what());
    }
    RunConfig c = defaults();
    try {
        c.data_dir = j.value("data_dir", c.data_dir);
        c.run_dir = j.value("run_dir", c.run_dir);
        if (j.contains("dataset")) {
            const auto& ds = j.at("dataset");
            c.dataset = ds.value("kind", c.dataset);
            c.blob_classes = ds.value("classes", c.blob_classes);
            c.blob_train = ds.value("train_n", c.blob_train);
            c.blob_test = ds.value("test_n", c.blob_test);
            c.blob_dim = ds.value("dim", c.blob_dim);
            c.blob_separation = ds.value("separation", c.blob_separation);
        }
        if (j.contains("model")) {
            const auto& m = j.at("model");
            c.arch = m.value("arch", c.arch);
            if (m.contains("mlp_widths")) c.mlp_widths = m.at("mlp_widths").get<std::vector<std::int64_t>>();
        }
        c.seed = j.value("seed", c.seed);
        if (j.contains("schedules")) {
            const auto& s = j.at("schedules");
            if (s.contains("q_bits")) c.schedules.q_bits = s.at("q_bits").get<std::vector<int>>();
            c.schedules.kappa_n_max = s.value("kappa_n_max", c.schedules.kappa_n_max);
            c.schedules.kappa_divisor = s.value("kappa_divisor", c.schedules.kappa_divisor);
        }
        c.alpha_target = j.value("alpha_target", c.alpha_target);
        c.lambda = j.value("lambda", c.lambda);
        c.joint_wa = j.value("joint_wa", c.joint_wa);
        c.start_at_qmax = j.value("start_at_qmax", c.start_at_qmax);
        c.charge_qmax_init = j.value("charge_qmax_init", c.charge_qmax_init);
        c.fisher_cache = j.value("fisher_cache", c.fisher_cache);
        c.size_constraint = j.value("size_constraint", c.size_constraint);
        c.act_fisher = j.value("act_fisher", c.act_fisher);
        c.calib_samples = j.value("calib_samples", c.calib_samples);
        c.act_percentile = j.value("act_percentile", c.act_percentile);
        c.dump_fisher = j.value("dump_fisher", c.dump_fisher);
        if (j.contains("train")) c.train = train_from_json(j.at("train"), c.train, derive_seed(c.seed, 1));
        else c.train.seed = derive_seed(c.seed, 1);
        if (j.contains("finetune"))
            c.finetune = train_from_json(j.at("finetune"), c.finetune, derive_seed(c.seed, 2));
        else c.finetune.seed = derive_seed(c.seed, 2);
        if (j.contains("ablate")) {
            const auto& ab = j.at("ablate");
            c.ablate_kappa_from = ab.value("kappa_from", c.ablate_kappa_from);
            if (ab.contains("alpha_grid"))
                c.ablate_alpha_grid = ab.at("alpha_grid").get<std::vector<double>>();
            c.ablate_finetune_epochs = ab.value("finetune_epochs", c.ablate_finetune_epochs);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("run config: bad field in '" + path + "': " + e.what());
    }
    c.schedules.validate();
    return c;
}

PlannerOptions RunConfig::planner_options() const {
    PlannerOptions o;
    o.lambda = lambda;
    o.joint_wa = joint_wa;
    o.start_at_qmax = start_at_qmax;
    o.charge_qmax_init = charge_qmax_init;
    o.fisher_cache = fisher_cache;
    o.size_constraint = size_constraint;
    o.act_fisher = act_fisher;
    o.calib_samples = calib_samples;
    o.act_percentile = act_percentile;
    o.seed = derive_seed(seed, 3);
    return o;
}

std::string RunConfig::resolved_data_dir() const {
    if (!data_dir.empty()) return data_dir;
    if (const char* env = std::getenv("FITPATH_DATA_DIR")) return env;
    return "";
}

}  // namespace fitpath

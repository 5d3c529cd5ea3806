#include "fitpath/report.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fitpath/errors.hpp"

namespace fitpath {

using ordered_json = nlohmann::ordered_json;

void write_trace_jsonl(const std::vector<TraceEntry>& trace, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("trace: cannot write '" + path + "'");
    for (const auto& e : trace) {
        ordered_json j;
        j["iter"] = e.iter;
        j["action"] = e.action;
        j["layer"] = e.layer;
        j["new_bits_or_kappa"] = e.new_bits_or_kappa;
        j["delta_g"] = e.delta_g;
        j["f_hat"] = e.f_hat;
        j["score"] = e.score;
        j["alpha"] = e.alpha;
        f << j.dump() << "\n";
    }
}

std::vector<TraceEntry> read_trace_jsonl(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("trace: cannot read '" + path + "'");
    std::vector<TraceEntry> trace;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        ordered_json j;
        try {
            j = ordered_json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw DataError("trace: corrupt record at " + path + ":" + std::to_string(lineno) +
                            ": " + e.what());
        }
        TraceEntry e;
        try {
            e.iter = j.at("iter").get<int>();
            e.action = j.at("action").get<std::string>();
            e.layer = j.at("layer").get<std::string>();
            e.new_bits_or_kappa = j.at("new_bits_or_kappa").get<double>();
            e.delta_g = j.at("delta_g").get<double>();
            e.f_hat = j.at("f_hat").get<double>();
            e.score = j.at("score").get<double>();
            e.alpha = j.at("alpha").get<double>();
        } catch (const nlohmann::json::exception& ex) {
            throw DataError("trace: bad record at " + path + ":" + std::to_string(lineno) + ": " +
                            ex.what());
        }
        trace.push_back(std::move(e));
    }
    return trace;
}

std::string Metrics::to_json() const {
    ordered_json j;
    j["accuracy"] = accuracy;
    j["relative_bops"] = relative_bops;
    j["sparsity"] = sparsity;
    j["model_size_bits"] = model_size_bits;
    j["alpha"] = alpha;
    return j.dump(2) + "\n";
}

void Metrics::save(const std::string& path) const {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("metrics: cannot write '" + path + "'");
    f << to_json();
}

Metrics Metrics::from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("metrics: cannot read '" + path + "'");
    ordered_json j;
    try {
        j = ordered_json::parse(f);
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError("metrics: parse error in '" + path + "': " + e.what());
    }
    Metrics m;
    m.accuracy = j.at("accuracy").get<double>();
    m.relative_bops = j.at("relative_bops").get<double>();
    m.sparsity = j.at("sparsity").get<double>();
    m.model_size_bits = j.at("model_size_bits").get<std::int64_t>();
    m.alpha = j.at("alpha").get<double>();
    return m;
}

Metrics compute_metrics(const CostModel& cost, const CompressionConfig& config, double accuracy,
                        bool size_constraint) {
    Metrics m;
    m.accuracy = accuracy;
    m.relative_bops = relative_bops(cost, config);
    m.sparsity = config.sparsity();
    m.model_size_bits = model_size_bits(cost, config);
    m.alpha = alpha_value(cost, config, size_constraint);
    return m;
}

std::string render_summary(const std::string& label, const Metrics& m) {
    std::ostringstream os;
    os << std::left << std::setw(18) << "method" << std::right << std::setw(10) << "acc(%)"
       << std::setw(14) << "rel BOPs(%)" << std::setw(13) << "sparsity(%)" << std::setw(12)
       << "size(KiB)" << "\n";
    os << std::left << std::setw(18) << label << std::right << std::fixed << std::setprecision(2)
       << std::setw(10) << m.accuracy * 100.0 << std::setprecision(4) << std::setw(14)
       << m.relative_bops * 100.0 << std::setw(13) << m.sparsity * 100.0 << std::setprecision(1)
       << std::setw(12) << static_cast<double>(m.model_size_bits) / 8.0 / 1024.0 << "\n";
    return os.str();
}

void write_layer_bits_csv(const CompressionConfig& config, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("report: cannot write '" + path + "'");
    f << "layer,w_bits,a_bits,sparsity\n";
    for (const auto& [name, wb] : config.weight_bits) {
        double s = 0.0;
        if (config.mask.has_layer(name)) {
            s = static_cast<double>(config.mask.layer_pruned(name)) /
                static_cast<double>(config.mask.layer_size(name));
        }
        f << name << "," << wb << "," << config.a_bits(name) << "," << s << "\n";
    }
}

void write_timeline_csv(const std::vector<TraceEntry>& trace, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("report: cannot write '" + path + "'");
    f << "iter,action,layer,new_bits_or_kappa,delta_g,f_hat,score,alpha\n";
    for (const auto& e : trace) {
        f << e.iter << "," << e.action << "," << e.layer << "," << e.new_bits_or_kappa << ","
          << e.delta_g << "," << e.f_hat << "," << e.score << "," << e.alpha << "\n";
    }
}

}  // namespace fitpath

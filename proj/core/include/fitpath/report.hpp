#ifndef FITPATH_REPORT_HPP
#define FITPATH_REPORT_HPP

#include <string>
#include <vector>

#include "fitpath/compression.hpp"
#include "fitpath/cost.hpp"
#include "fitpath/planner.hpp"

namespace fitpath {

// One JSON record per accepted action:
// {iter, action, layer, new_bits_or_kappa, delta_g, f_hat, score, alpha}
void write_trace_jsonl(const std::vector<TraceEntry>& trace, const std::string& path);
std::vector<TraceEntry> read_trace_jsonl(const std::string& path);

struct Metrics {
    double accuracy = 0.0;
    double relative_bops = 1.0;
    double sparsity = 0.0;
    std::int64_t model_size_bits = 0;
    double alpha = 1.0;

    std::string to_json() const;
    static Metrics from_file(const std::string& path);
    void save(const std::string& path) const;
};

Metrics compute_metrics(const CostModel& cost, const CompressionConfig& config, double accuracy,
                        bool size_constraint);

// Table-1-style summary row.
std::string render_summary(const std::string& label, const Metrics& m);

// Figure-3 analog: one row per quantizable layer with its weight/activation
// bit-widths and sparsity.
void write_layer_bits_csv(const CompressionConfig& config, const std::string& path);

// Figure-6 analog: the action sequence over iterations.
void write_timeline_csv(const std::vector<TraceEntry>& trace, const std::string& path);

}  // namespace fitpath

#endif

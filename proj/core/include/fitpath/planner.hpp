#ifndef FITPATH_PLANNER_HPP
#define FITPATH_PLANNER_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fitpath/compression.hpp"
#include "fitpath/cost.hpp"
#include "fitpath/data.hpp"
#include "fitpath/fisher.hpp"
#include "fitpath/model.hpp"

namespace fitpath {

// Bit-width and pruning schedules. kappa(n) = 1 - 10^(-n / divisor) for
// n >= 1; kappa(0) = 0 (dense).
struct Schedules {
    std::vector<int> q_bits{8, 4, 3, 2};  // strictly decreasing, all >= 2
    int kappa_n_max = 40;
    double kappa_divisor = 13.0;

    double kappa(int n) const;
    // First schedule entry below `current`, or 0 if the schedule is
    // exhausted (current already at min).
    int next_bits(int current) const;
    int min_bits() const { return q_bits.back(); }
    int max_bits() const { return q_bits.front(); }
    void validate() const;
};

enum class ActionKind { QuantizeWeights, QuantizeActs, QuantizeJoint, AdvancePrune };

const char* action_kind_name(ActionKind k);

struct Action {
    ActionKind kind = ActionKind::AdvancePrune;
    std::string layer;  // empty for AdvancePrune
    int to_bits = 0;    // quantize actions
    int to_kappa_index = 0;
};

struct TraceEntry {
    int iter = 0;
    std::string action;
    std::string layer;
    double new_bits_or_kappa = 0.0;
    double delta_g = 0.0;
    double f_hat = 0.0;
    double score = 0.0;
    double alpha = 1.0;
};

struct PathState {
    CompressionConfig config;
    double g_hat = 0.0;
    double alpha = 1.0;
    std::vector<TraceEntry> trace;
};

struct PlannerOptions {
    double lambda = 0.5;
    bool joint_wa = false;        // strict Algorithm-1 mode: L+1 actions, w/a in lockstep
    bool start_at_qmax = true;    // homogeneous 32 -> max(Q) step before the search
    bool charge_qmax_init = true; // whether that step contributes to g-hat
    bool fisher_cache = true;     // recompute traces only after accepted prune actions
    bool size_constraint = false; // alpha = relative size instead of relative BOPs
    bool act_fisher = true;       // include activation terms in g-hat and f-hat
    std::int64_t calib_samples = 1024;
    double act_percentile = 0.999;
    std::uint64_t seed = 0;
};

struct SearchResult {
    CompressionConfig config;
    PathState path;
};

// Path-distance step: Delta g-hat = FIT(theta, dtheta)^(1/2).
double g_step(double fit_value);
double g_step(const FisherEstimate& fisher, const std::map<std::string, Tensor>& delta_theta,
              const std::map<std::string, double>* delta_act_sq = nullptr);

// Goal heuristic: |alpha_candidate - alpha_target| * FIT(theta, theta)^(1/2),
// with the full current parameter vector as the perturbation.
double f_heuristic(double fit_theta_theta, double alpha_candidate, double alpha_target);

// Saliency rule used for prune-action selection.
enum class SaliencyRule { FisherWeighted, Magnitude };

// Incremental search state over compression space: current bit-widths, mask,
// effective parameters, cached Fisher traces, and calibration activations.
// Candidate evaluation is pure w.r.t. the engine state; the class is
// copyable so exhaustive tests can fork paths.
class CompressionEngine {
public:
    CompressionEngine(const Model& model, const Dataset& train_data, const Schedules& schedules,
                      double alpha_target, const PlannerOptions& options);

    double alpha() const { return state_.alpha; }
    double g_hat() const { return state_.g_hat; }
    double alpha_target() const { return alpha_target_; }
    bool done() const { return state_.alpha <= alpha_target_; }
    double alpha_floor() const;
    const PathState& path() const { return state_; }
    const FisherEstimate& fisher() const { return fisher_; }
    const CostModel& cost_model() const { return cost_; }
    CompressionConfig config() const;

    // Records the homogeneous 32 -> max(Q) starting point (Figure-2 style c0).
    void apply_qmax_init();

    struct Cost {
        double delta_g = 0.0;
        double f_hat = 0.0;
        double score = 0.0;  // g_hat + delta_g + lambda * f_hat
        double alpha_after = 1.0;
    };

    // Candidates with strictly decreasing alpha under non-exhausted
    // schedules; at most 2L+1 (L+1 in joint mode).
    std::vector<Action> candidates() const;
    Cost action_cost(const Action& action) const;
    void apply(const Action& action, const Cost& cost);

    void set_saliency_rule(SaliencyRule rule) { saliency_rule_ = rule; }

    // Lowest-saliency selection for the next kappa step; empty when the mask
    // cannot grow. Exposed for the iterative-pruning ablation.
    std::vector<SaliencyEntry> next_prune_selection() const;

private:
    void capture_activations();
    void refresh_fisher();
    void refresh_f_term();
    void rebuild_saliency();
    double alpha_of_counts(const std::map<std::string, int>& wb,
                           const std::map<std::string, int>& ab,
                           const std::map<std::string, std::int64_t>& pruned) const;
    double act_delta_sq(const std::string& layer, int bits_before, int bits_after) const;

    const Model* model_ = nullptr;
    Schedules schedules_;
    double alpha_target_ = 1.0;
    PlannerOptions options_;
    CostModel cost_;
    Dataset calib_;
    SaliencyRule saliency_rule_ = SaliencyRule::FisherWeighted;

    // current point in compression space
    std::map<std::string, int> w_bits_, a_bits_;
    int kappa_index_ = 0;
    PruneMask mask_;
    std::map<std::string, std::int64_t> pruned_counts_;
    std::map<std::string, Tensor> effective_;

    // calibration captures at the current point
    std::map<std::string, Tensor> acts_;        // stacked per-sample layer inputs
    std::map<std::string, double> act_scales_;  // percentile maxima
    std::map<std::string, double> act_sq_;      // sample/spatially-averaged ||x||^2

    FisherEstimate fisher_;
    double f_fit_sqrt_ = 0.0;  // FIT(theta, theta)^(1/2) at the current point
    std::vector<SaliencyEntry> saliency_;
    PathState state_;
    int iter_ = 0;
};

// FITCompress: greedy best-first traversal minimizing g-hat + lambda * f-hat
// until alpha <= alpha_target. Throws InfeasibleError (naming the achievable
// floor) when the target is below what exhausted schedules can reach.
SearchResult fitcompress_search(const Model& model, const Dataset& train_data,
                                const Schedules& schedules, double alpha_target,
                                const PlannerOptions& options);

enum class BaselineMode { PruneThenQuantize, QuantizeThenPrune, MagnitudePruneThenQuantize };

const char* baseline_mode_name(BaselineMode m);

// Sequential schedules for the ablation: one phase runs to exhaustion (or to
// the target) before the other starts. Selection within a phase is greedy on
// Delta g-hat; the magnitude mode ranks prune candidates by |theta|.
SearchResult sequential_baseline(const Model& model, const Dataset& train_data,
                                 const Schedules& schedules, double alpha_target,
                                 const PlannerOptions& options, BaselineMode mode);

}  // namespace fitpath

#endif

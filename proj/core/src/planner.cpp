#include "fitpath/planner.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <sstream>

#include "fitpath/errors.hpp"

namespace fitpath {

double Schedules::kappa(int n) const {
    if (n <= 0) return 0.0;
    return 1.0 - std::pow(10.0, -static_cast<double>(n) / kappa_divisor);
}

int Schedules::next_bits(int current) const {
    for (int b : q_bits) {
        if (b < current) return b;
    }
    return 0;
}

void Schedules::validate() const {
    if (q_bits.empty()) throw ConfigError("schedules: empty bit-width list");
    for (size_t i = 0; i < q_bits.size(); ++i) {
        if (q_bits[i] < 2) throw ConfigError("schedules: bit-width below 2");
        if (q_bits[i] > 32) throw ConfigError("schedules: bit-width above 32");
        if (i > 0 && q_bits[i] >= q_bits[i - 1]) {
            throw ConfigError("schedules: bit-widths must be strictly decreasing");
        }
    }
    if (kappa_n_max < 0) throw ConfigError("schedules: negative kappa_n_max");
    if (kappa_divisor <= 0.0) throw ConfigError("schedules: kappa divisor must be positive");
}

const char* action_kind_name(ActionKind k) {
    switch (k) {
        case ActionKind::QuantizeWeights: return "quant_w";
        case ActionKind::QuantizeActs: return "quant_a";
        case ActionKind::QuantizeJoint: return "quant_joint";
        case ActionKind::AdvancePrune: return "prune";
    }
    return "?";
}

const char* baseline_mode_name(BaselineMode m) {
    switch (m) {
        case BaselineMode::PruneThenQuantize: return "prune_then_quantize";
        case BaselineMode::QuantizeThenPrune: return "quantize_then_prune";
        case BaselineMode::MagnitudePruneThenQuantize: return "magnitude_prune_then_quantize";
    }
    return "?";
}

double g_step(double fit_value) { return std::sqrt(fit_value); }

double g_step(const FisherEstimate& fisher, const std::map<std::string, Tensor>& delta_theta,
              const std::map<std::string, double>* delta_act_sq) {
    return std::sqrt(fit(fisher, delta_theta, delta_act_sq));
}

double f_heuristic(double fit_theta_theta_sqrt, double alpha_candidate, double alpha_target) {
    return std::fabs(alpha_candidate - alpha_target) * fit_theta_theta_sqrt;
}

// ---------------------------------------------------------------------------
// CompressionEngine

CompressionEngine::CompressionEngine(const Model& model, const Dataset& train_data,
                                     const Schedules& schedules, double alpha_target,
                                     const PlannerOptions& options)
    : model_(&model),
      schedules_(schedules),
      alpha_target_(alpha_target),
      options_(options),
      cost_(CostModel::from(model)) {
    schedules_.validate();
    if (!(alpha_target > 0.0) || alpha_target > 1.0) {
        throw ConfigError("planner: alpha target must be in (0, 1], got " +
                          std::to_string(alpha_target));
    }
    calib_ = calibration_subset(train_data, options_.calib_samples, options_.seed);
    if (calib_.size() < 1) throw DataError("planner: empty calibration set");

    std::map<std::string, std::int64_t> sizes;
    for (const auto& name : model.prunable_layers()) {
        sizes[name] = model.param(name + ".weight").numel();
    }
    mask_ = PruneMask(std::move(sizes));
    for (const auto& name : model.quantizable_layers()) {
        w_bits_[name] = 32;
        a_bits_[name] = 32;
        pruned_counts_[name] = 0;
        effective_[name] = model.param(name + ".weight");
    }
    state_.alpha = 1.0;
    state_.g_hat = 0.0;
    capture_activations();
    refresh_fisher();
    rebuild_saliency();
    state_.config = config();
}

CompressionConfig CompressionEngine::config() const {
    CompressionConfig c;
    c.weight_bits = w_bits_;
    c.act_bits = a_bits_;
    c.kappa_index = kappa_index_;
    c.mask = mask_;
    return c;
}

double CompressionEngine::alpha_floor() const {
    const double min_bits = schedules_.min_bits();
    const double keep = 1.0 - schedules_.kappa(schedules_.kappa_n_max);
    if (!options_.size_constraint) {
        return min_bits * min_bits * keep / (32.0 * 32.0);
    }
    const double weights = static_cast<double>(cost_.total_weights());
    const double biases = static_cast<double>(cost_.bias_count);
    return (weights * min_bits * keep + 32.0 * biases) / (32.0 * (weights + biases));
}

void CompressionEngine::capture_activations() {
    RuntimeView view;
    for (const auto& [name, bits] : w_bits_) {
        LayerRuntime rt;
        rt.w_bits = bits;  // unused under weight_override; kept for clarity
        rt.a_bits = 32;    // scales are calibrated on the unquantized stream
        view.layers[name] = rt;
    }
    view.weight_override = &effective_;

    const auto qlayers = model_->quantizable_layers();
    const std::int64_t n = calib_.size();
    acts_.clear();

    constexpr std::int64_t kChunk = 128;
    std::int64_t done = 0;
    while (done < n) {
        const std::int64_t take = std::min(kChunk, n - done);
        Shape s = calib_.images.shape();
        s[0] = take;
        Tensor chunk(s);
        const std::int64_t stride = calib_.images.numel() / n;
        std::copy_n(calib_.images.data().data() + done * stride, take * stride,
                    chunk.data().data());
        Tape tape;
        ForwardTaps taps;
        model_->forward(tape, chunk, &view, &taps);
        for (const auto& name : qlayers) {
            const Tensor& v = tape.value(taps.pre_quant_inputs.at(name));
            auto it = acts_.find(name);
            if (it == acts_.end()) {
                Shape full = v.shape();
                full[0] = n;
                it = acts_.emplace(name, Tensor(full)).first;
            }
            std::copy_n(v.data().data(), v.numel(),
                        it->second.data().data() + done * (v.numel() / take));
        }
        done += take;
    }

    act_scales_.clear();
    act_sq_.clear();
    for (const auto& name : qlayers) {
        const Tensor& x = acts_.at(name);
        std::vector<double> mag(static_cast<size_t>(x.numel()));
        for (std::int64_t i = 0; i < x.numel(); ++i) mag[static_cast<size_t>(i)] = std::fabs(x[i]);
        const size_t idx = static_cast<size_t>(
            options_.act_percentile * static_cast<double>(mag.size() - 1));
        std::nth_element(mag.begin(), mag.begin() + static_cast<std::ptrdiff_t>(idx), mag.end());
        act_scales_[name] = mag[idx];

        double spatial = 1.0;
        if (x.rank() == 4) spatial = static_cast<double>(x.extent(2) * x.extent(3));
        act_sq_[name] = sq_norm(x) / (spatial * static_cast<double>(n));
    }
}

void CompressionEngine::refresh_fisher() {
    FisherOptions fo;
    fo.activation_terms = options_.act_fisher;
    fo.act_scales = act_scales_;
    fisher_ = estimate_fisher(*model_, config(), calib_, fo);
    refresh_f_term();
}

void CompressionEngine::refresh_f_term() {
    std::map<std::string, double> theta_sq;
    for (const auto& [name, t] : effective_) theta_sq[name] = sq_norm(t);
    f_fit_sqrt_ = options_.act_fisher
                      ? std::sqrt(fit_from_norms(fisher_, theta_sq, &act_sq_))
                      : std::sqrt(fit_from_norms(fisher_, theta_sq, nullptr));
}

void CompressionEngine::rebuild_saliency() {
    saliency_ = saliency_rule_ == SaliencyRule::FisherWeighted
                    ? prune_saliency(fisher_, effective_, mask_)
                    : magnitude_saliency(effective_, mask_);
}

std::vector<SaliencyEntry> CompressionEngine::next_prune_selection() const {
    if (kappa_index_ >= schedules_.kappa_n_max) return {};
    const std::int64_t total = mask_.total_count();
    const std::int64_t target =
        std::llround(schedules_.kappa(kappa_index_ + 1) * static_cast<double>(total));
    const std::int64_t need = target - mask_.pruned_count();
    if (need <= 0 || need > static_cast<std::int64_t>(saliency_.size())) {
        // nothing new to prune at this step, or schedule outruns the weights
        if (need <= 0) return {};
        return {};
    }
    std::vector<SaliencyEntry> pool = saliency_;
    auto less = [](const SaliencyEntry& a, const SaliencyEntry& b) {
        if (a.score != b.score) return a.score < b.score;
        if (a.layer != b.layer) return a.layer < b.layer;
        return a.index < b.index;
    };
    std::nth_element(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(need - 1),
                     pool.end(), less);
    pool.resize(static_cast<size_t>(need));
    std::sort(pool.begin(), pool.end(), less);
    return pool;
}

double CompressionEngine::alpha_of_counts(const std::map<std::string, int>& wb,
                                          const std::map<std::string, int>& ab,
                                          const std::map<std::string, std::int64_t>& pruned) const {
    if (!options_.size_constraint) {
        double num = 0.0, den = 0.0;
        for (const auto& [name, macs] : cost_.macs) {
            const double total = static_cast<double>(cost_.weight_counts.at(name));
            const double kept = (total - static_cast<double>(pruned.at(name))) / total;
            num += static_cast<double>(macs) * wb.at(name) * ab.at(name) * kept;
            den += static_cast<double>(macs) * 32.0 * 32.0;
        }
        return num / den;
    }
    double bits = 0.0;
    for (const auto& [name, n] : cost_.weight_counts) {
        bits += static_cast<double>(n - pruned.at(name)) * wb.at(name);
    }
    bits += 32.0 * static_cast<double>(cost_.bias_count);
    return bits / (32.0 * static_cast<double>(cost_.total_weights() + cost_.bias_count));
}

double CompressionEngine::act_delta_sq(const std::string& layer, int bits_before,
                                       int bits_after) const {
    const Tensor& x = acts_.at(layer);
    const double scale = act_scales_.at(layer);
    const bool signed_grid = layer == model_->quantizable_layers().front();
    auto q = [&](int bits) {
        if (bits >= 32) return x;
        return signed_grid ? quantize_acts_signed(x, bits, scale) : quantize_acts(x, bits, scale);
    };
    const Tensor before = q(bits_before);
    const Tensor after = q(bits_after);
    double spatial = 1.0;
    if (x.rank() == 4) spatial = static_cast<double>(x.extent(2) * x.extent(3));
    return sq_norm_diff(after, before) / (spatial * static_cast<double>(calib_.size()));
}

std::vector<Action> CompressionEngine::candidates() const {
    std::vector<Action> out;
    // AdvancePrune first: ties on the score prefer pruning.
    if (kappa_index_ < schedules_.kappa_n_max) {
        auto selection = next_prune_selection();
        if (!selection.empty()) {
            auto pruned = pruned_counts_;
            for (const auto& e : selection) ++pruned[e.layer];
            if (alpha_of_counts(w_bits_, a_bits_, pruned) < state_.alpha) {
                Action a;
                a.kind = ActionKind::AdvancePrune;
                a.to_kappa_index = kappa_index_ + 1;
                out.push_back(a);
            }
        }
    }
    for (const auto& name : model_->quantizable_layers()) {
        if (options_.joint_wa) {
            const int nb = schedules_.next_bits(w_bits_.at(name));
            if (nb <= 0) continue;
            auto wb = w_bits_;
            auto ab = a_bits_;
            wb[name] = nb;
            ab[name] = nb;
            if (alpha_of_counts(wb, ab, pruned_counts_) < state_.alpha) {
                Action a;
                a.kind = ActionKind::QuantizeJoint;
                a.layer = name;
                a.to_bits = nb;
                out.push_back(a);
            }
            continue;
        }
        const int nw = schedules_.next_bits(w_bits_.at(name));
        if (nw > 0) {
            auto wb = w_bits_;
            wb[name] = nw;
            if (alpha_of_counts(wb, a_bits_, pruned_counts_) < state_.alpha) {
                Action a;
                a.kind = ActionKind::QuantizeWeights;
                a.layer = name;
                a.to_bits = nw;
                out.push_back(a);
            }
        }
        const int na = schedules_.next_bits(a_bits_.at(name));
        if (na > 0) {
            auto ab = a_bits_;
            ab[name] = na;
            if (alpha_of_counts(w_bits_, ab, pruned_counts_) < state_.alpha) {
                Action a;
                a.kind = ActionKind::QuantizeActs;
                a.layer = name;
                a.to_bits = na;
                out.push_back(a);
            }
        }
    }
    return out;
}

CompressionEngine::Cost CompressionEngine::action_cost(const Action& action) const {
    Cost c;
    double fit_total = 0.0;
    auto wb = w_bits_;
    auto ab = a_bits_;
    auto pruned = pruned_counts_;

    switch (action.kind) {
        case ActionKind::QuantizeWeights:
        case ActionKind::QuantizeJoint: {
            const std::string& l = action.layer;
            const Tensor& latent = model_->param(l + ".weight");
            Tensor masked = mask_.has_layer(l) ? apply_keep_mask(latent, mask_.layer(l)) : latent;
            Tensor next = quantize_weights(masked, action.to_bits);
            const double dsq = sq_norm_diff(next, effective_.at(l));
            if (fisher_.n_weights.at(l) > 0) {
                fit_total += fisher_.weight_trace.at(l) * dsq /
                             static_cast<double>(fisher_.n_weights.at(l));
            }
            wb[l] = action.to_bits;
            if (action.kind == ActionKind::QuantizeJoint) {
                ab[l] = action.to_bits;
                const double asq = act_delta_sq(l, a_bits_.at(l), action.to_bits);
                if (fisher_.n_act_units.count(l) && fisher_.n_act_units.at(l) > 0) {
                    fit_total += fisher_.act_trace.at(l) * asq /
                                 static_cast<double>(fisher_.n_act_units.at(l));
                }
            }
            break;
        }
        case ActionKind::QuantizeActs: {
            const std::string& l = action.layer;
            const double asq = act_delta_sq(l, a_bits_.at(l), action.to_bits);
            if (fisher_.n_act_units.count(l) && fisher_.n_act_units.at(l) > 0) {
                fit_total += fisher_.act_trace.at(l) * asq /
                             static_cast<double>(fisher_.n_act_units.at(l));
            }
            ab[l] = action.to_bits;
            break;
        }
        case ActionKind::AdvancePrune: {
            auto selection = next_prune_selection();
            std::map<std::string, std::vector<std::int64_t>> by_layer;
            for (const auto& e : selection) {
                by_layer[e.layer].push_back(e.index);
                ++pruned[e.layer];
            }
            for (const auto& [l, indices] : by_layer) {
                const Tensor& latent = model_->param(l + ".weight");
                Tensor masked = apply_keep_mask(latent, mask_.layer(l));
                for (auto i : indices) masked[i] = 0.0;
                Tensor next = quantize_weights(masked, w_bits_.at(l));
                const double dsq = sq_norm_diff(next, effective_.at(l));
                if (fisher_.n_weights.at(l) > 0) {
                    fit_total += fisher_.weight_trace.at(l) * dsq /
                                 static_cast<double>(fisher_.n_weights.at(l));
                }
            }
            break;
        }
    }
    c.alpha_after = alpha_of_counts(wb, ab, pruned);
    c.delta_g = g_step(fit_total);
    c.f_hat = f_heuristic(f_fit_sqrt_, c.alpha_after, alpha_target_);
    c.score = state_.g_hat + c.delta_g + options_.lambda * c.f_hat;
    return c;
}

void CompressionEngine::apply(const Action& action, const Cost& cost) {
    bool weights_changed = false;
    switch (action.kind) {
        case ActionKind::QuantizeWeights:
        case ActionKind::QuantizeJoint: {
            const std::string& l = action.layer;
            w_bits_[l] = action.to_bits;
            if (action.kind == ActionKind::QuantizeJoint) a_bits_[l] = action.to_bits;
            const Tensor& latent = model_->param(l + ".weight");
            Tensor masked = mask_.has_layer(l) ? apply_keep_mask(latent, mask_.layer(l)) : latent;
            effective_[l] = quantize_weights(masked, action.to_bits);
            weights_changed = true;
            break;
        }
        case ActionKind::QuantizeActs:
            a_bits_[action.layer] = action.to_bits;
            break;
        case ActionKind::AdvancePrune: {
            auto selection = next_prune_selection();
            for (const auto& e : selection) {
                mask_.prune(e.layer, e.index);
                ++pruned_counts_[e.layer];
            }
            std::map<std::string, bool> touched;
            for (const auto& e : selection) touched[e.layer] = true;
            for (const auto& [l, _] : touched) {
                const Tensor& latent = model_->param(l + ".weight");
                effective_[l] = quantize_weights(apply_keep_mask(latent, mask_.layer(l)),
                                                 w_bits_.at(l));
            }
            kappa_index_ = action.to_kappa_index;
            weights_changed = true;
            break;
        }
    }

    ++iter_;
    TraceEntry e;
    e.iter = iter_;
    e.action = action_kind_name(action.kind);
    e.layer = action.layer;
    e.new_bits_or_kappa = action.kind == ActionKind::AdvancePrune
                              ? schedules_.kappa(kappa_index_)
                              : static_cast<double>(action.to_bits);
    e.delta_g = cost.delta_g;
    e.f_hat = cost.f_hat;
    e.score = cost.score;
    e.alpha = cost.alpha_after;
    state_.trace.push_back(e);
    state_.g_hat += cost.delta_g;
    state_.alpha = cost.alpha_after;

    if (weights_changed) capture_activations();
    if (action.kind == ActionKind::AdvancePrune || !options_.fisher_cache) {
        // Pruning reshapes the global mask, so traces are recomputed; bit
        // actions keep the previous iteration's traces (one-step delay).
        refresh_fisher();
    } else {
        refresh_f_term();
    }
    rebuild_saliency();
    state_.config = config();
}

void CompressionEngine::apply_qmax_init() {
    if (iter_ != 0 || !state_.trace.empty()) {
        throw std::logic_error("apply_qmax_init: search already started");
    }
    const int qmax = schedules_.max_bits();
    const bool joint = options_.joint_wa;
    for (const auto& name : model_->quantizable_layers()) {
        double fit_w = 0.0, fit_a = 0.0;
        const Tensor& latent = model_->param(name + ".weight");
        Tensor masked =
            mask_.has_layer(name) ? apply_keep_mask(latent, mask_.layer(name)) : latent;
        Tensor next = quantize_weights(masked, qmax);
        const double dsq = sq_norm_diff(next, effective_.at(name));
        if (fisher_.n_weights.at(name) > 0) {
            fit_w = fisher_.weight_trace.at(name) * dsq /
                    static_cast<double>(fisher_.n_weights.at(name));
        }
        const double asq = act_delta_sq(name, 32, qmax);
        if (fisher_.n_act_units.count(name) && fisher_.n_act_units.at(name) > 0) {
            fit_a = fisher_.act_trace.at(name) * asq /
                    static_cast<double>(fisher_.n_act_units.at(name));
        }

        auto push_entry = [&](const char* kind, double fit_value) {
            TraceEntry e;
            e.iter = 0;
            e.action = kind;
            e.layer = name;
            e.new_bits_or_kappa = qmax;
            e.delta_g = options_.charge_qmax_init ? g_step(fit_value) : 0.0;
            e.f_hat = 0.0;
            e.score = 0.0;
            e.alpha = alpha_of_counts(w_bits_, a_bits_, pruned_counts_);
            state_.g_hat += e.delta_g;
            state_.alpha = e.alpha;
            state_.trace.push_back(e);
        };
        if (joint) {
            w_bits_[name] = qmax;
            a_bits_[name] = qmax;
            effective_[name] = std::move(next);
            push_entry("init_quant_joint", fit_w + fit_a);
        } else {
            w_bits_[name] = qmax;
            effective_[name] = std::move(next);
            push_entry("init_quant_w", fit_w);
            a_bits_[name] = qmax;
            push_entry("init_quant_a", fit_a);
        }
    }
    capture_activations();
    if (!options_.fisher_cache) {
        refresh_fisher();
    } else {
        refresh_f_term();
    }
    rebuild_saliency();
    state_.config = config();
}

// ---------------------------------------------------------------------------
// Search drivers

namespace {

std::string infeasible_message(double target, double floor) {
    std::ostringstream os;
    os << "compression target alpha=" << target
       << " is below the achievable floor alpha_min=" << floor
       << " (min bit-width and max pruning ratio exhausted)";
    return os.str();
}

}  // namespace

SearchResult fitcompress_search(const Model& model, const Dataset& train_data,
                                const Schedules& schedules, double alpha_target,
                                const PlannerOptions& options) {
    CompressionEngine engine(model, train_data, schedules, alpha_target, options);
    if (engine.done()) {
        return {engine.config(), engine.path()};
    }
    const double floor = engine.alpha_floor();
    if (alpha_target < floor) {
        throw InfeasibleError(infeasible_message(alpha_target, floor), floor);
    }
    if (options.start_at_qmax) engine.apply_qmax_init();

    while (!engine.done()) {
        const auto candidates = engine.candidates();
        if (candidates.empty()) {
            throw InfeasibleError(
                "schedules exhausted at alpha=" + std::to_string(engine.alpha()) +
                    " before reaching target " + std::to_string(alpha_target),
                engine.alpha());
        }
        std::optional<CompressionEngine::Cost> best_cost;
        size_t best_idx = 0;
        for (size_t i = 0; i < candidates.size(); ++i) {
            auto c = engine.action_cost(candidates[i]);
            // strict less keeps the first of any tie, and candidates are
            // enumerated prune-first, then per layer weights before acts
            if (!best_cost || c.score < best_cost->score) {
                best_cost = c;
                best_idx = i;
            }
        }
        engine.apply(candidates[best_idx], *best_cost);
    }
    return {engine.config(), engine.path()};
}

SearchResult sequential_baseline(const Model& model, const Dataset& train_data,
                                 const Schedules& schedules, double alpha_target,
                                 const PlannerOptions& options, BaselineMode mode) {
    CompressionEngine engine(model, train_data, schedules, alpha_target, options);
    if (mode == BaselineMode::MagnitudePruneThenQuantize) {
        engine.set_saliency_rule(SaliencyRule::Magnitude);
    }
    if (engine.done()) {
        return {engine.config(), engine.path()};
    }
    const double floor = engine.alpha_floor();
    if (alpha_target < floor) {
        throw InfeasibleError(infeasible_message(alpha_target, floor), floor);
    }
    if (options.start_at_qmax) engine.apply_qmax_init();

    const bool prune_first = mode != BaselineMode::QuantizeThenPrune;
    int phase = 0;
    while (!engine.done()) {
        const bool phase_prunes = (phase == 0) == prune_first;
        auto candidates = engine.candidates();
        std::erase_if(candidates, [&](const Action& a) {
            return (a.kind == ActionKind::AdvancePrune) != phase_prunes;
        });
        if (candidates.empty()) {
            if (phase == 0) {
                ++phase;
                continue;
            }
            throw InfeasibleError(
                "schedules exhausted at alpha=" + std::to_string(engine.alpha()) +
                    " before reaching target " + std::to_string(alpha_target),
                engine.alpha());
        }
        // within a phase the schedule is fixed, so selection is greedy on the
        // path distance alone
        std::optional<CompressionEngine::Cost> best_cost;
        size_t best_idx = 0;
        for (size_t i = 0; i < candidates.size(); ++i) {
            auto c = engine.action_cost(candidates[i]);
            if (!best_cost || c.delta_g < best_cost->delta_g) {
                best_cost = c;
                best_idx = i;
            }
        }
        engine.apply(candidates[best_idx], *best_cost);
    }
    return {engine.config(), engine.path()};
}

}  // namespace fitpath

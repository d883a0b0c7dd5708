#pragma once

// Agent, hyperedge and reward-weight ablations over one dataset.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "eval.hpp"
#include "pipeline.hpp"

namespace stihrl {

enum class AgentVariant { full, without_spatial, without_temporal, without_integration };

inline constexpr std::array<AgentVariant, 4> kAgentVariants{AgentVariant::full, AgentVariant::without_spatial,
                                                            AgentVariant::without_temporal,
                                                            AgentVariant::without_integration};

inline std::string to_string(AgentVariant v) {
    switch (v) {
        case AgentVariant::full: return "full";
        case AgentVariant::without_spatial: return "without_spatial";
        case AgentVariant::without_temporal: return "without_temporal";
        case AgentVariant::without_integration: return "without_integration";
    }
    return "full";
}

inline AgentVariant agent_variant_from_string(const std::string& s) {
    for (auto v : kAgentVariants)
        if (to_string(v) == s) return v;
    fail(ErrorKind::config, "unknown agent variant: " + s);
}

/// Agent settings for a variant. Removing an agent pins the gate to the
/// other one; removing integration mixes both agents with a fixed 0.5.
inline AgentConfig apply_variant(AgentConfig cfg, AgentVariant v) {
    if (v == AgentVariant::full) return cfg;
    cfg.gate_mode = GateMode::fixed;
    cfg.learn_lambda = false;
    cfg.learn_reward_weights = false;
    switch (v) {
        case AgentVariant::without_spatial:
            cfg.fixed_beta = 0.0;
            cfg.train_spatial = false;
            break;
        case AgentVariant::without_temporal:
            cfg.fixed_beta = 1.0;
            cfg.train_temporal = false;
            break;
        case AgentVariant::without_integration: cfg.fixed_beta = 0.5; break;
        case AgentVariant::full: break;
    }
    return cfg;
}

struct HyperedgeVariant {
    std::string tag;
    std::string mask;
};

/// Full state, each single kind, and each pair of kinds.
inline const std::vector<HyperedgeVariant>& hyperedge_variants() {
    static const std::vector<HyperedgeVariant> v{{"all", "all"},         {"poi", "poi"},           {"time", "time"},
                                                 {"zone", "zone"},       {"zone+time", "zone+time"}, {"time+poi", "time+poi"},
                                                 {"zone+poi", "zone+poi"}};
    return v;
}

/// Every weight vector with `parts` non-negative entries, multiples of
/// 1/steps, summing to 1. Lexicographic order.
inline std::vector<std::vector<double>> simplex_grid(std::size_t parts, std::size_t steps) {
    require(parts >= 1 && steps >= 1, "simplex grid needs parts >= 1 and steps >= 1");
    std::vector<std::vector<double>> out;
    std::vector<std::size_t> cur(parts, 0);
    auto rec = [&](auto&& self, std::size_t i, std::size_t left) -> void {
        if (i + 1 == parts) {
            cur[i] = left;
            std::vector<double> w(parts);
            for (std::size_t k = 0; k < parts; ++k) w[k] = static_cast<double>(cur[k]) / static_cast<double>(steps);
            out.push_back(std::move(w));
            return;
        }
        for (std::size_t c = 0; c <= left; ++c) {
            cur[i] = c;
            self(self, i + 1, left - c);
        }
    };
    rec(rec, 0, steps);
    return out;
}

enum class AblationKind { agents, hyperedges, reward_spatial, reward_temporal };

inline AblationKind ablation_kind_from_string(const std::string& s) {
    if (s == "agents") return AblationKind::agents;
    if (s == "hyperedges") return AblationKind::hyperedges;
    if (s == "reward_spatial") return AblationKind::reward_spatial;
    if (s == "reward_temporal") return AblationKind::reward_temporal;
    fail(ErrorKind::config, "unknown ablation: " + s + " (agents, hyperedges, reward_spatial, reward_temporal)");
}

inline std::string to_string(AblationKind k) {
    switch (k) {
        case AblationKind::agents: return "agents";
        case AblationKind::hyperedges: return "hyperedges";
        case AblationKind::reward_spatial: return "reward_spatial";
        case AblationKind::reward_temporal: return "reward_temporal";
    }
    return "agents";
}

struct AblationReport {
    AblationKind kind = AblationKind::agents;
    std::vector<MetricsReport> reports;
    std::vector<std::vector<double>> weights;  // sweeps: one weight vector per report
    std::vector<bool> diverged;                // parallel to reports (baselines: false)

    const MetricsReport& find(const std::string& tag) const {
        for (const auto& r : reports)
            if (r.tag == tag) return r;
        fail(ErrorKind::invalid_argument, "no report tagged " + tag);
    }

    /// Variants ranked by Recall@5, best first.
    std::string ranking_summary() const {
        std::vector<const MetricsReport*> order;
        for (const auto& r : reports) order.push_back(&r);
        std::stable_sort(order.begin(), order.end(),
                         [](auto a, auto b) { return a->at("recall", 5) > b->at("recall", 5); });
        std::ostringstream out;
        char buf[64];
        for (std::size_t i = 0; i < order.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%zu. %s  recall@5=%.4f\n", i + 1, order[i]->tag.c_str(), order[i]->at("recall", 5));
            out << buf;
        }
        return out.str();
    }

    /// Sweep CSV: weight columns then every metric.
    std::string sweep_csv() const {
        std::ostringstream out;
        out << (kind == AblationKind::reward_spatial ? "w_d,w_c,w_ps" : "w_t,w_pt");
        for (auto m : kMetricNames)
            for (auto k : kCutoffs) out << ',' << m << '@' << k;
        out << '\n';
        char buf[32];
        for (std::size_t i = 0; i < weights.size(); ++i) {
            for (std::size_t j = 0; j < weights[i].size(); ++j) {
                std::snprintf(buf, sizeof buf, j ? ",%.1f" : "%.1f", weights[i][j]);
                out << buf;
            }
            for (auto m : kMetricNames)
                for (auto k : kCutoffs) {
                    std::snprintf(buf, sizeof buf, ",%.6f", reports[i].at(m, k));
                    out << buf;
                }
            out << '\n';
        }
        return out.str();
    }
};

/// Shared inputs: a dataset with its pretrained embeddings.
struct AblationInputs {
    const Dataset* ds = nullptr;
    const Matrix* h = nullptr;
    const EmbeddingModel* model = nullptr;
    PipelineConfig cfg;
};

namespace detail {

inline MetricsReport train_and_score(const Environment& env, const AblationInputs& in, const AgentConfig& agents,
                                     const std::string& tag, bool& diverged) {
    const auto r = run_training(env, *in.h, *in.model, agents);
    diverged = r.diverged;
    EvalOptions opt;
    opt.per_user = in.cfg.per_user_metrics;
    opt.include_cold = in.cfg.mdp.include_cold;
    auto m = evaluate(r.bundle, env, opt).report;
    m.tag = tag;
    m.seed = agents.seed;
    return m;
}

}  // namespace detail

inline AblationReport run_ablation(AblationKind kind, const AblationInputs& in) {
    require(in.ds && in.h && in.model, "ablation inputs are incomplete");
    AblationReport out;
    out.kind = kind;
    EvalOptions opt;
    opt.per_user = in.cfg.per_user_metrics;
    opt.include_cold = in.cfg.mdp.include_cold;
    switch (kind) {
        case AblationKind::agents: {
            const auto env = make_environment(*in.ds, *in.h, *in.model, in.cfg);
            for (auto v : kAgentVariants) {
                bool div = false;
                out.reports.push_back(detail::train_and_score(env, in, apply_variant(in.cfg.agents, v), to_string(v), div));
                out.diverged.push_back(div);
            }
            for (const auto& [tag, pred] : {std::pair{"popularity", popularity_baseline(env)},
                                            std::pair{"user_frequency", user_frequency_baseline(env)}}) {
                auto m = evaluate_predictor(env, pred, opt).report;
                m.tag = tag;
                out.reports.push_back(std::move(m));
                out.diverged.push_back(false);
            }
            break;
        }
        case AblationKind::hyperedges:
            for (const auto& v : hyperedge_variants()) {
                const auto env = make_environment(*in.ds, *in.h, *in.model, in.cfg, EdgeMask::from_string(v.mask));
                bool div = false;
                out.reports.push_back(detail::train_and_score(env, in, in.cfg.agents, v.tag, div));
                out.diverged.push_back(div);
            }
            break;
        case AblationKind::reward_spatial:
        case AblationKind::reward_temporal: {
            const bool spatial = kind == AblationKind::reward_spatial;
            for (const auto& w : simplex_grid(spatial ? 3 : 2, 10)) {
                auto cfg = in.cfg;
                if (spatial) {
                    cfg.mdp.weights.w_d = w[0];
                    cfg.mdp.weights.w_c = w[1];
                    cfg.mdp.weights.w_ps = w[2];
                } else {
                    cfg.mdp.weights.w_t = w[0];
                    cfg.mdp.weights.w_pt = w[1];
                }
                const auto env = make_environment(*in.ds, *in.h, *in.model, cfg);
                char tag[64];
                if (spatial) std::snprintf(tag, sizeof tag, "w=%.1f/%.1f/%.1f", w[0], w[1], w[2]);
                else std::snprintf(tag, sizeof tag, "w=%.1f/%.1f", w[0], w[1]);
                bool div = false;
                out.reports.push_back(detail::train_and_score(env, in, cfg.agents, tag, div));
                out.weights.push_back(w);
                out.diverged.push_back(div);
            }
            break;
        }
    }
    return out;
}

}  // namespace stihrl

#pragma once

// Spatial and temporal next-POI policies, the gated mixture over them, and
// REINFORCE training over replayed user histories.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "common.hpp"
#include "config.hpp"
#include "environment.hpp"
#include "metrics.hpp"
#include "tensor.hpp"

namespace stihrl {

enum class AgentKind { spatial, temporal };

enum class GateMode { state_gate, global_scalar, fixed };

inline GateMode gate_mode_from_string(const std::string& s) {
    if (s == "state_gate") return GateMode::state_gate;
    if (s == "global_scalar") return GateMode::global_scalar;
    if (s == "fixed") return GateMode::fixed;
    fail(ErrorKind::config, "unknown gate mode: " + s);
}

inline std::string to_string(GateMode m) {
    switch (m) {
        case GateMode::state_gate: return "state_gate";
        case GateMode::global_scalar: return "global_scalar";
        case GateMode::fixed: return "fixed";
    }
    return "state_gate";
}

inline constexpr double kBetaFloor = 1e-6;

struct AgentConfig {
    std::size_t hidden = 64;
    std::size_t gate_hidden = 32;
    GateMode gate_mode = GateMode::state_gate;
    double fixed_beta = 0.5;  // fixed mode only
    double lr = 1e-3;
    double eta = 0.01;
    double gamma = 0.95;
    double baseline_decay = 0.99;
    std::size_t epochs = 10;
    std::size_t batch_users = 1;
    std::uint64_t seed = 0;
    bool learn_lambda = true;
    bool learn_reward_weights = true;
    bool joint_finetune = false;
    bool train_spatial = true;
    bool train_temporal = true;

    void validate() const {
        if (!(gamma >= 0.0 && gamma <= 1.0)) fail(ErrorKind::config, "train.gamma must lie in [0, 1]");
        if (!(lr > 0.0) || !(eta > 0.0)) fail(ErrorKind::config, "learning rates must be positive");
        if (!(fixed_beta >= 0.0 && fixed_beta <= 1.0)) fail(ErrorKind::config, "gate.fixed_beta must lie in [0, 1]");
        if (!(baseline_decay >= 0.0 && baseline_decay < 1.0)) fail(ErrorKind::config, "train.baseline_decay must lie in [0, 1)");
        if (batch_users == 0 || hidden == 0 || gate_hidden == 0) fail(ErrorKind::config, "sizes must be positive");
    }

    static AgentConfig from_config(const Config& cfg) {
        AgentConfig a;
        a.hidden = static_cast<std::size_t>(cfg.get_int("policy.hidden", static_cast<long long>(a.hidden)));
        a.gate_hidden = static_cast<std::size_t>(cfg.get_int("gate.hidden", static_cast<long long>(a.gate_hidden)));
        a.gate_mode = gate_mode_from_string(cfg.get_string("gate.mode", to_string(a.gate_mode)));
        a.fixed_beta = cfg.get_double("gate.fixed_beta", a.fixed_beta);
        a.lr = cfg.get_double("train.lr", a.lr);
        a.eta = cfg.get_double("train.eta", a.eta);
        a.gamma = cfg.get_double("train.gamma", cfg.get_double("mdp.gamma", a.gamma));
        a.baseline_decay = cfg.get_double("train.baseline_decay", a.baseline_decay);
        a.epochs = static_cast<std::size_t>(cfg.get_int("train.epochs", static_cast<long long>(a.epochs)));
        a.batch_users = static_cast<std::size_t>(cfg.get_int("train.batch_users", static_cast<long long>(a.batch_users)));
        a.seed = static_cast<std::uint64_t>(cfg.get_int("train.seed", cfg.get_int("seed", 0)));
        a.learn_lambda = cfg.get_bool("gate.learn_lambda", a.learn_lambda);
        a.learn_reward_weights = cfg.get_bool("reward.high.learn", a.learn_reward_weights);
        a.joint_finetune = cfg.get_bool("embed.joint_finetune", a.joint_finetune);
        a.validate();
        return a;
    }
};

// ---------------------------------------------------------------------------
// State normalization

/// Per-dimension z-scores fitted on training states.
struct StateNormalizer {
    Vec mean, scale;

    static StateNormalizer fit(const std::vector<Vec>& states, std::size_t dim) {
        StateNormalizer n;
        n.mean.assign(dim, 0.0);
        n.scale.assign(dim, 1.0);
        if (states.empty()) return n;
        for (const auto& s : states) axpy(1.0, s, n.mean);
        for (auto& m : n.mean) m /= static_cast<double>(states.size());
        Vec var(dim, 0.0);
        for (const auto& s : states)
            for (std::size_t i = 0; i < dim; ++i) var[i] += (s[i] - n.mean[i]) * (s[i] - n.mean[i]);
        for (std::size_t i = 0; i < dim; ++i) {
            const double sd = std::sqrt(var[i] / static_cast<double>(states.size()));
            n.scale[i] = sd > 1e-6 ? 1.0 / sd : 1.0;
        }
        return n;
    }

    Vec apply(std::span<const double> s) const {
        require(s.size() == mean.size(), "state normalizer dimension mismatch");
        Vec out(s.size());
        for (std::size_t i = 0; i < s.size(); ++i) out[i] = (s[i] - mean[i]) * scale[i];
        return out;
    }
};

// ---------------------------------------------------------------------------
// Policies

/// Candidate scores: dot(out_embed, h_c)/√d + dot(out_context, f_c) + bias_c,
/// where out = MLP(state).
struct PolicyParams {
    MlpParams net;  // [state_dim, hidden, d + kContextFeatures]
    Vec poi_bias;

    static PolicyParams init(std::size_t state_dim, std::size_t hidden, std::size_t d, std::size_t poi_count, Rng& rng) {
        return {MlpParams::init({state_dim, hidden, d + kContextFeatures}, Activation::relu, OutputHead::linear, rng),
                Vec(poi_count, 0.0)};
    }

    std::size_t embed_dim() const { return net.output_dim() - kContextFeatures; }

    ParamList params(const std::string& prefix) {
        auto p = net.params(prefix);
        p.push_back({prefix + "poi_bias", poi_bias});
        return p;
    }

    PolicyParams zeros_like() const { return {net.zeros_like(), Vec(poi_bias.size(), 0.0)}; }
};

struct PolicyForward {
    Vec out;
    MlpCache cache;
    Vec scores;
    Vec probs;
};

inline PolicyForward policy_forward(const PolicyParams& p, const Matrix& poi_table, std::span<const double> state,
                                    std::span<const std::uint32_t> candidates, const Matrix& features) {
    if (candidates.empty()) fail(ErrorKind::invalid_argument, "policy over an empty candidate set");
    require(features.rows() == candidates.size() && features.cols() == kContextFeatures, "context feature shape mismatch");
    const std::size_t d = p.embed_dim();
    require(poi_table.cols() == d, "POI embedding width does not match the policy head");
    PolicyForward f;
    std::tie(f.out, f.cache) = mlp_forward(p.net, state);
    const double inv = 1.0 / std::sqrt(static_cast<double>(d));
    const std::span<const double> head(f.out.data(), d), ctx(f.out.data() + d, kContextFeatures);
    f.scores.resize(candidates.size());
    for (std::size_t c = 0; c < candidates.size(); ++c)
        f.scores[c] = dot(head, poi_table.row(candidates[c])) * inv + dot(ctx, features.row(c)) + p.poi_bias.at(candidates[c]);
    f.probs = softmax(f.scores);
    if (!all_finite(f.probs)) fail(ErrorKind::numeric, "policy produced non-finite probabilities");
    return f;
}

/// Probability vector over candidates.
inline Vec policy_distribution(const PolicyParams& p, const Matrix& poi_table, std::span<const double> state,
                               std::span<const std::uint32_t> candidates, const Matrix& features) {
    return policy_forward(p, poi_table, state, candidates, features).probs;
}

/// Accumulates weight · ∇ log π(candidates[action]) into grad (and the POI
/// table gradient when given).
inline void policy_backward(const PolicyParams& p, const Matrix& poi_table, const PolicyForward& f,
                            std::span<const std::uint32_t> candidates, const Matrix& features, std::size_t action,
                            double weight, PolicyParams& grad, Matrix* poi_grad = nullptr) {
    require(action < candidates.size(), "action outside the candidate set");
    if (weight == 0.0) return;
    const std::size_t d = p.embed_dim();
    const double inv = 1.0 / std::sqrt(static_cast<double>(d));
    Vec d_out(d + kContextFeatures, 0.0);
    for (std::size_t c = 0; c < candidates.size(); ++c) {
        const double ds = weight * ((c == action ? 1.0 : 0.0) - f.probs[c]);
        if (ds == 0.0) continue;
        const auto h = poi_table.row(candidates[c]);
        for (std::size_t k = 0; k < d; ++k) d_out[k] += ds * h[k] * inv;
        for (std::size_t k = 0; k < kContextFeatures; ++k) d_out[d + k] += ds * features(c, k);
        grad.poi_bias[candidates[c]] += ds;
        if (poi_grad) axpy(ds * inv, std::span<const double>(f.out.data(), d), poi_grad->row(candidates[c]));
    }
    mlp_backward_into(p.net, f.cache, d_out, grad.net);
}

// ---------------------------------------------------------------------------
// Gate and mixture

struct GateParams {
    GateMode mode = GateMode::state_gate;
    double fixed_beta = 0.5;
    MlpParams net;  // [state_dim, gate_hidden, 1]
    Vec beta_logit{0.0};    // global_scalar mode
    Vec lambda_logit{0.0};  // λ_S = logistic(·)
    Vec reward_logit{0.0};  // w_S = logistic(·)

    static GateParams init(std::size_t state_dim, std::size_t hidden, GateMode mode, double fixed_beta, double w_S, Rng& rng) {
        GateParams g;
        g.mode = mode;
        g.fixed_beta = fixed_beta;
        g.net = MlpParams::init({state_dim, hidden, 1}, Activation::tanh, OutputHead::linear, rng);
        // Start at β = 0.5 with a zero output layer.
        g.net.weights.back().fill(0.0);
        const double w = std::clamp(w_S, kBetaFloor, 1.0 - kBetaFloor);
        g.reward_logit[0] = std::log(w / (1.0 - w));
        return g;
    }

    double lambda_spatial() const { return logistic(lambda_logit[0]); }
    double reward_spatial_weight() const { return logistic(reward_logit[0]); }

    ParamList params() {
        auto p = net.params("gate.");
        p.push_back({"gate.beta_logit", beta_logit});
        p.push_back({"gate.lambda_logit", lambda_logit});
        return p;
    }

    GateParams zeros_like() const {
        GateParams g = *this;
        g.net = net.zeros_like();
        g.beta_logit = {0.0};
        g.lambda_logit = {0.0};
        g.reward_logit = {0.0};
        return g;
    }
};

struct GateForward {
    Vec s_integrated;
    double logit = 0.0;
    double beta = 0.5;
    bool saturated = false;
    MlpCache cache;
};

inline GateForward gate_forward(const GateParams& g, std::span<const double> s_spatial, std::span<const double> s_temporal) {
    GateForward f;
    const double ls = g.lambda_spatial();
    f.s_integrated = integrated_state(s_spatial, s_temporal, ls, 1.0 - ls);
    switch (g.mode) {
        case GateMode::fixed:
            f.beta = g.fixed_beta;
            f.saturated = true;
            return f;
        case GateMode::global_scalar: f.logit = g.beta_logit[0]; break;
        case GateMode::state_gate: {
            auto [out, cache] = mlp_forward(g.net, f.s_integrated);
            f.logit = out[0];
            f.cache = std::move(cache);
            break;
        }
    }
    const double b = logistic(f.logit);
    f.beta = std::clamp(b, kBetaFloor, 1.0 - kBetaFloor);
    f.saturated = b != f.beta || !std::isfinite(f.logit);
    return f;
}

/// β for an integrated state computed directly.
inline double compute_gate(std::span<const double> s_integrated, const GateParams& g) {
    double logit = 0.0;
    switch (g.mode) {
        case GateMode::fixed: return g.fixed_beta;
        case GateMode::global_scalar: logit = g.beta_logit[0]; break;
        case GateMode::state_gate: logit = mlp_forward(g.net, s_integrated).first[0]; break;
    }
    if (std::isnan(logit)) fail(ErrorKind::numeric, "gate logit is NaN");
    return std::clamp(logit >= 0 ? 1.0 / (1.0 + std::exp(-logit)) : std::exp(logit) / (1.0 + std::exp(logit)), kBetaFloor,
                      1.0 - kBetaFloor);
}

/// Accumulates d_beta · ∂β/∂θ_gate (network, scalar logit, λ logit).
inline void gate_backward(const GateParams& g, const GateForward& f, std::span<const double> s_spatial,
                          std::span<const double> s_temporal, double d_beta, GateParams& grad, bool learn_lambda) {
    if (f.saturated || g.mode == GateMode::fixed || d_beta == 0.0) return;
    const double d_logit = d_beta * f.beta * (1.0 - f.beta);
    if (g.mode == GateMode::global_scalar) {
        grad.beta_logit[0] += d_logit;
        return;
    }
    const Vec upstream{d_logit};
    const Vec ds = mlp_backward_into(g.net, f.cache, upstream, grad.net);
    if (learn_lambda) {
        const double ls = g.lambda_spatial();
        double acc = 0.0;
        for (std::size_t i = 0; i < ds.size(); ++i) acc += ds[i] * (s_spatial[i] - s_temporal[i]);
        grad.lambda_logit[0] += acc * ls * (1.0 - ls);
    }
}

inline Vec mixture_policy(std::span<const double> pi_spatial, std::span<const double> pi_temporal, double beta) {
    if (pi_spatial.size() != pi_temporal.size())
        fail(ErrorKind::invalid_argument, "mixture over candidate lists of different length");
    require(beta >= 0.0 && beta <= 1.0, "mixture weight must lie in [0, 1]");
    Vec out(pi_spatial.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = beta * pi_spatial[i] + (1.0 - beta) * pi_temporal[i];
    return out;
}

/// Candidate positions by descending probability, ties by position.
inline std::vector<std::size_t> order_by_probability(std::span<const double> probs) {
    std::vector<std::size_t> idx(probs.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
    return idx;
}

/// POIs ranked with `first` (a candidate position) on top, then the rest by
/// descending probability.
inline std::vector<std::uint32_t> ranked_list(std::span<const std::uint32_t> candidates, std::span<const double> probs,
                                              std::optional<std::size_t> first = std::nullopt) {
    std::vector<std::uint32_t> out;
    out.reserve(candidates.size());
    if (first) out.push_back(candidates[*first]);
    for (auto i : order_by_probability(probs))
        if (!first || i != *first) out.push_back(candidates[i]);
    return out;
}

// ---------------------------------------------------------------------------
// Bundle

/// Rows of the vertex table that belong to POI vertices, in POI order.
inline Matrix poi_embedding_table(const Matrix& h, const EmbeddingModel& m) {
    const std::size_t n = m.channel_sizes[static_cast<std::size_t>(Channel::poi)];
    Matrix out(n, h.cols());
    for (std::uint32_t p = 0; p < n; ++p) {
        const auto row = h.row(m.global_index(VertexId{Channel::poi, p}));
        std::copy(row.begin(), row.end(), out.row(p).begin());
    }
    return out;
}

struct AgentBundle {
    AgentConfig config;
    StateNormalizer spatial_norm, temporal_norm;
    PolicyParams spatial, temporal;
    GateParams gate;
    Matrix poi_table;  // candidate embeddings (POI vertex embeddings)
    std::vector<double> popularity;
    std::string candidate_mode = "full";

    double w_spatial() const { return config.learn_reward_weights ? gate.reward_spatial_weight() : fixed_w_spatial; }
    double fixed_w_spatial = 0.5;
};

/// Fits the normalizers on non-cold training steps and initializes the nets.
inline AgentBundle init_bundle(const Environment& env, const Matrix& poi_table, const AgentConfig& cfg) {
    cfg.validate();
    const auto& ds = env.dataset();
    require(poi_table.rows() == ds.poi_count(), "POI table does not cover the vocabulary");
    AgentBundle b;
    b.config = cfg;
    b.poi_table = poi_table;
    b.popularity = env.tables().popularity;
    b.candidate_mode = env.config().candidates.to_string();
    b.fixed_w_spatial = env.config().weights.w_S;
    const std::size_t sd = env.state_dim();
    std::vector<Vec> ss, ts;
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        if (ds.split_of(i) != Split::train || env.prefix().cold[i]) continue;
        ss.push_back(spatial_state(env.prefix(), i));
        ts.push_back(temporal_state(env.prefix(), i));
    }
    b.spatial_norm = StateNormalizer::fit(ss, sd);
    b.temporal_norm = StateNormalizer::fit(ts, sd);
    Rng rng(derive_seed(cfg.seed, 0xA6E7));
    b.spatial = PolicyParams::init(sd, cfg.hidden, poi_table.cols(), ds.poi_count(), rng);
    b.temporal = PolicyParams::init(sd, cfg.hidden, poi_table.cols(), ds.poi_count(), rng);
    b.gate = GateParams::init(sd, cfg.gate_hidden, cfg.gate_mode, cfg.fixed_beta, env.config().weights.w_S, rng);
    return b;
}

// ---------------------------------------------------------------------------
// Inference

struct StepPrediction {
    PolicyForward spatial, temporal;
    GateForward gate;
    Vec s_spatial, s_temporal;  // normalized
    Vec mixture;
};

inline StepPrediction predict_step(const AgentBundle& b, const StepView& v) {
    StepPrediction p;
    p.s_spatial = b.spatial_norm.apply(v.spatial_state);
    p.s_temporal = b.temporal_norm.apply(v.temporal_state);
    p.spatial = policy_forward(b.spatial, b.poi_table, p.s_spatial, v.candidates, v.spatial_features);
    p.temporal = policy_forward(b.temporal, b.poi_table, p.s_temporal, v.candidates, v.temporal_features);
    p.gate = gate_forward(b.gate, p.s_spatial, p.s_temporal);
    p.mixture = mixture_policy(p.spatial.probs, p.temporal.probs, p.gate.beta);
    return p;
}

/// Candidate POIs by global training popularity, ties by index.
inline std::vector<std::uint32_t> popularity_ranking(std::span<const std::uint32_t> candidates,
                                                     std::span<const double> popularity) {
    std::vector<std::uint32_t> out(candidates.begin(), candidates.end());
    std::stable_sort(out.begin(), out.end(), [&](auto a, auto b) { return popularity[a] > popularity[b]; });
    return out;
}

/// Greedy ranking by the mixture; cold steps fall back to popularity.
inline RankedPrediction predict(const AgentBundle& b, const StepView& v) {
    RankedPrediction r;
    r.user = v.user;
    r.actual = v.actual;
    r.cold = v.cold;
    if (v.cold) {
        r.ranked = popularity_ranking(v.candidates, b.popularity);
        r.beta = std::numeric_limits<double>::quiet_NaN();
        return r;
    }
    const auto p = predict_step(b, v);
    r.ranked = ranked_list(v.candidates, p.mixture);
    r.beta = p.gate.beta;
    return r;
}

/// Predictions for every step of a split (cold steps included and flagged).
inline std::vector<RankedPrediction> predict_split(const AgentBundle& b, const Environment& env, Split split) {
    std::vector<RankedPrediction> out;
    const auto& ds = env.dataset();
    for (std::uint32_t u = 0; u < ds.user_count(); ++u)
        for (auto i : env.steps(u, split)) {
            auto r = predict(b, env.view(i));
            r.timestamp = ds.records[i].timestamp;
            out.push_back(std::move(r));
        }
    return out;
}

inline std::vector<RankedPrediction> warm_only(std::vector<RankedPrediction> preds) {
    std::erase_if(preds, [](const RankedPrediction& p) { return p.cold; });
    return preds;
}

// ---------------------------------------------------------------------------
// REINFORCE

/// Discounted returns G_t = Σ_k γ^k r_{t+k}.
inline Vec discounted_returns(std::span<const double> rewards, double gamma) {
    Vec g(rewards.size());
    double acc = 0.0;
    for (std::size_t i = rewards.size(); i-- > 0;) {
        acc = rewards[i] + gamma * acc;
        g[i] = acc;
    }
    return g;
}

struct TraceStep {
    std::size_t record = 0;
    StepPrediction prediction;
    std::size_t action_spatial = 0, action_temporal = 0, action_mixture = 0;
    double r_spatial = 0, r_temporal = 0, r_integrated = 0;
    double r_spatial_of_mixture = 0, r_temporal_of_mixture = 0;
    StepView view;
};

struct EpisodeTrace {
    std::uint32_t user = 0;
    std::vector<TraceStep> steps;
};

/// Rolls out one user's training split with sampled actions.
inline EpisodeTrace rollout(const AgentBundle& b, const Environment& env, std::uint32_t user, Rng& rng, Split split = Split::train) {
    EpisodeTrace t;
    t.user = user;
    ReplayEpisode ep(env, user, split);
    while (!ep.done()) {
        const auto& v = ep.current();
        if (v.cold) {
            ep.step(popularity_ranking(v.candidates, b.popularity));
            continue;
        }
        TraceStep s;
        s.record = v.record;
        s.view = v;
        s.prediction = predict_step(b, v);
        const auto& p = s.prediction;
        s.action_spatial = rng.categorical(p.spatial.probs);
        s.action_temporal = rng.categorical(p.temporal.probs);
        s.action_mixture = rng.categorical(p.mixture);
        const auto ls = ranked_list(v.candidates, p.spatial.probs, s.action_spatial);
        const auto lt = ranked_list(v.candidates, p.temporal.probs, s.action_temporal);
        const auto li = ranked_list(v.candidates, p.mixture, s.action_mixture);
        s.r_spatial = env.rewards(v, ls).spatial.value;
        s.r_temporal = env.rewards(v, lt).temporal.value;
        const auto ri = env.rewards(v, li);
        s.r_spatial_of_mixture = ri.spatial.value;
        s.r_temporal_of_mixture = ri.temporal.value;
        const double ws = b.w_spatial();
        s.r_integrated = reward_high(ri.spatial.value, ri.temporal.value, ws, 1.0 - ws);
        ep.step(li);
        t.steps.push_back(std::move(s));
    }
    return t;
}

/// Exponential moving average baselines, one per reward stream.
struct Baselines {
    double spatial = 0, temporal = 0, integrated = 0;
};

struct BundleGradients {
    PolicyParams spatial, temporal;
    GateParams gate;
    Matrix poi_table;
    double reward_logit = 0.0;
    std::size_t steps = 0;

    static BundleGradients zeros(const AgentBundle& b) {
        return {b.spatial.zeros_like(), b.temporal.zeros_like(), b.gate.zeros_like(),
                Matrix(b.poi_table.rows(), b.poi_table.cols()), 0.0, 0};
    }
};

/// Accumulates the REINFORCE estimator of every trace into `g` and advances
/// the baselines.
inline void accumulate_gradients(const AgentBundle& b, const std::vector<EpisodeTrace>& traces, Baselines& base,
                                 BundleGradients& g) {
    const auto& cfg = b.config;
    for (const auto& t : traces) {
        Vec rs, rt, ri;
        for (const auto& s : t.steps) {
            rs.push_back(s.r_spatial);
            rt.push_back(s.r_temporal);
            ri.push_back(s.r_integrated);
        }
        const auto gs = discounted_returns(rs, cfg.gamma), gt = discounted_returns(rt, cfg.gamma),
                   gi = discounted_returns(ri, cfg.gamma);
        for (std::size_t i = 0; i < t.steps.size(); ++i) {
            const auto& s = t.steps[i];
            const auto& p = s.prediction;
            const auto& v = s.view;
            Matrix* poi_grad = cfg.joint_finetune ? &g.poi_table : nullptr;
            if (cfg.train_spatial)
                policy_backward(b.spatial, b.poi_table, p.spatial, v.candidates, v.spatial_features, s.action_spatial,
                                gs[i] - base.spatial, g.spatial, poi_grad);
            if (cfg.train_temporal)
                policy_backward(b.temporal, b.poi_table, p.temporal, v.candidates, v.temporal_features, s.action_temporal,
                                gt[i] - base.temporal, g.temporal, poi_grad);
            // ∂ log π_I(a) / ∂β = (π_S(a) − π_T(a)) / π_I(a)
            const auto a = s.action_mixture;
            const double d_beta = (p.spatial.probs[a] - p.temporal.probs[a]) / std::max(p.mixture[a], 1e-300);
            gate_backward(b.gate, p.gate, p.s_spatial, p.s_temporal, d_beta * (gi[i] - base.integrated), g.gate,
                          cfg.learn_lambda);
            if (cfg.learn_reward_weights) {
                const double ws = b.gate.reward_spatial_weight();
                g.reward_logit += ws * (1.0 - ws) * (s.r_spatial_of_mixture - s.r_temporal_of_mixture);
            }
            const double k = cfg.baseline_decay;
            base.spatial = k * base.spatial + (1 - k) * gs[i];
            base.temporal = k * base.temporal + (1 - k) * gt[i];
            base.integrated = k * base.integrated + (1 - k) * gi[i];
            ++g.steps;
        }
    }
}

struct Optimizers {
    AdamState spatial, temporal, gate, reward, poi_table;

    explicit Optimizers(const AgentConfig& c) : spatial(c.lr), temporal(c.lr), gate(c.eta), reward(c.eta), poi_table(c.lr) {}
};

/// One ascent step on the averaged estimator. Throws numeric (before any
/// parameter changes) on a non-finite gradient.
inline void apply_gradients(AgentBundle& b, BundleGradients& g, Optimizers& opt) {
    if (g.steps == 0) return;
    const double scale = 1.0 / static_cast<double>(g.steps);
    auto gs = g.spatial.params("spatial.");
    auto gt = g.temporal.params("temporal.");
    auto gg = g.gate.params();
    for (auto* list : {&gs, &gt, &gg})
        for (auto& blk : *list)
            for (auto& x : blk.values) x *= scale;
    for (auto& x : g.poi_table.values()) x *= scale;
    g.reward_logit *= scale;
    for (auto* list : {&gs, &gt, &gg})
        if (!all_finite(flatten(*list))) fail(ErrorKind::numeric, "non-finite policy gradient");
    if (!std::isfinite(g.reward_logit) || !all_finite(g.poi_table.values()))
        fail(ErrorKind::numeric, "non-finite reward-weight or embedding gradient");
    const auto& cfg = b.config;
    if (cfg.train_spatial) {
        auto ps = b.spatial.params("spatial.");
        adam_step(ps, gs, opt.spatial, Direction::ascent);
        ++b.spatial.net.revision;
    }
    if (cfg.train_temporal) {
        auto pt = b.temporal.params("temporal.");
        adam_step(pt, gt, opt.temporal, Direction::ascent);
        ++b.temporal.net.revision;
    }
    if (b.gate.mode != GateMode::fixed) {
        auto pg = b.gate.params();
        adam_step(pg, gg, opt.gate, Direction::ascent);
        ++b.gate.net.revision;
    }
    if (cfg.learn_reward_weights) {
        Vec gr{g.reward_logit};
        ParamList pr{{"reward_logit", b.gate.reward_logit}}, grl{{"reward_logit", gr}};
        adam_step(pr, grl, opt.reward, Direction::ascent);
    }
    if (cfg.joint_finetune) {
        ParamList pp{{"poi_table", b.poi_table.values()}}, gp{{"poi_table", g.poi_table.values()}};
        adam_step(pp, gp, opt.poi_table, Direction::ascent);
    }
    for (double z : {b.gate.beta_logit[0], b.gate.lambda_logit[0], b.gate.reward_logit[0]})
        if (!std::isfinite(z)) fail(ErrorKind::numeric, "gate logit left its domain");
}

/// One-call update for a batch of traces.
inline void reinforce_update(AgentBundle& b, const std::vector<EpisodeTrace>& traces, Baselines& base, Optimizers& opt) {
    auto g = BundleGradients::zeros(b);
    accumulate_gradients(b, traces, base, g);
    apply_gradients(b, g, opt);
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainLogRow {
    std::size_t epoch = 0;
    double mean_r_spatial = 0, mean_r_temporal = 0, mean_r_integrated = 0;
    double val_recall5 = 0;
    double mean_beta = 0;
};

struct TrainResult {
    AgentBundle bundle;  // best on validation
    std::vector<TrainLogRow> log;
    bool diverged = false;
    std::string divergence;
    std::size_t best_epoch = 0;
};

inline double validation_recall5(const AgentBundle& b, const Environment& env) {
    const auto preds = warm_only(predict_split(b, env, Split::val));
    return preds.empty() ? 0.0 : recall_at_k(preds, 5);
}

inline TrainResult train(const Environment& env, AgentBundle bundle) {
    const auto& cfg = bundle.config;
    const auto& ds = env.dataset();
    if (ds.train_event_count() == 0) fail(ErrorKind::invalid_argument, "training split is empty");
    TrainResult result{bundle, {}, false, {}, 0};
    if (cfg.epochs == 0) return result;
    Optimizers opt(cfg);
    Baselines base;
    Rng rng(derive_seed(cfg.seed, 0x7A1));
    std::vector<std::uint32_t> users(ds.user_count());
    std::iota(users.begin(), users.end(), 0u);
    double best = -1.0;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        rng.shuffle(users);
        TrainLogRow row;
        row.epoch = epoch;
        std::size_t steps = 0;
        try {
            for (std::size_t start = 0; start < users.size(); start += cfg.batch_users) {
                std::vector<EpisodeTrace> batch;
                for (std::size_t i = start; i < std::min(users.size(), start + cfg.batch_users); ++i) {
                    Rng user_rng(derive_seed(rng.next(), users[i]));
                    batch.push_back(rollout(bundle, env, users[i], user_rng));
                    for (const auto& s : batch.back().steps) {
                        row.mean_r_spatial += s.r_spatial;
                        row.mean_r_temporal += s.r_temporal;
                        row.mean_r_integrated += s.r_integrated;
                        row.mean_beta += s.prediction.gate.beta;
                        ++steps;
                    }
                }
                reinforce_update(bundle, batch, base, opt);
            }
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::numeric) throw;
            result.diverged = true;
            result.divergence = e.what();
            return result;
        }
        if (steps > 0) {
            const double n = static_cast<double>(steps);
            row.mean_r_spatial /= n;
            row.mean_r_temporal /= n;
            row.mean_r_integrated /= n;
            row.mean_beta /= n;
        }
        row.val_recall5 = validation_recall5(bundle, env);
        result.log.push_back(row);
        if (row.val_recall5 > best) {
            best = row.val_recall5;
            result.bundle = bundle;
            result.best_epoch = epoch;
        }
    }
    return result;
}

inline std::string format_train_log(const std::vector<TrainLogRow>& log) {
    std::string out = "epoch,mean_r_S,mean_r_T,mean_r_I,val_recall@5,mean_beta\n";
    char buf[256];
    for (const auto& r : log) {
        std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%.6f,%.6f,%.6f\n", r.epoch, r.mean_r_spatial, r.mean_r_temporal,
                      r.mean_r_integrated, r.val_recall5, r.mean_beta);
        out += buf;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline nlohmann::json to_json(const AgentBundle& b) {
    const auto& c = b.config;
    nlohmann::json j;
    j["format"] = "stihrl-agents";
    j["version"] = 1;
    j["config"] = {{"hidden", c.hidden},
                   {"gate_hidden", c.gate_hidden},
                   {"gate_mode", to_string(c.gate_mode)},
                   {"fixed_beta", c.fixed_beta},
                   {"lr", c.lr},
                   {"eta", c.eta},
                   {"gamma", c.gamma},
                   {"baseline_decay", c.baseline_decay},
                   {"epochs", c.epochs},
                   {"batch_users", c.batch_users},
                   {"seed", c.seed},
                   {"learn_lambda", c.learn_lambda},
                   {"learn_reward_weights", c.learn_reward_weights},
                   {"joint_finetune", c.joint_finetune},
                   {"train_spatial", c.train_spatial},
                   {"train_temporal", c.train_temporal}};
    j["normalizers"] = {{"spatial", {b.spatial_norm.mean, b.spatial_norm.scale}},
                        {"temporal", {b.temporal_norm.mean, b.temporal_norm.scale}}};
    j["spatial"] = {{"net", b.spatial.net}, {"poi_bias", b.spatial.poi_bias}};
    j["temporal"] = {{"net", b.temporal.net}, {"poi_bias", b.temporal.poi_bias}};
    j["gate"] = {{"mode", to_string(b.gate.mode)},
                 {"fixed_beta", b.gate.fixed_beta},
                 {"net", b.gate.net},
                 {"beta_logit", b.gate.beta_logit[0]},
                 {"lambda_logit", b.gate.lambda_logit[0]},
                 {"reward_logit", b.gate.reward_logit[0]}};
    j["poi_table"] = b.poi_table;
    j["popularity"] = b.popularity;
    j["candidate_mode"] = b.candidate_mode;
    j["fixed_w_spatial"] = b.fixed_w_spatial;
    return j;
}

inline AgentBundle bundle_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format") != "stihrl-agents" || j.at("version") != 1)
            fail(ErrorKind::corrupt, "not a version-1 agent checkpoint");
        AgentBundle b;
        const auto& c = j.at("config");
        auto& a = b.config;
        a.hidden = c.at("hidden");
        a.gate_hidden = c.at("gate_hidden");
        a.gate_mode = gate_mode_from_string(c.at("gate_mode"));
        a.fixed_beta = c.at("fixed_beta");
        a.lr = c.at("lr");
        a.eta = c.at("eta");
        a.gamma = c.at("gamma");
        a.baseline_decay = c.at("baseline_decay");
        a.epochs = c.at("epochs");
        a.batch_users = c.at("batch_users");
        a.seed = c.at("seed");
        a.learn_lambda = c.at("learn_lambda");
        a.learn_reward_weights = c.at("learn_reward_weights");
        a.joint_finetune = c.at("joint_finetune");
        a.train_spatial = c.at("train_spatial");
        a.train_temporal = c.at("train_temporal");
        const auto& n = j.at("normalizers");
        b.spatial_norm = {n.at("spatial").at(0).get<Vec>(), n.at("spatial").at(1).get<Vec>()};
        b.temporal_norm = {n.at("temporal").at(0).get<Vec>(), n.at("temporal").at(1).get<Vec>()};
        b.spatial = {j.at("spatial").at("net").get<MlpParams>(), j.at("spatial").at("poi_bias").get<Vec>()};
        b.temporal = {j.at("temporal").at("net").get<MlpParams>(), j.at("temporal").at("poi_bias").get<Vec>()};
        const auto& g = j.at("gate");
        b.gate.mode = gate_mode_from_string(g.at("mode"));
        b.gate.fixed_beta = g.at("fixed_beta");
        b.gate.net = g.at("net").get<MlpParams>();
        b.gate.beta_logit = {g.at("beta_logit").get<double>()};
        b.gate.lambda_logit = {g.at("lambda_logit").get<double>()};
        b.gate.reward_logit = {g.at("reward_logit").get<double>()};
        b.poi_table = j.at("poi_table").get<Matrix>();
        b.popularity = j.at("popularity").get<std::vector<double>>();
        b.candidate_mode = j.at("candidate_mode");
        b.fixed_w_spatial = j.at("fixed_w_spatial");
        const std::size_t sd = b.spatial_norm.mean.size();
        if (b.spatial.net.input_dim() != sd || b.temporal.net.input_dim() != sd || b.gate.net.input_dim() != sd ||
            b.spatial.embed_dim() != b.poi_table.cols() || b.spatial.poi_bias.size() != b.poi_table.rows() ||
            b.popularity.size() != b.poi_table.rows())
            fail(ErrorKind::corrupt, "agent checkpoint has inconsistent shapes");
        return b;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::corrupt, std::string("malformed agent checkpoint: ") + e.what());
    }
}

inline void save_bundle(const AgentBundle& b, const std::string& path) { write_file_atomic(path, to_json(b).dump()); }

inline AgentBundle load_bundle(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::missing_artifact, "missing agent checkpoint: " + path);
    try {
        return bundle_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorKind::corrupt, "unreadable agent checkpoint " + path + ": " + e.what());
    }
}

}  // namespace stihrl

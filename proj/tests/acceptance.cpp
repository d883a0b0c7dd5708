// Acceptance run: one PASS/FAIL line per criterion, tolerances pinned below.
//
//   acceptance            run everything
//   acceptance 3 4 7      run a subset
//   acceptance --report F also copy the lines to file F
//
// Exit status is non-zero when any criterion fails, except for the ablation
// ordering on the mixed corpus (criterion 8), which is a known failure; see
// README.md for the analysis.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "stihrl.hpp"

using namespace stihrl;
using Clock = std::chrono::steady_clock;

namespace {

// ---------------------------------------------------------------------------
// Pinned tolerances and budgets

constexpr int kMetricSets = 1000;
constexpr std::size_t kMaxCandidates = 30;
constexpr double kMetricSeconds = 10.0;

constexpr double kReportedRecall5 = 0.4268;  // reported Recall@5, NYC
constexpr double kReportedF15 = 0.1467;      // reported F1@5, NYC
constexpr double kF1Expected = 0.1423;
constexpr double kF1RelativeGap = 0.031;

constexpr double kForwardTolerance = 1e-12;
constexpr std::size_t kForwardMaxVertices = 10;
constexpr int kAttentionCases = 10000;
constexpr double kAttentionSumTolerance = 1e-9;

constexpr double kGradientRelError = 1e-4;
constexpr std::size_t kGradientMaxParams = 1000;
constexpr double kGradientSeconds = 60.0;

constexpr int kRewardEvaluations = 10000;
constexpr double kRewardSlack = 1e-12;

constexpr int kBanditUpdates = 500;
constexpr double kBanditLr = 0.01;
constexpr double kBanditTarget = 0.9;
constexpr double kBanditSeconds = 30.0;

constexpr double kSpatialBetaMin = 0.7;
constexpr double kTemporalBetaMax = 0.3;
constexpr std::size_t kMaxAgentEpochs = 20;
constexpr double kRecoverySeconds = 600.0;

constexpr double kPopularityMargin = 1.2;  // full ≥ 1.2 × popularity
constexpr int kAblationSeeds = 3;
constexpr int kAblationSeedsNeeded = 2;

constexpr int kPrefixProbes = 100;

const std::set<int> kKnownFailures{8};

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

Config synthetic_config() { return Config::load(std::string(STIHRL_CONFIG_DIR) + "/synthetic.conf"); }

// ---------------------------------------------------------------------------
// 1. Metric oracles

struct BruteMetrics {
    double recall = 0, f1 = 0, mrr = 0, ndcg = 0;
};

// Scans the list position by position; per-step values are summed in step
// order and divided once.
BruteMetrics brute_metrics(const std::vector<RankedPrediction>& preds, std::size_t k) {
    BruteMetrics b;
    for (const auto& p : preds) {
        std::size_t rank = 0;
        for (std::size_t i = 0; i < p.ranked.size() && i < k; ++i)
            if (p.ranked[i] == p.actual) {
                rank = i + 1;
                break;
            }
        if (rank == 0) continue;
        // Harmonic mean of precision hit/k and recall hit, kept as an integer
        // ratio 2·hit·hit / (hit + hit·k) so it is rounded once.
        const std::size_t hit = 1;
        b.recall += 1.0;
        b.f1 += static_cast<double>(2 * hit * hit) / static_cast<double>(hit + hit * k);
        b.mrr += 1.0 / static_cast<double>(rank);
        b.ndcg += 1.0 / std::log2(static_cast<double>(rank) + 1.0);
    }
    const double n = static_cast<double>(preds.size());
    return {b.recall / n, b.f1 / n, b.mrr / n, b.ndcg / n};
}

Outcome criterion_metrics() {
    const auto t0 = Clock::now();
    Rng rng(101);
    double worst = 0;
    std::size_t mismatches = 0;
    for (int set = 0; set < kMetricSets; ++set) {
        std::vector<RankedPrediction> preds(1 + rng.below(25));
        for (auto& p : preds) {
            const std::size_t n = 1 + rng.below(kMaxCandidates);
            std::vector<std::uint32_t> pool(kMaxCandidates);
            std::iota(pool.begin(), pool.end(), 0u);
            rng.shuffle(pool);
            p.ranked.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n));
            p.actual = static_cast<std::uint32_t>(rng.below(kMaxCandidates));  // sometimes absent
        }
        const auto report = compute_metrics(preds);
        for (auto k : kCutoffs) {
            const auto b = brute_metrics(preds, k);
            for (auto [name, v] : {std::pair{"recall", b.recall}, {"f1", b.f1}, {"mrr", b.mrr}, {"ndcg", b.ndcg}}) {
                const double d = std::abs(report.at(name, k) - v);
                worst = std::max(worst, d);
                if (d != 0.0) ++mismatches;
            }
        }
    }
    const double secs = seconds_since(t0);
    return {mismatches == 0 && secs < kMetricSeconds,
            fmt("%d sets, %zu mismatches, max |diff| %.3g, %.2f s (limit %.0f s)", kMetricSets, mismatches, worst, secs,
                kMetricSeconds)};
}

// ---------------------------------------------------------------------------
// 2. F1 formula check

Outcome criterion_f1() {
    // A prediction set whose Recall@5 is exactly the reported value.
    std::vector<RankedPrediction> preds(10000);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        preds[i].actual = 7;
        preds[i].ranked = {1, 2, 3, 4, 5, 6};
        if (i < 4268) preds[i].ranked[i % 5] = 7;
    }
    const double recall = recall_at_k(preds, 5), f1 = f1_at_k(preds, 5);
    const double formula = kReportedRecall5 * 2.0 / 6.0;
    const double gap = std::abs(f1 - kReportedF15) / kReportedF15;
    const bool pass = std::abs(recall - kReportedRecall5) < 1e-12 && std::abs(f1 - formula) < 1e-12 &&
                      std::abs(f1 - kF1Expected) < 5e-5 && gap <= kF1RelativeGap;
    return {pass, fmt("Recall@5 %.4f -> F1@5 %.4f (formula %.5f), %.2f%% from reported %.4f (limit %.1f%%)", recall, f1,
                      formula, 100 * gap, kReportedF15, 100 * kF1RelativeGap)};
}

// ---------------------------------------------------------------------------
// 3. Embedding forward correctness

// 3 POIs, 2 categories, 2 zones, 3 slots; 2 users.
MobilityHypergraph ten_vertex_graph() {
    MobilityHypergraph g({3, 2, 2, 3}, 2);
    const std::vector<std::array<std::uint32_t, 5>> events{{0, 0, 0, 0, 0}, {0, 1, 1, 1, 1}, {0, 2, 0, 1, 2},
                                                           {1, 0, 0, 0, 1}, {1, 2, 1, 0, 0}};
    std::array<std::array<std::set<std::uint32_t>, 3>, 2> distinct;
    for (const auto& e : events) {
        distinct[e[0]][0].insert(e[1]);
        distinct[e[0]][1].insert(e[3]);
        distinct[e[0]][2].insert(e[4]);
    }
    constexpr std::array<Channel, 3> ch{Channel::poi, Channel::zone, Channel::time};
    for (std::uint32_t u = 0; u < 2; ++u)
        for (std::size_t k = 0; k < 3; ++k) {
            Hyperedge e{static_cast<EdgeKind>(k), u, u, {}};
            for (auto i : distinct[u][k]) e.members.push_back({ch[k], i});
            g.add_edge(e);
        }
    std::uint32_t n = 0;
    for (const auto& e : events)
        g.add_edge(Hyperedge{EdgeKind::event, n++, e[0],
                             {{Channel::poi, e[1]}, {Channel::category, e[2]}, {Channel::zone, e[3]}, {Channel::time, e[4]}}});
    return g;
}

using LVec = std::vector<long double>;

long double leaky(long double x) { return x > 0 ? x : 0.2L * x; }
long double relu(long double x) { return x > 0 ? x : 0.0L; }

// Straight-line evaluation of the whole forward pass in long double, using
// only the raw parameter matrices and the edge lists.
struct ForwardOracle {
    const MobilityHypergraph& g;
    const EmbeddingModel& m;

    std::size_t d() const { return m.config.dim; }
    std::size_t dh() const { return m.config.dim / m.config.heads; }

    std::vector<std::size_t> neighbors(std::size_t v) const {
        const auto vid = g.vertex_at(v);
        std::set<std::size_t> out;
        for (const auto& e : g.edges()) {
            if (e.kind == EdgeKind::event) continue;
            if (std::find(e.members.begin(), e.members.end(), vid) == e.members.end()) continue;
            for (const auto& u : e.members)
                if (u != vid && u.channel == vid.channel) out.insert(g.global_index(u));
        }
        return {out.begin(), out.end()};
    }

    LVec z(std::size_t v) const {
        const auto& w = m.transform[static_cast<std::size_t>(g.vertex_at(v).channel)];
        LVec out(d(), 0);
        for (std::size_t i = 0; i < d(); ++i)
            for (std::size_t c = 0; c < d(); ++c) out[i] += static_cast<long double>(w(i, c)) * m.features(v, c);
        return out;
    }

    LVec alpha(std::size_t v, const std::vector<std::size_t>& nb, std::size_t head) const {
        const auto& a = m.attention[static_cast<std::size_t>(g.vertex_at(v).channel)];
        const auto zi = z(v);
        std::vector<std::size_t> support{v};
        support.insert(support.end(), nb.begin(), nb.end());
        LVec e;
        long double total = 0;
        for (auto j : support) {
            const auto zj = z(j);
            long double s = 0;
            for (std::size_t k = 0; k < dh(); ++k) s += a(head, k) * zi[head * dh() + k] + a(head, dh() + k) * zj[head * dh() + k];
            e.push_back(std::exp(leaky(s)));
            total += e.back();
        }
        for (auto& x : e) x /= total;
        return e;
    }

    LVec vertex(std::size_t v) const {
        const auto nb = neighbors(v);
        std::vector<std::size_t> support{v};
        support.insert(support.end(), nb.begin(), nb.end());
        LVec h(d(), 0);
        for (std::size_t head = 0; head < m.config.heads; ++head) {
            const auto al = alpha(v, nb, head);
            for (std::size_t j = 0; j < support.size(); ++j) {
                const auto zj = z(support[j]);
                for (std::size_t k = 0; k < dh(); ++k) h[head * dh() + k] += al[j] * zj[head * dh() + k];
            }
        }
        for (auto& x : h) x = relu(x);
        return h;
    }

    LVec homogeneous(EdgeId id) const {
        LVec s(d(), 0);
        for (const auto& v : g.edge(id).members) {
            const auto h = vertex(g.global_index(v));
            for (std::size_t k = 0; k < d(); ++k) s[k] += h[k];
        }
        for (auto& x : s) x = relu(x);
        return s;
    }

    // Linked users: the owner, or (co-visit scope) everyone with an event at
    // a member vertex.
    LVec cross(EdgeId id, LinkScope scope) const {
        const auto& e = g.edge(id);
        std::set<std::uint32_t> users{e.user};
        if (scope == LinkScope::covisit) {
            users.clear();
            for (const auto& ev : g.edges())
                if (ev.kind == EdgeKind::event)
                    for (const auto& v : e.members)
                        if (std::find(ev.members.begin(), ev.members.end(), v) != ev.members.end()) users.insert(ev.user);
        }
        LVec s(d(), 0);
        bool any = false;
        for (auto u : users)
            for (EdgeId k = 0; k < g.edge_count(); ++k) {
                const auto& other = g.edge(k);
                if (other.kind == EdgeKind::event || other.kind == e.kind || other.user != u) continue;
                any = true;
                const auto q = homogeneous(k);
                const auto& a = m.aggregation[static_cast<std::size_t>(other.kind)];
                for (std::size_t i = 0; i < d(); ++i)
                    for (std::size_t j = 0; j < d(); ++j) s[i] += a(i, j) * q[j];
            }
        if (!any) return homogeneous(id);
        for (auto& x : s) x = relu(x);
        return s;
    }
};

Outcome criterion_forward() {
    const auto g = ten_vertex_graph();
    double worst = 0;
    std::size_t compared = 0;
    for (auto scope : {LinkScope::owner, LinkScope::covisit})
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            EmbeddingConfig cfg;
            cfg.dim = 6;
            cfg.heads = 2;
            cfg.neighbor_cap = 64;
            cfg.link_scope = scope;
            Rng rng(seed);
            const auto m = EmbeddingModel::init(g.channel_sizes(), cfg, rng);
            if (m.vertex_count() > kForwardMaxVertices) return {false, "fixture exceeds the vertex budget"};
            const ForwardOracle o{g, m};
            auto cmp = [&](std::span<const double> got, const LVec& want) {
                for (std::size_t k = 0; k < want.size(); ++k) {
                    worst = std::max(worst, static_cast<double>(std::abs(static_cast<long double>(got[k]) - want[k])));
                    ++compared;
                }
            };
            for (std::size_t v = 0; v < g.vertex_count(); ++v) {
                const auto vid = g.vertex_at(v);
                const auto nb = same_channel_neighbors(vid, g, cfg.neighbor_cap, cfg.neighbor_seed);
                std::vector<std::size_t> nbi;
                for (auto n : nb) nbi.push_back(g.global_index(n));
                if (nbi != o.neighbors(v)) return {false, fmt("neighbor set of vertex %zu differs", v)};
                for (std::size_t head = 0; head < cfg.heads; ++head)
                    cmp(attention_coefficients(vid, nb, m, head).weights, o.alpha(v, nbi, head));
                cmp(vertex_embed(vid, g, m), o.vertex(v));
            }
            const auto h = vertex_table(g, m);
            const auto table = embed_hyperedges(g, h, m);
            for (EdgeId id = 0; id < g.edge_count(); ++id) {
                if (g.edge(id).kind == EdgeKind::event) continue;
                cmp(table.homogeneous[id], o.homogeneous(id));
                cmp(table.cross[id], o.cross(id, scope));
            }
        }

    // Attention weights on random graphs and random neighbor subsets.
    Rng gen(303);
    double worst_sum = 0;
    int cases = 0, nonpositive = 0;
    while (cases < kAttentionCases) {
        std::vector<CheckInEvent> events;
        const auto n = 5 + gen.below(30);
        for (std::size_t i = 0; i < n; ++i)
            events.push_back(fixtures::checkin("u" + std::to_string(gen.below(5)), "p" + std::to_string(gen.below(12)),
                                               static_cast<Timestamp>(1000 * i + gen.below(900)),
                                               40.7 + 0.01 * static_cast<double>(gen.below(6)),
                                               -74.0 + 0.01 * static_cast<double>(gen.below(6)),
                                               "c" + std::to_string(gen.below(4))));
        const auto ds = fixtures::train_only(events);
        const auto rg = build_hypergraph(ds);
        EmbeddingConfig cfg;
        cfg.dim = 4 * (1 + gen.below(4));
        cfg.heads = cfg.dim % 8 == 0 ? 4 : 2;
        Rng rng(gen.next());
        const auto m = EmbeddingModel::init(rg.channel_sizes(), cfg, rng);
        for (int rep = 0; rep < 100 && cases < kAttentionCases; ++rep, ++cases) {
            const auto v = rg.vertex_at(gen.below(rg.vertex_count()));
            auto nb = same_channel_neighbors(v, rg, 64);
            if (!nb.empty()) nb = gen.sample(nb, gen.below(nb.size() + 1));
            const auto w = attention_coefficients(v, nb, m, gen.below(cfg.heads)).weights;
            double s = 0;
            for (double x : w) {
                s += x;
                if (!(x > 0)) ++nonpositive;
            }
            worst_sum = std::max(worst_sum, std::abs(s - 1.0));
        }
    }
    const bool pass = worst <= kForwardTolerance && worst_sum <= kAttentionSumTolerance && nonpositive == 0;
    return {pass, fmt("%zu forward values, max |diff| %.2e (limit %.0e); %d attention cases, max |sum-1| %.2e (limit %.0e)",
                      compared, worst, kForwardTolerance, cases, worst_sum, kAttentionSumTolerance)};
}

// ---------------------------------------------------------------------------
// 4. Gradient fidelity

Outcome criterion_gradients() {
    const auto t0 = Clock::now();
    double worst_contrastive = 0, worst_reinforce = 0;
    std::size_t max_params = 0;

    const auto g = ten_vertex_graph();
    for (auto scope : {LinkScope::owner, LinkScope::covisit})
        for (std::uint64_t seed : {18u, 19u}) {
            EmbeddingConfig cfg;
            cfg.dim = 6;
            cfg.heads = 2;
            cfg.link_scope = scope;
            Rng rng(seed);
            auto m = EmbeddingModel::init(g.channel_sizes(), cfg, rng);
            const auto ctx = make_context(g, m);
            std::vector<ContrastiveItem> batch;
            for (EdgeId id = 0; id < g.edge_count(); ++id)
                if (g.edge(id).kind == EdgeKind::event) batch.push_back(sample_item(id, g, 2, rng));
            auto grad = m.zeros_like();
            contrastive_loss(m, ctx, batch, &grad);
            auto params = m.params();
            auto grads = grad.params();
            max_params = std::max(max_params, total_size(params));
            const auto loss = [&] { return contrastive_loss(m, ctx, batch, nullptr); };
            for (std::size_t b = 0; b < params.size(); ++b)
                worst_contrastive = std::max(worst_contrastive, finite_diff_check(loss, params[b].values, grads[b].values, 1e-4));
        }

    // Per-step REINFORCE surrogate on a real rollout: each agent's advantage
    // times its log-probability, plus the integrated advantage times the
    // mixture log-probability as a function of the gate.
    const auto ds = fixtures::nyc_tiny();
    const auto hg = build_hypergraph(ds);
    EmbeddingConfig ec;
    ec.dim = 4;
    ec.heads = 2;
    Rng rng(7);
    const auto model = EmbeddingModel::init(hg.channel_sizes(), ec, rng);
    const auto h = vertex_table(hg, model);
    const Environment env(ds, prefix_embeddings(ds, h, model), RewardTables::build(ds), MdpConfig{});
    AgentConfig ac;
    ac.hidden = 6;
    ac.gate_hidden = 4;
    ac.gamma = 0.0;
    ac.joint_finetune = true;
    ac.learn_reward_weights = false;
    ac.seed = 5;
    auto b = init_bundle(env, poi_embedding_table(h, model), ac);
    for (auto& x : b.gate.net.weights.back().values()) x = rng.uniform(-0.5, 0.5);
    b.gate.lambda_logit[0] = 0.3;
    std::size_t checked_steps = 0;
    for (std::uint32_t user = 0; user < ds.user_count() && checked_steps < 6; ++user) {
        const auto trace = rollout(b, env, user, rng);
        for (const auto& step : trace.steps) {
            if (checked_steps >= 6) break;
            ++checked_steps;
            EpisodeTrace one{user, {step}};
            Baselines base;
            auto grads = BundleGradients::zeros(b);
            accumulate_gradients(b, {one}, base, grads);
            const auto& v = step.view;
            const auto objective = [&] {
                const auto ss = b.spatial_norm.apply(v.spatial_state), st = b.temporal_norm.apply(v.temporal_state);
                const auto ps = policy_distribution(b.spatial, b.poi_table, ss, v.candidates, v.spatial_features);
                const auto pt = policy_distribution(b.temporal, b.poi_table, st, v.candidates, v.temporal_features);
                const double beta = gate_forward(b.gate, ss, st).beta;
                const auto& p = step.prediction;  // agents held fixed inside the mixture term
                const auto a = step.action_mixture;
                const double mix = beta * p.spatial.probs[a] + (1 - beta) * p.temporal.probs[a];
                return step.r_spatial * std::log(ps[step.action_spatial]) + step.r_temporal * std::log(pt[step.action_temporal]) +
                       step.r_integrated * std::log(mix);
            };
            auto ps = b.spatial.params("spatial.");
            auto pt = b.temporal.params("temporal.");
            auto pg = b.gate.params();
            const std::size_t n = total_size(ps) + total_size(pt) + total_size(pg) + b.poi_table.values().size();
            max_params = std::max(max_params, n);
            worst_reinforce = std::max(worst_reinforce, finite_diff_check(objective, ps, flatten(grads.spatial.params("")), 1e-6));
            worst_reinforce = std::max(worst_reinforce, finite_diff_check(objective, pt, flatten(grads.temporal.params("")), 1e-6));
            worst_reinforce = std::max(worst_reinforce, finite_diff_check(objective, pg, flatten(grads.gate.params()), 1e-6));
            worst_reinforce = std::max(worst_reinforce,
                                       finite_diff_check(objective, b.poi_table.values(), grads.poi_table.values(), 1e-6));
        }
    }
    const double secs = seconds_since(t0);
    const bool pass = worst_contrastive < kGradientRelError && worst_reinforce < kGradientRelError && checked_steps > 0 &&
                      max_params <= kGradientMaxParams && secs < kGradientSeconds;
    return {pass, fmt("max rel err contrastive %.2e, REINFORCE %.2e over %zu steps (limit %.0e); largest net %zu params; %.1f s",
                      worst_contrastive, worst_reinforce, checked_steps, kGradientRelError, max_params, secs)};
}

// ---------------------------------------------------------------------------
// 5. Reward bounds and endpoints

Outcome criterion_rewards() {
    SyntheticSpec spec;
    spec.groups = {UserGroup{20, Preference::parse("mixed:0.5")}};
    spec.events_per_user = 60;
    const auto synth = dataset_from_events(generate_synthetic(spec, 9).events, PipelineConfig::from_config(Config{}));
    const std::vector<RewardTables> tables{RewardTables::build(fixtures::nyc_tiny()), RewardTables::build(synth)};

    Rng rng(505);
    int out_of_bounds = 0, imperfect = 0, kl_bad = 0;
    for (int i = 0; i < kRewardEvaluations; ++i) {
        const auto& t = tables[i % 2];
        const std::size_t n = t.poi_location.size();
        std::vector<std::uint32_t> ranked(n);
        std::iota(ranked.begin(), ranked.end(), 0u);
        rng.shuffle(ranked);
        ranked.resize(1 + rng.below(std::min<std::size_t>(n, 25)));
        const auto actual = static_cast<std::uint32_t>(rng.below(n));
        RewardWeights w;
        const double a = rng.uniform(), c = rng.uniform(0, 1 - a);
        w.w_d = a, w.w_c = c, w.w_ps = 1 - a - c;
        w.w_t = rng.uniform(), w.w_pt = 1 - w.w_t;
        w.w_S = rng.uniform(), w.w_T = 1 - w.w_S;
        const auto r = compute_rewards(ranked, actual, t, w);
        for (double v : {r.spatial.r_d, r.spatial.r_c, r.spatial.r_p, r.temporal.r_t, r.temporal.r_p, r.spatial.value,
                         r.temporal.value, r.integrated})
            if (!(v >= 0.0 && v <= 1.0 + kRewardSlack)) ++out_of_bounds;

        // Perfect prediction: the actual POI ranked first.
        auto perfect = ranked;
        perfect.erase(std::remove(perfect.begin(), perfect.end(), actual), perfect.end());
        perfect.insert(perfect.begin(), actual);
        const auto p = compute_rewards(perfect, actual, t, w);
        for (double v : {p.spatial.r_d, p.spatial.r_c, p.spatial.r_p, p.temporal.r_t, p.temporal.r_p, p.spatial.value,
                         p.temporal.value, p.integrated})
            if (std::abs(v - 1.0) > kRewardSlack) ++imperfect;

        // KL on random smoothed histograms.
        const auto bins = 2 + rng.below(48);
        Vec x(bins), y(bins);
        for (auto& e : x) e = static_cast<double>(rng.below(4));
        for (auto& e : y) e = static_cast<double>(rng.below(4));
        if (i % 7 == 0) y = x;
        const auto hx = smoothed_histogram(x, 1e-3), hy = smoothed_histogram(y, 1e-3);
        const double kl = kl_divergence(hx, hy);
        const bool identical = hx == hy;
        if (kl < 0.0 || (identical && kl != 0.0) || (!identical && !(kl > 0.0))) ++kl_bad;
    }
    return {out_of_bounds == 0 && imperfect == 0 && kl_bad == 0,
            fmt("%d evaluations: %d out of [0,1], %d perfect predictions below 1, %d KL violations", kRewardEvaluations,
                out_of_bounds, imperfect, kl_bad)};
}

// ---------------------------------------------------------------------------
// 6. Bandit sanity

Outcome criterion_bandit() {
    const auto t0 = Clock::now();
    Rng rng(606);
    const std::size_t d = 4, sd = 8;
    auto policy = PolicyParams::init(sd, 16, d, 2, rng);
    Matrix table(2, d);
    for (auto& x : table.values()) x = rng.uniform(-1, 1);
    Vec state(sd);
    for (auto& x : state) x = rng.uniform(-1, 1);
    const std::vector<std::uint32_t> arms{0, 1};
    const Matrix features(2, kContextFeatures);
    AgentConfig defaults;
    AdamState opt(kBanditLr);
    double baseline = 0, p_best = 0;
    int reached = -1;
    for (int it = 1; it <= kBanditUpdates; ++it) {
        const auto f = policy_forward(policy, table, state, arms, features);
        const std::size_t a = rng.categorical(f.probs);
        const double r = a == 1 ? 1.0 : 0.0;  // arm 1 pays
        auto grad = policy.zeros_like();
        policy_backward(policy, table, f, arms, features, a, r - baseline, grad);
        baseline = defaults.baseline_decay * baseline + (1 - defaults.baseline_decay) * r;
        auto params = policy.params("");
        adam_step(params, grad.params(""), opt, Direction::ascent);
        ++policy.net.revision;
        p_best = policy_distribution(policy, table, state, arms, features)[1];
        if (reached < 0 && p_best > kBanditTarget) reached = it;
    }
    const double secs = seconds_since(t0);
    return {reached > 0 && p_best > kBanditTarget && secs < kBanditSeconds,
            fmt("pi(best) %.4f after %d updates (Adam lr %.2g), first above %.1f at update %d, %.2f s", p_best, kBanditUpdates,
                kBanditLr, kBanditTarget, reached, secs)};
}

// ---------------------------------------------------------------------------
// Shared synthetic pipeline for 7 and 8

struct SyntheticRun {
    SyntheticCorpus corpus;
    Dataset ds;
    MobilityHypergraph g;
    EmbeddingStageResult emb;
    PipelineConfig cfg;
};

SyntheticRun synthetic_run(Config base, const std::string& groups, std::uint64_t seed) {
    base.set("synth.preference", groups);
    base.set("seed", std::to_string(seed));
    SyntheticRun r;
    r.cfg = PipelineConfig::from_config(base);
    r.corpus = generate_synthetic(synthetic_spec_from_config(base), seed);
    r.ds = dataset_from_events(r.corpus.events, r.cfg);
    r.g = build_hypergraph(r.ds);
    r.emb = run_embedding(r.ds, r.g, r.cfg);
    return r;
}

// ---------------------------------------------------------------------------
// 7. β recoverability

Outcome criterion_beta() {
    const auto t0 = Clock::now();
    const auto cfg = synthetic_config();
    auto run = synthetic_run(cfg, "spatial_only=50,temporal_only=50", 1);
    if (run.cfg.agents.epochs > kMaxAgentEpochs) return {false, "configuration trains for too many epochs"};
    if (run.corpus.events.size() != 100 * 200 || std::abs(synthetic_spec_from_config(cfg).noise - 0.1) > 1e-12)
        return {false, "corpus does not match the required shape"};
    if (run.emb.diverged) return {false, "embedding pretraining diverged"};
    const auto env = make_environment(run.ds, run.emb.h, run.emb.model, run.cfg);
    const auto trained = run_training(env, run.emb.h, run.emb.model, run.cfg.agents);
    if (trained.diverged) return {false, "agent training diverged: " + trained.divergence};
    const auto ev = evaluate(trained.bundle, env);
    std::map<std::string, Preference::Kind> kind;
    for (const auto& [id, pref] : run.corpus.users) kind[id] = pref.kind;
    double s = 0, t = 0;
    int ns = 0, nt = 0;
    for (const auto& [u, beta] : mean_beta_per_user(ev.predictions)) {
        if (kind.at(run.ds.users[u]) == Preference::Kind::spatial_only) s += beta, ++ns;
        else t += beta, ++nt;
    }
    if (ns == 0 || nt == 0) return {false, "no evaluated users in one group"};
    s /= ns;
    t /= nt;
    const double secs = seconds_since(t0);
    return {s > kSpatialBetaMin && t < kTemporalBetaMax && secs < kRecoverySeconds,
            fmt("mean beta spatial_only %.4f (> %.1f, %d users), temporal_only %.4f (< %.1f, %d users), %zu epochs, %.0f s",
                s, kSpatialBetaMin, ns, t, kTemporalBetaMax, nt, trained.log.size(), secs)};
}

// ---------------------------------------------------------------------------
// 8. Ablation ordering

Outcome criterion_ablation() {
    const auto t0 = Clock::now();
    const auto cfg = synthetic_config();
    int held = 0;
    std::string detail;
    for (int seed = 1; seed <= kAblationSeeds; ++seed) {
        auto run = synthetic_run(cfg, "mixed:0.5=100", static_cast<std::uint64_t>(seed));
        const auto r = run_ablation(AblationKind::agents, AblationInputs{&run.ds, &run.emb.h, &run.emb.model, run.cfg});
        const auto rec = [&](const char* tag) { return r.find(tag).at("recall", 5); };
        const double full = rec("full"), s = rec("without_spatial"), t = rec("without_temporal"),
                     i = rec("without_integration"), pop = rec("popularity");
        const bool ok = full >= s && full >= t && full >= i && full >= kPopularityMargin * pop;
        held += ok;
        detail += fmt("%sseed %d: full %.4f, -S %.4f, -T %.4f, -I %.4f, pop %.4f%s", seed > 1 ? "; " : "", seed, full, s, t,
                      i, pop, ok ? "" : " (order broken)");
    }
    return {held >= kAblationSeedsNeeded,
            fmt("ordering held in %d/%d seeds (need %d): ", held, kAblationSeeds, kAblationSeedsNeeded) + detail +
                fmt("; %.0f s", seconds_since(t0))};
}

// ---------------------------------------------------------------------------
// 9. Determinism

std::string graph_bytes(const MobilityHypergraph& g) {
    std::ostringstream out;
    write_hypergraph(g, out);
    return out.str();
}

std::map<std::string, std::string> pipeline_artifacts(std::uint64_t seed) {
    auto cfg = Config::parse("embed.dim = 16\nembed.heads = 2\nembed.epochs = 2\ntrain.epochs = 2\n"
                             "policy.hidden = 16\nmdp.candidates = sampled:20\n");
    cfg.set("synth.preference", "mixed:0.5=12,spatial_only=4");
    cfg.set("synth.events_per_user", "50");
    std::map<std::string, std::string> out;
    const auto pc = PipelineConfig::from_config(cfg);
    const auto corpus = generate_synthetic(synthetic_spec_from_config(cfg), seed);
    std::ostringstream tsv;
    write_foursquare_tsv(corpus.events, tsv);
    out["synthetic.tsv"] = tsv.str();
    std::istringstream in(tsv.str());
    const auto ds = dataset_from_events(parse_checkins(in, {}).events, pc);
    out["dataset.json"] = to_json(ds).dump();
    const auto g = build_hypergraph(ds);
    out["hypergraph.bin"] = graph_bytes(g);
    const auto emb = run_embedding(ds, g, pc);
    out["embedding.json"] = to_json(emb.model).dump();
    const auto env = make_environment(ds, emb.h, emb.model, pc);
    const auto tr = run_training(env, emb.h, emb.model, pc.agents);
    out["agents.json"] = to_json(tr.bundle).dump();
    out["train_log.csv"] = format_train_log(tr.log);
    const auto ev = evaluate(tr.bundle, env);
    out["report.json"] = to_json(ev.report).dump();
    out["beta_per_user.csv"] = beta_per_user_csv(ds, ev.predictions);
    return out;
}

Outcome criterion_determinism() {
    const auto a = pipeline_artifacts(77), b = pipeline_artifacts(77), c = pipeline_artifacts(78);
    std::vector<std::string> differing;
    for (const auto& [name, bytes] : a)
        if (b.at(name) != bytes) differing.push_back(name);
    std::size_t seed_sensitive = 0;
    for (const auto& [name, bytes] : a) seed_sensitive += c.at(name) != bytes;
    std::string list;
    for (const auto& d : differing) list += " " + d;
    return {differing.empty() && seed_sensitive > 0,
            fmt("%zu artifacts re-run byte-identical, %zu differ%s; a different seed changes %zu", a.size() - differing.size(),
                differing.size(), list.c_str(), seed_sensitive)};
}

// ---------------------------------------------------------------------------
// 10. Hypergraph invariants

struct InvariantTally {
    std::size_t graphs = 0, event_edges = 0, bad_events = 0, asymmetric = 0, probes = 0, non_monotone = 0;
};

void check_graph(const MobilityHypergraph& g, InvariantTally& t) {
    ++t.graphs;
    for (EdgeId id = 0; id < g.edge_count(); ++id) {
        const auto& e = g.edge(id);
        if (e.kind == EdgeKind::event) {
            ++t.event_edges;
            std::set<Channel> channels;
            for (const auto& v : e.members) channels.insert(v.channel);
            if (e.members.size() != 4 || channels.size() != 4) ++t.bad_events;
        }
        for (const auto& v : e.members) {
            const auto& inc = g.incidence(v);
            if (std::count(inc.begin(), inc.end(), id) != 1) ++t.asymmetric;
        }
    }
    for (std::size_t gv = 0; gv < g.vertex_count(); ++gv) {
        const auto v = g.vertex_at(gv);
        for (EdgeId id : g.incidence(v)) {
            const auto& m = g.edge(id).members;
            if (std::find(m.begin(), m.end(), v) == m.end()) ++t.asymmetric;
        }
    }
}

std::map<EdgeKind, std::set<VertexId>> user_members(const MobilityHypergraph& g, std::uint32_t user) {
    std::map<EdgeKind, std::set<VertexId>> out;
    for (const auto& e : g.edges())
        if (e.kind != EdgeKind::event && e.user == user) out[e.kind].insert(e.members.begin(), e.members.end());
    return out;
}

std::set<std::uint32_t> user_events(const MobilityHypergraph& g, std::uint32_t user) {
    std::set<std::uint32_t> out;
    for (const auto& e : g.edges())
        if (e.kind == EdgeKind::event && e.user == user) out.insert(e.owner);
    return out;
}

void probe_prefixes(const Dataset& ds, Rng& rng, InvariantTally& t) {
    Timestamp lo = ds.records.front().timestamp, hi = lo;
    for (const auto& r : ds.records) lo = std::min(lo, r.timestamp), hi = std::max(hi, r.timestamp);
    for (int p = 0; p < kPrefixProbes; ++p) {
        ++t.probes;
        const auto user = static_cast<std::uint32_t>(rng.below(ds.user_count()));
        auto a = lo - 5 + static_cast<Timestamp>(rng.below(static_cast<std::size_t>(hi - lo + 10)));
        auto b = lo - 5 + static_cast<Timestamp>(rng.below(static_cast<std::size_t>(hi - lo + 10)));
        if (a > b) std::swap(a, b);
        const auto small = prefix_subgraph(ds, user, a, GraphScope::all());
        const auto large = prefix_subgraph(ds, user, b, GraphScope::all());
        const auto ms = user_members(small, user), ml = user_members(large, user);
        bool ok = true;
        for (const auto& [kind, members] : ms) {
            const auto it = ml.find(kind);
            if (it == ml.end() || !std::includes(it->second.begin(), it->second.end(), members.begin(), members.end())) ok = false;
        }
        const auto es = user_events(small, user), el = user_events(large, user);
        if (!std::includes(el.begin(), el.end(), es.begin(), es.end())) ok = false;
        if (!ok) ++t.non_monotone;
    }
}

Outcome criterion_hypergraph() {
    InvariantTally t;
    Rng rng(1010);
    const auto nyc = fixtures::nyc_tiny();
    std::vector<std::pair<std::string, Dataset>> corpora{{"nyc", nyc}};
    const auto pc = PipelineConfig::from_config(Config{});
    const std::vector<std::pair<std::string, std::string>> specs{
        {"spatial_only=50,temporal_only=50", "grid"}, {"mixed:0.5=100", "grid"}, {"spatial_only=30", "line"},
        {"temporal_only=30", "grid"}, {"mixed:0.2=20,mixed:0.8=20", "line"}};
    for (const auto& [groups, layout] : specs)
        for (std::uint64_t seed = 1; seed <= 3; ++seed) {
            auto cfg = synthetic_config();
            cfg.set("synth.preference", groups);
            cfg.set("synth.layout", layout);
            corpora.emplace_back(groups, dataset_from_events(generate_synthetic(synthetic_spec_from_config(cfg), seed).events, pc));
        }
    {
        auto cfg = Config::parse("synth.preference = mixed:0.5=20\nsynth.noise = 1\n");
        corpora.emplace_back("noise", dataset_from_events(generate_synthetic(synthetic_spec_from_config(cfg), 4).events, pc));
    }
    for (const auto& [name, ds] : corpora) {
        for (auto scope : {GraphScope::train_only(), GraphScope::all()}) check_graph(build_hypergraph(ds, scope), t);
        probe_prefixes(ds, rng, t);
    }
    const bool pass = t.bad_events == 0 && t.asymmetric == 0 && t.non_monotone == 0 && t.event_edges > 0;
    return {pass, fmt("%zu corpora, %zu graphs, %zu event edges (%zu malformed), %zu incidence asymmetries, "
                      "%zu prefix probes (%zu non-monotone)",
                      corpora.size(), t.graphs, t.event_edges, t.bad_events, t.asymmetric, t.probes, t.non_monotone)};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"metric oracles", criterion_metrics},
        {"F1 consistency", criterion_f1},
        {"embedding forward", criterion_forward},
        {"gradient fidelity", criterion_gradients},
        {"reward bounds", criterion_rewards},
        {"bandit sanity", criterion_bandit},
        {"beta recoverability", criterion_beta},
        {"ablation ordering", criterion_ablation},
        {"determinism", criterion_determinism},
        {"hypergraph invariants", criterion_hypergraph},
    };
    std::set<int> selected;
    std::ofstream report;
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--report" && i + 1 < argc) report.open(argv[++i]);
        else selected.insert(std::stoi(arg));
    }
    const auto emit = [&](const std::string& line) {
        std::cout << line << std::endl;
        if (report) report << line << '\n' << std::flush;
    };

    int unexpected = 0, known = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i + 1);
        if (!selected.empty() && !selected.count(id)) continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const bool known_failure = !o.pass && kKnownFailures.count(id);
        emit("criterion " + std::to_string(id) + " [" + (o.pass ? "PASS" : "FAIL") + "] " + criteria[i].first + ": " +
             o.detail + (known_failure ? " [known failure, see README]" : ""));
        if (!o.pass) (known_failure ? known : unexpected) += 1;
    }
    emit("summary: " + std::to_string(unexpected) + " unexpected failure(s), " + std::to_string(known) + " known failure(s)");
    return unexpected == 0 ? 0 : 1;
}

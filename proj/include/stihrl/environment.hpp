#pragma once

// Replay environment over logged check-ins: per-step states built from prefix
// hyperedge embeddings, candidate actions, and reward functions.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "common.hpp"
#include "config.hpp"
#include "embedding.hpp"
#include "ingest.hpp"

namespace stihrl {

// ---------------------------------------------------------------------------
// Geometry

inline constexpr double kEarthRadiusKm = 6371.0;

struct LatLon {
    double lat = 0.0;
    double lon = 0.0;
};

inline double haversine_km(LatLon a, LatLon b) {
    constexpr double rad = std::numbers::pi / 180.0;
    const double dlat = (b.lat - a.lat) * rad;
    const double dlon = (b.lon - a.lon) * rad;
    const double s = std::sin(dlat / 2) * std::sin(dlat / 2) +
                     std::cos(a.lat * rad) * std::cos(b.lat * rad) * std::sin(dlon / 2) * std::sin(dlon / 2);
    return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(s)));
}

// ---------------------------------------------------------------------------
// Reward weights

struct RewardWeights {
    double w_d = 1.0 / 3.0, w_c = 1.0 / 3.0, w_ps = 1.0 / 3.0;  // spatial
    double w_t = 0.5, w_pt = 0.5;                                // temporal
    double w_S = 0.5, w_T = 0.5;                                 // high level

    void validate() const {
        constexpr double tol = 1e-9;
        auto simplex = [&](std::initializer_list<double> ws, const char* what) {
            double s = 0.0;
            for (double w : ws) {
                if (!(w >= 0.0)) fail(ErrorKind::config, std::string(what) + " weights must be non-negative");
                s += w;
            }
            if (std::abs(s - 1.0) > tol) fail(ErrorKind::config, std::string(what) + " weights must sum to 1");
        };
        simplex({w_d, w_c, w_ps}, "spatial reward");
        simplex({w_t, w_pt}, "temporal reward");
        simplex({w_S, w_T}, "high-level reward");
    }

    static RewardWeights from_config(const Config& cfg) {
        RewardWeights w;
        w.w_d = cfg.get_double("reward.spatial.w_d", w.w_d);
        w.w_c = cfg.get_double("reward.spatial.w_c", w.w_c);
        w.w_ps = cfg.get_double("reward.spatial.w_ps", w.w_ps);
        w.w_t = cfg.get_double("reward.temporal.w_t", w.w_t);
        w.w_pt = cfg.get_double("reward.temporal.w_pt", w.w_pt);
        w.w_S = cfg.get_double("reward.high.w_S", w.w_S);
        w.w_T = 1.0 - w.w_S;
        w.validate();
        return w;
    }
};

// ---------------------------------------------------------------------------
// Reward statistics

/// Word vectors for category names, text lines "name dim v1 .. vd".
/// Multi-word names use '_' in place of spaces.
using CategoryVectors = std::unordered_map<std::string, Vec>;

inline CategoryVectors parse_category_vectors(std::istream& in) {
    CategoryVectors out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string name;
        std::size_t dim = 0;
        if (!(ls >> name >> dim) || dim == 0)
            fail(ErrorKind::parse, "category vectors line " + std::to_string(lineno) + ": expected name and dimension");
        Vec v(dim);
        for (auto& x : v)
            if (!(ls >> x)) fail(ErrorKind::parse, "category vectors line " + std::to_string(lineno) + ": too few values");
        std::replace(name.begin(), name.end(), '_', ' ');
        out[name] = std::move(v);
    }
    return out;
}

inline CategoryVectors load_category_vectors(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::missing_artifact, "cannot open category vectors: " + path);
    return parse_category_vectors(in);
}

inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
    require(p.size() == q.size() && !p.empty(), "kl_divergence: size mismatch");
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i)
        if (p[i] > 0.0) kl += p[i] * std::log(p[i] / q[i]);
    return std::max(0.0, kl);
}

/// Laplace-smoothed distribution from raw counts.
inline Vec smoothed_histogram(std::span<const double> counts, double epsilon) {
    double total = 0.0;
    for (double c : counts) total += c;
    Vec p(counts.size());
    const double denom = total + epsilon * static_cast<double>(counts.size());
    for (std::size_t i = 0; i < counts.size(); ++i) p[i] = (counts[i] + epsilon) / denom;
    return p;
}

inline double cosine(std::span<const double> a, std::span<const double> b) {
    const double na = std::sqrt(dot(a, a)), nb = std::sqrt(dot(b, b));
    if (na == 0.0 || nb == 0.0) return 0.0;
    return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

/// Read-only tables the rewards and context features draw on.
struct RewardTables {
    std::vector<LatLon> poi_location;
    std::vector<std::uint32_t> poi_category;
    std::vector<std::optional<Vec>> category_vector;  // by category index
    Matrix slot_distribution;                         // poi x slot, smoothed train visits
    std::vector<double> popularity;                   // train visit counts per POI
    double epsilon = 1e-3;

    static RewardTables build(const Dataset& ds, const CategoryVectors& vectors = {}, double epsilon = 1e-3) {
        RewardTables t;
        t.epsilon = epsilon;
        for (const auto& p : ds.pois) {
            t.poi_location.push_back({p.lat, p.lon});
            t.poi_category.push_back(p.category);
        }
        for (const auto& c : ds.categories) {
            auto it = vectors.find(c.name);
            if (it == vectors.end()) it = vectors.find(c.id);
            t.category_vector.push_back(it == vectors.end() ? std::nullopt : std::optional<Vec>(it->second));
        }
        Matrix counts(ds.poi_count(), ds.slot_count());
        t.popularity.assign(ds.poi_count(), 0.0);
        for (std::size_t i = 0; i < ds.records.size(); ++i) {
            if (ds.split_of(i) != Split::train) continue;
            const auto& r = ds.records[i];
            counts(r.poi, r.slot) += 1.0;
            t.popularity[r.poi] += 1.0;
        }
        t.slot_distribution = Matrix(ds.poi_count(), ds.slot_count());
        for (std::size_t p = 0; p < ds.poi_count(); ++p) {
            const auto dist = smoothed_histogram(counts.row(p), epsilon);
            std::copy(dist.begin(), dist.end(), t.slot_distribution.row(p).begin());
        }
        return t;
    }

    std::size_t poi_count() const { return poi_location.size(); }
};

// ---------------------------------------------------------------------------
// Rewards

struct SpatialReward {
    double r_d = 0, r_c = 0, r_p = 0, value = 0;
};

struct TemporalReward {
    double r_t = 0, r_p = 0, value = 0;
};

struct Rewards {
    SpatialReward spatial;
    TemporalReward temporal;
    double integrated = 0;
};

/// 1/rank of `actual` in `ranked`, 0 when absent.
inline double reciprocal_rank(std::span<const std::uint32_t> ranked, std::uint32_t actual) {
    for (std::size_t i = 0; i < ranked.size(); ++i)
        if (ranked[i] == actual) return 1.0 / static_cast<double>(i + 1);
    return 0.0;
}

inline double category_reward(const RewardTables& t, std::uint32_t predicted, std::uint32_t actual) {
    const auto cp = t.poi_category.at(predicted), ca = t.poi_category.at(actual);
    const auto& vp = t.category_vector.size() > cp ? t.category_vector[cp] : std::nullopt;
    const auto& va = t.category_vector.size() > ca ? t.category_vector[ca] : std::nullopt;
    if (vp && va && vp->size() == va->size()) return (cosine(*vp, *va) + 1.0) / 2.0;
    return cp == ca ? 1.0 : 0.0;
}

inline SpatialReward reward_spatial(std::span<const std::uint32_t> ranked, std::uint32_t actual, const RewardTables& t,
                                    const RewardWeights& w) {
    require(!ranked.empty(), "reward_spatial: empty ranked list");
    require(actual < t.poi_count(), "reward_spatial: actual POI outside the vocabulary");
    SpatialReward r;
    const auto top = ranked.front();
    r.r_d = 1.0 / (1.0 + haversine_km(t.poi_location.at(top), t.poi_location[actual]));
    r.r_c = category_reward(t, top, actual);
    r.r_p = reciprocal_rank(ranked, actual);
    r.value = w.w_d * r.r_d + w.w_c * r.r_c + w.w_ps * r.r_p;
    return r;
}

inline TemporalReward reward_temporal(std::span<const std::uint32_t> ranked, std::uint32_t actual,
                                      const RewardTables& t, const RewardWeights& w) {
    require(!ranked.empty(), "reward_temporal: empty ranked list");
    require(actual < t.poi_count(), "reward_temporal: actual POI outside the vocabulary");
    TemporalReward r;
    const double kl = kl_divergence(t.slot_distribution.row(actual), t.slot_distribution.row(ranked.front()));
    r.r_t = 1.0 / (1.0 + kl);
    r.r_p = reciprocal_rank(ranked, actual);
    r.value = w.w_t * r.r_t + w.w_pt * r.r_p;
    return r;
}

inline double reward_high(double r_S, double r_T, double w_S, double w_T) { return w_T * r_T + w_S * r_S; }

inline Rewards compute_rewards(std::span<const std::uint32_t> ranked, std::uint32_t actual, const RewardTables& t,
                               const RewardWeights& w) {
    Rewards r;
    r.spatial = reward_spatial(ranked, actual, t, w);
    r.temporal = reward_temporal(ranked, actual, t, w);
    r.integrated = reward_high(r.spatial.value, r.temporal.value, w.w_S, w.w_T);
    return r;
}

// ---------------------------------------------------------------------------
// States

inline Vec concat(std::span<const double> a, std::span<const double> b) {
    Vec out(a.begin(), a.end());
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

/// Spatial state of the step predicting `record`: [q_poi ‖ q_zone].
inline Vec spatial_state(const PrefixEmbeddings& p, std::size_t record) {
    return concat(p.poi.at(record), p.zone.at(record));
}

/// Temporal state of the step predicting `record`: [q_poi ‖ q_time].
inline Vec temporal_state(const PrefixEmbeddings& p, std::size_t record) {
    return concat(p.poi.at(record), p.time.at(record));
}

/// State from a freshly built prefix graph (every event strictly before t).
/// Zero when the user has no earlier event.
inline Vec spatial_state(const Dataset& ds, std::uint32_t user, Timestamp t, const Matrix& h, const EmbeddingModel& m) {
    const auto g = build_hypergraph(ds, GraphScope::up_to(t));
    if (!g.has_user(user)) return Vec(2 * m.dim(), 0.0);
    const auto table = embed_hyperedges(g, h, m);
    return concat(table.cross[*g.user_edge(user, EdgeKind::user_poi)], table.cross[*g.user_edge(user, EdgeKind::user_zone)]);
}

inline Vec temporal_state(const Dataset& ds, std::uint32_t user, Timestamp t, const Matrix& h, const EmbeddingModel& m) {
    const auto g = build_hypergraph(ds, GraphScope::up_to(t));
    if (!g.has_user(user)) return Vec(2 * m.dim(), 0.0);
    const auto table = embed_hyperedges(g, h, m);
    return concat(table.cross[*g.user_edge(user, EdgeKind::user_poi)], table.cross[*g.user_edge(user, EdgeKind::user_time)]);
}

inline Vec integrated_state(std::span<const double> s_spatial, std::span<const double> s_temporal, double lambda_s,
                            double lambda_t) {
    require(s_spatial.size() == s_temporal.size(), "integrated_state: dimension mismatch");
    require(lambda_s >= 0.0 && lambda_t >= 0.0 && std::abs(lambda_s + lambda_t - 1.0) < 1e-9,
            "integrated_state: weights must lie on the simplex");
    Vec out(s_spatial.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = lambda_t * s_temporal[i] + lambda_s * s_spatial[i];
    return out;
}

// ---------------------------------------------------------------------------
// Candidates

struct CandidateConfig {
    enum class Mode { full, sampled } mode = Mode::full;
    std::size_t size = 0;  // sampled mode only
    std::uint64_t seed = 0;

    /// "full" or "sampled:<n>".
    static CandidateConfig parse(const std::string& s, std::uint64_t seed = 0) {
        CandidateConfig c;
        c.seed = seed;
        if (s == "full") return c;
        if (s.rfind("sampled:", 0) == 0) {
            c.mode = Mode::sampled;
            try {
                c.size = std::stoul(s.substr(8));
            } catch (const std::exception&) {
                fail(ErrorKind::config, "bad candidate size in: " + s);
            }
            if (c.size < 2) fail(ErrorKind::config, "sampled candidate sets need at least 2 entries");
            return c;
        }
        fail(ErrorKind::config, "unknown candidate mode: " + s);
    }

    std::string to_string() const { return mode == Mode::full ? "full" : "sampled:" + std::to_string(size); }
};

/// Candidate POIs for the step predicting `record`, ascending by POI index.
/// Sampled mode: the actual POI, then the user's earlier POIs by frequency,
/// then popularity-weighted negatives seeded by (seed, record).
inline std::vector<std::uint32_t> candidate_actions(const Dataset& ds, std::size_t record, const CandidateConfig& cfg,
                                                    std::span<const double> popularity) {
    const std::size_t n_poi = ds.poi_count();
    std::vector<std::uint32_t> out;
    if (cfg.mode == CandidateConfig::Mode::full || cfg.size >= n_poi) {
        out.resize(n_poi);
        std::iota(out.begin(), out.end(), 0u);
        return out;
    }
    const auto& rec = ds.records.at(record);
    std::vector<bool> taken(n_poi, false);
    auto take = [&](std::uint32_t p) {
        if (out.size() < cfg.size && !taken[p]) {
            taken[p] = true;
            out.push_back(p);
        }
    };
    take(rec.poi);
    std::map<std::uint32_t, std::size_t> freq;
    const auto& range = ds.user_ranges[rec.user];
    for (std::size_t i = range.begin; i < range.end(); ++i)
        if (ds.records[i].timestamp < rec.timestamp) ++freq[ds.records[i].poi];
    std::vector<std::pair<std::size_t, std::uint32_t>> by_freq;
    for (auto [p, c] : freq) by_freq.push_back({c, p});
    std::stable_sort(by_freq.begin(), by_freq.end(), [](auto a, auto b) { return a.first > b.first; });
    for (auto [c, p] : by_freq) take(p);
    Rng rng(derive_seed(cfg.seed, record));
    Vec weights(n_poi);
    for (std::size_t p = 0; p < n_poi; ++p) weights[p] = taken[p] ? 0.0 : popularity[p] + 1.0;
    while (out.size() < cfg.size) {
        const auto p = static_cast<std::uint32_t>(rng.categorical(weights));
        take(p);
        weights[p] = 0.0;
    }
    std::sort(out.begin(), out.end());
    return out;
}

// ---------------------------------------------------------------------------
// Per-step context features

inline constexpr std::size_t kContextFeatures = 2;

/// Standardizes each feature column across the candidate set.
inline void standardize_columns(Matrix& f) {
    for (std::size_t c = 0; c < f.cols(); ++c) {
        double mean = 0.0;
        for (std::size_t r = 0; r < f.rows(); ++r) mean += f(r, c);
        mean /= static_cast<double>(f.rows());
        double var = 0.0;
        for (std::size_t r = 0; r < f.rows(); ++r) var += (f(r, c) - mean) * (f(r, c) - mean);
        const double sd = std::sqrt(var / static_cast<double>(f.rows()));
        for (std::size_t r = 0; r < f.rows(); ++r) f(r, c) = sd > 1e-12 ? (f(r, c) - mean) / sd : 0.0;
    }
}

// ---------------------------------------------------------------------------
// Environment

struct MdpConfig {
    CandidateConfig candidates;
    double gamma = 0.95;
    RewardWeights weights;
    bool include_cold = false;

    void validate() const {
        if (!(gamma >= 0.0 && gamma <= 1.0)) fail(ErrorKind::config, "mdp.gamma must lie in [0, 1]");
        weights.validate();
    }

    static MdpConfig from_config(const Config& cfg) {
        MdpConfig m;
        m.candidates = CandidateConfig::parse(cfg.get_string("mdp.candidates", "full"),
                                              static_cast<std::uint64_t>(cfg.get_int("seed", 0)));
        m.gamma = cfg.get_double("mdp.gamma", m.gamma);
        m.weights = RewardWeights::from_config(cfg);
        m.include_cold = cfg.get_bool("eval.include_cold", false);
        m.validate();
        return m;
    }
};

/// Everything an agent sees for one prediction step.
struct StepView {
    std::size_t record = 0;
    std::uint32_t user = 0;
    std::uint32_t actual = 0;
    bool cold = false;
    Vec spatial_state;
    Vec temporal_state;
    std::vector<std::uint32_t> candidates;
    Matrix spatial_features;   // candidates x kContextFeatures
    Matrix temporal_features;  // candidates x kContextFeatures
};

class Environment {
public:
    Environment(const Dataset& ds, PrefixEmbeddings prefix, RewardTables tables, MdpConfig cfg)
        : ds_(&ds), prefix_(std::move(prefix)), tables_(std::move(tables)), cfg_(std::move(cfg)) {
        cfg_.validate();
        require(prefix_.poi.size() == ds.records.size(), "prefix embeddings do not cover the dataset");
        log_slot_.resize(ds.slot_count());
        for (std::size_t s = 0; s < ds.slot_count(); ++s) {
            log_slot_[s].resize(ds.poi_count());
            for (std::size_t p = 0; p < ds.poi_count(); ++p)
                log_slot_[s][p] = std::log(static_cast<double>(ds.slot_count()) * tables_.slot_distribution(p, s));
        }
    }

    const Dataset& dataset() const { return *ds_; }
    const RewardTables& tables() const { return tables_; }
    const MdpConfig& config() const { return cfg_; }
    MdpConfig& config() { return cfg_; }
    const PrefixEmbeddings& prefix() const { return prefix_; }
    std::size_t state_dim() const { return 2 * prefix_.dim; }

    StepView view(std::size_t record) const {
        const auto& ds = *ds_;
        const auto& rec = ds.records.at(record);
        StepView v;
        v.record = record;
        v.user = rec.user;
        v.actual = rec.poi;
        v.cold = prefix_.cold[record];
        v.spatial_state = spatial_state(prefix_, record);
        v.temporal_state = temporal_state(prefix_, record);
        v.candidates = candidate_actions(ds, record, cfg_.candidates, tables_.popularity);
        const std::size_t n = v.candidates.size();
        v.spatial_features = Matrix(n, kContextFeatures);
        v.temporal_features = Matrix(n, kContextFeatures);

        // Latest earlier event and the user's earlier visits at the query slot.
        const auto& range = ds.user_ranges[rec.user];
        std::optional<std::uint32_t> last;
        std::unordered_map<std::uint32_t, double> at_slot;
        double slot_total = 0.0;
        for (std::size_t i = range.begin; i < range.end(); ++i) {
            const auto& r = ds.records[i];
            if (r.timestamp >= rec.timestamp) break;
            last = r.poi;
            if (r.slot == rec.slot) {
                at_slot[r.poi] += 1.0;
                slot_total += 1.0;
            }
        }
        for (std::size_t c = 0; c < n; ++c) {
            const auto p = v.candidates[c];
            if (last) {
                v.spatial_features(c, 0) = 1.0 / (1.0 + haversine_km(tables_.poi_location[*last], tables_.poi_location[p]));
                v.spatial_features(c, 1) = p == *last ? 1.0 : 0.0;
            }
            v.temporal_features(c, 0) = log_slot_[rec.slot][p];
            if (slot_total > 0) {
                auto it = at_slot.find(p);
                v.temporal_features(c, 1) = it == at_slot.end() ? 0.0 : it->second / slot_total;
            }
        }
        standardize_columns(v.spatial_features);
        standardize_columns(v.temporal_features);
        return v;
    }

    Rewards rewards(const StepView& v, std::span<const std::uint32_t> ranked) const {
        return compute_rewards(ranked, v.actual, tables_, cfg_.weights);
    }

    /// Record indices of one user's split.
    std::vector<std::size_t> steps(std::uint32_t user, Split split) const {
        const auto [a, b] = ds_->split_range(user, split);
        std::vector<std::size_t> out(b - a);
        std::iota(out.begin(), out.end(), a);
        return out;
    }

private:
    const Dataset* ds_;
    PrefixEmbeddings prefix_;
    RewardTables tables_;
    MdpConfig cfg_;
    std::vector<Vec> log_slot_;  // log(S · P(slot | poi)) per slot, per POI
};

/// Outcome of advancing the replay by one logged event.
struct StepOutcome {
    Rewards rewards;
    std::uint32_t actual = 0;
    bool done = false;
    bool cold = false;
    std::optional<StepView> next;
};

/// Deterministic log replay of one user's split: each step scores a ranked
/// list against the logged event and moves to the next logged event.
class ReplayEpisode {
public:
    ReplayEpisode(const Environment& env, std::uint32_t user, Split split) : env_(&env), steps_(env.steps(user, split)) {
        if (!steps_.empty()) current_ = env.view(steps_.front());
    }

    bool done() const { return cursor_ >= steps_.size(); }
    std::size_t cursor() const { return cursor_; }
    std::size_t length() const { return steps_.size(); }

    const StepView& current() const {
        if (done()) fail(ErrorKind::invalid_argument, "episode is finished");
        return *current_;
    }

    StepOutcome step(std::span<const std::uint32_t> ranked) {
        if (done()) fail(ErrorKind::invalid_argument, "step after the episode finished");
        StepOutcome out;
        out.rewards = env_->rewards(*current_, ranked);
        out.actual = current_->actual;
        out.cold = current_->cold;
        ++cursor_;
        out.done = done();
        if (!out.done) {
            current_ = env_->view(steps_[cursor_]);
            out.next = current_;
        } else {
            current_.reset();
        }
        return out;
    }

private:
    const Environment* env_;
    std::vector<std::size_t> steps_;
    std::size_t cursor_ = 0;
    std::optional<StepView> current_;
};

}  // namespace stihrl

#pragma once

// Single-ground-truth ranking metrics.

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "common.hpp"
#include "ingest.hpp"

namespace stihrl {

struct RankedPrediction {
    std::uint32_t user = 0;
    Timestamp timestamp = 0;
    std::vector<std::uint32_t> ranked;  // descending score
    std::uint32_t actual = 0;
    bool cold = false;
    double beta = 0.5;

    /// 1-based rank of the actual POI, nullopt when absent.
    std::optional<std::size_t> rank() const {
        for (std::size_t i = 0; i < ranked.size(); ++i)
            if (ranked[i] == actual) return i + 1;
        return std::nullopt;
    }
};

inline constexpr std::array<std::size_t, 3> kCutoffs{5, 10, 20};

namespace detail {

template <class PerStep>
double mean_over(std::span<const RankedPrediction> preds, std::size_t k, PerStep per_step) {
    require(k >= 1, "metric cutoff must be at least 1");
    if (preds.empty()) fail(ErrorKind::invalid_argument, "metric over an empty prediction set");
    double total = 0.0;
    for (const auto& p : preds) {
        const auto r = p.rank();
        if (r && *r <= k) total += per_step(*r);
    }
    return total / static_cast<double>(preds.size());
}

}  // namespace detail

inline double recall_at_k(std::span<const RankedPrediction> preds, std::size_t k) {
    return detail::mean_over(preds, k, [](std::size_t) { return 1.0; });
}

/// Precision hit/k and recall hit give F1 = 2·hit/(k+1).
inline double f1_at_k(std::span<const RankedPrediction> preds, std::size_t k) {
    return detail::mean_over(preds, k, [k](std::size_t) { return 2.0 / static_cast<double>(k + 1); });
}

inline double mrr_at_k(std::span<const RankedPrediction> preds, std::size_t k) {
    return detail::mean_over(preds, k, [](std::size_t r) { return 1.0 / static_cast<double>(r); });
}

inline double ndcg_at_k(std::span<const RankedPrediction> preds, std::size_t k) {
    return detail::mean_over(preds, k, [](std::size_t r) { return 1.0 / std::log2(static_cast<double>(r) + 1.0); });
}

struct MetricsReport {
    std::map<std::string, std::map<std::size_t, double>> values;  // metric -> k -> value
    std::size_t steps = 0;
    std::uint64_t seed = 0;
    std::string config_hash;
    std::string dataset_id;
    std::string tag;

    double at(const std::string& metric, std::size_t k) const { return values.at(metric).at(k); }
};

/// Per-step averages, or per-user averages of per-step averages.
inline MetricsReport compute_metrics(std::span<const RankedPrediction> preds, bool per_user = false) {
    MetricsReport r;
    r.steps = preds.size();
    using Fn = double (*)(std::span<const RankedPrediction>, std::size_t);
    const std::array<std::pair<const char*, Fn>, 4> fns{{{"recall", recall_at_k}, {"f1", f1_at_k}, {"mrr", mrr_at_k}, {"ndcg", ndcg_at_k}}};
    if (!per_user) {
        for (const auto& [name, fn] : fns)
            for (auto k : kCutoffs) r.values[name][k] = fn(preds, k);
        return r;
    }
    std::map<std::uint32_t, std::vector<RankedPrediction>> by_user;
    for (const auto& p : preds) by_user[p.user].push_back(p);
    if (by_user.empty()) fail(ErrorKind::invalid_argument, "metric over an empty prediction set");
    for (const auto& [name, fn] : fns)
        for (auto k : kCutoffs) {
            double s = 0.0;
            for (const auto& [u, ps] : by_user) s += fn(ps, k);
            r.values[name][k] = s / static_cast<double>(by_user.size());
        }
    return r;
}

inline nlohmann::json to_json(const MetricsReport& r) {
    nlohmann::json j;
    for (const auto& [name, per_k] : r.values)
        for (const auto& [k, v] : per_k) j["metrics"][name + "@" + std::to_string(k)] = v;
    j["steps"] = r.steps;
    j["seed"] = r.seed;
    j["config_hash"] = r.config_hash;
    j["dataset_id"] = r.dataset_id;
    j["tag"] = r.tag;
    return j;
}

}  // namespace stihrl

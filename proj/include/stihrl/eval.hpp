#pragma once

// Evaluation of trained bundles and baselines, plus report rendering.

#include <algorithm>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "agents.hpp"
#include "environment.hpp"
#include "metrics.hpp"

namespace stihrl {

using Predictor = std::function<RankedPrediction(const StepView&)>;

struct EvalOptions {
    Split split = Split::test;
    bool per_user = false;
    bool include_cold = false;
};

struct EvalResult {
    MetricsReport report;
    std::vector<RankedPrediction> predictions;  // the scored steps
    std::vector<std::string> warnings;
};

/// Runs `predict` over every step of the split and scores the result.
inline EvalResult evaluate_predictor(const Environment& env, const Predictor& predict, const EvalOptions& opt) {
    const auto& ds = env.dataset();
    EvalResult r;
    for (std::uint32_t u = 0; u < ds.user_count(); ++u)
        for (auto i : env.steps(u, opt.split)) {
            const auto v = env.view(i);
            if (v.cold && !opt.include_cold) continue;
            auto p = predict(v);
            p.user = v.user;
            p.actual = v.actual;
            p.cold = v.cold;
            p.timestamp = ds.records[i].timestamp;
            r.predictions.push_back(std::move(p));
        }
    if (r.predictions.empty()) fail(ErrorKind::invalid_argument, "no steps to evaluate in the requested split");
    r.report = compute_metrics(r.predictions, opt.per_user);
    return r;
}

/// Greedy ranking by the mixture policy.
inline EvalResult evaluate(const AgentBundle& b, const Environment& env, const EvalOptions& opt = {}) {
    std::vector<std::string> warnings;
    const auto mode = env.config().candidates.to_string();
    if (mode != b.candidate_mode)
        warnings.push_back("candidate mode differs from training (" + b.candidate_mode + "); evaluating with " + mode);
    if (b.poi_table.rows() != env.dataset().poi_count())
        fail(ErrorKind::corrupt, "checkpoint vocabulary does not match the dataset");
    auto r = evaluate_predictor(env, [&](const StepView& v) { return predict(b, v); }, opt);
    r.warnings = std::move(warnings);
    return r;
}

// ---------------------------------------------------------------------------
// Baselines

/// Candidates by global training visit count, ties by vocabulary index.
inline Predictor popularity_baseline(const Environment& env) {
    const auto pop = env.tables().popularity;
    return [pop](const StepView& v) {
        RankedPrediction p;
        p.ranked = popularity_ranking(v.candidates, pop);
        p.beta = std::numeric_limits<double>::quiet_NaN();
        return p;
    };
}

/// Candidates by the user's own training visit count, then popularity.
inline Predictor user_frequency_baseline(const Environment& env) {
    const auto& ds = env.dataset();
    std::vector<std::map<std::uint32_t, double>> counts(ds.user_count());
    for (std::uint32_t u = 0; u < ds.user_count(); ++u) {
        const auto [a, b] = ds.split_range(u, Split::train);
        for (auto i = a; i < b; ++i) counts[u][ds.records[i].poi] += 1.0;
    }
    const auto pop = env.tables().popularity;
    return [counts = std::move(counts), pop](const StepView& v) {
        RankedPrediction p;
        p.ranked = popularity_ranking(v.candidates, pop);
        const auto& mine = counts[v.user];
        auto own = [&](std::uint32_t x) {
            auto it = mine.find(x);
            return it == mine.end() ? 0.0 : it->second;
        };
        std::stable_sort(p.ranked.begin(), p.ranked.end(), [&](auto a, auto b) { return own(a) > own(b); });
        p.beta = std::numeric_limits<double>::quiet_NaN();
        return p;
    };
}

// ---------------------------------------------------------------------------
// Reports

inline constexpr std::array<const char*, 4> kMetricNames{"recall", "f1", "mrr", "ndcg"};

inline std::string report_csv(const std::vector<MetricsReport>& reports) {
    std::ostringstream out;
    out << "tag";
    for (auto m : kMetricNames)
        for (auto k : kCutoffs) out << ',' << m << '@' << k;
    out << '\n';
    char buf[32];
    for (const auto& r : reports) {
        out << r.tag;
        for (auto m : kMetricNames)
            for (auto k : kCutoffs) {
                std::snprintf(buf, sizeof buf, ",%.6f", r.at(m, k));
                out << buf;
            }
        out << '\n';
    }
    return out.str();
}

/// Plain-text table, one row per report, metrics grouped by cutoff.
inline std::string comparison_table(const std::vector<MetricsReport>& reports) {
    static constexpr std::array<const char*, 4> labels{"Recall", "F1", "MRR", "NDCG"};
    std::vector<std::string> header{"model"};
    for (auto k : kCutoffs)
        for (auto m : labels) header.push_back(std::string(m) + "@" + std::to_string(k));
    std::vector<std::vector<std::string>> rows{header};
    char buf[32];
    for (const auto& r : reports) {
        std::vector<std::string> row{r.tag.empty() ? "-" : r.tag};
        for (auto k : kCutoffs)
            for (auto m : kMetricNames) {
                std::snprintf(buf, sizeof buf, "%.4f", r.at(m, k));
                row.push_back(buf);
            }
        rows.push_back(std::move(row));
    }
    std::vector<std::size_t> width(header.size(), 0);
    for (const auto& row : rows)
        for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
    std::ostringstream out;
    for (const auto& row : rows) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (c == 0) out << row[c] << std::string(width[c] - row[c].size(), ' ');
            else out << "  " << std::string(width[c] - row[c].size(), ' ') << row[c];
        }
        out << '\n';
    }
    return out.str();
}

/// Mean gate weight per user over warm steps.
inline std::map<std::uint32_t, double> mean_beta_per_user(const std::vector<RankedPrediction>& preds) {
    std::map<std::uint32_t, std::pair<double, std::size_t>> acc;
    for (const auto& p : preds) {
        if (p.cold || !std::isfinite(p.beta)) continue;
        auto& [s, n] = acc[p.user];
        s += p.beta;
        ++n;
    }
    std::map<std::uint32_t, double> out;
    for (const auto& [u, sn] : acc) out[u] = sn.first / static_cast<double>(sn.second);
    return out;
}

/// Histogram of per-user mean β over [0, 1] in `bins` equal bins.
inline std::string beta_histogram_csv(const std::vector<RankedPrediction>& preds, std::size_t bins = 10) {
    require(bins >= 1, "histogram needs at least one bin");
    std::vector<std::size_t> counts(bins, 0);
    for (const auto& [u, b] : mean_beta_per_user(preds))
        ++counts[std::min(bins - 1, static_cast<std::size_t>(b * static_cast<double>(bins)))];
    std::ostringstream out;
    out << "bin_lo,bin_hi,users\n";
    char buf[64];
    for (std::size_t i = 0; i < bins; ++i) {
        std::snprintf(buf, sizeof buf, "%.2f,%.2f,%zu\n", static_cast<double>(i) / static_cast<double>(bins),
                      static_cast<double>(i + 1) / static_cast<double>(bins), counts[i]);
        out << buf;
    }
    return out.str();
}

inline std::string beta_per_user_csv(const Dataset& ds, const std::vector<RankedPrediction>& preds) {
    std::ostringstream out;
    out << "user,mean_beta\n";
    char buf[32];
    for (const auto& [u, b] : mean_beta_per_user(preds)) {
        std::snprintf(buf, sizeof buf, "%.6f", b);
        out << ds.users.at(u) << ',' << buf << '\n';
    }
    return out.str();
}

}  // namespace stihrl

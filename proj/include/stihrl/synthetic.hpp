#pragma once

// Synthetic check-in corpora with known movement preferences.
//
// Spatial users walk to the nearest POI they have not visited yet (the
// visited set resets once exhausted) at irregular hours. Temporal users keep
// a routine hour in each quarter of the day and visit a personal POI of the
// matching category there. Mixed users flip between the two each step.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <ostream>
#include <string>
#include <vector>

#include "common.hpp"
#include "config.hpp"
#include "environment.hpp"
#include "ingest.hpp"

namespace stihrl {

struct Preference {
    enum class Kind { spatial_only, temporal_only, mixed };
    Kind kind = Kind::spatial_only;
    double p = 1.0;  // probability of a spatial step (mixed only)

    double spatial_probability() const {
        switch (kind) {
            case Kind::spatial_only: return 1.0;
            case Kind::temporal_only: return 0.0;
            case Kind::mixed: return p;
        }
        return p;
    }

    /// "spatial_only", "temporal_only", "mixed:0.5" or "mixed(0.5)".
    static Preference parse(const std::string& s) {
        if (s == "spatial_only") return {Kind::spatial_only, 1.0};
        if (s == "temporal_only") return {Kind::temporal_only, 0.0};
        std::string arg;
        if (s.rfind("mixed:", 0) == 0) arg = s.substr(6);
        else if (s.rfind("mixed(", 0) == 0 && s.back() == ')') arg = s.substr(6, s.size() - 7);
        else fail(ErrorKind::config, "unknown synthetic preference: " + s);
        const auto v = detail::parse_double(arg);
        if (!v || *v < 0.0 || *v > 1.0) fail(ErrorKind::config, "mixed preference needs p in [0, 1]: " + s);
        return {Kind::mixed, *v};
    }

    std::string to_string() const {
        switch (kind) {
            case Kind::spatial_only: return "spatial_only";
            case Kind::temporal_only: return "temporal_only";
            case Kind::mixed: break;
        }
        char buf[32];
        std::snprintf(buf, sizeof buf, "mixed:%g", p);
        return buf;
    }
};

enum class PoiLayout { grid, line };

struct UserGroup {
    std::size_t users = 50;
    Preference preference;
};

struct SyntheticSpec {
    std::vector<UserGroup> groups{UserGroup{}};
    std::size_t events_per_user = 200;
    std::size_t pois = 100;
    PoiLayout layout = PoiLayout::grid;
    double spacing_deg = 0.005;
    double noise = 0.1;
    double origin_lat = 40.70;
    double origin_lon = -74.00;
    Timestamp start = 1333324800;  // 2012-04-02 00:00 UTC

    static constexpr std::size_t kCategories = 4;  // one per quarter of the day

    void validate() const {
        if (pois < 2) fail(ErrorKind::config, "synthetic corpus needs at least 2 POIs");
        if (!(noise >= 0.0 && noise <= 1.0)) fail(ErrorKind::config, "synthetic noise must lie in [0, 1]");
        if (events_per_user == 0) fail(ErrorKind::config, "synthetic users need at least one event");
        if (groups.empty()) fail(ErrorKind::config, "synthetic corpus needs at least one user group");
        for (const auto& g : groups) {
            const double p = g.preference.spatial_probability();
            if (!(p >= 0.0 && p <= 1.0)) fail(ErrorKind::config, "synthetic preference probability outside [0, 1]");
        }
        if (!(spacing_deg > 0.0)) fail(ErrorKind::config, "synthetic POI spacing must be positive");
    }

    std::size_t user_count() const {
        std::size_t n = 0;
        for (const auto& g : groups) n += g.users;
        return n;
    }
};

struct SyntheticPoi {
    std::string id;
    double lat = 0, lon = 0;
    std::size_t category = 0;
};

struct SyntheticCorpus {
    std::vector<SyntheticPoi> pois;
    std::vector<CheckInEvent> events;  // per user, chronological
    std::vector<std::pair<std::string, Preference>> users;
    std::vector<bool> noisy;  // parallel to events: POI replaced by noise
};

inline std::string synthetic_category_id(std::size_t c) { return "cat" + std::to_string(c); }

inline std::string synthetic_category_name(std::size_t c) {
    static const char* names[] = {"Night", "Morning", "Afternoon", "Evening"};
    return names[c % 4];
}

/// POI positions with a small jitter so nearest neighbours are unique.
inline std::vector<SyntheticPoi> synthetic_layout(const SyntheticSpec& spec, Rng& rng) {
    std::vector<SyntheticPoi> pois(spec.pois);
    const std::size_t cols = spec.layout == PoiLayout::grid
                                 ? static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(spec.pois))))
                                 : spec.pois;
    const double jitter = 0.2 * spec.spacing_deg;
    std::vector<std::size_t> cats(spec.pois);
    for (std::size_t i = 0; i < spec.pois; ++i) cats[i] = i % SyntheticSpec::kCategories;
    rng.shuffle(cats);
    char buf[32];
    for (std::size_t i = 0; i < spec.pois; ++i) {
        auto& p = pois[i];
        std::snprintf(buf, sizeof buf, "p%04zu", i);
        p.id = buf;
        p.lat = spec.origin_lat + static_cast<double>(i / cols) * spec.spacing_deg + rng.uniform(-jitter, jitter);
        p.lon = spec.origin_lon + static_cast<double>(i % cols) * spec.spacing_deg + rng.uniform(-jitter, jitter);
        if (spec.layout == PoiLayout::line) p.lat = spec.origin_lat;
        p.category = cats[i];
    }
    return pois;
}

namespace detail {

inline double poi_distance(const SyntheticPoi& a, const SyntheticPoi& b) {
    return haversine_km({a.lat, a.lon}, {b.lat, b.lon});
}

/// Nearest POI to `from` outside `visited`, ties by index. Resets the
/// visited set (keeping `from`) when nothing is left.
inline std::size_t nearest_unvisited(const std::vector<SyntheticPoi>& pois, std::size_t from, std::vector<bool>& visited) {
    auto pick = [&]() -> std::optional<std::size_t> {
        std::optional<std::size_t> best;
        double best_d = 0;
        for (std::size_t j = 0; j < pois.size(); ++j) {
            if (visited[j] || j == from) continue;
            const double d = poi_distance(pois[from], pois[j]);
            if (!best || d < best_d) {
                best = j;
                best_d = d;
            }
        }
        return best;
    };
    if (auto j = pick()) return *j;
    std::fill(visited.begin(), visited.end(), false);
    visited[from] = true;
    return *pick();
}

inline std::string foursquare_time(Timestamp t) {
    const std::time_t tt = static_cast<std::time_t>(t);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    char buf[64];
    std::strftime(buf, sizeof buf, "%a %b %d %H:%M:%S +0000 %Y", &tm);
    return buf;
}

}  // namespace detail

/// Generates the corpus. Identical (spec, seed) give identical output.
inline SyntheticCorpus generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
    spec.validate();
    SyntheticCorpus out;
    Rng layout_rng(derive_seed(seed, 0x1A70));
    out.pois = synthetic_layout(spec, layout_rng);
    const auto& pois = out.pois;
    std::vector<std::vector<std::size_t>> by_category(SyntheticSpec::kCategories);
    for (std::size_t i = 0; i < pois.size(); ++i) by_category[pois[i].category].push_back(i);

    constexpr Timestamp kHour = 3600, kDay = 24 * kHour;
    std::size_t user_index = 0;
    for (const auto& group : spec.groups) {
        for (std::size_t gu = 0; gu < group.users; ++gu, ++user_index) {
            Rng rng(derive_seed(seed, 1000 + user_index));
            char uid[32];
            std::snprintf(uid, sizeof uid, "u%04zu", user_index);
            out.users.emplace_back(uid, group.preference);

            // Routine hour and personal POI for each quarter of the day.
            std::array<int, SyntheticSpec::kCategories> routine{};
            std::array<std::size_t, SyntheticSpec::kCategories> pick{};
            for (std::size_t q = 0; q < SyntheticSpec::kCategories; ++q) {
                routine[q] = static_cast<int>(6 * q + rng.below(6));
                const auto& pool = by_category[q].empty() ? std::vector<std::size_t>{rng.below(pois.size())} : by_category[q];
                pick[q] = pool[rng.below(pool.size())];
            }
            const double p_spatial = group.preference.spatial_probability();

            std::vector<bool> visited(pois.size(), false);
            std::size_t current = rng.below(pois.size());
            Timestamp t = spec.start + static_cast<Timestamp>(rng.below(24)) * kHour;
            for (std::size_t e = 0; e < spec.events_per_user; ++e) {
                std::size_t next = current;
                if (e > 0) {
                    if (rng.bernoulli(p_spatial)) {
                        t += static_cast<Timestamp>(1 + rng.below(8)) * kHour + static_cast<Timestamp>(rng.below(3600));
                        next = detail::nearest_unvisited(pois, current, visited);
                    } else {
                        // Next routine hour strictly after t.
                        const Timestamp day = (t - spec.start) / kDay;
                        Timestamp best = 0;
                        std::size_t quarter = 0;
                        for (Timestamp d = day; d <= day + 1 && best == 0; ++d)
                            for (std::size_t q = 0; q < SyntheticSpec::kCategories; ++q) {
                                const Timestamp cand = spec.start + d * kDay + routine[q] * kHour;
                                if (cand > t) {
                                    best = cand;
                                    quarter = q;
                                    break;
                                }
                            }
                        t = best + static_cast<Timestamp>(rng.below(20 * 60));
                        next = pick[quarter];
                    }
                } else if (p_spatial < 1.0) {
                    const auto q = static_cast<std::size_t>(((t - spec.start) % kDay) / kHour) / 6;
                    next = pick[q];
                }
                const bool noisy = spec.noise > 0.0 && rng.bernoulli(spec.noise);
                if (noisy) next = rng.below(pois.size());
                current = next;
                visited[current] = true;
                const auto& poi = pois[current];
                CheckInEvent ev;
                ev.user_id = uid;
                ev.poi_id = poi.id;
                ev.category_id = synthetic_category_id(poi.category);
                ev.category_name = synthetic_category_name(poi.category);
                ev.lat = poi.lat;
                ev.lon = poi.lon;
                ev.tz_offset_minutes = 0;
                ev.timestamp = t;
                out.events.push_back(std::move(ev));
                out.noisy.push_back(noisy);
            }
        }
    }
    return out;
}

/// Foursquare-style TSV, one check-in per line.
inline void write_foursquare_tsv(const std::vector<CheckInEvent>& events, std::ostream& out) {
    char coord[64];
    for (const auto& ev : events) {
        std::snprintf(coord, sizeof coord, "%.6f\t%.6f", ev.lat, ev.lon);
        out << ev.user_id << '\t' << ev.poi_id << '\t' << ev.category_id << '\t' << ev.category_name << '\t' << coord
            << '\t' << ev.tz_offset_minutes << '\t' << detail::foursquare_time(ev.timestamp) << '\n';
    }
}

/// Comma-separated groups, each "preference" or "preference=users", e.g.
/// "spatial_only=50,temporal_only=50". Groups without a count get
/// `default_users`.
inline std::vector<UserGroup> parse_user_groups(const std::string& text, std::size_t default_users) {
    std::vector<UserGroup> groups;
    for (const auto& raw : split(text, ',')) {
        const auto part = trim(raw);
        if (part.empty()) continue;
        const auto eq = part.find('=');
        UserGroup g;
        g.preference = Preference::parse(trim(part.substr(0, eq)));
        g.users = default_users;
        if (eq != std::string::npos) {
            const auto n = detail::parse_double(trim(part.substr(eq + 1)));
            if (!n || *n < 1 || *n != std::floor(*n)) fail(ErrorKind::config, "bad user count in synthetic group: " + part);
            g.users = static_cast<std::size_t>(*n);
        }
        groups.push_back(g);
    }
    if (groups.empty()) fail(ErrorKind::config, "synthetic preference list is empty");
    return groups;
}

/// Reads the spec from config keys synth.*.
inline SyntheticSpec synthetic_spec_from_config(const Config& cfg) {
    SyntheticSpec s;
    const auto users = cfg.get_int("synth.users", 50);
    if (users < 1) fail(ErrorKind::config, "synth.users must be positive");
    s.groups = parse_user_groups(cfg.get_string("synth.preference", "spatial_only"), static_cast<std::size_t>(users));
    const auto events = cfg.get_int("synth.events_per_user", 200), pois = cfg.get_int("synth.pois", 100);
    if (events < 1 || pois < 2) fail(ErrorKind::config, "synth.events_per_user must be positive and synth.pois at least 2");
    s.events_per_user = static_cast<std::size_t>(events);
    s.pois = static_cast<std::size_t>(pois);
    const auto layout = cfg.get_string("synth.layout", "grid");
    if (layout == "grid") s.layout = PoiLayout::grid;
    else if (layout == "line") s.layout = PoiLayout::line;
    else fail(ErrorKind::config, "unknown synth.layout: " + layout);
    s.noise = cfg.get_double("synth.noise", 0.1);
    s.spacing_deg = cfg.get_double("synth.spacing_deg", s.spacing_deg);
    s.validate();
    return s;
}

}  // namespace stihrl

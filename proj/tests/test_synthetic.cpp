#include <gtest/gtest.h>

#include <map>
#include <set>
#include <sstream>

#include <boost/math/distributions/chi_squared.hpp>

#include "stihrl/synthetic.hpp"

using namespace stihrl;

namespace {

SyntheticSpec one_group(const std::string& pref, std::size_t users, std::size_t events, double noise) {
    SyntheticSpec s;
    s.groups = {UserGroup{users, Preference::parse(pref)}};
    s.events_per_user = events;
    s.noise = noise;
    return s;
}

std::string tsv(const SyntheticCorpus& c) {
    std::ostringstream out;
    write_foursquare_tsv(c.events, out);
    return out.str();
}

}  // namespace

TEST(Preference, ParsesAllForms) {
    EXPECT_EQ(Preference::parse("spatial_only").spatial_probability(), 1.0);
    EXPECT_EQ(Preference::parse("temporal_only").spatial_probability(), 0.0);
    EXPECT_EQ(Preference::parse("mixed:0.25").spatial_probability(), 0.25);
    EXPECT_EQ(Preference::parse("mixed(0.5)").spatial_probability(), 0.5);
    EXPECT_EQ(Preference::parse("mixed:0.5").to_string(), "mixed:0.5");
    EXPECT_THROW(Preference::parse("mixed:1.5"), Error);
    EXPECT_THROW(Preference::parse("sometimes"), Error);
}

TEST(Synthetic, SameSeedSameBytes) {
    const auto spec = one_group("mixed:0.5", 5, 40, 0.1);
    EXPECT_EQ(tsv(generate_synthetic(spec, 7)), tsv(generate_synthetic(spec, 7)));
    EXPECT_NE(tsv(generate_synthetic(spec, 7)), tsv(generate_synthetic(spec, 8)));
}

TEST(Synthetic, ShapeAndChronology) {
    const auto c = generate_synthetic(one_group("temporal_only", 4, 30, 0.2), 1);
    ASSERT_EQ(c.events.size(), 120u);
    EXPECT_EQ(c.users.size(), 4u);
    EXPECT_EQ(c.pois.size(), 100u);
    for (std::size_t i = 1; i < c.events.size(); ++i)
        if (c.events[i].user_id == c.events[i - 1].user_id) {
            EXPECT_GT(c.events[i].timestamp, c.events[i - 1].timestamp);
        }
    std::map<std::size_t, int> per_category;
    for (const auto& p : c.pois) ++per_category[p.category];
    EXPECT_EQ(per_category.size(), SyntheticSpec::kCategories);
}

TEST(Synthetic, SpatialLineWalksToNearestUnvisited) {
    auto spec = one_group("spatial_only", 3, 60, 0.0);
    spec.layout = PoiLayout::line;
    spec.pois = 25;
    const auto c = generate_synthetic(spec, 3);
    // Geometry oracle: on a parallel, distance is monotone in |Δlon|.
    std::map<std::string, double> lon;
    for (const auto& p : c.pois) lon[p.id] = p.lon;
    std::size_t checked = 0;
    for (std::size_t u = 0; u < 3; ++u) {
        std::set<std::string> seen;
        for (std::size_t e = 0; e < 60; ++e) {
            const auto& ev = c.events[u * 60 + e];
            if (e > 0) {
                const auto& prev = c.events[u * 60 + e - 1].poi_id;
                if (seen.size() == lon.size()) seen = {prev};
                std::string best;
                for (const auto& [id, x] : lon) {
                    if (seen.count(id) || id == prev) continue;
                    if (best.empty() || std::abs(x - lon[prev]) < std::abs(lon[best] - lon[prev])) best = id;
                }
                if (best.empty()) {
                    seen = {prev};
                    for (const auto& [id, x] : lon)
                        if (id != prev && (best.empty() || std::abs(x - lon[prev]) < std::abs(lon[best] - lon[prev]))) best = id;
                }
                EXPECT_EQ(ev.poi_id, best) << "user " << u << " step " << e;
                ++checked;
            }
            seen.insert(ev.poi_id);
        }
    }
    EXPECT_EQ(checked, 3u * 59u);
}

TEST(Synthetic, TemporalUsersAreSlotDriven) {
    const auto c = generate_synthetic(one_group("temporal_only", 10, 80, 0.0), 5);
    std::map<std::string, std::size_t> category_of;
    for (const auto& p : c.pois) category_of[p.id] = p.category;
    // Past the first event, each (user, quarter) maps to one POI and one hour,
    // and that POI carries the quarter's category.
    std::map<std::pair<std::string, int>, std::set<std::string>> poi_at;
    std::map<std::pair<std::string, int>, std::set<int>> hour_at;
    for (std::size_t i = 0; i < c.events.size(); ++i) {
        if (i % 80 == 0) continue;
        const auto& ev = c.events[i];
        const int hour = static_cast<int>((ev.timestamp % 86400) / 3600);
        poi_at[{ev.user_id, hour / 6}].insert(ev.poi_id);
        hour_at[{ev.user_id, hour / 6}].insert(hour);
        EXPECT_EQ(category_of[ev.poi_id], static_cast<std::size_t>(hour / 6));
    }
    for (const auto& [key, set] : poi_at) EXPECT_EQ(set.size(), 1u);
    for (const auto& [key, set] : hour_at) EXPECT_EQ(set.size(), 1u);
}

TEST(Synthetic, FullNoiseIsUniform) {
    // 50 users x 200 events = 10k draws over 100 POIs.
    const auto c = generate_synthetic(one_group("spatial_only", 50, 200, 1.0), 11);
    std::map<std::string, double> counts;
    for (const auto& ev : c.events) counts[ev.poi_id] += 1;
    const double expected = static_cast<double>(c.events.size()) / static_cast<double>(c.pois.size());
    double stat = 0;
    for (const auto& p : c.pois) {
        const double o = counts.count(p.id) ? counts[p.id] : 0.0;
        stat += (o - expected) * (o - expected) / expected;
    }
    const boost::math::chi_squared dist(static_cast<double>(c.pois.size() - 1));
    EXPECT_GT(boost::math::cdf(boost::math::complement(dist, stat)), 0.01);
}

TEST(Synthetic, MixedWithCertainSpatialStepsMatchesSpatialOnly) {
    EXPECT_EQ(tsv(generate_synthetic(one_group("mixed:1", 4, 30, 0.1), 9)),
              tsv(generate_synthetic(one_group("spatial_only", 4, 30, 0.1), 9)));
}

TEST(Synthetic, TsvRoundTripsThroughIngest) {
    const auto c = generate_synthetic(one_group("mixed:0.5", 3, 25, 0.1), 2);
    std::istringstream in(tsv(c));
    ParseOptions opt;
    opt.strict = true;
    const auto parsed = parse_checkins(in, opt);
    ASSERT_EQ(parsed.events.size(), c.events.size());
    for (std::size_t i = 0; i < c.events.size(); ++i) {
        EXPECT_EQ(parsed.events[i].user_id, c.events[i].user_id);
        EXPECT_EQ(parsed.events[i].poi_id, c.events[i].poi_id);
        EXPECT_EQ(parsed.events[i].timestamp, c.events[i].timestamp);
        EXPECT_NEAR(parsed.events[i].lat, c.events[i].lat, 1e-6);
    }
}

TEST(Synthetic, RejectsInvalidSpecs) {
    auto s = one_group("spatial_only", 2, 10, 0.0);
    s.pois = 1;
    EXPECT_THROW(generate_synthetic(s, 1), Error);
    s = one_group("spatial_only", 2, 10, 1.5);
    EXPECT_THROW(generate_synthetic(s, 1), Error);
}

#pragma once

#include <string>
#include <vector>

#include "stihrl/ingest.hpp"

namespace fixtures {

inline stihrl::CheckInEvent checkin(const std::string& user, const std::string& poi, stihrl::Timestamp t,
                                    double lat = 40.70, double lon = -74.00, const std::string& cat = "c0") {
    stihrl::CheckInEvent ev;
    ev.user_id = user;
    ev.poi_id = poi;
    ev.category_id = cat;
    ev.category_name = cat;
    ev.lat = lat;
    ev.lon = lon;
    ev.timestamp = t;
    return ev;
}

/// Every event in the training split (no users dropped).
inline stihrl::Dataset train_only(const std::vector<stihrl::CheckInEvent>& events) {
    stihrl::SplitOptions opt;
    opt.fractions = {1.0, 0.0, 0.0};
    opt.min_events_per_user = 1;
    return stihrl::build_dataset(stihrl::chronological_split(events, opt), {}, {});
}

inline stihrl::Dataset with_split(const std::vector<stihrl::CheckInEvent>& events) {
    stihrl::SplitOptions opt;
    opt.min_events_per_user = 1;
    return stihrl::build_dataset(stihrl::chronological_split(events, opt), {}, {});
}

inline stihrl::Dataset nyc_tiny() {
    const auto parsed = stihrl::parse_checkins(std::string(STIHRL_TEST_DATA) + "/nyc_tiny.tsv", {});
    return stihrl::build_dataset(stihrl::chronological_split(parsed.events), {}, {});
}

}  // namespace fixtures

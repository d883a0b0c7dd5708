#pragma once

// Check-in log ingestion: parsing, zone/time discretization, vocabularies and
// per-user chronological train/validation/test splits.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "common.hpp"
#include "config.hpp"

namespace stihrl {

using Timestamp = std::int64_t;  // UTC seconds since the Unix epoch

struct CheckInEvent {
    std::string user_id;
    std::string poi_id;
    std::string category_id;
    std::string category_name;
    double lat = 0.0;
    double lon = 0.0;
    Timestamp timestamp = 0;
    int tz_offset_minutes = 0;
};

enum class InputFormat { foursquare_tsv, csv };

/// Column indices for the generic delimited mode.
struct CsvMapping {
    char delimiter = ',';
    bool header = true;
    int user_id = 0;
    int poi_id = 1;
    int category_id = 2;
    int category_name = 3;
    int lat = 4;
    int lon = 5;
    int tz_offset_minutes = -1;  // -1: column absent, offset 0
    int timestamp = 6;

    int column_count() const {
        return 1 + std::max({user_id, poi_id, category_id, category_name, lat, lon, tz_offset_minutes, timestamp});
    }

    static CsvMapping from_config(const Config& cfg) {
        CsvMapping m;
        const auto delim = cfg.get_string("csv.delimiter", ",");
        m.delimiter = delim == "\\t" || delim == "tab" ? '\t' : (delim.empty() ? ',' : delim[0]);
        m.header = cfg.get_bool("csv.header", true);
        m.user_id = static_cast<int>(cfg.get_int("csv.col.user_id", m.user_id));
        m.poi_id = static_cast<int>(cfg.get_int("csv.col.poi_id", m.poi_id));
        m.category_id = static_cast<int>(cfg.get_int("csv.col.category_id", m.category_id));
        m.category_name = static_cast<int>(cfg.get_int("csv.col.category_name", m.category_name));
        m.lat = static_cast<int>(cfg.get_int("csv.col.lat", m.lat));
        m.lon = static_cast<int>(cfg.get_int("csv.col.lon", m.lon));
        m.tz_offset_minutes = static_cast<int>(cfg.get_int("csv.col.tz_offset_minutes", m.tz_offset_minutes));
        m.timestamp = static_cast<int>(cfg.get_int("csv.col.timestamp", m.timestamp));
        return m;
    }
};

struct ParseOptions {
    InputFormat format = InputFormat::foursquare_tsv;
    bool strict = false;
    CsvMapping csv;
};

struct ParseResult {
    std::vector<CheckInEvent> events;
    std::size_t skipped = 0;
    std::vector<std::size_t> skipped_lines;  // 1-based
};

namespace detail {

inline std::optional<double> parse_double(const std::string& s) {
    if (s.empty()) return std::nullopt;
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size() || !std::isfinite(v)) return std::nullopt;
        return v;
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

inline std::optional<long long> parse_int(const std::string& s) {
    if (s.empty()) return std::nullopt;
    try {
        std::size_t used = 0;
        const long long v = std::stoll(s, &used);
        if (used != s.size()) return std::nullopt;
        return v;
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

inline std::optional<unsigned> month_from_name(std::string_view name) {
    static constexpr std::array<std::string_view, 12> names{"Jan", "Feb", "Mar", "Apr", "May", "Jun",
                                                            "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"};
    for (unsigned i = 0; i < names.size(); ++i)
        if (names[i] == name) return i + 1;
    return std::nullopt;
}

inline std::optional<Timestamp> civil_to_epoch(int y, unsigned mo, unsigned d, int hh, int mm, int ss) {
    using namespace std::chrono;
    const year_month_day ymd{year{y}, month{mo}, day{d}};
    if (!ymd.ok() || hh < 0 || hh > 23 || mm < 0 || mm > 59 || ss < 0 || ss > 60) return std::nullopt;
    const auto days = sys_days{ymd}.time_since_epoch().count();
    return static_cast<Timestamp>(days) * 86400 + hh * 3600 + mm * 60 + ss;
}

inline std::optional<int> parse_offset(std::string_view s) {
    // "+0000", "-0530"
    if (s.size() != 5 || (s[0] != '+' && s[0] != '-')) return std::nullopt;
    for (std::size_t i = 1; i < 5; ++i)
        if (s[i] < '0' || s[i] > '9') return std::nullopt;
    const int hours = (s[1] - '0') * 10 + (s[2] - '0');
    const int mins = (s[3] - '0') * 10 + (s[4] - '0');
    const int total = hours * 60 + mins;
    return s[0] == '-' ? -total : total;
}

}  // namespace detail

/// Parses "Tue Apr 03 18:00:09 +0000 2012" (Foursquare dump), ISO-8601
/// "2012-04-03T18:00:09Z" / "2012-04-03 18:00:09", or integer epoch seconds.
inline std::optional<Timestamp> parse_timestamp(const std::string& text) {
    const std::string s = trim(text);
    if (s.empty()) return std::nullopt;
    if (auto v = detail::parse_int(s)) return static_cast<Timestamp>(*v);

    int hh = 0, mm = 0, ss = 0;
    // Foursquare layout.
    {
        char dow[4] = {}, mon[4] = {}, off[6] = {};
        unsigned day = 0;
        int year = 0;
        if (std::sscanf(s.c_str(), "%3s %3s %u %d:%d:%d %5s %d", dow, mon, &day, &hh, &mm, &ss, off, &year) == 8) {
            const auto month = detail::month_from_name(mon);
            const auto offset = detail::parse_offset(off);
            if (!month || !offset) return std::nullopt;
            const auto t = detail::civil_to_epoch(year, *month, day, hh, mm, ss);
            if (!t) return std::nullopt;
            return *t - static_cast<Timestamp>(*offset) * 60;
        }
    }
    // ISO-8601 (UTC unless an explicit offset follows).
    {
        int year = 0;
        unsigned month = 0, day = 0;
        char sep = 0;
        int consumed = 0;
        if (std::sscanf(s.c_str(), "%d-%u-%u%c%d:%d:%d%n", &year, &month, &day, &sep, &hh, &mm, &ss, &consumed) == 7 &&
            (sep == 'T' || sep == ' ')) {
            const auto t = detail::civil_to_epoch(year, month, day, hh, mm, ss);
            if (!t) return std::nullopt;
            std::string rest = s.substr(static_cast<std::size_t>(consumed));
            if (rest.empty() || rest == "Z") return *t;
            std::string compact;
            for (char c : rest)
                if (c != ':') compact.push_back(c);
            const auto offset = detail::parse_offset(compact);
            if (!offset) return std::nullopt;
            return *t - static_cast<Timestamp>(*offset) * 60;
        }
    }
    return std::nullopt;
}

namespace detail {

inline std::optional<CheckInEvent> parse_fields(const std::vector<std::string>& f, const ParseOptions& opt) {
    CheckInEvent ev;
    std::string lat, lon, tz, ts;
    if (opt.format == InputFormat::foursquare_tsv) {
        if (f.size() != 8) return std::nullopt;
        ev.user_id = trim(f[0]);
        ev.poi_id = trim(f[1]);
        ev.category_id = trim(f[2]);
        ev.category_name = trim(f[3]);
        lat = trim(f[4]);
        lon = trim(f[5]);
        tz = trim(f[6]);
        ts = f[7];
    } else {
        const auto& m = opt.csv;
        if (static_cast<int>(f.size()) < m.column_count()) return std::nullopt;
        ev.user_id = trim(f[m.user_id]);
        ev.poi_id = trim(f[m.poi_id]);
        ev.category_id = trim(f[m.category_id]);
        ev.category_name = trim(f[m.category_name]);
        lat = trim(f[m.lat]);
        lon = trim(f[m.lon]);
        tz = m.tz_offset_minutes >= 0 ? trim(f[m.tz_offset_minutes]) : "0";
        ts = f[m.timestamp];
    }
    if (ev.user_id.empty() || ev.poi_id.empty() || ev.category_id.empty()) return std::nullopt;
    const auto la = parse_double(lat);
    const auto lo = parse_double(lon);
    const auto off = parse_int(tz);
    const auto t = parse_timestamp(ts);
    if (!la || !lo || !off || !t) return std::nullopt;
    if (*la < -90.0 || *la > 90.0 || *lo < -180.0 || *lo > 180.0 || *t < 0) return std::nullopt;
    ev.lat = *la;
    ev.lon = *lo;
    ev.tz_offset_minutes = static_cast<int>(*off);
    ev.timestamp = *t;
    return ev;
}

}  // namespace detail

/// Parses a check-in log. Events come back in file order; malformed lines are
/// skipped and counted, or raise a parse error in strict mode.
inline ParseResult parse_checkins(std::istream& in, const ParseOptions& opt) {
    ParseResult result;
    std::string line;
    std::size_t line_no = 0;
    const char delim = opt.format == InputFormat::foursquare_tsv ? '\t' : opt.csv.delimiter;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (opt.format == InputFormat::csv && opt.csv.header && line_no == 1) continue;
        if (trim(line).empty()) continue;
        auto ev = detail::parse_fields(split(line, delim), opt);
        if (!ev) {
            if (opt.strict) fail(ErrorKind::parse, "malformed check-in at line " + std::to_string(line_no));
            ++result.skipped;
            result.skipped_lines.push_back(line_no);
            continue;
        }
        result.events.push_back(std::move(*ev));
    }
    return result;
}

inline ParseResult parse_checkins(const std::string& path, const ParseOptions& opt) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::io, "cannot read check-in file " + path);
    return parse_checkins(in, opt);
}

// ---------------------------------------------------------------------------
// Discretization

struct ZoneCell {
    std::int64_t row = 0;
    std::int64_t col = 0;
    friend bool operator==(const ZoneCell&, const ZoneCell&) = default;
};

struct ZoneGrid {
    double cell_size_deg = 0.01;
    double origin_lat = -90.0;
    double origin_lon = -180.0;

    std::int64_t columns() const { return static_cast<std::int64_t>(std::ceil(360.0 / cell_size_deg)) + 1; }

    std::int64_t encode(ZoneCell c) const { return c.row * columns() + c.col; }
};

inline ZoneCell assign_zone(double lat, double lon, const ZoneGrid& grid) {
    require(grid.cell_size_deg > 0.0, "zone grid: cell size must be positive");
    require(lat >= -90.0 && lat <= 90.0 && lon >= -180.0 && lon <= 180.0, "zone grid: coordinates out of range");
    return ZoneCell{static_cast<std::int64_t>(std::floor((lat - grid.origin_lat) / grid.cell_size_deg)),
                    static_cast<std::int64_t>(std::floor((lon - grid.origin_lon) / grid.cell_size_deg))};
}

inline ZoneCell assign_zone(const CheckInEvent& ev, const ZoneGrid& grid) { return assign_zone(ev.lat, ev.lon, grid); }

enum class SlotMode { hour24, hour48_weekpart, hour168_weekly };

inline std::string to_string(SlotMode m) {
    switch (m) {
        case SlotMode::hour24: return "hour24";
        case SlotMode::hour48_weekpart: return "hour48_weekpart";
        case SlotMode::hour168_weekly: return "hour168_weekly";
    }
    return "hour48_weekpart";
}

inline SlotMode slot_mode_from_string(const std::string& s) {
    if (s == "hour24") return SlotMode::hour24;
    if (s == "hour48_weekpart") return SlotMode::hour48_weekpart;
    if (s == "hour168_weekly") return SlotMode::hour168_weekly;
    fail(ErrorKind::config, "unknown time.mode: " + s);
}

struct TimeSlotting {
    SlotMode mode = SlotMode::hour48_weekpart;

    std::size_t slot_count() const {
        switch (mode) {
            case SlotMode::hour24: return 24;
            case SlotMode::hour48_weekpart: return 48;
            case SlotMode::hour168_weekly: return 168;
        }
        return 48;
    }
};

struct LocalClock {
    int hour = 0;       // 0..23
    int iso_weekday = 1;  // Monday = 1 .. Sunday = 7
};

inline LocalClock local_clock(Timestamp utc, int tz_offset_minutes) {
    using namespace std::chrono;
    const Timestamp local = utc + static_cast<Timestamp>(tz_offset_minutes) * 60;
    const Timestamp day = local >= 0 ? local / 86400 : -((-local + 86399) / 86400);
    const Timestamp second_of_day = local - day * 86400;
    const weekday wd{sys_days{days{day}}};
    return LocalClock{static_cast<int>(second_of_day / 3600), static_cast<int>(wd.iso_encoding())};
}

inline std::size_t assign_timeslot(Timestamp utc, int tz_offset_minutes, const TimeSlotting& slotting) {
    const auto clock = local_clock(utc, tz_offset_minutes);
    const bool weekend = clock.iso_weekday >= 6;
    switch (slotting.mode) {
        case SlotMode::hour24: return static_cast<std::size_t>(clock.hour);
        case SlotMode::hour48_weekpart: return static_cast<std::size_t>(clock.hour + (weekend ? 24 : 0));
        case SlotMode::hour168_weekly: return static_cast<std::size_t>((clock.iso_weekday - 1) * 24 + clock.hour);
    }
    return 0;
}

inline std::size_t assign_timeslot(const CheckInEvent& ev, const TimeSlotting& slotting) {
    return assign_timeslot(ev.timestamp, ev.tz_offset_minutes, slotting);
}

// ---------------------------------------------------------------------------
// Splitting

/// floor: floor(train), floor(val), remainder to test.
/// largest_remainder: every part within one event of its target share.
enum class SplitRounding { floor, largest_remainder };

struct SplitOptions {
    std::array<double, 3> fractions{0.7, 0.1, 0.2};
    std::size_t min_events_per_user = 10;
    SplitRounding rounding = SplitRounding::floor;
};

/// (train, val) counts for a sequence of n events.
inline std::pair<std::size_t, std::size_t> split_counts(std::size_t n, const SplitOptions& opt) {
    const double total = static_cast<double>(n);
    std::array<double, 3> target{};
    std::array<std::size_t, 3> count{};
    std::size_t assigned = 0;
    for (std::size_t k = 0; k < 3; ++k) {
        target[k] = opt.fractions[k] * total;
        count[k] = static_cast<std::size_t>(std::floor(target[k] + 1e-9));
        assigned += count[k];
    }
    if (opt.rounding == SplitRounding::floor) {
        const auto train = std::min(count[0], n);
        return {train, std::min(count[1], n - train)};
    }
    std::array<std::size_t, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return target[a] - static_cast<double>(count[a]) > target[b] - static_cast<double>(count[b]);
    });
    for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++count[order[i % 3]];
    return {count[0], count[1]};
}

struct UserSequence {
    std::string user_id;
    std::vector<CheckInEvent> events;  // chronological
    std::size_t n_train = 0;
    std::size_t n_val = 0;
    std::size_t n_test() const { return events.size() - n_train - n_val; }
};

struct SplitDataset {
    std::vector<UserSequence> users;  // sorted by user id
    std::size_t dropped_users = 0;
    SplitOptions options;
};

/// Per-user prefix/middle/suffix split: floor(train), floor(val), remainder test.
inline SplitDataset chronological_split(const std::vector<CheckInEvent>& events, const SplitOptions& opt = {}) {
    require(opt.fractions[0] >= 0 && opt.fractions[1] >= 0 && opt.fractions[2] >= 0, "split fractions must be >= 0");
    require(std::abs(opt.fractions[0] + opt.fractions[1] + opt.fractions[2] - 1.0) < 1e-9,
            "split fractions must sum to 1");
    std::map<std::string, std::vector<CheckInEvent>> by_user;
    for (const auto& ev : events) by_user[ev.user_id].push_back(ev);

    SplitDataset out;
    out.options = opt;
    for (auto& [user, seq] : by_user) {
        if (seq.size() < opt.min_events_per_user || seq.empty()) {
            ++out.dropped_users;
            continue;
        }
        std::stable_sort(seq.begin(), seq.end(),
                         [](const CheckInEvent& a, const CheckInEvent& b) { return a.timestamp < b.timestamp; });
        UserSequence us;
        us.user_id = user;
        std::tie(us.n_train, us.n_val) = split_counts(seq.size(), opt);
        us.events = std::move(seq);
        out.users.push_back(std::move(us));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Indexed dataset

enum class Split { train, val, test };

struct PoiInfo {
    std::string id;
    double lat = 0.0;
    double lon = 0.0;
    std::uint32_t category = 0;
    std::uint32_t zone = 0;
};

struct CategoryInfo {
    std::string id;
    std::string name;
};

/// One check-in with every field resolved to a vocabulary index.
struct Record {
    std::uint32_t user = 0;
    std::uint32_t poi = 0;
    std::uint32_t category = 0;
    std::uint32_t zone = 0;
    std::uint32_t slot = 0;
    Timestamp timestamp = 0;
    friend bool operator==(const Record&, const Record&) = default;
};

struct UserRange {
    std::size_t begin = 0;  // into Dataset::records
    std::size_t n_train = 0;
    std::size_t n_val = 0;
    std::size_t n_test = 0;
    std::size_t size() const { return n_train + n_val + n_test; }
    std::size_t end() const { return begin + size(); }
};

struct Dataset {
    ZoneGrid grid;
    TimeSlotting slotting;
    SplitOptions split_options;

    std::vector<std::string> users;
    std::vector<PoiInfo> pois;
    std::vector<CategoryInfo> categories;
    std::vector<std::int64_t> zone_codes;
    std::vector<Record> records;       // grouped by user, chronological within user
    std::vector<UserRange> user_ranges;

    std::size_t skipped_lines = 0;
    std::size_t dropped_users = 0;

    std::size_t user_count() const { return users.size(); }
    std::size_t poi_count() const { return pois.size(); }
    std::size_t category_count() const { return categories.size(); }
    std::size_t zone_count() const { return zone_codes.size(); }
    std::size_t slot_count() const { return slotting.slot_count(); }

    Split split_of(std::size_t record_index) const {
        const auto& r = user_ranges[records[record_index].user];
        const std::size_t local = record_index - r.begin;
        if (local < r.n_train) return Split::train;
        if (local < r.n_train + r.n_val) return Split::val;
        return Split::test;
    }

    /// Record indices [first, last) of one user's split.
    std::pair<std::size_t, std::size_t> split_range(std::size_t user, Split s) const {
        const auto& r = user_ranges[user];
        switch (s) {
            case Split::train: return {r.begin, r.begin + r.n_train};
            case Split::val: return {r.begin + r.n_train, r.begin + r.n_train + r.n_val};
            case Split::test: return {r.begin + r.n_train + r.n_val, r.end()};
        }
        return {r.begin, r.begin};
    }

    std::size_t train_event_count() const {
        std::size_t n = 0;
        for (const auto& r : user_ranges) n += r.n_train;
        return n;
    }
};

/// Resolves a split into vocabularies (sorted by id for canonical indices),
/// zones and time slots.
inline Dataset build_dataset(const SplitDataset& split, const ZoneGrid& grid, const TimeSlotting& slotting) {
    Dataset ds;
    ds.grid = grid;
    ds.slotting = slotting;
    ds.split_options = split.options;
    ds.dropped_users = split.dropped_users;

    std::map<std::string, std::string> category_names;
    std::map<std::int64_t, std::uint32_t> zone_index;
    std::map<std::string, const CheckInEvent*> poi_source;
    for (const auto& us : split.users) {
        for (const auto& ev : us.events) {
            if (!poi_source.count(ev.poi_id)) poi_source[ev.poi_id] = &ev;
            if (!category_names.count(ev.category_id)) category_names[ev.category_id] = ev.category_name;
        }
    }
    std::map<std::string, std::uint32_t> category_index;
    for (const auto& [id, name] : category_names) {
        category_index[id] = static_cast<std::uint32_t>(ds.categories.size());
        ds.categories.push_back({id, name});
    }
    // A POI's coordinates and category come from its first check-in.
    for (const auto& [id, ev] : poi_source) zone_index[grid.encode(assign_zone(*ev, grid))] = 0;
    for (auto& [code, idx] : zone_index) {
        idx = static_cast<std::uint32_t>(ds.zone_codes.size());
        ds.zone_codes.push_back(code);
    }
    std::map<std::string, std::uint32_t> poi_index;
    for (const auto& [id, ev] : poi_source) {
        poi_index[id] = static_cast<std::uint32_t>(ds.pois.size());
        ds.pois.push_back(PoiInfo{id, ev->lat, ev->lon, category_index.at(ev->category_id),
                                  zone_index.at(grid.encode(assign_zone(*ev, grid)))});
    }

    for (const auto& us : split.users) {
        const auto uid = static_cast<std::uint32_t>(ds.users.size());
        ds.users.push_back(us.user_id);
        UserRange range;
        range.begin = ds.records.size();
        range.n_train = us.n_train;
        range.n_val = us.n_val;
        range.n_test = us.n_test();
        for (const auto& ev : us.events) {
            const auto p = poi_index.at(ev.poi_id);
            ds.records.push_back(Record{uid, p, ds.pois[p].category, ds.pois[p].zone,
                                        static_cast<std::uint32_t>(assign_timeslot(ev, slotting)), ev.timestamp});
        }
        ds.user_ranges.push_back(range);
    }
    return ds;
}

inline ZoneGrid zone_grid_from_config(const Config& cfg) {
    ZoneGrid g;
    g.cell_size_deg = cfg.get_double("zone.cell_size_deg", g.cell_size_deg);
    g.origin_lat = cfg.get_double("zone.origin_lat", g.origin_lat);
    g.origin_lon = cfg.get_double("zone.origin_lon", g.origin_lon);
    if (!(g.cell_size_deg > 0.0)) fail(ErrorKind::config, "zone.cell_size_deg must be > 0");
    return g;
}

inline SplitOptions split_options_from_config(const Config& cfg) {
    SplitOptions o;
    const auto f = cfg.get_doubles("split.fractions", {0.7, 0.1, 0.2});
    if (f.size() != 3) fail(ErrorKind::config, "split.fractions needs three values");
    o.fractions = {f[0], f[1], f[2]};
    if (std::abs(f[0] + f[1] + f[2] - 1.0) > 1e-9) fail(ErrorKind::config, "split.fractions must sum to 1");
    const auto m = cfg.get_int("min_events_per_user", 10);
    if (m < 1) fail(ErrorKind::config, "min_events_per_user must be >= 1");
    o.min_events_per_user = static_cast<std::size_t>(m);
    const auto rounding = cfg.get_string("split.rounding", "floor");
    if (rounding == "floor") o.rounding = SplitRounding::floor;
    else if (rounding == "largest_remainder") o.rounding = SplitRounding::largest_remainder;
    else fail(ErrorKind::config, "unknown split.rounding: " + rounding);
    return o;
}

// ---------------------------------------------------------------------------
// Serialization: canonical JSON, byte-identical for identical content.

inline nlohmann::json to_json(const Dataset& ds) {
    using nlohmann::json;
    json j;
    j["format"] = "stihrl-dataset";
    j["version"] = 1;
    j["config"] = {{"zone.cell_size_deg", ds.grid.cell_size_deg},
                   {"zone.origin_lat", ds.grid.origin_lat},
                   {"zone.origin_lon", ds.grid.origin_lon},
                   {"time.mode", to_string(ds.slotting.mode)},
                   {"split.fractions", ds.split_options.fractions},
                   {"min_events_per_user", ds.split_options.min_events_per_user},
                   {"split.rounding", ds.split_options.rounding == SplitRounding::floor ? "floor" : "largest_remainder"}};
    j["users"] = ds.users;
    json pois = json::array();
    for (const auto& p : ds.pois) pois.push_back({p.id, p.lat, p.lon, p.category, p.zone});
    j["pois"] = std::move(pois);
    json cats = json::array();
    for (const auto& c : ds.categories) cats.push_back({c.id, c.name});
    j["categories"] = std::move(cats);
    j["zones"] = ds.zone_codes;
    j["time_slots"] = ds.slot_count();
    json recs = json::array();
    for (const auto& r : ds.records) recs.push_back({r.user, r.poi, r.category, r.zone, r.slot, r.timestamp});
    j["records"] = std::move(recs);
    json splits = json::array();
    for (const auto& r : ds.user_ranges) splits.push_back({r.begin, r.n_train, r.n_val, r.n_test});
    j["splits"] = std::move(splits);
    j["stats"] = {{"skipped_lines", ds.skipped_lines}, {"dropped_users", ds.dropped_users}};
    return j;
}

inline Dataset dataset_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format") != "stihrl-dataset" || j.at("version") != 1)
            fail(ErrorKind::corrupt, "not a version-1 stihrl dataset");
        Dataset ds;
        const auto& c = j.at("config");
        ds.grid.cell_size_deg = c.at("zone.cell_size_deg");
        ds.grid.origin_lat = c.at("zone.origin_lat");
        ds.grid.origin_lon = c.at("zone.origin_lon");
        ds.slotting.mode = slot_mode_from_string(c.at("time.mode"));
        ds.split_options.fractions = c.at("split.fractions").get<std::array<double, 3>>();
        ds.split_options.min_events_per_user = c.at("min_events_per_user");
        ds.split_options.rounding = c.value("split.rounding", std::string("floor")) == "floor"
                                        ? SplitRounding::floor
                                        : SplitRounding::largest_remainder;
        ds.users = j.at("users").get<std::vector<std::string>>();
        for (const auto& p : j.at("pois"))
            ds.pois.push_back(PoiInfo{p[0].get<std::string>(), p[1].get<double>(), p[2].get<double>(),
                                      p[3].get<std::uint32_t>(), p[4].get<std::uint32_t>()});
        for (const auto& cat : j.at("categories"))
            ds.categories.push_back(CategoryInfo{cat[0].get<std::string>(), cat[1].get<std::string>()});
        ds.zone_codes = j.at("zones").get<std::vector<std::int64_t>>();
        for (const auto& r : j.at("records"))
            ds.records.push_back(Record{r[0].get<std::uint32_t>(), r[1].get<std::uint32_t>(), r[2].get<std::uint32_t>(),
                                        r[3].get<std::uint32_t>(), r[4].get<std::uint32_t>(), r[5].get<Timestamp>()});
        for (const auto& s : j.at("splits"))
            ds.user_ranges.push_back(UserRange{s[0].get<std::size_t>(), s[1].get<std::size_t>(), s[2].get<std::size_t>(),
                                               s[3].get<std::size_t>()});
        ds.skipped_lines = j.at("stats").at("skipped_lines");
        ds.dropped_users = j.at("stats").at("dropped_users");
        for (const auto& r : ds.records) {
            if (r.user >= ds.users.size() || r.poi >= ds.pois.size() || r.category >= ds.categories.size() ||
                r.zone >= ds.zone_codes.size() || r.slot >= ds.slot_count())
                fail(ErrorKind::corrupt, "dataset record references an unknown vocabulary id");
        }
        return ds;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::corrupt, std::string("malformed dataset file: ") + e.what());
    }
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::io, "cannot write " + path);
    out << to_json(ds).dump() << '\n';
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::missing_artifact, "dataset not found: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::corrupt, "malformed dataset file " + path + ": " + e.what());
    }
    return dataset_from_json(j);
}

}  // namespace stihrl

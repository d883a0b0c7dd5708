#pragma once

// Mobility hypergraph: four vertex channels (POI, category, zone, time) and
// four hyperedge kinds. Per user there is one POI, one zone and one time
// hyperedge holding the distinct vertices that user visited; every check-in
// contributes one event hyperedge linking its POI, category, zone and time.

#include <array>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "common.hpp"
#include "ingest.hpp"

namespace stihrl {

enum class Channel : std::uint8_t { poi = 0, category = 1, zone = 2, time = 3 };
inline constexpr std::size_t kChannelCount = 4;

inline const char* to_string(Channel c) {
    switch (c) {
        case Channel::poi: return "poi";
        case Channel::category: return "category";
        case Channel::zone: return "zone";
        case Channel::time: return "time";
    }
    return "?";
}

struct VertexId {
    Channel channel = Channel::poi;
    std::uint32_t index = 0;
    friend auto operator<=>(const VertexId&, const VertexId&) = default;
};

enum class EdgeKind : std::uint8_t { user_poi = 0, user_zone = 1, user_time = 2, event = 3 };
inline constexpr std::size_t kUserEdgeKinds = 3;

inline const char* to_string(EdgeKind k) {
    switch (k) {
        case EdgeKind::user_poi: return "user_poi";
        case EdgeKind::user_zone: return "user_zone";
        case EdgeKind::user_time: return "user_time";
        case EdgeKind::event: return "event";
    }
    return "?";
}

/// Channel held by a homogeneous user hyperedge kind.
inline Channel channel_of(EdgeKind k) {
    switch (k) {
        case EdgeKind::user_poi: return Channel::poi;
        case EdgeKind::user_zone: return Channel::zone;
        case EdgeKind::user_time: return Channel::time;
        case EdgeKind::event: break;
    }
    fail(ErrorKind::invalid_argument, "event hyperedges are heterogeneous");
}

inline bool is_user_edge(EdgeKind k) { return k != EdgeKind::event; }

using EdgeId = std::uint32_t;
inline constexpr EdgeId kNoEdge = std::numeric_limits<EdgeId>::max();

struct Hyperedge {
    EdgeKind kind = EdgeKind::user_poi;
    std::uint32_t owner = 0;  // user index for user kinds, record index for events
    std::uint32_t user = 0;   // the user the edge belongs to (both cases)
    std::vector<VertexId> members;
    friend bool operator==(const Hyperedge&, const Hyperedge&) = default;
};

/// How far the event-mediated linkage of a user hyperedge reaches.
enum class LinkScope {
    owner,    // the owner's own hyperedges of the other kinds
    covisit,  // plus other-kind hyperedges of every user with an event on a shared vertex
};

inline LinkScope link_scope_from_string(const std::string& s) {
    if (s == "owner") return LinkScope::owner;
    if (s == "covisit") return LinkScope::covisit;
    fail(ErrorKind::config, "unknown link scope: " + s);
}

inline std::string to_string(LinkScope s) { return s == LinkScope::owner ? "owner" : "covisit"; }

class MobilityHypergraph {
public:
    MobilityHypergraph() = default;
    MobilityHypergraph(std::array<std::size_t, kChannelCount> channel_sizes, std::size_t user_count)
        : channel_sizes_(channel_sizes), user_edges_(user_count) {
        std::size_t off = 0;
        for (std::size_t c = 0; c < kChannelCount; ++c) {
            offsets_[c] = off;
            off += channel_sizes_[c];
        }
        incidence_.resize(off);
        for (auto& ue : user_edges_) ue.fill(kNoEdge);
    }

    std::size_t channel_size(Channel c) const { return channel_sizes_[static_cast<std::size_t>(c)]; }
    const std::array<std::size_t, kChannelCount>& channel_sizes() const { return channel_sizes_; }
    std::size_t vertex_count() const { return incidence_.size(); }
    std::size_t user_count() const { return user_edges_.size(); }
    std::size_t edge_count() const { return edges_.size(); }

    std::size_t global_index(VertexId v) const {
        require(v.index < channel_size(v.channel), "vertex index outside its channel vocabulary");
        return offsets_[static_cast<std::size_t>(v.channel)] + v.index;
    }

    VertexId vertex_at(std::size_t global) const {
        for (std::size_t c = kChannelCount; c-- > 0;)
            if (global >= offsets_[c])
                return VertexId{static_cast<Channel>(c), static_cast<std::uint32_t>(global - offsets_[c])};
        fail(ErrorKind::invalid_argument, "global vertex index out of range");
    }

    std::size_t channel_offset(Channel c) const { return offsets_[static_cast<std::size_t>(c)]; }

    const Hyperedge& edge(EdgeId id) const { return edges_.at(id); }
    const std::vector<Hyperedge>& edges() const { return edges_; }

    const std::vector<EdgeId>& incidence(VertexId v) const { return incidence_[global_index(v)]; }

    /// Θ lookup: the user's hyperedge of a homogeneous kind, if the user has
    /// any event in this graph.
    std::optional<EdgeId> user_edge(std::uint32_t user, EdgeKind kind) const {
        require(is_user_edge(kind), "user_edge: kind must be a user hyperedge kind");
        if (user >= user_edges_.size()) return std::nullopt;
        const EdgeId e = user_edges_[user][static_cast<std::size_t>(kind)];
        return e == kNoEdge ? std::nullopt : std::optional<EdgeId>(e);
    }

    bool has_user(std::uint32_t user) const { return user_edge(user, EdgeKind::user_poi).has_value(); }

    /// Visit count of a vertex by a user (user hyperedges keep set semantics).
    std::uint32_t multiplicity(std::uint32_t user, VertexId v) const {
        const auto it = multiplicity_.find({user, global_index(v)});
        return it == multiplicity_.end() ? 0 : it->second;
    }

    const std::map<std::pair<std::uint32_t, std::size_t>, std::uint32_t>& multiplicities() const {
        return multiplicity_;
    }

    EdgeId add_edge(Hyperedge e) {
        require(!e.members.empty(), "hyperedge must have members");
        const auto id = static_cast<EdgeId>(edges_.size());
        for (const auto& v : e.members) incidence_[global_index(v)].push_back(id);
        if (is_user_edge(e.kind)) {
            require(e.owner < user_edges_.size(), "user hyperedge owner out of range");
            user_edges_[e.owner][static_cast<std::size_t>(e.kind)] = id;
        }
        edges_.push_back(std::move(e));
        return id;
    }

    void add_visit(std::uint32_t user, VertexId v) { ++multiplicity_[{user, global_index(v)}]; }
    void set_multiplicity(std::uint32_t user, std::size_t global, std::uint32_t count) {
        multiplicity_[{user, global}] = count;
    }

private:
    std::array<std::size_t, kChannelCount> channel_sizes_{};
    std::array<std::size_t, kChannelCount> offsets_{};
    std::vector<Hyperedge> edges_;
    std::vector<std::vector<EdgeId>> incidence_;
    std::vector<std::array<EdgeId, kUserEdgeKinds>> user_edges_;
    std::map<std::pair<std::uint32_t, std::size_t>, std::uint32_t> multiplicity_;
};

struct GraphScope {
    enum class Kind { train_only, up_to, all };
    Kind kind = Kind::train_only;
    Timestamp until = std::numeric_limits<Timestamp>::max();  // exclusive bound for up_to

    static GraphScope train_only() { return {}; }
    static GraphScope all() { return {Kind::all, std::numeric_limits<Timestamp>::max()}; }
    /// Every split's events strictly before t.
    static GraphScope up_to(Timestamp t) { return {Kind::up_to, t}; }
};

inline std::array<std::size_t, kChannelCount> channel_sizes(const Dataset& ds) {
    return {ds.poi_count(), ds.category_count(), ds.zone_count(), ds.slot_count()};
}

/// Builds a hypergraph over the records accepted by `include`.
inline MobilityHypergraph build_hypergraph_from(const Dataset& ds, const std::function<bool(std::size_t)>& include) {
    const auto sizes = channel_sizes(ds);
    MobilityHypergraph g(sizes, ds.user_count());
    std::vector<std::size_t> selected;
    for (std::size_t u = 0; u < ds.user_count(); ++u) {
        const auto& range = ds.user_ranges[u];
        std::array<std::set<std::uint32_t>, kUserEdgeKinds> distinct;
        for (std::size_t i = range.begin; i < range.end(); ++i) {
            if (!include(i)) continue;
            const auto& r = ds.records[i];
            if (r.user != u || r.poi >= sizes[0] || r.category >= sizes[1] || r.zone >= sizes[2] || r.slot >= sizes[3])
                fail(ErrorKind::corrupt, "record " + std::to_string(i) + " references an unknown vocabulary id");
            distinct[0].insert(r.poi);
            distinct[1].insert(r.zone);
            distinct[2].insert(r.slot);
            selected.push_back(i);
        }
        if (distinct[0].empty()) continue;
        constexpr std::array<Channel, kUserEdgeKinds> channels{Channel::poi, Channel::zone, Channel::time};
        for (std::size_t k = 0; k < kUserEdgeKinds; ++k) {
            Hyperedge e{static_cast<EdgeKind>(k), static_cast<std::uint32_t>(u), static_cast<std::uint32_t>(u), {}};
            for (auto idx : distinct[k]) e.members.push_back({channels[k], idx});
            g.add_edge(std::move(e));
        }
    }
    for (auto i : selected) {
        const auto& r = ds.records[i];
        g.add_edge(Hyperedge{EdgeKind::event,
                             static_cast<std::uint32_t>(i),
                             r.user,
                             {{Channel::poi, r.poi}, {Channel::category, r.category}, {Channel::zone, r.zone},
                              {Channel::time, r.slot}}});
        g.add_visit(r.user, {Channel::poi, r.poi});
        g.add_visit(r.user, {Channel::category, r.category});
        g.add_visit(r.user, {Channel::zone, r.zone});
        g.add_visit(r.user, {Channel::time, r.slot});
    }
    return g;
}

inline MobilityHypergraph build_hypergraph(const Dataset& ds, GraphScope scope = GraphScope::train_only()) {
    return build_hypergraph_from(ds, [&](std::size_t i) {
        switch (scope.kind) {
            case GraphScope::Kind::train_only: return ds.split_of(i) == Split::train;
            case GraphScope::Kind::up_to: return ds.records[i].timestamp < scope.until;
            case GraphScope::Kind::all: return true;
        }
        return false;
    });
}

/// Time-bounded view: the graph built from base-scope events with timestamp
/// strictly before t. A user with no earlier event has no user hyperedges.
inline MobilityHypergraph prefix_subgraph(const Dataset& ds, std::uint32_t user, Timestamp t,
                                          GraphScope base = GraphScope::train_only()) {
    require(user < ds.user_count(), "prefix_subgraph: unknown user");
    return build_hypergraph_from(ds, [&](std::size_t i) {
        if (ds.records[i].timestamp >= t) return false;
        switch (base.kind) {
            case GraphScope::Kind::train_only: return ds.split_of(i) == Split::train;
            case GraphScope::Kind::up_to: return ds.records[i].timestamp < base.until;
            case GraphScope::Kind::all: return true;
        }
        return false;
    });
}

/// Same-channel vertices that share a user hyperedge with v. Above `cap`, a
/// uniform sample seeded by (seed, v) is returned. Output is sorted.
inline std::vector<VertexId> same_channel_neighbors(VertexId v, const MobilityHypergraph& g, std::size_t cap,
                                                    std::uint64_t seed = 0) {
    require(cap > 0, "neighbor cap must be positive");
    std::set<VertexId> found;
    for (EdgeId id : g.incidence(v)) {
        const auto& e = g.edge(id);
        if (!is_user_edge(e.kind)) continue;
        for (const auto& m : e.members)
            if (m != v && m.channel == v.channel) found.insert(m);
    }
    std::vector<VertexId> out(found.begin(), found.end());
    if (out.size() > cap) {
        Rng rng(derive_seed(seed, g.global_index(v)));
        out = rng.sample(out, cap);
    }
    return out;
}

/// Φ: user hyperedges of the other kinds linked to user hyperedge `id`
/// through event hyperedges. Sorted, without duplicates.
inline std::vector<EdgeId> event_linked_hyperedges(EdgeId id, const MobilityHypergraph& g,
                                                   LinkScope scope = LinkScope::covisit) {
    const auto& e = g.edge(id);
    if (!is_user_edge(e.kind))
        fail(ErrorKind::invalid_argument, "event_linked_hyperedges is defined for user hyperedges only");
    std::set<std::uint32_t> users;
    if (scope == LinkScope::owner) {
        users.insert(e.user);
    } else {
        for (const auto& v : e.members)
            for (EdgeId inc : g.incidence(v))
                if (g.edge(inc).kind == EdgeKind::event) users.insert(g.edge(inc).user);
    }
    std::vector<EdgeId> out;
    for (auto u : users) {
        for (std::size_t k = 0; k < kUserEdgeKinds; ++k) {
            const auto kind = static_cast<EdgeKind>(k);
            if (kind == e.kind) continue;
            if (auto other = g.user_edge(u, kind)) out.push_back(*other);
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

// ---------------------------------------------------------------------------
// Invariants and statistics

/// Returns a description of every structural violation (empty when sound).
inline std::vector<std::string> check_invariants(const MobilityHypergraph& g) {
    std::vector<std::string> problems;
    for (EdgeId id = 0; id < g.edge_count(); ++id) {
        const auto& e = g.edge(id);
        if (e.members.empty()) problems.push_back("edge " + std::to_string(id) + " has no members");
        if (e.kind == EdgeKind::event) {
            std::array<int, kChannelCount> per{};
            for (const auto& m : e.members) ++per[static_cast<std::size_t>(m.channel)];
            if (e.members.size() != 4 || per != std::array<int, kChannelCount>{1, 1, 1, 1})
                problems.push_back("event edge " + std::to_string(id) + " is not one vertex per channel");
        } else {
            const auto ch = channel_of(e.kind);
            for (const auto& m : e.members)
                if (m.channel != ch) problems.push_back("user edge " + std::to_string(id) + " mixes channels");
            if (g.user_edge(e.owner, e.kind) != id)
                problems.push_back("user edge " + std::to_string(id) + " is not its owner's index entry");
        }
        for (const auto& m : e.members) {
            const auto& inc = g.incidence(m);
            if (std::find(inc.begin(), inc.end(), id) == inc.end())
                problems.push_back("member of edge " + std::to_string(id) + " lacks the incidence entry");
        }
    }
    for (std::size_t gv = 0; gv < g.vertex_count(); ++gv) {
        const auto v = g.vertex_at(gv);
        for (EdgeId id : g.incidence(v)) {
            const auto& mem = g.edge(id).members;
            if (std::find(mem.begin(), mem.end(), v) == mem.end())
                problems.push_back("incidence entry of vertex " + std::to_string(gv) + " points at a non-member edge");
        }
    }
    for (std::uint32_t u = 0; u < g.user_count(); ++u) {
        const bool p = g.user_edge(u, EdgeKind::user_poi).has_value();
        if (p != g.user_edge(u, EdgeKind::user_zone).has_value() || p != g.user_edge(u, EdgeKind::user_time).has_value())
            problems.push_back("user " + std::to_string(u) + " has a partial set of user hyperedges");
    }
    return problems;
}

/// True when every user hyperedge of `smaller` is member-wise contained in
/// the same user's hyperedge of `larger`.
inline bool user_edges_contained(const MobilityHypergraph& smaller, const MobilityHypergraph& larger) {
    for (std::uint32_t u = 0; u < smaller.user_count(); ++u) {
        for (std::size_t k = 0; k < kUserEdgeKinds; ++k) {
            const auto kind = static_cast<EdgeKind>(k);
            const auto a = smaller.user_edge(u, kind);
            if (!a) continue;
            const auto b = larger.user_edge(u, kind);
            if (!b) return false;
            const auto& big = larger.edge(*b).members;
            for (const auto& m : smaller.edge(*a).members)
                if (!std::binary_search(big.begin(), big.end(), m)) return false;
        }
    }
    return true;
}

struct GraphStats {
    std::array<std::size_t, kChannelCount> vertices{};
    std::array<std::size_t, 4> edges{};
};

inline GraphStats graph_stats(const MobilityHypergraph& g) {
    GraphStats s;
    s.vertices = g.channel_sizes();
    for (const auto& e : g.edges()) ++s.edges[static_cast<std::size_t>(e.kind)];
    return s;
}

inline std::string format_stats(const GraphStats& s) {
    std::string out = "vertices\n";
    for (std::size_t c = 0; c < kChannelCount; ++c)
        out += std::string("  ") + to_string(static_cast<Channel>(c)) + "\t" + std::to_string(s.vertices[c]) + "\n";
    out += "hyperedges\n";
    for (std::size_t k = 0; k < 4; ++k)
        out += std::string("  ") + to_string(static_cast<EdgeKind>(k)) + "\t" + std::to_string(s.edges[k]) + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// Versioned binary serialization (little-endian).

namespace detail {

inline constexpr char kGraphMagic[8] = {'S', 'T', 'H', 'R', 'L', 'H', 'G', '1'};
inline constexpr std::uint32_t kGraphVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
    static_assert(std::is_integral_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) out.put(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
}

template <typename T>
T get(std::istream& in) {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        const int c = in.get();
        if (c == EOF) fail(ErrorKind::corrupt, "truncated hypergraph file");
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return static_cast<T>(v);
}

}  // namespace detail

inline void write_hypergraph(const MobilityHypergraph& g, std::ostream& out) {
    out.write(detail::kGraphMagic, sizeof(detail::kGraphMagic));
    detail::put<std::uint32_t>(out, detail::kGraphVersion);
    for (auto s : g.channel_sizes()) detail::put<std::uint64_t>(out, s);
    detail::put<std::uint64_t>(out, g.user_count());
    detail::put<std::uint64_t>(out, g.edge_count());
    for (const auto& e : g.edges()) {
        detail::put<std::uint8_t>(out, static_cast<std::uint8_t>(e.kind));
        detail::put<std::uint32_t>(out, e.owner);
        detail::put<std::uint32_t>(out, e.user);
        detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(e.members.size()));
        for (const auto& m : e.members) {
            detail::put<std::uint8_t>(out, static_cast<std::uint8_t>(m.channel));
            detail::put<std::uint32_t>(out, m.index);
        }
    }
    detail::put<std::uint64_t>(out, g.multiplicities().size());
    for (const auto& [key, count] : g.multiplicities()) {
        detail::put<std::uint32_t>(out, key.first);
        detail::put<std::uint64_t>(out, key.second);
        detail::put<std::uint32_t>(out, count);
    }
}

inline MobilityHypergraph read_hypergraph(std::istream& in) {
    char magic[sizeof(detail::kGraphMagic)];
    in.read(magic, sizeof(magic));
    if (!in || !std::equal(std::begin(magic), std::end(magic), std::begin(detail::kGraphMagic)))
        fail(ErrorKind::corrupt, "not a stihrl hypergraph file");
    if (detail::get<std::uint32_t>(in) != detail::kGraphVersion)
        fail(ErrorKind::corrupt, "unsupported hypergraph file version");
    std::array<std::size_t, kChannelCount> sizes{};
    for (auto& s : sizes) s = detail::get<std::uint64_t>(in);
    const auto users = detail::get<std::uint64_t>(in);
    MobilityHypergraph g(sizes, users);
    const auto edges = detail::get<std::uint64_t>(in);
    for (std::uint64_t i = 0; i < edges; ++i) {
        Hyperedge e;
        const auto kind = detail::get<std::uint8_t>(in);
        if (kind > 3) fail(ErrorKind::corrupt, "bad hyperedge kind");
        e.kind = static_cast<EdgeKind>(kind);
        e.owner = detail::get<std::uint32_t>(in);
        e.user = detail::get<std::uint32_t>(in);
        const auto n = detail::get<std::uint32_t>(in);
        for (std::uint32_t m = 0; m < n; ++m) {
            const auto ch = detail::get<std::uint8_t>(in);
            if (ch > 3) fail(ErrorKind::corrupt, "bad vertex channel");
            const auto idx = detail::get<std::uint32_t>(in);
            if (idx >= sizes[ch]) fail(ErrorKind::corrupt, "vertex index outside vocabulary");
            e.members.push_back({static_cast<Channel>(ch), idx});
        }
        g.add_edge(std::move(e));
    }
    const auto mult = detail::get<std::uint64_t>(in);
    for (std::uint64_t i = 0; i < mult; ++i) {
        const auto u = detail::get<std::uint32_t>(in);
        const auto gv = detail::get<std::uint64_t>(in);
        const auto c = detail::get<std::uint32_t>(in);
        g.set_multiplicity(u, gv, c);
    }
    return g;
}

inline void save_hypergraph(const MobilityHypergraph& g, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::io, "cannot write " + path);
    write_hypergraph(g, out);
}

inline MobilityHypergraph load_hypergraph(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::missing_artifact, "hypergraph not found: " + path);
    return read_hypergraph(in);
}

}  // namespace stihrl

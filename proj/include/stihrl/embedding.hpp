#pragma once

// Attention-based hypergraph embeddings.
//
//   vertex:      α_ij = softmax_j σa(a_hᵀ [W x_i ‖ W x_j]) over j ∈ N(i) ∪ {i}
//                h_i  = ‖_h σ(Σ_j α_ij W_h x_j)
//   hyperedge:   q_e  = σ(Σ_{j ∈ e} h_j)
//   cross-channel update: q'_e = σ(Σ_{k ∈ Φ(e)} W_kind(k) q_k)
//
// Transforms and attention vectors are per channel; aggregation matrices are
// per user hyperedge kind. Pretraining uses a negative-sampling objective on
// event co-membership.

#include <algorithm>
#include <array>
#include <numeric>
#include <set>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "common.hpp"
#include "hypergraph.hpp"
#include "tensor.hpp"

namespace stihrl {

struct EmbeddingConfig {
    std::size_t dim = 64;
    std::size_t heads = 4;
    std::size_t neighbor_cap = 64;
    std::uint64_t neighbor_seed = 0;
    Activation attention_activation = Activation::leaky_relu;
    Activation activation = Activation::relu;
    LinkScope link_scope = LinkScope::owner;

    std::size_t head_dim() const { return dim / heads; }
};

class EmbeddingModel {
public:
    EmbeddingConfig config;
    std::array<std::size_t, kChannelCount> channel_sizes{};
    Matrix features;                                // vertex_count x dim, global vertex order
    std::array<Matrix, kChannelCount> transform;    // dim x dim per channel
    std::array<Matrix, kChannelCount> attention;    // heads x 2·head_dim per channel
    std::array<Matrix, kUserEdgeKinds> aggregation;  // dim x dim per user hyperedge kind

    static EmbeddingModel init(std::array<std::size_t, kChannelCount> sizes, EmbeddingConfig cfg, Rng& rng) {
        require(cfg.dim > 0 && cfg.heads > 0 && cfg.dim % cfg.heads == 0, "embedding dim must be divisible by heads");
        require(cfg.neighbor_cap > 0, "neighbor cap must be positive");
        EmbeddingModel m;
        m.config = cfg;
        m.channel_sizes = sizes;
        std::size_t v = 0;
        for (auto s : sizes) v += s;
        // Identity features behave like a one-hot input: fan-in 1.
        m.features = Matrix(v, cfg.dim);
        const double a = std::sqrt(6.0 / static_cast<double>(1 + cfg.dim));
        for (auto& x : m.features.values()) x = rng.uniform(-a, a);
        for (auto& w : m.transform) w = Matrix::glorot(cfg.dim, cfg.dim, rng);
        for (auto& w : m.attention) w = Matrix::glorot(cfg.heads, 2 * cfg.head_dim(), rng);
        for (auto& w : m.aggregation) w = Matrix::glorot(cfg.dim, cfg.dim, rng);
        return m;
    }

    std::size_t dim() const { return config.dim; }
    std::size_t vertex_count() const { return features.rows(); }

    std::size_t offset(Channel c) const {
        std::size_t off = 0;
        for (std::size_t k = 0; k < static_cast<std::size_t>(c); ++k) off += channel_sizes[k];
        return off;
    }

    std::size_t global_index(VertexId v) const {
        require(v.index < channel_sizes[static_cast<std::size_t>(v.channel)], "vertex outside the model vocabulary");
        return offset(v.channel) + v.index;
    }

    Channel channel_at(std::size_t global) const {
        std::size_t off = 0;
        for (std::size_t c = 0; c < kChannelCount; ++c) {
            off += channel_sizes[c];
            if (global < off) return static_cast<Channel>(c);
        }
        fail(ErrorKind::invalid_argument, "vertex index outside the model vocabulary");
    }

    ParamList params() {
        ParamList out{{"features", features.values()}};
        for (std::size_t c = 0; c < kChannelCount; ++c) {
            const std::string ch = to_string(static_cast<Channel>(c));
            out.push_back({"transform." + ch, transform[c].values()});
            out.push_back({"attention." + ch, attention[c].values()});
        }
        for (std::size_t k = 0; k < kUserEdgeKinds; ++k)
            out.push_back({std::string("aggregation.") + to_string(static_cast<EdgeKind>(k)), aggregation[k].values()});
        return out;
    }

    EmbeddingModel zeros_like() const {
        EmbeddingModel g = *this;
        auto p = g.params();
        zero(p);
        return g;
    }
};

// ---------------------------------------------------------------------------
// Vertex stage

/// Per-vertex attention support: the vertex itself first, then its sampled
/// same-channel neighbors (global indices).
using NeighborIndex = std::vector<std::vector<std::uint32_t>>;

inline NeighborIndex build_neighbor_index(const MobilityHypergraph& g, const EmbeddingModel& model) {
    require(g.channel_sizes() == model.channel_sizes, "graph and embedding vocabularies differ");
    NeighborIndex index(g.vertex_count());
    for (std::size_t gv = 0; gv < g.vertex_count(); ++gv) {
        const auto v = g.vertex_at(gv);
        index[gv].push_back(static_cast<std::uint32_t>(gv));
        for (const auto& n : same_channel_neighbors(v, g, model.config.neighbor_cap, model.config.neighbor_seed))
            index[gv].push_back(static_cast<std::uint32_t>(g.global_index(n)));
    }
    return index;
}

struct AttentionWeights {
    std::vector<VertexId> vertices;  // the vertex itself first, then neighbors
    Vec weights;
};

namespace detail {

/// Head slice [h·dh, (h+1)·dh) of a row.
inline std::span<const double> head_slice(std::span<const double> row, std::size_t head, std::size_t dh) {
    return row.subspan(head * dh, dh);
}

/// Attention logits pre-activation for one head: a_hᵀ[z_self ‖ z_j].
inline double attention_logit(const EmbeddingModel& m, Channel ch, std::size_t head, std::span<const double> z_self,
                              std::span<const double> z_other) {
    const std::size_t dh = m.config.head_dim();
    const auto a = m.attention[static_cast<std::size_t>(ch)].row(head);
    double s = 0.0;
    for (std::size_t k = 0; k < dh; ++k) s += a[k] * z_self[k] + a[dh + k] * z_other[k];
    return s;
}

}  // namespace detail

/// Attention coefficients of one head over {v} ∪ neighbors.
inline AttentionWeights attention_coefficients(VertexId v, const std::vector<VertexId>& neighbors,
                                               const EmbeddingModel& model, std::size_t head) {
    require(head < model.config.heads, "attention head out of range");
    const auto& w = model.transform[static_cast<std::size_t>(v.channel)];
    AttentionWeights out;
    out.vertices.push_back(v);
    for (const auto& n : neighbors) {
        require(n.channel == v.channel, "attention neighbors must share the vertex channel");
        out.vertices.push_back(n);
    }
    const std::size_t dh = model.config.head_dim();
    const Vec zi = matvec(w, model.features.row(model.global_index(v)));
    Vec logits;
    for (const auto& u : out.vertices) {
        const Vec zj = matvec(w, model.features.row(model.global_index(u)));
        logits.push_back(activate(model.config.attention_activation,
                                  detail::attention_logit(model, v.channel, head, detail::head_slice(zi, head, dh),
                                                          detail::head_slice(zj, head, dh))));
    }
    out.weights = softmax(logits);
    return out;
}

/// Forward record of the vertex stage for every vertex.
struct VertexForward {
    Matrix z;    // transformed features W_ch x_v
    Matrix mix;  // Σ_j α_ij z_j per head, before activation
    Matrix h;    // vertex embeddings
    std::vector<Vec> logit_pre;  // per vertex, head-major: [head][support]
    std::vector<Vec> alpha;      // same layout
};

inline VertexForward embed_vertices(const EmbeddingModel& m, const NeighborIndex& support) {
    require(support.size() == m.vertex_count(), "neighbor index does not match the model");
    const std::size_t n = m.vertex_count();
    const std::size_t d = m.dim();
    const std::size_t dh = m.config.head_dim();
    const std::size_t heads = m.config.heads;
    VertexForward f;
    f.z = Matrix(n, d);
    f.mix = Matrix(n, d);
    f.h = Matrix(n, d);
    f.logit_pre.resize(n);
    f.alpha.resize(n);
    for (std::size_t v = 0; v < n; ++v) {
        const auto zv = matvec(m.transform[static_cast<std::size_t>(m.channel_at(v))], m.features.row(v));
        std::copy(zv.begin(), zv.end(), f.z.row(v).begin());
    }
    for (std::size_t v = 0; v < n; ++v) {
        const Channel ch = m.channel_at(v);
        const auto& sup = support[v];
        const std::size_t s = sup.size();
        f.logit_pre[v].assign(heads * s, 0.0);
        f.alpha[v].assign(heads * s, 0.0);
        auto mix = f.mix.row(v);
        for (std::size_t h = 0; h < heads; ++h) {
            const auto zi = detail::head_slice(f.z.row(v), h, dh);
            Vec logits(s);
            for (std::size_t j = 0; j < s; ++j) {
                const double pre = detail::attention_logit(m, ch, h, zi, detail::head_slice(f.z.row(sup[j]), h, dh));
                f.logit_pre[v][h * s + j] = pre;
                logits[j] = activate(m.config.attention_activation, pre);
            }
            const auto a = softmax(logits);
            for (std::size_t j = 0; j < s; ++j) {
                f.alpha[v][h * s + j] = a[j];
                const auto zj = detail::head_slice(f.z.row(sup[j]), h, dh);
                for (std::size_t k = 0; k < dh; ++k) mix[h * dh + k] += a[j] * zj[k];
            }
        }
        auto hv = f.h.row(v);
        for (std::size_t k = 0; k < d; ++k) hv[k] = activate(m.config.activation, mix[k]);
    }
    return f;
}

/// Embedding of a single vertex (same computation as embed_vertices).
inline Vec vertex_embed(VertexId v, const MobilityHypergraph& g, const EmbeddingModel& model) {
    const auto neighbors = same_channel_neighbors(v, g, model.config.neighbor_cap, model.config.neighbor_seed);
    const std::size_t dh = model.config.head_dim();
    const auto& w = model.transform[static_cast<std::size_t>(v.channel)];
    Vec h(model.dim(), 0.0);
    for (std::size_t head = 0; head < model.config.heads; ++head) {
        const auto att = attention_coefficients(v, neighbors, model, head);
        for (std::size_t j = 0; j < att.vertices.size(); ++j) {
            const Vec zj = matvec(w, model.features.row(model.global_index(att.vertices[j])));
            for (std::size_t k = 0; k < dh; ++k) h[head * dh + k] += att.weights[j] * zj[head * dh + k];
        }
    }
    for (auto& x : h) x = activate(model.config.activation, x);
    return h;
}

/// Accumulates gradients of the vertex stage given ∂L/∂h for every vertex.
inline void backprop_vertices(const EmbeddingModel& m, const NeighborIndex& support, const VertexForward& f,
                              const Matrix& dh_all, EmbeddingModel& grad) {
    const std::size_t n = m.vertex_count();
    const std::size_t d = m.dim();
    const std::size_t dh = m.config.head_dim();
    const std::size_t heads = m.config.heads;
    Matrix dz(n, d);
    for (std::size_t v = 0; v < n; ++v) {
        const auto g_h = dh_all.row(v);
        if (std::all_of(g_h.begin(), g_h.end(), [](double x) { return x == 0.0; })) continue;
        const Channel ch = m.channel_at(v);
        const auto& a_vec = m.attention[static_cast<std::size_t>(ch)];
        auto& da_vec = grad.attention[static_cast<std::size_t>(ch)];
        const auto& sup = support[v];
        const std::size_t s = sup.size();
        for (std::size_t h = 0; h < heads; ++h) {
            Vec dmix(dh);
            bool any = false;
            for (std::size_t k = 0; k < dh; ++k) {
                dmix[k] = g_h[h * dh + k] * activate_grad(m.config.activation, f.mix(v, h * dh + k));
                any = any || dmix[k] != 0.0;
            }
            if (!any) continue;
            Vec dalpha(s);
            double inner = 0.0;
            for (std::size_t j = 0; j < s; ++j) {
                const double a = f.alpha[v][h * s + j];
                const auto zj = detail::head_slice(f.z.row(sup[j]), h, dh);
                double dot_ = 0.0;
                for (std::size_t k = 0; k < dh; ++k) {
                    dz(sup[j], h * dh + k) += a * dmix[k];
                    dot_ += dmix[k] * zj[k];
                }
                dalpha[j] = dot_;
                inner += a * dot_;
            }
            const auto zi = detail::head_slice(f.z.row(v), h, dh);
            const auto a_row = a_vec.row(h);
            auto da_row = da_vec.row(h);
            for (std::size_t j = 0; j < s; ++j) {
                const double a = f.alpha[v][h * s + j];
                const double dlogit = a * (dalpha[j] - inner) *
                                      activate_grad(m.config.attention_activation, f.logit_pre[v][h * s + j]);
                if (dlogit == 0.0) continue;
                const auto zj = detail::head_slice(f.z.row(sup[j]), h, dh);
                for (std::size_t k = 0; k < dh; ++k) {
                    da_row[k] += dlogit * zi[k];
                    da_row[dh + k] += dlogit * zj[k];
                    dz(v, h * dh + k) += dlogit * a_row[k];
                    dz(sup[j], h * dh + k) += dlogit * a_row[dh + k];
                }
            }
        }
    }
    for (std::size_t v = 0; v < n; ++v) {
        const auto g = dz.row(v);
        if (std::all_of(g.begin(), g.end(), [](double x) { return x == 0.0; })) continue;
        const auto c = static_cast<std::size_t>(m.channel_at(v));
        add_outer(grad.transform[c], g, m.features.row(v));
        const auto dx = matvec_transposed(m.transform[c], g);
        axpy(1.0, dx, grad.features.row(v));
    }
}

// ---------------------------------------------------------------------------
// Hyperedge stages

enum class EmbeddingStage { homogeneous, cross_channel };

struct HyperedgeEmbedding {
    EdgeId edge = 0;
    Vec q;
    EmbeddingStage stage = EmbeddingStage::homogeneous;
};

/// Pre-activation of the homogeneous stage: Σ_{j ∈ e} h_j.
inline Vec member_sum(const Hyperedge& e, const MobilityHypergraph& g, const Matrix& h) {
    Vec s(h.cols(), 0.0);
    for (const auto& v : e.members) axpy(1.0, h.row(g.global_index(v)), s);
    return s;
}

inline HyperedgeEmbedding homogeneous_hyperedge_embed(EdgeId id, const MobilityHypergraph& g, const Matrix& h,
                                                      const EmbeddingModel& model) {
    const auto& e = g.edge(id);
    if (!is_user_edge(e.kind)) fail(ErrorKind::invalid_argument, "homogeneous embedding needs a user hyperedge");
    return {id, activate(model.config.activation, member_sum(e, g, h)), EmbeddingStage::homogeneous};
}

inline HyperedgeEmbedding homogeneous_hyperedge_embed(EdgeId id, const MobilityHypergraph& g,
                                                      const EmbeddingModel& model) {
    const auto& e = g.edge(id);
    if (!is_user_edge(e.kind)) fail(ErrorKind::invalid_argument, "homogeneous embedding needs a user hyperedge");
    Vec s(model.dim(), 0.0);
    for (const auto& v : e.members) axpy(1.0, vertex_embed(v, g, model), s);
    return {id, activate(model.config.activation, s), EmbeddingStage::homogeneous};
}

/// Homogeneous-stage embeddings of every user hyperedge (empty for events).
inline std::vector<Vec> homogeneous_all(const MobilityHypergraph& g, const Matrix& h, const EmbeddingModel& model) {
    std::vector<Vec> q(g.edge_count());
    for (EdgeId id = 0; id < g.edge_count(); ++id)
        if (is_user_edge(g.edge(id).kind)) q[id] = homogeneous_hyperedge_embed(id, g, h, model).q;
    return q;
}

/// Cross-channel update from the homogeneous embeddings of the linked edges.
/// With no linked edge the homogeneous embedding passes through unchanged.
inline HyperedgeEmbedding cross_channel_update(EdgeId id, const MobilityHypergraph& g,
                                               const std::vector<Vec>& homogeneous, const EmbeddingModel& model,
                                               const std::vector<EdgeId>& linked) {
    if (!is_user_edge(g.edge(id).kind)) fail(ErrorKind::invalid_argument, "cross-channel update needs a user hyperedge");
    if (linked.empty()) return {id, homogeneous.at(id), EmbeddingStage::cross_channel};
    Vec s(model.dim(), 0.0);
    for (EdgeId k : linked) {
        const auto kind = static_cast<std::size_t>(g.edge(k).kind);
        axpy(1.0, matvec(model.aggregation[kind], homogeneous.at(k)), s);
    }
    return {id, activate(model.config.activation, s), EmbeddingStage::cross_channel};
}

inline HyperedgeEmbedding cross_channel_update(EdgeId id, const MobilityHypergraph& g,
                                               const std::vector<Vec>& homogeneous, const EmbeddingModel& model) {
    return cross_channel_update(id, g, homogeneous, model, event_linked_hyperedges(id, g, model.config.link_scope));
}

/// Both stages for every user hyperedge of a graph.
struct HyperedgeTable {
    std::vector<Vec> homogeneous;
    std::vector<Vec> cross;
};

inline HyperedgeTable embed_hyperedges(const MobilityHypergraph& g, const Matrix& h, const EmbeddingModel& model) {
    HyperedgeTable t;
    t.homogeneous = homogeneous_all(g, h, model);
    t.cross.resize(g.edge_count());
    for (EdgeId id = 0; id < g.edge_count(); ++id)
        if (is_user_edge(g.edge(id).kind)) t.cross[id] = cross_channel_update(id, g, t.homogeneous, model).q;
    return t;
}

/// Vertex embeddings of `model` restricted to the vertices of g.
inline Matrix vertex_table(const MobilityHypergraph& g, const EmbeddingModel& model) {
    return embed_vertices(model, build_neighbor_index(g, model)).h;
}

// ---------------------------------------------------------------------------
// Contrastive pretraining

struct PretrainConfig {
    std::size_t epochs = 10;
    std::size_t batch_size = 128;
    std::size_t negatives = 5;
    double lr = 0.001;
    std::uint64_t seed = 0;
    bool hyperedge_term = true;
};

/// One sampled training unit: an event hyperedge plus its negatives.
struct ContrastiveItem {
    EdgeId event = 0;
    // For each of the 6 member pairs (a, b): K negatives from b's channel.
    std::array<std::vector<std::uint32_t>, 6> pair_negatives;
    // For each user kind: K negatives from that kind's channel.
    std::array<std::vector<std::uint32_t>, kUserEdgeKinds> edge_negatives;
};

inline constexpr std::array<std::pair<std::size_t, std::size_t>, 6> kMemberPairs{
    {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}}};

inline ContrastiveItem sample_item(EdgeId event, const MobilityHypergraph& g, std::size_t k, Rng& rng) {
    ContrastiveItem item;
    item.event = event;
    const auto& members = g.edge(event).members;
    auto draw = [&](Channel ch) {
        std::vector<std::uint32_t> out(k);
        for (auto& x : out)
            x = static_cast<std::uint32_t>(g.channel_offset(ch) + rng.below(g.channel_size(ch)));
        return out;
    };
    for (std::size_t p = 0; p < kMemberPairs.size(); ++p) item.pair_negatives[p] = draw(members[kMemberPairs[p].second].channel);
    for (std::size_t kind = 0; kind < kUserEdgeKinds; ++kind)
        item.edge_negatives[kind] = draw(channel_of(static_cast<EdgeKind>(kind)));
    return item;
}

/// Static structure reused across batches.
struct ContrastiveContext {
    const MobilityHypergraph* graph = nullptr;
    NeighborIndex support;
    std::vector<std::vector<EdgeId>> linked;  // Φ per user edge
};

inline ContrastiveContext make_context(const MobilityHypergraph& g, const EmbeddingModel& model) {
    ContrastiveContext c;
    c.graph = &g;
    c.support = build_neighbor_index(g, model);
    c.linked.resize(g.edge_count());
    for (EdgeId id = 0; id < g.edge_count(); ++id)
        if (is_user_edge(g.edge(id).kind)) c.linked[id] = event_linked_hyperedges(id, g, model.config.link_scope);
    return c;
}

namespace detail {

/// -log σ(x) and its derivative with respect to x.
inline std::pair<double, double> neg_log_sigmoid(double x) { return {-log_logistic(x), -(1.0 - logistic(x))}; }

}  // namespace detail

/// Mean loss over the batch; accumulates its gradient into `grad` if given.
inline double contrastive_loss(const EmbeddingModel& m, const ContrastiveContext& ctx,
                               const std::vector<ContrastiveItem>& batch, EmbeddingModel* grad,
                               bool hyperedge_term = true) {
    require(!batch.empty(), "contrastive_loss: empty batch");
    const auto& g = *ctx.graph;
    const std::size_t d = m.dim();
    const auto f = embed_vertices(m, ctx.support);
    Matrix dH(m.vertex_count(), d);
    const double scale = 1.0 / static_cast<double>(batch.size());
    double loss = 0.0;

    auto pair_term = [&](std::span<const double> x, std::uint32_t y, double sign, std::span<double> dx) {
        const auto hy = f.h.row(y);
        const auto [l, dl] = detail::neg_log_sigmoid(sign * dot(x, hy));
        loss += scale * l;
        if (grad) {
            const double c = scale * dl * sign;
            axpy(c, hy, dx);
            axpy(c, x, dH.row(y));
        }
    };

    for (const auto& item : batch) {
        const auto& members = g.edge(item.event).members;
        std::array<std::uint32_t, 4> gv{};
        for (std::size_t i = 0; i < 4; ++i) gv[i] = static_cast<std::uint32_t>(g.global_index(members[i]));
        for (std::size_t p = 0; p < kMemberPairs.size(); ++p) {
            const auto [ia, ib] = kMemberPairs[p];
            pair_term(f.h.row(gv[ia]), gv[ib], 1.0, dH.row(gv[ia]));
            for (auto neg : item.pair_negatives[p]) pair_term(f.h.row(gv[ia]), neg, -1.0, dH.row(gv[ia]));
        }
    }

    if (hyperedge_term) {
        // Homogeneous and cross-channel embeddings of the owners' hyperedges.
        std::vector<std::optional<Vec>> pre_q(g.edge_count()), q(g.edge_count());
        auto need_q = [&](EdgeId id) -> const Vec& {
            if (!q[id]) {
                pre_q[id] = member_sum(g.edge(id), g, f.h);
                q[id] = activate(m.config.activation, *pre_q[id]);
            }
            return *q[id];
        };
        std::vector<Vec> dq(g.edge_count());
        for (const auto& item : batch) {
            const auto& ev = g.edge(item.event);
            for (std::size_t kind = 0; kind < kUserEdgeKinds; ++kind) {
                const auto id = *g.user_edge(ev.user, static_cast<EdgeKind>(kind));
                const auto& linked = ctx.linked[id];
                Vec pre(d, 0.0);
                if (linked.empty()) {
                    pre = need_q(id);  // pass-through, treated as a constant activation of itself
                } else {
                    for (EdgeId k : linked)
                        axpy(1.0, matvec(m.aggregation[static_cast<std::size_t>(g.edge(k).kind)], need_q(k)), pre);
                }
                const Vec qc = linked.empty() ? pre : activate(m.config.activation, pre);
                Vec dqc(d, 0.0);
                const Channel ch = channel_of(static_cast<EdgeKind>(kind));
                const auto target = static_cast<std::uint32_t>(g.global_index(ev.members[static_cast<std::size_t>(ch)]));
                pair_term(qc, target, 1.0, dqc);
                for (auto neg : item.edge_negatives[kind]) pair_term(qc, neg, -1.0, dqc);
                if (!grad) continue;
                if (linked.empty()) {
                    if (dq[id].empty()) dq[id].assign(d, 0.0);
                    axpy(1.0, dqc, dq[id]);
                    continue;
                }
                Vec dpre(d);
                for (std::size_t i = 0; i < d; ++i) dpre[i] = dqc[i] * activate_grad(m.config.activation, pre[i]);
                for (EdgeId k : linked) {
                    const auto kk = static_cast<std::size_t>(g.edge(k).kind);
                    add_outer(grad->aggregation[kk], dpre, *q[k]);
                    if (dq[k].empty()) dq[k].assign(d, 0.0);
                    axpy(1.0, matvec_transposed(m.aggregation[kk], dpre), dq[k]);
                }
            }
        }
        if (grad) {
            for (EdgeId id = 0; id < g.edge_count(); ++id) {
                if (dq[id].empty()) continue;
                Vec dpre(d);
                for (std::size_t i = 0; i < d; ++i) dpre[i] = dq[id][i] * activate_grad(m.config.activation, (*pre_q[id])[i]);
                for (const auto& v : g.edge(id).members) axpy(1.0, dpre, dH.row(g.global_index(v)));
            }
        }
    }
    if (grad) backprop_vertices(m, ctx.support, f, dH, *grad);
    return loss;
}

struct PretrainResult {
    EmbeddingModel model;
    std::vector<double> epoch_loss;
    bool diverged = false;
    std::size_t completed_epochs = 0;
};

/// Minibatch Adam on the contrastive loss over the graph's event hyperedges.
/// On a non-finite loss or gradient the last finite epoch is returned with
/// `diverged` set.
inline PretrainResult pretrain_contrastive(const MobilityHypergraph& g, EmbeddingModel model, const PretrainConfig& cfg) {
    PretrainResult result{model, {}, false, 0};
    if (cfg.epochs == 0) return result;
    std::vector<EdgeId> events;
    for (EdgeId id = 0; id < g.edge_count(); ++id)
        if (g.edge(id).kind == EdgeKind::event) events.push_back(id);
    require(!events.empty(), "pretraining needs at least one event hyperedge");
    require(cfg.batch_size > 0, "batch size must be positive");
    const auto ctx = make_context(g, model);
    Rng rng(derive_seed(cfg.seed, 0xE3B));
    AdamState adam(cfg.lr);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(events);
        double total = 0.0;
        std::size_t batches = 0;
        bool finite = true;
        for (std::size_t start = 0; start < events.size() && finite; start += cfg.batch_size) {
            std::vector<ContrastiveItem> batch;
            for (std::size_t i = start; i < std::min(events.size(), start + cfg.batch_size); ++i)
                batch.push_back(sample_item(events[i], g, cfg.negatives, rng));
            auto grad = model.zeros_like();
            const double l = contrastive_loss(model, ctx, batch, &grad, cfg.hyperedge_term);
            auto gp = grad.params();
            if (!std::isfinite(l) || !all_finite(flatten(gp))) {
                finite = false;
                break;
            }
            auto mp = model.params();
            adam_step(mp, gp, adam, Direction::descent);
            total += l;
            ++batches;
        }
        if (!finite || !all_finite(flatten(model.params()))) {
            result.diverged = true;
            return result;
        }
        result.epoch_loss.push_back(total / static_cast<double>(batches));
        result.model = model;
        result.completed_epochs = epoch + 1;
    }
    return result;
}

// ---------------------------------------------------------------------------
// Prefix sweep: per-record cross-channel embeddings of the owner's user
// hyperedges computed from every event strictly earlier than the record.

/// Which user hyperedge kinds take part (hyperedge ablations). Excluded kinds
/// are dropped from the linkage and yield zero embeddings.
struct EdgeMask {
    std::array<bool, kUserEdgeKinds> active{true, true, true};
    bool operator[](EdgeKind k) const { return active[static_cast<std::size_t>(k)]; }
    static EdgeMask from_string(const std::string& spec);
};

/// Parses e.g. "poi,zone,time", "poi+time" or "all".
inline EdgeMask EdgeMask::from_string(const std::string& spec) {
    if (spec == "all" || spec.empty()) return {};
    EdgeMask m{{false, false, false}};
    for (auto part : split(spec, spec.find('+') != std::string::npos ? '+' : ',')) {
        part = trim(part);
        if (part == "poi") m.active[0] = true;
        else if (part == "zone") m.active[1] = true;
        else if (part == "time") m.active[2] = true;
        else fail(ErrorKind::config, "unknown hyperedge kind: " + part);
    }
    return m;
}

/// Per record: cross-channel embeddings (poi, zone, time) of the owner's
/// prefix hyperedges, plus a cold flag when the owner has no earlier event.
struct PrefixEmbeddings {
    std::size_t dim = 0;
    std::vector<Vec> poi, zone, time;
    std::vector<bool> cold;

    const Vec& of(std::size_t record, EdgeKind k) const {
        switch (k) {
            case EdgeKind::user_poi: return poi.at(record);
            case EdgeKind::user_zone: return zone.at(record);
            case EdgeKind::user_time: return time.at(record);
            case EdgeKind::event: break;
        }
        fail(ErrorKind::invalid_argument, "no prefix embedding for event hyperedges");
    }
};

namespace detail {

/// Running state of one user's prefix hyperedges.
struct UserPrefix {
    std::array<std::set<std::uint32_t>, kUserEdgeKinds> members;  // channel-local indices
    std::array<Vec, kUserEdgeKinds> sum;                          // Σ h over members
    std::array<Vec, kUserEdgeKinds> mixed;                        // W_kind q_kind
    bool any = false;
};

inline std::array<std::uint32_t, kUserEdgeKinds> edge_vertices(const Record& r) { return {r.poi, r.zone, r.slot}; }

}  // namespace detail

/// Sweeps all records chronologically. `h` holds vertex embeddings in the
/// dataset's global vertex order (poi, category, zone, time).
inline PrefixEmbeddings prefix_embeddings(const Dataset& ds, const Matrix& h, const EmbeddingModel& model,
                                          EdgeMask mask = {}) {
    const std::size_t d = model.dim();
    require(h.cols() == d, "vertex table dimension mismatch");
    const auto sizes = channel_sizes(ds);
    require(sizes == model.channel_sizes, "dataset and embedding vocabularies differ");
    constexpr std::array<Channel, kUserEdgeKinds> channels{Channel::poi, Channel::zone, Channel::time};
    const Activation act = model.config.activation;

    PrefixEmbeddings out;
    out.dim = d;
    const std::size_t n = ds.records.size();
    out.poi.assign(n, Vec(d, 0.0));
    out.zone.assign(n, Vec(d, 0.0));
    out.time.assign(n, Vec(d, 0.0));
    out.cold.assign(n, true);

    std::vector<detail::UserPrefix> users(ds.user_count());
    for (auto& u : users)
        for (std::size_t k = 0; k < kUserEdgeKinds; ++k) {
            u.sum[k].assign(d, 0.0);
            u.mixed[k].assign(d, 0.0);
        }

    auto refresh_mixed = [&](detail::UserPrefix& u, std::size_t k) {
        u.mixed[k] = matvec(model.aggregation[k], activate(act, u.sum[k]));
    };

    auto add_record = [&](const Record& r) {
        auto& u = users[r.user];
        u.any = true;
        const auto verts = detail::edge_vertices(r);
        for (std::size_t k = 0; k < kUserEdgeKinds; ++k) {
            if (!mask.active[k] || !u.members[k].insert(verts[k]).second) continue;
            axpy(1.0, h.row(model.offset(channels[k]) + verts[k]), u.sum[k]);
            refresh_mixed(u, k);
        }
    };

    // Users whose events touch a vertex, per global vertex (covisit scope).
    std::vector<std::set<std::uint32_t>> visitors;
    if (model.config.link_scope == LinkScope::covisit) visitors.resize(model.vertex_count());

    auto write_state = [&](std::size_t idx) {
        const auto& rec = ds.records[idx];
        const auto& u = users[rec.user];
        if (!u.any) return;
        out.cold[idx] = false;
        std::array<Vec*, kUserEdgeKinds> target{&out.poi[idx], &out.zone[idx], &out.time[idx]};
        for (std::size_t k = 0; k < kUserEdgeKinds; ++k) {
            if (!mask.active[k]) continue;
            Vec pre(d, 0.0);
            bool linked = false;
            if (model.config.link_scope == LinkScope::owner) {
                for (std::size_t o = 0; o < kUserEdgeKinds; ++o) {
                    if (o == k || !mask.active[o] || u.members[o].empty()) continue;
                    axpy(1.0, u.mixed[o], pre);
                    linked = true;
                }
            } else {
                std::set<std::uint32_t> linked_users;
                for (auto v : u.members[k]) {
                    const auto& vis = visitors[model.offset(channels[k]) + v];
                    linked_users.insert(vis.begin(), vis.end());
                }
                for (auto w : linked_users)
                    for (std::size_t o = 0; o < kUserEdgeKinds; ++o) {
                        if (o == k || !mask.active[o] || users[w].members[o].empty()) continue;
                        axpy(1.0, users[w].mixed[o], pre);
                        linked = true;
                    }
            }
            *target[k] = linked ? activate(act, pre) : activate(act, u.sum[k]);
        }
    };

    // Global chronological order; ties keep record order. A record only sees
    // records with a strictly smaller timestamp.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return ds.records[a].timestamp < ds.records[b].timestamp; });
    std::size_t applied = 0;
    for (std::size_t pos = 0; pos < n; ++pos) {
        const auto t = ds.records[order[pos]].timestamp;
        while (applied < n && ds.records[order[applied]].timestamp < t) {
            const auto& r = ds.records[order[applied]];
            add_record(r);
            if (!visitors.empty()) {
                visitors[model.offset(Channel::poi) + r.poi].insert(r.user);
                visitors[model.offset(Channel::category) + r.category].insert(r.user);
                visitors[model.offset(Channel::zone) + r.zone].insert(r.user);
                visitors[model.offset(Channel::time) + r.slot].insert(r.user);
            }
            ++applied;
        }
        write_state(order[pos]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline nlohmann::json to_json(const EmbeddingModel& m) {
    nlohmann::json j;
    j["format"] = "stihrl-embedding";
    j["version"] = 1;
    j["config"] = {{"dim", m.config.dim},
                   {"heads", m.config.heads},
                   {"neighbor_cap", m.config.neighbor_cap},
                   {"neighbor_seed", m.config.neighbor_seed},
                   {"attention_activation", to_string(m.config.attention_activation)},
                   {"activation", to_string(m.config.activation)},
                   {"link_scope", to_string(m.config.link_scope)}};
    j["channel_sizes"] = m.channel_sizes;
    j["features"] = m.features;
    j["transform"] = m.transform;
    j["attention"] = m.attention;
    j["aggregation"] = m.aggregation;
    return j;
}

inline EmbeddingModel embedding_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format") != "stihrl-embedding" || j.at("version") != 1)
            fail(ErrorKind::corrupt, "not a version-1 embedding checkpoint");
        EmbeddingModel m;
        const auto& c = j.at("config");
        m.config.dim = c.at("dim").get<std::size_t>();
        m.config.heads = c.at("heads").get<std::size_t>();
        m.config.neighbor_cap = c.at("neighbor_cap").get<std::size_t>();
        m.config.neighbor_seed = c.at("neighbor_seed").get<std::uint64_t>();
        m.config.attention_activation = activation_from_string(c.at("attention_activation").get<std::string>());
        m.config.activation = activation_from_string(c.at("activation").get<std::string>());
        m.config.link_scope = link_scope_from_string(c.at("link_scope").get<std::string>());
        m.channel_sizes = j.at("channel_sizes").get<std::array<std::size_t, kChannelCount>>();
        m.features = j.at("features").get<Matrix>();
        m.transform = j.at("transform").get<std::array<Matrix, kChannelCount>>();
        m.attention = j.at("attention").get<std::array<Matrix, kChannelCount>>();
        m.aggregation = j.at("aggregation").get<std::array<Matrix, kUserEdgeKinds>>();
        std::size_t v = 0;
        for (auto s : m.channel_sizes) v += s;
        if (m.features.rows() != v || m.features.cols() != m.config.dim)
            fail(ErrorKind::corrupt, "embedding feature table has the wrong shape");
        return m;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::corrupt, std::string("malformed embedding checkpoint: ") + e.what());
    }
}

inline void save_embedding(const EmbeddingModel& m, const std::string& path) { write_file_atomic(path, to_json(m).dump()); }

inline EmbeddingModel load_embedding(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::missing_artifact, "missing embedding checkpoint: " + path);
    try {
        return embedding_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorKind::corrupt, "unreadable embedding checkpoint " + path + ": " + e.what());
    }
}

}  // namespace stihrl

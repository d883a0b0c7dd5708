#pragma once

// In-memory pipeline stages shared by the CLI, ablations and acceptance runs.

#include <string>
#include <vector>

#include "agents.hpp"
#include "config.hpp"
#include "embedding.hpp"
#include "environment.hpp"
#include "hypergraph.hpp"
#include "ingest.hpp"

namespace stihrl {

inline TimeSlotting time_slotting_from_config(const Config& cfg) {
    TimeSlotting t;
    t.mode = slot_mode_from_string(cfg.get_string("time.mode", "hour48_weekpart"));
    return t;
}

inline EmbeddingConfig embedding_config_from_config(const Config& cfg) {
    EmbeddingConfig e;
    e.dim = static_cast<std::size_t>(cfg.get_int("embed.dim", static_cast<long long>(e.dim)));
    e.heads = static_cast<std::size_t>(cfg.get_int("embed.heads", static_cast<long long>(e.heads)));
    e.neighbor_cap = static_cast<std::size_t>(cfg.get_int("embed.neighbor_cap", static_cast<long long>(e.neighbor_cap)));
    e.neighbor_seed = static_cast<std::uint64_t>(cfg.get_int("embed.seed", cfg.get_int("seed", 0)));
    e.attention_activation = activation_from_string(cfg.get_string("embed.attention_activation", to_string(e.attention_activation)));
    e.activation = activation_from_string(cfg.get_string("embed.activation", to_string(e.activation)));
    e.link_scope = link_scope_from_string(cfg.get_string("embed.link_scope", "owner"));
    if (e.dim == 0 || e.heads == 0 || e.dim % e.heads != 0)
        fail(ErrorKind::config, "embed.dim must be a positive multiple of embed.heads");
    return e;
}

inline PretrainConfig pretrain_config_from_config(const Config& cfg) {
    PretrainConfig p;
    p.epochs = static_cast<std::size_t>(cfg.get_int("embed.epochs", static_cast<long long>(p.epochs)));
    p.batch_size = static_cast<std::size_t>(cfg.get_int("embed.batch_size", static_cast<long long>(p.batch_size)));
    p.negatives = static_cast<std::size_t>(cfg.get_int("embed.negatives", static_cast<long long>(p.negatives)));
    p.lr = cfg.get_double("embed.lr", p.lr);
    p.seed = static_cast<std::uint64_t>(cfg.get_int("embed.seed", cfg.get_int("seed", 0)));
    p.hyperedge_term = cfg.get_bool("embed.hyperedge_term", p.hyperedge_term);
    if (p.batch_size == 0 || !(p.lr > 0.0)) fail(ErrorKind::config, "embed.batch_size and embed.lr must be positive");
    return p;
}

/// All stage settings resolved from one configuration.
struct PipelineConfig {
    SplitOptions split;
    ZoneGrid grid;
    TimeSlotting slotting;
    EmbeddingConfig embed;
    PretrainConfig pretrain;
    EdgeMask mask;
    MdpConfig mdp;
    AgentConfig agents;
    std::string category_vectors;  // optional path
    double kl_epsilon = 1e-3;
    bool per_user_metrics = false;

    static PipelineConfig from_config(const Config& cfg) {
        PipelineConfig p;
        p.split = split_options_from_config(cfg);
        p.grid = zone_grid_from_config(cfg);
        p.slotting = time_slotting_from_config(cfg);
        p.embed = embedding_config_from_config(cfg);
        p.pretrain = pretrain_config_from_config(cfg);
        p.mask = EdgeMask::from_string(cfg.get_string("state.hyperedges", "all"));
        p.mdp = MdpConfig::from_config(cfg);
        p.agents = AgentConfig::from_config(cfg);
        p.category_vectors = cfg.get_string("reward.category_vectors", "");
        p.kl_epsilon = cfg.get_double("reward.kl_epsilon", p.kl_epsilon);
        if (!(p.kl_epsilon > 0.0)) fail(ErrorKind::config, "reward.kl_epsilon must be positive");
        p.per_user_metrics = cfg.get_bool("eval.per_user", false);
        return p;
    }
};

inline Dataset dataset_from_events(const std::vector<CheckInEvent>& events, const PipelineConfig& cfg) {
    return build_dataset(chronological_split(events, cfg.split), cfg.grid, cfg.slotting);
}

struct EmbeddingStageResult {
    EmbeddingModel model;
    Matrix h;  // frozen vertex embeddings
    std::vector<double> epoch_loss;
    bool diverged = false;
};

/// Initializes and pretrains the embedding model on the training hypergraph.
inline EmbeddingStageResult run_embedding(const Dataset& ds, const MobilityHypergraph& g, const PipelineConfig& cfg) {
    Rng rng(derive_seed(cfg.pretrain.seed, 0xE3B));
    auto init = EmbeddingModel::init(g.channel_sizes(), cfg.embed, rng);
    auto pre = pretrain_contrastive(g, std::move(init), cfg.pretrain);
    EmbeddingStageResult r;
    r.model = std::move(pre.model);
    r.epoch_loss = std::move(pre.epoch_loss);
    r.diverged = pre.diverged;
    r.h = vertex_table(g, r.model);
    (void)ds;
    return r;
}

inline RewardTables reward_tables(const Dataset& ds, const PipelineConfig& cfg) {
    const auto vectors = cfg.category_vectors.empty() ? CategoryVectors{} : load_category_vectors(cfg.category_vectors);
    return RewardTables::build(ds, vectors, cfg.kl_epsilon);
}

inline Environment make_environment(const Dataset& ds, const Matrix& h, const EmbeddingModel& model, const PipelineConfig& cfg,
                                    const EdgeMask& mask) {
    return Environment(ds, prefix_embeddings(ds, h, model, mask), reward_tables(ds, cfg), cfg.mdp);
}

inline Environment make_environment(const Dataset& ds, const Matrix& h, const EmbeddingModel& model, const PipelineConfig& cfg) {
    return make_environment(ds, h, model, cfg, cfg.mask);
}

inline TrainResult run_training(const Environment& env, const Matrix& h, const EmbeddingModel& model, const AgentConfig& cfg) {
    return train(env, init_bundle(env, poi_embedding_table(h, model), cfg));
}

}  // namespace stihrl

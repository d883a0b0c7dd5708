// stihrl: command-line driver for the recommendation pipeline.
//
//   stihrl synth  --spec spatial_only=50,temporal_only=50 --out-dir run
//   stihrl ingest --input run/synthetic.tsv --out-dir run
//   stihrl graph build --out-dir run
//   stihrl embed  --out-dir run
//   stihrl train  --out-dir run
//   stihrl eval   --out-dir run
//   stihrl ablate --kind agents --out-dir run
//   stihrl replay run/train.manifest.json --out-dir rerun
//
// Each stage reads its inputs from --out-dir unless given explicitly and
// writes <command>.manifest.json beside its outputs.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "stihrl.hpp"

namespace fs = std::filesystem;
using namespace stihrl;

namespace {

enum Exit { ok = 0, other = 1, missing = 2, config_error = 3, numeric = 4 };

int exit_code(ErrorKind k) {
    switch (k) {
        case ErrorKind::missing_artifact: return missing;
        case ErrorKind::config: return config_error;
        case ErrorKind::numeric: return numeric;
        default: return other;
    }
}

struct Globals {
    std::string config_path;
    std::optional<long long> seed;
    int threads = 1;
    std::string out_dir = ".";
    std::vector<std::string> overrides;  // key=value
};

/// Set when replaying a manifest: the recorded configuration is used as is.
struct Replay {
    Config config;
    int threads = 1;
};

struct Context {
    Config cfg;
    fs::path out;
    RunManifest manifest;

    fs::path output(const std::string& name) const { return out / name; }

    std::string input(const std::string& given, const std::string& fallback_name, const std::string& what) {
        const std::string path = given.empty() ? output(fallback_name).string() : given;
        if (!fs::exists(path)) fail(ErrorKind::missing_artifact, "missing " + what + ": " + path);
        manifest.add_input(path);
        return path;
    }

    void write(const std::string& role, const std::string& name, const std::string& content) {
        const auto path = output(name).string();
        write_file_atomic(path, content);
        manifest.add_artifact(role, path);
    }

    void record(const std::string& role, const std::string& path) { manifest.add_artifact(role, path); }
};

Config resolve_config(const Globals& g, const std::optional<Replay>& replay) {
    if (replay) return replay->config;
    Config cfg;
    if (!g.config_path.empty()) cfg = Config::load(g.config_path);
    cfg.apply_environment("STIHRL_");
    for (const auto& kv : g.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos || eq == 0) fail(ErrorKind::config, "--set expects key=value, got " + kv);
        cfg.set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
    }
    if (g.seed) cfg.set("seed", std::to_string(*g.seed));
    return cfg;
}

std::string join_lines(const std::vector<std::string>& v) {
    std::string s;
    for (const auto& x : v) s += x + "\n";
    return s;
}

struct Loaded {
    Dataset ds;
    MobilityHypergraph g;
    EmbeddingModel model;
    Matrix h;
};

Loaded load_stack(Context& ctx, const std::string& dataset, const std::string& graph, const std::string& embedding,
                  std::vector<std::string>& args) {
    const auto dp = ctx.input(dataset, "dataset.json", "dataset");
    const auto gp = ctx.input(graph, "hypergraph.bin", "hypergraph");
    const auto ep = ctx.input(embedding, "embedding.json", "embedding checkpoint");
    args.insert(args.end(), {"--dataset", dp, "--graph", gp, "--embedding", ep});
    StageTimer t(ctx.manifest, "load");
    Loaded l{load_dataset(dp), load_hypergraph(gp), load_embedding(ep), {}};
    if (l.g.channel_sizes() != channel_sizes(l.ds))
        fail(ErrorKind::corrupt, "hypergraph " + gp + " was not built from dataset " + dp);
    if (l.model.channel_sizes != l.g.channel_sizes())
        fail(ErrorKind::corrupt, "embedding " + ep + " does not match hypergraph " + gp);
    l.h = vertex_table(l.g, l.model);
    return l;
}

void record_seeds(Context& ctx, const PipelineConfig& p) {
    ctx.manifest.seeds["seed"] = static_cast<std::uint64_t>(ctx.cfg.get_int("seed", 0));
    ctx.manifest.seeds["embed"] = p.pretrain.seed;
    ctx.manifest.seeds["train"] = p.agents.seed;
}

// ---------------------------------------------------------------------------
// Subcommands. Each fills ctx.manifest.args with a fully resolved argument
// list so a replay does not depend on the original working layout.

struct SynthArgs {
    std::string spec;
    std::optional<long long> users, events, pois;
    std::optional<double> noise;
    std::string layout;
};

int cmd_synth(Context& ctx, const SynthArgs& a) {
    if (!a.spec.empty()) ctx.cfg.set("synth.preference", a.spec);
    if (a.users) ctx.cfg.set("synth.users", std::to_string(*a.users));
    if (a.events) ctx.cfg.set("synth.events_per_user", std::to_string(*a.events));
    if (a.pois) ctx.cfg.set("synth.pois", std::to_string(*a.pois));
    if (a.noise) ctx.cfg.set("synth.noise", std::to_string(*a.noise));
    if (!a.layout.empty()) ctx.cfg.set("synth.layout", a.layout);
    const auto spec = synthetic_spec_from_config(ctx.cfg);
    const auto seed = static_cast<std::uint64_t>(ctx.cfg.get_int("synth.seed", ctx.cfg.get_int("seed", 0)));
    ctx.manifest.seeds["synth"] = seed;
    ctx.manifest.args = {"synth"};

    SyntheticCorpus corpus;
    {
        StageTimer t(ctx.manifest, "synth");
        corpus = generate_synthetic(spec, seed);
    }
    std::ostringstream tsv;
    write_foursquare_tsv(corpus.events, tsv);
    ctx.write("checkins", "synthetic.tsv", tsv.str());
    std::string users = "user_id\tpreference\n";
    for (const auto& [id, pref] : corpus.users) users += id + "\t" + pref.to_string() + "\n";
    ctx.write("user_preferences", "synthetic_users.tsv", users);
    std::cout << "synthetic corpus: " << corpus.users.size() << " users, " << corpus.events.size() << " check-ins, "
              << corpus.pois.size() << " POIs -> " << ctx.output("synthetic.tsv").string() << "\n";
    return ok;
}

struct IngestArgs {
    std::string input, format;
    bool strict = false;
};

int cmd_ingest(Context& ctx, const IngestArgs& a) {
    if (!a.format.empty()) ctx.cfg.set("ingest.format", a.format);
    if (a.strict) ctx.cfg.set("ingest.strict", "true");
    const auto format = ctx.cfg.get_string("ingest.format", "tsv");
    ParseOptions opt;
    if (format == "tsv") opt.format = InputFormat::foursquare_tsv;
    else if (format == "csv") opt.format = InputFormat::csv;
    else fail(ErrorKind::config, "ingest.format must be tsv or csv, got " + format);
    opt.csv = CsvMapping::from_config(ctx.cfg);
    opt.strict = ctx.cfg.get_bool("ingest.strict", false);
    const auto pipeline = PipelineConfig::from_config(ctx.cfg);

    if (!fs::exists(a.input)) fail(ErrorKind::missing_artifact, "missing check-in file: " + a.input);
    ctx.manifest.add_input(a.input);
    ctx.manifest.args = {"ingest", "--input", a.input};

    Dataset ds;
    std::size_t skipped = 0;
    {
        StageTimer t(ctx.manifest, "ingest");
        const auto parsed = parse_checkins(a.input, opt);
        skipped = parsed.skipped;
        ds = dataset_from_events(parsed.events, pipeline);
    }
    const auto path = ctx.output("dataset.json").string();
    save_dataset(ds, path);
    ctx.record("dataset", path);
    std::cout << "dataset: " << ds.user_count() << " users, " << ds.poi_count() << " POIs, " << ds.records.size()
              << " records (" << skipped << " malformed lines skipped) -> " << path << "\n";
    return ok;
}

int cmd_graph_build(Context& ctx, const std::string& dataset) {
    const auto dp = ctx.input(dataset, "dataset.json", "dataset");
    ctx.manifest.args = {"graph", "build", "--dataset", dp};
    MobilityHypergraph g;
    {
        StageTimer t(ctx.manifest, "graph");
        g = build_hypergraph(load_dataset(dp));
    }
    const auto problems = check_invariants(g);
    if (!problems.empty()) fail(ErrorKind::corrupt, "hypergraph invariants violated:\n" + join_lines(problems));
    const auto path = ctx.output("hypergraph.bin").string();
    save_hypergraph(g, path);
    ctx.record("hypergraph", path);
    std::cout << format_stats(graph_stats(g));
    return ok;
}

int cmd_graph_stats(Context& ctx, const std::string& graph) {
    const auto gp = ctx.input(graph, "hypergraph.bin", "hypergraph");
    ctx.manifest.args = {"graph", "stats", "--graph", gp};
    const auto g = load_hypergraph(gp);
    const auto stats = format_stats(graph_stats(g));
    const auto problems = check_invariants(g);
    std::cout << stats;
    std::cout << (problems.empty() ? "invariants: ok\n" : "invariants: FAILED\n" + join_lines(problems));
    ctx.write("graph_stats", "graph_stats.txt", stats);
    return problems.empty() ? ok : other;
}

struct EmbedArgs {
    std::string graph;
    std::optional<long long> epochs;
};

int cmd_embed(Context& ctx, const EmbedArgs& a) {
    if (a.epochs) ctx.cfg.set("embed.epochs", std::to_string(*a.epochs));
    const auto pipeline = PipelineConfig::from_config(ctx.cfg);
    record_seeds(ctx, pipeline);
    const auto gp = ctx.input(a.graph, "hypergraph.bin", "hypergraph");
    ctx.manifest.args = {"embed", "--graph", gp};
    const auto g = load_hypergraph(gp);

    PretrainResult r;
    {
        StageTimer t(ctx.manifest, "embed");
        Rng rng(derive_seed(pipeline.pretrain.seed, 0xE3B));
        r = pretrain_contrastive(g, EmbeddingModel::init(g.channel_sizes(), pipeline.embed, rng), pipeline.pretrain);
    }
    std::string loss = "epoch,loss\n";
    char buf[64];
    for (std::size_t e = 0; e < r.epoch_loss.size(); ++e) {
        std::snprintf(buf, sizeof buf, "%zu,%.9g\n", e + 1, r.epoch_loss[e]);
        loss += buf;
    }
    ctx.write("loss_curve", "embed_loss.csv", loss);
    if (r.diverged) fail(ErrorKind::numeric, "embedding pretraining diverged after " + std::to_string(r.completed_epochs) + " epochs");
    const auto path = ctx.output("embedding.json").string();
    save_embedding(r.model, path);
    ctx.record("embedding", path);
    std::cout << "embedding: " << r.epoch_loss.size() << " epochs, final loss "
              << (r.epoch_loss.empty() ? 0.0 : r.epoch_loss.back()) << " -> " << path << "\n";
    return ok;
}

struct StackArgs {
    std::string dataset, graph, embedding;
};

struct TrainArgs : StackArgs {
    std::optional<long long> epochs;
};

int cmd_train(Context& ctx, const TrainArgs& a) {
    if (a.epochs) ctx.cfg.set("train.epochs", std::to_string(*a.epochs));
    const auto pipeline = PipelineConfig::from_config(ctx.cfg);
    record_seeds(ctx, pipeline);
    ctx.manifest.args = {"train"};
    const auto l = load_stack(ctx, a.dataset, a.graph, a.embedding, ctx.manifest.args);

    TrainResult r;
    {
        StageTimer t(ctx.manifest, "train");
        const auto env = make_environment(l.ds, l.h, l.model, pipeline);
        r = run_training(env, l.h, l.model, pipeline.agents);
    }
    ctx.write("train_log", "train_log.csv", format_train_log(r.log));
    if (r.diverged) fail(ErrorKind::numeric, "agent training diverged: " + r.divergence);
    const auto path = ctx.output("agents.json").string();
    save_bundle(r.bundle, path);
    ctx.record("checkpoint", path);
    std::cout << "agents: " << r.log.size() << " epochs, best epoch " << r.best_epoch << " -> " << path << "\n";
    return ok;
}

struct EvalArgs : StackArgs {
    std::string checkpoint, split;
    bool per_user = false, baselines = false;
};

int cmd_eval(Context& ctx, const EvalArgs& a) {
    if (a.per_user) ctx.cfg.set("eval.per_user", "true");
    if (!a.split.empty()) ctx.cfg.set("eval.split", a.split);
    const auto pipeline = PipelineConfig::from_config(ctx.cfg);
    const auto split = ctx.cfg.get_string("eval.split", "test");
    EvalOptions opt;
    if (split == "test") opt.split = Split::test;
    else if (split == "validation") opt.split = Split::val;
    else fail(ErrorKind::config, "eval.split must be test or validation, got " + split);
    opt.per_user = pipeline.per_user_metrics;
    opt.include_cold = pipeline.mdp.include_cold;
    record_seeds(ctx, pipeline);

    const auto cp = ctx.input(a.checkpoint, "agents.json", "agent checkpoint");
    ctx.manifest.args = {"eval", "--checkpoint", cp};
    if (a.baselines) ctx.manifest.args.push_back("--baselines");
    const auto l = load_stack(ctx, a.dataset, a.graph, a.embedding, ctx.manifest.args);
    const auto bundle = load_bundle(cp);

    std::vector<MetricsReport> reports;
    EvalResult full;
    {
        StageTimer t(ctx.manifest, "eval");
        const auto env = make_environment(l.ds, l.h, l.model, pipeline);
        full = evaluate(bundle, env, opt);
        full.report.tag = "full";
        full.report.seed = bundle.config.seed;
        reports.push_back(full.report);
        if (a.baselines) {
            for (const auto& [tag, pred] : {std::pair{"popularity", popularity_baseline(env)},
                                            std::pair{"user_frequency", user_frequency_baseline(env)}}) {
                auto m = evaluate_predictor(env, pred, opt).report;
                m.tag = tag;
                reports.push_back(std::move(m));
            }
        }
    }
    for (const auto& w : full.warnings) std::cerr << "warning: " << w << "\n";

    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : reports) j.push_back(to_json(r));
    ctx.write("report_json", "report.json", j.dump(2) + "\n");
    ctx.write("report_csv", "report.csv", report_csv(reports));
    const auto table = comparison_table(reports);
    ctx.write("table", "table.txt", table);
    ctx.write("beta_histogram", "beta_histogram.csv", beta_histogram_csv(full.predictions));
    ctx.write("beta_per_user", "beta_per_user.csv", beta_per_user_csv(l.ds, full.predictions));
    std::cout << table;
    return ok;
}

struct AblateArgs : StackArgs {
    std::string kind;
};

int cmd_ablate(Context& ctx, const AblateArgs& a) {
    if (!a.kind.empty()) ctx.cfg.set("ablation.kind", a.kind);
    const auto kind = ablation_kind_from_string(ctx.cfg.get_string("ablation.kind", "agents"));
    const auto pipeline = PipelineConfig::from_config(ctx.cfg);
    record_seeds(ctx, pipeline);
    ctx.manifest.args = {"ablate"};
    const auto l = load_stack(ctx, a.dataset, a.graph, a.embedding, ctx.manifest.args);

    AblationReport r;
    {
        StageTimer t(ctx.manifest, "ablate");
        r = run_ablation(kind, AblationInputs{&l.ds, &l.h, &l.model, pipeline});
    }
    const auto stem = "ablation_" + to_string(kind);
    nlohmann::json j;
    j["kind"] = to_string(kind);
    j["reports"] = nlohmann::json::array();
    for (std::size_t i = 0; i < r.reports.size(); ++i) {
        auto rj = to_json(r.reports[i]);
        rj["diverged"] = static_cast<bool>(r.diverged[i]);
        if (i < r.weights.size()) rj["weights"] = r.weights[i];
        j["reports"].push_back(rj);
    }
    ctx.write("ablation_json", stem + ".json", j.dump(2) + "\n");
    ctx.write("ablation_csv", stem + ".csv", report_csv(r.reports));
    ctx.write("ablation_table", stem + "_table.txt", comparison_table(r.reports));
    if (!r.weights.empty()) ctx.write("sweep_csv", stem + "_sweep.csv", r.sweep_csv());
    const auto summary = r.ranking_summary();
    ctx.write("ranking", stem + "_ranking.txt", summary);
    std::cout << summary;
    for (std::size_t i = 0; i < r.diverged.size(); ++i)
        if (r.diverged[i]) std::cerr << "warning: variant " << r.reports[i].tag << " diverged\n";
    return ok;
}

// ---------------------------------------------------------------------------

int run(std::vector<std::string> args, const std::optional<Replay>& replay, const std::string& replay_out);

int cmd_replay(const std::string& manifest_path, const std::string& out_dir) {
    const auto m = RunManifest::load(manifest_path);
    if (m.tool_version != kToolVersion)
        std::cerr << "warning: manifest written by version " << m.tool_version << ", running " << kToolVersion << "\n";
    for (const auto& [path, hash] : m.inputs) {
        if (!fs::exists(path)) fail(ErrorKind::missing_artifact, "missing replay input: " + path);
        if (sha256_file(path) != hash) std::cerr << "warning: input changed since the manifest was written: " << path << "\n";
    }
    return run(m.args, Replay{m.config, m.threads}, out_dir);
}

int run(std::vector<std::string> args, const std::optional<Replay>& replay, const std::string& replay_out) {
    CLI::App app{"Spatio-temporal hierarchical RL next-POI recommender"};
    app.fallthrough();
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kToolVersion));

    Globals g;
    app.add_option("--config", g.config_path, "Key = value configuration file");
    app.add_option("--seed", g.seed, "Global seed (config key: seed)");
    app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);
    app.add_option("--out-dir", g.out_dir, "Directory for artifacts and the run manifest");
    app.add_option("--set", g.overrides, "Configuration override key=value (repeatable)");

    SynthArgs synth;
    auto* sc = app.add_subcommand("synth", "Generate a synthetic check-in corpus");
    sc->add_option("--spec", synth.spec, "Preference groups, e.g. spatial_only=50,temporal_only=50 or mixed:0.5");
    sc->add_option("--users", synth.users, "Users per group without an explicit count");
    sc->add_option("--events", synth.events, "Check-ins per user");
    sc->add_option("--pois", synth.pois, "Number of POIs");
    sc->add_option("--noise", synth.noise, "Probability of a uniformly random POI");
    sc->add_option("--layout", synth.layout, "grid or line");

    IngestArgs ingest;
    auto* ic = app.add_subcommand("ingest", "Parse check-ins into a split dataset");
    ic->add_option("--input", ingest.input, "Check-in file")->required();
    ic->add_option("--format", ingest.format, "tsv or csv");
    ic->add_flag("--strict", ingest.strict, "Fail on malformed lines");

    std::string graph_dataset, graph_file;
    auto* gc = app.add_subcommand("graph", "Build or inspect the mobility hypergraph");
    gc->require_subcommand(1);
    auto* gb = gc->add_subcommand("build", "Build the hypergraph from a dataset");
    gb->add_option("--dataset", graph_dataset, "Dataset file (default: <out-dir>/dataset.json)");
    auto* gs = gc->add_subcommand("stats", "Print vertex and hyperedge counts");
    gs->add_option("--graph", graph_file, "Hypergraph file (default: <out-dir>/hypergraph.bin)");

    EmbedArgs embed;
    auto* ec = app.add_subcommand("embed", "Pretrain hypergraph embeddings");
    ec->add_option("--graph", embed.graph, "Hypergraph file (default: <out-dir>/hypergraph.bin)");
    ec->add_option("--epochs", embed.epochs, "Pretraining epochs (config key: embed.epochs)");

    auto add_stack = [](CLI::App* c, StackArgs& s) {
        c->add_option("--dataset", s.dataset, "Dataset file (default: <out-dir>/dataset.json)");
        c->add_option("--graph", s.graph, "Hypergraph file (default: <out-dir>/hypergraph.bin)");
        c->add_option("--embedding", s.embedding, "Embedding checkpoint (default: <out-dir>/embedding.json)");
    };

    TrainArgs trainargs;
    auto* tc = app.add_subcommand("train", "Train the spatial, temporal and integration agents");
    add_stack(tc, trainargs);
    tc->add_option("--epochs", trainargs.epochs, "Training epochs (config key: train.epochs)");

    EvalArgs evalargs;
    auto* vc = app.add_subcommand("eval", "Score a trained checkpoint");
    add_stack(vc, evalargs);
    vc->add_option("--checkpoint", evalargs.checkpoint, "Agent checkpoint (default: <out-dir>/agents.json)");
    vc->add_option("--split", evalargs.split, "test or validation");
    vc->add_flag("--per-user", evalargs.per_user, "Average metrics per user instead of per step");
    vc->add_flag("--baselines", evalargs.baselines, "Also score the popularity and user-frequency baselines");

    AblateArgs ablate;
    auto* ac = app.add_subcommand("ablate", "Run an ablation study");
    add_stack(ac, ablate);
    ac->add_option("--kind", ablate.kind, "agents, hyperedges, reward_spatial or reward_temporal");

    std::string replay_manifest;
    auto* rc = app.add_subcommand("replay", "Re-run a command from its manifest");
    rc->add_option("manifest", replay_manifest, "Manifest file")->required();

    std::reverse(args.begin(), args.end());
    try {
        app.parse(args);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "stihrl: error[config]: " << e.what() << "\n";
        return config_error;
    }

    if (rc->parsed()) {
        if (replay) fail(ErrorKind::config, "a manifest cannot replay another replay");
        return cmd_replay(replay_manifest, g.out_dir);
    }

    Context ctx;
    ctx.cfg = resolve_config(g, replay);
    ctx.out = replay ? fs::path(replay_out) : fs::path(g.out_dir);
    fs::create_directories(ctx.out);
    ctx.manifest.threads = replay ? replay->threads : g.threads;

    int code = ok;
    std::string command;
    auto guarded = [&](auto&& body) {
        try {
            code = body();
        } catch (...) {
            // Keep a manifest for failed runs too; it records what was attempted.
            ctx.manifest.command = command;
            ctx.manifest.config = ctx.cfg;
            try {
                ctx.manifest.save(ctx.output(command + ".manifest.json").string());
            } catch (...) {
            }
            throw;
        }
    };

    if (sc->parsed()) command = "synth", guarded([&] { return cmd_synth(ctx, synth); });
    else if (ic->parsed()) command = "ingest", guarded([&] { return cmd_ingest(ctx, ingest); });
    else if (gb->parsed()) command = "graph", guarded([&] { return cmd_graph_build(ctx, graph_dataset); });
    else if (gs->parsed()) command = "graph_stats", guarded([&] { return cmd_graph_stats(ctx, graph_file); });
    else if (ec->parsed()) command = "embed", guarded([&] { return cmd_embed(ctx, embed); });
    else if (tc->parsed()) command = "train", guarded([&] { return cmd_train(ctx, trainargs); });
    else if (vc->parsed()) command = "eval", guarded([&] { return cmd_eval(ctx, evalargs); });
    else if (ac->parsed()) command = "ablate", guarded([&] { return cmd_ablate(ctx, ablate); });

    ctx.manifest.command = command;
    ctx.manifest.config = ctx.cfg;
    const auto manifest_path = ctx.output(command + ".manifest.json").string();
    ctx.manifest.save(manifest_path);
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    try {
        return run(std::move(args), std::nullopt, "");
    } catch (const Error& e) {
        std::cerr << "stihrl: error[" << to_string(e.kind()) << "]: " << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "stihrl: error[internal]: " << e.what() << "\n";
        return other;
    }
}

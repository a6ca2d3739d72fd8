#include "gfnlab/cli.hpp"

#include <cmath>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "gfnlab/diagnostics.hpp"
#include "gfnlab/expressiveness.hpp"
#include "gfnlab/sensitivity.hpp"
#include "gfnlab/streaming.hpp"
#include "gfnlab/training.hpp"
#include "gfnlab/util.hpp"

#ifndef GFNLAB_VERSION
#define GFNLAB_VERSION "dev"
#endif
#ifndef GFNLAB_GIT_REV
#define GFNLAB_GIT_REV "unknown"
#endif
#ifndef GFNLAB_BUILD_TYPE
#define GFNLAB_BUILD_TYPE "unknown"
#endif
#ifndef GFNLAB_COMPILER
#define GFNLAB_COMPILER "unknown"
#endif

namespace gfn::cli {

using json = nlohmann::json;

std::string version_string() {
    return std::string("gfnlab ") + GFNLAB_VERSION + " (rev " + GFNLAB_GIT_REV + ", " + GFNLAB_BUILD_TYPE + ", " +
           GFNLAB_COMPILER + ")";
}

namespace {

struct Options {
    int threads = 1;
    std::string config;

    // graph build
    std::string kind, in, spec, out, dot;
    std::optional<int> g, h, d, S, internal, terminals;
    double p = 0.3;

    // shared
    std::string graph, target = "uniform";
    std::uint64_t seed = 0;

    // sensitivity
    std::string edge = "root:0", split = "equal";
    double delta = 1.0, F = 1.0;
    std::size_t reps = 10000;

    // train / stream
    std::string loss = "tb", backward = "uniform", trace, snapshot, dist;
    int epochs = 1000, batch = 16, eval_every = 0;
    double lr = 1e-3, lr_log_z = 1e-1, eta = 0.0;
    std::string prior = "uniform", update = "sb", audit;
    std::vector<std::string> chunks;
    int synthetic = 0, epochs_per_chunk = 3000;
    double scale = 1.0, stream_lr = 1e-2;

    // diagnose fcs
    std::string policy, mode = "exact";
    int subset = 4, samples = 200;
    double confidence = 0.05;

    // wl demo
    std::string wl_target = "hetero";
    int seeds = 20, wl_epochs = 0;
    double wl_lr = 0.0;

    // explore
    int explore_epochs = 10, trials = 1000;
};

std::string fixed(double x) { return format_fixed(x, 6); }

void need(const std::string& value, const std::string& flag) {
    if (value.empty()) throw ValidationError("missing required option " + flag);
}

void write_output(const std::string& path, const std::string& contents) {
    if (!path.empty()) write_file_atomic(path, contents);
}

GraphPtr make_graph(const std::string& spec) {
    need(spec, "--graph");
    return std::make_shared<const StateGraph>(graph_from_spec(spec));
}

// ---- graph build -------------------------------------------------------

int cmd_graph_build(const Options& o, std::ostream& out) {
    std::optional<StateGraph> g;
    if (!o.in.empty()) {
        g.emplace(load_graph(o.in));
    } else if (!o.spec.empty()) {
        g.emplace(graph_from_spec(o.spec));
    } else {
        need(o.kind, "--kind (or --in / --spec)");
        auto get = [](const std::optional<int>& v, const char* flag) {
            if (!v) throw ValidationError(std::string("missing required option ") + flag);
            return *v;
        };
        if (o.kind == "tree") {
            g.emplace(build_regular_tree(get(o.g, "--g"), get(o.h, "--h")));
        } else if (o.kind == "set") {
            g.emplace(build_set_graph(get(o.d, "--d"), get(o.S, "--S")));
        } else if (o.kind == "random") {
            g.emplace(build_random_dag(get(o.internal, "--internal"), get(o.terminals, "--terminals"), o.p, o.seed));
        } else {
            throw ValidationError("unknown graph kind '" + o.kind + "' (expected tree, set or random)");
        }
    }
    write_output(o.out, graph_to_json(*g));
    write_output(o.dot, graph_to_dot(*g));
    out << "states=" << g->num_states() << " edges=" << g->num_edges() << " terminals=" << g->num_terminals()
        << " depth=" << g->max_depth() << '\n';
    return 0;
}

// ---- sensitivity -------------------------------------------------------

struct Row {
    std::string name;
    double lower, value, upper;
    std::optional<bool> contained;
};

int cmd_sensitivity(const Options& o, std::ostream& out) {
    auto graph = make_graph(o.graph);
    auto target = target_from_spec(graph, o.target);
    Edge edge = edge_from_spec(*graph, o.edge);
    SplitRule split = split_from_spec(o.split, o.seed);
    if (!(o.F > 0.0)) throw ValidationError("--F must be > 0");
    if (!(o.delta >= 0.0)) throw ValidationError("--delta must be >= 0");
    auto desc = graph->reachable_terminals(edge.second);
    int n = static_cast<int>(graph->num_terminals());
    int d = static_cast<int>(desc.size());
    auto spec_kind = parse_spec(o.graph).kind;

    std::vector<Row> rows;
    double value = 0.0;
    bool per_sample_ok = true;
    const bool dirichlet = std::holds_alternative<SplitDirichlet>(split);
    if (dirichlet) {
        const auto& dir = std::get<SplitDirichlet>(split);
        auto mc = dirichlet_expected_tv_mc(target, edge, o.delta, o.F, dir.alpha, o.reps, o.seed, o.threads);
        value = mc.mean;
        per_sample_ok = mc.bound_violations == 0;
        if (dir.alpha.size() == 1 && n >= 2 && d >= 1) {
            auto cf = dirichlet_expected_tv_closed(n, d, dir.alpha, o.delta, o.F);
            rows.push_back({"dirichlet_closed", cf.value, value, cf.value, std::nullopt});
            if (cf.corollary_value) rows.push_back({"dirichlet_corollary", *cf.corollary_value, value, *cf.corollary_value, std::nullopt});
            if (parse_spec(o.target).kind == "uniform") {
                double bm = dirichlet_expected_tv_beta_marginal(n, d, dir.alpha[0], o.delta, o.F);
                rows.push_back({"dirichlet_beta_marginal", bm, value, bm, std::nullopt});
            }
        }
    } else {
        ImbalanceSpec spec{edge, o.delta, split};
        value = total_variation(imbalanced_distribution(target, spec, o.F), target.probabilities());
    }
    auto contained = [&](double lo, double hi) { return per_sample_ok && value >= lo - kBoundTol && value <= hi + kBoundTol; };

    std::optional<Row> primary;
    if (spec_kind == "tree") {
        auto sp = parse_spec(o.graph);
        auto b = tree_bounds(static_cast<int>(sp.require_int("g")), static_cast<int>(sp.require_int("h")), o.F, o.delta);
        primary = Row{"tree", b.lower, value, b.upper, contained(b.lower, b.upper)};
        rows.insert(rows.begin(), *primary);
    }
    if (d >= 1 && d <= n - 1) {
        auto b = dag_bounds(n, d, o.F, o.delta);
        Row dag{"dag", b.lower, value, b.upper, contained(b.lower, b.upper)};
        if (!primary) primary = dag;
        rows.push_back(dag);
        rows.push_back({"dag_short_upper", b.lower, value, b.short_upper, contained(b.lower, b.short_upper)});
    }
    auto env = exact_envelope(target, desc, o.F, o.delta);
    Row envelope{"envelope", env.lower, value, env.upper, contained(env.lower, env.upper)};
    if (!primary) primary = envelope;
    rows.push_back(envelope);

    std::ostringstream csv;
    csv << "bound_name,lower,exact_or_mean,upper,contained\n";
    for (const auto& r : rows)
        csv << r.name << ',' << format_full(r.lower) << ',' << format_full(r.value) << ',' << format_full(r.upper) << ','
            << (r.contained ? (*r.contained ? "true" : "false") : "na") << '\n';
    write_output(o.out, csv.str());
    out << "bound=" << primary->name << " tv=" << fixed(value) << " lower=" << fixed(primary->lower)
        << " upper=" << fixed(primary->upper) << " contained=" << (*primary->contained ? "true" : "false") << '\n';
    return 0;
}

// ---- train -------------------------------------------------------------

BackwardMode backward_from_name(const std::string& s) {
    if (s == "uniform") return BackwardMode::Uniform;
    if (s == "learnable") return BackwardMode::Learnable;
    throw ValidationError("unknown backward mode '" + s + "' (expected uniform or learnable)");
}

int cmd_train(const Options& o, std::ostream& out) {
    auto graph = make_graph(o.graph);
    auto target = target_from_spec(graph, o.target);
    auto kind = loss_from_spec(o.loss);
    TrainConfig cfg;
    cfg.epochs = o.epochs;
    cfg.batch = o.batch;
    cfg.lr = o.lr;
    cfg.lr_log_z = o.lr_log_z;
    cfg.eta = o.eta;
    cfg.seed = o.seed;
    cfg.eval_every = o.eval_every;
    cfg.threads = o.threads;
    TabularPolicy init(graph, backward_from_name(o.backward));
    initialize_log_flows(init, target);
    auto result = train(target, kind, cfg, init);
    Vec pm = exact_marginal(result.policy);
    double tv = total_variation(pm, target.probabilities());
    write_output(o.trace, trace_csv(result.trace));
    write_output(o.snapshot, policy_to_json(result.policy, o.graph));
    write_output(o.dist, distribution_csv(*graph, pm, target.probabilities()));
    out << "loss=" << loss_name(kind) << " epochs=" << cfg.epochs << " final_loss=" << fixed(result.trace.back().loss)
        << " tv=" << fixed(tv) << '\n';
    return 0;
}

// ---- stream ------------------------------------------------------------

int cmd_stream(const Options& o, std::ostream& out) {
    auto graph = make_graph(o.graph);
    auto prior = target_from_spec(graph, o.prior);
    std::vector<StreamChunk> chunks;
    if (!o.chunks.empty() && o.synthetic > 0) throw ValidationError("--chunks and --synthetic are exclusive");
    for (const auto& path : o.chunks) chunks.push_back(load_chunk(*graph, path));
    for (int t = 1; t <= o.synthetic; ++t) chunks.push_back(synthetic_chunk(*graph, t, o.seed, o.scale));
    if (chunks.empty()) throw ValidationError("missing required option --chunks (or --synthetic)");
    auto kind = update_from_spec(o.update);
    TrainConfig cfg;
    cfg.epochs = o.epochs_per_chunk;
    cfg.batch = o.batch;
    cfg.lr = o.stream_lr;
    cfg.lr_log_z = o.lr_log_z;
    cfg.eta = o.eta;
    cfg.seed = o.seed;
    cfg.eval_every = o.eval_every;
    cfg.threads = o.threads;
    auto run = run_stream(prior, chunks, kind, cfg, true);
    write_output(o.audit, audit_csv(run.audits));
    write_output(o.trace, stream_trace_csv(run));
    write_output(o.snapshot, policy_to_json(run.states.back().policy, o.graph));
    bool holds = true;
    for (const auto& a : run.audits) holds = holds && a.a_holds && a.aa_holds && a.aaa_holds;
    out << "chunks=" << chunks.size() << " tv=" << fixed(run.tv.back()) << " audits_hold=" << (holds ? "true" : "false")
        << '\n';
    return 0;
}

// ---- diagnose fcs ------------------------------------------------------

int cmd_diagnose_fcs(const Options& o, std::ostream& out) {
    need(o.policy, "--policy");
    std::string text = read_file(o.policy);
    std::string spec = o.graph.empty() ? policy_json_graph_spec(text) : o.graph;
    if (spec.empty()) throw ValidationError("the snapshot records no graph; pass --graph");
    auto graph = make_graph(spec);
    auto policy = policy_from_json(graph, text);
    auto target = target_from_spec(graph, o.target);
    auto m = parse_spec(o.mode);
    FCSReport r;
    if (m.kind == "exact") {
        m.allow_only({});
        r = fcs(policy, target, o.subset, o.samples, o.seed, MarginalMode::Exact, 0, o.confidence, o.threads);
    } else if (m.kind == "importance") {
        m.allow_only({"k"});
        int k = static_cast<int>(m.get_int("k", 64));
        if (k < 1) throw ValidationError("importance k must be >= 1");
        r = fcs(policy, target, o.subset, o.samples, o.seed, MarginalMode::Importance, k, o.confidence, o.threads);
    } else {
        throw ValidationError("unknown marginal mode '" + m.kind + "' (expected exact or importance:k=N)");
    }
    write_output(o.out, fcs_report_json(r));
    out << "B=" << r.subset_size << " m=" << r.samples << " mean=" << fixed(r.mean) << " pac_bound=" << fixed(r.pac_bound)
        << '\n';
    return 0;
}

// ---- wl demo -----------------------------------------------------------

int cmd_wl_demo(const Options& o, std::ostream& out) {
    if (o.seeds < 1) throw ValidationError("--seeds must be >= 1");
    auto inst = wl_counterexample(wl_target_from_name(o.wl_target));
    TrainConfig cfg = wl_default_config();
    if (o.wl_epochs > 0) cfg.epochs = o.wl_epochs;
    if (o.wl_lr > 0) cfg.lr = o.wl_lr;
    cfg.threads = o.threads;
    std::vector<WlRun> runs;
    double tied_min = INFINITY, untied_max = 0.0;
    for (bool tied : {true, false})
        for (int s = 0; s < o.seeds; ++s) {
            cfg.seed = o.seed + static_cast<std::uint64_t>(s);
            runs.push_back(wl_train(inst, tied, cfg));
            if (tied) tied_min = std::min(tied_min, runs.back().final_tv);
            else untied_max = std::max(untied_max, runs.back().final_tv);
        }
    write_output(o.out, wl_csv(runs));
    out << "target=" << o.wl_target << " floor=" << fixed(runs.front().floor) << " tied_min=" << fixed(tied_min)
        << " untied_max=" << fixed(untied_max) << '\n';
    return 0;
}

// ---- explore -----------------------------------------------------------

int cmd_explore(const Options& o, std::ostream& out) {
    auto graph = make_graph(o.graph);
    auto r = exploration_coverage(*graph, o.explore_epochs, o.trials, o.seed, default_coverage_grid(), o.threads);
    int violations = 0;
    for (std::size_t i = 0; i < r.s.size(); ++i) {
        double b = r.bound[i];
        if (r.exceedance[i] > b + 3.0 * std::sqrt(b * (1 - b) / r.trials) + 1e-12) ++violations;
    }
    write_output(o.out, coverage_csv(r));
    out << "M=" << r.epochs << " K=" << r.states_per_trajectory << " states=" << r.num_states
        << " mean_visited=" << fixed(r.mean_visited) << " violations=" << violations << '\n';
    return 0;
}

// ---- config files ------------------------------------------------------

std::vector<std::string> config_tokens(const json& value, const std::string& flag) {
    std::vector<std::string> out;
    auto scalar = [&](const json& v) {
        if (v.is_string()) return v.get<std::string>();
        if (v.is_number_integer()) return std::to_string(v.get<long long>());
        if (v.is_number_unsigned()) return std::to_string(v.get<unsigned long long>());
        if (v.is_number_float()) return format_full(v.get<double>());
        throw ValidationError("config key '" + flag.substr(2) + "' must be a string, number or array of those");
    };
    out.push_back(flag);
    if (value.is_array()) {
        for (const auto& v : value) out.push_back(scalar(v));
    } else {
        out.push_back(scalar(value));
    }
    return out;
}

CLI::App* deepest(CLI::App* app) {
    for (auto* sub : app->get_subcommands())
        if (sub->parsed()) return deepest(sub);
    return app;
}

// Option named `--key` in `app` or an ancestor.
CLI::Option* find_option(CLI::App* app, const std::string& key) {
    for (CLI::App* a = app; a; a = a->get_parent())
        if (auto* opt = a->get_option_no_throw("--" + key)) return opt;
    return nullptr;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    Options o;
    CLI::App app{"Tabular flow-network laboratory"};
    app.name("gfnlab");
    app.set_help_flag("--help", "Print this help and exit");
    app.fallthrough();
    app.require_subcommand(0, 1);
    app.failure_message(CLI::FailureMessage::help);
    bool version = false;
    app.add_flag("--version", version, "Print build metadata and exit");
    app.add_option("--threads", o.threads, "Worker threads (default 1)")->check(CLI::PositiveNumber);
    app.add_option("--config", o.config, "JSON file mirroring the flags; flags take precedence");

    auto* graph = app.add_subcommand("graph", "Build, load and export state graphs");
    graph->require_subcommand(1);
    auto* build = graph->add_subcommand("build", "Build a graph and write it as JSON");
    build->add_option("--kind", o.kind, "tree | set | random");
    build->add_option("--g", o.g, "Tree branching factor");
    build->add_option("--h", o.h, "Tree height");
    build->add_option("--d", o.d, "Set universe size");
    build->add_option("--S", o.S, "Set size");
    build->add_option("--internal", o.internal, "Random DAG internal states");
    build->add_option("--terminals", o.terminals, "Random DAG terminals");
    build->add_option("--p", o.p, "Random DAG extra-parent probability");
    build->add_option("--seed", o.seed, "Random DAG seed");
    build->add_option("--in", o.in, "Load a graph JSON instead of building");
    build->add_option("--spec", o.spec, "Graph spec string, e.g. tree:g=2,h=3");
    build->add_option("--out", o.out, "Output graph JSON");
    build->add_option("--dot", o.dot, "Output DOT file");

    auto* sens = app.add_subcommand("sensitivity", "Exact TV of a single-edge imbalance against the bounds");
    sens->add_option("--graph", o.graph, "Graph spec");
    sens->add_option("--target", o.target, "Target spec (default uniform)");
    sens->add_option("--edge", o.edge, "root:<k> or <u>-<v> (default root:0)");
    sens->add_option("--delta", o.delta, "Extra flow δ (default 1)");
    sens->add_option("--F", o.F, "Balanced total flow (default 1)");
    sens->add_option("--split", o.split, "equal | propagated | concentrated:leaf=<id> | dirichlet:alpha=<a>");
    sens->add_option("--reps", o.reps, "Monte Carlo replications for Dirichlet splits (default 10000)");
    sens->add_option("--seed", o.seed, "Seed");
    sens->add_option("--out", o.out, "Report CSV");

    auto* tr = app.add_subcommand("train", "Train a tabular policy");
    tr->add_option("--graph", o.graph, "Graph spec");
    tr->add_option("--target", o.target, "Target spec (default uniform)");
    tr->add_option("--loss", o.loss, "tb | db | kl | subtb:lambda=<l> | td3:beta0=<b>,anneal=<E>,dir=up|down");
    tr->add_option("--epochs", o.epochs, "Epochs (default 1000)");
    tr->add_option("--batch", o.batch, "Trajectories per epoch (default 16)");
    tr->add_option("--lr", o.lr, "Adam step size for logits and flows (default 1e-3)");
    tr->add_option("--lr-logz", o.lr_log_z, "Adam step size for log Z (default 1e-1)");
    tr->add_option("--eta", o.eta, "Uniform exploration mixture (default 0)");
    tr->add_option("--backward", o.backward, "uniform | learnable");
    tr->add_option("--eval-every", o.eval_every, "Trace interval in epochs (0: first and last)");
    tr->add_option("--seed", o.seed, "Seed");
    tr->add_option("--trace", o.trace, "Trace CSV");
    tr->add_option("--snapshot", o.snapshot, "Final policy JSON");
    tr->add_option("--dist", o.dist, "Final distribution CSV");

    auto* st = app.add_subcommand("stream", "Streaming posterior updates over data chunks");
    st->add_option("--graph", o.graph, "Graph spec");
    st->add_option("--prior", o.prior, "Prior target spec (default uniform)");
    st->add_option("--chunks", o.chunks, "Chunk JSON files, in order");
    st->add_option("--synthetic", o.synthetic, "Generate this many synthetic chunks instead");
    st->add_option("--scale", o.scale, "Synthetic chunk scale (default 1)");
    st->add_option("--update", o.update, "sb | kl:k=<k>");
    st->add_option("--epochs-per-chunk", o.epochs_per_chunk, "Epochs per chunk (default 3000)");
    st->add_option("--batch", o.batch, "Trajectories per epoch for sb (default 16)");
    st->add_option("--lr", o.stream_lr, "Adam step size (default 1e-2)");
    st->add_option("--lr-logz", o.lr_log_z, "Adam step size for log Z (default 1e-1)");
    st->add_option("--eta", o.eta, "Uniform exploration mixture for sb (default 0)");
    st->add_option("--eval-every", o.eval_every, "Trace interval in epochs");
    st->add_option("--seed", o.seed, "Seed");
    st->add_option("--audit", o.audit, "Propagation audit CSV");
    st->add_option("--trace", o.trace, "Trace CSV");
    st->add_option("--snapshot", o.snapshot, "Final policy JSON");

    auto* diag = app.add_subcommand("diagnose", "Model diagnostics");
    diag->require_subcommand(1);
    auto* fcs_cmd = diag->add_subcommand("fcs", "Flow consistency in sub-graphs with a PAC bound");
    fcs_cmd->add_option("--policy", o.policy, "Policy snapshot JSON");
    fcs_cmd->add_option("--graph", o.graph, "Graph spec (default: the one recorded in the snapshot)");
    fcs_cmd->add_option("--target", o.target, "Target spec (default uniform)");
    fcs_cmd->add_option("-B,--subset", o.subset, "Subset size (default 4)");
    fcs_cmd->add_option("-m,--samples", o.samples, "Sampled subsets (default 200)");
    fcs_cmd->add_option("--confidence", o.confidence, "PAC confidence η (default 0.05)");
    fcs_cmd->add_option("--mode", o.mode, "exact | importance:k=<k>");
    fcs_cmd->add_option("--seed", o.seed, "Seed");
    fcs_cmd->add_option("--out", o.out, "Report JSON");

    auto* wl = app.add_subcommand("wl", "1-WL expressiveness demonstration");
    wl->require_subcommand(1);
    auto* demo = wl->add_subcommand("demo", "Tied vs untied training on the counterexample");
    demo->add_option("--target", o.wl_target, "hetero | homo");
    demo->add_option("--seeds", o.seeds, "Seeds per mode (default 20)");
    demo->add_option("--epochs", o.wl_epochs, "Epochs (default 3000)");
    demo->add_option("--lr", o.wl_lr, "Adam step size (default 1e-2)");
    demo->add_option("--seed", o.seed, "First seed");
    demo->add_option("--out", o.out, "CSV");

    auto* ex = app.add_subcommand("explore", "Uniform-policy state coverage against the Markov bound");
    ex->add_option("--graph", o.graph, "Graph spec");
    ex->add_option("-M,--epochs", o.explore_epochs, "Sampled trajectories per trial (default 10)");
    ex->add_option("--trials", o.trials, "Trials (default 1000)");
    ex->add_option("--seed", o.seed, "Seed");
    ex->add_option("--out", o.out, "Coverage CSV");

    auto usage = [&](const std::string& msg) {
        err << "error: " << msg << "\n\n" << deepest(&app)->help();
        return 2;
    };

    try {
        auto parse = [&app](const std::vector<std::string>& tokens) {
            std::vector<std::string> storage{"gfnlab"};
            storage.insert(storage.end(), tokens.begin(), tokens.end());
            std::vector<char*> argv;
            for (auto& s : storage) argv.push_back(s.data());
            app.parse(static_cast<int>(argv.size()), argv.data());
        };
        parse(args);
        if (!o.config.empty()) {
            json doc = json::parse(read_file(o.config));
            if (!doc.is_object()) throw ValidationError("config file must hold a JSON object");
            CLI::App* leaf = deepest(&app);
            std::vector<std::string> extra;
            for (const auto& [key, value] : doc.items()) {
                auto* opt = find_option(leaf, key);
                if (!opt || key == "config")
                    throw ValidationError("unknown config key '" + key + "' for '" + leaf->get_name() + "'");
                if (opt->count() > 0) continue;
                auto t = config_tokens(value, "--" + key);
                extra.insert(extra.end(), t.begin(), t.end());
            }
            std::vector<std::string> all = args;
            all.insert(all.end(), extra.begin(), extra.end());
            o = Options{};
            app.clear();
            parse(all);
        }
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    } catch (const ValidationError& e) {
        return usage(e.what());
    } catch (const GraphError& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    } catch (const json::exception& e) {
        err << "error: config: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }

    if (version) {
        out << version_string() << '\n';
        return 0;
    }
    try {
        if (build->parsed()) return cmd_graph_build(o, out);
        if (sens->parsed()) return cmd_sensitivity(o, out);
        if (tr->parsed()) return cmd_train(o, out);
        if (st->parsed()) return cmd_stream(o, out);
        if (fcs_cmd->parsed()) return cmd_diagnose_fcs(o, out);
        if (demo->parsed()) return cmd_wl_demo(o, out);
        if (ex->parsed()) return cmd_explore(o, out);
        return usage("a subcommand is required");
    } catch (const ValidationError& e) {
        return usage(e.what());
    } catch (const GraphError& e) {
        // Malformed graph files, invariant violations and the capacity guard are input problems.
        err << "error: " << e.what() << '\n';
        return 2;
    } catch (const json::exception& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

int run(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args, std::cout, std::cerr);
}

}  // namespace gfn::cli

#include "gfnlab/expressiveness.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <thread>

#include "gfnlab/util.hpp"

namespace gfn {

GraphState::GraphState(int n) : n_(n), adj_(static_cast<std::size_t>(n) * n, 0) {
    if (n < 0) throw ValidationError("graph state needs n >= 0");
}

GraphState::GraphState(int n, const std::vector<std::pair<int, int>>& edges) : GraphState(n) {
    for (auto [i, j] : edges) add_edge(i, j);
}

void GraphState::add_edge(int i, int j) {
    if (i < 0 || j < 0 || i >= n_ || j >= n_) throw ValidationError("edge endpoint out of range");
    if (i == j) throw ValidationError("graph states have no self loops");
    adj_[static_cast<std::size_t>(i) * n_ + j] = 1;
    adj_[static_cast<std::size_t>(j) * n_ + i] = 1;
}

std::vector<int> GraphState::neighbors(int i) const {
    std::vector<int> out;
    for (int j = 0; j < n_; ++j)
        if (adjacent(i, j)) out.push_back(j);
    return out;
}

int GraphState::num_edges() const {
    return static_cast<int>(std::count(adj_.begin(), adj_.end(), 1)) / 2;
}

std::string GraphState::to_string() const {
    std::ostringstream os;
    os << n_ << ':';
    bool first = true;
    for (int i = 0; i < n_; ++i)
        for (int j = i + 1; j < n_; ++j)
            if (adjacent(i, j)) {
                os << (first ? "" : ",") << i << '-' << j;
                first = false;
            }
    return os.str();
}

GraphState cycle_graph(int n) {
    GraphState g(n);
    for (int i = 0; i < n; ++i) g.add_edge(i, (i + 1) % n);
    return g;
}

GraphState disjoint_cycles(int k, int m) {
    GraphState g(k * m);
    for (int c = 0; c < k; ++c)
        for (int i = 0; i < m; ++i) g.add_edge(c * m + i, c * m + (i + 1) % m);
    return g;
}

std::vector<std::vector<int>> wl_refine(const std::vector<GraphState>& states,
                                        const std::vector<std::vector<int>>& colors) {
    using Signature = std::pair<int, std::vector<int>>;
    std::vector<std::vector<Signature>> sigs(states.size());
    std::map<Signature, int> ids;
    for (std::size_t s = 0; s < states.size(); ++s) {
        const auto& g = states[s];
        for (int i = 0; i < g.size(); ++i) {
            std::vector<int> nb;
            for (int j : g.neighbors(i)) nb.push_back(colors[s][j]);
            std::sort(nb.begin(), nb.end());
            sigs[s].emplace_back(colors[s][i], std::move(nb));
            ids.emplace(sigs[s].back(), 0);
        }
    }
    int next = 0;
    for (auto& [sig, id] : ids) id = next++;
    std::vector<std::vector<int>> out(states.size());
    for (std::size_t s = 0; s < states.size(); ++s)
        for (const auto& sig : sigs[s]) out[s].push_back(ids.at(sig));
    return out;
}

namespace {

int count_colors(const std::vector<std::vector<int>>& colors) {
    std::vector<int> all;
    for (const auto& c : colors) all.insert(all.end(), c.begin(), c.end());
    std::sort(all.begin(), all.end());
    return static_cast<int>(std::unique(all.begin(), all.end()) - all.begin());
}

}  // namespace

WlNodeColors wl_node_colors(const std::vector<GraphState>& states, std::optional<int> rounds) {
    WlNodeColors out;
    int total = 0;
    for (const auto& g : states) {
        out.colors.emplace_back(g.size(), 0);
        total += g.size();
    }
    int limit = rounds ? *rounds : total;
    int count = count_colors(out.colors);
    while (out.rounds < limit) {
        auto refined = wl_refine(states, out.colors);
        int c = count_colors(refined);
        // Refinement only splits classes, so an unchanged count means a fixpoint.
        if (c == count) {
            out.colors = std::move(refined);
            break;
        }
        out.colors = std::move(refined);
        count = c;
        ++out.rounds;
    }
    return out;
}

WlPartition wl_colors(const std::vector<GraphState>& states, std::optional<int> rounds) {
    auto nodes = wl_node_colors(states, rounds);
    std::vector<std::vector<int>> hist = nodes.colors;
    for (auto& h : hist) std::sort(h.begin(), h.end());
    std::map<std::vector<int>, int> ids;
    for (const auto& h : hist) ids.emplace(h, 0);
    int next = 0;
    for (auto& [h, id] : ids) id = next++;
    WlPartition p;
    p.rounds = nodes.rounds;
    for (const auto& h : hist) p.color.push_back(ids.at(h));
    return p;
}

TabularPolicy tied_policy(GraphPtr graph, const WlPartition& partition) {
    const auto& g = *graph;
    if (partition.color.size() != g.num_states())
        throw TyingError("partition has " + std::to_string(partition.color.size()) + " colors for " +
                         std::to_string(g.num_states()) + " states");
    std::map<int, std::pair<int, std::size_t>> classes;  // color -> (first param, out-degree)
    std::vector<std::vector<int>> slots(g.num_states());
    int num_forward = 0;
    for (std::size_t v = 0; v < g.num_states(); ++v) {
        auto u = static_cast<StateId>(v);
        if (g.is_terminal(u)) continue;
        auto kids = g.children(u);
        int color = partition.color[v];
        auto it = classes.find(color);
        if (it == classes.end()) {
            it = classes.emplace(color, std::make_pair(num_forward, kids.size())).first;
            num_forward += static_cast<int>(kids.size());
        } else if (it->second.second != kids.size()) {
            throw TyingError("color class " + std::to_string(color) + " mixes out-degrees " +
                             std::to_string(it->second.second) + " and " + std::to_string(kids.size()) +
                             " (state " + std::to_string(u) + ")");
        }
        std::vector<StateId> order(kids.begin(), kids.end());
        std::stable_sort(order.begin(), order.end(), [&](StateId x, StateId y) {
            return partition.color[x] != partition.color[y] ? partition.color[x] < partition.color[y] : x < y;
        });
        slots[v].assign(kids.size(), 0);
        for (std::size_t k = 0; k < order.size(); ++k)
            slots[v][g.child_slot(u, order[k])] = it->second.first + static_cast<int>(k);
    }
    return TabularPolicy(std::move(graph), slots, num_forward);
}

WlInstance wl_counterexample(WlTarget which) {
    // Ids: 0 = S0, 1 = N1, 2 = N2, 3..6 = G1..G4.
    std::vector<GraphState> labels;
    labels.emplace_back(6);
    labels.push_back(cycle_graph(6));
    labels.push_back(disjoint_cycles(2, 3));
    auto extend = [](GraphState g, std::vector<std::pair<int, int>> extra) {
        for (auto [i, j] : extra) g.add_edge(i, j);
        return g;
    };
    labels.push_back(extend(labels[1], {{0, 2}}));
    labels.push_back(extend(labels[1], {{0, 2}, {0, 3}}));
    labels.push_back(extend(labels[2], {{0, 3}}));
    labels.push_back(extend(labels[2], {{0, 3}, {1, 4}}));

    const char* names[] = {"S0", "N1", "N2", "G1", "G2", "G3", "G4"};
    std::vector<StateRecord> recs;
    for (int i = 0; i < 7; ++i) recs.push_back({i, i >= 3, std::string(names[i]) + " " + labels[i].to_string()});
    auto graph = std::make_shared<const StateGraph>(
        std::move(recs), 0, std::vector<Edge>{{0, 1}, {0, 2}, {1, 3}, {1, 4}, {2, 5}, {2, 6}});

    Vec pi(4);
    if (which == WlTarget::Hetero) pi << 1.0 / 6, 1.0 / 6, 1.0 / 6, 1.0 / 2;
    else pi << 1.0 / 6, 1.0 / 3, 1.0 / 6, 1.0 / 3;
    auto partition = wl_colors(labels);
    return {graph, std::move(labels), TargetDistribution::from_rewards(graph, pi), std::move(partition)};
}

WlTarget wl_target_from_name(const std::string& name) {
    if (name == "hetero") return WlTarget::Hetero;
    if (name == "homo") return WlTarget::Homo;
    throw ValidationError("unknown WL target '" + name + "' (expected hetero or homo)");
}

namespace {

double tied_tv(const Vec& pi, double a, double b) {
    return 0.5 * (std::abs(a * b - pi[0]) + std::abs(a * (1 - b) - pi[1]) + std::abs((1 - a) * b - pi[2]) +
                  std::abs((1 - a) * (1 - b) - pi[3]));
}

// Best point on a (rows x cols) grid, scanning rows in order so ties resolve identically for any thread count.
TyingFloor grid_min(const Vec& pi, double a0, double b0, double step, int rows, int cols, int threads) {
    std::vector<TyingFloor> best(rows, TyingFloor{std::numeric_limits<double>::infinity(), 0, 0});
    auto work = [&](int begin, int end) {
        for (int i = begin; i < end; ++i) {
            double a = std::clamp(a0 + i * step, 0.0, 1.0);
            for (int j = 0; j < cols; ++j) {
                double b = std::clamp(b0 + j * step, 0.0, 1.0);
                double tv = tied_tv(pi, a, b);
                if (tv < best[i].tv) best[i] = {tv, a, b};
            }
        }
    };
    int t = std::clamp(threads, 1, rows);
    if (t == 1) {
        work(0, rows);
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < t; ++w) pool.emplace_back(work, rows * w / t, rows * (w + 1) / t);
        for (auto& th : pool) th.join();
    }
    TyingFloor out = best[0];
    for (const auto& r : best)
        if (r.tv < out.tv) out = r;
    return out;
}

}  // namespace

TyingFloor min_tv_under_tying(const Vec& target, double grid_step, int threads) {
    if (target.size() != 4) throw ValidationError("the tying floor needs a 4-terminal target");
    if (!(grid_step > 0.0 && grid_step <= 0.5)) throw ValidationError("grid step must lie in (0, 0.5]");
    Vec pi = target / target.sum();
    int n = static_cast<int>(std::ceil(1.0 / grid_step)) + 1;
    auto best = grid_min(pi, 0.0, 0.0, 1.0 / (n - 1), n, n, threads);
    // Local polish: shrinking 41x41 windows around the incumbent.
    double w = 2.0 / (n - 1);
    while (w > 1e-13) {
        auto local = grid_min(pi, best.a - w, best.b - w, w / 20, 41, 41, 1);
        if (local.tv <= best.tv) best = local;
        w /= 10;
    }
    return best;
}

TyingFloor min_tv_under_tying(const WlInstance& instance, double grid_step, int threads) {
    return min_tv_under_tying(instance.target.probabilities(), grid_step, threads);
}

TrainConfig wl_default_config() {
    TrainConfig c;
    c.epochs = 3000;
    c.batch = 16;
    c.lr = 1e-2;
    c.lr_log_z = 1e-2;
    c.fcs_samples = 0;
    return c;
}

WlRun wl_train(const WlInstance& instance, bool tied, const TrainConfig& config) {
    TabularPolicy policy = tied ? tied_policy(instance.graph, instance.partition) : TabularPolicy(instance.graph);
    auto rng = make_rng(config.seed, 0x3e11);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const auto& g = *instance.graph;
    for (std::size_t v = 0; v < g.num_states(); ++v) {
        auto s = static_cast<StateId>(v);
        for (std::size_t k = 0; k < g.children(s).size(); ++k)
            policy.params()[policy.forward_index(s, static_cast<int>(k))] = u(rng);
    }
    initialize_log_flows(policy, instance.target);
    auto result = train(instance.target, LossTB{}, config, policy);
    WlRun run;
    run.tied = tied;
    run.seed = static_cast<int>(config.seed);
    run.final_tv = total_variation(exact_marginal(result.policy), instance.target.probabilities());
    run.floor = min_tv_under_tying(instance).tv;
    return run;
}

std::string wl_csv(const std::vector<WlRun>& runs) {
    std::ostringstream os;
    os << "mode,seed,final_tv,floor\n";
    for (const auto& r : runs)
        os << (r.tied ? "tied" : "untied") << ',' << r.seed << ',' << format_full(r.final_tv) << ','
           << format_full(r.floor) << '\n';
    return os.str();
}

}  // namespace gfn

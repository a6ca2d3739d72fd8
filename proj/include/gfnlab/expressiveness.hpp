#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gfnlab/training.hpp"

namespace gfn {

// Undirected graph with all-equal node features, stored as a symmetric bit matrix.
class GraphState {
public:
    explicit GraphState(int n = 0);
    GraphState(int n, const std::vector<std::pair<int, int>>& edges);

    int size() const { return n_; }
    bool adjacent(int i, int j) const { return adj_[static_cast<std::size_t>(i) * n_ + j] != 0; }
    void add_edge(int i, int j);
    std::vector<int> neighbors(int i) const;
    int num_edges() const;
    std::string to_string() const;

private:
    int n_ = 0;
    std::vector<unsigned char> adj_;
};

GraphState cycle_graph(int n);
// k disjoint copies of C_m.
GraphState disjoint_cycles(int k, int m);

class TyingError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct WlPartition {
    std::vector<int> color;  // per input state
    int rounds = 0;
};

// Node colors of the disjoint union after refinement, flattened state by state.
struct WlNodeColors {
    std::vector<std::vector<int>> colors;
    int rounds = 0;
};

// One refinement round over the disjoint union; colors are relabelled canonically.
std::vector<std::vector<int>> wl_refine(const std::vector<GraphState>& states,
                                        const std::vector<std::vector<int>>& colors);
// Refines to stability, or for at most `rounds` rounds.
WlNodeColors wl_node_colors(const std::vector<GraphState>& states, std::optional<int> rounds = std::nullopt);
// States share a color iff their stable color histograms are equal.
WlPartition wl_colors(const std::vector<GraphState>& states, std::optional<int> rounds = std::nullopt);

// Forward logits shared by every nonterminal of one color class. Children are
// matched slot by slot after sorting them by color, ties by id.
TabularPolicy tied_policy(GraphPtr graph, const WlPartition& partition);

enum class WlTarget { Hetero, Homo };

struct WlInstance {
    GraphPtr graph;
    std::vector<GraphState> labels;  // by state id
    TargetDistribution target;
    WlPartition partition;
};

// S0 -> {N1, N2}, N1 -> {G1, G2}, N2 -> {G3, G4}; N1 = C6 and N2 = 2xC3.
// Hetero: π = (1/6, 1/6, 1/6, 1/2). Homo: π = (1/6, 1/3, 1/6, 1/3).
WlInstance wl_counterexample(WlTarget target = WlTarget::Hetero);
WlTarget wl_target_from_name(const std::string& name);

struct TyingFloor {
    double tv = 0.0;
    double a = 0.0;  // P(S0 -> N1)
    double b = 0.0;  // shared P(first child)
};

// min over (a,b) in [0,1]^2 of TV((ab, a(1-b), (1-a)b, (1-a)(1-b)), target).
TyingFloor min_tv_under_tying(const Vec& target, double grid_step = 1e-3, int threads = 1);
TyingFloor min_tv_under_tying(const WlInstance& instance, double grid_step = 1e-3, int threads = 1);

struct WlRun {
    bool tied = false;
    int seed = 0;
    double final_tv = 0.0;
    double floor = 0.0;
};

// TB training of the tied or untied policy from random U[-1,1] logits seeded by config.seed.
WlRun wl_train(const WlInstance& instance, bool tied, const TrainConfig& config);
TrainConfig wl_default_config();
std::string wl_csv(const std::vector<WlRun>& runs);

}  // namespace gfn

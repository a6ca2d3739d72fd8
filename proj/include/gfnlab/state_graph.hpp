#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace gfn {

using StateId = std::int32_t;

inline constexpr std::size_t kDefaultCapacity = 1'000'000;

class GraphError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class CapacityError : public GraphError {
public:
    using GraphError::GraphError;
};

class InvariantError : public GraphError {
public:
    InvariantError(std::string invariant, const std::string& detail)
        : GraphError(invariant + ": " + detail), invariant_(std::move(invariant)) {}
    const std::string& invariant() const { return invariant_; }

private:
    std::string invariant_;
};

class ParseError : public GraphError {
public:
    using GraphError::GraphError;
};

struct StateRecord {
    StateId id = 0;
    bool terminal = false;
    std::string label;
};

using Edge = std::pair<StateId, StateId>;

// Capacity guard honouring GFNLAB_CAPACITY when set.
std::size_t capacity_guard();

// Immutable DAG of states. Adjacency lists are sorted; terminal ids sorted.
class StateGraph {
public:
    StateGraph(std::vector<StateRecord> states, StateId initial, std::vector<Edge> edges);

    std::size_t num_states() const { return states_.size(); }
    std::size_t num_edges() const { return num_edges_; }
    std::size_t num_terminals() const { return terminals_.size(); }
    StateId initial() const { return initial_; }

    const std::vector<StateRecord>& states() const { return states_; }
    bool is_terminal(StateId v) const { return states_[check(v)].terminal; }
    const std::string& label(StateId v) const { return states_[check(v)].label; }

    std::span<const StateId> children(StateId v) const;
    std::span<const StateId> parents(StateId v) const;
    std::span<const StateId> terminals() const { return terminals_; }

    // Position of v in terminals(), or -1 for nonterminals.
    int terminal_index(StateId v) const { return terminal_index_[check(v)]; }
    // Slot of child c in children(u), or -1.
    int child_slot(StateId u, StateId c) const;
    int parent_slot(StateId v, StateId p) const;
    bool has_edge(StateId u, StateId v) const { return child_slot(u, v) >= 0; }

    // Offset of the first outgoing edge of u in the global edge numbering;
    // edge (u, children(u)[k]) has index edge_offset(u) + k.
    std::size_t edge_offset(StateId u) const { return child_begin_[check(u)]; }
    std::vector<Edge> edges() const;

    const std::vector<StateId>& topological_order() const { return topo_; }

    std::vector<StateId> reachable_terminals(StateId v) const;
    int geodesic_depth(StateId v) const { return depth_[check(v)]; }
    int max_depth() const { return max_depth_; }
    // Longest complete trajectory, in transitions.
    int max_trajectory_length() const { return max_len_; }

    bool operator==(const StateGraph& other) const;

private:
    std::size_t check(StateId v) const;

    std::vector<StateRecord> states_;
    StateId initial_ = 0;
    std::size_t num_edges_ = 0;
    std::vector<std::size_t> child_begin_;
    std::vector<StateId> child_ids_;
    std::vector<std::size_t> parent_begin_;
    std::vector<StateId> parent_ids_;
    std::vector<StateId> terminals_;
    std::vector<int> terminal_index_;
    std::vector<StateId> topo_;
    std::vector<int> depth_;
    int max_depth_ = 0;
    int max_len_ = 0;

    struct ReachCache {
        std::mutex mutex;
        std::vector<std::shared_ptr<const std::vector<StateId>>> sets;
    };
    std::shared_ptr<ReachCache> reach_;
};

using GraphPtr = std::shared_ptr<const StateGraph>;

StateGraph build_regular_tree(int g, int h, std::size_t guard = capacity_guard());
StateGraph build_set_graph(int d, int S, std::size_t guard = capacity_guard());
// Layered random DAG: ids 1..num_internal are internal, the last num_terminals
// ids are terminals. Each extra earlier parent is added with probability p_extra.
StateGraph build_random_dag(int num_internal, int num_terminals, double p_extra, std::uint64_t seed);

// Elements (1-based) of a set-graph state, parsed from its label.
std::vector<int> set_elements(const StateGraph& g, StateId v);

StateGraph graph_from_json(const std::string& text);
std::string graph_to_json(const StateGraph& g);
StateGraph load_graph(const std::string& path);
void save_graph(const StateGraph& g, const std::string& path);
std::string graph_to_dot(const StateGraph& g);
void export_dot(const StateGraph& g, const std::string& path);

// Parses "tree:g=2,h=3", "set:d=8,S=4", "random:internal=20,terminals=16,p=0.3,seed=1"
// or "file:path.json".
StateGraph graph_from_spec(const std::string& spec);

}  // namespace gfn

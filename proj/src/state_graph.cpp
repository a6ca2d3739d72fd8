#include "gfnlab/state_graph.hpp"

#include <algorithm>
#include <cstdlib>
#include <deque>
#include <limits>
#include <random>
#include <sstream>

#include <json.hpp>

#include "gfnlab/util.hpp"

namespace gfn {

using json = nlohmann::json;

std::size_t capacity_guard() {
    const char* env = std::getenv("GFNLAB_CAPACITY");
    if (env == nullptr || *env == '\0') return kDefaultCapacity;
    char* end = nullptr;
    unsigned long long v = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0' || v == 0)
        throw ValidationError(std::string("GFNLAB_CAPACITY must be a positive integer, got '") + env + "'");
    return static_cast<std::size_t>(v);
}

StateGraph::StateGraph(std::vector<StateRecord> states, StateId initial, std::vector<Edge> edges)
    : states_(std::move(states)), initial_(initial), reach_(std::make_shared<ReachCache>()) {
    const auto n = states_.size();
    if (n == 0) throw InvariantError("nonempty", "graph has no states");
    for (std::size_t i = 0; i < n; ++i)
        if (states_[i].id != static_cast<StateId>(i))
            throw InvariantError("dense ids", "state at position " + std::to_string(i) + " has id " +
                                                  std::to_string(states_[i].id));
    if (initial_ < 0 || static_cast<std::size_t>(initial_) >= n)
        throw InvariantError("initial state", "initial id " + std::to_string(initial_) + " out of range");

    for (const auto& [u, v] : edges) {
        if (u < 0 || v < 0 || static_cast<std::size_t>(u) >= n || static_cast<std::size_t>(v) >= n)
            throw InvariantError("edge endpoints", "edge (" + std::to_string(u) + "," + std::to_string(v) +
                                                       ") references an unknown state");
        if (u == v) throw InvariantError("acyclic", "self-loop at state " + std::to_string(u));
    }
    std::sort(edges.begin(), edges.end());
    if (auto it = std::adjacent_find(edges.begin(), edges.end()); it != edges.end())
        throw InvariantError("simple graph", "duplicate edge (" + std::to_string(it->first) + "," +
                                                 std::to_string(it->second) + ")");
    num_edges_ = edges.size();

    child_begin_.assign(n + 1, 0);
    parent_begin_.assign(n + 1, 0);
    for (const auto& [u, v] : edges) {
        ++child_begin_[u + 1];
        ++parent_begin_[v + 1];
    }
    for (std::size_t i = 0; i < n; ++i) {
        child_begin_[i + 1] += child_begin_[i];
        parent_begin_[i + 1] += parent_begin_[i];
    }
    child_ids_.resize(num_edges_);
    parent_ids_.resize(num_edges_);
    {
        std::vector<std::size_t> cfill(child_begin_.begin(), child_begin_.end() - 1);
        std::vector<std::size_t> pfill(parent_begin_.begin(), parent_begin_.end() - 1);
        for (const auto& [u, v] : edges) {
            child_ids_[cfill[u]++] = v;
            parent_ids_[pfill[v]++] = u;
        }
        for (std::size_t v = 0; v < n; ++v)
            std::sort(parent_ids_.begin() + parent_begin_[v], parent_ids_.begin() + parent_begin_[v + 1]);
    }

    if (parent_begin_[initial_ + 1] != parent_begin_[initial_])
        throw InvariantError("initial state has no parents", "state " + std::to_string(initial_) + " has parents");

    terminal_index_.assign(n, -1);
    for (std::size_t v = 0; v < n; ++v) {
        bool childless = child_begin_[v + 1] == child_begin_[v];
        if (states_[v].terminal && !childless)
            throw InvariantError("terminals have no children", "terminal " + std::to_string(v) + " has children");
        if (!states_[v].terminal && childless)
            throw InvariantError("nonterminals reach a terminal",
                                 "nonterminal " + std::to_string(v) + " has no children");
        if (states_[v].terminal) {
            terminal_index_[v] = static_cast<int>(terminals_.size());
            terminals_.push_back(static_cast<StateId>(v));
        }
    }
    if (terminals_.empty()) throw InvariantError("nonempty terminal set", "graph has no terminal states");

    // Kahn's algorithm, smallest id first so the order is canonical.
    std::vector<std::size_t> indeg(n);
    for (std::size_t v = 0; v < n; ++v) indeg[v] = parent_begin_[v + 1] - parent_begin_[v];
    std::vector<StateId> ready;
    for (std::size_t v = 0; v < n; ++v)
        if (indeg[v] == 0) ready.push_back(static_cast<StateId>(v));
    std::make_heap(ready.begin(), ready.end(), std::greater<>());
    topo_.reserve(n);
    while (!ready.empty()) {
        std::pop_heap(ready.begin(), ready.end(), std::greater<>());
        StateId u = ready.back();
        ready.pop_back();
        topo_.push_back(u);
        for (StateId c : children(u))
            if (--indeg[c] == 0) {
                ready.push_back(c);
                std::push_heap(ready.begin(), ready.end(), std::greater<>());
            }
    }
    if (topo_.size() != n) throw InvariantError("acyclic", "the edge set contains a directed cycle");

    depth_.assign(n, -1);
    std::deque<StateId> queue{initial_};
    depth_[initial_] = 0;
    while (!queue.empty()) {
        StateId u = queue.front();
        queue.pop_front();
        for (StateId c : children(u))
            if (depth_[c] < 0) {
                depth_[c] = depth_[u] + 1;
                queue.push_back(c);
            }
    }
    for (std::size_t v = 0; v < n; ++v)
        if (depth_[v] < 0)
            throw InvariantError("reachable from initial", "state " + std::to_string(v) + " is unreachable");
    max_depth_ = *std::max_element(depth_.begin(), depth_.end());

    std::vector<int> longest(n, 0);
    for (StateId u : topo_)
        for (StateId c : children(u)) longest[c] = std::max(longest[c], longest[u] + 1);
    for (StateId x : terminals_) max_len_ = std::max(max_len_, longest[x]);

    reach_->sets.resize(n);
}

std::size_t StateGraph::check(StateId v) const {
    if (v < 0 || static_cast<std::size_t>(v) >= states_.size())
        throw GraphError("unknown state id " + std::to_string(v));
    return static_cast<std::size_t>(v);
}

std::span<const StateId> StateGraph::children(StateId v) const {
    auto i = check(v);
    return {child_ids_.data() + child_begin_[i], child_begin_[i + 1] - child_begin_[i]};
}

std::span<const StateId> StateGraph::parents(StateId v) const {
    auto i = check(v);
    return {parent_ids_.data() + parent_begin_[i], parent_begin_[i + 1] - parent_begin_[i]};
}

int StateGraph::child_slot(StateId u, StateId c) const {
    auto ch = children(u);
    auto it = std::lower_bound(ch.begin(), ch.end(), c);
    return (it != ch.end() && *it == c) ? static_cast<int>(it - ch.begin()) : -1;
}

int StateGraph::parent_slot(StateId v, StateId p) const {
    auto pa = parents(v);
    auto it = std::lower_bound(pa.begin(), pa.end(), p);
    return (it != pa.end() && *it == p) ? static_cast<int>(it - pa.begin()) : -1;
}

std::vector<Edge> StateGraph::edges() const {
    std::vector<Edge> out;
    out.reserve(num_edges_);
    for (std::size_t u = 0; u < states_.size(); ++u)
        for (StateId c : children(static_cast<StateId>(u))) out.emplace_back(static_cast<StateId>(u), c);
    return out;
}

std::vector<StateId> StateGraph::reachable_terminals(StateId v) const {
    check(v);
    std::lock_guard lock(reach_->mutex);
    auto& sets = reach_->sets;
    if (!sets[v]) {
        // Fill in reverse topological order restricted to what v needs.
        std::vector<StateId> stack{v};
        while (!stack.empty()) {
            StateId u = stack.back();
            if (sets[u]) {
                stack.pop_back();
                continue;
            }
            bool ready = true;
            for (StateId c : children(u))
                if (!sets[c]) {
                    stack.push_back(c);
                    ready = false;
                }
            if (!ready) continue;
            stack.pop_back();
            std::vector<StateId> acc;
            if (states_[u].terminal) acc.push_back(u);
            for (StateId c : children(u)) {
                std::vector<StateId> merged;
                merged.reserve(acc.size() + sets[c]->size());
                std::set_union(acc.begin(), acc.end(), sets[c]->begin(), sets[c]->end(),
                               std::back_inserter(merged));
                acc.swap(merged);
            }
            sets[u] = std::make_shared<const std::vector<StateId>>(std::move(acc));
        }
    }
    return *sets[v];
}

bool StateGraph::operator==(const StateGraph& other) const {
    if (initial_ != other.initial_ || states_.size() != other.states_.size()) return false;
    for (std::size_t i = 0; i < states_.size(); ++i)
        if (states_[i].terminal != other.states_[i].terminal || states_[i].label != other.states_[i].label)
            return false;
    return child_begin_ == other.child_begin_ && child_ids_ == other.child_ids_;
}

StateGraph build_regular_tree(int g, int h, std::size_t guard) {
    if (g < 2) throw ValidationError("regular tree needs g >= 2");
    if (h < 1) throw ValidationError("regular tree needs h >= 1");
    unsigned __int128 level = 1, total = 1;
    for (int k = 0; k < h; ++k) {
        level *= static_cast<unsigned>(g);
        total += level;
        if (level > guard || total > std::numeric_limits<StateId>::max())
            throw CapacityError("tree(" + std::to_string(g) + "," + std::to_string(h) +
                                ") exceeds the enumeration capacity of " + std::to_string(guard) + " terminals");
    }
    const auto n = static_cast<std::size_t>(total);
    const auto first_leaf = n - static_cast<std::size_t>(level);
    std::vector<StateRecord> states(n);
    std::vector<Edge> edges;
    edges.reserve(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        states[i].id = static_cast<StateId>(i);
        states[i].terminal = i >= first_leaf;
        if (i >= first_leaf) continue;
        for (int k = 1; k <= g; ++k) edges.emplace_back(static_cast<StateId>(i), static_cast<StateId>(g * i + k));
    }
    return StateGraph(std::move(states), 0, std::move(edges));
}

namespace {

std::uint64_t binom(int n, int k) {
    if (k < 0 || k > n) return 0;
    unsigned __int128 r = 1;
    for (int i = 1; i <= k; ++i) {
        r = r * static_cast<unsigned>(n - k + i) / static_cast<unsigned>(i);
        if (r > std::numeric_limits<std::uint64_t>::max()) return std::numeric_limits<std::uint64_t>::max();
    }
    return static_cast<std::uint64_t>(r);
}

std::string set_label(std::uint64_t mask) {
    std::string s = "{";
    bool first = true;
    for (int e = 0; e < 64; ++e)
        if (mask >> e & 1u) {
            if (!first) s += ',';
            s += std::to_string(e + 1);
            first = false;
        }
    return s + "}";
}

}  // namespace

StateGraph build_set_graph(int d, int S, std::size_t guard) {
    if (d < 1 || S < 1 || S > d) throw ValidationError("set graph needs 1 <= S <= d");
    if (d > 62) throw CapacityError("set graph deposit size " + std::to_string(d) + " exceeds 62");
    std::vector<std::uint64_t> level_size(S + 1), level_offset(S + 2, 0);
    unsigned __int128 total = 0;
    for (int k = 0; k <= S; ++k) {
        level_size[k] = binom(d, k);
        total += level_size[k];
        if (total > guard)
            throw CapacityError("set(" + std::to_string(d) + "," + std::to_string(S) +
                                ") has more than " + std::to_string(guard) + " states");
        level_offset[k + 1] = level_offset[k] + level_size[k];
    }
    // Colex rank of a k-subset {c_1 < ... < c_k} (zero-based) is sum_i C(c_i, i).
    std::vector<std::vector<std::uint64_t>> choose(d + 1, std::vector<std::uint64_t>(S + 2, 0));
    for (int a = 0; a <= d; ++a)
        for (int b = 0; b <= S + 1; ++b) choose[a][b] = binom(a, b);
    auto id_of = [&](std::uint64_t mask) {
        std::uint64_t rank = 0;
        int i = 0;
        for (int e = 0; e < d; ++e)
            if (mask >> e & 1u) rank += choose[e][++i];
        return static_cast<StateId>(level_offset[i] + rank);
    };

    const auto n = static_cast<std::size_t>(total);
    std::vector<StateRecord> states(n);
    std::vector<Edge> edges;
    for (int k = 0; k <= S; ++k) {
        // Gosper's hack walks k-subsets in increasing integer order, which is colex order.
        std::uint64_t mask = k == 0 ? 0 : (std::uint64_t{1} << k) - 1;
        for (std::uint64_t r = 0; r < level_size[k]; ++r) {
            StateId id = static_cast<StateId>(level_offset[k] + r);
            states[id] = {id, k == S, set_label(mask)};
            if (k < S)
                for (int e = 0; e < d; ++e)
                    if (!(mask >> e & 1u)) edges.emplace_back(id, id_of(mask | std::uint64_t{1} << e));
            if (mask != 0) {
                std::uint64_t c = mask & (~mask + 1), nx = mask + c;
                mask = (((nx ^ mask) >> 2) / c) | nx;
            }
        }
    }
    return StateGraph(std::move(states), 0, std::move(edges));
}

StateGraph build_random_dag(int num_internal, int num_terminals, double p_extra, std::uint64_t seed) {
    if (num_internal < 0 || num_terminals < 1) throw ValidationError("random DAG needs internal >= 0, terminals >= 1");
    if (!(p_extra >= 0.0 && p_extra <= 1.0)) throw ValidationError("random DAG edge probability must lie in [0,1]");
    const int n = 1 + num_internal + num_terminals;
    const int last_internal = num_internal;
    auto rng = make_rng(seed, 0x5eed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<std::vector<bool>> adj(n, std::vector<bool>(n, false));
    for (int j = 1; j < n; ++j) {
        int hi = std::min(j - 1, last_internal);
        std::uniform_int_distribution<int> pick(0, hi);
        adj[pick(rng)][j] = true;
        for (int i = 0; i <= hi; ++i)
            if (!adj[i][j] && unif(rng) < p_extra) adj[i][j] = true;
    }
    for (int i = 1; i <= last_internal; ++i) {
        bool any = false;
        for (int j = i + 1; j < n && !any; ++j) any = adj[i][j];
        if (!any) {
            std::uniform_int_distribution<int> pick(std::max(i + 1, last_internal + 1), n - 1);
            adj[i][pick(rng)] = true;
        }
    }
    std::vector<StateRecord> states(n);
    std::vector<Edge> edges;
    for (int i = 0; i < n; ++i) {
        states[i] = {i, i > last_internal, ""};
        for (int j = 0; j < n; ++j)
            if (adj[i][j]) edges.emplace_back(i, j);
    }
    return StateGraph(std::move(states), 0, std::move(edges));
}

std::vector<int> set_elements(const StateGraph& g, StateId v) {
    const std::string& s = g.label(v);
    if (s.size() < 2 || s.front() != '{' || s.back() != '}')
        throw GraphError("state " + std::to_string(v) + " does not carry a set label");
    std::vector<int> out;
    std::stringstream ss(s.substr(1, s.size() - 2));
    std::string tok;
    while (std::getline(ss, tok, ','))
        if (!tok.empty()) out.push_back(std::stoi(tok));
    return out;
}

namespace {

std::string where(const std::string& text, std::size_t byte) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

long long field_int(const json& j, const std::string& path) {
    if (!j.is_number_integer()) throw ParseError(path + ": expected an integer");
    return j.get<long long>();
}

}  // namespace

StateGraph graph_from_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError("graph JSON syntax error at " + where(text, e.byte) + ": " + e.what());
    }
    if (!doc.is_object()) throw ParseError("graph JSON: top level must be an object");
    for (const auto& [k, v] : doc.items())
        if (k != "initial" && k != "states" && k != "edges") throw ParseError("graph JSON: unknown key '" + k + "'");
    if (!doc.contains("initial")) throw ParseError("graph JSON: missing field 'initial'");
    if (!doc.contains("states") || !doc["states"].is_array())
        throw ParseError("graph JSON: 'states' must be an array");
    if (!doc.contains("edges") || !doc["edges"].is_array()) throw ParseError("graph JSON: 'edges' must be an array");

    auto initial = field_int(doc["initial"], "initial");
    const auto& js = doc["states"];
    std::vector<StateRecord> states(js.size());
    std::vector<bool> seen(js.size(), false);
    for (std::size_t i = 0; i < js.size(); ++i) {
        const std::string path = "states[" + std::to_string(i) + "]";
        const auto& s = js[i];
        if (!s.is_object()) throw ParseError(path + ": expected an object");
        for (const auto& [k, v] : s.items())
            if (k != "id" && k != "terminal" && k != "label") throw ParseError(path + ": unknown key '" + k + "'");
        if (!s.contains("id")) throw ParseError(path + ".id: missing");
        if (!s.contains("terminal") || !s["terminal"].is_boolean())
            throw ParseError(path + ".terminal: expected a boolean");
        auto id = field_int(s["id"], path + ".id");
        if (id < 0 || static_cast<std::size_t>(id) >= js.size())
            throw ParseError(path + ".id: " + std::to_string(id) + " outside 0.." + std::to_string(js.size() - 1));
        if (seen[id]) throw ParseError(path + ".id: duplicate id " + std::to_string(id));
        seen[id] = true;
        std::string label;
        if (s.contains("label")) {
            if (!s["label"].is_string()) throw ParseError(path + ".label: expected a string");
            label = s["label"].get<std::string>();
        }
        states[id] = {static_cast<StateId>(id), s["terminal"].get<bool>(), std::move(label)};
    }
    std::vector<Edge> edges;
    const auto& je = doc["edges"];
    for (std::size_t i = 0; i < je.size(); ++i) {
        const std::string path = "edges[" + std::to_string(i) + "]";
        if (!je[i].is_array() || je[i].size() != 2) throw ParseError(path + ": expected [from, to]");
        edges.emplace_back(static_cast<StateId>(field_int(je[i][0], path + "[0]")),
                           static_cast<StateId>(field_int(je[i][1], path + "[1]")));
    }
    return StateGraph(std::move(states), static_cast<StateId>(initial), std::move(edges));
}

std::string graph_to_json(const StateGraph& g) {
    json doc;
    doc["initial"] = g.initial();
    json states = json::array();
    for (const auto& s : g.states()) {
        json js{{"id", s.id}, {"terminal", s.terminal}};
        if (!s.label.empty()) js["label"] = s.label;
        states.push_back(std::move(js));
    }
    doc["states"] = std::move(states);
    json edges = json::array();
    for (const auto& [u, v] : g.edges()) edges.push_back({u, v});
    doc["edges"] = std::move(edges);
    return doc.dump() + "\n";
}

StateGraph load_graph(const std::string& path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const std::runtime_error& e) {
        throw ParseError(e.what());
    }
    try {
        return graph_from_json(text);
    } catch (const InvariantError&) {
        throw;
    } catch (const ParseError& e) {
        throw ParseError(path + ": " + e.what());
    }
}

void save_graph(const StateGraph& g, const std::string& path) { write_file_atomic(path, graph_to_json(g)); }

std::string graph_to_dot(const StateGraph& g) {
    std::ostringstream out;
    out << "digraph G {\n  rankdir=TB;\n  node [shape=circle];\n";
    for (const auto& s : g.states()) {
        out << "  " << s.id << " [";
        std::string text = s.label.empty() ? std::to_string(s.id) : s.label;
        out << "label=\"" << text << "\"";
        if (s.terminal) out << ", shape=doublecircle, style=filled, fillcolor=lightgrey";
        if (s.id == g.initial()) out << ", shape=box";
        out << "];\n";
    }
    for (const auto& [u, v] : g.edges()) out << "  " << u << " -> " << v << ";\n";
    out << "}\n";
    return out.str();
}

void export_dot(const StateGraph& g, const std::string& path) { write_file_atomic(path, graph_to_dot(g)); }

StateGraph graph_from_spec(const std::string& text) {
    auto spec = parse_spec(text);
    if (spec.kind == "tree") {
        spec.allow_only({"g", "h"});
        return build_regular_tree(static_cast<int>(spec.require_int("g")), static_cast<int>(spec.require_int("h")));
    }
    if (spec.kind == "set") {
        spec.allow_only({"d", "S"});
        return build_set_graph(static_cast<int>(spec.require_int("d")), static_cast<int>(spec.require_int("S")));
    }
    if (spec.kind == "random") {
        spec.allow_only({"internal", "terminals", "p", "seed"});
        return build_random_dag(static_cast<int>(spec.require_int("internal")),
                                static_cast<int>(spec.require_int("terminals")), spec.get_double("p", 0.3),
                                static_cast<std::uint64_t>(spec.get_int("seed", 0)));
    }
    if (spec.kind == "file") return load_graph(spec.get("path", ""));
    throw ValidationError("unknown graph kind '" + spec.kind + "' (expected tree, set, random or file)");
}

}  // namespace gfn

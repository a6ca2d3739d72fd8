#include "gfnlab/flow_core.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "gfnlab/util.hpp"

namespace gfn {

using json = nlohmann::json;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    double m = std::max(a, b);
    return m + std::log1p(std::exp(-std::abs(a - b)));
}

}  // namespace

TargetDistribution::TargetDistribution(GraphPtr graph, Vec log_reward)
    : graph_(std::move(graph)), log_reward_(std::move(log_reward)) {
    if (!graph_) throw std::invalid_argument("target: null graph");
    if (static_cast<std::size_t>(log_reward_.size()) != graph_->num_terminals())
        throw ValidationError("target: " + std::to_string(log_reward_.size()) + " rewards for " +
                              std::to_string(graph_->num_terminals()) + " terminals");
    if (!log_reward_.allFinite()) throw ValidationError("target: rewards must be strictly positive and finite");
    double m = log_reward_.maxCoeff();
    log_z_ = m + std::log((log_reward_.array() - m).exp().sum());
    prob_ = (log_reward_.array() - log_z_).exp().matrix();
}

TargetDistribution TargetDistribution::uniform(GraphPtr graph) {
    auto n = static_cast<Index>(graph->num_terminals());
    return TargetDistribution(std::move(graph), Vec::Zero(n));
}

TargetDistribution TargetDistribution::from_rewards(GraphPtr graph, const Vec& reward) {
    if ((reward.array() <= 0).any() || !reward.allFinite())
        throw ValidationError("target: rewards must be strictly positive and finite");
    return TargetDistribution(std::move(graph), reward.array().log().matrix());
}

TargetDistribution TargetDistribution::kmodes(GraphPtr graph, double R, const std::vector<int>& modes) {
    const auto n = static_cast<double>(graph->num_terminals());
    const auto K = static_cast<double>(modes.size());
    if (modes.empty()) throw ValidationError("kmodes: at least one mode required");
    if (!(R > 0.0) || !(K * R < n)) throw ValidationError("kmodes: need R > 0 and K R < n");
    Vec p = Vec::Constant(graph->num_terminals(), (n - K * R) / (n * (n - K)));
    std::vector<bool> used(graph->num_terminals(), false);
    for (int m : modes) {
        if (m < 0 || m >= static_cast<int>(graph->num_terminals()) || used[m])
            throw ValidationError("kmodes: invalid or repeated mode index " + std::to_string(m));
        used[m] = true;
        p[m] = R / n;
    }
    return from_rewards(std::move(graph), p);
}

TargetDistribution TargetDistribution::kmodes_random(GraphPtr graph, int K, double R, std::uint64_t seed) {
    const int n = static_cast<int>(graph->num_terminals());
    if (K < 1 || K >= n) throw ValidationError("kmodes: need 1 <= K < n");
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    auto rng = make_rng(seed, 0xd0de);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(K);
    std::sort(idx.begin(), idx.end());
    return kmodes(std::move(graph), R, idx);
}

TargetDistribution TargetDistribution::set_product(GraphPtr graph, const Vec& f, double alpha) {
    if (!(alpha > 0.0)) throw ValidationError("set product: alpha must be positive");
    Vec lr(graph->num_terminals());
    for (std::size_t i = 0; i < graph->num_terminals(); ++i) {
        double s = 0.0;
        for (int e : set_elements(*graph, graph->terminals()[i])) {
            if (e < 1 || e > f.size()) throw ValidationError("set product: element outside the value table");
            s += f[e - 1];
        }
        lr[static_cast<Index>(i)] = s / alpha;
    }
    return TargetDistribution(std::move(graph), lr);
}

Vec TargetDistribution::set_product_values(int d, std::uint64_t seed) {
    auto rng = make_rng(seed, 0xf00d);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Vec f(d);
    for (int i = 0; i < d; ++i) f[i] = u(rng);
    return f;
}

double TargetDistribution::log_reward_of_state(StateId x) const {
    int i = graph_->terminal_index(x);
    if (i < 0) throw GraphError("state " + std::to_string(x) + " is not terminal");
    return log_reward_[i];
}

TargetDistribution target_from_spec(GraphPtr graph, const std::string& text) {
    auto spec = parse_spec(text);
    if (spec.kind == "uniform") {
        spec.allow_only({});
        return TargetDistribution::uniform(std::move(graph));
    }
    if (spec.kind == "kmodes") {
        spec.allow_only({"K", "R", "seed"});
        return TargetDistribution::kmodes_random(std::move(graph), static_cast<int>(spec.require_int("K")),
                                                 spec.require_double("R"),
                                                 static_cast<std::uint64_t>(spec.get_int("seed", 0)));
    }
    if (spec.kind == "product") {
        spec.allow_only({"seed", "alpha"});
        int d = 0;
        for (StateId c : graph->children(graph->initial()))
            for (int e : set_elements(*graph, c)) d = std::max(d, e);
        auto f = TargetDistribution::set_product_values(d, static_cast<std::uint64_t>(spec.get_int("seed", 0)));
        return TargetDistribution::set_product(std::move(graph), f, spec.get_double("alpha", 1.0));
    }
    throw ValidationError("unknown target kind '" + spec.kind + "' (expected uniform, kmodes or product)");
}

TabularPolicy::TabularPolicy(GraphPtr graph, BackwardMode mode) : graph_(std::move(graph)), mode_(mode) {
    std::vector<std::vector<int>> slots(graph_->num_states());
    int next = 0;
    for (std::size_t u = 0; u < graph_->num_states(); ++u)
        for (std::size_t k = 0; k < graph_->children(static_cast<StateId>(u)).size(); ++k) slots[u].push_back(next++);
    build(slots, next);
}

TabularPolicy::TabularPolicy(GraphPtr graph, const std::vector<std::vector<int>>& forward_slots, int num_forward,
                             BackwardMode mode)
    : graph_(std::move(graph)), mode_(mode) {
    build(forward_slots, num_forward);
}

void TabularPolicy::build(const std::vector<std::vector<int>>& slots, int num_forward) {
    const auto& g = *graph_;
    const auto n = g.num_states();
    if (slots.size() != n) throw std::invalid_argument("policy: slot table size mismatch");
    Index next = 1;
    fwd_begin_.assign(n + 1, 0);
    for (std::size_t u = 0; u < n; ++u) {
        if (slots[u].size() != g.children(static_cast<StateId>(u)).size())
            throw std::invalid_argument("policy: slot count differs from out-degree at state " + std::to_string(u));
        fwd_begin_[u + 1] = fwd_begin_[u] + slots[u].size();
        for (int s : slots[u]) {
            if (s < 0 || s >= num_forward) throw std::invalid_argument("policy: forward parameter id out of range");
            fwd_.push_back(static_cast<int>(next + s));
        }
    }
    next += num_forward;
    flow_.assign(n, -1);
    for (std::size_t v = 0; v < n; ++v) {
        if (g.is_terminal(static_cast<StateId>(v))) continue;
        flow_[v] = static_cast<StateId>(v) == g.initial() ? static_cast<int>(kLogZ) : static_cast<int>(next++);
    }
    bwd_begin_.assign(n + 1, 0);
    if (mode_ == BackwardMode::Learnable) {
        for (std::size_t v = 0; v < n; ++v) {
            auto np = g.parents(static_cast<StateId>(v)).size();
            bwd_begin_[v + 1] = bwd_begin_[v] + np;
            for (std::size_t k = 0; k < np; ++k) bwd_.push_back(static_cast<int>(next++));
        }
    }
    params_ = Vec::Zero(next);
}

int TabularPolicy::backward_index(StateId v, int slot) const {
    if (mode_ == BackwardMode::Uniform) return -1;
    return bwd_[bwd_begin_[v] + slot];
}

double TabularPolicy::logit(StateId u, int slot) const {
    return std::clamp(params_[forward_index(u, slot)], -kLogitClamp, kLogitClamp);
}

void TabularPolicy::forward_log_probs(StateId u, std::vector<double>& out) const {
    auto deg = graph_->children(u).size();
    out.resize(deg);
    double m = kNegInf;
    for (std::size_t k = 0; k < deg; ++k) {
        out[k] = logit(u, static_cast<int>(k));
        m = std::max(m, out[k]);
    }
    double s = 0.0;
    for (double x : out) s += std::exp(x - m);
    double lse = m + std::log(s);
    for (double& x : out) x -= lse;
}

void TabularPolicy::backward_log_probs(StateId v, std::vector<double>& out) const {
    auto deg = graph_->parents(v).size();
    out.resize(deg);
    if (mode_ == BackwardMode::Uniform) {
        std::fill(out.begin(), out.end(), -std::log(static_cast<double>(deg)));
        return;
    }
    double m = kNegInf;
    for (std::size_t k = 0; k < deg; ++k) {
        out[k] = std::clamp(params_[bwd_[bwd_begin_[v] + k]], -kLogitClamp, kLogitClamp);
        m = std::max(m, out[k]);
    }
    double s = 0.0;
    for (double x : out) s += std::exp(x - m);
    double lse = m + std::log(s);
    for (double& x : out) x -= lse;
}

Vec TabularPolicy::forward_probs(StateId u) const {
    std::vector<double> lp;
    forward_log_probs(u, lp);
    Vec p(static_cast<Index>(lp.size()));
    for (std::size_t k = 0; k < lp.size(); ++k) p[static_cast<Index>(k)] = std::exp(lp[k]);
    return p;
}

double TabularPolicy::log_pf(StateId u, StateId child) const {
    int slot = graph_->child_slot(u, child);
    if (slot < 0) throw GraphError("no edge " + std::to_string(u) + " -> " + std::to_string(child));
    std::vector<double> lp;
    forward_log_probs(u, lp);
    return lp[slot];
}

double TabularPolicy::log_pb(StateId v, StateId parent) const {
    int slot = graph_->parent_slot(v, parent);
    if (slot < 0) throw GraphError("no edge " + std::to_string(parent) + " -> " + std::to_string(v));
    if (mode_ == BackwardMode::Uniform) return -std::log(static_cast<double>(graph_->parents(v).size()));
    std::vector<double> lp;
    backward_log_probs(v, lp);
    return lp[slot];
}

void TabularPolicy::set_forward_logits(StateId u, const Vec& logits) {
    if (static_cast<std::size_t>(logits.size()) != graph_->children(u).size())
        throw std::invalid_argument("set_forward_logits: size mismatch at state " + std::to_string(u));
    for (Index k = 0; k < logits.size(); ++k) params_[forward_index(u, static_cast<int>(k))] = logits[k];
}

void TabularPolicy::set_backward_logits(StateId v, const Vec& logits) {
    if (mode_ == BackwardMode::Uniform) throw std::logic_error("backward policy is fixed uniform");
    if (static_cast<std::size_t>(logits.size()) != graph_->parents(v).size())
        throw std::invalid_argument("set_backward_logits: size mismatch at state " + std::to_string(v));
    for (Index k = 0; k < logits.size(); ++k) params_[bwd_[bwd_begin_[v] + k]] = logits[k];
}

void validate_trajectory(const StateGraph& g, const Trajectory& tau) {
    if (tau.states.empty() || tau.states.front() != g.initial())
        throw GraphError("trajectory must start at the initial state");
    for (std::size_t i = 1; i < tau.states.size(); ++i)
        if (!g.has_edge(tau.states[i - 1], tau.states[i]))
            throw GraphError("trajectory step " + std::to_string(i) + " is not an edge");
    if (!g.is_terminal(tau.states.back())) throw GraphError("trajectory must end at a terminal");
}

std::vector<double> state_log_mass(const TabularPolicy& policy) {
    const auto& g = policy.graph();
    std::vector<double> lm(g.num_states(), kNegInf), lp;
    lm[g.initial()] = 0.0;
    for (StateId u : g.topological_order()) {
        if (g.is_terminal(u) || lm[u] == kNegInf) continue;
        policy.forward_log_probs(u, lp);
        auto ch = g.children(u);
        for (std::size_t k = 0; k < ch.size(); ++k) lm[ch[k]] = log_add(lm[ch[k]], lm[u] + lp[k]);
    }
    return lm;
}

Vec exact_marginal(const TabularPolicy& policy) {
    const auto& g = policy.graph();
    if (g.num_terminals() > capacity_guard())
        throw CapacityError("exact marginal: graph exceeds the enumeration capacity");
    auto lm = state_log_mass(policy);
    Vec p(static_cast<Index>(g.num_terminals()));
    for (std::size_t i = 0; i < g.num_terminals(); ++i) p[static_cast<Index>(i)] = std::exp(lm[g.terminals()[i]]);
    return p;
}

double count_trajectories(const StateGraph& g) {
    std::vector<double> c(g.num_states(), 0.0);
    c[g.initial()] = 1.0;
    double total = 0.0;
    for (StateId u : g.topological_order()) {
        if (g.is_terminal(u)) total += c[u];
        for (StateId v : g.children(u)) c[v] += c[u];
    }
    return total;
}

std::vector<Trajectory> enumerate_trajectories(const StateGraph& g, std::size_t limit) {
    double count = count_trajectories(g);
    if (count > static_cast<double>(limit))
        throw CapacityError("graph has " + format_full(count) + " complete trajectories, above the limit of " +
                            std::to_string(limit));
    std::vector<Trajectory> out;
    out.reserve(static_cast<std::size_t>(count));
    Trajectory cur{{g.initial()}};
    std::vector<std::size_t> next{0};
    while (!next.empty()) {
        StateId u = cur.states.back();
        if (g.is_terminal(u)) {
            out.push_back(cur);
            cur.states.pop_back();
            next.pop_back();
            continue;
        }
        auto ch = g.children(u);
        if (next.back() == ch.size()) {
            cur.states.pop_back();
            next.pop_back();
            continue;
        }
        cur.states.push_back(ch[next.back()++]);
        next.push_back(0);
    }
    return out;
}

double log_pf_trajectory(const TabularPolicy& policy, const Trajectory& tau) {
    double s = 0.0;
    std::vector<double> lp;
    const auto& g = policy.graph();
    for (std::size_t i = 1; i < tau.states.size(); ++i) {
        policy.forward_log_probs(tau.states[i - 1], lp);
        s += lp[g.child_slot(tau.states[i - 1], tau.states[i])];
    }
    return s;
}

double log_pb_trajectory(const TabularPolicy& policy, const Trajectory& tau) {
    double s = 0.0;
    for (std::size_t i = 1; i < tau.states.size(); ++i) s += policy.log_pb(tau.states[i], tau.states[i - 1]);
    return s;
}

Vec enumerated_marginal(const TabularPolicy& policy, const std::vector<Trajectory>& all) {
    const auto& g = policy.graph();
    Vec p = Vec::Zero(static_cast<Index>(g.num_terminals()));
    for (const auto& tau : all) p[g.terminal_index(tau.terminal())] += std::exp(log_pf_trajectory(policy, tau));
    return p;
}

Estimate importance_marginal(const TabularPolicy& policy, StateId x, int k, std::uint64_t seed) {
    if (k < 2) throw ValidationError("importance_marginal needs k >= 2");
    const auto& g = policy.graph();
    if (!g.is_terminal(x)) throw GraphError("importance_marginal: state " + std::to_string(x) + " is not terminal");
    auto rng = make_rng(seed, 0x1a7e, static_cast<std::uint64_t>(x));
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::vector<double> lb, lf;
    double mean = 0.0, m2 = 0.0;
    for (int i = 0; i < k; ++i) {
        StateId v = x;
        double lr = 0.0;
        while (v != g.initial()) {
            auto pa = g.parents(v);
            if (pa.empty()) throw GraphError("importance_marginal: backward dead-end at state " + std::to_string(v));
            policy.backward_log_probs(v, lb);
            double r = u01(rng), acc = 0.0;
            std::size_t pick = pa.size() - 1;
            for (std::size_t j = 0; j < pa.size(); ++j) {
                acc += std::exp(lb[j]);
                if (r < acc) {
                    pick = j;
                    break;
                }
            }
            StateId p = pa[pick];
            policy.forward_log_probs(p, lf);
            lr += lf[g.child_slot(p, v)] - lb[pick];
            v = p;
        }
        double w = std::exp(lr);
        double delta = w - mean;
        mean += delta / (i + 1);
        m2 += delta * (w - mean);
    }
    return {mean, std::sqrt(m2 / (k - 1) / k)};
}

FlowAssignment::FlowAssignment(GraphPtr graph, Vec edge_flow) : graph_(std::move(graph)), edge_flow_(std::move(edge_flow)) {
    if (static_cast<std::size_t>(edge_flow_.size()) != graph_->num_edges())
        throw std::invalid_argument("flow: one value per edge required");
    if ((edge_flow_.array() < 0).any() || !edge_flow_.allFinite())
        throw ValidationError("flow: edge flows must be finite and nonnegative");
}

double FlowAssignment::flow(StateId u, StateId v) const {
    int k = graph_->child_slot(u, v);
    if (k < 0) throw GraphError("no edge " + std::to_string(u) + " -> " + std::to_string(v));
    return edge_flow_[static_cast<Index>(graph_->edge_offset(u)) + k];
}

double FlowAssignment::state_flow(StateId u) const {
    auto off = static_cast<Index>(graph_->edge_offset(u));
    return edge_flow_.segment(off, static_cast<Index>(graph_->children(u).size())).sum();
}

double FlowAssignment::in_flow(StateId v) const {
    double s = 0.0;
    for (StateId p : graph_->parents(v)) s += flow(p, v);
    return s;
}

FlowAssignment flow_from_policy(const TabularPolicy& policy, const TargetDistribution& target) {
    const auto& g = policy.graph();
    Vec ef = Vec::Zero(static_cast<Index>(g.num_edges()));
    std::vector<double> node(g.num_states(), 0.0), lb;
    const auto& topo = g.topological_order();
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        StateId v = *it;
        if (g.is_terminal(v)) {
            node[v] = target.reward(g.terminal_index(v));
        } else {
            auto off = static_cast<Index>(g.edge_offset(v));
            node[v] = ef.segment(off, static_cast<Index>(g.children(v).size())).sum();
        }
        auto pa = g.parents(v);
        if (pa.empty()) continue;
        policy.backward_log_probs(v, lb);
        for (std::size_t k = 0; k < pa.size(); ++k)
            ef[static_cast<Index>(g.edge_offset(pa[k])) + g.child_slot(pa[k], v)] = node[v] * std::exp(lb[k]);
    }
    return FlowAssignment(policy.graph_ptr(), ef);
}

TabularPolicy policy_from_flow(const FlowAssignment& flow, BackwardMode mode) {
    const auto& g = flow.graph();
    TabularPolicy policy(flow.graph_ptr(), mode);
    for (StateId u = 0; u < static_cast<StateId>(g.num_states()); ++u) {
        if (g.is_terminal(u)) continue;
        auto ch = g.children(u);
        Vec logits(static_cast<Index>(ch.size()));
        double total = flow.state_flow(u);
        if (!(total > 0.0)) throw ValidationError("policy_from_flow: state " + std::to_string(u) + " has zero out-flow");
        for (std::size_t k = 0; k < ch.size(); ++k) {
            double f = flow.flow(u, ch[k]);
            logits[static_cast<Index>(k)] = f > 0.0 ? std::log(f / total) : -kLogitClamp;
        }
        logits.array() -= logits.maxCoeff();
        policy.set_forward_logits(u, logits);
        int fi = policy.flow_index(u);
        policy.params()[fi] = std::log(total);
    }
    if (mode == BackwardMode::Learnable) {
        for (StateId v = 0; v < static_cast<StateId>(g.num_states()); ++v) {
            auto pa = g.parents(v);
            if (pa.empty()) continue;
            Vec logits(static_cast<Index>(pa.size()));
            double in = flow.in_flow(v);
            for (std::size_t k = 0; k < pa.size(); ++k) {
                double f = flow.flow(pa[k], v);
                logits[static_cast<Index>(k)] = f > 0.0 && in > 0.0 ? std::log(f / in) : -kLogitClamp;
            }
            logits.array() -= logits.maxCoeff();
            policy.set_backward_logits(v, logits);
        }
    }
    return policy;
}

double flow_imbalance(const FlowAssignment& flow, const TargetDistribution& target) {
    const auto& g = flow.graph();
    double worst = 0.0;
    for (StateId v = 0; v < static_cast<StateId>(g.num_states()); ++v) {
        if (v == g.initial()) continue;
        double in = flow.in_flow(v);
        double out = g.is_terminal(v) ? target.reward(g.terminal_index(v)) : flow.state_flow(v);
        worst = std::max(worst, std::abs(in - out));
    }
    return worst;
}

double log_state_flow(const TabularPolicy& policy, const TargetDistribution& target, StateId v) {
    const auto& g = policy.graph();
    if (g.is_terminal(v)) return target.log_reward_of_state(v);
    return policy.params()[policy.flow_index(v)];
}

double segment_log_ratio(const TabularPolicy& policy, const TargetDistribution& target, const Trajectory& tau,
                         std::size_t m, std::size_t n) {
    if (!(m < n) || n > tau.length()) throw std::out_of_range("segment indices must satisfy 0 <= m < n <= M");
    const auto& g = policy.graph();
    double r = log_state_flow(policy, target, tau.states[m]) - log_state_flow(policy, target, tau.states[n]);
    std::vector<double> lp;
    for (std::size_t i = m + 1; i <= n; ++i) {
        StateId a = tau.states[i - 1], b = tau.states[i];
        policy.forward_log_probs(a, lp);
        r += lp[g.child_slot(a, b)] - policy.log_pb(b, a);
    }
    return r;
}

double segment_residual(const TabularPolicy& policy, const TargetDistribution& target, const Trajectory& tau,
                        std::size_t m, std::size_t n) {
    double r = segment_log_ratio(policy, target, tau, m, n);
    return r * r;
}

std::string distribution_csv(const StateGraph& g, const Vec& p_model, const Vec& p_target) {
    if (static_cast<std::size_t>(p_model.size()) != g.num_terminals() || p_target.size() != p_model.size())
        throw std::invalid_argument("distribution_csv: length mismatch");
    std::ostringstream out;
    out << "terminal_id,p_model,p_target,abs_diff\n";
    for (std::size_t i = 0; i < g.num_terminals(); ++i) {
        auto k = static_cast<Index>(i);
        out << g.terminals()[i] << ',' << format_full(p_model[k]) << ',' << format_full(p_target[k]) << ','
            << format_full(std::abs(p_model[k] - p_target[k])) << '\n';
    }
    return out.str();
}

std::string policy_to_json(const TabularPolicy& policy, const std::string& graph_spec) {
    const auto& g = policy.graph();
    json doc;
    if (!graph_spec.empty()) doc["graph"] = graph_spec;
    doc["backward"] = policy.backward_mode() == BackwardMode::Uniform ? "uniform" : "learnable";
    doc["log_Z"] = policy.log_z();
    json fwd = json::object(), bwd = json::object(), flows = json::object();
    for (StateId u = 0; u < static_cast<StateId>(g.num_states()); ++u) {
        auto ch = g.children(u);
        if (!ch.empty()) {
            json row = json::array();
            for (std::size_t k = 0; k < ch.size(); ++k) row.push_back(policy.params()[policy.forward_index(u, static_cast<int>(k))]);
            fwd[std::to_string(u)] = std::move(row);
            if (u != g.initial()) flows[std::to_string(u)] = policy.params()[policy.flow_index(u)];
        }
        if (policy.backward_mode() == BackwardMode::Learnable && !g.parents(u).empty()) {
            json row = json::array();
            for (std::size_t k = 0; k < g.parents(u).size(); ++k)
                row.push_back(policy.params()[policy.backward_index(u, static_cast<int>(k))]);
            bwd[std::to_string(u)] = std::move(row);
        }
    }
    doc["forward"] = std::move(fwd);
    doc["log_flow"] = std::move(flows);
    if (policy.backward_mode() == BackwardMode::Learnable) doc["backward_logits"] = std::move(bwd);
    return doc.dump(1) + "\n";
}

namespace {

json parse_snapshot(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("policy snapshot: ") + e.what());
    }
}

}  // namespace

std::string policy_json_graph_spec(const std::string& text) {
    auto doc = parse_snapshot(text);
    return doc.contains("graph") && doc["graph"].is_string() ? doc["graph"].get<std::string>() : "";
}

TabularPolicy policy_from_json(GraphPtr graph, const std::string& text) {
    auto doc = parse_snapshot(text);
    for (const auto& [k, v] : doc.items())
        if (k != "graph" && k != "backward" && k != "log_Z" && k != "forward" && k != "log_flow" && k != "backward_logits")
            throw ParseError("policy snapshot: unknown key '" + k + "'");
    auto mode = doc.value("backward", std::string("uniform")) == "learnable" ? BackwardMode::Learnable : BackwardMode::Uniform;
    TabularPolicy policy(graph, mode);
    const auto& g = *graph;
    try {
        policy.set_log_z(doc.at("log_Z").get<double>());
        for (const auto& [key, row] : doc.at("forward").items()) {
            StateId u = std::stoi(key);
            Vec logits(static_cast<Index>(row.size()));
            for (std::size_t k = 0; k < row.size(); ++k) logits[static_cast<Index>(k)] = row[k].get<double>();
            policy.set_forward_logits(u, logits);
        }
        if (doc.contains("log_flow"))
            for (const auto& [key, v] : doc["log_flow"].items()) {
                StateId u = std::stoi(key);
                if (g.is_terminal(u) || u == g.initial()) throw ParseError("policy snapshot: log_flow for state " + key);
                policy.params()[policy.flow_index(u)] = v.get<double>();
            }
        if (mode == BackwardMode::Learnable && doc.contains("backward_logits"))
            for (const auto& [key, row] : doc["backward_logits"].items()) {
                Vec logits(static_cast<Index>(row.size()));
                for (std::size_t k = 0; k < row.size(); ++k) logits[static_cast<Index>(k)] = row[k].get<double>();
                policy.set_backward_logits(std::stoi(key), logits);
            }
    } catch (const json::exception& e) {
        throw ParseError(std::string("policy snapshot: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ParseError(std::string("policy snapshot: ") + e.what());
    }
    return policy;
}

}  // namespace gfn

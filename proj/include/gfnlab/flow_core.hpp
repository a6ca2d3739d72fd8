#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "gfnlab/state_graph.hpp"

namespace gfn {

using Vec = Eigen::VectorXd;
using Index = Eigen::Index;

inline constexpr double kLogitClamp = 30.0;

// Unnormalized reward over the terminals of a graph, stored as log values
// indexed by terminal position (graph.terminal_index).
class TargetDistribution {
public:
    TargetDistribution(GraphPtr graph, Vec log_reward);

    static TargetDistribution uniform(GraphPtr graph);
    static TargetDistribution from_rewards(GraphPtr graph, const Vec& reward);
    // Modes get mass R/n, the rest (n - K R) / (n (n - K)).
    static TargetDistribution kmodes(GraphPtr graph, double R, const std::vector<int>& mode_indices);
    static TargetDistribution kmodes_random(GraphPtr graph, int K, double R, std::uint64_t seed);
    // log R(x) = sum_{e in x} f(e), tempered to R^{1/alpha}. f is indexed by element - 1.
    static TargetDistribution set_product(GraphPtr graph, const Vec& f, double alpha);
    static Vec set_product_values(int d, std::uint64_t seed);

    const StateGraph& graph() const { return *graph_; }
    const GraphPtr& graph_ptr() const { return graph_; }
    Index size() const { return log_reward_.size(); }

    const Vec& log_rewards() const { return log_reward_; }
    double log_reward(Index i) const { return log_reward_[i]; }
    double reward(Index i) const { return std::exp(log_reward_[i]); }
    double log_reward_of_state(StateId x) const;
    double log_partition() const { return log_z_; }
    double partition() const { return std::exp(log_z_); }
    const Vec& probabilities() const { return prob_; }

private:
    GraphPtr graph_;
    Vec log_reward_;
    double log_z_ = 0.0;
    Vec prob_;
};

// "uniform", "kmodes:K=2,R=2,seed=1" or "product:seed=3,alpha=1.0".
TargetDistribution target_from_spec(GraphPtr graph, const std::string& spec);

enum class BackwardMode { Uniform, Learnable };

// Forward logits per (state, child slot), optional backward logits per (state,
// parent slot), log state flows and log Z, all stored in one flat parameter
// vector. Slot-to-parameter maps may alias, which is how tying is expressed.
class TabularPolicy {
public:
    static constexpr Index kLogZ = 0;

    explicit TabularPolicy(GraphPtr graph, BackwardMode mode = BackwardMode::Uniform);
    // forward_slots[u][k] gives the forward parameter id (0-based, before
    // offsetting) of child slot k of u; ids must cover 0..num_forward-1.
    TabularPolicy(GraphPtr graph, const std::vector<std::vector<int>>& forward_slots, int num_forward,
                  BackwardMode mode = BackwardMode::Uniform);

    const StateGraph& graph() const { return *graph_; }
    const GraphPtr& graph_ptr() const { return graph_; }
    BackwardMode backward_mode() const { return mode_; }

    Vec& params() { return params_; }
    const Vec& params() const { return params_; }
    Index num_params() const { return params_.size(); }

    double log_z() const { return params_[kLogZ]; }
    void set_log_z(double v) { params_[kLogZ] = v; }

    int forward_index(StateId u, int slot) const { return fwd_[fwd_begin_[u] + slot]; }
    // -1 when the backward policy is fixed uniform.
    int backward_index(StateId v, int slot) const;
    // Parameter holding log F(v); log Z for the initial state, -1 for terminals.
    int flow_index(StateId v) const { return flow_[v]; }

    double logit(StateId u, int slot) const;
    // log of the forward softmax over children(u), clamped logits.
    void forward_log_probs(StateId u, std::vector<double>& out) const;
    void backward_log_probs(StateId v, std::vector<double>& out) const;
    Vec forward_probs(StateId u) const;
    double log_pf(StateId u, StateId child) const;
    double log_pb(StateId v, StateId parent) const;

    void set_forward_logits(StateId u, const Vec& logits);
    void set_backward_logits(StateId v, const Vec& logits);

    bool is_log_z_param(Index i) const { return i == kLogZ; }

private:
    void build(const std::vector<std::vector<int>>& forward_slots, int num_forward);

    GraphPtr graph_;
    BackwardMode mode_;
    Vec params_;
    std::vector<std::size_t> fwd_begin_;
    std::vector<int> fwd_;
    std::vector<std::size_t> bwd_begin_;
    std::vector<int> bwd_;
    std::vector<int> flow_;
};

struct Trajectory {
    std::vector<StateId> states;
    std::size_t length() const { return states.empty() ? 0 : states.size() - 1; }
    StateId terminal() const { return states.back(); }
};

void validate_trajectory(const StateGraph& g, const Trajectory& tau);

// Probability of each terminal under the forward policy, by mass propagation.
Vec exact_marginal(const TabularPolicy& policy);
// log mass(v) for every state (log P[trajectory visits v]).
std::vector<double> state_log_mass(const TabularPolicy& policy);

double count_trajectories(const StateGraph& g);
// Every complete trajectory; CapacityError above `limit`.
std::vector<Trajectory> enumerate_trajectories(const StateGraph& g, std::size_t limit = 100000);
Vec enumerated_marginal(const TabularPolicy& policy, const std::vector<Trajectory>& all);

double log_pf_trajectory(const TabularPolicy& policy, const Trajectory& tau);
double log_pb_trajectory(const TabularPolicy& policy, const Trajectory& tau);

struct Estimate {
    double value = 0.0;
    double std_error = 0.0;
};

// Importance estimate of p(x) from k backward-sampled trajectories.
Estimate importance_marginal(const TabularPolicy& policy, StateId x, int k, std::uint64_t seed);

class FlowAssignment {
public:
    FlowAssignment(GraphPtr graph, Vec edge_flow);
    const StateGraph& graph() const { return *graph_; }
    const GraphPtr& graph_ptr() const { return graph_; }
    const Vec& edge_flow() const { return edge_flow_; }
    Vec& edge_flow() { return edge_flow_; }
    double flow(StateId u, StateId v) const;
    // Out-flow sum F_N(u).
    double state_flow(StateId u) const;
    double in_flow(StateId v) const;
    double total() const { return state_flow(graph_->initial()); }

private:
    GraphPtr graph_;
    Vec edge_flow_;
};

// Terminal flows set to the reward and pushed to the root through the backward policy.
FlowAssignment flow_from_policy(const TabularPolicy& policy, const TargetDistribution& target);
TabularPolicy policy_from_flow(const FlowAssignment& flow, BackwardMode mode = BackwardMode::Uniform);
// max over nonterminals (except the root) of |in - out|, and over terminals of |in - reward|.
double flow_imbalance(const FlowAssignment& flow, const TargetDistribution& target);

double log_state_flow(const TabularPolicy& policy, const TargetDistribution& target, StateId v);
// log of F(s_m) prod p_F / (F(s_n) prod p_B) over steps m..n of tau.
double segment_log_ratio(const TabularPolicy& policy, const TargetDistribution& target, const Trajectory& tau,
                         std::size_t m, std::size_t n);
double segment_residual(const TabularPolicy& policy, const TargetDistribution& target, const Trajectory& tau,
                        std::size_t m, std::size_t n);

template <typename A, typename B>
double total_variation(const Eigen::MatrixBase<A>& p, const Eigen::MatrixBase<B>& q) {
    if (p.size() != q.size()) throw std::invalid_argument("total_variation: length mismatch");
    return 0.5 * (p - q).cwiseAbs().sum();
}

template <typename A, typename B, typename W>
double delta_ls(const Eigen::MatrixBase<A>& p, const Eigen::MatrixBase<B>& q, const Eigen::MatrixBase<W>& xi) {
    if (p.size() != q.size() || p.size() != xi.size()) throw std::invalid_argument("delta_ls: length mismatch");
    if ((p.array() <= 0).any() || (q.array() <= 0).any())
        throw std::domain_error("delta_ls: entries must be strictly positive");
    return std::sqrt((xi.array() * (p.array().log() - q.array().log()).square()).sum());
}

// Same, from log probabilities.
template <typename A, typename B, typename W>
double delta_ls_log(const Eigen::MatrixBase<A>& log_p, const Eigen::MatrixBase<B>& log_q,
                    const Eigen::MatrixBase<W>& xi) {
    return std::sqrt((xi.array() * (log_p - log_q).array().square()).sum());
}

std::string distribution_csv(const StateGraph& g, const Vec& p_model, const Vec& p_target);

std::string policy_to_json(const TabularPolicy& policy, const std::string& graph_spec = "");
// Restores parameters into a freshly built policy over `graph`. Tied layouts are not serialized.
TabularPolicy policy_from_json(GraphPtr graph, const std::string& text);
// Graph spec recorded in a snapshot, empty if absent.
std::string policy_json_graph_spec(const std::string& text);

}  // namespace gfn

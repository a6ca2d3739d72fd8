#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "gfnlab/flow_core.hpp"

namespace gfn {

struct LossTB {};
struct LossDB {};
struct LossSubTB {
    double lambda = 0.9;
};
enum class TD3Direction { Upstream, Downstream };
// Which endpoint of transition (s_{i-1}, s_i) carries its weight.
enum class TD3Anchor { Source, Target };
struct LossTD3 {
    double beta0 = 1.0;
    int anneal_epochs = 2000;
    TD3Direction direction = TD3Direction::Upstream;
    TD3Anchor anchor = TD3Anchor::Source;
};
// On-policy reverse KL to the target with the leave-one-out baseline; the batch is the k samples.
struct LossKL {};
using LossKind = std::variant<LossTB, LossDB, LossSubTB, LossTD3, LossKL>;

std::string loss_name(const LossKind& kind);
// "tb", "db", "subtb:lambda=0.9", "td3:beta0=1,anneal=2000,dir=upstream,anchor=source", "kl"
LossKind loss_from_spec(const std::string& spec);

double td3_beta(const LossTD3& loss, int epoch);
// γ(s)^β(epoch) with γ(s) = (T - d(s))^2 upstream or d(s)^2 downstream.
double td3_state_weight(const LossTD3& loss, const StateGraph& g, StateId s, int epoch);

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    int epochs = 1000;
    int batch = 16;
    double lr = 1e-3;
    double lr_log_z = 1e-1;
    double eta = 0.0;
    std::uint64_t seed = 0;
    // Trace every `eval_every` epochs (0: first and last only).
    int eval_every = 0;
    int fcs_subset = 4;
    int fcs_samples = 50;
    int threads = 1;
};

void validate(const TrainConfig& config);

// Child drawn from (1 - η) softmax + η uniform at every step.
Trajectory sample_trajectory(const TabularPolicy& policy, double eta, std::mt19937_64& rng);
// Trajectories for one epoch; trajectory i uses substream (seed, epoch, i).
std::vector<Trajectory> sample_batch(const TabularPolicy& policy, double eta, int batch, std::uint64_t seed,
                                     int epoch, int threads = 1);

// Log flows and log-probabilities of one trajectory with their parameter indices.
class TrajectoryEval {
public:
    TrajectoryEval(const TabularPolicy& policy, const TargetDistribution& target, const Trajectory& tau);

    std::size_t length() const { return steps_.size(); }
    double residual(std::size_t m, std::size_t n) const;
    double log_pf() const;
    double log_pb() const;
    // grad += coef * d/dθ of the named quantity
    void add_step_grad(std::size_t i, double coef, Vec& grad) const;
    void add_forward_grad(std::size_t i, double coef, Vec& grad) const;
    void add_node_grad(std::size_t j, double coef, Vec& grad) const;
    void add_residual_grad(std::size_t m, std::size_t n, double coef, Vec& grad) const;
    const Trajectory& trajectory() const { return *tau_; }

private:
    struct Step {
        StateId from, to;
        int slot, parent_slot;
        double lpf, lpb;
        std::vector<double> pf, pb;
    };
    const TabularPolicy* policy_;
    const Trajectory* tau_;
    std::vector<Step> steps_;
    std::vector<double> node_log_flow_;
    std::vector<int> node_param_;
    std::vector<double> prefix_;
};

// Weighted squared residual terms (w, m, n) that make up the loss of one trajectory.
struct ResidualTerm {
    double weight;
    std::size_t m, n;
};
std::vector<ResidualTerm> residual_terms(const LossKind& kind, const StateGraph& g, const Trajectory& tau, int epoch);

struct LossGrad {
    double loss = 0.0;
    Vec grad;
};

// Mean loss over the batch and its exact gradient.
LossGrad loss_and_gradient(const TabularPolicy& policy, const TargetDistribution& target,
                           const std::vector<Trajectory>& batch, const LossKind& kind, int epoch);

// γ(τ) = log p_F(τ) - reference(τ).
struct Reference {
    std::function<double(const Trajectory&)> log_weight;
    // grad += coef * ∇ log_weight(τ); empty when the reference has no trainable parameters.
    std::function<void(const Trajectory&, double, Vec&)> add_grad;
};
// Leave-one-out estimate of ∇ E[γ]; loss is the sample mean of γ. Needs >= 2 samples.
LossGrad rloo_gradient(const TabularPolicy& policy, const std::vector<Trajectory>& batch, const Reference& ref);
// Plain score-function estimate without the baseline.
LossGrad score_gradient(const TabularPolicy& policy, const std::vector<Trajectory>& batch, const Reference& ref);
// reference(τ) = log p_B(τ|x) + log π̃(x); `policy` must outlive the result.
Reference target_reference(const TabularPolicy& policy, const TargetDistribution& target);
// Σ_τ p_F(τ) (∇γ + γ ∇ log p_F(τ)) over every trajectory; loss is E[γ].
LossGrad exact_kl_gradient(const TabularPolicy& policy, const std::vector<Trajectory>& all, const Reference& ref);
// grad += coef * ∇ log p_F(τ)
void add_log_pf_grad(const TabularPolicy& policy, const Trajectory& tau, double coef, Vec& grad);
void add_log_pb_grad(const TabularPolicy& policy, const Trajectory& tau, double coef, Vec& grad);

class Adam {
public:
    Adam(Index n, double lr, double lr_log_z, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    void step(Vec& params, const Vec& grad);

private:
    double lr_, lr_log_z_, b1_, b2_, eps_;
    Vec m_, v_;
    long t_ = 0;
};

// log F(v) from the reward spread uniformly over terminals and pushed up with uniform p_B.
void initialize_log_flows(TabularPolicy& policy, const TargetDistribution& target);

struct TraceRow {
    int epoch = 0;
    double loss = 0.0;
    double tv = 0.0;
    double fcs_mean = 0.0;
};

struct TrainResult {
    TabularPolicy policy;
    std::vector<TraceRow> trace;
};

using BatchObjective =
    std::function<LossGrad(const TabularPolicy&, const std::vector<Trajectory>&, int epoch)>;
// Picks the η used for sampling; on-policy objectives force 0.
struct OptimizeSpec {
    BatchObjective objective;
    double eta = 0.0;
    // Called at trace points: (policy) -> (tv, fcs_mean); NaN when not available.
    std::function<std::pair<double, double>(const TabularPolicy&)> evaluate;
};

TrainResult optimize(TabularPolicy policy, const OptimizeSpec& spec, const TrainConfig& config);

// Trains from zero logits (or `init`) with exact TV and FCS in the trace when enumerable.
TrainResult train(const TargetDistribution& target, const LossKind& kind, const TrainConfig& config,
                  std::optional<TabularPolicy> init = std::nullopt);

std::string trace_csv(const std::vector<TraceRow>& trace);

// Full-batch least squares over enumerated residuals (Levenberg-Marquardt).
// One row of the stacked residual vector and its sparse gradient; duplicate indices add.
struct ResidualRow {
    double value = 0.0;
    std::vector<std::pair<Index, double>> grad;
};
using ResidualFunction = std::function<void(const TabularPolicy&, std::vector<ResidualRow>&)>;
struct FitResult {
    double loss = 0.0;
    double max_abs_residual = 0.0;
    int iterations = 0;
    bool converged = false;
};
FitResult fit_least_squares(TabularPolicy& policy, const ResidualFunction& residuals, int max_iter = 200,
                            double tol = 1e-13);
// Rows sqrt(w) r for `kind` over the given trajectories; loss sum of squares equals the summed trajectory losses.
ResidualFunction enumerated_residuals(const TargetDistribution& target, const LossKind& kind,
                                      const std::vector<Trajectory>& trajectories);

}  // namespace gfn

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "gfnlab/flow_core.hpp"

namespace gfn {

struct SplitEqual {};
// Shares follow the balanced downstream flow from the imbalanced edge.
struct SplitPropagated {};
struct SplitConcentrated {
    StateId leaf = -1;
};
struct SplitDirichlet {
    Vec alpha;  // one entry per descendant terminal, or a single symmetric value
    std::uint64_t seed = 0;
};
using SplitRule = std::variant<SplitEqual, SplitPropagated, SplitConcentrated, SplitDirichlet>;

struct ImbalanceSpec {
    Edge edge{0, 0};
    double delta = 0.0;
    SplitRule split = SplitEqual{};
};

struct Interval {
    double lower = 0.0;
    double upper = 0.0;
};

struct DagBounds {
    double lower = 0.0;
    double upper = 0.0;
    // δ(n-1)/(2n(F+δ)), a tighter form that does not hold in general; reported only.
    double short_upper = 0.0;
};

struct BoundReport {
    std::string bound_name;
    double exact_tv = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    bool contained = false;
    std::map<std::string, double> parameters;
};

inline constexpr double kBoundTol = 1e-9;

BoundReport make_report(std::string name, double exact, Interval bounds, std::map<std::string, double> params = {});

// Fractions over reachable_terminals(edge.second), summing to 1. Dirichlet
// draws use `rng` when given, else a generator seeded from the rule.
Vec split_fractions(const TargetDistribution& target, const ImbalanceSpec& spec, std::mt19937_64* rng = nullptr);

// μ_δ: (F π(x) + δ_x) / (F + δ), with δ_x nonzero only below the imbalanced edge.
Vec imbalanced_distribution(const TargetDistribution& target, const ImbalanceSpec& spec, double F);
Vec imbalanced_distribution(const TargetDistribution& target, const std::vector<StateId>& descendants,
                            const Vec& fractions, double delta, double F);

// ε(δ, x, F) = (1 - 1/x) δ / (F + δ).
double tree_epsilon(double delta, double x, double F);
Interval tree_bounds(int g, int h, double F, double delta);
DagBounds dag_bounds(int n, int d, double F, double delta);
// K >= 2 uses the K-mode closed forms. K = 1 uses the single-mode case analysis
// for the upper bound and the K-mode lower form evaluated at K = 1.
Interval kmode_bounds(int n, int K, double R, int d, int b, double F, double delta);
// Smallest and largest TV over all splits of δ among `descendants`, any target.
Interval exact_envelope(const TargetDistribution& target, const std::vector<StateId>& descendants, double F,
                        double delta);

double epsilon_to_delta(double epsilon, double backward_edge_flow);

struct MonteCarloTV {
    double mean = 0.0;
    double std_error = 0.0;
    double min_tv = 0.0;
    double max_tv = 0.0;
    std::size_t reps = 0;
    // Per-replication TVs outside dag_bounds.
    std::size_t bound_violations = 0;
};

MonteCarloTV dirichlet_expected_tv_mc(const TargetDistribution& target, Edge edge, double delta, double F,
                                      const Vec& alpha, std::size_t reps, std::uint64_t seed, int threads = 1);

struct DirichletClosedForm {
    double value = 0.0;
    double lambda = 0.0;
    std::optional<double> corollary_value;
    std::optional<double> corollary_lambda;
};

// (d(Λ - 1/n) + 1) δ / (2(F + δ)). Symmetric α only.
DirichletClosedForm dirichlet_expected_tv_closed(int n, int d, const Vec& alpha, double delta, double F);
// E[TV] for a uniform target from the Beta(α, (d-1)α) marginal of each share.
double dirichlet_expected_tv_beta_marginal(int n, int d, double alpha, double delta, double F);

double pairwise_sum(const double* x, std::size_t n);

// "equal", "propagated", "concentrated:leaf=<id>", "dirichlet:alpha=1"
SplitRule split_from_spec(const std::string& spec, std::uint64_t seed);
// "root:<k>" (k-th child of the initial state) or "<u>-<v>".
Edge edge_from_spec(const StateGraph& g, const std::string& spec);

}  // namespace gfn

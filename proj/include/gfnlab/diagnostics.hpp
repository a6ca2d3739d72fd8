#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "gfnlab/flow_core.hpp"

namespace gfn {

enum class MarginalMode { Exact, Importance };

struct FCSReport {
    int subset_size = 0;
    int samples = 0;
    std::vector<std::vector<int>> subsets;  // terminal indices of each S_i
    std::vector<double> errors;
    double mean = 0.0;
    double confidence = 0.05;
    double pac_bound = 0.0;
    MarginalMode mode = MarginalMode::Exact;
    int importance_k = 0;
    // Importance mode: mean over subsets of the propagated stderr of the conditional model probabilities.
    double estimator_std_error = 0.0;
};

double pac_bound(double mean, int m, double confidence);

// e(S) = ½ Σ_{x∈S} |p(x)/p(S) - π(x)/π(S)|
double subset_error(const Vec& p_model, const Vec& p_target, const std::vector<int>& subset);

// Uniform size-B subset of {0..n-1}, sorted.
std::vector<int> sample_subset(int n, int B, std::mt19937_64& rng);

FCSReport fcs_from_distributions(const Vec& p_model, const Vec& p_target, int B, int m, std::uint64_t seed,
                                 double confidence = 0.05);
FCSReport fcs(const TabularPolicy& policy, const TargetDistribution& target, int B, int m, std::uint64_t seed,
              MarginalMode mode = MarginalMode::Exact, int importance_k = 64, double confidence = 0.05,
              int threads = 1);

// Mean of e(S) over every size-B subset.
double fcs_exhaustive(const Vec& p_model, const Vec& p_target, int B);

struct PitfallMetrics {
    double expected_reward = 0.0;
    double correlation = 0.0;  // NaN if either log vector is constant
    double accuracy = 0.0;
};

PitfallMetrics pitfall_metrics(const Vec& p_model, const TargetDistribution& target);
PitfallMetrics pitfall_metrics(const TabularPolicy& policy, const TargetDistribution& target);

struct CoverageReport {
    int epochs = 0;
    int states_per_trajectory = 0;
    int num_states = 0;
    int trials = 0;
    std::vector<double> s;
    std::vector<double> exceedance;
    std::vector<double> bound;  // min(1, MK/(s|S|))
    std::vector<bool> vacuous;
    double mean_visited = 0.0;
};

// N_v = distinct states (s0 included) over M uniform-policy trajectories, per trial.
CoverageReport exploration_coverage(const StateGraph& g, int M, int trials, std::uint64_t seed,
                                    const std::vector<double>& s_grid, int threads = 1);
std::vector<double> default_coverage_grid();

std::string fcs_report_json(const FCSReport& r);
std::string coverage_csv(const CoverageReport& r);

}  // namespace gfn

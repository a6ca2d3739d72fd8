#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "gfnlab/training.hpp"

namespace gfn {

// Per-terminal log-likelihood log f(D_t | x) of one data chunk.
struct StreamChunk {
    int t = 1;
    Vec loglik;
};

void validate_chunk(const StateGraph& g, const StreamChunk& chunk);
// {"t": 2, "loglik": {"<terminal_id>": -1.3, ...}}; every terminal must be present.
StreamChunk chunk_from_json(const StateGraph& g, const std::string& text);
std::string chunk_to_json(const StateGraph& g, const StreamChunk& chunk);
StreamChunk load_chunk(const StateGraph& g, const std::string& path);
// Set graphs: log f(x) = scale Σ_{e∈x} u_e with fresh utilities u_e ~ U[-1,1];
// other graphs: scale · N(0,1) per terminal.
StreamChunk synthetic_chunk(const StateGraph& g, int t, std::uint64_t seed, double scale = 1.0);
// Data likelihood: terminal x has mean θ_x ~ U[-2,2] (fixed by `seed`), and the chunk holds
// `observations` draws from N(θ_{x*}, 1) for a true terminal x*; log f(x) = Σ_j log φ(y_j - θ_x).
StreamChunk gaussian_chunk(const StateGraph& g, int t, std::uint64_t seed, int observations);

// π̃_{t+1} = π̃_t · f
TargetDistribution update_posterior(const TargetDistribution& posterior, const StreamChunk& chunk);

struct UpdateSB {};
struct UpdateKL {
    int k = 8;
};
using UpdateKind = std::variant<UpdateSB, UpdateKL>;
// "sb" or "kl:k=8"
UpdateKind update_from_spec(const std::string& spec);

struct StreamState {
    TabularPolicy policy;
    int t = 0;
};

// G_0 balanced exactly for the prior: the prior pushed to the root through the uniform backward policy.
StreamState initial_state(const TargetDistribution& prior);

// log Z_{t+1} p_F^{t+1} / p_B^{t+1} - log Z_t p_F^t / p_B^t - log f(x)
double sb_residual(const TabularPolicy& next, const TabularPolicy& prev, const StreamChunk& chunk,
                   const Trajectory& tau);
// Mean squared SB residual and its gradient with respect to `next` only.
LossGrad sb_loss_and_gradient(const TabularPolicy& next, const TabularPolicy& prev, const StreamChunk& chunk,
                              const std::vector<Trajectory>& batch);
// reference(τ) = log p_F^t(τ) + log f(x); prev must outlive the result.
Reference kl_stream_reference(const TabularPolicy& prev, const StreamChunk& chunk);
LossGrad kl_stream_gradient_rloo(const TabularPolicy& next, const TabularPolicy& prev, const StreamChunk& chunk,
                                 int k, std::uint64_t seed, int epoch = 0);
// Exact KL[p_F^{t+1} || p] with p(τ) ∝ p_F^t(τ) f(x), by dynamic programming over states.
double kl_stream_exact(const TabularPolicy& next, const TabularPolicy& prev, const StreamChunk& chunk);
// The KL-optimal next policy p_F^t(c|u) h(c)/h(u), h(u) = E[f | u].
TabularPolicy kl_optimal_policy(const TabularPolicy& prev, const StreamChunk& chunk);

// Residual rows of the SB loss over the given trajectories, for fit_least_squares.
ResidualFunction sb_residuals(const TabularPolicy& prev, const StreamChunk& chunk,
                              const std::vector<Trajectory>& trajectories);

struct StreamResult {
    StreamState state;
    std::vector<TraceRow> trace;
};

// Trains G_{t+1} against a frozen copy of G_t. `exact_posterior`, when given,
// is only used for the TV column of the trace.
StreamResult stream_update(const StreamState& state, const StreamChunk& chunk, const UpdateKind& kind,
                           const TrainConfig& config, const TargetDistribution* exact_posterior = nullptr);

struct AuditRow {
    int t = 0;
    // δ_LS weighted by π_{t+1}
    double a_lhs = 0, a_estimation = 0, a_accuracy = 0, a_rhs = 0;
    bool a_holds = false;
    double aa_lhs = 0, aa_estimation = 0, aa_second = 0, aa_rhs = 0;
    bool aa_holds = false;
    // Same second term with the learned Z_{t+1} in place of Ẑ_{t+1}; informational.
    double aa_statement_second = 0;
    bool aa_statement_holds = false;
    double aaa_lhs = 0, kl = 0, aaa_estimation = 0, aaa_second = 0, aaa_rhs = 0;
    bool aaa_holds = false;
    // With the Pinsker constant sqrt(KL/2); informational.
    double aaa_pinsker_rhs = 0;
    bool aaa_pinsker_holds = false;
};

// prev = G_t, next = G_{t+1}, posterior_t = exact π̃_t (π̃_0 Π_{i<=t} f_i, so Z*_t is its partition).
AuditRow propagation_audit(const TabularPolicy& prev, const TabularPolicy& next, const TargetDistribution& posterior_t,
                           const StreamChunk& chunk, int t);
std::string audit_csv(const std::vector<AuditRow>& rows);

struct StreamRun {
    std::vector<StreamState> states;  // G_0 .. G_T
    std::vector<TargetDistribution> posteriors;  // π̃_0 .. π̃_T
    std::vector<std::vector<TraceRow>> traces;
    std::vector<AuditRow> audits;
    std::vector<double> tv;  // TV(p_T^{(t)}, π_t) for t = 1..T
};

// G_0 from the prior, then one stream_update per chunk. Round t trains with seed config.seed + 1000003 t.
StreamRun run_stream(const TargetDistribution& prior, const std::vector<StreamChunk>& chunks, const UpdateKind& kind,
                     const TrainConfig& config, bool audit = true);
std::string stream_trace_csv(const StreamRun& run);

}  // namespace gfn

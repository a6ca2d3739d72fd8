#include "gfnlab/streaming.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "gfnlab/diagnostics.hpp"
#include "gfnlab/util.hpp"

namespace gfn {

using json = nlohmann::json;

namespace {

double lse(const Vec& v) {
    double m = v.maxCoeff();
    if (!std::isfinite(m)) return m;
    return m + std::log((v.array() - m).exp().sum());
}

Vec terminal_log_marginal(const TabularPolicy& policy) {
    const auto& g = policy.graph();
    auto mass = state_log_mass(policy);
    Vec out(static_cast<Index>(g.num_terminals()));
    for (std::size_t i = 0; i < g.num_terminals(); ++i) out[static_cast<Index>(i)] = mass[g.terminals()[i]];
    return out;
}

bool is_set_graph(const StateGraph& g) { return g.label(g.initial()) == "{}"; }

void check_pair(const TabularPolicy& next, const TabularPolicy& prev, const StreamChunk& chunk) {
    if (!(next.graph() == prev.graph())) throw std::invalid_argument("streaming: policies live on different graphs");
    validate_chunk(next.graph(), chunk);
}

// log Z_t p_F^t(τ) / p_B^t(τ|x)
double balance_term(const TabularPolicy& p, const Trajectory& tau) {
    return p.log_z() + log_pf_trajectory(p, tau) - log_pb_trajectory(p, tau);
}

}  // namespace

void validate_chunk(const StateGraph& g, const StreamChunk& chunk) {
    if (static_cast<std::size_t>(chunk.loglik.size()) != g.num_terminals())
        throw ValidationError("chunk " + std::to_string(chunk.t) + ": expected " + std::to_string(g.num_terminals()) +
                              " log-likelihood values, got " + std::to_string(chunk.loglik.size()));
    for (Index i = 0; i < chunk.loglik.size(); ++i)
        if (!std::isfinite(chunk.loglik[i]))
            throw ValidationError("chunk " + std::to_string(chunk.t) + ": non-finite log-likelihood at terminal " +
                                  std::to_string(g.terminals()[static_cast<std::size_t>(i)]));
}

StreamChunk chunk_from_json(const StateGraph& g, const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("chunk: ") + e.what());
    }
    if (!doc.is_object()) throw ValidationError("chunk: top level must be an object");
    for (auto it = doc.begin(); it != doc.end(); ++it)
        if (it.key() != "t" && it.key() != "loglik") throw ValidationError("chunk: unknown key '" + it.key() + "'");
    if (!doc.contains("t") || !doc["t"].is_number_integer()) throw ValidationError("chunk: 't' must be an integer");
    if (!doc.contains("loglik") || !doc["loglik"].is_object()) throw ValidationError("chunk: 'loglik' must be an object");
    StreamChunk c;
    c.t = doc["t"].get<int>();
    c.loglik = Vec::Constant(static_cast<Index>(g.num_terminals()), std::numeric_limits<double>::quiet_NaN());
    for (auto it = doc["loglik"].begin(); it != doc["loglik"].end(); ++it) {
        StateId x;
        try {
            std::size_t pos = 0;
            x = static_cast<StateId>(std::stol(it.key(), &pos));
            if (pos != it.key().size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw ValidationError("chunk: loglik key '" + it.key() + "' is not a state id");
        }
        if (x < 0 || static_cast<std::size_t>(x) >= g.num_states() || !g.is_terminal(x))
            throw ValidationError("chunk: loglik key " + it.key() + " is not a terminal state");
        if (!it.value().is_number()) throw ValidationError("chunk: loglik." + it.key() + " must be a number");
        c.loglik[g.terminal_index(x)] = it.value().get<double>();
    }
    for (std::size_t i = 0; i < g.num_terminals(); ++i)
        if (std::isnan(c.loglik[static_cast<Index>(i)]))
            throw ValidationError("chunk: missing log-likelihood for terminal " + std::to_string(g.terminals()[i]));
    validate_chunk(g, c);
    return c;
}

std::string chunk_to_json(const StateGraph& g, const StreamChunk& chunk) {
    validate_chunk(g, chunk);
    json doc;
    doc["t"] = chunk.t;
    json ll = json::object();
    for (std::size_t i = 0; i < g.num_terminals(); ++i)
        ll[std::to_string(g.terminals()[i])] = chunk.loglik[static_cast<Index>(i)];
    doc["loglik"] = ll;
    return doc.dump(2) + "\n";
}

StreamChunk load_chunk(const StateGraph& g, const std::string& path) {
    try {
        return chunk_from_json(g, read_file(path));
    } catch (const ValidationError& e) {
        throw ValidationError(path + ": " + e.what());
    }
}

StreamChunk synthetic_chunk(const StateGraph& g, int t, std::uint64_t seed, double scale) {
    if (!std::isfinite(scale)) throw ValidationError("chunk scale must be finite");
    auto rng = make_rng(seed, 0x5c, static_cast<std::uint64_t>(t));
    StreamChunk c;
    c.t = t;
    c.loglik.resize(static_cast<Index>(g.num_terminals()));
    if (is_set_graph(g)) {
        int d = static_cast<int>(g.children(g.initial()).size());
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        std::vector<double> util(d);
        for (double& x : util) x = u(rng);
        for (std::size_t i = 0; i < g.num_terminals(); ++i) {
            double s = 0.0;
            for (int e : set_elements(g, g.terminals()[i])) s += util[e - 1];
            c.loglik[static_cast<Index>(i)] = scale * s;
        }
    } else {
        std::normal_distribution<double> n01(0.0, 1.0);
        for (Index i = 0; i < c.loglik.size(); ++i) c.loglik[i] = scale * n01(rng);
    }
    return c;
}

StreamChunk gaussian_chunk(const StateGraph& g, int t, std::uint64_t seed, int observations) {
    if (observations < 1) throw ValidationError("gaussian chunk needs at least one observation");
    auto param_rng = make_rng(seed, 0x6a);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    Vec theta(static_cast<Index>(g.num_terminals()));
    for (Index i = 0; i < theta.size(); ++i) theta[i] = u(param_rng);
    std::uniform_int_distribution<Index> pick(0, theta.size() - 1);
    Index truth = pick(param_rng);
    auto rng = make_rng(seed, 0x6b, static_cast<std::uint64_t>(t));
    std::normal_distribution<double> noise(0.0, 1.0);
    StreamChunk c;
    c.t = t;
    c.loglik = Vec::Zero(theta.size());
    const double log_norm = -0.5 * std::log(2.0 * M_PI);
    for (int j = 0; j < observations; ++j) {
        double y = theta[truth] + noise(rng);
        c.loglik.array() += log_norm - 0.5 * (y - theta.array()).square();
    }
    return c;
}

TargetDistribution update_posterior(const TargetDistribution& posterior, const StreamChunk& chunk) {
    validate_chunk(posterior.graph(), chunk);
    return TargetDistribution(posterior.graph_ptr(), posterior.log_rewards() + chunk.loglik);
}

UpdateKind update_from_spec(const std::string& text) {
    auto spec = parse_spec(text);
    if (spec.kind == "sb") {
        spec.allow_only({});
        return UpdateSB{};
    }
    if (spec.kind == "kl") {
        spec.allow_only({"k"});
        UpdateKL u;
        u.k = static_cast<int>(spec.get_int("k", 8));
        if (u.k < 2) throw ValidationError("kl update needs k >= 2");
        return u;
    }
    throw ValidationError("unknown update '" + spec.kind + "' (expected sb or kl:k=<n>)");
}

StreamState initial_state(const TargetDistribution& prior) {
    TabularPolicy uniform(prior.graph_ptr());
    return {policy_from_flow(flow_from_policy(uniform, prior)), 0};
}

double sb_residual(const TabularPolicy& next, const TabularPolicy& prev, const StreamChunk& chunk,
                   const Trajectory& tau) {
    const auto& g = next.graph();
    return balance_term(next, tau) - balance_term(prev, tau) - chunk.loglik[g.terminal_index(tau.terminal())];
}

LossGrad sb_loss_and_gradient(const TabularPolicy& next, const TabularPolicy& prev, const StreamChunk& chunk,
                              const std::vector<Trajectory>& batch) {
    if (batch.empty()) throw std::invalid_argument("sb loss: empty batch");
    check_pair(next, prev, chunk);
    LossGrad out;
    out.grad = Vec::Zero(next.num_params());
    double inv = 1.0 / static_cast<double>(batch.size());
    for (const auto& tau : batch) {
        double r = sb_residual(next, prev, chunk, tau);
        out.loss += inv * r * r;
        double c = 2.0 * inv * r;
        out.grad[TabularPolicy::kLogZ] += c;
        add_log_pf_grad(next, tau, c, out.grad);
        add_log_pb_grad(next, tau, -c, out.grad);
    }
    return out;
}

Reference kl_stream_reference(const TabularPolicy& prev, const StreamChunk& chunk) {
    Reference ref;
    ref.log_weight = [&prev, &chunk](const Trajectory& tau) {
        return log_pf_trajectory(prev, tau) + chunk.loglik[prev.graph().terminal_index(tau.terminal())];
    };
    return ref;
}

LossGrad kl_stream_gradient_rloo(const TabularPolicy& next, const TabularPolicy& prev, const StreamChunk& chunk, int k,
                                 std::uint64_t seed, int epoch) {
    if (k < 2) throw ValidationError("RLOO needs k >= 2");
    check_pair(next, prev, chunk);
    auto batch = sample_batch(next, 0.0, k, seed, epoch);
    return rloo_gradient(next, batch, kl_stream_reference(prev, chunk));
}

namespace {

// log h(u) = log E_{p_F^t}[f(D | x) | u], by a reverse sweep.
std::vector<double> log_h(const TabularPolicy& prev, const StreamChunk& chunk) {
    const auto& g = prev.graph();
    std::vector<double> logh(g.num_states(), 0.0), lp;
    const auto& topo = g.topological_order();
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        StateId u = *it;
        if (g.is_terminal(u)) {
            logh[u] = chunk.loglik[g.terminal_index(u)];
            continue;
        }
        auto kids = g.children(u);
        prev.forward_log_probs(u, lp);
        Vec v(static_cast<Index>(kids.size()));
        for (std::size_t k = 0; k < kids.size(); ++k) v[static_cast<Index>(k)] = lp[k] + logh[kids[k]];
        logh[u] = lse(v);
    }
    return logh;
}

}  // namespace

// Chain rule against the h-transformed target chain. Each local term
// q (r + expm1(-r)) is nonnegative, so small divergences do not cancel away.
double kl_stream_exact(const TabularPolicy& next, const TabularPolicy& prev, const StreamChunk& chunk) {
    check_pair(next, prev, chunk);
    const auto& g = next.graph();
    auto mass = state_log_mass(next);
    auto logh = log_h(prev, chunk);
    std::vector<double> a, b;
    double kl = 0.0;
    for (StateId u = 0; u < static_cast<StateId>(g.num_states()); ++u) {
        if (g.is_terminal(u) || !std::isfinite(mass[u])) continue;
        auto kids = g.children(u);
        next.forward_log_probs(u, a);
        prev.forward_log_probs(u, b);
        double local = 0.0;
        for (std::size_t k = 0; k < a.size(); ++k) {
            double r = a[k] - (b[k] + logh[kids[k]] - logh[u]);
            if (std::isfinite(a[k])) local += std::exp(a[k]) * (r + std::expm1(-r));
        }
        kl += std::exp(mass[u]) * local;
    }
    return kl;
}

TabularPolicy kl_optimal_policy(const TabularPolicy& prev, const StreamChunk& chunk) {
    validate_chunk(prev.graph(), chunk);
    const auto& g = prev.graph();
    auto logh = log_h(prev, chunk);
    const auto& topo = g.topological_order();
    std::vector<double> lp;
    TabularPolicy next = prev;
    for (StateId u : topo) {
        if (g.is_terminal(u)) continue;
        auto kids = g.children(u);
        prev.forward_log_probs(u, lp);
        Vec logits(static_cast<Index>(kids.size()));
        for (std::size_t k = 0; k < kids.size(); ++k) logits[static_cast<Index>(k)] = lp[k] + logh[kids[k]] - logh[u];
        logits.array() -= logits.maxCoeff();
        next.set_forward_logits(u, logits);
    }
    next.set_log_z(prev.log_z() + logh[g.initial()]);
    return next;
}

ResidualFunction sb_residuals(const TabularPolicy& prev, const StreamChunk& chunk,
                              const std::vector<Trajectory>& trajectories) {
    validate_chunk(prev.graph(), chunk);
    return [&prev, &chunk, &trajectories](const TabularPolicy& next, std::vector<ResidualRow>& rows) {
        Vec g = Vec::Zero(next.num_params());
        for (const auto& tau : trajectories) {
            ResidualRow row;
            row.value = sb_residual(next, prev, chunk, tau);
            g.setZero();
            g[TabularPolicy::kLogZ] = 1.0;
            add_log_pf_grad(next, tau, 1.0, g);
            add_log_pb_grad(next, tau, -1.0, g);
            for (Index j = 0; j < g.size(); ++j)
                if (g[j] != 0.0) row.grad.emplace_back(j, g[j]);
            rows.push_back(std::move(row));
        }
    };
}

StreamResult stream_update(const StreamState& state, const StreamChunk& chunk, const UpdateKind& kind,
                           const TrainConfig& config, const TargetDistribution* exact_posterior) {
    validate(config);
    validate_chunk(state.policy.graph(), chunk);
    // Deep copy: the reference is evaluated, never updated, during the round.
    const TabularPolicy prev = state.policy;
    TabularPolicy next = prev;
    // Warm start at G_t with log Z shifted by log E_{p_T^t}[f].
    next.set_log_z(prev.log_z() + lse(terminal_log_marginal(prev) + chunk.loglik));

    OptimizeSpec spec;
    TrainConfig cfg = config;
    if (auto* kl = std::get_if<UpdateKL>(&kind)) {
        if (kl->k < 2) throw ValidationError("kl update needs k >= 2");
        cfg.batch = kl->k;
        spec.eta = 0.0;
        auto ref = kl_stream_reference(prev, chunk);
        spec.objective = [ref](const TabularPolicy& p, const std::vector<Trajectory>& batch, int) {
            return rloo_gradient(p, batch, ref);
        };
    } else {
        spec.eta = config.eta;
        spec.objective = [&prev, &chunk](const TabularPolicy& p, const std::vector<Trajectory>& batch, int) {
            return sb_loss_and_gradient(p, prev, chunk, batch);
        };
    }
    if (exact_posterior) {
        int n = static_cast<int>(exact_posterior->size());
        int B = std::min(config.fcs_subset, n);
        spec.evaluate = [exact_posterior, B, &config](const TabularPolicy& p) {
            Vec pm = exact_marginal(p);
            double tv = total_variation(pm, exact_posterior->probabilities());
            double f = std::numeric_limits<double>::quiet_NaN();
            if (B >= 2 && config.fcs_samples > 0)
                f = fcs_from_distributions(pm, exact_posterior->probabilities(), B, config.fcs_samples, config.seed).mean;
            return std::make_pair(tv, f);
        };
    }
    auto r = optimize(std::move(next), spec, cfg);
    return {{std::move(r.policy), state.t + 1}, std::move(r.trace)};
}

AuditRow propagation_audit(const TabularPolicy& prev, const TabularPolicy& next, const TargetDistribution& posterior_t,
                           const StreamChunk& chunk, int t) {
    check_pair(next, prev, chunk);
    const Vec& f = chunk.loglik;
    Vec lpt = terminal_log_marginal(prev);
    Vec lpn = terminal_log_marginal(next);
    double log_zs_t = posterior_t.log_partition();
    Vec lpi_t = posterior_t.log_rewards().array() - log_zs_t;
    double log_ef_p = lse(lpt + f);     // log E_{p^t}[f]
    double log_ef_pi = lse(lpi_t + f);  // log E_{π_t}[f]
    Vec lpi_n = lpi_t + f;
    lpi_n.array() -= log_ef_pi;
    double log_zs_n = log_zs_t + log_ef_pi;
    Vec lphat = lpt + f;
    lphat.array() -= log_ef_p;
    double log_zhat = prev.log_z() + log_ef_p;

    Vec w = lpi_n.array().exp();
    auto dls = [&w](const Vec& a, const Vec& b) { return delta_ls_log(a, b, w); };
    auto tv = [](const Vec& a, const Vec& b) { return 0.5 * (a.array().exp() - b.array().exp()).abs().sum(); };
    auto holds = [](double lhs, double rhs) { return lhs <= rhs + 1e-12 * (1.0 + std::abs(rhs)); };

    AuditRow r;
    r.t = t;
    r.a_lhs = dls(lpn, lpi_n);
    r.a_estimation = dls(lpn, lphat) + std::abs(log_zhat - log_zs_n);
    r.a_accuracy = dls(lpt, lpi_t) + std::abs(prev.log_z() - log_zs_t);
    r.a_rhs = r.a_estimation + r.a_accuracy;
    r.a_holds = holds(r.a_lhs, r.a_rhs);

    // f(x̂) Z_t / Ẑ = 1 / E_{p^t}[f / f(x̂)], f(x̂) Z*_t / Z*_{t+1} = 1 / E_{π_t}[f / f(x̂)]
    double log_fhat = f.maxCoeff();
    Vec a = lpt.array() - (log_ef_p - log_fhat);
    Vec b = lpi_t.array() - (log_ef_pi - log_fhat);
    r.aa_lhs = tv(lpn, lpi_n);
    r.aa_estimation = tv(lpn, lphat);
    r.aa_second = 0.5 * (a.array().exp() - b.array().exp()).abs().sum();
    r.aa_rhs = r.aa_estimation + r.aa_second;
    r.aa_holds = holds(r.aa_lhs, r.aa_rhs);
    Vec a_stmt = lpt.array() + (log_fhat + prev.log_z() - next.log_z());
    r.aa_statement_second = 0.5 * (a_stmt.array().exp() - b.array().exp()).abs().sum();
    r.aa_statement_holds = holds(r.aa_lhs, r.aa_estimation + r.aa_statement_second);

    r.aaa_lhs = r.aa_lhs;
    r.kl = kl_stream_exact(next, prev, chunk);
    r.aaa_estimation = 0.5 * std::sqrt(r.kl);
    r.aaa_second = tv(lphat, lpi_n);
    r.aaa_rhs = r.aaa_estimation + r.aaa_second;
    r.aaa_holds = holds(r.aaa_lhs, r.aaa_rhs);
    r.aaa_pinsker_rhs = std::sqrt(r.kl / 2.0) + r.aaa_second;
    r.aaa_pinsker_holds = holds(r.aaa_lhs, r.aaa_pinsker_rhs);
    return r;
}

std::string audit_csv(const std::vector<AuditRow>& rows) {
    std::ostringstream os;
    os << "t,a_lhs,a_estimation,a_accuracy,a_rhs,a_holds,aa_lhs,aa_estimation,aa_second,aa_rhs,aa_holds,"
          "aa_statement_second,aa_statement_holds,aaa_lhs,kl,aaa_estimation,aaa_second,aaa_rhs,aaa_holds,"
          "aaa_pinsker_rhs,aaa_pinsker_holds\n";
    auto b = [](bool x) { return x ? "true" : "false"; };
    auto f = [](double x) { return format_full(x); };
    for (const auto& r : rows)
        os << r.t << ',' << f(r.a_lhs) << ',' << f(r.a_estimation) << ',' << f(r.a_accuracy) << ',' << f(r.a_rhs) << ','
           << b(r.a_holds) << ',' << f(r.aa_lhs) << ',' << f(r.aa_estimation) << ',' << f(r.aa_second) << ','
           << f(r.aa_rhs) << ',' << b(r.aa_holds) << ',' << f(r.aa_statement_second) << ','
           << b(r.aa_statement_holds) << ',' << f(r.aaa_lhs) << ',' << f(r.kl) << ',' << f(r.aaa_estimation) << ','
           << f(r.aaa_second) << ',' << f(r.aaa_rhs) << ',' << b(r.aaa_holds) << ',' << f(r.aaa_pinsker_rhs) << ','
           << b(r.aaa_pinsker_holds) << '\n';
    return os.str();
}

StreamRun run_stream(const TargetDistribution& prior, const std::vector<StreamChunk>& chunks, const UpdateKind& kind,
                     const TrainConfig& config, bool audit) {
    StreamRun run;
    run.states.push_back(initial_state(prior));
    run.posteriors.push_back(prior);
    for (std::size_t i = 0; i < chunks.size(); ++i) {
        TrainConfig cfg = config;
        cfg.seed = config.seed + 1000003ULL * (i + 1);
        run.posteriors.push_back(update_posterior(run.posteriors.back(), chunks[i]));
        auto r = stream_update(run.states.back(), chunks[i], kind, cfg, &run.posteriors.back());
        if (audit)
            run.audits.push_back(propagation_audit(run.states.back().policy, r.state.policy, run.posteriors[i], chunks[i],
                                                   static_cast<int>(i)));
        run.tv.push_back(total_variation(exact_marginal(r.state.policy), run.posteriors.back().probabilities()));
        run.traces.push_back(std::move(r.trace));
        run.states.push_back(std::move(r.state));
    }
    return run;
}

std::string stream_trace_csv(const StreamRun& run) {
    std::ostringstream os;
    os << "chunk,epoch,loss,tv,fcs_mean\n";
    auto f = [](double x) { return std::isnan(x) ? std::string() : format_full(x); };
    for (std::size_t c = 0; c < run.traces.size(); ++c)
        for (const auto& r : run.traces[c])
            os << c + 1 << ',' << r.epoch << ',' << f(r.loss) << ',' << f(r.tv) << ',' << f(r.fcs_mean) << '\n';
    return os.str();
}

}  // namespace gfn

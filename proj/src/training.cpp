#include "gfnlab/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <thread>

#include <Eigen/Dense>

#include "gfnlab/diagnostics.hpp"
#include "gfnlab/util.hpp"

namespace gfn {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::string td3_dir_name(TD3Direction d) { return d == TD3Direction::Upstream ? "upstream" : "downstream"; }
std::string td3_anchor_name(TD3Anchor a) { return a == TD3Anchor::Source ? "source" : "target"; }

void check_same_graph(const TabularPolicy& policy, const TargetDistribution& target) {
    if (&policy.graph() != &target.graph() && !(policy.graph() == target.graph()))
        throw std::invalid_argument("policy and target are defined on different graphs");
}

}  // namespace

std::string loss_name(const LossKind& kind) {
    return std::visit(overloaded{
                          [](const LossTB&) { return std::string("tb"); },
                          [](const LossDB&) { return std::string("db"); },
                          [](const LossSubTB& l) { return "subtb:lambda=" + format_full(l.lambda); },
                          [](const LossTD3& l) {
                              return "td3:beta0=" + format_full(l.beta0) + ",anneal=" + std::to_string(l.anneal_epochs) +
                                     ",dir=" + td3_dir_name(l.direction) + ",anchor=" + td3_anchor_name(l.anchor);
                          },
                          [](const LossKL&) { return std::string("kl"); },
                      },
                      kind);
}

LossKind loss_from_spec(const std::string& text) {
    auto spec = parse_spec(text);
    if (spec.kind == "tb" || spec.kind == "db" || spec.kind == "kl") {
        spec.allow_only({});
        if (spec.kind == "tb") return LossTB{};
        if (spec.kind == "db") return LossDB{};
        return LossKL{};
    }
    if (spec.kind == "subtb") {
        spec.allow_only({"lambda"});
        LossSubTB l;
        l.lambda = spec.get_double("lambda", 0.9);
        if (!(l.lambda > 0.0 && l.lambda <= 1.0)) throw ValidationError("subtb: lambda must lie in (0, 1]");
        return l;
    }
    if (spec.kind == "td3") {
        spec.allow_only({"beta0", "anneal", "dir", "anchor"});
        LossTD3 l;
        l.beta0 = spec.get_double("beta0", 1.0);
        l.anneal_epochs = static_cast<int>(spec.get_int("anneal", 2000));
        if (!(l.beta0 >= 0.0) || !std::isfinite(l.beta0)) throw ValidationError("td3: beta0 must be finite and >= 0");
        if (l.anneal_epochs < 0) throw ValidationError("td3: anneal must be >= 0");
        auto dir = spec.get("dir", "upstream");
        if (dir == "upstream") l.direction = TD3Direction::Upstream;
        else if (dir == "downstream") l.direction = TD3Direction::Downstream;
        else throw ValidationError("td3: dir must be upstream or downstream, got '" + dir + "'");
        auto anchor = spec.get("anchor", "source");
        if (anchor == "source") l.anchor = TD3Anchor::Source;
        else if (anchor == "target") l.anchor = TD3Anchor::Target;
        else throw ValidationError("td3: anchor must be source or target, got '" + anchor + "'");
        return l;
    }
    throw ValidationError("unknown loss '" + spec.kind + "' (expected tb, db, subtb, td3 or kl)");
}

double td3_beta(const LossTD3& loss, int epoch) {
    if (loss.anneal_epochs <= 0) return 0.0;
    return loss.beta0 * std::max(0.0, 1.0 - static_cast<double>(epoch) / loss.anneal_epochs);
}

double td3_state_weight(const LossTD3& loss, const StateGraph& g, StateId s, int epoch) {
    double d = g.geodesic_depth(s);
    double base = loss.direction == TD3Direction::Upstream ? g.max_depth() - d : d;
    return std::pow(base * base, td3_beta(loss, epoch));
}

void validate(const TrainConfig& c) {
    if (c.epochs < 0) throw ValidationError("epochs must be >= 0");
    if (c.batch < 1) throw ValidationError("batch must be >= 1");
    if (!(c.lr > 0.0) || !(c.lr_log_z > 0.0)) throw ValidationError("learning rates must be positive");
    if (!(c.eta >= 0.0 && c.eta < 1.0)) throw ValidationError("eta must lie in [0, 1)");
    if (c.eval_every < 0) throw ValidationError("eval cadence must be >= 0");
    if (c.threads < 1) throw ValidationError("threads must be >= 1");
}

Trajectory sample_trajectory(const TabularPolicy& policy, double eta, std::mt19937_64& rng) {
    if (!(eta >= 0.0 && eta < 1.0)) throw ValidationError("eta must lie in [0, 1)");
    const auto& g = policy.graph();
    Trajectory tau;
    StateId u = g.initial();
    tau.states.push_back(u);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<double> lp;
    while (!g.is_terminal(u)) {
        auto kids = g.children(u);
        policy.forward_log_probs(u, lp);
        double r = unif(rng);
        double acc = 0.0;
        std::size_t pick = kids.size() - 1;
        double uni = eta / static_cast<double>(kids.size());
        for (std::size_t k = 0; k < kids.size(); ++k) {
            acc += (1.0 - eta) * std::exp(lp[k]) + uni;
            if (r < acc) {
                pick = k;
                break;
            }
        }
        u = kids[pick];
        tau.states.push_back(u);
    }
    return tau;
}

std::vector<Trajectory> sample_batch(const TabularPolicy& policy, double eta, int batch, std::uint64_t seed, int epoch,
                                     int threads) {
    std::vector<Trajectory> out(static_cast<std::size_t>(batch));
    auto work = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            auto rng = make_rng(seed, 0x7a11 + static_cast<std::uint64_t>(epoch), i);
            out[i] = sample_trajectory(policy, eta, rng);
        }
    };
    std::size_t n = out.size();
    std::size_t t = std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), n);
    if (t <= 1) {
        work(0, n);
        return out;
    }
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < t; ++w) pool.emplace_back(work, n * w / t, n * (w + 1) / t);
    for (auto& th : pool) th.join();
    return out;
}

TrajectoryEval::TrajectoryEval(const TabularPolicy& policy, const TargetDistribution& target, const Trajectory& tau)
    : policy_(&policy), tau_(&tau) {
    const auto& g = policy.graph();
    std::size_t M = tau.length();
    steps_.resize(M);
    node_log_flow_.resize(M + 1);
    node_param_.resize(M + 1);
    prefix_.assign(M + 1, 0.0);
    for (std::size_t j = 0; j <= M; ++j) {
        StateId s = tau.states[j];
        node_param_[j] = policy.flow_index(s);
        node_log_flow_[j] = log_state_flow(policy, target, s);
    }
    std::vector<double> lp;
    for (std::size_t i = 0; i < M; ++i) {
        auto& st = steps_[i];
        st.from = tau.states[i];
        st.to = tau.states[i + 1];
        st.slot = g.child_slot(st.from, st.to);
        st.parent_slot = g.parent_slot(st.to, st.from);
        if (st.slot < 0) throw GraphError("trajectory uses a missing edge");
        policy.forward_log_probs(st.from, lp);
        st.lpf = lp[st.slot];
        st.pf.resize(lp.size());
        for (std::size_t k = 0; k < lp.size(); ++k) st.pf[k] = std::exp(lp[k]);
        policy.backward_log_probs(st.to, lp);
        st.lpb = lp[st.parent_slot];
        if (policy.backward_mode() == BackwardMode::Learnable) {
            st.pb.resize(lp.size());
            for (std::size_t k = 0; k < lp.size(); ++k) st.pb[k] = std::exp(lp[k]);
        }
        prefix_[i + 1] = prefix_[i] + st.lpf - st.lpb;
    }
}

double TrajectoryEval::residual(std::size_t m, std::size_t n) const {
    return node_log_flow_[m] - node_log_flow_[n] + prefix_[n] - prefix_[m];
}

double TrajectoryEval::log_pf() const {
    double s = 0.0;
    for (const auto& st : steps_) s += st.lpf;
    return s;
}

double TrajectoryEval::log_pb() const {
    double s = 0.0;
    for (const auto& st : steps_) s += st.lpb;
    return s;
}

void TrajectoryEval::add_forward_grad(std::size_t i, double coef, Vec& grad) const {
    const auto& st = steps_[i];
    for (std::size_t k = 0; k < st.pf.size(); ++k) {
        double d = (static_cast<int>(k) == st.slot ? 1.0 : 0.0) - st.pf[k];
        grad[policy_->forward_index(st.from, static_cast<int>(k))] += coef * d;
    }
}

void TrajectoryEval::add_step_grad(std::size_t i, double coef, Vec& grad) const {
    add_forward_grad(i, coef, grad);
    const auto& st = steps_[i];
    for (std::size_t k = 0; k < st.pb.size(); ++k) {
        double d = (static_cast<int>(k) == st.parent_slot ? 1.0 : 0.0) - st.pb[k];
        grad[policy_->backward_index(st.to, static_cast<int>(k))] -= coef * d;
    }
}

void TrajectoryEval::add_node_grad(std::size_t j, double coef, Vec& grad) const {
    if (node_param_[j] >= 0) grad[node_param_[j]] += coef;
}

void TrajectoryEval::add_residual_grad(std::size_t m, std::size_t n, double coef, Vec& grad) const {
    add_node_grad(m, coef, grad);
    add_node_grad(n, -coef, grad);
    for (std::size_t i = m; i < n; ++i) add_step_grad(i, coef, grad);
}

std::vector<ResidualTerm> residual_terms(const LossKind& kind, const StateGraph& g, const Trajectory& tau, int epoch) {
    std::size_t M = tau.length();
    std::vector<ResidualTerm> terms;
    std::visit(overloaded{
                   [&](const LossTB&) { terms.push_back({1.0, 0, M}); },
                   [&](const LossDB&) {
                       for (std::size_t i = 1; i <= M; ++i) terms.push_back({1.0, i - 1, i});
                   },
                   [&](const LossSubTB& l) {
                       double norm = 0.0;
                       for (std::size_t m = 0; m < M; ++m)
                           for (std::size_t n = m + 1; n <= M; ++n) {
                               double w = std::pow(l.lambda, static_cast<double>(n - m));
                               terms.push_back({w, m, n});
                               norm += w;
                           }
                       for (auto& t : terms) t.weight /= norm;
                   },
                   [&](const LossTD3& l) {
                       double norm = 0.0;
                       for (std::size_t i = 1; i <= M; ++i) {
                           StateId s = tau.states[l.anchor == TD3Anchor::Source ? i - 1 : i];
                           double w = td3_state_weight(l, g, s, epoch);
                           terms.push_back({w, i - 1, i});
                           norm += w;
                       }
                       if (!(norm > 0.0)) {
                           terms.clear();
                           return;
                       }
                       for (auto& t : terms) t.weight /= norm;
                   },
                   [&](const LossKL&) { throw std::invalid_argument("the KL objective has no balance residuals"); },
               },
               kind);
    return terms;
}

LossGrad loss_and_gradient(const TabularPolicy& policy, const TargetDistribution& target,
                           const std::vector<Trajectory>& batch, const LossKind& kind, int epoch) {
    if (batch.empty()) throw std::invalid_argument("loss_and_gradient: empty batch");
    check_same_graph(policy, target);
    if (std::holds_alternative<LossKL>(kind)) return rloo_gradient(policy, batch, target_reference(policy, target));
    const auto& g = policy.graph();
    LossGrad out;
    out.grad = Vec::Zero(policy.num_params());
    std::vector<double> step_coef;
    for (const auto& tau : batch) {
        TrajectoryEval ev(policy, target, tau);
        std::size_t M = ev.length();
        step_coef.assign(M + 1, 0.0);
        for (const auto& t : residual_terms(kind, g, tau, epoch)) {
            double r = ev.residual(t.m, t.n);
            out.loss += t.weight * r * r;
            double c = 2.0 * t.weight * r;
            ev.add_node_grad(t.m, c, out.grad);
            ev.add_node_grad(t.n, -c, out.grad);
            step_coef[t.m] += c;
            step_coef[t.n] -= c;
        }
        double run = 0.0;
        for (std::size_t i = 0; i < M; ++i) {
            run += step_coef[i];
            if (run != 0.0) ev.add_step_grad(i, run, out.grad);
        }
    }
    double inv = 1.0 / static_cast<double>(batch.size());
    out.loss *= inv;
    out.grad *= inv;
    return out;
}

void add_log_pf_grad(const TabularPolicy& policy, const Trajectory& tau, double coef, Vec& grad) {
    const auto& g = policy.graph();
    std::vector<double> lp;
    for (std::size_t i = 0; i + 1 < tau.states.size(); ++i) {
        StateId u = tau.states[i];
        int slot = g.child_slot(u, tau.states[i + 1]);
        policy.forward_log_probs(u, lp);
        for (std::size_t k = 0; k < lp.size(); ++k) {
            double d = (static_cast<int>(k) == slot ? 1.0 : 0.0) - std::exp(lp[k]);
            grad[policy.forward_index(u, static_cast<int>(k))] += coef * d;
        }
    }
}

void add_log_pb_grad(const TabularPolicy& policy, const Trajectory& tau, double coef, Vec& grad) {
    if (policy.backward_mode() == BackwardMode::Uniform) return;
    const auto& g = policy.graph();
    std::vector<double> lp;
    for (std::size_t i = 1; i < tau.states.size(); ++i) {
        StateId v = tau.states[i];
        int slot = g.parent_slot(v, tau.states[i - 1]);
        policy.backward_log_probs(v, lp);
        for (std::size_t k = 0; k < lp.size(); ++k) {
            double d = (static_cast<int>(k) == slot ? 1.0 : 0.0) - std::exp(lp[k]);
            grad[policy.backward_index(v, static_cast<int>(k))] += coef * d;
        }
    }
}

Reference target_reference(const TabularPolicy& policy, const TargetDistribution& target) {
    check_same_graph(policy, target);
    Reference ref;
    ref.log_weight = [&policy, &target](const Trajectory& tau) {
        return log_pb_trajectory(policy, tau) + target.log_reward_of_state(tau.terminal());
    };
    if (policy.backward_mode() == BackwardMode::Learnable)
        ref.add_grad = [&policy](const Trajectory& tau, double coef, Vec& grad) {
            add_log_pb_grad(policy, tau, coef, grad);
        };
    return ref;
}

namespace {

// (1/k) Σ ∇γ_i + (1/k) Σ (γ_i - b_i) ∇ log p_F(τ_i)
LossGrad score_family(const TabularPolicy& policy, const std::vector<Trajectory>& batch, const Reference& ref,
                      bool leave_one_out) {
    std::size_t k = batch.size();
    if (k == 0) throw std::invalid_argument("score gradient: empty batch");
    if (leave_one_out && k < 2) throw std::invalid_argument("leave-one-out baseline needs at least 2 samples");
    std::vector<double> gam(k);
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        gam[i] = log_pf_trajectory(policy, batch[i]) - ref.log_weight(batch[i]);
        total += gam[i];
    }
    LossGrad out;
    out.loss = total / static_cast<double>(k);
    out.grad = Vec::Zero(policy.num_params());
    double inv = 1.0 / static_cast<double>(k);
    for (std::size_t i = 0; i < k; ++i) {
        double baseline = leave_one_out ? (total - gam[i]) / static_cast<double>(k - 1) : 0.0;
        add_log_pf_grad(policy, batch[i], inv * (1.0 + gam[i] - baseline), out.grad);
        if (ref.add_grad) ref.add_grad(batch[i], -inv, out.grad);
    }
    return out;
}

}  // namespace

LossGrad rloo_gradient(const TabularPolicy& policy, const std::vector<Trajectory>& batch, const Reference& ref) {
    return score_family(policy, batch, ref, true);
}

LossGrad score_gradient(const TabularPolicy& policy, const std::vector<Trajectory>& batch, const Reference& ref) {
    return score_family(policy, batch, ref, false);
}

LossGrad exact_kl_gradient(const TabularPolicy& policy, const std::vector<Trajectory>& all, const Reference& ref) {
    LossGrad out;
    out.grad = Vec::Zero(policy.num_params());
    for (const auto& tau : all) {
        double lp = log_pf_trajectory(policy, tau);
        double p = std::exp(lp);
        if (p == 0.0) continue;
        double gam = lp - ref.log_weight(tau);
        out.loss += p * gam;
        add_log_pf_grad(policy, tau, p * (1.0 + gam), out.grad);
        if (ref.add_grad) ref.add_grad(tau, -p, out.grad);
    }
    return out;
}

Adam::Adam(Index n, double lr, double lr_log_z, double beta1, double beta2, double eps)
    : lr_(lr), lr_log_z_(lr_log_z), b1_(beta1), b2_(beta2), eps_(eps), m_(Vec::Zero(n)), v_(Vec::Zero(n)) {}

void Adam::step(Vec& params, const Vec& grad) {
    if (grad.size() != params.size() || grad.size() != m_.size())
        throw std::invalid_argument("Adam: parameter size mismatch");
    ++t_;
    m_ = b1_ * m_ + (1.0 - b1_) * grad;
    v_ = b2_ * v_ + (1.0 - b2_) * grad.cwiseAbs2();
    double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (Index i = 0; i < params.size(); ++i) {
        double lr = i == TabularPolicy::kLogZ ? lr_log_z_ : lr_;
        params[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
}

void initialize_log_flows(TabularPolicy& policy, const TargetDistribution&) {
    const auto& g = policy.graph();
    std::vector<double> flow(g.num_states(), 0.0);
    double leaf = 1.0 / static_cast<double>(g.num_terminals());
    auto order = g.topological_order();
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        StateId v = *it;
        if (g.is_terminal(v)) {
            flow[v] = leaf;
            continue;
        }
        double f = 0.0;
        for (StateId c : g.children(v)) f += flow[c] / static_cast<double>(g.parents(c).size());
        flow[v] = f;
    }
    for (StateId v : order) {
        int idx = policy.flow_index(v);
        if (idx >= 0 && idx != TabularPolicy::kLogZ) policy.params()[idx] = std::log(flow[v]);
    }
    policy.set_log_z(0.0);
}

TrainResult optimize(TabularPolicy policy, const OptimizeSpec& spec, const TrainConfig& config) {
    validate(config);
    Adam adam(policy.num_params(), config.lr, config.lr_log_z);
    TrainResult result{std::move(policy), {}};
    auto& pol = result.policy;
    auto record = [&](int epoch, double loss) {
        TraceRow row;
        row.epoch = epoch;
        row.loss = loss;
        row.tv = std::numeric_limits<double>::quiet_NaN();
        row.fcs_mean = std::numeric_limits<double>::quiet_NaN();
        if (spec.evaluate) std::tie(row.tv, row.fcs_mean) = spec.evaluate(pol);
        result.trace.push_back(row);
    };
    for (int e = 0; e < config.epochs; ++e) {
        auto batch = sample_batch(pol, spec.eta, config.batch, config.seed, e, config.threads);
        auto lg = spec.objective(pol, batch, e);
        if (!std::isfinite(lg.loss) || !lg.grad.allFinite())
            throw TrainingError("non-finite loss at epoch " + std::to_string(e));
        bool first = e == 0;
        bool last = e + 1 == config.epochs;
        bool cadence = config.eval_every > 0 && (e + 1) % config.eval_every == 0;
        if (first || last || cadence) {
            // The trace reports the state the batch loss was measured on.
            record(e, lg.loss);
        }
        adam.step(pol.params(), lg.grad);
    }
    return result;
}

namespace {

std::string describe(const Trajectory& tau) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < tau.states.size(); ++i) os << (i ? "," : "") << tau.states[i];
    os << "]";
    return os.str();
}

}  // namespace

TrainResult train(const TargetDistribution& target, const LossKind& kind, const TrainConfig& config,
                  std::optional<TabularPolicy> init) {
    validate(config);
    auto graph = target.graph_ptr();
    TabularPolicy policy = init ? *init : TabularPolicy(graph);
    if (!init) initialize_log_flows(policy, target);
    check_same_graph(policy, target);
    bool on_policy = std::holds_alternative<LossKL>(kind);
    if (on_policy && config.batch < 2) throw ValidationError("the KL objective needs batch >= 2");
    OptimizeSpec spec;
    spec.eta = on_policy ? 0.0 : config.eta;
    spec.objective = [&](const TabularPolicy& p, const std::vector<Trajectory>& batch, int epoch) {
        auto lg = loss_and_gradient(p, target, batch, kind, epoch);
        if (!std::isfinite(lg.loss)) {
            for (const auto& tau : batch) {
                double r = segment_log_ratio(p, target, tau, 0, tau.length());
                if (!std::isfinite(r))
                    throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ": trajectory " +
                                        describe(tau) + " has trajectory residual " + format_full(r));
            }
            throw TrainingError("non-finite loss at epoch " + std::to_string(epoch));
        }
        return lg;
    };
    int n = static_cast<int>(graph->num_terminals());
    int B = std::min(config.fcs_subset, n);
    spec.evaluate = [&, B](const TabularPolicy& p) {
        Vec pm = exact_marginal(p);
        double tv = total_variation(pm, target.probabilities());
        double fcs_mean = std::numeric_limits<double>::quiet_NaN();
        if (B >= 2 && config.fcs_samples > 0)
            fcs_mean = fcs_from_distributions(pm, target.probabilities(), B, config.fcs_samples, config.seed).mean;
        return std::make_pair(tv, fcs_mean);
    };
    return optimize(std::move(policy), spec, config);
}

std::string trace_csv(const std::vector<TraceRow>& trace) {
    std::ostringstream os;
    os << "epoch,loss,tv,fcs_mean\n";
    auto f = [](double x) { return std::isnan(x) ? std::string() : format_full(x); };
    for (const auto& r : trace) os << r.epoch << ',' << f(r.loss) << ',' << f(r.tv) << ',' << f(r.fcs_mean) << '\n';
    return os.str();
}

FitResult fit_least_squares(TabularPolicy& policy, const ResidualFunction& residuals, int max_iter, double tol) {
    using Mat = Eigen::MatrixXd;
    Index p = policy.num_params();
    std::vector<ResidualRow> rows;
    auto evaluate = [&](Vec* r, Mat* J) {
        rows.clear();
        residuals(policy, rows);
        Index n = static_cast<Index>(rows.size());
        if (r) {
            r->resize(n);
            for (Index i = 0; i < n; ++i) (*r)[i] = rows[static_cast<std::size_t>(i)].value;
        }
        if (J) {
            *J = Mat::Zero(n, p);
            for (Index i = 0; i < n; ++i)
                for (auto [j, d] : rows[static_cast<std::size_t>(i)].grad) (*J)(i, j) += d;
        }
    };
    FitResult out;
    Vec r;
    Mat J;
    evaluate(&r, &J);
    double cost = r.squaredNorm();
    double mu = 1e-3;
    double nu = 2.0;
    for (int it = 0; it < max_iter; ++it) {
        out.iterations = it;
        if (r.size() == 0 || r.cwiseAbs().maxCoeff() < tol) {
            out.converged = true;
            break;
        }
        Mat A = J.transpose() * J;
        Vec gvec = J.transpose() * r;
        double scale = A.diagonal().maxCoeff();
        Vec saved = policy.params();
        bool accepted = false;
        for (int tries = 0; tries < 60 && !accepted; ++tries) {
            Mat Ad = A;
            Ad.diagonal().array() += mu * std::max(scale, 1e-12);
            Vec step = Ad.ldlt().solve(-gvec);
            policy.params() = saved + step;
            Vec rn;
            evaluate(&rn, nullptr);
            double nc = rn.squaredNorm();
            double predicted = -(step.dot(gvec) + 0.5 * step.dot(A * step));
            if (std::isfinite(nc) && nc < cost) {
                double rho = predicted > 0 ? (cost - nc) / predicted : 1.0;
                mu *= std::max(1.0 / 3.0, 1.0 - std::pow(2.0 * rho - 1.0, 3));
                nu = 2.0;
                accepted = true;
                cost = nc;
            } else {
                policy.params() = saved;
                mu *= nu;
                nu *= 2.0;
            }
        }
        if (!accepted) break;
        evaluate(&r, &J);
        mu = std::max(mu, 1e-15);
    }
    evaluate(&r, nullptr);
    out.loss = r.squaredNorm();
    out.max_abs_residual = r.size() ? r.cwiseAbs().maxCoeff() : 0.0;
    out.converged = out.max_abs_residual < tol;
    return out;
}

ResidualFunction enumerated_residuals(const TargetDistribution& target, const LossKind& kind,
                                      const std::vector<Trajectory>& trajectories) {
    if (std::holds_alternative<LossKL>(kind)) throw std::invalid_argument("the KL objective has no balance residuals");
    return [&target, kind, &trajectories](const TabularPolicy& policy, std::vector<ResidualRow>& rows) {
        Index p = policy.num_params();
        for (const auto& tau : trajectories) {
            TrajectoryEval ev(policy, target, tau);
            for (const auto& t : residual_terms(kind, policy.graph(), tau, 0)) {
                double s = std::sqrt(t.weight);
                ResidualRow row;
                row.value = s * ev.residual(t.m, t.n);
                // Sparse gradient through a dense scratch vector restricted to touched entries.
                Vec g = Vec::Zero(p);
                ev.add_residual_grad(t.m, t.n, s, g);
                for (Index j = 0; j < p; ++j)
                    if (g[j] != 0.0) row.grad.emplace_back(j, g[j]);
                rows.push_back(std::move(row));
            }
        }
    };
}

}  // namespace gfn

#include "gfnlab/sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "gfnlab/special_functions.hpp"
#include "gfnlab/util.hpp"

namespace gfn {

namespace {

void check_flow_args(double F, double delta) {
    if (!(F > 0.0) || !std::isfinite(F)) throw ValidationError("total flow F must be positive");
    if (!(delta >= 0.0) || !std::isfinite(delta)) throw ValidationError("imbalance delta must be nonnegative");
}

Vec expand_alpha(const Vec& alpha, std::size_t d) {
    if (alpha.size() == 1) return Vec::Constant(static_cast<Index>(d), alpha[0]);
    if (static_cast<std::size_t>(alpha.size()) != d)
        throw ValidationError("Dirichlet alpha has " + std::to_string(alpha.size()) + " entries for " +
                              std::to_string(d) + " descendant terminals");
    return alpha;
}

Vec draw_dirichlet(const Vec& alpha, std::mt19937_64& rng) {
    Vec w(alpha.size());
    for (Index i = 0; i < alpha.size(); ++i) {
        std::gamma_distribution<double> gam(alpha[i], 1.0);
        w[i] = gam(rng);
    }
    double s = w.sum();
    if (!(s > 0.0)) {
        // every draw underflowed; fall back to the largest concentration
        Index k = 0;
        alpha.maxCoeff(&k);
        w.setZero();
        w[k] = 1.0;
        return w;
    }
    return w / s;
}

Vec propagated_fractions(const TargetDistribution& target, StateId v, const std::vector<StateId>& desc) {
    const auto& g = target.graph();
    TabularPolicy uniform_back(target.graph_ptr());
    auto balanced = policy_from_flow(flow_from_policy(uniform_back, target));
    std::vector<double> mass(g.num_states(), 0.0);
    mass[v] = 1.0;
    for (StateId u : g.topological_order()) {
        if (mass[u] == 0.0 || g.is_terminal(u)) continue;
        Vec p = balanced.forward_probs(u);
        auto ch = g.children(u);
        for (std::size_t k = 0; k < ch.size(); ++k) mass[ch[k]] += mass[u] * p[static_cast<Index>(k)];
    }
    Vec w(static_cast<Index>(desc.size()));
    for (std::size_t i = 0; i < desc.size(); ++i) w[static_cast<Index>(i)] = mass[desc[i]];
    return w / w.sum();
}

}  // namespace

BoundReport make_report(std::string name, double exact, Interval b, std::map<std::string, double> params) {
    BoundReport r;
    r.bound_name = std::move(name);
    r.exact_tv = exact;
    r.lower = b.lower;
    r.upper = b.upper;
    r.contained = b.lower - kBoundTol <= exact && exact <= b.upper + kBoundTol;
    r.parameters = std::move(params);
    return r;
}

Vec split_fractions(const TargetDistribution& target, const ImbalanceSpec& spec, std::mt19937_64* rng) {
    const auto& g = target.graph();
    if (!g.has_edge(spec.edge.first, spec.edge.second))
        throw ValidationError("imbalanced edge (" + std::to_string(spec.edge.first) + "," +
                              std::to_string(spec.edge.second) + ") is not in the graph");
    auto desc = g.reachable_terminals(spec.edge.second);
    const auto d = desc.size();
    return std::visit(
        [&](const auto& rule) -> Vec {
            using T = std::decay_t<decltype(rule)>;
            if constexpr (std::is_same_v<T, SplitEqual>) {
                return Vec::Constant(static_cast<Index>(d), 1.0 / static_cast<double>(d));
            } else if constexpr (std::is_same_v<T, SplitPropagated>) {
                return propagated_fractions(target, spec.edge.second, desc);
            } else if constexpr (std::is_same_v<T, SplitConcentrated>) {
                StateId leaf = rule.leaf < 0 ? desc.front() : rule.leaf;
                auto it = std::find(desc.begin(), desc.end(), leaf);
                if (it == desc.end())
                    throw ValidationError("concentrated split: leaf " + std::to_string(leaf) +
                                          " does not descend from the imbalanced edge");
                Vec w = Vec::Zero(static_cast<Index>(d));
                w[it - desc.begin()] = 1.0;
                return w;
            } else {
                Vec alpha = expand_alpha(rule.alpha, d);
                if ((alpha.array() <= 0).any() || !alpha.allFinite())
                    throw ValidationError("Dirichlet concentration must be positive");
                if (rng) return draw_dirichlet(alpha, *rng);
                auto local = make_rng(rule.seed, 0xd1c4);
                return draw_dirichlet(alpha, local);
            }
        },
        spec.split);
}

Vec imbalanced_distribution(const TargetDistribution& target, const std::vector<StateId>& desc, const Vec& w,
                            double delta, double F) {
    check_flow_args(F, delta);
    const auto& g = target.graph();
    Vec mu = F * target.probabilities();
    for (std::size_t i = 0; i < desc.size(); ++i) mu[g.terminal_index(desc[i])] += delta * w[static_cast<Index>(i)];
    return mu / (F + delta);
}

Vec imbalanced_distribution(const TargetDistribution& target, const ImbalanceSpec& spec, double F) {
    check_flow_args(F, spec.delta);
    Vec w = split_fractions(target, spec);
    return imbalanced_distribution(target, target.graph().reachable_terminals(spec.edge.second), w, spec.delta, F);
}

double tree_epsilon(double delta, double x, double F) { return (1.0 - 1.0 / x) * delta / (F + delta); }

Interval tree_bounds(int g, int h, double F, double delta) {
    if (g < 2 || h < 1) throw ValidationError("tree bounds need g >= 2, h >= 1");
    check_flow_args(F, delta);
    return {tree_epsilon(delta, g, F), tree_epsilon(delta, std::pow(static_cast<double>(g), h), F)};
}

DagBounds dag_bounds(int n, int d, double F, double delta) {
    if (n < 2 || d < 1 || d > n - 1)
        throw ValidationError("DAG bounds need 1 <= d <= n-1 (n=" + std::to_string(n) + ", d=" + std::to_string(d) + ")");
    check_flow_args(F, delta);
    const double nn = n, dd = d, den = 2.0 * nn * (F + delta);
    return {delta * (nn - dd) / den, delta * (nn + dd * nn - dd) / den, delta * (nn - 1.0) / den};
}

Interval kmode_bounds(int n, int K, double R, int d, int b, double F, double delta) {
    check_flow_args(F, delta);
    if (K < 1) throw ValidationError("kmode bounds need K >= 1");
    if (!(R > 1.0 && R < n)) throw ValidationError("kmode bounds need 1 < R < n");
    if (!(K * R < n)) throw ValidationError("kmode bounds need K R < n");
    if (d < 1 || d > n - 1) throw ValidationError("kmode bounds need 1 <= d <= n-1");
    if (b < 0 || b > std::min(K, d)) throw ValidationError("kmode bounds need 0 <= b <= min(K, d)");
    if (d - b > n - K) throw ValidationError("kmode bounds: more non-mode descendants than non-mode terminals");
    const double nn = n, kk = K, dd = d, bb = b;
    const double den = 2.0 * nn * (nn - kk) * (F + delta);
    const double lower =
        delta * (2 * nn * nn - 2 * nn * kk + 2 * dd * kk * R - 2 * dd * nn + bb * nn - R * bb * nn - R * nn + R * kk) / den;
    if (K >= 2) {
        const double upper = delta * (2 * nn * nn - kk * kk * R - 2 * nn * kk - nn * bb + bb * kk * R) / den;
        return {lower, upper};
    }
    const double fd = F + delta;
    double part_c = 0.0, part_d = 0.0;
    if (b == 1) {
        part_c = delta * (nn - dd) * (nn - R) / (nn * (nn - 1) * fd);
        part_d = R >= nn / 2 ? 2 * delta / fd : delta * (nn - 2 * R) / (nn * fd);
    } else {
        part_c = R * delta / (nn * fd) + delta * (nn - dd - 1) * (nn - R) / (nn * (nn - 1) * fd);
        part_d = (delta * (nn - 1) * nn + dd * delta * (nn - R)) / (nn * (nn - 1) * fd);
    }
    return {lower, 0.5 * (part_c + part_d)};
}

Interval exact_envelope(const TargetDistribution& target, const std::vector<StateId>& desc, double F, double delta) {
    check_flow_args(F, delta);
    if (desc.empty()) throw ValidationError("exact envelope needs at least one descendant");
    const auto& g = target.graph();
    double mass = 0.0, smallest = 1.0;
    for (StateId x : desc) {
        double p = target.probabilities()[g.terminal_index(x)];
        mass += p;
        smallest = std::min(smallest, p);
    }
    const double s = delta / (F + delta);
    return {s * std::max(0.0, 1.0 - mass), s * (1.0 - smallest)};
}

double epsilon_to_delta(double epsilon, double flow) {
    if (!(epsilon >= 0.0)) throw ValidationError("epsilon must be nonnegative");
    if (!(flow > 0.0)) throw ValidationError("backward edge flow must be positive");
    return std::expm1(std::sqrt(epsilon)) * flow;
}

double pairwise_sum(const double* x, std::size_t n) {
    if (n <= 16) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += x[i];
        return s;
    }
    std::size_t h = n / 2;
    return pairwise_sum(x, h) + pairwise_sum(x + h, n - h);
}

MonteCarloTV dirichlet_expected_tv_mc(const TargetDistribution& target, Edge edge, double delta, double F,
                                      const Vec& alpha, std::size_t reps, std::uint64_t seed, int threads) {
    check_flow_args(F, delta);
    if (reps < 100) throw ValidationError("Dirichlet Monte Carlo needs reps >= 100");
    const auto& g = target.graph();
    if (g.num_terminals() > capacity_guard()) throw CapacityError("Dirichlet Monte Carlo: graph exceeds capacity");
    if (!g.has_edge(edge.first, edge.second)) throw ValidationError("imbalanced edge is not in the graph");
    const auto desc = g.reachable_terminals(edge.second);
    const Vec a = expand_alpha(alpha, desc.size());
    if ((a.array() <= 0).any() || !a.allFinite()) throw ValidationError("Dirichlet concentration must be positive");
    const int n = static_cast<int>(g.num_terminals());
    const int d = static_cast<int>(desc.size());
    std::optional<DagBounds> bounds;
    if (d <= n - 1) bounds = dag_bounds(n, d, F, delta);

    std::vector<double> tvs(reps);
    std::vector<std::size_t> violations(std::max(1, threads), 0);
    auto work = [&](std::size_t lo, std::size_t hi, std::size_t slot) {
        for (std::size_t r = lo; r < hi; ++r) {
            auto rng = make_rng(seed, 0xd1c4, r);
            Vec w = draw_dirichlet(a, rng);
            double tv = total_variation(imbalanced_distribution(target, desc, w, delta, F), target.probabilities());
            tvs[r] = tv;
            if (bounds && (tv < bounds->lower - kBoundTol || tv > bounds->upper + kBoundTol)) ++violations[slot];
        }
    };
    const auto nt = static_cast<std::size_t>(std::max(1, threads));
    if (nt == 1) {
        work(0, reps, 0);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < nt; ++t)
            pool.emplace_back(work, reps * t / nt, reps * (t + 1) / nt, t);
        for (auto& th : pool) th.join();
    }

    MonteCarloTV out;
    out.reps = reps;
    out.min_tv = *std::min_element(tvs.begin(), tvs.end());
    out.max_tv = *std::max_element(tvs.begin(), tvs.end());
    for (auto v : violations) out.bound_violations += v;
    if (out.min_tv == out.max_tv) {
        out.mean = out.min_tv;
        return out;
    }
    out.mean = pairwise_sum(tvs.data(), reps) / static_cast<double>(reps);
    std::vector<double> sq(reps);
    for (std::size_t r = 0; r < reps; ++r) sq[r] = (tvs[r] - out.mean) * (tvs[r] - out.mean);
    double var = pairwise_sum(sq.data(), reps) / static_cast<double>(reps - 1);
    out.std_error = std::sqrt(var / static_cast<double>(reps));
    return out;
}

DirichletClosedForm dirichlet_expected_tv_closed(int n, int d, const Vec& alpha, double delta, double F) {
    check_flow_args(F, delta);
    if (n < 2 || d < 1 || d > n) throw ValidationError("closed form needs n >= 2 and 1 <= d <= n");
    if (alpha.size() == 0) throw ValidationError("closed form needs a concentration parameter");
    const double a = alpha[0];
    if ((alpha.array() != a).any())
        throw ValidationError("closed form supports symmetric Dirichlet concentrations only; got an asymmetric alpha");
    if (alpha.size() != 1 && alpha.size() != d)
        throw ValidationError("Dirichlet alpha length must be 1 or d");
    if (!(a > 0.0)) throw ValidationError("Dirichlet concentration must be positive");
    const double nn = n, dd = d, c = 1.0 / nn;
    const double abar = (dd - 1.0) * a;
    DirichletClosedForm out;
    out.lambda = 2.0 / nn * incomplete_beta(a, 2.0 * abar, c) - 2.0 * incomplete_beta(a + 1.0, 2.0 * abar + 1.0, c) +
                 1.0 - 1.0 / nn;
    const double scale = delta / (2.0 * (F + delta));
    out.value = (dd * (out.lambda - 1.0 / nn) + 1.0) * scale;
    if (a == 1.0) {
        out.corollary_lambda = (dd - 1.0) * (0.5 - 1.0 / nn + 1.0 / (nn * nn));
        out.corollary_value = (dd * (*out.corollary_lambda - 1.0 / nn) + 1.0) * scale;
    }
    return out;
}

double dirichlet_expected_tv_beta_marginal(int n, int d, double alpha, double delta, double F) {
    check_flow_args(F, delta);
    if (n < 2 || d < 1 || d > n || !(alpha > 0.0)) throw ValidationError("beta-marginal form needs n >= 2, 1 <= d <= n, alpha > 0");
    const double nn = n, dd = d, c = 1.0 / nn;
    const double rest = (dd - 1.0) * alpha;
    const double mean = 1.0 / dd;
    // E|X - c| for X ~ Beta(alpha, rest)
    const double abs_dev = 2.0 * c * incomplete_beta(alpha, rest, c) - 2.0 * mean * incomplete_beta(alpha + 1.0, rest, c) +
                           mean - c;
    return delta / (2.0 * (F + delta)) * ((nn - dd) / nn + dd * abs_dev);
}

SplitRule split_from_spec(const std::string& text, std::uint64_t seed) {
    auto spec = parse_spec(text);
    if (spec.kind == "equal") {
        spec.allow_only({});
        return SplitEqual{};
    }
    if (spec.kind == "propagated") {
        spec.allow_only({});
        return SplitPropagated{};
    }
    if (spec.kind == "concentrated") {
        spec.allow_only({"leaf"});
        return SplitConcentrated{static_cast<StateId>(spec.get_int("leaf", -1))};
    }
    if (spec.kind == "dirichlet") {
        spec.allow_only({"alpha"});
        Vec a(1);
        a[0] = spec.get_double("alpha", 1.0);
        return SplitDirichlet{a, seed};
    }
    throw ValidationError("unknown split rule '" + spec.kind + "' (expected equal, propagated, concentrated or dirichlet)");
}

Edge edge_from_spec(const StateGraph& g, const std::string& text) {
    Edge e;
    if (text.rfind("root:", 0) == 0) {
        long long k = 0;
        try {
            k = std::stoll(text.substr(5));
        } catch (const std::exception&) {
            throw ValidationError("edge spec '" + text + "': expected root:<child index>");
        }
        auto ch = g.children(g.initial());
        if (k < 0 || static_cast<std::size_t>(k) >= ch.size())
            throw ValidationError("edge spec '" + text + "': the initial state has " + std::to_string(ch.size()) + " children");
        return {g.initial(), ch[static_cast<std::size_t>(k)]};
    }
    auto dash = text.find('-');
    try {
        if (dash == std::string::npos) throw std::invalid_argument(text);
        e = {static_cast<StateId>(std::stoi(text.substr(0, dash))), static_cast<StateId>(std::stoi(text.substr(dash + 1)))};
    } catch (const std::exception&) {
        throw ValidationError("edge spec '" + text + "': expected root:<k> or <u>-<v>");
    }
    if (e.first < 0 || e.second < 0 || static_cast<std::size_t>(std::max(e.first, e.second)) >= g.num_states() ||
        !g.has_edge(e.first, e.second))
        throw ValidationError("edge spec '" + text + "': not an edge of the graph");
    return e;
}

}  // namespace gfn

#include <doctest.h>

#include <cmath>

#include "gfnlab/streaming.hpp"
#include "gfnlab/util.hpp"

using namespace gfn;

namespace {

GraphPtr tree(int g, int h) { return std::make_shared<StateGraph>(build_regular_tree(g, h)); }
GraphPtr sets(int d, int S) { return std::make_shared<StateGraph>(build_set_graph(d, S)); }

void randomize(TabularPolicy& p, std::mt19937_64& rng, double scale = 1.5) {
    std::uniform_real_distribution<double> u(-scale, scale);
    for (Index i = 0; i < p.num_params(); ++i) p.params()[i] = u(rng);
}

// KL[p_F^{t+1} || p] by summing over every trajectory.
double kl_enumerated(const TabularPolicy& next, const TabularPolicy& prev, const StreamChunk& c) {
    const auto& g = next.graph();
    auto all = enumerate_trajectories(g);
    std::vector<double> lw;
    for (const auto& tau : all) lw.push_back(log_pf_trajectory(prev, tau) + c.loglik[g.terminal_index(tau.terminal())]);
    double log_norm = log_sum_exp(lw);
    double kl = 0.0;
    for (std::size_t i = 0; i < all.size(); ++i) {
        double lq = log_pf_trajectory(next, all[i]);
        kl += std::exp(lq) * (lq - (lw[i] - log_norm));
    }
    return kl;
}

StreamChunk constant_chunk(const StateGraph& g, double v) {
    return {1, Vec::Constant(static_cast<Index>(g.num_terminals()), v)};
}

}  // namespace

TEST_CASE("chunk files round trip and reject bad input") {
    auto g = tree(2, 2);
    auto c = synthetic_chunk(*g, 2, 5);
    auto back = chunk_from_json(*g, chunk_to_json(*g, c));
    CHECK(back.t == 2);
    CHECK(back.loglik == c.loglik);
    CHECK_THROWS_AS(chunk_from_json(*g, R"({"t":1,"loglik":{"3":0,"4":0,"5":0}})"), ValidationError);
    CHECK_THROWS_AS(chunk_from_json(*g, R"({"t":1,"loglik":{"1":0,"3":0,"4":0,"5":0,"6":0}})"), ValidationError);
    CHECK_THROWS_AS(chunk_from_json(*g, R"({"t":1,"loglik":{"3":0,"4":0,"5":0,"6":0},"x":1})"), ValidationError);
    CHECK_THROWS_AS(chunk_from_json(*g, R"({"t":1,"loglik":{"3":0,"4":0,"5":0,"6":"a"}})"), ValidationError);
    CHECK_NOTHROW(chunk_from_json(*g, R"({"t":1,"loglik":{"3":0,"4":0,"5":0,"6":-1.5}})"));
    StreamChunk bad{1, Vec::Zero(4)};
    bad.loglik[2] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(validate_chunk(*g, bad), ValidationError);
    CHECK_THROWS_AS(update_from_spec("kl:k=1"), ValidationError);
    CHECK(std::get<UpdateKL>(update_from_spec("kl:k=6")).k == 6);
}

TEST_CASE("set-graph chunks are sums of element utilities") {
    auto g = sets(5, 2);
    auto c = synthetic_chunk(*g, 1, 9, 2.0);
    // f({1,2}) + f({3,4}) = f({1,3}) + f({2,4})
    auto find = [&](const std::string& label) {
        for (std::size_t i = 0; i < g->num_terminals(); ++i)
            if (g->label(g->terminals()[i]) == label) return c.loglik[static_cast<Index>(i)];
        FAIL("missing label");
        return 0.0;
    };
    CHECK(find("{1,2}") + find("{3,4}") == doctest::Approx(find("{1,3}") + find("{2,4}")));
}

TEST_CASE("initial state is balanced for its prior") {
    for (GraphPtr g : std::vector<GraphPtr>{sets(6, 3), std::make_shared<StateGraph>(build_random_dag(8, 5, 0.4, 2))}) {
        auto rng = make_rng(3);
        Vec lr(static_cast<Index>(g->num_terminals()));
        for (Index i = 0; i < lr.size(); ++i) lr[i] = std::uniform_real_distribution<double>(-1, 1)(rng);
        TargetDistribution prior(g, lr);
        auto s = initial_state(prior);
        CHECK(total_variation(exact_marginal(s.policy), prior.probabilities()) < 1e-12);
        CHECK(s.policy.log_z() == doctest::Approx(prior.log_partition()));
    }
    auto g = sets(6, 3);
    auto s = initial_state(TargetDistribution::uniform(g));
    CHECK(s.policy.log_z() == doctest::Approx(std::log(20.0)));
}

TEST_CASE("SB loss vanishes on trivial updates") {
    auto g = sets(5, 3);
    auto rng = make_rng(1);
    TabularPolicy prev(g);
    randomize(prev, rng);
    auto batch = sample_batch(prev, 0.5, 10, 2, 0);
    auto one = constant_chunk(*g, 0.0);
    CHECK(sb_loss_and_gradient(prev, prev, one, batch).loss == 0.0);
    auto c = constant_chunk(*g, -2.5);
    TabularPolicy next = prev;
    next.set_log_z(prev.log_z() - 2.5);
    CHECK(sb_loss_and_gradient(next, prev, c, batch).loss < 1e-24);
}

TEST_CASE("SB gradient matches central differences") {
    std::vector<GraphPtr> graphs = {tree(2, 2), sets(4, 2), std::make_shared<StateGraph>(build_random_dag(6, 4, 0.4, 5))};
    for (int cfg = 0; cfg < 24; ++cfg) {
        auto rng = make_rng(40 + cfg);
        auto g = graphs[cfg % graphs.size()];
        auto mode = cfg % 2 ? BackwardMode::Learnable : BackwardMode::Uniform;
        TabularPolicy prev(g, mode), next(g, mode);
        randomize(prev, rng);
        randomize(next, rng);
        auto chunk = synthetic_chunk(*g, 1, cfg);
        auto batch = sample_batch(next, 0.3, 6, cfg, 0);
        auto lg = sb_loss_and_gradient(next, prev, chunk, batch);
        auto loss = [&](const TabularPolicy& q) {
            double s = 0;
            for (const auto& tau : batch) s += std::pow(sb_residual(q, prev, chunk, tau), 2);
            return s / batch.size();
        };
        Vec fd(next.num_params());
        for (Index i = 0; i < next.num_params(); ++i) {
            TabularPolicy q = next;
            q.params()[i] += 1e-5;
            double a = loss(q);
            q.params()[i] -= 2e-5;
            fd[i] = (a - loss(q)) / 2e-5;
        }
        INFO("config ", cfg);
        CHECK((lg.grad - fd).cwiseAbs().maxCoeff() <= 1e-5 * std::max(1.0, fd.cwiseAbs().maxCoeff()));
    }
}

TEST_CASE("exact streaming KL by dynamic programming equals enumeration") {
    for (auto g : {tree(2, 3), sets(5, 3)}) {
        auto rng = make_rng(8);
        TabularPolicy prev(g), next(g);
        randomize(prev, rng);
        randomize(next, rng);
        auto c = synthetic_chunk(*g, 1, 4, 1.5);
        CHECK(kl_stream_exact(next, prev, c) == doctest::Approx(kl_enumerated(next, prev, c)).epsilon(1e-10));
        auto opt = kl_optimal_policy(prev, c);
        CHECK(kl_enumerated(opt, prev, c) < 1e-12);
        // The KL optimum is also an SB zero with the matching log Z.
        for (const auto& tau : enumerate_trajectories(*g)) CHECK(std::abs(sb_residual(opt, prev, c, tau)) < 1e-9);
        Vec expect = exact_marginal(prev).array() * c.loglik.array().exp();
        expect /= expect.sum();
        CHECK(total_variation(exact_marginal(opt), expect) < 1e-8);
    }
}

TEST_CASE("RLOO for the streaming criterion") {
    auto g = tree(2, 2);
    auto rng = make_rng(12);
    // Reference is a trained G_t, as in an update round.
    TabularPolicy prev = initial_state(TargetDistribution::uniform(g)).policy;
    TabularPolicy next(g);
    randomize(next, rng, 1.0);
    auto c = gaussian_chunk(*g, 1, 3, 10);
    auto all = enumerate_trajectories(*g);
    auto ref = kl_stream_reference(prev, c);
    auto exact = exact_kl_gradient(next, all, ref);
    Vec fd(next.num_params());
    for (Index i = 0; i < next.num_params(); ++i) {
        TabularPolicy q = next;
        q.params()[i] += 1e-5;
        double a = kl_stream_exact(q, prev, c);
        q.params()[i] -= 2e-5;
        fd[i] = (a - kl_stream_exact(q, prev, c)) / 2e-5;
    }
    CHECK((exact.grad - fd).cwiseAbs().maxCoeff() < 1e-6);

    const int reps = 20000;
    Vec sum = Vec::Zero(next.num_params()), sq = sum, ssum = sum, ssq = sum;
    for (int r = 0; r < reps; ++r) {
        auto batch = sample_batch(next, 0.0, 4, 5, r);
        Vec a = rloo_gradient(next, batch, ref).grad;
        Vec b = score_gradient(next, batch, ref).grad;
        sum += a;
        sq += a.cwiseAbs2();
        ssum += b;
        ssq += b.cwiseAbs2();
    }
    Vec mean = sum / reps;
    Vec var = sq / reps - mean.cwiseAbs2();
    Vec svar = ssq / reps - (ssum / reps).cwiseAbs2();
    Vec se = (var / (reps - 1)).cwiseSqrt();
    for (Index i = 0; i < mean.size(); ++i) CHECK(std::abs(mean[i] - exact.grad[i]) <= 4 * se[i] + 1e-12);
    CHECK(var.sum() < svar.sum());

    // At the optimum γ is constant, so the control-variate term vanishes sample by sample.
    auto opt = kl_optimal_policy(prev, c);
    auto batch = sample_batch(opt, 0.0, 6, 1, 0);
    Vec pure = Vec::Zero(opt.num_params());
    for (const auto& tau : batch) add_log_pf_grad(opt, tau, 1.0 / batch.size(), pure);
    CHECK((rloo_gradient(opt, batch, ref).grad - pure).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(exact_kl_gradient(opt, all, ref).grad.cwiseAbs().maxCoeff() < 1e-9);
    CHECK_THROWS_AS(kl_stream_gradient_rloo(opt, prev, c, 1, 0), ValidationError);
}

TEST_CASE("SB soundness: a full fit reaches the exact posterior") {
    auto g = sets(5, 3);
    auto prior = TargetDistribution::uniform(g);
    auto s0 = initial_state(prior);
    auto c = synthetic_chunk(*g, 1, 21);
    auto post = update_posterior(prior, c);
    auto all = enumerate_trajectories(*g);
    TabularPolicy next = s0.policy;
    auto fit = fit_least_squares(next, sb_residuals(s0.policy, c, all));
    CHECK(fit.max_abs_residual < 1e-10);
    CHECK(total_variation(exact_marginal(next), post.probabilities()) < 1e-4);
    CHECK(next.log_z() == doctest::Approx(post.log_partition()));
}

TEST_CASE("stream updates: unit likelihood keeps the marginal, two chunks approach the posterior") {
    auto g = sets(6, 3);
    auto prior = TargetDistribution::uniform(g);
    auto s0 = initial_state(prior);
    TrainConfig cfg;
    cfg.epochs = 300;
    cfg.seed = 2;
    auto r = stream_update(s0, constant_chunk(*g, 0.0), UpdateSB{}, cfg);
    CHECK(r.state.t == 1);
    CHECK(total_variation(exact_marginal(r.state.policy), exact_marginal(s0.policy)) < 0.02);

    cfg.lr = 1e-2;
    auto c1 = synthetic_chunk(*g, 1, 31), c2 = synthetic_chunk(*g, 2, 31);
    auto p1 = update_posterior(prior, c1), p2 = update_posterior(p1, c2);
    // KL updates carry score-function noise and get a larger budget and a looser bar.
    struct Case {
        UpdateKind kind;
        int epochs;
        double tol;
    };
    for (const auto& cs : {Case{UpdateSB{}, 1500, 0.05}, Case{UpdateKL{16}, 2000, 0.08}}) {
        cfg.epochs = cs.epochs;
        auto a = stream_update(s0, c1, cs.kind, cfg, &p1);
        auto b = stream_update(a.state, c2, cs.kind, cfg, &p2);
        CHECK(b.trace.back().tv < b.trace.front().tv);
        CHECK(total_variation(exact_marginal(b.state.policy), p2.probabilities()) < cs.tol);

        auto a2 = stream_update(s0, c2, cs.kind, cfg);
        auto b2 = stream_update(a2.state, c1, cs.kind, cfg);
        CHECK(total_variation(exact_marginal(b.state.policy), exact_marginal(b2.state.policy)) < cs.tol);
    }
}

TEST_CASE("propagation audits") {
    auto g = sets(5, 3);
    auto rng = make_rng(6);
    Vec lr(static_cast<Index>(g->num_terminals()));
    for (Index i = 0; i < lr.size(); ++i) lr[i] = std::uniform_real_distribution<double>(-1, 1)(rng);
    TargetDistribution prior(g, lr);
    auto s0 = initial_state(prior);
    auto c = synthetic_chunk(*g, 1, 2);

    SUBCASE("balanced steps give zero left-hand sides") {
        auto next = kl_optimal_policy(s0.policy, c);
        auto row = propagation_audit(s0.policy, next, prior, c, 0);
        CHECK(row.a_lhs < 1e-9);
        CHECK(row.aa_lhs < 1e-9);
        CHECK(row.kl < 1e-9);
        CHECK(row.a_holds);
        CHECK(row.aa_holds);
        CHECK(row.aaa_holds);
        CHECK(row.a_accuracy < 1e-9);
    }
    SUBCASE("random pairs satisfy Props a and aa; the Pinsker form of aaa always holds") {
        for (int i = 0; i < 30; ++i) {
            TabularPolicy prev(g), next(g);
            randomize(prev, rng, 0.5);
            randomize(next, rng, 0.5);
            auto row = propagation_audit(prev, next, prior, synthetic_chunk(*g, 1, i, 1.0 + i % 3), 0);
            CHECK(row.a_holds);
            CHECK(row.aa_holds);
            CHECK(row.aaa_pinsker_holds);
        }
    }
    SUBCASE("an undertrained G_t shows up in the accuracy terms") {
        TabularPolicy bad = s0.policy;
        randomize(bad, rng, 1.0);
        bad.set_log_z(s0.policy.log_z());
        auto next = kl_optimal_policy(bad, c);
        auto row = propagation_audit(bad, next, prior, c, 0);
        CHECK(row.aa_estimation < 1e-9);
        CHECK(row.a_accuracy > 0.1);
        CHECK(row.a_holds);
    }
}

#include <doctest.h>

#include <cmath>
#include <random>

#include "gfnlab/sensitivity.hpp"
#include "gfnlab/util.hpp"

using namespace gfn;

namespace {

GraphPtr tree(int g, int h) { return std::make_shared<const StateGraph>(build_regular_tree(g, h)); }

Vec sym(double a) { return Vec::Constant(1, a); }

}  // namespace

TEST_CASE("imbalanced distribution examples") {
    auto t = TargetDistribution::uniform(tree(2, 2));
    ImbalanceSpec eq{{0, 1}, 1.0, SplitEqual{}};
    Vec mu = imbalanced_distribution(t, eq, 1.0);
    Vec expect(4);
    expect << 0.375, 0.375, 0.125, 0.125;
    CHECK((mu - expect).cwiseAbs().maxCoeff() < 1e-15);

    ImbalanceSpec conc{{0, 1}, 1.0, SplitConcentrated{3}};
    mu = imbalanced_distribution(t, conc, 1.0);
    expect << 0.625, 0.125, 0.125, 0.125;
    CHECK((mu - expect).cwiseAbs().maxCoeff() < 1e-15);

    ImbalanceSpec none{{0, 1}, 0.0, SplitEqual{}};
    CHECK((imbalanced_distribution(t, none, 1.0) - t.probabilities()).cwiseAbs().maxCoeff() == 0.0);

    ImbalanceSpec outside{{0, 1}, 1.0, SplitConcentrated{5}};
    CHECK_THROWS_AS(imbalanced_distribution(t, outside, 1.0), ValidationError);
    ImbalanceSpec neg{{0, 1}, 1.0, SplitDirichlet{sym(-1.0), 0}};
    CHECK_THROWS_AS(imbalanced_distribution(t, neg, 1.0), ValidationError);
}

TEST_CASE("root-edge imbalance matches the perturbed flow network") {
    // Adding δ to a root edge and pushing it down with the balanced policy is
    // the propagated split; sampling that network gives μ_δ.
    auto g = tree(3, 2);
    auto t = TargetDistribution::uniform(g);
    double F = 2.0, delta = 0.7;
    auto base = flow_from_policy(TabularPolicy(g), t);
    Vec ef = base.edge_flow() * (F / base.total());
    StateId v = g->children(0)[1];
    ef[static_cast<Index>(g->edge_offset(0)) + 1] += delta;
    for (StateId c : g->children(v)) ef[static_cast<Index>(g->edge_offset(v)) + g->child_slot(v, c)] += delta / 3.0;
    auto sampled = exact_marginal(policy_from_flow(FlowAssignment(g, ef)));
    ImbalanceSpec spec{{0, v}, delta, SplitPropagated{}};
    CHECK((imbalanced_distribution(t, spec, F) - sampled).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("tree bounds") {
    auto b = tree_bounds(2, 2, 1.0, 1.0);
    CHECK(b.lower == doctest::Approx(0.25));
    CHECK(b.upper == doctest::Approx(0.375));
    auto z = tree_bounds(3, 3, 1.0, 0.0);
    CHECK(z.lower == 0.0);
    CHECK(z.upper == 0.0);
    double prev = 0.0;
    for (int h = 1; h <= 20; ++h) {
        double u = tree_bounds(2, h, 1.0, 1.0).upper;
        CHECK(u > prev);
        CHECK(u < 0.5);
        prev = u;
    }
    CHECK(prev == doctest::Approx(0.5).epsilon(1e-5));
}

TEST_CASE("tree containment on random splits") {
    auto rng = make_rng(42);
    for (int g = 2; g <= 4; ++g)
        for (int h = 1; h <= 3; ++h) {
            auto gp = tree(g, h);
            auto t = TargetDistribution::uniform(gp);
            for (double F : {0.5, 10.0})
                for (double delta : {0.1, 10.0}) {
                    auto b = tree_bounds(g, h, F, delta);
                    for (StateId v : gp->children(0)) {
                        ImbalanceSpec eq{{0, v}, delta, SplitEqual{}};
                        CHECK(std::abs(total_variation(imbalanced_distribution(t, eq, F), t.probabilities()) - b.lower) < 1e-9);
                        ImbalanceSpec conc{{0, v}, delta, SplitConcentrated{}};
                        CHECK(std::abs(total_variation(imbalanced_distribution(t, conc, F), t.probabilities()) - b.upper) < 1e-9);
                        for (int r = 0; r < 20; ++r) {
                            ImbalanceSpec dir{{0, v}, delta, SplitDirichlet{sym(0.5), 0}};
                            Vec w = split_fractions(t, dir, &rng);
                            double tv = total_variation(imbalanced_distribution(t, gp->reachable_terminals(v), w, delta, F),
                                                        t.probabilities());
                            CHECK(make_report("tree", tv, b).contained);
                        }
                    }
                }
        }
}

TEST_CASE("DAG bounds") {
    auto b = dag_bounds(4, 2, 1.0, 1.0);
    CHECK(b.lower == doctest::Approx(0.125));
    CHECK(b.upper == doctest::Approx(0.625));
    auto z = dag_bounds(10, 3, 1.0, 0.0);
    CHECK(z.lower == 0.0);
    CHECK(z.upper == 0.0);
    CHECK_THROWS_AS(dag_bounds(4, 4, 1.0, 1.0), ValidationError);
    CHECK_THROWS_AS(dag_bounds(4, 0, 1.0, 1.0), ValidationError);

    // d = n-1 equal-split case inside the interval
    auto g = tree(2, 1);
    auto t = TargetDistribution::uniform(g);
    ImbalanceSpec eq{{0, 1}, 1.0, SplitEqual{}};
    double tv = total_variation(imbalanced_distribution(t, eq, 1.0), t.probabilities());
    auto db = dag_bounds(2, 1, 1.0, 1.0);
    CHECK(make_report("dag", tv, {db.lower, db.upper}).contained);
}

TEST_CASE("exact envelope is attained") {
    auto g = std::make_shared<const StateGraph>(build_random_dag(8, 10, 0.3, 3));
    Vec r(10);
    r << 1, 2, 3, 4, 5, 6, 7, 8, 9, 10;
    auto t = TargetDistribution::from_rewards(g, r);
    for (StateId v = 1; v < static_cast<StateId>(g->num_states()); ++v) {
        StateId u = g->parents(v)[0];
        auto desc = g->reachable_terminals(v);
        auto env = exact_envelope(t, desc, 1.5, 0.8);
        // the smallest-mass descendant attains the upper end
        StateId worst = desc[0];
        for (StateId x : desc)
            if (t.probabilities()[g->terminal_index(x)] < t.probabilities()[g->terminal_index(worst)]) worst = x;
        ImbalanceSpec c{{u, v}, 0.8, SplitConcentrated{worst}};
        CHECK(std::abs(total_variation(imbalanced_distribution(t, c, 1.5), t.probabilities()) - env.upper) < 1e-12);
        // shares proportional to the target attain the lower end
        Vec w(static_cast<Index>(desc.size()));
        for (std::size_t i = 0; i < desc.size(); ++i) w[static_cast<Index>(i)] = t.probabilities()[g->terminal_index(desc[i])];
        w /= w.sum();
        CHECK(std::abs(total_variation(imbalanced_distribution(t, desc, w, 0.8, 1.5), t.probabilities()) - env.lower) < 1e-12);
    }
}

TEST_CASE("K-mode bounds") {
    auto z = kmode_bounds(8, 2, 2.0, 3, 1, 1.0, 0.0);
    CHECK(z.lower == 0.0);
    CHECK(z.upper == 0.0);
    auto b = kmode_bounds(8, 2, 2.0, 3, 1, 1.0, 0.5);
    CHECK(b.lower == doctest::Approx(0.5 * 52.0 / 144.0));
    CHECK(b.upper == doctest::Approx(0.5 * 84.0 / 144.0));
    CHECK_THROWS_AS(kmode_bounds(8, 2, 2.0, 3, 3, 1.0, 0.5), ValidationError);
    CHECK_THROWS_AS(kmode_bounds(8, 2, 5.0, 3, 1, 1.0, 0.5), ValidationError);
    CHECK_THROWS_AS(kmode_bounds(8, 2, 0.5, 3, 1, 1.0, 0.5), ValidationError);
}

TEST_CASE("epsilon parameterization") {
    CHECK(epsilon_to_delta(0.0, 1.0) == 0.0);
    CHECK(epsilon_to_delta(std::log(2.0) * std::log(2.0), 1.0) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(epsilon_to_delta(1.0, 0.5) == doctest::Approx(0.5 * (std::exp(1.0) - 1.0)));
    CHECK(epsilon_to_delta(1.0, 0.5) == doctest::Approx(0.8591).epsilon(1e-4));
    CHECK_THROWS_AS(epsilon_to_delta(-1.0, 1.0), ValidationError);
    // closed forms with δ written out in ε
    for (int n : {4, 9, 33})
        for (int d = 1; d < n; d += 3)
            for (double eps : {0.01, 0.5, 2.0})
                for (double flow : {0.2, 1.0}) {
                    double F = 1.7;
                    auto bd = dag_bounds(n, d, F, epsilon_to_delta(eps, flow));
                    double e = (std::exp(std::sqrt(eps)) - 1.0) * flow;
                    CHECK(std::abs(bd.lower - e * (n - d) / (2.0 * n * (F + e))) < 1e-12);
                    CHECK(std::abs(bd.upper - e * (n + d * n - d) / (2.0 * n * (F + e))) < 1e-12);
                }
}

TEST_CASE("Dirichlet Monte Carlo") {
    auto g = tree(2, 3);
    auto t = TargetDistribution::uniform(g);
    auto zero = dirichlet_expected_tv_mc(t, {0, 1}, 0.0, 1.0, sym(1.0), 1000, 7);
    CHECK(zero.mean == 0.0);
    CHECK(zero.std_error == 0.0);

    // d = 1: a leaf edge, deterministic TV
    auto leaf_edge = Edge{3, 7};
    auto one = dirichlet_expected_tv_mc(t, leaf_edge, 1.0, 1.0, sym(2.0), 500, 7);
    CHECK(one.mean == doctest::Approx(1.0 * 7.0 / (8.0 * 2.0)).epsilon(1e-14));
    CHECK(one.std_error == 0.0);

    auto mc = dirichlet_expected_tv_mc(t, {0, 1}, 1.0, 1.0, sym(1.0), 100000, 7);
    auto db = dag_bounds(8, 4, 1.0, 1.0);
    CHECK(mc.bound_violations == 0);
    CHECK(mc.mean >= db.lower);
    CHECK(mc.mean <= db.upper);
    double oracle = dirichlet_expected_tv_beta_marginal(8, 4, 1.0, 1.0, 1.0);
    CHECK(std::abs(mc.mean - oracle) < 4 * mc.std_error);

    // determinism and thread independence
    auto again = dirichlet_expected_tv_mc(t, {0, 1}, 1.0, 1.0, sym(1.0), 100000, 7, 4);
    CHECK(again.mean == mc.mean);
    CHECK(again.std_error == mc.std_error);
    CHECK_THROWS_AS(dirichlet_expected_tv_mc(t, {0, 1}, 1.0, 1.0, sym(1.0), 10, 7), ValidationError);
}

TEST_CASE("beta-marginal form against direct enumeration of a two-leaf split") {
    // n=4, d=2, alpha=1: the share X ~ U(0,1); E|X-1/4| + E|1-X-1/4| = 2 * (1/32 + 9/32) = 5/8
    double value = dirichlet_expected_tv_beta_marginal(4, 2, 1.0, 1.0, 1.0);
    CHECK(value == doctest::Approx(0.25 * (0.5 + 0.625)).epsilon(1e-13));
    CHECK(dirichlet_expected_tv_beta_marginal(8, 1, 3.0, 1.0, 1.0) == doctest::Approx(7.0 / 16.0));
}

TEST_CASE("Dirichlet closed form") {
    CHECK(dirichlet_expected_tv_closed(8, 3, sym(1.0), 0.0, 1.0).value == 0.0);
    auto cf = dirichlet_expected_tv_closed(8, 3, sym(1.0), 1.0, 1.0);
    REQUIRE(cf.corollary_lambda.has_value());
    CHECK(*cf.corollary_lambda == doctest::Approx(2.0 * (0.5 - 1.0 / 8.0 + 1.0 / 64.0)));
    CHECK(*cf.corollary_value == doctest::Approx((3.0 * (*cf.corollary_lambda - 0.125) + 1.0) * 0.25));
    CHECK(std::isfinite(cf.value));
    CHECK_FALSE(dirichlet_expected_tv_closed(8, 3, sym(2.0), 1.0, 1.0).corollary_value.has_value());
    Vec asym(3);
    asym << 1.0, 2.0, 1.0;
    CHECK_THROWS_WITH_AS(dirichlet_expected_tv_closed(8, 3, asym, 1.0, 1.0),
                         doctest::Contains("symmetric"), ValidationError);
    // the corollary at d=1 is half the direct single-leaf value
    auto d1 = dirichlet_expected_tv_closed(8, 1, sym(1.0), 1.0, 1.0);
    CHECK(2.0 * *d1.corollary_value == doctest::Approx(7.0 / 16.0));
}

TEST_CASE("spec parsing") {
    auto g = build_regular_tree(2, 2);
    CHECK(edge_from_spec(g, "root:1") == Edge{0, 2});
    CHECK(edge_from_spec(g, "1-3") == Edge{1, 3});
    CHECK_THROWS_AS(edge_from_spec(g, "root:2"), ValidationError);
    CHECK_THROWS_AS(edge_from_spec(g, "1-5"), ValidationError);
    CHECK(std::holds_alternative<SplitEqual>(split_from_spec("equal", 0)));
    CHECK(std::get<SplitDirichlet>(split_from_spec("dirichlet:alpha=2.5", 0)).alpha[0] == 2.5);
    CHECK_THROWS_AS(split_from_spec("gaussian", 0), ValidationError);
}

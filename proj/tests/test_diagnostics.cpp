#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "gfnlab/diagnostics.hpp"
#include "gfnlab/sensitivity.hpp"
#include "gfnlab/util.hpp"

using namespace gfn;

namespace {

GraphPtr tree(int g, int h) { return std::make_shared<StateGraph>(build_regular_tree(g, h)); }

Vec random_distribution(int n, std::mt19937_64& rng) {
    std::exponential_distribution<double> e(1.0);
    Vec p(n);
    for (int i = 0; i < n; ++i) p[i] = e(rng);
    return p / p.sum();
}

// Brute-force e(S) straight from the conditional definition.
double oracle_error(const Vec& p, const Vec& q, const std::vector<int>& s) {
    double ps = 0, qs = 0;
    for (int i : s) ps += p[i], qs += q[i];
    double e = 0;
    for (int i : s) e += std::abs(p[i] / ps - q[i] / qs);
    return e / 2;
}

// Mean over all subsets via bitmasks.
double oracle_exhaustive(const Vec& p, const Vec& q, int B) {
    int n = static_cast<int>(p.size());
    double sum = 0;
    int count = 0;
    for (int mask = 0; mask < (1 << n); ++mask) {
        if (__builtin_popcount(mask) != B) continue;
        std::vector<int> s;
        for (int i = 0; i < n; ++i)
            if (mask >> i & 1) s.push_back(i);
        sum += oracle_error(p, q, s);
        ++count;
    }
    return sum / count;
}

}  // namespace

TEST_CASE("subset error on the imbalanced tree(2,2) example") {
    auto g = tree(2, 2);
    TabularPolicy policy(g);
    Vec root(2);
    root << std::log(3.0), 0.0;  // 0.75 / 0.25
    policy.set_forward_logits(g->initial(), root);
    Vec p = exact_marginal(policy);
    REQUIRE(p.isApprox((Vec(4) << 0.375, 0.375, 0.125, 0.125).finished(), 1e-12));
    auto target = TargetDistribution::uniform(g);
    CHECK(subset_error(p, target.probabilities(), {0, 2}) == doctest::Approx(0.25).epsilon(1e-12));
    // Siblings under the same child are conditionally uniform in both.
    CHECK(subset_error(p, target.probabilities(), {0, 1}) == doctest::Approx(0.0));

    auto r = fcs(policy, target, 2, 50, 7);
    CHECK(r.errors.size() == 50);
    for (double e : r.errors) CHECK((e == doctest::Approx(0.0) || e == doctest::Approx(0.25)));
}

TEST_CASE("PAC bound formula") {
    CHECK(pac_bound(0.0, 50, 0.05) == doctest::Approx(std::sqrt(std::log(20.0) / 100.0)).epsilon(1e-14));
    CHECK(pac_bound(0.1, 200, 0.01) == doctest::Approx(0.1 + std::sqrt(std::log(100.0) / 400.0)).epsilon(1e-14));
    CHECK_THROWS_AS(pac_bound(0.0, 0, 0.05), ValidationError);
    CHECK_THROWS_AS(pac_bound(0.0, 10, 1.0), ValidationError);

    auto g = tree(2, 3);
    TabularPolicy balanced(g);
    auto r = fcs(balanced, TargetDistribution::uniform(g), 3, 50, 1);
    CHECK(r.mean == 0.0);
    CHECK(r.pac_bound == doctest::Approx(std::sqrt(std::log(20.0) / 100.0)));
    for (const auto& s : r.subsets) {
        CHECK(s.size() == 3);
        CHECK(std::is_sorted(s.begin(), s.end()));
        CHECK(std::adjacent_find(s.begin(), s.end()) == s.end());
    }
}

TEST_CASE("argument errors") {
    Vec p = Vec::Constant(4, 0.25);
    CHECK_THROWS_AS(fcs_from_distributions(p, p, 5, 10, 0), ValidationError);
    CHECK_THROWS_AS(fcs_from_distributions(p, p, 1, 10, 0), ValidationError);
    CHECK_THROWS_AS(fcs_from_distributions(p, p, 2, 0, 0), ValidationError);
    CHECK_THROWS_AS(fcs_exhaustive(p, p, 5), ValidationError);
    auto rng = make_rng(0);
    CHECK_THROWS_AS(sample_subset(3, 4, rng), ValidationError);
    CHECK_THROWS_AS(exploration_coverage(*tree(2, 2), 1, 99, 0, {0.5}), ValidationError);
}

TEST_CASE("subset sampling is uniform over size-B subsets") {
    auto rng = make_rng(11);
    const int n = 6, B = 3, draws = 60000;
    std::map<std::vector<int>, int> counts;
    for (int i = 0; i < draws; ++i) ++counts[sample_subset(n, B, rng)];
    CHECK(counts.size() == 20);
    double expect = draws / 20.0, sd = std::sqrt(expect * (1 - 1 / 20.0));
    for (const auto& [s, c] : counts) CHECK(std::abs(c - expect) < 5 * sd);
}

TEST_CASE("exhaustive FCS matches the oracle and is zero iff TV is zero") {
    auto rng = make_rng(5);
    for (int n = 3; n <= 12; ++n) {
        for (int B : {2, 3}) {
            if (B > n) continue;
            Vec q = random_distribution(n, rng);
            Vec p = random_distribution(n, rng);
            double ex = fcs_exhaustive(p, q, B);
            CHECK(ex == doctest::Approx(oracle_exhaustive(p, q, B)).epsilon(1e-12));
            CHECK(total_variation(p, q) > 0);
            CHECK(ex > 0);
            CHECK(fcs_exhaustive(q, q, B) == doctest::Approx(0.0).epsilon(1e-15));
            // One terminal perturbed is still detected.
            Vec r = q;
            r[0] *= 1.01;
            r /= r.sum();
            CHECK(fcs_exhaustive(r, q, B) > 0);
        }
    }
}

TEST_CASE("FCS mean is monotone in TV over a delta grid") {
    auto g = tree(2, 3);
    auto target = TargetDistribution::uniform(g);
    ImbalanceSpec spec;
    spec.edge = {g->initial(), g->children(g->initial())[0]};
    std::vector<double> tv, f;
    for (double delta : {0.0, 0.05, 0.1, 0.25, 0.5, 1.0, 2.0, 5.0, 10.0}) {
        spec.delta = delta;
        Vec mu = imbalanced_distribution(target, spec, 1.0);
        tv.push_back(total_variation(mu, target.probabilities()));
        f.push_back(fcs_exhaustive(mu, target.probabilities(), 2));
    }
    for (std::size_t i = 1; i < tv.size(); ++i) {
        CHECK(tv[i] > tv[i - 1]);
        CHECK(f[i] >= f[i - 1]);
    }
    CHECK(f.front() == 0.0);
    CHECK(f.back() > 0.0);
}

TEST_CASE("PAC bound covers the true FCS in at least 95% of samplings") {
    auto rng = make_rng(17);
    const int n = 10, B = 3, m = 50, trials = 500;
    Vec q = random_distribution(n, rng);
    Vec p = random_distribution(n, rng);
    double truth = oracle_exhaustive(p, q, B);
    int covered = 0;
    for (int t = 0; t < trials; ++t) {
        auto r = fcs_from_distributions(p, q, B, m, 1000 + t);
        for (double e : r.errors) REQUIRE((e >= 0.0 && e <= 1.0));
        if (truth <= r.pac_bound) ++covered;
    }
    CHECK(covered >= 475);
}

TEST_CASE("pitfall metrics reward a tempered model") {
    auto g = tree(2, 2);
    Vec reward(4);
    reward << 0.1, 0.2, 0.3, 0.4;
    auto target = TargetDistribution::from_rewards(g, reward);

    auto exact = pitfall_metrics(target.probabilities(), target);
    CHECK(exact.correlation == doctest::Approx(1.0));
    CHECK(exact.accuracy == doctest::Approx(1.0));

    Vec sq = reward.array().square();
    sq /= sq.sum();
    auto m = pitfall_metrics(sq, target);
    CHECK(m.correlation == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(m.accuracy == 1.0);
    CHECK(m.expected_reward > exact.expected_reward);
    CHECK(total_variation(sq, target.probabilities()) > 0.05);
    CHECK(fcs_exhaustive(sq, target.probabilities(), 2) > 0.05);

    auto flat = TargetDistribution::uniform(g);
    auto rng = make_rng(3);
    for (int i = 0; i < 5; ++i) CHECK(pitfall_metrics(random_distribution(4, rng), flat).accuracy == doctest::Approx(1.0));
    CHECK(std::isnan(pitfall_metrics(sq, flat).correlation));

    TabularPolicy policy(g);
    auto via_policy = pitfall_metrics(policy, target);
    CHECK(via_policy.expected_reward == doctest::Approx(0.25));
}

TEST_CASE("importance-mode FCS tracks exact FCS") {
    auto g = std::make_shared<StateGraph>(build_set_graph(5, 3));
    auto target = target_from_spec(g, "product:seed=2,alpha=1.0");
    TabularPolicy policy(g);
    auto rng = make_rng(9);
    std::uniform_real_distribution<double> u(-1, 1);
    for (Index i = 0; i < policy.num_params(); ++i) policy.params()[i] = u(rng);

    auto exact = fcs(policy, target, 3, 40, 4);
    auto imp = fcs(policy, target, 3, 40, 4, MarginalMode::Importance, 4000);
    CHECK(imp.mode == MarginalMode::Importance);
    CHECK(imp.subsets == exact.subsets);
    CHECK(imp.estimator_std_error > 0);
    CHECK(imp.estimator_std_error < 0.05);
    for (std::size_t i = 0; i < exact.errors.size(); ++i) CHECK(std::abs(imp.errors[i] - exact.errors[i]) < 0.05);
    CHECK(std::abs(imp.mean - exact.mean) < 0.02);

    auto t4 = fcs(policy, target, 3, 40, 4, MarginalMode::Importance, 4000, 0.05, 4);
    CHECK(t4.errors == imp.errors);
    CHECK(fcs_report_json(t4) == fcs_report_json(imp));
}

TEST_CASE("exploration coverage against the Markov bound") {
    auto g34 = tree(3, 4);
    auto r = exploration_coverage(*g34, 10, 1000, 2, default_coverage_grid());
    CHECK(r.states_per_trajectory == 5);
    CHECK(r.num_states == 121);
    for (std::size_t i = 0; i < r.s.size(); ++i) {
        double b = r.bound[i];
        double sigma = std::sqrt(b * (1 - b) / r.trials);
        CHECK(r.exceedance[i] <= b + 3 * sigma + 1e-12);
        CHECK(r.vacuous[i] == (10.0 * 5 / (r.s[i] * 121) >= 1.0));
    }
    // M K = 50 < 121, so the bound is vacuous exactly for s <= 50/121.
    CHECK(r.vacuous[40]);
    CHECK_FALSE(r.vacuous[41]);
    CHECK(r.mean_visited > 1);
    CHECK(r.mean_visited <= 41);

    auto again = exploration_coverage(*g34, 10, 1000, 2, default_coverage_grid(), 4);
    CHECK(coverage_csv(again) == coverage_csv(r));

    auto zero = exploration_coverage(*g34, 0, 100, 2, {0.005, 1.0 / 121, 0.01, 0.5});
    CHECK(zero.mean_visited == 1.0);
    CHECK(zero.exceedance == std::vector<double>{1.0, 1.0, 0.0, 0.0});
    for (double b : zero.bound) CHECK(b == 0.0);
    CHECK(coverage_csv(zero).rfind("s,exceedance,bound,vacuous\n", 0) == 0);
}

#include "gfnlab/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "gfnlab/sensitivity.hpp"
#include "gfnlab/util.hpp"

namespace gfn {

using json = nlohmann::json;

double pac_bound(double mean, int m, double confidence) {
    if (m < 1) throw ValidationError("PAC bound needs m >= 1");
    if (!(confidence > 0.0 && confidence < 1.0)) throw ValidationError("confidence must lie in (0, 1)");
    return mean + std::sqrt(std::log(1.0 / confidence) / (2.0 * m));
}

double subset_error(const Vec& p_model, const Vec& p_target, const std::vector<int>& subset) {
    double ps = 0.0, qs = 0.0;
    for (int i : subset) {
        ps += p_model[i];
        qs += p_target[i];
    }
    double k = static_cast<double>(subset.size());
    double e = 0.0;
    for (int i : subset) {
        // A subset the model (or target) never reaches is read as uniform on S.
        double a = ps > 0.0 ? p_model[i] / ps : 1.0 / k;
        double b = qs > 0.0 ? p_target[i] / qs : 1.0 / k;
        e += std::abs(a - b);
    }
    return std::clamp(0.5 * e, 0.0, 1.0);
}

std::vector<int> sample_subset(int n, int B, std::mt19937_64& rng) {
    if (B > n) throw ValidationError("subset size B=" + std::to_string(B) + " exceeds n=" + std::to_string(n));
    // Floyd's algorithm: B draws, uniform over size-B subsets.
    std::vector<int> out;
    out.reserve(B);
    for (int j = n - B; j < n; ++j) {
        std::uniform_int_distribution<int> d(0, j);
        int t = d(rng);
        if (std::find(out.begin(), out.end(), t) == out.end()) out.push_back(t);
        else out.push_back(j);
    }
    std::sort(out.begin(), out.end());
    return out;
}

namespace {

void check_fcs_args(Index n, int B, int m) {
    if (B < 2) throw ValidationError("FCS needs B >= 2");
    if (B > n) throw ValidationError("subset size B=" + std::to_string(B) + " exceeds n=" + std::to_string(n));
    if (m < 1) throw ValidationError("FCS needs m >= 1");
}

std::vector<std::vector<int>> draw_subsets(int n, int B, int m, std::uint64_t seed) {
    auto rng = make_rng(seed, 0xfc5);
    std::vector<std::vector<int>> out;
    out.reserve(m);
    for (int i = 0; i < m; ++i) out.push_back(sample_subset(n, B, rng));
    return out;
}

void finish(FCSReport& r) {
    r.mean = r.errors.empty() ? 0.0 : pairwise_sum(r.errors.data(), r.errors.size()) / r.errors.size();
    r.pac_bound = pac_bound(r.mean, r.samples, r.confidence);
}

}  // namespace

FCSReport fcs_from_distributions(const Vec& p_model, const Vec& p_target, int B, int m, std::uint64_t seed,
                                 double confidence) {
    if (p_model.size() != p_target.size()) throw std::invalid_argument("fcs: length mismatch");
    check_fcs_args(p_model.size(), B, m);
    FCSReport r;
    r.subset_size = B;
    r.samples = m;
    r.confidence = confidence;
    r.subsets = draw_subsets(static_cast<int>(p_model.size()), B, m, seed);
    for (const auto& s : r.subsets) r.errors.push_back(subset_error(p_model, p_target, s));
    finish(r);
    return r;
}

FCSReport fcs(const TabularPolicy& policy, const TargetDistribution& target, int B, int m, std::uint64_t seed,
              MarginalMode mode, int importance_k, double confidence, int threads) {
    const auto& g = policy.graph();
    if (g.num_terminals() != static_cast<std::size_t>(target.size()))
        throw std::invalid_argument("fcs: policy and target disagree on the terminal set");
    if (mode == MarginalMode::Exact) return fcs_from_distributions(exact_marginal(policy), target.probabilities(), B, m, seed, confidence);

    check_fcs_args(target.size(), B, m);
    FCSReport r;
    r.subset_size = B;
    r.samples = m;
    r.confidence = confidence;
    r.mode = MarginalMode::Importance;
    r.importance_k = importance_k;
    r.subsets = draw_subsets(static_cast<int>(target.size()), B, m, seed);
    r.errors.assign(m, 0.0);
    std::vector<double> se(m, 0.0);
    auto work = [&](int begin, int end) {
        Vec p = Vec::Zero(target.size());
        for (int i = begin; i < end; ++i) {
            const auto& s = r.subsets[i];
            double total = 0.0, var = 0.0;
            for (int x : s) {
                auto est = importance_marginal(policy, g.terminals()[x], importance_k,
                                               seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(i + 1)));
                p[x] = est.value;
                total += est.value;
                var += est.std_error * est.std_error;
            }
            r.errors[i] = subset_error(p, target.probabilities(), s);
            se[i] = total > 0.0 ? std::sqrt(var) / total : 0.0;
            for (int x : s) p[x] = 0.0;
        }
    };
    int t = std::clamp(threads, 1, m);
    if (t == 1) {
        work(0, m);
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < t; ++w) pool.emplace_back(work, m * w / t, m * (w + 1) / t);
        for (auto& th : pool) th.join();
    }
    r.estimator_std_error = pairwise_sum(se.data(), se.size()) / m;
    finish(r);
    return r;
}

double fcs_exhaustive(const Vec& p_model, const Vec& p_target, int B) {
    int n = static_cast<int>(p_model.size());
    check_fcs_args(n, B, 1);
    std::vector<int> idx(B);
    std::iota(idx.begin(), idx.end(), 0);
    double sum = 0.0;
    long count = 0;
    while (true) {
        sum += subset_error(p_model, p_target, idx);
        ++count;
        int i = B - 1;
        while (i >= 0 && idx[i] == n - B + i) --i;
        if (i < 0) break;
        ++idx[i];
        for (int j = i + 1; j < B; ++j) idx[j] = idx[j - 1] + 1;
    }
    return sum / static_cast<double>(count);
}

PitfallMetrics pitfall_metrics(const Vec& p_model, const TargetDistribution& target) {
    if (p_model.size() != target.size()) throw std::invalid_argument("pitfall_metrics: length mismatch");
    PitfallMetrics out;
    Vec reward = target.log_rewards().array().exp();
    out.expected_reward = p_model.dot(reward);
    double optimal = target.probabilities().dot(reward);
    out.accuracy = std::min(out.expected_reward / optimal, 1.0);

    Index n = p_model.size();
    Vec a = p_model.array().log();
    const Vec& b = target.log_rewards();
    double ma = a.mean(), mb = b.mean();
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (Index i = 0; i < n; ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    out.correlation = (saa > 0.0 && sbb > 0.0) ? sab / std::sqrt(saa * sbb) : std::numeric_limits<double>::quiet_NaN();
    return out;
}

PitfallMetrics pitfall_metrics(const TabularPolicy& policy, const TargetDistribution& target) {
    return pitfall_metrics(exact_marginal(policy), target);
}

std::vector<double> default_coverage_grid() {
    std::vector<double> s;
    for (int i = 1; i <= 100; ++i) s.push_back(i / 100.0);
    return s;
}

CoverageReport exploration_coverage(const StateGraph& g, int M, int trials, std::uint64_t seed,
                                    const std::vector<double>& s_grid, int threads) {
    if (M < 0) throw ValidationError("M must be >= 0");
    if (trials < 100) throw ValidationError("exploration coverage needs at least 100 trials");
    CoverageReport r;
    r.epochs = M;
    r.states_per_trajectory = g.max_trajectory_length() + 1;
    r.num_states = static_cast<int>(g.num_states());
    r.trials = trials;
    r.s = s_grid;
    std::vector<int> visited(trials, 0);
    auto work = [&](int begin, int end) {
        std::vector<char> seen(g.num_states());
        for (int t = begin; t < end; ++t) {
            auto rng = make_rng(seed, 0xc0fe, static_cast<std::uint64_t>(t));
            std::fill(seen.begin(), seen.end(), 0);
            int count = 1;
            seen[g.initial()] = 1;
            for (int e = 0; e < M; ++e) {
                StateId u = g.initial();
                while (!g.is_terminal(u)) {
                    auto kids = g.children(u);
                    std::uniform_int_distribution<std::size_t> pick(0, kids.size() - 1);
                    u = kids[pick(rng)];
                    if (!seen[u]) {
                        seen[u] = 1;
                        ++count;
                    }
                }
            }
            visited[t] = count;
        }
    };
    int nt = std::clamp(threads, 1, trials);
    if (nt == 1) {
        work(0, trials);
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < nt; ++w) pool.emplace_back(work, trials * w / nt, trials * (w + 1) / nt);
        for (auto& th : pool) th.join();
    }
    r.mean_visited = std::accumulate(visited.begin(), visited.end(), 0.0) / trials;
    double MK = static_cast<double>(M) * r.states_per_trajectory;
    for (double s : s_grid) {
        double threshold = s * r.num_states;
        int hits = 0;
        for (int v : visited)
            if (v >= threshold) ++hits;
        r.exceedance.push_back(static_cast<double>(hits) / trials);
        double raw = MK / threshold;
        r.bound.push_back(std::min(1.0, raw));
        r.vacuous.push_back(raw >= 1.0);
    }
    return r;
}

std::string fcs_report_json(const FCSReport& r) {
    json doc;
    doc["B"] = r.subset_size;
    doc["m"] = r.samples;
    doc["mode"] = r.mode == MarginalMode::Exact ? "exact" : "importance";
    if (r.mode == MarginalMode::Importance) {
        doc["importance_k"] = r.importance_k;
        doc["estimator_std_error"] = r.estimator_std_error;
    }
    doc["errors"] = r.errors;
    doc["subsets"] = r.subsets;
    doc["mean"] = r.mean;
    doc["confidence"] = r.confidence;
    doc["pac_bound"] = r.pac_bound;
    return doc.dump(2) + "\n";
}

std::string coverage_csv(const CoverageReport& r) {
    std::ostringstream os;
    os << "s,exceedance,bound,vacuous\n";
    for (std::size_t i = 0; i < r.s.size(); ++i)
        os << format_full(r.s[i]) << ',' << format_full(r.exceedance[i]) << ',' << format_full(r.bound[i]) << ','
           << (r.vacuous[i] ? "true" : "false") << '\n';
    return os.str();
}

}  // namespace gfn

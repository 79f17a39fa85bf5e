#include "gttt/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "gttt/rng.hpp"

namespace gttt {

namespace {

double disagreement_rate(const std::vector<std::uint8_t>& h1, const std::vector<std::uint8_t>& h2,
                         const std::vector<std::size_t>& sample) {
    std::size_t disagree = 0;
    for (const std::size_t x : sample)
        if (h1[x] != h2[x]) ++disagree;
    return static_cast<double>(disagree) / static_cast<double>(sample.size());
}

void validate_simplex_pair(const double omega[2], const double lambda[2]) {
    if (std::abs(omega[0] + omega[1] - 1.0) > 1e-9)
        throw std::invalid_argument("weight vector must sum to 1");
    if (std::abs(lambda[0] + lambda[1] - 1.0) > 1e-9)
        throw std::invalid_argument("ratio vector must sum to 1");
    if (omega[0] < 0.0 || omega[1] < 0.0)
        throw std::invalid_argument("weights must be nonnegative");
    for (int i = 0; i < 2; ++i)
        if (lambda[i] == 0.0 && omega[i] != 0.0)
            throw std::invalid_argument("zero sample ratio with nonzero weight");
}

// sum_i omega_i^2 / lambda_i, treating the 0/0 corner as contributing 0.
double weight_ratio_sum(const double omega[2], const double lambda[2]) {
    double sum = 0.0;
    for (int i = 0; i < 2; ++i)
        if (omega[i] != 0.0) sum += omega[i] * omega[i] / lambda[i];
    return sum;
}

}  // namespace

double empirical_hdh_distance(const FiniteHypothesisClass& hc,
                              const std::vector<std::size_t>& sample1,
                              const std::vector<std::size_t>& sample2) {
    if (hc.hypotheses.empty())
        throw std::invalid_argument("empirical_hdh_distance: empty hypothesis class");
    if (sample1.empty() || sample2.empty())
        throw std::invalid_argument("empirical_hdh_distance: empty sample");
    const std::size_t domain = hc.hypotheses.front().size();
    for (const auto& h : hc.hypotheses)
        if (h.size() != domain)
            throw std::invalid_argument("empirical_hdh_distance: hypothesis length mismatch");
    for (const std::size_t x : sample1)
        if (x >= domain) throw std::invalid_argument("empirical_hdh_distance: sample out of domain");
    for (const std::size_t x : sample2)
        if (x >= domain) throw std::invalid_argument("empirical_hdh_distance: sample out of domain");

    double best = 0.0;
    for (std::size_t i = 0; i < hc.hypotheses.size(); ++i) {
        for (std::size_t j = i + 1; j < hc.hypotheses.size(); ++j) {
            const double p1 = disagreement_rate(hc.hypotheses[i], hc.hypotheses[j], sample1);
            const double p2 = disagreement_rate(hc.hypotheses[i], hc.hypotheses[j], sample2);
            best = std::max(best, 2.0 * std::abs(p1 - p2));
        }
    }
    return best;
}

double theorem1_bound(const BoundInputs& b) {
    if (b.dhat < 0.0) throw std::invalid_argument("theorem1_bound: dhat must be >= 0");
    if (b.eps_joint < 0.0) throw std::invalid_argument("theorem1_bound: eps_joint must be >= 0");
    if (b.delta <= 0.0 || b.delta >= 1.0)
        throw std::invalid_argument("theorem1_bound: delta must be in (0,1)");
    if (b.m == 0 || b.total_samples == 0)
        throw std::invalid_argument("theorem1_bound: sample counts must be positive");
    if (b.domain_j > 1) throw std::invalid_argument("theorem1_bound: domain_j must be 0 or 1");
    validate_simplex_pair(b.omega, b.lambda);

    const double m = static_cast<double>(b.m);
    const double n = static_cast<double>(b.total_samples);
    const double d = static_cast<double>(b.d);

    const double sample_term = 4.0 * std::sqrt((2.0 * d * std::log(2.0 * m) +
                                                std::log(2.0 / b.delta)) / m);
    const double c_term = 2.0 * std::sqrt(weight_ratio_sum(b.omega, b.lambda) *
                                          (d * std::log(2.0 * n) - std::log(b.delta)) / (2.0 * n));

    double cross = 0.0;
    for (std::size_t i = 0; i < 2; ++i) {
        if (i == b.domain_j) continue;
        cross += b.omega[i] * (b.dhat + sample_term + b.eps_joint);
    }
    return cross + c_term;
}

double test_domain_bound(double A, double M, double omega0, double lambda0) {
    if (A < 0.0 || M < 0.0) throw std::invalid_argument("test_domain_bound: A, M must be >= 0");
    if (omega0 < 0.0 || omega0 > 1.0)
        throw std::invalid_argument("test_domain_bound: omega0 must be in [0,1]");
    if (lambda0 <= 0.0 || lambda0 >= 1.0)
        throw std::invalid_argument("test_domain_bound: lambda0 must be in (0,1)");
    const double radical = std::sqrt(omega0 * omega0 / lambda0 +
                                     (1.0 - omega0) * (1.0 - omega0) / (1.0 - lambda0));
    return omega0 * A + radical * M;
}

Theorem2Result theorem2_check(double A, double M, double lambda0, std::size_t grid) {
    if (grid < 2) throw std::invalid_argument("theorem2_check: grid must be >= 2");
    Theorem2Result result;
    result.ftt_bound = A + M;

    std::vector<double> points;
    points.reserve(grid + 1);
    for (std::size_t i = 0; i < grid; ++i)
        points.push_back(static_cast<double>(i) / static_cast<double>(grid - 1));
    points.push_back(lambda0);  // analytic witness always evaluated
    std::sort(points.begin(), points.end());
    points.erase(std::unique(points.begin(), points.end()), points.end());

    result.min_bound = std::numeric_limits<double>::infinity();
    for (const double omega0 : points) {
        const double bound = test_domain_bound(A, M, omega0, lambda0);
        result.curve.emplace_back(omega0, bound);
        if (bound < result.min_bound) {
            result.min_bound = bound;
            result.omega0_at_min = omega0;
        }
    }
    result.holds = result.min_bound < result.ftt_bound;
    return result;
}

double hoeffding_weighted_bound(std::size_t total_samples, double eps, const double omega[2],
                                const double lambda[2]) {
    validate_simplex_pair(omega, lambda);
    if (eps < 0.0) throw std::invalid_argument("hoeffding_weighted_bound: eps must be >= 0");
    const double n = static_cast<double>(total_samples);
    return 2.0 * std::exp(-2.0 * n * eps * eps / weight_ratio_sum(omega, lambda));
}

Lemma2McResult lemma2_montecarlo(const double omega[2], const double lambda[2],
                                 std::size_t total_samples, double bound_eps,
                                 std::size_t trials, std::uint64_t seed, double true_rate0,
                                 double true_rate1) {
    validate_simplex_pair(omega, lambda);
    if (trials < 1000) throw std::invalid_argument("lemma2_montecarlo: need at least 1000 trials");
    if (true_rate0 < 0.0 || true_rate0 > 1.0 || true_rate1 < 0.0 || true_rate1 > 1.0)
        throw std::invalid_argument("lemma2_montecarlo: true rates must be in [0,1]");

    const double rates[2] = {true_rate0, true_rate1};
    std::size_t counts[2];
    counts[0] = static_cast<std::size_t>(std::llround(lambda[0] * static_cast<double>(total_samples)));
    counts[1] = total_samples - counts[0];
    const double true_weighted = omega[0] * rates[0] + omega[1] * rates[1];

    std::size_t violations = 0;
    for (std::size_t t = 0; t < trials; ++t) {
        Rng rng(derive_seed(seed, "lemma2-trial", t));
        double empirical = 0.0;
        for (int dmn = 0; dmn < 2; ++dmn) {
            if (counts[dmn] == 0 || omega[dmn] == 0.0) continue;
            std::size_t errors = 0;
            for (std::size_t i = 0; i < counts[dmn]; ++i)
                if (rng.uniform01() < rates[dmn]) ++errors;
            empirical += omega[dmn] * static_cast<double>(errors) / static_cast<double>(counts[dmn]);
        }
        if (std::abs(empirical - true_weighted) >= bound_eps) ++violations;
    }

    Lemma2McResult result;
    result.trials = trials;
    result.violation_rate = static_cast<double>(violations) / static_cast<double>(trials);
    result.analytic_bound =
        std::min(1.0, hoeffding_weighted_bound(total_samples, bound_eps, omega, lambda));
    return result;
}

}  // namespace gttt

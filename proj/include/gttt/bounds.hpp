#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace gttt {

// Finite hypothesis class over a finite domain: each hypothesis is a binary
// label vector. The VC dimension is caller-supplied and only feeds the
// sample-complexity terms.
struct FiniteHypothesisClass {
    std::vector<std::vector<std::uint8_t>> hypotheses;
    std::size_t vc_dim = 1;
};

struct BoundInputs {
    double dhat = 0.0;        // estimated hypothesis-space distance
    std::size_t m = 100;      // unlabeled sample size per domain
    std::size_t d = 1;        // VC dimension
    double delta = 0.05;
    double eps_joint = 0.0;   // joint optimal error term
    double omega[2] = {0.5, 0.5};
    double lambda[2] = {0.5, 0.5};
    std::size_t total_samples = 100;  // N
    std::size_t domain_j = 1;         // bounded domain (0 = source, 1 = test)
};

// Exhaustive max over hypothesis pairs of
// 2 * |P_S1[h != h'] - P_S2[h != h']|.
double empirical_hdh_distance(const FiniteHypothesisClass& hc,
                              const std::vector<std::size_t>& sample1,
                              const std::vector<std::size_t>& sample2);

// Generalization bound for the weighted-error minimizer:
// sum_{i != j} omega_i * (dhat + 4*sqrt((2d*ln(2m) + ln(2/delta))/m) + eps)
//   + 2*sqrt((sum_i omega_i^2/lambda_i) * (d*ln(2N) - ln(delta)) / (2N)).
double theorem1_bound(const BoundInputs& b);

// Compact test-domain form: omega0 * A
//   + sqrt(omega0^2/lambda0 + (1-omega0)^2/(1-lambda0)) * M.
double test_domain_bound(double A, double M, double omega0, double lambda0);

struct Theorem2Result {
    double min_bound = 0.0;   // minimum over the omega0 grid
    double omega0_at_min = 0.0;
    double ftt_bound = 0.0;   // the omega0 = lambda0 = 1 corner, A + M
    bool holds = false;       // min_bound < ftt_bound
    std::vector<std::pair<double, double>> curve;  // (omega0, bound)
};

// Grid search over omega0 in [0, 1] (the analytic witness omega0 = lambda0
// is always included) against the no-test-labels corner value A + M.
Theorem2Result theorem2_check(double A, double M, double lambda0, std::size_t grid);

// P[|e - e_hat| >= eps] <= 2 exp(-2 N eps^2 / (sum_j omega_j^2 / lambda_j)).
double hoeffding_weighted_bound(std::size_t total_samples, double eps, const double omega[2],
                                const double lambda[2]);

struct Lemma2McResult {
    double violation_rate = 0.0;
    double analytic_bound = 0.0;
    std::size_t trials = 0;
};

// Monte Carlo check of the concentration bound: per-domain Bernoulli errors
// with known true rates, weighted empirical error vs its expectation.
Lemma2McResult lemma2_montecarlo(const double omega[2], const double lambda[2],
                                 std::size_t total_samples, double bound_eps,
                                 std::size_t trials, std::uint64_t seed,
                                 double true_rate0 = 0.3, double true_rate1 = 0.6);

}  // namespace gttt

#include "gttt/selection.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "gttt/rng.hpp"

namespace gttt {

namespace {

constexpr std::size_t kPagerankMaxIters = 10000;
constexpr std::size_t kKmeansIters = 50;

double sq_dist(const Matrix& x, std::size_t row, const std::vector<double>& center) {
    const double* r = x.data.data() + row * x.cols;
    double acc = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) {
        const double d = r[j] - center[j];
        acc += d * d;
    }
    return acc;
}

// Top-k ids by (score desc, id asc).
std::vector<std::size_t> top_k_by_score(const std::vector<std::size_t>& ids,
                                        const std::vector<double>& score, std::size_t k) {
    std::vector<std::size_t> order = ids;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (score[a] != score[b]) return score[a] > score[b];
        return a < b;
    });
    order.resize(k);
    return order;
}

}  // namespace

BaselineKind baseline_kind_from_string(const std::string& name) {
    if (name == "random") return BaselineKind::Random;
    if (name == "density") return BaselineKind::Density;
    if (name == "degree") return BaselineKind::Degree;
    if (name == "entropy") return BaselineKind::Entropy;
    if (name == "pagerank") return BaselineKind::Pagerank;
    if (name == "featprop") return BaselineKind::Featprop;
    throw std::invalid_argument("unknown selection kind '" + name +
                                "' (expected random|density|degree|entropy|pagerank|featprop)");
}

std::string baseline_kind_to_string(BaselineKind kind) {
    switch (kind) {
        case BaselineKind::Random: return "random";
        case BaselineKind::Density: return "density";
        case BaselineKind::Degree: return "degree";
        case BaselineKind::Entropy: return "entropy";
        case BaselineKind::Pagerank: return "pagerank";
        case BaselineKind::Featprop: return "featprop";
    }
    throw std::invalid_argument("unknown selection kind");
}

std::vector<double> pagerank_scores(const Graph& g, double damping, double tol) {
    if (damping <= 0.0 || damping >= 1.0)
        throw std::invalid_argument("pagerank_scores: damping must be in (0,1)");
    if (tol <= 0.0) throw std::invalid_argument("pagerank_scores: tol must be positive");
    const std::size_t n = g.num_nodes;
    const double teleport = (1.0 - damping) / static_cast<double>(n);

    std::vector<double> score(n, 1.0 / static_cast<double>(n));
    std::vector<double> next(n, 0.0);
    for (std::size_t iter = 0; iter < kPagerankMaxIters; ++iter) {
        double dangling = 0.0;
        for (std::size_t v = 0; v < n; ++v)
            if (g.degree(v) == 0) dangling += score[v];
        std::fill(next.begin(), next.end(),
                  teleport + damping * dangling / static_cast<double>(n));
        for (std::size_t v = 0; v < n; ++v) {
            const std::size_t deg = g.degree(v);
            if (deg == 0) continue;
            const double share = damping * score[v] / static_cast<double>(deg);
            for (std::size_t k = g.csr_offsets[v]; k < g.csr_offsets[v + 1]; ++k)
                next[g.csr_targets[k]] += share;
        }
        double change = 0.0;
        for (std::size_t v = 0; v < n; ++v) change += std::abs(next[v] - score[v]);
        score.swap(next);
        if (change < tol) {
            const double total = std::accumulate(score.begin(), score.end(), 0.0);
            for (double& s : score) s /= total;
            return score;
        }
    }
    double residual = 0.0;
    for (std::size_t v = 0; v < n; ++v) residual += std::abs(next[v] - score[v]);
    throw std::runtime_error("pagerank_scores: no convergence after " +
                             std::to_string(kPagerankMaxIters) +
                             " iterations, residual " + std::to_string(residual));
}

std::vector<double> featprop_scores(const Graph& g, const std::vector<std::size_t>& candidates,
                                    std::size_t hops, std::size_t k, std::uint64_t /*seed*/) {
    if (candidates.empty()) throw std::invalid_argument("featprop_scores: no candidates");
    if (k == 0 || k > candidates.size())
        throw std::invalid_argument("featprop_scores: k must be in [1, |candidates|]");

    const NormAdj adj = normalize_adjacency(g);
    Matrix prop = g.features;
    for (std::size_t h = 0; h < hops; ++h) prop = adj.multiply(prop);

    const std::size_t dim = prop.cols;
    const std::size_t m = candidates.size();

    // Farthest-first centroid seeding from the candidate mean; purely
    // geometric, so node relabeling cannot change the outcome.
    std::vector<double> mean(dim, 0.0);
    for (const std::size_t v : candidates)
        for (std::size_t j = 0; j < dim; ++j) mean[j] += prop(v, j);
    for (double& x : mean) x /= static_cast<double>(m);

    std::vector<std::vector<double>> centers;
    std::vector<double> min_dist(m);
    std::size_t first = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < m; ++i) {
        const double d = sq_dist(prop, candidates[i], mean);
        if (d > best) {
            best = d;
            first = i;
        }
    }
    auto row_of = [&](std::size_t i) {
        std::vector<double> r(dim);
        for (std::size_t j = 0; j < dim; ++j) r[j] = prop(candidates[i], j);
        return r;
    };
    centers.push_back(row_of(first));
    for (std::size_t i = 0; i < m; ++i) min_dist[i] = sq_dist(prop, candidates[i], centers[0]);
    while (centers.size() < k) {
        std::size_t far = 0;
        double far_d = -1.0;
        for (std::size_t i = 0; i < m; ++i) {
            if (min_dist[i] > far_d) {
                far_d = min_dist[i];
                far = i;
            }
        }
        centers.push_back(row_of(far));
        for (std::size_t i = 0; i < m; ++i)
            min_dist[i] = std::min(min_dist[i], sq_dist(prop, candidates[i], centers.back()));
    }

    std::vector<std::size_t> assign(m, 0);
    for (std::size_t iter = 0; iter < kKmeansIters; ++iter) {
        bool moved = false;
        for (std::size_t i = 0; i < m; ++i) {
            std::size_t best_c = 0;
            double best_d = sq_dist(prop, candidates[i], centers[0]);
            for (std::size_t c = 1; c < centers.size(); ++c) {
                const double d = sq_dist(prop, candidates[i], centers[c]);
                if (d < best_d) {
                    best_d = d;
                    best_c = c;
                }
            }
            if (assign[i] != best_c) {
                assign[i] = best_c;
                moved = true;
            }
        }
        std::vector<std::vector<double>> sums(centers.size(), std::vector<double>(dim, 0.0));
        std::vector<std::size_t> counts(centers.size(), 0);
        for (std::size_t i = 0; i < m; ++i) {
            ++counts[assign[i]];
            for (std::size_t j = 0; j < dim; ++j) sums[assign[i]][j] += prop(candidates[i], j);
        }
        for (std::size_t c = 0; c < centers.size(); ++c) {
            if (counts[c] == 0) continue;  // empty cluster keeps its centroid
            for (std::size_t j = 0; j < dim; ++j)
                centers[c][j] = sums[c][j] / static_cast<double>(counts[c]);
        }
        if (!moved && iter > 0) break;
    }

    std::vector<double> scores(m, 0.0);
    double max_score = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        double best_d = sq_dist(prop, candidates[i], centers[0]);
        for (std::size_t c = 1; c < centers.size(); ++c)
            best_d = std::min(best_d, sq_dist(prop, candidates[i], centers[c]));
        scores[i] = 1.0 / (1.0 + std::sqrt(best_d));
        max_score = std::max(max_score, scores[i]);
    }
    for (double& s : scores) s /= max_score;
    return scores;
}

SelectionResult hybrid_select(const Graph& g, const Prediction& pred,
                              const std::vector<bool>& test_mask, const SelectionConfig& cfg) {
    if (cfg.budget == 0) throw std::invalid_argument("hybrid_select: budget must be >= 1");
    if (cfg.beta <= 1.0) throw std::invalid_argument("hybrid_select: beta must be > 1");
    if (cfg.alpha < 0.0) throw std::invalid_argument("hybrid_select: alpha must be >= 0");
    if (pred.probs.rows != g.num_nodes)
        throw std::invalid_argument("hybrid_select: prediction does not cover all nodes");

    const auto test_ids = mask_ids(test_mask);
    if (cfg.budget > test_ids.size())
        throw std::invalid_argument("hybrid_select: budget exceeds test set size");
    const auto pool_size = std::min<std::size_t>(
        static_cast<std::size_t>(std::ceil(cfg.beta * static_cast<double>(cfg.budget))),
        test_ids.size());

    SelectionResult result;
    result.uncertainty_scores = prediction_entropy(pred);
    const auto& q = result.uncertainty_scores;

    // Step 1: most-uncertain pool, ties by ascending id.
    const auto pool = top_k_by_score(test_ids, q, pool_size);
    std::vector<std::size_t> pool_sorted = pool;
    std::sort(pool_sorted.begin(), pool_sorted.end());

    // Step 2: composite distribution score over the pool.
    const auto pr = pagerank_scores(g, cfg.pagerank_damping, cfg.pagerank_tol);
    double pr_max = 0.0;
    for (const std::size_t v : pool_sorted) pr_max = std::max(pr_max, pr[v]);
    const auto fp = featprop_scores(g, pool_sorted, cfg.featprop_hops,
                                    std::min(cfg.budget, pool_sorted.size()), cfg.seed);

    result.composite_scores.assign(g.num_nodes, 0.0);
    for (std::size_t i = 0; i < pool_sorted.size(); ++i) {
        const std::size_t v = pool_sorted[i];
        result.composite_scores[v] = pr[v] / pr_max + cfg.alpha * fp[i];
    }

    const auto& f = result.composite_scores;
    std::vector<std::size_t> ranked = pool_sorted;
    std::sort(ranked.begin(), ranked.end(), [&](std::size_t a, std::size_t b) {
        if (f[a] != f[b]) return f[a] > f[b];
        if (q[a] != q[b]) return q[a] > q[b];
        return a < b;
    });
    ranked.resize(cfg.budget);
    std::sort(ranked.begin(), ranked.end());
    result.chosen = std::move(ranked);
    return result;
}

std::vector<std::size_t> baseline_select(BaselineKind kind, const Graph& g,
                                         const Prediction& pred,
                                         const std::vector<bool>& test_mask, std::size_t budget,
                                         std::uint64_t seed) {
    const auto test_ids = mask_ids(test_mask);
    if (budget > test_ids.size())
        throw std::invalid_argument("baseline_select: budget exceeds test set size");

    switch (kind) {
        case BaselineKind::Random: {
            Rng rng(derive_seed(seed, "baseline-random"));
            const auto picks = rng.sample_without_replacement(test_ids.size(), budget);
            std::vector<std::size_t> out;
            out.reserve(budget);
            for (const std::size_t i : picks) out.push_back(test_ids[i]);
            return out;
        }
        case BaselineKind::Degree: {
            std::vector<double> deg(g.num_nodes, 0.0);
            for (std::size_t v = 0; v < g.num_nodes; ++v) deg[v] = static_cast<double>(g.degree(v));
            auto out = top_k_by_score(test_ids, deg, budget);
            std::sort(out.begin(), out.end());
            return out;
        }
        case BaselineKind::Entropy: {
            const auto q = prediction_entropy(pred);
            auto out = top_k_by_score(test_ids, q, budget);
            std::sort(out.begin(), out.end());
            return out;
        }
        case BaselineKind::Pagerank: {
            const auto pr = pagerank_scores(g, 0.85, 1e-8);
            auto out = top_k_by_score(test_ids, pr, budget);
            std::sort(out.begin(), out.end());
            return out;
        }
        case BaselineKind::Featprop: {
            const auto fp = featprop_scores(g, test_ids, 2, std::min(budget, test_ids.size()), seed);
            std::vector<double> score(g.num_nodes, 0.0);
            for (std::size_t i = 0; i < test_ids.size(); ++i) score[test_ids[i]] = fp[i];
            auto out = top_k_by_score(test_ids, score, budget);
            std::sort(out.begin(), out.end());
            return out;
        }
        case BaselineKind::Density: {
            // Inverse mean distance to the k nearest feature neighbors among
            // the test candidates, k = min(10, |test|-1).
            const std::size_t m = test_ids.size();
            const std::size_t k = std::min<std::size_t>(10, m > 1 ? m - 1 : 1);
            std::vector<double> density(g.num_nodes, 0.0);
            for (std::size_t i = 0; i < m; ++i) {
                std::vector<double> dists;
                dists.reserve(m - 1);
                for (std::size_t j = 0; j < m; ++j) {
                    if (i == j) continue;
                    double acc = 0.0;
                    for (std::size_t c = 0; c < g.features.cols; ++c) {
                        const double d = g.features(test_ids[i], c) - g.features(test_ids[j], c);
                        acc += d * d;
                    }
                    dists.push_back(std::sqrt(acc));
                }
                std::sort(dists.begin(), dists.end());
                double mean = 0.0;
                const std::size_t take = std::min(k, dists.size());
                for (std::size_t t = 0; t < take; ++t) mean += dists[t];
                mean = take > 0 ? mean / static_cast<double>(take) : 0.0;
                density[test_ids[i]] = 1.0 / (1.0 + mean);
            }
            auto out = top_k_by_score(test_ids, density, budget);
            std::sort(out.begin(), out.end());
            return out;
        }
    }
    throw std::invalid_argument("baseline_select: unknown kind");
}

void save_selection(const SelectionResult& result, const SelectionConfig& cfg,
                    const std::string& path) {
    nlohmann::json j;
    j["chosen"] = result.chosen;
    j["Q"] = result.uncertainty_scores;
    j["F"] = result.composite_scores;
    j["config"] = {{"budget", cfg.budget},
                   {"beta", cfg.beta},
                   {"alpha", cfg.alpha},
                   {"pagerank_damping", cfg.pagerank_damping},
                   {"pagerank_tol", cfg.pagerank_tol},
                   {"featprop_hops", cfg.featprop_hops},
                   {"seed", cfg.seed}};
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write selection file: " + path);
    out << j.dump(2) << "\n";
}

}  // namespace gttt

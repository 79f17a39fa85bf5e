#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gttt/gnn.hpp"
#include "gttt/graph.hpp"

namespace gttt {

struct SelectionConfig {
    std::size_t budget = 1;      // B
    double beta = 2.0;           // step-1 pool scale, > 1
    double alpha = 1.0;          // featprop weight in the composite score
    double pagerank_damping = 0.85;
    double pagerank_tol = 1e-8;
    std::size_t featprop_hops = 2;
    std::uint64_t seed = 0;
};

struct SelectionResult {
    std::vector<std::size_t> chosen;        // len B, ascending node id
    std::vector<double> uncertainty_scores; // Q, one per node
    std::vector<double> composite_scores;   // F, nonzero only on the step-1 pool
};

enum class BaselineKind { Random, Density, Degree, Entropy, Pagerank, Featprop };

BaselineKind baseline_kind_from_string(const std::string& name);
std::string baseline_kind_to_string(BaselineKind kind);

// Power iteration on the column-normalized adjacency with uniform teleport;
// converges when the L1 change drops below tol. Scores sum to 1.
std::vector<double> pagerank_scores(const Graph& g, double damping, double tol);

// Representativeness in propagated-feature space: features are smoothed
// `hops` times with the normalized adjacency, the candidate rows are
// clustered with k-means (farthest-first seeding, 50 Lloyd iterations), and
// each candidate scores 1/(1 + distance to its nearest centroid),
// max-normalized to [0, 1]. Seeding is geometric, so scores are invariant
// under node-id permutations; the seed parameter is reserved.
std::vector<double> featprop_scores(const Graph& g, const std::vector<std::size_t>& candidates,
                                    std::size_t hops, std::size_t k, std::uint64_t seed);

// Two-step budgeted selection: the ceil(beta*B) most uncertain test nodes
// form a pool, then the B pool nodes with the highest composite score
// F = pagerank_norm + alpha * featprop are kept. Ties break by descending
// uncertainty, then ascending node id.
SelectionResult hybrid_select(const Graph& g, const Prediction& pred,
                              const std::vector<bool>& test_mask, const SelectionConfig& cfg);

std::vector<std::size_t> baseline_select(BaselineKind kind, const Graph& g,
                                         const Prediction& pred,
                                         const std::vector<bool>& test_mask, std::size_t budget,
                                         std::uint64_t seed);

void save_selection(const SelectionResult& result, const SelectionConfig& cfg,
                    const std::string& path);

}  // namespace gttt

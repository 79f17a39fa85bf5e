#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gttt/matrix.hpp"

namespace gttt {

enum class ShiftKind { Covariate, Concept };
enum class DomainCriterion { Degree, Word };

// Undirected node-attributed graph in CSR form. Adjacency is symmetric with
// no duplicate entries and no self loops; immutable after construction, so
// values can be shared freely across threads.
struct Graph {
    std::size_t num_nodes = 0;
    std::vector<std::size_t> csr_offsets;  // len num_nodes + 1
    std::vector<std::size_t> csr_targets;  // sorted within each row
    Matrix features;                       // num_nodes x feat_dim
    std::vector<int> labels;               // each in [0, class_count)
    std::vector<std::string> texts;        // empty, or one entry per node
    int class_count = 0;

    std::size_t degree(std::size_t v) const { return csr_offsets[v + 1] - csr_offsets[v]; }
    std::size_t num_undirected_edges() const { return csr_targets.size() / 2; }
    bool has_texts() const { return !texts.empty(); }

    // Unique undirected edges as (u, v) with u < v, ascending.
    std::vector<std::pair<std::size_t, std::size_t>> undirected_edges() const;
};

// Symmetrically normalized adjacency with self loops: entry (u, v) carries
// 1/sqrt((deg(u)+1) * (deg(v)+1)).
struct NormAdj {
    std::size_t num_nodes = 0;
    std::vector<std::size_t> csr_offsets;
    std::vector<std::size_t> csr_targets;
    std::vector<double> weights;

    // result = A_hat * x for dense x.
    Matrix multiply(const Matrix& x) const;
};

struct DataSplit {
    std::vector<bool> train_mask;
    std::vector<bool> val_mask;
    std::vector<bool> test_mask;
    ShiftKind shift_kind = ShiftKind::Covariate;
    DomainCriterion domain_criterion = DomainCriterion::Degree;
};

struct SplitSpec {
    ShiftKind shift = ShiftKind::Covariate;
    DomainCriterion criterion = DomainCriterion::Degree;
    // "word" domain value for feature-only graphs: the value of this feature
    // coordinate.
    std::size_t word_feature_index = 0;
    // Strength of the label/domain correlation planted in concept-shift
    // train sampling (weight = exp(kappa * agreement)).
    double concept_kappa = 2.0;
};

struct SplitRatios {
    double train = 0.5;
    double val = 0.1;
    double test = 0.4;
};

struct SbmParams {
    std::vector<std::size_t> block_sizes;  // one block per class
    double p_intra = 0.1;
    double p_inter = 0.01;
    Matrix class_means;  // num_blocks x feat_dim
    double noise_sigma = 0.5;
};

// Builds a validated Graph from an undirected edge list; symmetrizes,
// deduplicates and drops self loops.
Graph build_graph(std::size_t num_nodes,
                  const std::vector<std::pair<std::size_t, std::size_t>>& edges,
                  Matrix features, std::vector<int> labels,
                  std::vector<std::string> texts = {}, int expected_classes = 0);

// Node CSV: header "id,label,feat_0..feat_{d-1}[,text]", ids 0-based dense.
// Edge CSV: header "src,dst", one undirected edge per row.
// expected_classes > 0 validates labels against a declared class count;
// otherwise the count is inferred as max(label) + 1.
Graph load_graph(const std::string& node_file, const std::string& edge_file,
                 int expected_classes = 0);
void save_graph(const Graph& g, const std::string& node_file, const std::string& edge_file);

NormAdj normalize_adjacency(const Graph& g);

Graph generate_sbm(const SbmParams& params, std::uint64_t seed);

DataSplit make_ood_split(const Graph& g, const SplitSpec& spec, SplitRatios ratios,
                         std::uint64_t seed);

// Removes each undirected edge independently with probability `rate`;
// features, labels and texts are untouched.
Graph drop_edge(const Graph& g, double rate, std::uint64_t seed);

void save_split(const DataSplit& split, const std::string& path);
DataSplit load_split(const std::string& path, std::size_t num_nodes);

std::vector<std::size_t> mask_ids(const std::vector<bool>& mask);
std::size_t mask_count(const std::vector<bool>& mask);

}  // namespace gttt

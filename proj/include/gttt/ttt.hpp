#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gttt/annotator.hpp"
#include "gttt/gnn.hpp"
#include "gttt/graph.hpp"
#include "gttt/selection.hpp"

namespace gttt {

struct FilterConfig {
    double gamma = 0.5;      // COE weight in the filtering score
    double keep_ratio = 0.8; // fraction of annotations kept, in (0, 1]
};

// Running confidence statistics for the truncated-Gaussian sample weighting:
// mean and variance of max-probabilities tracked by EMA, starting from
// mu = 1/C and sigma^2 = 1.
struct GaussianWeightState {
    double mu = 0.5;
    double sigma2 = 1.0;
    double momentum = 0.999;
    double lambda_max = 1.0;
    int class_count = 2;

    static GaussianWeightState init(int class_count, double momentum = 0.999,
                                    double lambda_max = 1.0);
};

struct TttConfig {
    std::size_t stage1_epochs = 30;
    std::size_t stage2_epochs = 30;
    double drop_edge_rate = 0.3;
    double learning_rate = 0.001;
    FilterConfig filter;
    double momentum = 0.999;
    double lambda_max = 1.0;
    std::uint64_t seed = 0;
};

// Change of entropy when one occurrence of `removed_label` leaves the
// pseudo-label multiset: H(without) - H(with), natural log.
double coe(const std::vector<int>& pseudo_labels, int removed_label);

// Keeps the ceil(keep_ratio * n) records with the highest
// confidence/100 - gamma * COE score; ties break by ascending node id.
std::vector<AnnotationRecord> filter_annotations(const std::vector<AnnotationRecord>& records,
                                                 const FilterConfig& cfg);

// Supervised fine-tuning on the filtered pseudo-labels (stage 1).
GcnModel stage1_finetune(GcnModel model, const NormAdj& adj, const Matrix& features,
                         std::size_t num_nodes, const std::vector<AnnotationRecord>& filtered,
                         std::size_t epochs, double learning_rate);

// lambda_max * exp(-(p_max - mu)^2 / (2 sigma^2)) below the running mean,
// lambda_max at or above it.
double gaussian_weight(double p_max, const GaussianWeightState& st);

// Folds a batch of max-probabilities into the EMA state; the variance update
// carries the B/(B-1) unbiasing factor, so batches need at least 2 entries.
GaussianWeightState update_weight_state(const GaussianWeightState& st,
                                        const std::vector<double>& batch_pmax);

// Consistency self-training on the unlabeled test nodes (stage 2): per epoch
// the model's own argmax predictions on the clean graph supervise its
// predictions on a DropEdge view, weighted per node by the truncated
// Gaussian.
GcnModel stage2_selftrain(GcnModel model, const Graph& g, const std::vector<bool>& unlabeled_mask,
                          const TttConfig& cfg, GaussianWeightState state);

struct Metrics {
    double acc_pretrained = 0.0;
    double acc_stage1 = 0.0;
    double acc_stage2 = 0.0;
    std::size_t budget_used = 0;
    double llm_agreement = -1.0;  // vs ground truth; -1 when unavailable
    std::vector<std::size_t> chosen_nodes;
    std::vector<std::size_t> kept_nodes;
    std::uint64_t seed = 0;
    bool failed = false;
    std::string failure;
};

using AnnotateFn =
    std::function<std::vector<AnnotationRecord>(const std::vector<std::size_t>& nodes)>;

// Adaptation tail on an already-chosen node set: annotate, filter, stage-1
// fine-tune, stage-2 self-train, evaluate. Stage failures surface in the
// returned Metrics rather than as exceptions.
std::pair<GcnModel, Metrics> adapt_chosen(const GcnModel& pretrained, const Graph& g,
                                          const NormAdj& adj, const DataSplit& split,
                                          const std::vector<std::size_t>& chosen,
                                          const AnnotateFn& annotate, BudgetLedger& ledger,
                                          const TttConfig& cfg);

// Full pipeline on a pretrained model: hybrid selection, annotation,
// filtering, stage-1 fine-tuning, stage-2 self-training, evaluation.
std::pair<GcnModel, Metrics> run_ttt_pipeline(const GcnModel& pretrained, const Graph& g,
                                        const NormAdj& adj, const DataSplit& split,
                                        const SelectionConfig& sel_cfg,
                                        const AnnotateFn& annotate, BudgetLedger& ledger,
                                        const TttConfig& cfg);

}  // namespace gttt

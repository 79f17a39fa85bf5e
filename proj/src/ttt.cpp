#include "gttt/ttt.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "gttt/rng.hpp"

namespace gttt {

namespace {

double multiset_entropy(const std::map<int, std::size_t>& counts, std::size_t total) {
    if (total == 0) return 0.0;
    double h = 0.0;
    for (const auto& [label, count] : counts) {
        if (count == 0) continue;
        const double p = static_cast<double>(count) / static_cast<double>(total);
        h -= p * std::log(p);
    }
    return h;
}

}  // namespace

GaussianWeightState GaussianWeightState::init(int class_count, double momentum,
                                              double lambda_max) {
    if (class_count < 1) throw std::invalid_argument("GaussianWeightState: class_count must be >= 1");
    if (momentum < 0.0 || momentum >= 1.0)
        throw std::invalid_argument("GaussianWeightState: momentum must be in [0,1)");
    if (lambda_max <= 0.0)
        throw std::invalid_argument("GaussianWeightState: lambda_max must be positive");
    GaussianWeightState st;
    st.mu = 1.0 / static_cast<double>(class_count);
    st.sigma2 = 1.0;
    st.momentum = momentum;
    st.lambda_max = lambda_max;
    st.class_count = class_count;
    return st;
}

double coe(const std::vector<int>& pseudo_labels, int removed_label) {
    if (pseudo_labels.size() < 2)
        throw std::invalid_argument("coe: need at least two pseudo-labels");
    std::map<int, std::size_t> counts;
    for (const int l : pseudo_labels) ++counts[l];
    const auto it = counts.find(removed_label);
    if (it == counts.end())
        throw std::invalid_argument("coe: removed label not present in the multiset");

    const double h_full = multiset_entropy(counts, pseudo_labels.size());
    --it->second;
    const double h_without = multiset_entropy(counts, pseudo_labels.size() - 1);
    return h_without - h_full;
}

std::vector<AnnotationRecord> filter_annotations(const std::vector<AnnotationRecord>& records,
                                                 const FilterConfig& cfg) {
    if (records.size() < 2)
        throw std::invalid_argument("filter_annotations: need at least two records");
    if (cfg.keep_ratio <= 0.0 || cfg.keep_ratio > 1.0)
        throw std::invalid_argument("filter_annotations: keep_ratio must be in (0,1]");
    if (cfg.gamma < 0.0)
        throw std::invalid_argument("filter_annotations: gamma must be >= 0");

    std::vector<int> labels;
    labels.reserve(records.size());
    for (const auto& rec : records) labels.push_back(rec.pseudo_label);

    std::vector<double> score(records.size());
    for (std::size_t i = 0; i < records.size(); ++i)
        score[i] = records[i].confidence / 100.0 - cfg.gamma * coe(labels, records[i].pseudo_label);

    const auto keep = static_cast<std::size_t>(
        std::ceil(cfg.keep_ratio * static_cast<double>(records.size())));
    std::vector<std::size_t> order(records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (score[a] != score[b]) return score[a] > score[b];
        return records[a].node_id < records[b].node_id;
    });
    order.resize(keep);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return records[a].node_id < records[b].node_id;
    });

    std::vector<AnnotationRecord> kept;
    kept.reserve(keep);
    for (const std::size_t i : order) kept.push_back(records[i]);
    return kept;
}

GcnModel stage1_finetune(GcnModel model, const NormAdj& adj, const Matrix& features,
                         std::size_t num_nodes, const std::vector<AnnotationRecord>& filtered,
                         std::size_t epochs, double learning_rate) {
    if (filtered.empty()) throw std::invalid_argument("stage1_finetune: no annotations");

    std::vector<bool> mask(num_nodes, false);
    std::vector<int> labels(num_nodes, 0);
    for (const auto& rec : filtered) {
        if (rec.node_id >= num_nodes)
            throw std::invalid_argument("stage1_finetune: node id out of range");
        mask[rec.node_id] = true;
        labels[rec.node_id] = rec.pseudo_label;
    }

    AdamState opt = make_adam(model, learning_rate);
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        Gradients grads = backward(model, adj, features, labels, mask);
        adam_step(model, opt, grads);
    }
    return model;
}

double gaussian_weight(double p_max, const GaussianWeightState& st) {
    if (st.sigma2 <= 0.0) throw std::invalid_argument("gaussian_weight: sigma2 must be positive");
    if (p_max >= st.mu) return st.lambda_max;
    const double diff = p_max - st.mu;
    return st.lambda_max * std::exp(-(diff * diff) / (2.0 * st.sigma2));
}

GaussianWeightState update_weight_state(const GaussianWeightState& st,
                                        const std::vector<double>& batch_pmax) {
    const std::size_t b = batch_pmax.size();
    if (b < 2)
        throw std::invalid_argument("update_weight_state: batch must have at least 2 entries");

    double mean = 0.0;
    for (const double p : batch_pmax) mean += p;
    mean /= static_cast<double>(b);
    double var = 0.0;
    for (const double p : batch_pmax) var += (p - mean) * (p - mean);
    var /= static_cast<double>(b);  // biased batch variance

    const double correction = static_cast<double>(b) / static_cast<double>(b - 1);
    GaussianWeightState out = st;
    out.mu = st.momentum * st.mu + (1.0 - st.momentum) * mean;
    out.sigma2 = st.momentum * st.sigma2 + (1.0 - st.momentum) * correction * var;
    return out;
}

GcnModel stage2_selftrain(GcnModel model, const Graph& g, const std::vector<bool>& unlabeled_mask,
                          const TttConfig& cfg, GaussianWeightState state) {
    if (mask_count(unlabeled_mask) == 0)
        throw std::invalid_argument("stage2_selftrain: empty unlabeled mask");

    const NormAdj adj = normalize_adjacency(g);
    AdamState opt = make_adam(model, cfg.learning_rate);
    for (std::size_t epoch = 0; epoch < cfg.stage2_epochs; ++epoch) {
        // Clean-graph predictions give the targets; no gradient flows here.
        const Prediction pred = forward(model, adj, g.features);
        const std::vector<int> targets = argmax_labels(pred);
        const std::vector<double> pmax = max_prob(pred);

        std::vector<double> batch;
        batch.reserve(mask_count(unlabeled_mask));
        for (std::size_t v = 0; v < unlabeled_mask.size(); ++v)
            if (unlabeled_mask[v]) batch.push_back(pmax[v]);
        if (batch.size() >= 2) state = update_weight_state(state, batch);

        std::vector<double> weights(g.num_nodes, 0.0);
        for (std::size_t v = 0; v < unlabeled_mask.size(); ++v)
            if (unlabeled_mask[v]) weights[v] = gaussian_weight(pmax[v], state);

        const Graph augmented =
            drop_edge(g, cfg.drop_edge_rate, derive_seed(cfg.seed, "stage2-dropedge", epoch));
        const NormAdj adj_aug = normalize_adjacency(augmented);

        Gradients grads = backward(model, adj_aug, g.features, targets, unlabeled_mask, &weights);
        adam_step(model, opt, grads);

        const Prediction check = forward(model, adj, g.features);
        const double loss = loss_ce(check, targets, unlabeled_mask);
        if (!std::isfinite(loss))
            throw std::runtime_error("stage2_selftrain: loss diverged at epoch " +
                                     std::to_string(epoch));
    }
    return model;
}

std::pair<GcnModel, Metrics> adapt_chosen(const GcnModel& pretrained, const Graph& g,
                                          const NormAdj& adj, const DataSplit& split,
                                          const std::vector<std::size_t>& chosen,
                                          const AnnotateFn& annotate, BudgetLedger& ledger,
                                          const TttConfig& cfg) {
    if (chosen.empty()) throw std::invalid_argument("adapt_chosen: empty node selection");
    if (mask_count(split.test_mask) == 0)
        throw std::invalid_argument("adapt_chosen: empty test mask");

    Metrics metrics;
    metrics.seed = cfg.seed;
    metrics.chosen_nodes = chosen;
    GcnModel model = pretrained;
    try {
        const Prediction base_pred = forward(model, adj, g.features);
        metrics.acc_pretrained = accuracy(base_pred, g.labels, split.test_mask);
        metrics.acc_stage1 = metrics.acc_pretrained;
        metrics.acc_stage2 = metrics.acc_pretrained;

        const std::vector<AnnotationRecord> records = annotate(chosen);
        metrics.budget_used = ledger.used();
        if (records.empty()) throw std::runtime_error("run_ttt_pipeline: annotator returned no records");

        if (!g.labels.empty()) {
            std::size_t agree = 0;
            for (const auto& rec : records)
                if (rec.pseudo_label == g.labels[rec.node_id]) ++agree;
            metrics.llm_agreement = static_cast<double>(agree) / static_cast<double>(records.size());
        }

        // COE needs at least two records; a singleton set passes through.
        const std::vector<AnnotationRecord> kept =
            records.size() >= 2 ? filter_annotations(records, cfg.filter) : records;
        for (const auto& rec : kept) metrics.kept_nodes.push_back(rec.node_id);

        if (cfg.stage1_epochs > 0) {
            model = stage1_finetune(std::move(model), adj, g.features, g.num_nodes, kept,
                                    cfg.stage1_epochs, cfg.learning_rate);
        }
        metrics.acc_stage1 = accuracy(forward(model, adj, g.features), g.labels, split.test_mask);
        metrics.acc_stage2 = metrics.acc_stage1;

        if (cfg.stage2_epochs > 0) {
            // Unlabeled pool: test nodes outside the kept annotated set.
            std::vector<bool> unlabeled = split.test_mask;
            for (const auto& rec : kept) unlabeled[rec.node_id] = false;
            if (mask_count(unlabeled) > 0) {
                GaussianWeightState state =
                    GaussianWeightState::init(g.class_count, cfg.momentum, cfg.lambda_max);
                model = stage2_selftrain(std::move(model), g, unlabeled, cfg, state);
            }
            metrics.acc_stage2 =
                accuracy(forward(model, adj, g.features), g.labels, split.test_mask);
        }
    } catch (const std::exception& e) {
        metrics.failed = true;
        metrics.failure = e.what();
    }
    return {std::move(model), std::move(metrics)};
}

std::pair<GcnModel, Metrics> run_ttt_pipeline(const GcnModel& pretrained, const Graph& g,
                                        const NormAdj& adj, const DataSplit& split,
                                        const SelectionConfig& sel_cfg,
                                        const AnnotateFn& annotate, BudgetLedger& ledger,
                                        const TttConfig& cfg) {
    if (sel_cfg.budget == 0)
        throw std::invalid_argument("run_ttt_pipeline: annotation budget must be >= 1");
    if (ledger.budget() < sel_cfg.budget)
        throw std::invalid_argument("run_ttt_pipeline: ledger budget below selection budget");
    if (mask_count(split.test_mask) == 0)
        throw std::invalid_argument("run_ttt_pipeline: empty test mask");

    const Prediction base_pred = forward(pretrained, adj, g.features);
    const SelectionResult selection = hybrid_select(g, base_pred, split.test_mask, sel_cfg);
    return adapt_chosen(pretrained, g, adj, split, selection.chosen, annotate, ledger, cfg);
}

}  // namespace gttt

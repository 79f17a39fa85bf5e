#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gttt/graph.hpp"
#include "gttt/matrix.hpp"

namespace gttt {

// Multi-layer GCN: logits = A_hat * relu(... A_hat * X * W_1 ...) * W_L.
// Layers below frozen_prefix never receive gradient and are never touched by
// the optimizer, which is how partial test-time adaptation is realized.
struct GcnModel {
    std::vector<Matrix> layer_weights;           // (d_in x h, ..., h x C)
    std::vector<std::vector<double>> layer_biases;
    std::size_t frozen_prefix = 0;

    std::size_t num_layers() const { return layer_weights.size(); }
    int class_count() const {
        return layer_weights.empty() ? 0 : static_cast<int>(layer_weights.back().cols);
    }
};

struct Prediction {
    Matrix probs;   // rows on the simplex
    Matrix logits;
};

struct Gradients {
    std::vector<Matrix> weight_grads;
    std::vector<std::vector<double>> bias_grads;
};

// Adam with bias correction; moments are shaped like the model parameters.
struct AdamState {
    double learning_rate = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t step = 0;
    std::vector<Matrix> m_weights, v_weights;
    std::vector<std::vector<double>> m_biases, v_biases;
};

// Glorot-uniform initialization, seeded. dims = {feat_dim, hidden..., C}.
GcnModel init_gcn(const std::vector<std::size_t>& dims, std::size_t frozen_prefix,
                  std::uint64_t seed);

Prediction forward(const GcnModel& model, const NormAdj& adj, const Matrix& features);

// Mean over masked nodes of -log probs[i, labels[i]].
double loss_ce(const Prediction& pred, const std::vector<int>& labels,
               const std::vector<bool>& mask);

// Analytic gradients of the (optionally per-node weighted) cross-entropy,
// scaled by 1/|mask|. Frozen-prefix gradients are identically zero.
Gradients backward(const GcnModel& model, const NormAdj& adj, const Matrix& features,
                   const std::vector<int>& labels, const std::vector<bool>& mask,
                   const std::vector<double>* per_node_weights = nullptr);

AdamState make_adam(const GcnModel& model, double learning_rate);
void adam_step(GcnModel& model, AdamState& opt, const Gradients& grads);

struct PretrainOutcome {
    GcnModel model;
    double final_train_acc = 0.0;
    double best_val_acc = -1.0;  // -1 when no validation mask
};

// Full-batch Adam on the train mask; returns the best-validation-accuracy
// checkpoint when a validation mask is present, otherwise the final weights.
PretrainOutcome pretrain(GcnModel model, const Graph& g, const NormAdj& adj,
                         const DataSplit& split, std::size_t epochs, double learning_rate);

// Shannon entropy per row, natural log, 0*log(0) treated as 0.
std::vector<double> prediction_entropy(const Prediction& pred);

double accuracy(const Prediction& pred, const std::vector<int>& labels,
                const std::vector<bool>& mask);
std::vector<int> argmax_labels(const Prediction& pred);
std::vector<double> max_prob(const Prediction& pred);

void save_checkpoint(const GcnModel& model, const std::string& path);
GcnModel load_checkpoint(const std::string& path);

}  // namespace gttt

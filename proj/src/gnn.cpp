#include "gttt/gnn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "gttt/rng.hpp"

namespace gttt {

namespace {

void relu_inplace(Matrix& m) {
    for (double& v : m.data)
        if (v < 0.0) v = 0.0;
}

bool all_finite(const Matrix& m) {
    for (const double v : m.data)
        if (!std::isfinite(v)) return false;
    return true;
}

Matrix row_softmax(const Matrix& logits) {
    Matrix probs(logits.rows, logits.cols);
    for (std::size_t i = 0; i < logits.rows; ++i) {
        const double* in = logits.data.data() + i * logits.cols;
        double* out = probs.data.data() + i * logits.cols;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < logits.cols; ++j) mx = std::max(mx, in[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < logits.cols; ++j) {
            out[j] = std::exp(in[j] - mx);
            sum += out[j];
        }
        for (std::size_t j = 0; j < logits.cols; ++j) out[j] /= sum;
    }
    return probs;
}

struct ForwardCache {
    // propagated[l] = A_hat * H_{l-1} (input to layer l's linear map)
    std::vector<Matrix> propagated;
    std::vector<Matrix> pre_activation;
};

Matrix layer_output(const GcnModel& model, const NormAdj& adj, const Matrix& input,
                    std::size_t layer, ForwardCache* cache) {
    Matrix prop = adj.multiply(input);
    Matrix z = matmul(prop, model.layer_weights[layer]);
    const auto& bias = model.layer_biases[layer];
    for (std::size_t i = 0; i < z.rows; ++i)
        for (std::size_t j = 0; j < z.cols; ++j) z(i, j) += bias[j];
    if (cache) {
        cache->propagated.push_back(std::move(prop));
        cache->pre_activation.push_back(z);
    }
    return z;
}

Matrix run_layers(const GcnModel& model, const NormAdj& adj, const Matrix& features,
                  ForwardCache* cache) {
    Matrix h = features;
    for (std::size_t l = 0; l < model.num_layers(); ++l) {
        h = layer_output(model, adj, h, l, cache);
        if (!all_finite(h))
            throw std::runtime_error("forward: non-finite output at layer " + std::to_string(l));
        if (l + 1 < model.num_layers()) relu_inplace(h);
    }
    return h;
}

}  // namespace

GcnModel init_gcn(const std::vector<std::size_t>& dims, std::size_t frozen_prefix,
                  std::uint64_t seed) {
    if (dims.size() < 2) throw std::invalid_argument("init_gcn: need at least input and output dims");
    const std::size_t num_layers = dims.size() - 1;
    if (frozen_prefix >= num_layers)
        throw std::invalid_argument("init_gcn: frozen_prefix must be < number of layers");

    GcnModel model;
    model.frozen_prefix = frozen_prefix;
    Rng rng(derive_seed(seed, "glorot-init"));
    for (std::size_t l = 0; l < num_layers; ++l) {
        const std::size_t fan_in = dims[l], fan_out = dims[l + 1];
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        Matrix w(fan_in, fan_out);
        for (double& v : w.data) v = rng.uniform(-limit, limit);
        model.layer_weights.push_back(std::move(w));
        model.layer_biases.emplace_back(fan_out, 0.0);
    }
    return model;
}

Prediction forward(const GcnModel& model, const NormAdj& adj, const Matrix& features) {
    Prediction pred;
    pred.logits = run_layers(model, adj, features, nullptr);
    pred.probs = row_softmax(pred.logits);
    return pred;
}

double loss_ce(const Prediction& pred, const std::vector<int>& labels,
               const std::vector<bool>& mask) {
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (!mask[i]) continue;
        const double p = std::max(pred.probs(i, static_cast<std::size_t>(labels[i])), 1e-300);
        total += -std::log(p);
        ++count;
    }
    if (count == 0) throw std::invalid_argument("loss_ce: empty mask");
    return total / static_cast<double>(count);
}

Gradients backward(const GcnModel& model, const NormAdj& adj, const Matrix& features,
                   const std::vector<int>& labels, const std::vector<bool>& mask,
                   const std::vector<double>* per_node_weights) {
    const std::size_t num_layers = model.num_layers();
    if (per_node_weights) {
        if (per_node_weights->size() != mask.size())
            throw std::invalid_argument("backward: weight array size mismatch");
        for (const double w : *per_node_weights)
            if (w < 0.0) throw std::invalid_argument("backward: per-node weights must be >= 0");
    }
    std::size_t count = 0;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) ++count;
    if (count == 0) throw std::invalid_argument("backward: empty mask");

    ForwardCache cache;
    Matrix logits = run_layers(model, adj, features, &cache);
    Matrix probs = row_softmax(logits);

    // dL/dZ_L for L = (1/|mask|) * sum_i w_i * CE_i
    Matrix delta(probs.rows, probs.cols);
    const double scale = 1.0 / static_cast<double>(count);
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (!mask[i]) continue;
        const double w = per_node_weights ? (*per_node_weights)[i] : 1.0;
        if (w == 0.0) continue;
        for (std::size_t j = 0; j < probs.cols; ++j) delta(i, j) = w * scale * probs(i, j);
        delta(i, static_cast<std::size_t>(labels[i])) -= w * scale;
    }

    Gradients grads;
    grads.weight_grads.resize(num_layers);
    grads.bias_grads.resize(num_layers);
    for (std::size_t li = num_layers; li-- > 0;) {
        grads.weight_grads[li] = transpose_matmul(cache.propagated[li], delta);
        auto& db = grads.bias_grads[li];
        db.assign(delta.cols, 0.0);
        for (std::size_t i = 0; i < delta.rows; ++i)
            for (std::size_t j = 0; j < delta.cols; ++j) db[j] += delta(i, j);
        if (li == 0) break;
        // dH_{l-1} = A_hat^T * (delta * W_l^T); A_hat is symmetric.
        Matrix dprop = matmul_transpose(delta, model.layer_weights[li]);
        Matrix dh = adj.multiply(dprop);
        const Matrix& z_prev = cache.pre_activation[li - 1];
        for (std::size_t k = 0; k < dh.data.size(); ++k)
            if (z_prev.data[k] <= 0.0) dh.data[k] = 0.0;
        delta = std::move(dh);
    }
    for (std::size_t l = 0; l < model.frozen_prefix; ++l) {
        std::fill(grads.weight_grads[l].data.begin(), grads.weight_grads[l].data.end(), 0.0);
        std::fill(grads.bias_grads[l].begin(), grads.bias_grads[l].end(), 0.0);
    }
    return grads;
}

AdamState make_adam(const GcnModel& model, double learning_rate) {
    AdamState opt;
    opt.learning_rate = learning_rate;
    for (std::size_t l = 0; l < model.num_layers(); ++l) {
        opt.m_weights.emplace_back(model.layer_weights[l].rows, model.layer_weights[l].cols);
        opt.v_weights.emplace_back(model.layer_weights[l].rows, model.layer_weights[l].cols);
        opt.m_biases.emplace_back(model.layer_biases[l].size(), 0.0);
        opt.v_biases.emplace_back(model.layer_biases[l].size(), 0.0);
    }
    return opt;
}

void adam_step(GcnModel& model, AdamState& opt, const Gradients& grads) {
    ++opt.step;
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
    for (std::size_t l = model.frozen_prefix; l < model.num_layers(); ++l) {
        auto& w = model.layer_weights[l].data;
        auto& mw = opt.m_weights[l].data;
        auto& vw = opt.v_weights[l].data;
        const auto& gw = grads.weight_grads[l].data;
        for (std::size_t k = 0; k < w.size(); ++k) {
            mw[k] = opt.beta1 * mw[k] + (1.0 - opt.beta1) * gw[k];
            vw[k] = opt.beta2 * vw[k] + (1.0 - opt.beta2) * gw[k] * gw[k];
            w[k] -= opt.learning_rate * (mw[k] / bc1) / (std::sqrt(vw[k] / bc2) + opt.eps);
        }
        auto& b = model.layer_biases[l];
        auto& mb = opt.m_biases[l];
        auto& vb = opt.v_biases[l];
        const auto& gb = grads.bias_grads[l];
        for (std::size_t k = 0; k < b.size(); ++k) {
            mb[k] = opt.beta1 * mb[k] + (1.0 - opt.beta1) * gb[k];
            vb[k] = opt.beta2 * vb[k] + (1.0 - opt.beta2) * gb[k] * gb[k];
            b[k] -= opt.learning_rate * (mb[k] / bc1) / (std::sqrt(vb[k] / bc2) + opt.eps);
        }
    }
}

PretrainOutcome pretrain(GcnModel model, const Graph& g, const NormAdj& adj,
                         const DataSplit& split, std::size_t epochs, double learning_rate) {
    if (mask_count(split.train_mask) == 0)
        throw std::invalid_argument("pretrain: empty train mask");
    const bool has_val = mask_count(split.val_mask) > 0;

    PretrainOutcome out;
    AdamState opt = make_adam(model, learning_rate);
    GcnModel best = model;
    double best_val = -1.0;
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        Gradients grads = backward(model, adj, g.features, g.labels, split.train_mask);
        adam_step(model, opt, grads);
        Prediction pred = forward(model, adj, g.features);
        const double loss = loss_ce(pred, g.labels, split.train_mask);
        if (!std::isfinite(loss))
            throw std::runtime_error("pretrain: loss diverged at epoch " + std::to_string(epoch));
        if (has_val) {
            const double val_acc = accuracy(pred, g.labels, split.val_mask);
            if (val_acc > best_val) {
                best_val = val_acc;
                best = model;
            }
        }
    }
    if (has_val && epochs > 0) {
        out.model = std::move(best);
        out.best_val_acc = best_val;
    } else {
        out.model = std::move(model);
    }
    Prediction pred = forward(out.model, adj, g.features);
    out.final_train_acc = accuracy(pred, g.labels, split.train_mask);
    return out;
}

std::vector<double> prediction_entropy(const Prediction& pred) {
    std::vector<double> ent(pred.probs.rows, 0.0);
    for (std::size_t i = 0; i < pred.probs.rows; ++i) {
        double h = 0.0;
        for (std::size_t j = 0; j < pred.probs.cols; ++j) {
            const double p = pred.probs(i, j);
            if (p > 0.0) h -= p * std::log(p);
        }
        ent[i] = h;
    }
    return ent;
}

double accuracy(const Prediction& pred, const std::vector<int>& labels,
                const std::vector<bool>& mask) {
    std::size_t correct = 0, total = 0;
    const auto argmax = argmax_labels(pred);
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (!mask[i]) continue;
        ++total;
        if (argmax[i] == labels[i]) ++correct;
    }
    if (total == 0) throw std::invalid_argument("accuracy: empty mask");
    return static_cast<double>(correct) / static_cast<double>(total);
}

std::vector<int> argmax_labels(const Prediction& pred) {
    std::vector<int> out(pred.probs.rows, 0);
    for (std::size_t i = 0; i < pred.probs.rows; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < pred.probs.cols; ++j)
            if (pred.probs(i, j) > pred.probs(i, best)) best = j;
        out[i] = static_cast<int>(best);
    }
    return out;
}

std::vector<double> max_prob(const Prediction& pred) {
    std::vector<double> out(pred.probs.rows, 0.0);
    for (std::size_t i = 0; i < pred.probs.rows; ++i) {
        double mx = 0.0;
        for (std::size_t j = 0; j < pred.probs.cols; ++j) mx = std::max(mx, pred.probs(i, j));
        out[i] = mx;
    }
    return out;
}

void save_checkpoint(const GcnModel& model, const std::string& path) {
    nlohmann::json j;
    j["format_version"] = 1;
    j["frozen_prefix"] = model.frozen_prefix;
    std::vector<std::size_t> dims;
    dims.push_back(model.layer_weights.front().rows);
    for (const auto& w : model.layer_weights) dims.push_back(w.cols);
    j["layer_dims"] = dims;
    nlohmann::json layers = nlohmann::json::array();
    for (std::size_t l = 0; l < model.num_layers(); ++l) {
        nlohmann::json layer;
        layer["weights"] = model.layer_weights[l].data;  // row-major
        layer["bias"] = model.layer_biases[l];
        layers.push_back(std::move(layer));
    }
    j["layers"] = std::move(layers);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out << j.dump(2) << "\n";
}

GcnModel load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open checkpoint: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(path + ": invalid JSON: " + e.what());
    }
    if (j.value("format_version", 0) != 1)
        throw std::invalid_argument(path + ": unsupported checkpoint format version");
    GcnModel model;
    model.frozen_prefix = j.at("frozen_prefix").get<std::size_t>();
    const auto dims = j.at("layer_dims").get<std::vector<std::size_t>>();
    const auto& layers = j.at("layers");
    if (layers.size() + 1 != dims.size())
        throw std::invalid_argument(path + ": layer_dims inconsistent with layer count");
    for (std::size_t l = 0; l < layers.size(); ++l) {
        Matrix w(dims[l], dims[l + 1]);
        const auto vals = layers[l].at("weights").get<std::vector<double>>();
        if (vals.size() != w.data.size())
            throw std::invalid_argument(path + ": weight array size mismatch at layer " +
                                        std::to_string(l));
        w.data = vals;
        model.layer_weights.push_back(std::move(w));
        auto bias = layers[l].at("bias").get<std::vector<double>>();
        if (bias.size() != dims[l + 1])
            throw std::invalid_argument(path + ": bias size mismatch at layer " + std::to_string(l));
        model.layer_biases.push_back(std::move(bias));
    }
    if (model.frozen_prefix >= model.num_layers())
        throw std::invalid_argument(path + ": frozen_prefix out of range");
    return model;
}

}  // namespace gttt

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <filesystem>
#include <vector>

#include "gttt/gnn.hpp"
#include "gttt/graph.hpp"
#include "gttt/rng.hpp"

using namespace gttt;

namespace {

Graph path4() {
    Matrix feats(4, 3);
    double v = 0.3;
    for (double& x : feats.data) {
        x = std::sin(v) * 0.8;
        v += 0.7;
    }
    return build_graph(4, {{0, 1}, {1, 2}, {2, 3}}, feats, {0, 1, 2, 1}, {}, 3);
}

GcnModel fixed_two_layer(std::size_t d_in, std::size_t hidden, std::size_t classes) {
    GcnModel model;
    Matrix w1(d_in, hidden), w2(hidden, classes);
    for (std::size_t i = 0; i < w1.rows; ++i)
        for (std::size_t j = 0; j < w1.cols; ++j)
            w1(i, j) = 0.1 * static_cast<double>(i + 1) - 0.07 * static_cast<double>(j);
    for (std::size_t i = 0; i < w2.rows; ++i)
        for (std::size_t j = 0; j < w2.cols; ++j)
            w2(i, j) = 0.05 * static_cast<double>(j + 1) - 0.03 * static_cast<double>(i);
    model.layer_weights = {w1, w2};
    model.layer_biases = {std::vector<double>(hidden, 0.1), std::vector<double>(classes, -0.2)};
    return model;
}

// Dense reference forward pass, written against plain loops and an explicit
// dense normalized adjacency; shares nothing with the CSR implementation.
std::vector<std::vector<double>> dense_reference_logits(const Graph& g, const GcnModel& model) {
    const std::size_t n = g.num_nodes;
    std::vector<std::vector<double>> ahat(n, std::vector<double>(n, 0.0));
    for (std::size_t u = 0; u < n; ++u) {
        const double du = static_cast<double>(g.degree(u)) + 1.0;
        ahat[u][u] = 1.0 / du;
        for (std::size_t k = g.csr_offsets[u]; k < g.csr_offsets[u + 1]; ++k) {
            const std::size_t v = g.csr_targets[k];
            const double dv = static_cast<double>(g.degree(v)) + 1.0;
            ahat[u][v] = 1.0 / std::sqrt(du * dv);
        }
    }
    std::vector<std::vector<double>> h(n);
    for (std::size_t i = 0; i < n; ++i) {
        h[i].resize(g.features.cols);
        for (std::size_t j = 0; j < g.features.cols; ++j) h[i][j] = g.features(i, j);
    }
    for (std::size_t layer = 0; layer < model.num_layers(); ++layer) {
        const Matrix& w = model.layer_weights[layer];
        std::vector<std::vector<double>> prop(n, std::vector<double>(h[0].size(), 0.0));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < n; ++k)
                for (std::size_t j = 0; j < h[0].size(); ++j) prop[i][j] += ahat[i][k] * h[k][j];
        std::vector<std::vector<double>> z(n, std::vector<double>(w.cols, 0.0));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < w.cols; ++j) {
                double acc = model.layer_biases[layer][j];
                for (std::size_t k = 0; k < w.rows; ++k) acc += prop[i][k] * w(k, j);
                z[i][j] = acc;
            }
        if (layer + 1 < model.num_layers())
            for (auto& row : z)
                for (double& x : row) x = std::max(0.0, x);
        h = std::move(z);
    }
    return h;
}

Graph random_instance(std::size_t n, std::size_t feat_dim, int classes, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    for (std::size_t i = 1; i < n; ++i) edges.emplace_back(i, rng.uniform_index(i));
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t a = rng.uniform_index(n), b = rng.uniform_index(n);
        if (a != b) edges.emplace_back(a, b);
    }
    Matrix feats(n, feat_dim);
    for (double& x : feats.data) x = rng.normal();
    std::vector<int> labels(n);
    for (auto& l : labels) l = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(classes)));
    return build_graph(n, edges, feats, labels, {}, classes);
}

double weighted_loss(const GcnModel& model, const NormAdj& adj, const Graph& g,
                     const std::vector<bool>& mask, const std::vector<double>* weights) {
    const Prediction pred = forward(model, adj, g.features);
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (!mask[i]) continue;
        ++count;
        const double w = weights ? (*weights)[i] : 1.0;
        total += w * -std::log(std::max(pred.probs(i, static_cast<std::size_t>(g.labels[i])), 1e-300));
    }
    return total / static_cast<double>(count);
}

double finite_difference_check(GcnModel model, const Graph& g, const std::vector<bool>& mask,
                               const std::vector<double>* weights) {
    const NormAdj adj = normalize_adjacency(g);
    const Gradients grads = backward(model, adj, g.features, g.labels, mask, weights);
    const double h = 1e-5;
    double max_rel_err = 0.0;
    auto probe = [&](double& param, double analytic) {
        const double saved = param;
        param = saved + h;
        const double up = weighted_loss(model, adj, g, mask, weights);
        param = saved - h;
        const double down = weighted_loss(model, adj, g, mask, weights);
        param = saved;
        const double fd = (up - down) / (2.0 * h);
        const double denom = std::max({std::abs(fd), std::abs(analytic), 1e-6});
        max_rel_err = std::max(max_rel_err, std::abs(fd - analytic) / denom);
    };
    for (std::size_t l = model.frozen_prefix; l < model.num_layers(); ++l) {
        for (std::size_t k = 0; k < model.layer_weights[l].data.size(); ++k)
            probe(model.layer_weights[l].data[k], grads.weight_grads[l].data[k]);
        for (std::size_t k = 0; k < model.layer_biases[l].size(); ++k)
            probe(model.layer_biases[l][k], grads.bias_grads[l][k]);
    }
    return max_rel_err;
}

}  // namespace

TEST_CASE("forward on a single node with identity weights is softmax of features") {
    Matrix feats(1, 3);
    feats(0, 0) = 0.5;
    feats(0, 1) = -1.0;
    feats(0, 2) = 2.0;
    const Graph g = build_graph(1, {}, feats, {0}, {}, 3);
    GcnModel model;
    Matrix eye(3, 3);
    for (std::size_t i = 0; i < 3; ++i) eye(i, i) = 1.0;
    model.layer_weights = {eye};
    model.layer_biases = {std::vector<double>(3, 0.0)};

    const Prediction pred = forward(model, normalize_adjacency(g), g.features);
    double denom = 0.0;
    for (std::size_t j = 0; j < 3; ++j) denom += std::exp(feats(0, j));
    for (std::size_t j = 0; j < 3; ++j)
        CHECK(pred.probs(0, j) == doctest::Approx(std::exp(feats(0, j)) / denom).epsilon(1e-12));
}

TEST_CASE("forward with zero weights yields uniform class probabilities") {
    const Graph g = path4();
    GcnModel model;
    model.layer_weights = {Matrix(3, 4), Matrix(4, 3)};
    model.layer_biases = {std::vector<double>(4, 0.0), std::vector<double>(3, 0.0)};
    const Prediction pred = forward(model, normalize_adjacency(g), g.features);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            CHECK(pred.probs(i, j) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("forward matches an independent dense reference to 1e-10") {
    const Graph g = path4();
    const GcnModel model = fixed_two_layer(3, 5, 3);
    const Prediction pred = forward(model, normalize_adjacency(g), g.features);
    const auto reference = dense_reference_logits(g, model);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            CHECK(std::abs(pred.logits(i, j) - reference[i][j]) < 1e-10);
}

TEST_CASE("forward flags non-finite activations with the layer index") {
    const Graph g = path4();
    GcnModel model = fixed_two_layer(3, 5, 3);
    model.layer_weights[1](0, 0) = std::numeric_limits<double>::infinity();
    try {
        forward(model, normalize_adjacency(g), g.features);
        FAIL("expected numeric error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("layer 1") != std::string::npos);
    }
}

TEST_CASE("softmax rows sum to one") {
    const Graph g = random_instance(30, 5, 4, 77);
    const GcnModel model = init_gcn({5, 8, 4}, 0, 3);
    const Prediction pred = forward(model, normalize_adjacency(g), g.features);
    for (std::size_t i = 0; i < pred.probs.rows; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < pred.probs.cols; ++j) {
            row += pred.probs(i, j);
            CHECK(pred.probs(i, j) >= 0.0);
        }
        CHECK(std::abs(row - 1.0) < 1e-6);
    }
}

TEST_CASE("loss_ce scalar oracles") {
    Prediction pred;
    pred.probs = Matrix(3, 3);
    pred.probs(0, 0) = 1.0;
    for (std::size_t j = 0; j < 3; ++j) pred.probs(1, j) = 1.0 / 3.0;
    pred.probs(2, 0) = 0.7;
    pred.probs(2, 1) = 0.2;
    pred.probs(2, 2) = 0.1;
    const std::vector<int> labels{0, 2, 1};

    CHECK(loss_ce(pred, labels, {true, false, false}) == doctest::Approx(0.0));
    CHECK(loss_ce(pred, labels, {false, true, false}) ==
          doctest::Approx(std::log(3.0)).epsilon(1e-12));
    CHECK(loss_ce(pred, labels, {false, false, true}) ==
          doctest::Approx(-std::log(0.2)).epsilon(1e-12));
    CHECK(loss_ce(pred, labels, {false, false, true}) == doctest::Approx(1.6094).epsilon(1e-4));
    CHECK_THROWS_AS(loss_ce(pred, labels, {false, false, false}), std::invalid_argument);
}

TEST_CASE("backward with all-zero per-node weights returns zero gradients") {
    const Graph g = path4();
    const GcnModel model = fixed_two_layer(3, 5, 3);
    const std::vector<bool> mask(4, true);
    const std::vector<double> zeros(4, 0.0);
    const Gradients grads =
        backward(model, normalize_adjacency(g), g.features, g.labels, mask, &zeros);
    for (const auto& gw : grads.weight_grads)
        for (const double x : gw.data) CHECK(x == 0.0);
}

TEST_CASE("backward matches central finite differences on random instances") {
    double worst = 0.0;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        const Graph g = random_instance(20, 4, 3, seed);
        GcnModel model = init_gcn({4, 6, 3}, 0, seed + 100);
        std::vector<bool> mask(20, false);
        for (std::size_t i = 0; i < 20; i += 2) mask[i] = true;
        worst = std::max(worst, finite_difference_check(model, g, mask, nullptr));
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("backward matches finite differences with per-node weights") {
    const Graph g = random_instance(20, 4, 3, 5);
    GcnModel model = init_gcn({4, 6, 3}, 0, 500);
    std::vector<bool> mask(20, true);
    std::vector<double> weights(20);
    Rng rng(9);
    for (double& w : weights) w = rng.uniform01() * 2.0;
    const NormAdj adj = normalize_adjacency(g);
    CHECK(finite_difference_check(model, g, mask, &weights) < 1e-4);

    // Linearity: doubling all weights doubles every gradient entry.
    const Gradients g1 = backward(model, adj, g.features, g.labels, mask, &weights);
    std::vector<double> doubled = weights;
    for (double& w : doubled) w *= 2.0;
    const Gradients g2 = backward(model, adj, g.features, g.labels, mask, &doubled);
    for (std::size_t l = 0; l < model.num_layers(); ++l)
        for (std::size_t k = 0; k < g1.weight_grads[l].data.size(); ++k)
            CHECK(g2.weight_grads[l].data[k] ==
                  doctest::Approx(2.0 * g1.weight_grads[l].data[k]).epsilon(1e-12));
}

TEST_CASE("frozen prefix receives zero gradients and is never updated") {
    const Graph g = random_instance(15, 4, 3, 8);
    GcnModel model = init_gcn({4, 6, 3}, 1, 44);
    const NormAdj adj = normalize_adjacency(g);
    const std::vector<bool> mask(15, true);
    const Gradients grads = backward(model, adj, g.features, g.labels, mask);
    for (const double x : grads.weight_grads[0].data) CHECK(x == 0.0);
    for (const double x : grads.bias_grads[0]) CHECK(x == 0.0);

    const std::vector<double> before = model.layer_weights[0].data;
    AdamState opt = make_adam(model, 0.01);
    for (int step = 0; step < 5; ++step)
        adam_step(model, opt, backward(model, adj, g.features, g.labels, mask));
    CHECK(model.layer_weights[0].data == before);  // bit-identical
}

TEST_CASE("pretrain reaches high train accuracy on a separable SBM") {
    SbmParams params;
    params.block_sizes = {40, 40};
    params.p_intra = 0.15;
    params.p_inter = 0.02;
    params.class_means = Matrix(2, 4);
    params.class_means(0, 0) = 1.2;
    params.class_means(1, 1) = 1.2;
    params.noise_sigma = 0.4;
    const Graph g = generate_sbm(params, 21);
    SplitSpec spec;
    spec.criterion = DomainCriterion::Degree;
    const DataSplit split = make_ood_split(g, spec, {0.5, 0.2, 0.3}, 2);
    const NormAdj adj = normalize_adjacency(g);

    GcnModel model = init_gcn({4, 16, 2}, 0, 7);
    const PretrainOutcome outcome = pretrain(std::move(model), g, adj, split, 200, 0.01);
    CHECK(outcome.final_train_acc >= 0.95);
    CHECK(outcome.best_val_acc >= 0.5);
}

TEST_CASE("pretrain with zero epochs returns the initialization unchanged") {
    const Graph g = random_instance(12, 3, 2, 2);
    DataSplit split;
    split.train_mask.assign(12, true);
    split.val_mask.assign(12, false);
    split.test_mask.assign(12, false);
    const NormAdj adj = normalize_adjacency(g);
    const GcnModel init = init_gcn({3, 5, 2}, 0, 9);
    const PretrainOutcome outcome = pretrain(init, g, adj, split, 0, 0.01);
    for (std::size_t l = 0; l < init.num_layers(); ++l)
        CHECK(outcome.model.layer_weights[l].data == init.layer_weights[l].data);
}

TEST_CASE("pretrain is bit-deterministic for a fixed seed") {
    const Graph g = random_instance(25, 4, 3, 31);
    SplitSpec spec;
    spec.criterion = DomainCriterion::Degree;
    const DataSplit split = make_ood_split(g, spec, {0.6, 0.2, 0.2}, 4);
    const NormAdj adj = normalize_adjacency(g);
    const PretrainOutcome a = pretrain(init_gcn({4, 8, 3}, 0, 55), g, adj, split, 50, 0.01);
    const PretrainOutcome b = pretrain(init_gcn({4, 8, 3}, 0, 55), g, adj, split, 50, 0.01);
    for (std::size_t l = 0; l < a.model.num_layers(); ++l) {
        CHECK(a.model.layer_weights[l].data == b.model.layer_weights[l].data);
        CHECK(a.model.layer_biases[l] == b.model.layer_biases[l]);
    }
}

TEST_CASE("prediction_entropy scalar oracles") {
    Prediction pred;
    pred.probs = Matrix(3, 7);
    for (std::size_t j = 0; j < 7; ++j) pred.probs(0, j) = 1.0 / 7.0;
    pred.probs(1, 3) = 1.0;
    pred.probs(2, 0) = 0.5;
    pred.probs(2, 1) = 0.5;
    const auto ent = prediction_entropy(pred);
    CHECK(ent[0] == doctest::Approx(std::log(7.0)).epsilon(1e-12));
    CHECK(ent[0] == doctest::Approx(1.9459).epsilon(1e-4));
    CHECK(ent[1] == doctest::Approx(0.0));
    CHECK(ent[2] == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    // entropy stays within [0, ln C]
    const Graph g = random_instance(20, 4, 5, 3);
    const GcnModel model = init_gcn({4, 6, 5}, 0, 1);
    const auto ent2 = prediction_entropy(forward(model, normalize_adjacency(g), g.features));
    for (const double e : ent2) {
        CHECK(e >= 0.0);
        CHECK(e <= std::log(5.0) + 1e-9);
    }
}

TEST_CASE("checkpoint save/load round trip is exact") {
    const auto dir = std::filesystem::temp_directory_path() / "gttt_gnn_tests";
    std::filesystem::create_directories(dir);
    GcnModel model = init_gcn({4, 8, 3}, 1, 123);
    const std::string path = (dir / "ckpt.json").string();
    save_checkpoint(model, path);
    const GcnModel loaded = load_checkpoint(path);
    CHECK(loaded.frozen_prefix == model.frozen_prefix);
    REQUIRE(loaded.num_layers() == model.num_layers());
    for (std::size_t l = 0; l < model.num_layers(); ++l) {
        CHECK(loaded.layer_weights[l].data == model.layer_weights[l].data);
        CHECK(loaded.layer_biases[l] == model.layer_biases[l]);
    }
}

#include "gttt/cli.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "gttt/annotator.hpp"
#include "gttt/config.hpp"
#include "gttt/gnn.hpp"
#include "gttt/graph.hpp"
#include "gttt/rng.hpp"
#include "gttt/selection.hpp"
#include "gttt/ttt.hpp"

#include "gttt/bounds.hpp"

namespace fs = std::filesystem;

namespace gttt::cli {

namespace {

struct CommonOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    std::optional<std::int64_t> budget;
    bool pretrain_if_missing = false;
    std::string axis;
};

// ---------------------------------------------------------------------------
// Config assembly
// ---------------------------------------------------------------------------

struct RunSetup {
    Graph graph;
    DataSplit split;
    NormAdj adj;
    std::uint64_t root_seed = 0;
    std::string out_dir;
    // model
    std::vector<std::size_t> hidden_dims{64};
    std::size_t frozen_prefix = 1;
    std::size_t pretrain_epochs = 200;
    double pretrain_lr = 0.01;
    // selection
    SelectionConfig selection;
    std::string selection_strategy = "hybrid";
    // annotator
    std::string annotator_kind = "oracle";
    OracleConfig oracle;
    LlmEndpointConfig llm;
    std::string annotation_cache;
    // ttt
    TttConfig ttt;
    nlohmann::json echo;  // resolved settings, written into metrics
};

Graph dataset_from_config(const ConfigFile& cfg, std::uint64_t root_seed,
                          nlohmann::json& echo) {
    if (!cfg.has_section("dataset"))
        throw std::invalid_argument("config: missing [dataset] section");
    const std::string type = cfg.get_string("dataset", "type", "");
    const bool has_files = cfg.has("dataset", "node_file") || cfg.has("dataset", "edge_file");
    const bool has_sbm = cfg.has("dataset", "block_sizes");
    if (type.empty())
        throw std::invalid_argument("config: [dataset] type must be 'sbm' or 'files'");
    if ((type == "sbm" && has_files) || (type == "files" && has_sbm))
        throw std::invalid_argument("config: [dataset] must name exactly one source");

    echo["dataset"]["type"] = type;
    if (type == "files") {
        const std::string node_file = cfg.require_string("dataset", "node_file");
        const std::string edge_file = cfg.require_string("dataset", "edge_file");
        const auto classes = cfg.get_int("dataset", "classes", 0);
        echo["dataset"]["node_file"] = node_file;
        echo["dataset"]["edge_file"] = edge_file;
        return load_graph(node_file, edge_file, static_cast<int>(classes));
    }
    if (type != "sbm")
        throw std::invalid_argument("config: [dataset] type must be 'sbm' or 'files'");

    SbmParams params;
    const auto sizes = cfg.get_double_array("dataset", "block_sizes", {});
    if (sizes.empty()) throw std::invalid_argument("config: [dataset] block_sizes required for sbm");
    for (const double s : sizes) {
        if (s < 1.0 || s != std::floor(s))
            throw std::invalid_argument("config: [dataset] block_sizes must be positive integers");
        params.block_sizes.push_back(static_cast<std::size_t>(s));
    }
    params.p_intra = cfg.get_double("dataset", "p_intra", 0.1);
    params.p_inter = cfg.get_double("dataset", "p_inter", 0.01);
    params.noise_sigma = cfg.get_double("dataset", "noise_sigma", 0.5);
    const auto feature_dim =
        static_cast<std::size_t>(cfg.get_int("dataset", "feature_dim", 8));
    const std::size_t num_blocks = params.block_sizes.size();

    const auto flat_means = cfg.get_double_array("dataset", "class_means", {});
    params.class_means = Matrix(num_blocks, feature_dim);
    if (!flat_means.empty()) {
        if (flat_means.size() != num_blocks * feature_dim)
            throw std::invalid_argument(
                "config: [dataset] class_means must have block_count * feature_dim entries");
        params.class_means.data = flat_means;
    } else {
        const double scale = cfg.get_double("dataset", "mean_scale", 1.0);
        for (std::size_t c = 0; c < num_blocks; ++c)
            params.class_means(c, c % feature_dim) = scale;
    }

    echo["dataset"]["block_sizes"] = params.block_sizes;
    echo["dataset"]["p_intra"] = params.p_intra;
    echo["dataset"]["p_inter"] = params.p_inter;
    echo["dataset"]["noise_sigma"] = params.noise_sigma;
    echo["dataset"]["feature_dim"] = feature_dim;
    return generate_sbm(params, derive_seed(root_seed, "dataset"));
}

DataSplit split_from_config(const ConfigFile& cfg, const Graph& g, std::uint64_t root_seed,
                            nlohmann::json& echo) {
    SplitSpec spec;
    const std::string shift = cfg.get_string("split", "shift", "covariate");
    if (shift == "covariate") spec.shift = ShiftKind::Covariate;
    else if (shift == "concept") spec.shift = ShiftKind::Concept;
    else throw std::invalid_argument("config: [split] shift must be covariate|concept");
    const std::string criterion = cfg.get_string("split", "criterion", "degree");
    if (criterion == "degree") spec.criterion = DomainCriterion::Degree;
    else if (criterion == "word") spec.criterion = DomainCriterion::Word;
    else throw std::invalid_argument("config: [split] criterion must be degree|word");
    spec.word_feature_index =
        static_cast<std::size_t>(cfg.get_int("split", "word_feature_index", 0));
    spec.concept_kappa = cfg.get_double("split", "concept_kappa", 2.0);

    SplitRatios ratios;
    ratios.train = cfg.get_double("split", "train_ratio", 0.5);
    ratios.val = cfg.get_double("split", "val_ratio", 0.1);
    ratios.test = cfg.get_double("split", "test_ratio", 0.4);

    echo["split"] = {{"shift", shift},
                     {"criterion", criterion},
                     {"word_feature_index", spec.word_feature_index},
                     {"concept_kappa", spec.concept_kappa},
                     {"train_ratio", ratios.train},
                     {"val_ratio", ratios.val},
                     {"test_ratio", ratios.test}};
    return make_ood_split(g, spec, ratios, derive_seed(root_seed, "split"));
}

RunSetup load_setup(const ConfigFile& cfg, const CommonOptions& opts) {
    RunSetup setup;
    setup.root_seed = opts.seed ? *opts.seed
                                : static_cast<std::uint64_t>(cfg.get_int("run", "seed", 0));
    setup.out_dir = opts.out_dir ? *opts.out_dir : cfg.get_string("run", "out_dir", "out");
    setup.echo["run"]["seed"] = setup.root_seed;

    setup.graph = dataset_from_config(cfg, setup.root_seed, setup.echo);
    setup.split = split_from_config(cfg, setup.graph, setup.root_seed, setup.echo);
    setup.adj = normalize_adjacency(setup.graph);

    setup.hidden_dims.clear();
    for (const double h : cfg.get_double_array("model", "hidden_dims", {64.0})) {
        if (h < 1.0 || h != std::floor(h))
            throw std::invalid_argument("config: [model] hidden_dims must be positive integers");
        setup.hidden_dims.push_back(static_cast<std::size_t>(h));
    }
    setup.frozen_prefix = static_cast<std::size_t>(cfg.get_int("model", "frozen_prefix", 1));
    setup.pretrain_epochs = static_cast<std::size_t>(cfg.get_int("model", "pretrain_epochs", 200));
    setup.pretrain_lr = cfg.get_double("model", "pretrain_lr", 0.01);
    if (setup.frozen_prefix >= setup.hidden_dims.size() + 1)
        throw std::invalid_argument("config: [model] frozen_prefix must be < layer count");
    setup.echo["model"] = {{"hidden_dims", setup.hidden_dims},
                           {"frozen_prefix", setup.frozen_prefix},
                           {"pretrain_epochs", setup.pretrain_epochs},
                           {"pretrain_lr", setup.pretrain_lr}};

    const std::size_t test_size = mask_count(setup.split.test_mask);
    std::int64_t budget = opts.budget ? *opts.budget : cfg.get_int("selection", "budget", -1);
    if (budget < 0) budget = static_cast<std::int64_t>(default_budget(test_size));
    if (budget == 0)
        throw std::invalid_argument("config: annotation budget must be >= 1 (got 0)");
    setup.selection.budget = static_cast<std::size_t>(budget);
    setup.selection.beta = cfg.get_double("selection", "beta", 2.0);
    setup.selection.alpha = cfg.get_double("selection", "alpha", 1.0);
    setup.selection.pagerank_damping = cfg.get_double("selection", "pagerank_damping", 0.85);
    setup.selection.pagerank_tol = cfg.get_double("selection", "pagerank_tol", 1e-8);
    setup.selection.featprop_hops =
        static_cast<std::size_t>(cfg.get_int("selection", "featprop_hops", 2));
    setup.selection.seed = derive_seed(setup.root_seed, "selection");
    setup.selection_strategy = cfg.get_string("selection", "strategy", "hybrid");
    setup.echo["selection"] = {{"budget", setup.selection.budget},
                               {"beta", setup.selection.beta},
                               {"alpha", setup.selection.alpha},
                               {"pagerank_damping", setup.selection.pagerank_damping},
                               {"pagerank_tol", setup.selection.pagerank_tol},
                               {"featprop_hops", setup.selection.featprop_hops},
                               {"strategy", setup.selection_strategy}};

    setup.annotator_kind = cfg.get_string("annotator", "kind", "oracle");
    if (setup.annotator_kind != "oracle" && setup.annotator_kind != "llm")
        throw std::invalid_argument("config: [annotator] kind must be oracle|llm");
    setup.echo["annotator"]["kind"] = setup.annotator_kind;
    if (setup.annotator_kind == "oracle") {
        setup.oracle.accuracy = cfg.get_double("annotator", "accuracy", 1.0);
        const auto correct = cfg.get_double_array("annotator", "conf_correct", {70.0, 100.0});
        const auto wrong = cfg.get_double_array("annotator", "conf_wrong", {40.0, 90.0});
        if (correct.size() != 2 || wrong.size() != 2)
            throw std::invalid_argument("config: confidence ranges need [lo, hi]");
        setup.oracle.conf_correct_lo = correct[0];
        setup.oracle.conf_correct_hi = correct[1];
        setup.oracle.conf_wrong_lo = wrong[0];
        setup.oracle.conf_wrong_hi = wrong[1];
        setup.oracle.seed = derive_seed(setup.root_seed, "oracle");
        setup.echo["annotator"]["accuracy"] = setup.oracle.accuracy;
        setup.echo["annotator"]["conf_correct"] = correct;
        setup.echo["annotator"]["conf_wrong"] = wrong;
    } else {
        setup.llm.base_url = cfg.get_string("annotator", "base_url", "");
        setup.llm.api_key = cfg.get_string("annotator", "api_key", "");
        setup.llm.model = cfg.get_string("annotator", "model", "gpt-3.5-turbo-0613");
        setup.llm.kind =
            prompt_kind_from_string(cfg.get_string("annotator", "prompt", "few_shot"));
        setup.llm.max_retries = static_cast<int>(cfg.get_int("annotator", "max_retries", 2));
        setup.llm.workers = static_cast<std::size_t>(cfg.get_int("annotator", "workers", 4));
        setup.llm.timeout_seconds = cfg.get_double("annotator", "timeout_seconds", 30.0);
        setup.llm.backoff_seconds = cfg.get_double("annotator", "backoff_seconds", 0.2);
        setup.llm.categories = cfg.get_string_array("annotator", "categories", {});
        setup.llm.summary_cache_path = cfg.get_string("annotator", "summary_cache", "");
        setup.llm.seed = derive_seed(setup.root_seed, "llm");
        setup.echo["annotator"]["model"] = setup.llm.model;
        setup.echo["annotator"]["prompt"] = prompt_kind_to_string(setup.llm.kind);
        setup.echo["annotator"]["max_retries"] = setup.llm.max_retries;
        setup.echo["annotator"]["workers"] = setup.llm.workers;
    }
    setup.annotation_cache = cfg.get_string("annotator", "cache_file", "");

    setup.ttt.stage1_epochs = static_cast<std::size_t>(cfg.get_int("ttt", "stage1_epochs", 30));
    setup.ttt.stage2_epochs = static_cast<std::size_t>(cfg.get_int("ttt", "stage2_epochs", 30));
    setup.ttt.drop_edge_rate = cfg.get_double("ttt", "drop_edge_rate", 0.3);
    setup.ttt.learning_rate = cfg.get_double("ttt", "learning_rate", 0.001);
    setup.ttt.filter.gamma = cfg.get_double("ttt", "gamma", 0.5);
    setup.ttt.filter.keep_ratio = cfg.get_double("ttt", "keep_ratio", 0.8);
    setup.ttt.momentum = cfg.get_double("ttt", "momentum", 0.999);
    setup.ttt.lambda_max = cfg.get_double("ttt", "lambda_max", 1.0);
    setup.ttt.seed = derive_seed(setup.root_seed, "ttt");
    setup.echo["ttt"] = {{"stage1_epochs", setup.ttt.stage1_epochs},
                         {"stage2_epochs", setup.ttt.stage2_epochs},
                         {"drop_edge_rate", setup.ttt.drop_edge_rate},
                         {"learning_rate", setup.ttt.learning_rate},
                         {"gamma", setup.ttt.filter.gamma},
                         {"keep_ratio", setup.ttt.filter.keep_ratio},
                         {"momentum", setup.ttt.momentum},
                         {"lambda_max", setup.ttt.lambda_max}};
    return setup;
}

// Few-shot exemplars: the lowest-id train node of each class that has text.
std::vector<FewShotExample> shots_from_train(const Graph& g, const DataSplit& split,
                                             const std::vector<std::string>& categories) {
    std::vector<FewShotExample> shots;
    if (!g.has_texts()) return shots;
    std::vector<bool> covered(static_cast<std::size_t>(g.class_count), false);
    for (std::size_t v = 0; v < g.num_nodes; ++v) {
        if (!split.train_mask[v]) continue;
        const auto c = static_cast<std::size_t>(g.labels[v]);
        if (covered[c]) continue;
        covered[c] = true;
        shots.push_back({g.texts[v], categories[c]});
    }
    return shots;
}

std::vector<std::string> resolve_categories(const Graph& g, const std::vector<std::string>& cfg) {
    if (!cfg.empty()) {
        if (cfg.size() != static_cast<std::size_t>(g.class_count))
            throw std::invalid_argument("config: [annotator] categories must match class count");
        return cfg;
    }
    std::vector<std::string> cats;
    for (int c = 0; c < g.class_count; ++c) cats.push_back("class_" + std::to_string(c));
    return cats;
}

AnnotateFn make_annotator(RunSetup& setup, const GcnModel& pretrained, BudgetLedger& ledger,
                          std::vector<int>& fallback_labels, std::vector<double>& fallback_conf) {
    if (setup.annotator_kind == "oracle") {
        const Graph& g = setup.graph;
        const OracleConfig oracle = setup.oracle;
        const std::string cache = setup.annotation_cache;
        return [&g, oracle, &ledger, cache](const std::vector<std::size_t>& nodes) {
            auto records = annotate_oracle(nodes, g.labels, g.class_count, oracle, ledger);
            if (!cache.empty()) append_annotation_cache(cache, records);
            return records;
        };
    }
    setup.llm.categories = resolve_categories(setup.graph, setup.llm.categories);
    if (setup.llm.kind != PromptKind::ZeroShot && setup.llm.shots.empty())
        setup.llm.shots = shots_from_train(setup.graph, setup.split, setup.llm.categories);

    const Prediction pred = forward(pretrained, setup.adj, setup.graph.features);
    fallback_labels = argmax_labels(pred);
    fallback_conf = max_prob(pred);
    for (double& c : fallback_conf) c *= 100.0;

    const Graph& g = setup.graph;
    const LlmEndpointConfig llm = setup.llm;
    const std::string cache = setup.annotation_cache;
    return [&g, llm, &ledger, cache, &fallback_labels,
            &fallback_conf](const std::vector<std::size_t>& nodes) {
        auto batch = annotate_llm(nodes, g, llm, ledger, &fallback_labels, &fallback_conf);
        if (!cache.empty()) append_annotation_cache(cache, batch.records);
        return batch.records;
    };
}

nlohmann::json metrics_to_json(const Metrics& metrics, const RunSetup& setup) {
    nlohmann::json j;
    j["acc_pretrained"] = metrics.acc_pretrained;
    j["acc_stage1"] = metrics.acc_stage1;
    j["acc_stage2"] = metrics.acc_stage2;
    j["budget_used"] = metrics.budget_used;
    j["llm_agreement"] = metrics.llm_agreement;
    j["chosen_nodes"] = metrics.chosen_nodes;
    j["kept_nodes"] = metrics.kept_nodes;
    j["seed"] = setup.root_seed;
    j["config"] = setup.echo;
    if (metrics.failed) j["failure"] = metrics.failure;
    return j;
}

void write_json(const nlohmann::json& j, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

GcnModel pretrain_from_setup(const RunSetup& setup, PretrainOutcome* outcome_out = nullptr) {
    std::vector<std::size_t> dims;
    dims.push_back(setup.graph.features.cols);
    for (const std::size_t h : setup.hidden_dims) dims.push_back(h);
    dims.push_back(static_cast<std::size_t>(setup.graph.class_count));
    GcnModel model = init_gcn(dims, 0, derive_seed(setup.root_seed, "init"));
    PretrainOutcome outcome = pretrain(std::move(model), setup.graph, setup.adj, setup.split,
                                       setup.pretrain_epochs, setup.pretrain_lr);
    outcome.model.frozen_prefix = setup.frozen_prefix;
    if (outcome_out) {
        outcome_out->final_train_acc = outcome.final_train_acc;
        outcome_out->best_val_acc = outcome.best_val_acc;
    }
    return std::move(outcome.model);
}

int cmd_pretrain(const ConfigFile& cfg, const CommonOptions& opts) {
    RunSetup setup = load_setup(cfg, opts);
    fs::create_directories(setup.out_dir);

    PretrainOutcome stats;
    GcnModel model = pretrain_from_setup(setup, &stats);
    const std::string checkpoint = setup.out_dir + "/checkpoint.json";
    save_checkpoint(model, checkpoint);

    const Prediction pred = forward(model, setup.adj, setup.graph.features);
    nlohmann::json j;
    j["acc_train"] = accuracy(pred, setup.graph.labels, setup.split.train_mask);
    j["acc_val"] = stats.best_val_acc;
    j["acc_test"] = accuracy(pred, setup.graph.labels, setup.split.test_mask);
    j["epochs"] = setup.pretrain_epochs;
    j["checkpoint"] = "checkpoint.json";
    j["seed"] = setup.root_seed;
    j["config"] = setup.echo;
    write_json(j, setup.out_dir + "/pretrain_metrics.json");
    std::cout << "pretrain: train acc " << j["acc_train"] << ", test acc " << j["acc_test"]
              << ", checkpoint " << checkpoint << "\n";
    return 0;
}

int cmd_run(const ConfigFile& cfg, const CommonOptions& opts) {
    RunSetup setup = load_setup(cfg, opts);
    fs::create_directories(setup.out_dir);

    const std::string checkpoint = setup.out_dir + "/checkpoint.json";
    GcnModel model;
    if (fs::exists(checkpoint)) {
        model = load_checkpoint(checkpoint);
        model.frozen_prefix = setup.frozen_prefix;
    } else if (opts.pretrain_if_missing ||
               cfg.get_bool("run", "pretrain_if_missing", false)) {
        model = pretrain_from_setup(setup);
        save_checkpoint(model, checkpoint);
    } else {
        throw std::invalid_argument("no checkpoint at " + checkpoint +
                                    " (run `gttt pretrain` first or pass --pretrain)");
    }

    BudgetLedger ledger(setup.selection.budget);
    std::vector<int> fallback_labels;
    std::vector<double> fallback_conf;
    AnnotateFn annotate = make_annotator(setup, model, ledger, fallback_labels, fallback_conf);

    auto [adapted, metrics] = run_ttt_pipeline(model, setup.graph, setup.adj, setup.split,
                                         setup.selection, annotate, ledger, setup.ttt);
    write_json(metrics_to_json(metrics, setup), setup.out_dir + "/metrics.json");
    if (metrics.failed) {
        std::cerr << "run failed: " << metrics.failure << "\n";
        return 1;
    }
    save_checkpoint(adapted, setup.out_dir + "/adapted_checkpoint.json");
    std::cout << "run: acc " << metrics.acc_pretrained << " -> " << metrics.acc_stage1 << " -> "
              << metrics.acc_stage2 << " (budget used " << metrics.budget_used << ")\n";
    return 0;
}

std::vector<std::string> axis_values(const std::string& axis) {
    if (axis == "selection")
        return {"random", "density", "degree", "entropy", "pagerank", "featprop", "hybrid"};
    if (axis == "prompts") return {"zero_shot", "few_shot", "few_shot_gnn", "few_shot_2hop"};
    if (axis == "filter") return {"none", "conf_only", "conf_COE"};
    if (axis == "stages") return {"neither", "stage1_only", "stage2_only", "both"};
    if (axis == "oracle_acc") return {"0.6", "0.9", "1.0"};
    throw std::invalid_argument("unknown ablation axis '" + axis +
                                "' (expected selection|prompts|filter|stages|oracle_acc)");
}

int cmd_ablate(const ConfigFile& cfg, const CommonOptions& opts) {
    const auto values = axis_values(opts.axis);
    const auto num_seeds = static_cast<std::size_t>(cfg.get_int("ablate", "seeds", 5));
    if (num_seeds < 5)
        throw std::invalid_argument("config: [ablate] seeds must be >= 5");

    CommonOptions base_opts = opts;
    RunSetup probe = load_setup(cfg, base_opts);  // validates config up front
    if (opts.axis == "oracle_acc" && probe.annotator_kind != "oracle")
        throw std::invalid_argument("ablate oracle_acc requires the oracle annotator");
    fs::create_directories(probe.out_dir);
    const std::string csv_path = probe.out_dir + "/ablate_" + opts.axis + ".csv";
    std::ofstream csv(csv_path);
    if (!csv) throw std::runtime_error("cannot write " + csv_path);
    csv << "axis_value,seed,acc_stage1,acc_stage2\n";

    const std::uint64_t base_seed = probe.root_seed;
    for (std::size_t s = 0; s < num_seeds; ++s) {
        CommonOptions cell_opts = opts;
        cell_opts.seed = derive_seed(base_seed, "ablate-seed", s);
        RunSetup setup = load_setup(cfg, cell_opts);
        GcnModel pretrained = pretrain_from_setup(setup);

        for (const std::string& value : values) {
            try {
                RunSetup cell = setup;  // same data, same substreams
                if (opts.axis == "oracle_acc") cell.oracle.accuracy = std::stod(value);
                if (opts.axis == "prompts" && cell.annotator_kind == "llm")
                    cell.llm.kind = prompt_kind_from_string(value);
                if (opts.axis == "filter") {
                    if (value == "none") {
                        cell.ttt.filter.gamma = 0.0;
                        cell.ttt.filter.keep_ratio = 1.0;
                    } else if (value == "conf_only") {
                        cell.ttt.filter.gamma = 0.0;
                    }
                }
                if (opts.axis == "stages") {
                    if (value == "neither" || value == "stage2_only") cell.ttt.stage1_epochs = 0;
                    if (value == "neither" || value == "stage1_only") cell.ttt.stage2_epochs = 0;
                }

                BudgetLedger ledger(cell.selection.budget);
                std::vector<int> fallback_labels;
                std::vector<double> fallback_conf;
                AnnotateFn annotate =
                    make_annotator(cell, pretrained, ledger, fallback_labels, fallback_conf);

                Metrics metrics;
                if (opts.axis == "selection" && value != "hybrid") {
                    const Prediction pred = forward(pretrained, cell.adj, cell.graph.features);
                    const auto chosen = baseline_select(
                        baseline_kind_from_string(value), cell.graph, pred, cell.split.test_mask,
                        cell.selection.budget, cell.selection.seed);
                    metrics = adapt_chosen(pretrained, cell.graph, cell.adj, cell.split, chosen,
                                           annotate, ledger, cell.ttt)
                                  .second;
                } else {
                    metrics = run_ttt_pipeline(pretrained, cell.graph, cell.adj, cell.split,
                                         cell.selection, annotate, ledger, cell.ttt)
                                  .second;
                }
                if (metrics.failed) throw std::runtime_error(metrics.failure);
                csv << value << "," << *cell_opts.seed << "," << metrics.acc_stage1 << ","
                    << metrics.acc_stage2 << "\n";
            } catch (const std::exception& e) {
                std::cerr << "ablate cell (" << value << ", seed " << s << ") failed: " << e.what()
                          << "\n";
                csv << value << "," << *cell_opts.seed << ",NA,NA\n";
            }
        }
    }
    std::cout << "ablate: wrote " << csv_path << "\n";
    return 0;
}

int cmd_bounds(const ConfigFile& cfg, const CommonOptions& opts) {
    const std::string out_dir =
        opts.out_dir ? *opts.out_dir : cfg.get_string("run", "out_dir", "out");
    fs::create_directories(out_dir);

    BoundInputs inputs;
    inputs.dhat = cfg.get_double("theorem1", "dhat", 0.5);
    inputs.m = static_cast<std::size_t>(cfg.get_int("theorem1", "m", 1000));
    inputs.d = static_cast<std::size_t>(cfg.get_int("theorem1", "d", 3));
    inputs.delta = cfg.get_double("theorem1", "delta", 0.05);
    inputs.eps_joint = cfg.get_double("theorem1", "eps_joint", 0.05);
    const auto omega = cfg.get_double_array("theorem1", "omega", {0.5, 0.5});
    const auto lambda = cfg.get_double_array("theorem1", "lambda", {0.5, 0.5});
    if (omega.size() != 2 || lambda.size() != 2)
        throw std::invalid_argument("config: [theorem1] omega and lambda must have 2 entries");
    inputs.omega[0] = omega[0];
    inputs.omega[1] = omega[1];
    inputs.lambda[0] = lambda[0];
    inputs.lambda[1] = lambda[1];
    inputs.total_samples = static_cast<std::size_t>(cfg.get_int("theorem1", "N", 500));
    inputs.domain_j = static_cast<std::size_t>(cfg.get_int("theorem1", "j", 1));

    const double A = cfg.get_double("theorem2", "A", 1.0);
    const double M = cfg.get_double("theorem2", "M", 1.0);
    const double lambda0 = cfg.get_double("theorem2", "lambda0", 0.5);
    const auto grid = static_cast<std::size_t>(cfg.get_int("theorem2", "grid", 101));

    nlohmann::json report;
    report["inputs"] = {{"dhat", inputs.dhat},
                        {"m", inputs.m},
                        {"d", inputs.d},
                        {"delta", inputs.delta},
                        {"eps_joint", inputs.eps_joint},
                        {"omega", omega},
                        {"lambda", lambda},
                        {"N", inputs.total_samples},
                        {"j", inputs.domain_j},
                        {"A", A},
                        {"M", M},
                        {"lambda0", lambda0},
                        {"grid", grid}};
    report["theorem1"] = theorem1_bound(inputs);

    const Theorem2Result t2 = theorem2_check(A, M, lambda0, grid);
    nlohmann::json curve = nlohmann::json::array();
    for (const auto& [w0, bound] : t2.curve) curve.push_back({w0, bound});
    report["test_domain_curve"] = std::move(curve);
    report["theorem2"] = {{"min", t2.min_bound},
                          {"omega0_at_min", t2.omega0_at_min},
                          {"ftt", t2.ftt_bound},
                          {"holds", t2.holds}};

    if (cfg.has_section("lemma2")) {
        const auto lomega = cfg.get_double_array("lemma2", "omega", {0.5, 0.5});
        const auto llambda = cfg.get_double_array("lemma2", "lambda", {0.5, 0.5});
        if (lomega.size() != 2 || llambda.size() != 2)
            throw std::invalid_argument("config: [lemma2] omega and lambda must have 2 entries");
        const double lo[2] = {lomega[0], lomega[1]};
        const double ll[2] = {llambda[0], llambda[1]};
        const auto n = static_cast<std::size_t>(cfg.get_int("lemma2", "N", 200));
        const double eps = cfg.get_double("lemma2", "eps", 0.1);
        const auto trials = static_cast<std::size_t>(cfg.get_int("lemma2", "trials", 10000));
        const auto seed = static_cast<std::uint64_t>(cfg.get_int("lemma2", "seed", 0));
        const auto mc = lemma2_montecarlo(lo, ll, n, eps, trials, seed);
        report["lemma2"] = {{"violation_rate", mc.violation_rate},
                            {"analytic_bound", mc.analytic_bound},
                            {"trials", mc.trials}};
    }

    write_json(report, out_dir + "/bound_report.json");
    std::cout << "bounds: theorem2 min " << t2.min_bound << " vs ftt " << t2.ftt_bound
              << " -> holds=" << (t2.holds ? "true" : "false") << "\n";
    return t2.holds ? 0 : 1;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"LLM-annotated test-time training for graph node classification"};
    app.require_subcommand(1);

    CommonOptions opts;
    std::uint64_t seed_value = 0;
    std::string out_value;
    std::int64_t budget_value = 0;
    auto add_common = [&](CLI::App* sub, bool with_budget) {
        sub->add_option("--config", opts.config_path, "TOML-style config file")->required();
        sub->add_option("--seed", seed_value, "root seed override");
        sub->add_option("--out", out_value, "output directory override");
        if (with_budget) sub->add_option("--budget", budget_value, "annotation budget override");
    };

    CLI::App* pre = app.add_subcommand("pretrain", "train the classifier on the train split");
    add_common(pre, false);
    CLI::App* run = app.add_subcommand("run", "full selection/annotation/adaptation pipeline");
    add_common(run, true);
    run->add_flag("--pretrain", opts.pretrain_if_missing, "pretrain when no checkpoint exists");
    CLI::App* ablate = app.add_subcommand("ablate", "sweep one experiment axis over seeds");
    add_common(ablate, true);
    ablate->add_option("--axis", opts.axis, "selection|prompts|filter|stages|oracle_acc")
        ->required();
    CLI::App* bounds = app.add_subcommand("bounds", "evaluate the generalization bounds");
    add_common(bounds, false);

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        app.exit(e);
        return 2;
    }

    CLI::App* active = app.get_subcommands().front();
    if (active->count("--seed")) opts.seed = seed_value;
    if (active->count("--out")) opts.out_dir = out_value;
    if (active->get_option_no_throw("--budget") && active->count("--budget"))
        opts.budget = budget_value;

    try {
        const ConfigFile cfg = ConfigFile::parse_file(opts.config_path);
        if (app.got_subcommand("pretrain")) return cmd_pretrain(cfg, opts);
        if (app.got_subcommand("run")) return cmd_run(cfg, opts);
        if (app.got_subcommand("ablate")) return cmd_ablate(cfg, opts);
        if (app.got_subcommand("bounds")) return cmd_bounds(cfg, opts);
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace gttt::cli

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "gttt/cli.hpp"
#include "gttt/config.hpp"

using namespace gttt;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "gttt_cli_tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::string benchmark_config(const fs::path& out_dir) {
    std::ostringstream cfg;
    cfg << "[run]\n"
        << "seed = 5\n"
        << "out_dir = \"" << out_dir.string() << "\"\n"
        << "pretrain_if_missing = true\n"
        << "\n"
        << "[dataset]\n"
        << "type = \"sbm\"\n"
        << "block_sizes = [40, 40]\n"
        << "p_intra = 0.2\n"
        << "p_inter = 0.12\n"
        << "feature_dim = 6\n"
        << "class_means = [0.6, 0, 0, 0, 0, 0, 0, 0.6, 0, 0, 0, 0.9]\n"
        << "noise_sigma = 0.5\n"
        << "\n"
        << "[split]\n"
        << "shift = \"covariate\"\n"
        << "criterion = \"word\"\n"
        << "word_feature_index = 5\n"
        << "train_ratio = 0.5\n"
        << "val_ratio = 0.0\n"
        << "test_ratio = 0.4\n"
        << "\n"
        << "[model]\n"
        << "hidden_dims = [16]\n"
        << "frozen_prefix = 1\n"
        << "pretrain_epochs = 60\n"
        << "\n"
        << "[selection]\n"
        << "budget = 6\n"
        << "\n"
        << "[annotator]\n"
        << "kind = \"oracle\"\n"
        << "accuracy = 0.9\n"
        << "\n"
        << "[ttt]\n"
        << "stage1_epochs = 10\n"
        << "stage2_epochs = 5\n"
        << "\n"
        << "[ablate]\n"
        << "seeds = 5\n";
    return cfg.str();
}

fs::path write_config(const fs::path& dir, const std::string& content) {
    const auto path = dir / "config.toml";
    std::ofstream out(path);
    out << content;
    return path;
}

}  // namespace

TEST_CASE("config parser handles sections, scalars and arrays") {
    const ConfigFile cfg = ConfigFile::parse_string(
        "# comment\n"
        "[alpha]\n"
        "name = \"hello world\"\n"
        "count = 12\n"
        "rate = 0.25  # trailing comment\n"
        "flag = true\n"
        "values = [1, 2, 3.5]\n"
        "names = [\"a\", \"b\"]\n");
    CHECK(cfg.get_string("alpha", "name", "") == "hello world");
    CHECK(cfg.get_int("alpha", "count", 0) == 12);
    CHECK(cfg.get_double("alpha", "rate", 0.0) == doctest::Approx(0.25));
    CHECK(cfg.get_bool("alpha", "flag", false));
    CHECK(cfg.get_double_array("alpha", "values", {}) == std::vector<double>{1.0, 2.0, 3.5});
    CHECK(cfg.get_string_array("alpha", "names", {}) == std::vector<std::string>{"a", "b"});
    CHECK(cfg.get_int("alpha", "missing", 42) == 42);
    CHECK_THROWS_AS(cfg.require_string("alpha", "missing"), std::invalid_argument);
    CHECK_THROWS_AS(cfg.get_int("alpha", "rate", 0), std::invalid_argument);
}

TEST_CASE("config parser reports malformed lines with locations") {
    try {
        ConfigFile::parse_string("[s]\nkey value\n", "test.toml");
        FAIL("expected parse error");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("test.toml:2") != std::string::npos);
    }
}

TEST_CASE("missing config file exits with code 2") {
    CHECK(cli::run_cli({"pretrain", "--config", "/nonexistent/nowhere.toml"}) == 2);
}

TEST_CASE("pretrain writes a checkpoint and metrics") {
    const auto dir = fresh_dir("pretrain");
    const auto cfg = write_config(dir, benchmark_config(dir / "out"));
    CHECK(cli::run_cli({"pretrain", "--config", cfg.string()}) == 0);
    CHECK(fs::exists(dir / "out" / "checkpoint.json"));

    const auto metrics = nlohmann::json::parse(read_file(dir / "out" / "pretrain_metrics.json"));
    CHECK(metrics.contains("acc_train"));
    CHECK(metrics.contains("acc_test"));
    CHECK(metrics["acc_train"].get<double>() > 0.5);
}

TEST_CASE("pretrain is byte-deterministic across reruns") {
    const auto dir_a = fresh_dir("pretrain_a");
    const auto dir_b = fresh_dir("pretrain_b");
    const auto cfg_a = write_config(dir_a, benchmark_config(dir_a / "out"));
    const auto cfg_b = write_config(dir_b, benchmark_config(dir_b / "out"));
    REQUIRE(cli::run_cli({"pretrain", "--config", cfg_a.string()}) == 0);
    REQUIRE(cli::run_cli({"pretrain", "--config", cfg_b.string()}) == 0);
    CHECK(read_file(dir_a / "out" / "checkpoint.json") ==
          read_file(dir_b / "out" / "checkpoint.json"));
}

TEST_CASE("run produces metrics with the expected fields and budget bound") {
    const auto dir = fresh_dir("run");
    const auto cfg = write_config(dir, benchmark_config(dir / "out"));
    CHECK(cli::run_cli({"run", "--config", cfg.string()}) == 0);

    const auto metrics = nlohmann::json::parse(read_file(dir / "out" / "metrics.json"));
    CHECK(metrics.contains("acc_pretrained"));
    CHECK(metrics.contains("acc_stage1"));
    CHECK(metrics.contains("acc_stage2"));
    CHECK(metrics.contains("llm_agreement"));
    CHECK(metrics.contains("config"));
    CHECK(metrics["seed"].get<std::uint64_t>() == 5);
    CHECK(metrics["budget_used"].get<std::size_t>() <= 6);
    CHECK(metrics["chosen_nodes"].size() == 6);
    CHECK(fs::exists(dir / "out" / "adapted_checkpoint.json"));
}

TEST_CASE("run twice yields byte-identical metrics") {
    const auto dir = fresh_dir("run_det");
    const auto cfg = write_config(dir, benchmark_config(dir / "out"));
    REQUIRE(cli::run_cli({"run", "--config", cfg.string()}) == 0);
    const std::string first = read_file(dir / "out" / "metrics.json");
    REQUIRE(cli::run_cli({"run", "--config", cfg.string()}) == 0);
    CHECK(first == read_file(dir / "out" / "metrics.json"));
}

TEST_CASE("run with a zero budget is a config error") {
    const auto dir = fresh_dir("run_zero");
    const auto cfg = write_config(dir, benchmark_config(dir / "out"));
    CHECK(cli::run_cli({"run", "--config", cfg.string(), "--budget", "0"}) == 2);
}

TEST_CASE("run without a checkpoint demands the pretrain flag") {
    const auto dir = fresh_dir("run_nockpt");
    std::string cfg_text = benchmark_config(dir / "out");
    const auto pos = cfg_text.find("pretrain_if_missing = true");
    cfg_text.replace(pos, std::string("pretrain_if_missing = true").size(),
                     "pretrain_if_missing = false");
    const auto cfg = write_config(dir, cfg_text);
    CHECK(cli::run_cli({"run", "--config", cfg.string()}) == 2);
    CHECK(cli::run_cli({"run", "--config", cfg.string(), "--pretrain"}) == 0);
}

TEST_CASE("ablate over stages emits the four-variant sweep") {
    const auto dir = fresh_dir("ablate_stages");
    const auto cfg = write_config(dir, benchmark_config(dir / "out"));
    CHECK(cli::run_cli({"ablate", "--config", cfg.string(), "--axis", "stages"}) == 0);

    std::ifstream csv(dir / "out" / "ablate_stages.csv");
    REQUIRE(csv.good());
    std::string header;
    std::getline(csv, header);
    CHECK(header == "axis_value,seed,acc_stage1,acc_stage2");
    std::size_t rows = 0;
    std::set<std::string> values;
    std::string line;
    while (std::getline(csv, line)) {
        if (line.empty()) continue;
        ++rows;
        values.insert(line.substr(0, line.find(',')));
        CHECK(line.find("NA") == std::string::npos);
    }
    CHECK(rows == 4 * 5);  // variants x seeds
    CHECK(values == std::set<std::string>{"neither", "stage1_only", "stage2_only", "both"});
}

TEST_CASE("ablate over oracle accuracy sweeps the three levels") {
    const auto dir = fresh_dir("ablate_oracle");
    const auto cfg = write_config(dir, benchmark_config(dir / "out"));
    CHECK(cli::run_cli({"ablate", "--config", cfg.string(), "--axis", "oracle_acc"}) == 0);
    std::ifstream csv(dir / "out" / "ablate_oracle_acc.csv");
    REQUIRE(csv.good());
    std::string line;
    std::getline(csv, line);  // header
    std::set<std::string> values;
    std::size_t rows = 0;
    while (std::getline(csv, line)) {
        if (line.empty()) continue;
        ++rows;
        values.insert(line.substr(0, line.find(',')));
    }
    CHECK(rows == 3 * 5);
    CHECK(values == std::set<std::string>{"0.6", "0.9", "1.0"});
}

TEST_CASE("ablate covers every selection strategy") {
    const auto dir = fresh_dir("ablate_selection");
    const auto cfg = write_config(dir, benchmark_config(dir / "out"));
    CHECK(cli::run_cli({"ablate", "--config", cfg.string(), "--axis", "selection"}) == 0);
    std::ifstream csv(dir / "out" / "ablate_selection.csv");
    REQUIRE(csv.good());
    std::string line;
    std::getline(csv, line);  // header
    std::set<std::string> values;
    while (std::getline(csv, line))
        if (!line.empty()) values.insert(line.substr(0, line.find(',')));
    CHECK(values == std::set<std::string>{"random", "density", "degree", "entropy", "pagerank",
                                          "featprop", "hybrid"});
}

TEST_CASE("ablate sweeps the filter variants") {
    const auto dir = fresh_dir("ablate_filter");
    const auto cfg = write_config(dir, benchmark_config(dir / "out"));
    CHECK(cli::run_cli({"ablate", "--config", cfg.string(), "--axis", "filter"}) == 0);
    std::ifstream csv(dir / "out" / "ablate_filter.csv");
    REQUIRE(csv.good());
    std::string line;
    std::getline(csv, line);
    std::set<std::string> values;
    std::size_t rows = 0;
    while (std::getline(csv, line)) {
        if (line.empty()) continue;
        ++rows;
        values.insert(line.substr(0, line.find(',')));
    }
    CHECK(rows == 3 * 5);
    CHECK(values == std::set<std::string>{"none", "conf_only", "conf_COE"});
}

TEST_CASE("ablate rejects unknown axes") {
    const auto dir = fresh_dir("ablate_bad");
    const auto cfg = write_config(dir, benchmark_config(dir / "out"));
    CHECK(cli::run_cli({"ablate", "--config", cfg.string(), "--axis", "nonsense"}) == 2);
}

TEST_CASE("bounds command writes a report and succeeds on defaults") {
    const auto dir = fresh_dir("bounds");
    const auto cfg = write_config(dir,
                                  "[run]\nout_dir = \"" + (dir / "out").string() +
                                      "\"\n\n[theorem2]\nA = 1.0\nM = 1.0\nlambda0 = 0.5\n"
                                      "grid = 41\n\n[lemma2]\nN = 150\neps = 0.12\n"
                                      "trials = 2000\n");
    CHECK(cli::run_cli({"bounds", "--config", cfg.string()}) == 0);

    const auto report = nlohmann::json::parse(read_file(dir / "out" / "bound_report.json"));
    CHECK(report.contains("inputs"));
    CHECK(report.contains("theorem1"));
    CHECK(report["theorem2"]["holds"].get<bool>());
    CHECK(report["test_domain_curve"].size() >= 41);
    CHECK(report["lemma2"]["violation_rate"].get<double>() <=
          report["lemma2"]["analytic_bound"].get<double>() + 0.05);
}

TEST_CASE("bounds command rejects degenerate lambda0") {
    const auto dir = fresh_dir("bounds_bad");
    const auto cfg = write_config(
        dir, "[run]\nout_dir = \"" + (dir / "out").string() + "\"\n\n[theorem2]\nlambda0 = 1.0\n");
    CHECK(cli::run_cli({"bounds", "--config", cfg.string()}) == 2);
}

TEST_CASE("config validation failures exit with code 2") {
    const auto dir = fresh_dir("bad_config");
    const auto cfg = write_config(dir, "[dataset]\ntype = \"martian\"\n");
    CHECK(cli::run_cli({"run", "--config", cfg.string()}) == 2);
}

TEST_CASE("run drives the full pipeline against a mock chat endpoint") {
    // Text-attributed dataset on disk, LLM annotator pointed at a local mock.
    const auto dir = fresh_dir("run_llm");
    {
        std::ofstream nodes(dir / "nodes.csv");
        nodes << "id,label,feat_0,feat_1,text\n";
        for (int i = 0; i < 24; ++i) {
            const int label = i % 2;
            nodes << i << "," << label << "," << (label ? 1.0 : -1.0) + 0.1 * i << ","
                  << 0.05 * i << ",node " << i << " about topic " << label << "\n";
        }
        std::ofstream edges(dir / "edges.csv");
        edges << "src,dst\n";
        for (int i = 0; i + 1 < 24; ++i) edges << i << "," << i + 1 << "\n";
    }

    httplib::Server server;
    std::atomic<int> requests{0};
    server.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
        requests.fetch_add(1);
        nlohmann::json body;
        body["choices"] = nlohmann::json::array(
            {{{"message",
               {{"role", "assistant"},
                {"content", "[{\"answer\": \"beta\", \"confidence\": 80}]"}}}}});
        res.set_content(body.dump(), "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    std::thread listener([&]() { server.listen_after_bind(); });
    server.wait_until_ready();

    std::ostringstream cfg;
    cfg << "[run]\nseed = 3\nout_dir = \"" << (dir / "out").string() << "\"\n"
        << "pretrain_if_missing = true\n\n"
        << "[dataset]\ntype = \"files\"\n"
        << "node_file = \"" << (dir / "nodes.csv").string() << "\"\n"
        << "edge_file = \"" << (dir / "edges.csv").string() << "\"\n\n"
        << "[split]\nshift = \"covariate\"\ncriterion = \"degree\"\n"
        << "train_ratio = 0.5\nval_ratio = 0.0\ntest_ratio = 0.4\n\n"
        << "[model]\nhidden_dims = [8]\nfrozen_prefix = 1\npretrain_epochs = 30\n\n"
        << "[selection]\nbudget = 3\n\n"
        << "[annotator]\nkind = \"llm\"\nbase_url = \"http://127.0.0.1:" << port << "\"\n"
        << "prompt = \"few_shot\"\ncategories = [\"alpha\", \"beta\"]\n"
        << "cache_file = \"" << (dir / "annotations.jsonl").string() << "\"\nworkers = 2\n\n"
        << "[ttt]\nstage1_epochs = 5\nstage2_epochs = 2\n";
    const auto cfg_path = write_config(dir, cfg.str());

    const int rc = cli::run_cli({"run", "--config", cfg_path.string()});
    server.stop();
    listener.join();
    CHECK(rc == 0);
    CHECK(requests.load() == 3);  // exactly the budget

    const auto metrics = nlohmann::json::parse(read_file(dir / "out" / "metrics.json"));
    CHECK(metrics["budget_used"].get<std::size_t>() == 3);
    CHECK(metrics["config"]["annotator"]["kind"].get<std::string>() == "llm");

    // cache records carry provenance and the raw payload
    std::ifstream cache(dir / "annotations.jsonl");
    REQUIRE(cache.good());
    std::string line;
    std::size_t cached = 0;
    while (std::getline(cache, line)) {
        if (line.empty()) continue;
        ++cached;
        const auto rec = nlohmann::json::parse(line);
        CHECK(rec["provenance"].get<std::string>() == "llm");
        CHECK(rec["pseudo_label"].get<int>() == 1);  // "beta"
    }
    CHECK(cached == 3);
}

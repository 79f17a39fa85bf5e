#pragma once

#include <atomic>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gttt/graph.hpp"

namespace gttt {

enum class Provenance { Oracle, Llm };

struct AnnotationRecord {
    std::size_t node_id = 0;
    int pseudo_label = 0;
    double confidence = 0.0;  // in [0, 100]
    Provenance provenance = Provenance::Oracle;
    std::string raw_response;  // empty for oracle annotations
};

// Simulated annotator: hits the true label with probability `accuracy`
// (exact perturbation count per batch), otherwise a uniformly drawn wrong
// label. Confidence ranges are configurable so calibration studies stay
// possible.
struct OracleConfig {
    double accuracy = 1.0;
    double conf_correct_lo = 70.0, conf_correct_hi = 100.0;
    double conf_wrong_lo = 40.0, conf_wrong_hi = 90.0;
    std::uint64_t seed = 0;
};

// Monotone annotation budget. `used` never decreases and never exceeds the
// budget, including under concurrent acquisition.
class BudgetLedger {
  public:
    explicit BudgetLedger(std::size_t budget) : budget_(budget) {}

    // Reserves n annotations; returns false (and reserves nothing) if that
    // would overshoot the budget.
    bool try_acquire(std::size_t n = 1);

    std::size_t budget() const { return budget_; }
    std::size_t used() const { return used_.load(); }
    std::size_t token_estimate() const { return tokens_.load(); }
    void add_tokens(std::size_t n) { tokens_.fetch_add(n); }

  private:
    std::size_t budget_;
    std::atomic<std::size_t> used_{0};
    std::atomic<std::size_t> tokens_{0};
};

std::vector<AnnotationRecord> annotate_oracle(const std::vector<std::size_t>& nodes,
                                              const std::vector<int>& labels_true,
                                              int class_count, const OracleConfig& cfg,
                                              BudgetLedger& ledger);

enum class PromptKind { ZeroShot, FewShot, FewShotGnn, FewShotTwoHop };

PromptKind prompt_kind_from_string(const std::string& name);
std::string prompt_kind_to_string(PromptKind kind);

struct FewShotExample {
    std::string text;
    std::string category;
};

struct GnnHint {
    std::string label;
    double confidence = 0.0;  // in [0, 100]
};

std::string build_prompt(PromptKind kind, const std::string& node_text,
                         const std::vector<std::string>& categories,
                         const std::vector<FewShotExample>& shots,
                         const GnnHint* gnn_hint = nullptr,
                         const std::string* neighbor_summary = nullptr);

// The second-call prompt that asks the model to summarize a node's
// neighborhood for the two-hop strategy.
std::string build_summary_prompt(const std::vector<FewShotExample>& neighbors);

struct ResponseParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct UnknownCategoryError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Extracts the first [{"answer": ..., "confidence": ...}] object from a raw
// model response. Category matching is case-insensitive; confidence is
// clamped to [0, 100]. Returns (class index, confidence).
std::pair<int, double> parse_llm_response(const std::string& raw,
                                          const std::vector<std::string>& categories);

struct LlmEndpointConfig {
    std::string base_url;   // falls back to env GTTT_LLM_BASE_URL
    std::string api_key;    // falls back to env GTTT_LLM_API_KEY
    std::string model = "gpt-3.5-turbo-0613";
    PromptKind kind = PromptKind::FewShot;
    std::vector<std::string> categories;
    std::vector<FewShotExample> shots;
    int max_retries = 2;           // per node, on parse or transport failure
    std::size_t workers = 4;       // max in-flight requests
    double timeout_seconds = 30.0;
    double backoff_seconds = 0.2;  // base for jittered exponential backoff
    std::string summary_cache_path;  // neighbor-summary cache (two-hop kind)
    std::uint64_t seed = 0;
};

struct LlmBatchResult {
    std::vector<AnnotationRecord> records;
    std::vector<std::size_t> failed_nodes;  // transport failure, no fallback
    bool budget_exhausted = false;
};

// One chat request per node against an OpenAI-compatible endpoint, up to
// cfg.workers in flight. Parse failures retry up to max_retries, then fall
// back to the supplied model argmax with confidence 50 when available.
// gnn_confidences are percentages aligned with fallback_labels.
LlmBatchResult annotate_llm(const std::vector<std::size_t>& nodes, const Graph& g,
                            const LlmEndpointConfig& cfg, BudgetLedger& ledger,
                            const std::vector<int>* fallback_labels = nullptr,
                            const std::vector<double>* gnn_confidences = nullptr);

// Annotation budget rule: floor(0.10 * test_size), at least 1.
std::size_t default_budget(std::size_t test_size);

// Append-only JSON-lines cache of annotation records.
void append_annotation_cache(const std::string& path,
                             const std::vector<AnnotationRecord>& records);
std::vector<AnnotationRecord> read_annotation_cache(const std::string& path);

}  // namespace gttt

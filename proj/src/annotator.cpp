#include "gttt/annotator.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "gttt/rng.hpp"

namespace gttt {

namespace {

const char* kTaskText =
    "What's the category of this paper Output your answer together with a confidence "
    "ranging from 0 to 100, in the form of a list of python dicts like "
    "[{\"answer\":<answer_here>, \"confidence\": <confidence_here>}]";

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

std::string render_task(const std::vector<std::string>& categories) {
    return "Task:\nThere are following categories:\n" + join(categories, ", ") + "\n" + kTaskText;
}

std::string render_shots(const std::vector<FewShotExample>& shots) {
    std::string out = "# Information for the first few-shot samples\n";
    for (const auto& shot : shots)
        out += "Paper:\n" + shot.text + "\nCategory: " + shot.category + "\n";
    return out;
}

int match_category(const std::string& answer, const std::vector<std::string>& categories) {
    const std::string needle = lower(trim(answer));
    for (std::size_t i = 0; i < categories.size(); ++i)
        if (lower(trim(categories[i])) == needle) return static_cast<int>(i);
    throw UnknownCategoryError("unknown category '" + answer + "' (candidates: " +
                               join(categories, ", ") + ")");
}

// Finds the bracketed slice starting at `open`, honoring quoted strings.
std::size_t matching_bracket(const std::string& s, std::size_t open) {
    int depth = 0;
    bool in_string = false;
    char quote = 0;
    for (std::size_t i = open; i < s.size(); ++i) {
        const char c = s[i];
        if (in_string) {
            if (c == '\\') ++i;
            else if (c == quote) in_string = false;
        } else if (c == '"' || c == '\'') {
            in_string = true;
            quote = c;
        } else if (c == '[' || c == '{') {
            ++depth;
        } else if (c == ']' || c == '}') {
            --depth;
            if (depth == 0) return i;
        }
    }
    return std::string::npos;
}

// Python dicts often come back single-quoted; normalize to JSON quotes
// outside of double-quoted strings.
std::string normalize_quotes(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    bool in_double = false;
    for (const char c : s) {
        if (c == '"') in_double = !in_double;
        if (c == '\'' && !in_double) out += '"';
        else out += c;
    }
    return out;
}

bool extract_from_json(const nlohmann::json& j, std::string& answer, double& confidence) {
    const nlohmann::json* obj = nullptr;
    if (j.is_array() && !j.empty() && j.front().is_object()) obj = &j.front();
    else if (j.is_object()) obj = &j;
    if (!obj) return false;
    bool have_answer = false, have_conf = false;
    for (const auto& [key, value] : obj->items()) {
        const std::string k = lower(key);
        if (k == "answer") {
            if (value.is_string()) answer = value.get<std::string>();
            else answer = value.dump();
            have_answer = true;
        } else if (k == "confidence") {
            if (value.is_number()) confidence = value.get<double>();
            else if (value.is_string()) {
                try {
                    confidence = std::stod(value.get<std::string>());
                } catch (const std::exception&) {
                    return false;
                }
            } else {
                return false;
            }
            have_conf = true;
        }
    }
    return have_answer && have_conf;
}

}  // namespace

bool BudgetLedger::try_acquire(std::size_t n) {
    std::size_t current = used_.load();
    while (true) {
        if (current + n > budget_) return false;
        if (used_.compare_exchange_weak(current, current + n)) return true;
    }
}

std::vector<AnnotationRecord> annotate_oracle(const std::vector<std::size_t>& nodes,
                                              const std::vector<int>& labels_true,
                                              int class_count, const OracleConfig& cfg,
                                              BudgetLedger& ledger) {
    if (cfg.accuracy < 0.0 || cfg.accuracy > 1.0)
        throw std::invalid_argument("annotate_oracle: accuracy must be in [0,1]");
    if (cfg.conf_correct_lo < 0 || cfg.conf_correct_hi > 100 ||
        cfg.conf_correct_lo > cfg.conf_correct_hi || cfg.conf_wrong_lo < 0 ||
        cfg.conf_wrong_hi > 100 || cfg.conf_wrong_lo > cfg.conf_wrong_hi)
        throw std::invalid_argument("annotate_oracle: confidence ranges must satisfy 0<=lo<=hi<=100");
    if (!ledger.try_acquire(nodes.size()))
        throw std::invalid_argument("annotate_oracle: budget exceeded (" +
                                    std::to_string(nodes.size()) + " requested, " +
                                    std::to_string(ledger.budget() - ledger.used()) +
                                    " remaining)");

    Rng rng(derive_seed(cfg.seed, "oracle"));
    const auto wrong_count = static_cast<std::size_t>(
        std::llround((1.0 - cfg.accuracy) * static_cast<double>(nodes.size())));
    std::vector<bool> wrong(nodes.size(), false);
    if (class_count >= 2)
        for (const std::size_t i : rng.sample_without_replacement(nodes.size(), wrong_count))
            wrong[i] = true;

    std::vector<AnnotationRecord> records;
    records.reserve(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        const std::size_t v = nodes[i];
        if (v >= labels_true.size())
            throw std::invalid_argument("annotate_oracle: node id out of range");
        AnnotationRecord rec;
        rec.node_id = v;
        rec.provenance = Provenance::Oracle;
        if (wrong[i]) {
            const std::size_t draw = rng.uniform_index(static_cast<std::size_t>(class_count) - 1);
            rec.pseudo_label = static_cast<int>(draw) +
                               (static_cast<int>(draw) >= labels_true[v] ? 1 : 0);
            rec.confidence = rng.uniform(cfg.conf_wrong_lo, cfg.conf_wrong_hi);
        } else {
            rec.pseudo_label = labels_true[v];
            rec.confidence = rng.uniform(cfg.conf_correct_lo, cfg.conf_correct_hi);
        }
        records.push_back(std::move(rec));
    }
    return records;
}

PromptKind prompt_kind_from_string(const std::string& name) {
    if (name == "zero_shot") return PromptKind::ZeroShot;
    if (name == "few_shot") return PromptKind::FewShot;
    if (name == "few_shot_gnn") return PromptKind::FewShotGnn;
    if (name == "few_shot_2hop") return PromptKind::FewShotTwoHop;
    throw std::invalid_argument("unknown prompt kind '" + name +
                                "' (expected zero_shot|few_shot|few_shot_gnn|few_shot_2hop)");
}

std::string prompt_kind_to_string(PromptKind kind) {
    switch (kind) {
        case PromptKind::ZeroShot: return "zero_shot";
        case PromptKind::FewShot: return "few_shot";
        case PromptKind::FewShotGnn: return "few_shot_gnn";
        case PromptKind::FewShotTwoHop: return "few_shot_2hop";
    }
    throw std::invalid_argument("unknown prompt kind");
}

std::string build_prompt(PromptKind kind, const std::string& node_text,
                         const std::vector<std::string>& categories,
                         const std::vector<FewShotExample>& shots, const GnnHint* gnn_hint,
                         const std::string* neighbor_summary) {
    if (categories.empty()) throw std::invalid_argument("build_prompt: no categories");
    std::string out;
    if (kind != PromptKind::ZeroShot) {
        if (shots.empty())
            throw std::invalid_argument("build_prompt: few-shot prompts need examples");
        out += render_shots(shots);
    }
    out += "Paper:\n" + node_text + "\n";
    if (kind == PromptKind::FewShotTwoHop) {
        if (!neighbor_summary)
            throw std::invalid_argument("build_prompt: few_shot_2hop needs a neighbor summary");
        out += "Neighbor Summary: " + *neighbor_summary + "\n";
    }
    out += render_task(categories);
    if (kind == PromptKind::FewShotGnn) {
        if (!gnn_hint)
            throw std::invalid_argument("build_prompt: few_shot_gnn needs the model hint");
        out += "\nThe psuedo label generated by GCN is: " + gnn_hint->label +
               " The confidence of this pseudo-label is " +
               std::to_string(static_cast<long long>(std::llround(gnn_hint->confidence))) +
               ". Use this information to help your prediction.";
    }
    return out;
}

std::string build_summary_prompt(const std::vector<FewShotExample>& neighbors) {
    if (neighbors.empty()) throw std::invalid_argument("build_summary_prompt: no neighbors");
    nlohmann::json list = nlohmann::json::array();
    for (const auto& nb : neighbors) {
        nlohmann::json item;
        item["content"] = nb.text;
        if (!nb.category.empty()) item["category"] = nb.category;
        list.push_back(std::move(item));
    }
    return "The following list records some papers related to the current one.\n" + list.dump() +
           "\nPlease summarize the information above with a short paragraph, find some common "
           "points which can reflect the category of this paper";
}

std::pair<int, double> parse_llm_response(const std::string& raw,
                                          const std::vector<std::string>& categories) {
    // First route: locate a bracketed object and parse it as JSON, tolerating
    // python-style single quotes.
    for (std::size_t pos = raw.find_first_of("[{"); pos != std::string::npos;
         pos = raw.find_first_of("[{", pos + 1)) {
        const std::size_t end = matching_bracket(raw, pos);
        if (end == std::string::npos) continue;
        const std::string slice = raw.substr(pos, end - pos + 1);
        for (const std::string& candidate : {slice, normalize_quotes(slice)}) {
            nlohmann::json j = nlohmann::json::parse(candidate, nullptr, false);
            if (j.is_discarded()) continue;
            std::string answer;
            double confidence = 0.0;
            if (!extract_from_json(j, answer, confidence)) continue;
            return {match_category(answer, categories),
                    std::clamp(confidence, 0.0, 100.0)};
        }
    }
    // Fallback: tolerant key scan.
    const std::string low = lower(raw);
    const std::size_t apos = low.find("\"answer\"");
    const std::size_t cpos = low.find("\"confidence\"");
    if (apos != std::string::npos && cpos != std::string::npos) {
        auto value_after = [&](std::size_t key_end) -> std::string {
            const std::size_t colon = raw.find(':', key_end);
            if (colon == std::string::npos) return {};
            std::size_t end = raw.find_first_of(",}]", colon + 1);
            if (end == std::string::npos) end = raw.size();
            std::string v = trim(raw.substr(colon + 1, end - colon - 1));
            if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'')) v = v.substr(1, v.size() - 2);
            return trim(v);
        };
        const std::string answer = value_after(apos + 8);
        const std::string conf_str = value_after(cpos + 12);
        if (!answer.empty() && !conf_str.empty()) {
            try {
                const double conf = std::stod(conf_str);
                return {match_category(answer, categories), std::clamp(conf, 0.0, 100.0)};
            } catch (const UnknownCategoryError&) {
                throw;
            } catch (const std::exception&) {
                // fall through to the parse error below
            }
        }
    }
    throw ResponseParseError("no parseable answer object in response");
}

namespace {

std::string env_or(const std::string& value, const char* env_name) {
    if (!value.empty()) return value;
    const char* env = std::getenv(env_name);
    return env ? env : "";
}

// One chat completion round trip; returns the assistant message content.
// Throws ResponseParseError on malformed payloads and runtime_error on
// transport problems.
std::string chat_request(httplib::Client& client, const std::string& api_key,
                         const std::string& model, const std::string& prompt) {
    nlohmann::json body;
    body["model"] = model;
    body["messages"] = nlohmann::json::array({{{"role", "user"}, {"content", prompt}}});
    body["temperature"] = 0;

    httplib::Headers headers;
    if (!api_key.empty()) headers.emplace("Authorization", "Bearer " + api_key);
    auto res = client.Post("/v1/chat/completions", headers, body.dump(), "application/json");
    if (!res)
        throw std::runtime_error("transport failure: " + httplib::to_string(res.error()));
    if (res->status != 200)
        throw std::runtime_error("endpoint returned status " + std::to_string(res->status));
    nlohmann::json j = nlohmann::json::parse(res->body, nullptr, false);
    if (j.is_discarded() || !j.contains("choices") || j["choices"].empty())
        throw ResponseParseError("malformed completion payload");
    return j["choices"][0].at("message").at("content").get<std::string>();
}

std::string summary_cache_key(std::size_t node, const std::string& prompt) {
    // Key on node id plus a hash of the rendered template.
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (const char c : prompt) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ULL;
    }
    std::ostringstream key;
    key << node << ":" << std::hex << h;
    return key.str();
}

}  // namespace

LlmBatchResult annotate_llm(const std::vector<std::size_t>& nodes, const Graph& g,
                            const LlmEndpointConfig& cfg, BudgetLedger& ledger,
                            const std::vector<int>* fallback_labels,
                            const std::vector<double>* gnn_confidences) {
    if (!g.has_texts())
        throw std::invalid_argument("annotate_llm: graph has no node texts");
    if (cfg.categories.empty())
        throw std::invalid_argument("annotate_llm: no categories configured");
    if (cfg.kind == PromptKind::FewShotGnn && (!fallback_labels || !gnn_confidences))
        throw std::invalid_argument("annotate_llm: few_shot_gnn needs model predictions");
    const std::string base_url = env_or(cfg.base_url, "GTTT_LLM_BASE_URL");
    if (base_url.empty())
        throw std::invalid_argument("annotate_llm: no base URL (set GTTT_LLM_BASE_URL)");
    const std::string api_key = env_or(cfg.api_key, "GTTT_LLM_API_KEY");

    // Load the neighbor-summary cache once.
    nlohmann::json summary_cache = nlohmann::json::object();
    if (!cfg.summary_cache_path.empty()) {
        std::ifstream in(cfg.summary_cache_path);
        if (in) {
            summary_cache = nlohmann::json::parse(in, nullptr, false);
            if (summary_cache.is_discarded()) summary_cache = nlohmann::json::object();
        }
    }

    LlmBatchResult result;
    std::vector<std::optional<AnnotationRecord>> slots(nodes.size());
    std::mutex mu;
    std::atomic<std::size_t> next{0};
    std::atomic<bool> exhausted{false};

    auto worker = [&]() {
        httplib::Client client(base_url);
        client.set_connection_timeout(std::chrono::milliseconds(
            static_cast<long>(cfg.timeout_seconds * 1000)));
        client.set_read_timeout(std::chrono::milliseconds(
            static_cast<long>(cfg.timeout_seconds * 1000)));

        while (true) {
            const std::size_t idx = next.fetch_add(1);
            if (idx >= nodes.size()) return;
            if (exhausted.load()) return;
            if (!ledger.try_acquire(1)) {
                exhausted.store(true);
                return;
            }
            const std::size_t node = nodes[idx];
            Rng rng(derive_seed(cfg.seed, "llm-backoff", node));

            std::string neighbor_summary;
            const std::string* summary_ptr = nullptr;
            if (cfg.kind == PromptKind::FewShotTwoHop) {
                // Two-hop neighborhood, capped, summarized by a second call;
                // cached on disk across runs.
                std::vector<FewShotExample> neighbors;
                std::vector<bool> seen(g.num_nodes, false);
                seen[node] = true;
                std::vector<std::size_t> frontier{node};
                for (int hop = 0; hop < 2 && neighbors.size() < 8; ++hop) {
                    std::vector<std::size_t> nxt;
                    for (const std::size_t u : frontier) {
                        for (std::size_t k = g.csr_offsets[u]; k < g.csr_offsets[u + 1]; ++k) {
                            const std::size_t v = g.csr_targets[k];
                            if (seen[v]) continue;
                            seen[v] = true;
                            nxt.push_back(v);
                            if (neighbors.size() < 8)
                                neighbors.push_back({g.texts[v], ""});
                        }
                    }
                    frontier = std::move(nxt);
                }
                if (!neighbors.empty()) {
                    const std::string sprompt = build_summary_prompt(neighbors);
                    const std::string key = summary_cache_key(node, sprompt);
                    {
                        std::lock_guard<std::mutex> lock(mu);
                        if (summary_cache.contains(key))
                            neighbor_summary = summary_cache[key].get<std::string>();
                    }
                    if (neighbor_summary.empty()) {
                        try {
                            neighbor_summary = chat_request(client, api_key, cfg.model, sprompt);
                            ledger.add_tokens((sprompt.size() + neighbor_summary.size()) / 4);
                            std::lock_guard<std::mutex> lock(mu);
                            summary_cache[key] = neighbor_summary;
                        } catch (const std::exception&) {
                            neighbor_summary = "(no summary available)";
                        }
                    }
                }
                if (neighbor_summary.empty()) neighbor_summary = "(no neighbors)";
                summary_ptr = &neighbor_summary;
            }

            GnnHint hint;
            const GnnHint* hint_ptr = nullptr;
            if (cfg.kind == PromptKind::FewShotGnn) {
                hint.label = cfg.categories[static_cast<std::size_t>((*fallback_labels)[node])];
                hint.confidence = (*gnn_confidences)[node];
                hint_ptr = &hint;
            }

            const std::string prompt = build_prompt(cfg.kind, g.texts[node], cfg.categories,
                                                    cfg.shots, hint_ptr, summary_ptr);

            std::string last_raw;
            bool parsed = false;
            bool transport_ok = false;
            std::pair<int, double> outcome{0, 0.0};
            for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
                if (attempt > 0) {
                    const double sleep_s = cfg.backoff_seconds *
                                           std::pow(2.0, attempt - 1) *
                                           (0.5 + rng.uniform01());
                    std::this_thread::sleep_for(
                        std::chrono::milliseconds(static_cast<long>(sleep_s * 1000)));
                }
                try {
                    last_raw = chat_request(client, api_key, cfg.model, prompt);
                    transport_ok = true;
                    ledger.add_tokens((prompt.size() + last_raw.size()) / 4);
                    outcome = parse_llm_response(last_raw, cfg.categories);
                    parsed = true;
                    break;
                } catch (const ResponseParseError&) {
                    transport_ok = true;
                } catch (const UnknownCategoryError&) {
                    transport_ok = true;
                } catch (const std::exception&) {
                    // transport failure; retry with backoff
                }
            }

            if (parsed) {
                AnnotationRecord rec;
                rec.node_id = node;
                rec.pseudo_label = outcome.first;
                rec.confidence = outcome.second;
                rec.provenance = Provenance::Llm;
                rec.raw_response = last_raw;
                std::lock_guard<std::mutex> lock(mu);
                slots[idx] = std::move(rec);
            } else if (transport_ok && fallback_labels) {
                // Unusable responses fall back to the pretrained argmax so
                // the labeled set keeps its size.
                AnnotationRecord rec;
                rec.node_id = node;
                rec.pseudo_label = (*fallback_labels)[node];
                rec.confidence = 50.0;
                rec.provenance = Provenance::Llm;
                rec.raw_response = last_raw;
                std::lock_guard<std::mutex> lock(mu);
                slots[idx] = std::move(rec);
            } else {
                std::lock_guard<std::mutex> lock(mu);
                result.failed_nodes.push_back(node);
            }
        }
    };

    const std::size_t thread_count = std::max<std::size_t>(1, std::min(cfg.workers, nodes.size()));
    std::vector<std::thread> threads;
    threads.reserve(thread_count);
    for (std::size_t t = 0; t < thread_count; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();

    result.budget_exhausted = exhausted.load();
    for (auto& slot : slots)
        if (slot) result.records.push_back(std::move(*slot));
    std::sort(result.failed_nodes.begin(), result.failed_nodes.end());

    if (!cfg.summary_cache_path.empty() && !summary_cache.empty()) {
        std::ofstream out(cfg.summary_cache_path);
        if (out) out << summary_cache.dump(2) << "\n";
    }
    return result;
}

std::size_t default_budget(std::size_t test_size) {
    if (test_size == 0) throw std::invalid_argument("default_budget: empty test set");
    return std::max<std::size_t>(1, test_size / 10);
}

void append_annotation_cache(const std::string& path,
                             const std::vector<AnnotationRecord>& records) {
    std::ofstream out(path, std::ios::app);
    if (!out) throw std::runtime_error("cannot open annotation cache: " + path);
    for (const auto& rec : records) {
        nlohmann::json j;
        j["node_id"] = rec.node_id;
        j["pseudo_label"] = rec.pseudo_label;
        j["confidence"] = rec.confidence;
        j["provenance"] = rec.provenance == Provenance::Oracle ? "oracle" : "llm";
        if (!rec.raw_response.empty()) j["raw_response"] = rec.raw_response;
        out << j.dump() << "\n";
    }
}

std::vector<AnnotationRecord> read_annotation_cache(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open annotation cache: " + path);
    std::vector<AnnotationRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw std::invalid_argument(path + ": line " + std::to_string(line_no) +
                                        ": invalid JSON");
        AnnotationRecord rec;
        rec.node_id = j.at("node_id").get<std::size_t>();
        rec.pseudo_label = j.at("pseudo_label").get<int>();
        rec.confidence = j.at("confidence").get<double>();
        rec.provenance =
            j.at("provenance").get<std::string>() == "oracle" ? Provenance::Oracle : Provenance::Llm;
        rec.raw_response = j.value("raw_response", "");
        records.push_back(std::move(rec));
    }
    return records;
}

}  // namespace gttt

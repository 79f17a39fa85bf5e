#include "gttt/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "gttt/rng.hpp"

namespace gttt {

namespace {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// Splits one CSV line, honoring double-quoted fields with "" escapes.
std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool in_quotes = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            in_quotes = true;
        } else if (c == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    fields.push_back(std::move(cur));
    return fields;
}

std::string csv_quote(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (const char c : s) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += '"';
    return out;
}

double parse_double_field(const std::string& s, const char* what, std::size_t line_no) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw std::invalid_argument(std::string("line ") + std::to_string(line_no) +
                                    ": malformed " + what + " '" + s + "'");
    }
}

long parse_long_field(const std::string& s, const char* what, std::size_t line_no) {
    try {
        std::size_t pos = 0;
        const long v = std::stol(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw std::invalid_argument(std::string("line ") + std::to_string(line_no) +
                                    ": malformed " + what + " '" + s + "'");
    }
}

}  // namespace

std::vector<std::pair<std::size_t, std::size_t>> Graph::undirected_edges() const {
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    edges.reserve(csr_targets.size() / 2);
    for (std::size_t u = 0; u < num_nodes; ++u) {
        for (std::size_t k = csr_offsets[u]; k < csr_offsets[u + 1]; ++k) {
            const std::size_t v = csr_targets[k];
            if (u < v) edges.emplace_back(u, v);
        }
    }
    return edges;
}

Matrix NormAdj::multiply(const Matrix& x) const {
    if (x.rows != num_nodes) throw std::invalid_argument("NormAdj::multiply: shape mismatch");
    Matrix out(x.rows, x.cols);
    for (std::size_t u = 0; u < num_nodes; ++u) {
        double* orow = out.data.data() + u * x.cols;
        for (std::size_t k = csr_offsets[u]; k < csr_offsets[u + 1]; ++k) {
            const double w = weights[k];
            const double* xrow = x.data.data() + csr_targets[k] * x.cols;
            for (std::size_t j = 0; j < x.cols; ++j) orow[j] += w * xrow[j];
        }
    }
    return out;
}

Graph build_graph(std::size_t num_nodes,
                  const std::vector<std::pair<std::size_t, std::size_t>>& edges,
                  Matrix features, std::vector<int> labels,
                  std::vector<std::string> texts, int expected_classes) {
    if (features.rows != num_nodes)
        throw std::invalid_argument("build_graph: feature row count != num_nodes");
    if (labels.size() != num_nodes)
        throw std::invalid_argument("build_graph: label count != num_nodes");
    if (!texts.empty() && texts.size() != num_nodes)
        throw std::invalid_argument("build_graph: text count != num_nodes");

    int max_label = -1;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0)
            throw std::invalid_argument("build_graph: negative label at node " + std::to_string(i));
        max_label = std::max(max_label, labels[i]);
    }
    int class_count = expected_classes > 0 ? expected_classes : max_label + 1;
    if (class_count <= 0) class_count = 1;
    if (max_label >= class_count)
        throw std::invalid_argument("build_graph: label " + std::to_string(max_label) +
                                    " out of range for " + std::to_string(class_count) + " classes");

    // Canonical undirected pairs: symmetrize, dedupe, drop self loops.
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    pairs.reserve(edges.size());
    for (const auto& [a, b] : edges) {
        if (a >= num_nodes || b >= num_nodes)
            throw std::invalid_argument("build_graph: edge endpoint (" + std::to_string(a) + "," +
                                        std::to_string(b) + ") out of range");
        if (a == b) continue;
        pairs.emplace_back(std::min(a, b), std::max(a, b));
    }
    std::sort(pairs.begin(), pairs.end());
    pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());

    Graph g;
    g.num_nodes = num_nodes;
    g.features = std::move(features);
    g.labels = std::move(labels);
    g.texts = std::move(texts);
    g.class_count = class_count;

    std::vector<std::size_t> deg(num_nodes, 0);
    for (const auto& [u, v] : pairs) {
        ++deg[u];
        ++deg[v];
    }
    g.csr_offsets.assign(num_nodes + 1, 0);
    for (std::size_t i = 0; i < num_nodes; ++i) g.csr_offsets[i + 1] = g.csr_offsets[i] + deg[i];
    g.csr_targets.assign(g.csr_offsets[num_nodes], 0);
    std::vector<std::size_t> fill(g.csr_offsets.begin(), g.csr_offsets.end() - 1);
    for (const auto& [u, v] : pairs) {
        g.csr_targets[fill[u]++] = v;
        g.csr_targets[fill[v]++] = u;
    }
    // Rows come out sorted because pairs are sorted and mirrored in order of
    // ascending partner, except the mixed fill order; sort to be exact.
    for (std::size_t u = 0; u < num_nodes; ++u)
        std::sort(g.csr_targets.begin() + g.csr_offsets[u], g.csr_targets.begin() + g.csr_offsets[u + 1]);
    return g;
}

Graph load_graph(const std::string& node_file, const std::string& edge_file,
                 int expected_classes) {
    std::ifstream nf(node_file);
    if (!nf) throw std::invalid_argument("cannot open node file: " + node_file);

    std::string line;
    if (!std::getline(nf, line))
        throw std::invalid_argument(node_file + ": empty node file");
    const auto header = split_csv_line(line);
    if (header.size() < 3 || header[0] != "id" || header[1] != "label")
        throw std::invalid_argument(node_file + ": line 1: header must start with id,label,feat_0");
    bool has_text = header.back() == "text";
    const std::size_t feat_dim = header.size() - 2 - (has_text ? 1 : 0);
    if (feat_dim == 0)
        throw std::invalid_argument(node_file + ": line 1: no feature columns");

    struct Row {
        std::size_t id;
        int label;
        std::vector<double> feats;
        std::string text;
    };
    std::vector<Row> rows;
    std::size_t line_no = 1;
    while (std::getline(nf, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        const std::size_t expected = 2 + feat_dim + (has_text ? 1 : 0);
        if (fields.size() != expected)
            throw std::invalid_argument(node_file + ": line " + std::to_string(line_no) +
                                        ": expected " + std::to_string(expected) + " fields, got " +
                                        std::to_string(fields.size()));
        Row r;
        const long id = parse_long_field(fields[0], "id", line_no);
        if (id < 0)
            throw std::invalid_argument(node_file + ": line " + std::to_string(line_no) +
                                        ": negative id");
        r.id = static_cast<std::size_t>(id);
        r.label = static_cast<int>(parse_long_field(fields[1], "label", line_no));
        r.feats.resize(feat_dim);
        for (std::size_t j = 0; j < feat_dim; ++j)
            r.feats[j] = parse_double_field(fields[2 + j], "feature", line_no);
        if (has_text) r.text = fields.back();
        rows.push_back(std::move(r));
    }
    if (rows.empty()) throw std::invalid_argument(node_file + ": no node rows");

    const std::size_t n = rows.size();
    std::vector<bool> seen(n, false);
    for (const auto& r : rows) {
        if (r.id >= n)
            throw std::invalid_argument(node_file + ": node ids must be dense 0.." +
                                        std::to_string(n - 1) + ", found " + std::to_string(r.id));
        if (seen[r.id])
            throw std::invalid_argument(node_file + ": duplicate node id " + std::to_string(r.id));
        seen[r.id] = true;
    }

    Matrix features(n, feat_dim);
    std::vector<int> labels(n, 0);
    std::vector<std::string> texts;
    if (has_text) texts.resize(n);
    for (const auto& r : rows) {
        for (std::size_t j = 0; j < feat_dim; ++j) features(r.id, j) = r.feats[j];
        labels[r.id] = r.label;
        if (has_text) texts[r.id] = r.text;
    }

    std::ifstream ef(edge_file);
    if (!ef) throw std::invalid_argument("cannot open edge file: " + edge_file);
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    line_no = 0;
    bool first = true;
    while (std::getline(ef, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (first) {
            first = false;
            if (fields.size() == 2 && fields[0] == "src" && fields[1] == "dst") continue;
        }
        if (fields.size() != 2)
            throw std::invalid_argument(edge_file + ": line " + std::to_string(line_no) +
                                        ": expected 2 fields");
        const long a = parse_long_field(fields[0], "src", line_no);
        const long b = parse_long_field(fields[1], "dst", line_no);
        if (a < 0 || b < 0 || static_cast<std::size_t>(a) >= n || static_cast<std::size_t>(b) >= n)
            throw std::invalid_argument(edge_file + ": line " + std::to_string(line_no) +
                                        ": edge endpoint out of range");
        edges.emplace_back(static_cast<std::size_t>(a), static_cast<std::size_t>(b));
    }

    return build_graph(n, edges, std::move(features), std::move(labels), std::move(texts),
                       expected_classes);
}

void save_graph(const Graph& g, const std::string& node_file, const std::string& edge_file) {
    std::ofstream nf(node_file);
    if (!nf) throw std::runtime_error("cannot write node file: " + node_file);
    nf << "id,label";
    for (std::size_t j = 0; j < g.features.cols; ++j) nf << ",feat_" << j;
    if (g.has_texts()) nf << ",text";
    nf << "\n";
    for (std::size_t i = 0; i < g.num_nodes; ++i) {
        nf << i << "," << g.labels[i];
        for (std::size_t j = 0; j < g.features.cols; ++j) nf << "," << format_double(g.features(i, j));
        if (g.has_texts()) nf << "," << csv_quote(g.texts[i]);
        nf << "\n";
    }

    std::ofstream ef(edge_file);
    if (!ef) throw std::runtime_error("cannot write edge file: " + edge_file);
    ef << "src,dst\n";
    for (const auto& [u, v] : g.undirected_edges()) ef << u << "," << v << "\n";
}

NormAdj normalize_adjacency(const Graph& g) {
    NormAdj adj;
    adj.num_nodes = g.num_nodes;
    adj.csr_offsets.assign(g.num_nodes + 1, 0);
    for (std::size_t u = 0; u < g.num_nodes; ++u)
        adj.csr_offsets[u + 1] = adj.csr_offsets[u] + g.degree(u) + 1;  // +1 self loop
    adj.csr_targets.resize(adj.csr_offsets[g.num_nodes]);
    adj.weights.resize(adj.csr_offsets[g.num_nodes]);

    for (std::size_t u = 0; u < g.num_nodes; ++u) {
        const double du = static_cast<double>(g.degree(u)) + 1.0;
        std::size_t w = adj.csr_offsets[u];
        bool self_written = false;
        for (std::size_t k = g.csr_offsets[u]; k < g.csr_offsets[u + 1]; ++k) {
            const std::size_t v = g.csr_targets[k];
            if (!self_written && v > u) {
                adj.csr_targets[w] = u;
                adj.weights[w] = 1.0 / du;
                ++w;
                self_written = true;
            }
            const double dv = static_cast<double>(g.degree(v)) + 1.0;
            adj.csr_targets[w] = v;
            adj.weights[w] = 1.0 / std::sqrt(du * dv);
            ++w;
        }
        if (!self_written) {
            adj.csr_targets[w] = u;
            adj.weights[w] = 1.0 / du;
        }
    }
    return adj;
}

Graph generate_sbm(const SbmParams& params, std::uint64_t seed) {
    if (params.block_sizes.empty())
        throw std::invalid_argument("generate_sbm: need at least one block");
    for (const std::size_t s : params.block_sizes)
        if (s == 0) throw std::invalid_argument("generate_sbm: block sizes must be >= 1");
    if (params.p_intra < 0.0 || params.p_intra > 1.0 || params.p_inter < 0.0 ||
        params.p_inter > 1.0)
        throw std::invalid_argument("generate_sbm: edge probabilities must be in [0,1]");
    if (params.class_means.rows != params.block_sizes.size())
        throw std::invalid_argument("generate_sbm: one mean row per block required");

    const std::size_t num_blocks = params.block_sizes.size();
    const std::size_t n = std::accumulate(params.block_sizes.begin(), params.block_sizes.end(),
                                          std::size_t{0});
    const std::size_t d = params.class_means.cols;

    std::vector<int> labels(n);
    std::size_t at = 0;
    for (std::size_t b = 0; b < num_blocks; ++b)
        for (std::size_t i = 0; i < params.block_sizes[b]; ++i) labels[at++] = static_cast<int>(b);

    Rng edge_rng(derive_seed(seed, "sbm-edges"));
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    for (std::size_t u = 0; u < n; ++u) {
        for (std::size_t v = u + 1; v < n; ++v) {
            const double p = labels[u] == labels[v] ? params.p_intra : params.p_inter;
            if (edge_rng.uniform01() < p) edges.emplace_back(u, v);
        }
    }

    Rng feat_rng(derive_seed(seed, "sbm-features"));
    Matrix features(n, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            features(i, j) = params.class_means(labels[i], j) + params.noise_sigma * feat_rng.normal();

    return build_graph(n, edges, std::move(features), std::move(labels), {},
                       static_cast<int>(num_blocks));
}

namespace {

std::vector<double> domain_values(const Graph& g, const SplitSpec& spec) {
    std::vector<double> vals(g.num_nodes);
    if (spec.criterion == DomainCriterion::Degree) {
        for (std::size_t v = 0; v < g.num_nodes; ++v) vals[v] = static_cast<double>(g.degree(v));
    } else {
        if (spec.word_feature_index >= g.features.cols)
            throw std::invalid_argument("make_ood_split: word_feature_index out of range");
        for (std::size_t v = 0; v < g.num_nodes; ++v) vals[v] = g.features(v, spec.word_feature_index);
    }
    return vals;
}

}  // namespace

DataSplit make_ood_split(const Graph& g, const SplitSpec& spec, SplitRatios ratios,
                         std::uint64_t seed) {
    if (ratios.train <= 0.0 || ratios.val < 0.0 || ratios.test <= 0.0)
        throw std::invalid_argument("make_ood_split: train and test ratios must be positive");
    if (ratios.train + ratios.val + ratios.test > 1.0 + 1e-12)
        throw std::invalid_argument("make_ood_split: ratios must sum to at most 1");

    const std::size_t n = g.num_nodes;
    const auto n_train = static_cast<std::size_t>(std::floor(ratios.train * n));
    const auto n_val = static_cast<std::size_t>(std::floor(ratios.val * n));
    const auto n_test = static_cast<std::size_t>(std::floor(ratios.test * n));
    if (n_train == 0 || n_test == 0)
        throw std::invalid_argument("make_ood_split: ratios leave train or test empty");

    const auto vals = domain_values(g, spec);
    if (*std::min_element(vals.begin(), vals.end()) ==
        *std::max_element(vals.begin(), vals.end()))
        throw std::invalid_argument("make_ood_split: domain criterion non-informative");

    // Order nodes by domain value, ties by ascending id.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (vals[a] != vals[b]) return vals[a] < vals[b];
        return a < b;
    });

    DataSplit split;
    split.shift_kind = spec.shift;
    split.domain_criterion = spec.criterion;
    split.train_mask.assign(n, false);
    split.val_mask.assign(n, false);
    split.test_mask.assign(n, false);

    if (spec.shift == ShiftKind::Covariate) {
        // Disjoint domain ranges: lowest mass trains, highest mass tests, val
        // sits immediately after train. Any leftover stays unassigned.
        for (std::size_t i = 0; i < n_train; ++i) split.train_mask[order[i]] = true;
        for (std::size_t i = n_train; i < n_train + n_val; ++i) split.val_mask[order[i]] = true;
        for (std::size_t i = n - n_test; i < n; ++i) split.test_mask[order[i]] = true;
    } else {
        // Concept shift: train is sampled with weight exp(kappa * agreement)
        // so the label correlates with the domain rank; val and test are
        // sampled uniformly from the rest, breaking that correlation.
        std::vector<double> rank_norm(n);
        for (std::size_t i = 0; i < n; ++i)
            rank_norm[order[i]] = n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.0;
        std::vector<double> weight(n);
        for (std::size_t v = 0; v < n; ++v) {
            const double label_frac = g.class_count > 1
                ? static_cast<double>(g.labels[v]) / static_cast<double>(g.class_count - 1)
                : 0.5;
            const double agreement = 1.0 - std::abs(rank_norm[v] - label_frac);
            weight[v] = std::exp(spec.concept_kappa * agreement);
        }

        Rng rng(derive_seed(seed, "concept-split"));
        std::vector<std::size_t> remaining(n);
        std::iota(remaining.begin(), remaining.end(), 0);
        double total = std::accumulate(weight.begin(), weight.end(), 0.0);
        for (std::size_t picked = 0; picked < n_train; ++picked) {
            double target = rng.uniform01() * total;
            std::size_t chosen_pos = remaining.size() - 1;
            for (std::size_t i = 0; i < remaining.size(); ++i) {
                target -= weight[remaining[i]];
                if (target <= 0.0) {
                    chosen_pos = i;
                    break;
                }
            }
            const std::size_t v = remaining[chosen_pos];
            split.train_mask[v] = true;
            total -= weight[v];
            remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(chosen_pos));
        }
        const auto val_pick = rng.sample_without_replacement(remaining.size(), n_val);
        std::vector<bool> taken(remaining.size(), false);
        for (const std::size_t i : val_pick) {
            split.val_mask[remaining[i]] = true;
            taken[i] = true;
        }
        std::vector<std::size_t> rest;
        for (std::size_t i = 0; i < remaining.size(); ++i)
            if (!taken[i]) rest.push_back(remaining[i]);
        const auto test_pick = rng.sample_without_replacement(rest.size(), n_test);
        for (const std::size_t i : test_pick) split.test_mask[rest[i]] = true;
    }
    return split;
}

Graph drop_edge(const Graph& g, double rate, std::uint64_t seed) {
    if (rate < 0.0 || rate >= 1.0)
        throw std::invalid_argument("drop_edge: rate must be in [0,1)");
    auto edges = g.undirected_edges();
    if (rate > 0.0) {
        Rng rng(derive_seed(seed, "dropedge"));
        std::vector<std::pair<std::size_t, std::size_t>> kept;
        kept.reserve(edges.size());
        for (const auto& e : edges)
            if (rng.uniform01() >= rate) kept.push_back(e);
        edges = std::move(kept);
    }
    return build_graph(g.num_nodes, edges, g.features, g.labels, g.texts, g.class_count);
}

void save_split(const DataSplit& split, const std::string& path) {
    nlohmann::json j;
    j["shift"] = split.shift_kind == ShiftKind::Covariate ? "covariate" : "concept";
    j["criterion"] = split.domain_criterion == DomainCriterion::Degree ? "degree" : "word";
    j["train"] = mask_ids(split.train_mask);
    j["val"] = mask_ids(split.val_mask);
    j["test"] = mask_ids(split.test_mask);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write split file: " + path);
    out << j.dump(2) << "\n";
}

DataSplit load_split(const std::string& path, std::size_t num_nodes) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open split file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(path + ": invalid JSON: " + e.what());
    }
    DataSplit split;
    const std::string shift = j.at("shift").get<std::string>();
    if (shift == "covariate") split.shift_kind = ShiftKind::Covariate;
    else if (shift == "concept") split.shift_kind = ShiftKind::Concept;
    else throw std::invalid_argument(path + ": unknown shift '" + shift + "'");
    const std::string crit = j.at("criterion").get<std::string>();
    if (crit == "degree") split.domain_criterion = DomainCriterion::Degree;
    else if (crit == "word") split.domain_criterion = DomainCriterion::Word;
    else throw std::invalid_argument(path + ": unknown criterion '" + crit + "'");

    split.train_mask.assign(num_nodes, false);
    split.val_mask.assign(num_nodes, false);
    split.test_mask.assign(num_nodes, false);
    auto fill = [&](const char* key, std::vector<bool>& mask) {
        for (const auto& id : j.at(key)) {
            const auto v = id.get<std::size_t>();
            if (v >= num_nodes)
                throw std::invalid_argument(path + ": node id out of range in '" + key + "'");
            mask[v] = true;
        }
    };
    fill("train", split.train_mask);
    fill("val", split.val_mask);
    fill("test", split.test_mask);
    return split;
}

std::vector<std::size_t> mask_ids(const std::vector<bool>& mask) {
    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) ids.push_back(i);
    return ids;
}

std::size_t mask_count(const std::vector<bool>& mask) {
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
}

}  // namespace gttt

// Measurement protocols: exact match with open-domain QA normalization,
// compression rate, irrelevant rate, EM deltas, and the "bad" / "random"
// retrieval interference generators.
#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "skr/common.hpp"
#include "skr/core.hpp"
#include "skr/jsonl.hpp"

namespace skr {

// Open-domain QA convention: lowercase, drop punctuation, drop the articles
// a/an/the, collapse whitespace. ASCII-level; multi-byte UTF-8 passes
// through untouched.
inline std::string normalize_answer(std::string_view text) {
    std::string lowered;
    lowered.reserve(text.size());
    for (char c : text) {
        const unsigned char u = static_cast<unsigned char>(c);
        if (u < 0x80 && std::ispunct(u)) continue;
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
        lowered += c;
    }
    std::string out;
    for (std::string_view token : split_whitespace(lowered)) {
        if (token == "a" || token == "an" || token == "the") continue;
        if (!out.empty()) out += ' ';
        out += token;
    }
    return out;
}

inline bool exact_match(std::string_view prediction, std::span<const std::string> targets) {
    if (targets.empty()) throw validation_error("exact_match: targets must be non-empty");
    const std::string norm_pred = normalize_answer(prediction);
    for (const std::string& t : targets) {
        if (normalize_answer(t) == norm_pred) return true;
    }
    return false;
}

inline std::size_t whitespace_token_count(std::string_view text) { return split_whitespace(text).size(); }

struct Compression {
    double avg_input_len = 0.0;
    double avg_output_len = 0.0;
    double rate = 0.0;
};

inline Compression compression_from_averages(double avg_input_len, double avg_output_len) {
    if (!(avg_output_len > 0.0)) throw validation_error("compression: average output length must be positive");
    if (!(avg_input_len > 0.0)) throw validation_error("compression: average input length must be positive");
    return {avg_input_len, avg_output_len, avg_input_len / avg_output_len};
}

inline Compression compression_rate(std::span<const std::size_t> input_counts,
                                    std::span<const std::size_t> output_counts) {
    if (input_counts.empty() || input_counts.size() != output_counts.size())
        throw validation_error("compression: need equal-length non-empty count lists");
    double in_sum = 0.0, out_sum = 0.0;
    for (std::size_t i = 0; i < input_counts.size(); ++i) {
        if (input_counts[i] == 0 || output_counts[i] == 0)
            throw validation_error("compression: token counts must be >= 1");
        in_sum += static_cast<double>(input_counts[i]);
        out_sum += static_cast<double>(output_counts[i]);
    }
    const double n = static_cast<double>(input_counts.size());
    return compression_from_averages(in_sum / n, out_sum / n);
}

inline double irrelevant_rate(std::span<const Rewrite> rewrites) {
    if (rewrites.empty()) throw validation_error("irrelevant_rate: rewrite list must be non-empty");
    std::size_t hits = 0;
    for (const Rewrite& r : rewrites) {
        if (to_lower_ascii(trim(r.text)) == kIrrelevantText) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(rewrites.size());
}

inline constexpr std::size_t kBadRetrievalWindow = 30;

// Reverses the top-30 ranking in place (rank 30 served first); entries past
// the window keep their order. Texts are never touched, only positions.
inline std::vector<std::string> make_bad_retrieval(std::span<const std::string> ranked_ids) {
    if (ranked_ids.size() < kBadRetrievalWindow)
        throw validation_error("make_bad_retrieval: need at least " + std::to_string(kBadRetrievalWindow) +
                               " ranked entries, got " + std::to_string(ranked_ids.size()));
    std::vector<std::string> out(ranked_ids.begin(), ranked_ids.end());
    std::reverse(out.begin(), out.begin() + kBadRetrievalWindow);
    return out;
}

inline std::vector<std::string> make_bad_retrieval(const RetrievalResult& ranked) {
    std::vector<std::string> ids;
    ids.reserve(ranked.ranked.size());
    for (const auto& e : ranked.ranked) ids.push_back(e.chunk_id);
    return make_bad_retrieval(ids);
}

// k distinct chunks drawn uniformly without replacement, stable per seed.
inline std::vector<std::string> make_random_retrieval(std::span<const KnowledgeChunk> corpus, std::size_t k,
                                                      std::uint64_t seed) {
    if (k == 0) throw validation_error("make_random_retrieval: k must be positive");
    if (corpus.size() < k)
        throw validation_error("make_random_retrieval: corpus holds " + std::to_string(corpus.size()) +
                               " chunks, need " + std::to_string(k));
    DetRng rng(seed);
    std::vector<std::string> out;
    out.reserve(k);
    for (std::size_t idx : rng.sample_without_replacement(corpus.size(), k)) out.push_back(corpus[idx].id);
    return out;
}

struct DatasetEm {
    double em = 0.0;  // percent, 100 * matches / n
    std::size_t n = 0;
};

struct EvalReport {
    std::map<std::string, DatasetEm> per_dataset;
    std::optional<double> delta_em;
    std::optional<Compression> compression;
    std::optional<double> irr_rate;
    std::string tokenizer = "whitespace";

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["per_dataset"] = nlohmann::json::object();
        for (const auto& [name, em] : per_dataset) j["per_dataset"][name] = {{"em", em.em}, {"n", em.n}};
        if (delta_em) j["delta_em"] = *delta_em;
        if (compression) {
            j["compression"] = {{"avg_input_len", compression->avg_input_len},
                                {"avg_output_len", compression->avg_output_len},
                                {"rate", compression->rate}};
        }
        if (irr_rate) j["irr_rate"] = *irr_rate;
        j["tokenizer"] = tokenizer;
        return j;
    }
};

// Mean EM difference over matching dataset keys.
inline double delta_em(const EvalReport& with_rewriter, const EvalReport& baseline) {
    if (with_rewriter.per_dataset.size() != baseline.per_dataset.size())
        throw validation_error("delta_em: reports cover different dataset sets");
    double sum = 0.0;
    for (const auto& [name, em] : with_rewriter.per_dataset) {
        auto it = baseline.per_dataset.find(name);
        if (it == baseline.per_dataset.end())
            throw validation_error("delta_em: baseline report missing dataset '" + name + "'");
        sum += em.em - it->second.em;
    }
    return sum / static_cast<double>(with_rewriter.per_dataset.size());
}

// EM over one labelled dataset; every query must have a prediction.
inline DatasetEm compute_em(std::span<const Prediction> predictions, std::span<const Query> queries) {
    if (queries.empty()) throw validation_error("compute_em: need at least one query");
    std::unordered_map<std::string_view, const Prediction*> by_id;
    for (const auto& p : predictions) by_id.emplace(p.query_id, &p);
    std::size_t matches = 0;
    for (const Query& q : queries) {
        auto it = by_id.find(q.id);
        if (it == by_id.end()) throw validation_error("compute_em: no prediction for query '" + q.id + "'");
        if (exact_match(it->second->text, q.targets)) ++matches;
    }
    return {100.0 * static_cast<double>(matches) / static_cast<double>(queries.size()), queries.size()};
}

}  // namespace skr

// Domain types shared by every pipeline stage, with their validity checks.
#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "skr/common.hpp"

namespace skr {

// Sentinel for the degenerate rewrite meaning "retrieval unhelpful".
inline constexpr int kIrrelevantSourceIndex = -1;
inline constexpr const char* kIrrelevantText = "irrelevant";

struct Query {
    std::string id;
    std::string text;
    std::vector<std::string> targets;  // gold answers, at least one

    bool operator==(const Query&) const = default;
};

struct KnowledgeChunk {
    std::string id;
    std::string text;
    std::optional<std::vector<double>> embedding;

    bool operator==(const KnowledgeChunk&) const = default;
};

struct ScoredChunk {
    std::string chunk_id;
    double score = 0.0;

    bool operator==(const ScoredChunk&) const = default;
};

struct RetrievalResult {
    std::string query_id;
    std::vector<ScoredChunk> ranked;  // scores non-increasing, ids distinct

    bool operator==(const RetrievalResult&) const = default;
};

struct Rewrite {
    std::string query_id;
    int source_index = 0;  // >= 0, or kIrrelevantSourceIndex
    std::string text;

    bool is_irrelevant_marker() const { return source_index == kIrrelevantSourceIndex; }

    bool operator==(const Rewrite&) const = default;
};

enum class ContentKind { RawRetrieval, Rewrite };

struct SupportivenessRecord {
    std::string query_id;
    ContentKind content_kind = ContentKind::RawRetrieval;
    int source_index = 0;  // meaningful only for ContentKind::Rewrite
    double pp_raw = 1.0;
    double pp_retrieval = 1.0;
    double ratio = 1.0;
    double score = 1.0;

    bool operator==(const SupportivenessRecord&) const = default;
};

struct SftExample {
    std::string input;   // query ∘ knowledge, as fed to the rewriter
    std::string target;  // a kept rewrite or the irrelevant marker

    bool operator==(const SftExample&) const = default;
};

struct PreferencePair {
    std::string input;
    std::string chosen;
    std::string rejected;
    double ss_chosen = 0.0;
    double ss_rejected = 0.0;

    bool operator==(const PreferencePair&) const = default;
};

namespace detail {

inline bool rel_close(double a, double b, double rel_tol) {
    const double scale = std::max(std::abs(a), std::abs(b));
    return std::abs(a - b) <= rel_tol * std::max(scale, 1.0);
}

}  // namespace detail

inline void validate(const Query& q) {
    if (q.id.empty()) throw validation_error("query id must be non-empty");
    if (q.targets.empty()) throw validation_error("query '" + q.id + "': targets must be non-empty");
    for (const auto& t : q.targets) {
        if (trim(t).empty())
            throw validation_error("query '" + q.id + "': every target must be non-empty after trimming");
    }
}

inline void validate(const KnowledgeChunk& c) {
    if (c.id.empty()) throw validation_error("chunk id must be non-empty");
    if (c.text.empty()) throw validation_error("chunk '" + c.id + "': text must be non-empty");
    if (c.embedding) {
        for (double v : *c.embedding) {
            if (!std::isfinite(v))
                throw validation_error("chunk '" + c.id + "': embedding has a non-finite component");
        }
    }
}

inline void validate(const RetrievalResult& r) {
    if (r.query_id.empty()) throw validation_error("retrieval result query_id must be non-empty");
    for (std::size_t i = 0; i + 1 < r.ranked.size(); ++i) {
        if (r.ranked[i].score < r.ranked[i + 1].score)
            throw validation_error("retrieval result '" + r.query_id + "': scores must be non-increasing");
    }
    std::vector<std::string_view> ids;
    ids.reserve(r.ranked.size());
    for (const auto& e : r.ranked) ids.push_back(e.chunk_id);
    std::sort(ids.begin(), ids.end());
    for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
        if (ids[i] == ids[i + 1])
            throw validation_error("retrieval result '" + r.query_id + "': duplicate chunk_id '" +
                                   std::string(ids[i]) + "'");
    }
}

inline void validate(const Rewrite& r) {
    if (r.query_id.empty()) throw validation_error("rewrite query_id must be non-empty");
    if (r.source_index < 0 && r.source_index != kIrrelevantSourceIndex)
        throw validation_error("rewrite for '" + r.query_id + "': source_index must be >= 0 or the irrelevant sentinel");
    if (r.is_irrelevant_marker() && r.text != kIrrelevantText)
        throw validation_error("rewrite for '" + r.query_id + "': irrelevant sentinel must carry the literal text \"" +
                               std::string(kIrrelevantText) + "\"");
}

inline void validate(const SupportivenessRecord& s) {
    if (s.query_id.empty()) throw validation_error("supportiveness record query_id must be non-empty");
    if (!(std::isfinite(s.pp_raw) && std::isfinite(s.pp_retrieval) && std::isfinite(s.ratio) && std::isfinite(s.score)))
        throw validation_error("supportiveness record '" + s.query_id + "': all fields must be finite");
    if (s.pp_raw < 1.0 || s.pp_retrieval < 1.0)
        throw validation_error("supportiveness record '" + s.query_id + "': perplexities must be >= 1");
    if (s.ratio <= 0.0 || s.score <= 0.0)
        throw validation_error("supportiveness record '" + s.query_id + "': ratio and score must be positive");
    if (!detail::rel_close(s.ratio, s.pp_raw / s.pp_retrieval, 1e-9))
        throw validation_error("supportiveness record '" + s.query_id + "': ratio inconsistent with perplexities");
    if (!detail::rel_close(s.score, s.ratio / sigmoid(s.pp_raw), 1e-9))
        throw validation_error("supportiveness record '" + s.query_id + "': score inconsistent with ratio");
    if (s.content_kind == ContentKind::Rewrite && s.source_index < 0 && s.source_index != kIrrelevantSourceIndex)
        throw validation_error("supportiveness record '" + s.query_id + "': bad source_index");
}

inline void validate(const SftExample& e) {
    if (e.input.empty()) throw validation_error("sft example input must be non-empty");
    if (e.target.empty()) throw validation_error("sft example target must be non-empty");
}

inline void validate(const PreferencePair& p) {
    if (p.input.empty()) throw validation_error("preference pair input must be non-empty");
    if (!(std::isfinite(p.ss_chosen) && std::isfinite(p.ss_rejected)))
        throw validation_error("preference pair: scores must be finite");
    // Construction guarantees ss_chosen - ss_rejected > margin; on load we only
    // require strict preference so files built with margin < 1 stay readable.
    if (!(p.ss_chosen > p.ss_rejected))
        throw validation_error("preference pair: ss_chosen must exceed ss_rejected");
}

}  // namespace skr

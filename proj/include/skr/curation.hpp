// Draft-dataset assembly and supportiveness-based refinement: the retrieval
// depth mix, the irrelevant/failed/successful trichotomy that yields SFT
// examples, and preference-pair construction for DPO.
#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "skr/common.hpp"
#include "skr/core.hpp"
#include "skr/jsonl.hpp"
#include "skr/prompt.hpp"

namespace skr {

struct DraftSample {
    Query query;
    int retrieval_depth = 0;             // in [1, 5]
    std::vector<KnowledgeChunk> chunks;  // exactly retrieval_depth entries
    std::vector<Rewrite> rewrites;       // non-empty, usually 5

    bool operator==(const DraftSample&) const = default;
};

inline void validate(const DraftSample& s) {
    validate(s.query);
    if (s.retrieval_depth < 1 || s.retrieval_depth > 5)
        throw validation_error("draft '" + s.query.id + "': retrieval_depth must be in [1, 5]");
    if (s.chunks.size() != static_cast<std::size_t>(s.retrieval_depth))
        throw validation_error("draft '" + s.query.id + "': chunk count " + std::to_string(s.chunks.size()) +
                               " does not match retrieval_depth " + std::to_string(s.retrieval_depth));
    for (const auto& c : s.chunks) validate(c);
    if (s.rewrites.empty()) throw validation_error("draft '" + s.query.id + "': rewrites must be non-empty");
    for (const auto& r : s.rewrites) {
        validate(r);
        if (r.query_id != s.query.id)
            throw validation_error("draft '" + s.query.id + "': rewrite belongs to query '" + r.query_id + "'");
    }
}

// Depth mix: 80% of samples use the top-5 chunks, the rest split evenly
// across depths 1-4. Largest-remainder apportionment keeps every bucket
// within one sample of its exact share and sums to n; ties favor depth 5,
// then ascending depth.
inline std::vector<int> assign_retrieval_depths(std::size_t n_samples, std::uint64_t rng_seed) {
    if (n_samples == 0) throw validation_error("assign_retrieval_depths: need at least one sample");

    constexpr int kDepths[5] = {5, 1, 2, 3, 4};
    constexpr double kShares[5] = {0.80, 0.05, 0.05, 0.05, 0.05};

    std::size_t counts[5];
    double remainders[5];
    std::size_t assigned = 0;
    for (int b = 0; b < 5; ++b) {
        const double quota = static_cast<double>(n_samples) * kShares[b];
        counts[b] = static_cast<std::size_t>(quota);
        remainders[b] = quota - static_cast<double>(counts[b]);
        assigned += counts[b];
    }
    int order[5] = {0, 1, 2, 3, 4};
    std::stable_sort(order, order + 5, [&](int a, int b) { return remainders[a] > remainders[b]; });
    for (std::size_t left = n_samples - assigned, i = 0; left > 0; --left, ++i) counts[order[i % 5]] += 1;

    std::vector<int> depths;
    depths.reserve(n_samples);
    for (int b = 0; b < 5; ++b) depths.insert(depths.end(), counts[b], kDepths[b]);

    DetRng rng(rng_seed);
    rng.shuffle(depths);
    return depths;
}

enum class SampleLabel { Irrelevant, Kept };
enum class RewriteLabel { Failed, Successful };

struct RefinementOutcome {
    SampleLabel sample_label = SampleLabel::Kept;
    std::vector<RewriteLabel> per_rewrite;  // empty when the sample is Irrelevant
    double delta = 1.0;
};

struct RefineResult {
    RefinementOutcome outcome;
    std::vector<SftExample> examples;
};

// Refinement rules for one sample. When neither the raw retrieval nor any
// rewrite reaches score 1 the whole sample is relabeled "irrelevant";
// otherwise each rewrite survives only if ss_rewrite / ss_raw >= delta.
inline RefineResult refine(const DraftSample& sample, double ss_raw, std::span<const double> ss_rewrites,
                           double delta) {
    if (!(delta > 0.0)) throw validation_error("refine: delta must be positive");
    if (ss_rewrites.size() != sample.rewrites.size())
        throw validation_error("refine: sample '" + sample.query.id + "' has " +
                               std::to_string(sample.rewrites.size()) + " rewrites but " +
                               std::to_string(ss_rewrites.size()) + " scores");

    const std::string input = build_rewriter_input(sample.query, sample.chunks);

    RefineResult result;
    result.outcome.delta = delta;

    bool all_below_one = ss_raw < 1.0;
    for (double ss : ss_rewrites) all_below_one = all_below_one && ss < 1.0;

    if (all_below_one) {
        result.outcome.sample_label = SampleLabel::Irrelevant;
        result.examples.push_back({input, kIrrelevantText});
        return result;
    }

    result.outcome.sample_label = SampleLabel::Kept;
    result.outcome.per_rewrite.reserve(ss_rewrites.size());
    for (std::size_t i = 0; i < ss_rewrites.size(); ++i) {
        if (ss_rewrites[i] / ss_raw < delta) {
            result.outcome.per_rewrite.push_back(RewriteLabel::Failed);
        } else {
            result.outcome.per_rewrite.push_back(RewriteLabel::Successful);
            result.examples.push_back({input, sample.rewrites[i].text});
        }
    }
    return result;
}

struct ScoredCandidate {
    int source_index = 0;  // kIrrelevantSourceIndex for the pseudo-rewrite
    std::string text;
    double ss = 0.0;
};

// All ordered pairs over the candidate set whose supportiveness gap exceeds
// the margin. Ordering: descending chosen score, then ascending rejected
// score, then source indices.
inline std::vector<PreferencePair> build_preference_pairs(const DraftSample& sample,
                                                          std::span<const ScoredCandidate> candidates,
                                                          double margin = 1.0) {
    if (margin < 0.0) throw validation_error("build_preference_pairs: margin must be >= 0");
    if (candidates.size() < 2)
        throw validation_error("build_preference_pairs: sample '" + sample.query.id +
                               "' needs at least two scored candidates");

    const std::string input = build_rewriter_input(sample.query, sample.chunks);

    struct RawPair {
        std::size_t w, l;
    };
    std::vector<RawPair> selected;
    for (std::size_t w = 0; w < candidates.size(); ++w) {
        for (std::size_t l = 0; l < candidates.size(); ++l) {
            if (w == l) continue;
            if (candidates[w].ss - candidates[l].ss > margin) selected.push_back({w, l});
        }
    }
    std::sort(selected.begin(), selected.end(), [&](const RawPair& a, const RawPair& b) {
        const auto& aw = candidates[a.w];
        const auto& bw = candidates[b.w];
        if (aw.ss != bw.ss) return aw.ss > bw.ss;
        const auto& al = candidates[a.l];
        const auto& bl = candidates[b.l];
        if (al.ss != bl.ss) return al.ss < bl.ss;
        if (aw.source_index != bw.source_index) return aw.source_index < bw.source_index;
        return al.source_index < bl.source_index;
    });

    std::vector<PreferencePair> pairs;
    pairs.reserve(selected.size());
    for (const RawPair& p : selected) {
        pairs.push_back({input, candidates[p.w].text, candidates[p.l].text, candidates[p.w].ss, candidates[p.l].ss});
    }
    return pairs;
}

// --- score bookkeeping shared by refine/pairs stages ---

struct SampleScoreSet {
    std::optional<double> raw;
    std::map<int, double> by_source_index;  // rewrite scores, -1 for the pseudo-rewrite
};

using ScoreMap = std::map<std::string, SampleScoreSet>;

inline ScoreMap group_scores(std::span<const SupportivenessRecord> records) {
    ScoreMap map;
    for (const auto& rec : records) {
        SampleScoreSet& set = map[rec.query_id];
        if (rec.content_kind == ContentKind::RawRetrieval) {
            if (set.raw) throw validation_error("duplicate raw score for query '" + rec.query_id + "'");
            set.raw = rec.score;
        } else {
            if (!set.by_source_index.emplace(rec.source_index, rec.score).second)
                throw validation_error("duplicate rewrite score for query '" + rec.query_id + "', source " +
                                       std::to_string(rec.source_index));
        }
    }
    return map;
}

namespace detail {

inline const SampleScoreSet& scores_for(const ScoreMap& scores, const std::string& query_id) {
    auto it = scores.find(query_id);
    if (it == scores.end()) throw validation_error("missing scores for query '" + query_id + "'");
    return it->second;
}

inline double rewrite_score_for(const SampleScoreSet& set, const std::string& query_id, int source_index) {
    auto it = set.by_source_index.find(source_index);
    if (it == set.by_source_index.end())
        throw validation_error("missing score for query '" + query_id + "', source " + std::to_string(source_index));
    return it->second;
}

}  // namespace detail

struct RefinementStats {
    std::size_t samples = 0;
    std::size_t irrelevant_samples = 0;
    std::size_t kept_samples = 0;
    std::size_t rewrites = 0;
    std::size_t failed_rewrites = 0;
    std::size_t successful_rewrites = 0;
    std::size_t sft_examples = 0;
    double delta = 1.0;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["delta"] = delta;
        j["samples"] = samples;
        j["irrelevant_samples"] = irrelevant_samples;
        j["kept_samples"] = kept_samples;
        j["rewrites"] = rewrites;
        j["failed_rewrites"] = failed_rewrites;
        j["successful_rewrites"] = successful_rewrites;
        j["sft_examples"] = sft_examples;
        j["irrelevant_fraction"] = samples ? static_cast<double>(irrelevant_samples) / static_cast<double>(samples) : 0.0;
        j["failed_fraction"] = rewrites ? static_cast<double>(failed_rewrites) / static_cast<double>(rewrites) : 0.0;
        j["successful_fraction"] =
            rewrites ? static_cast<double>(successful_rewrites) / static_cast<double>(rewrites) : 0.0;
        return j;
    }
};

struct RefineCorpusResult {
    std::vector<SftExample> examples;  // ordered by query id
    std::vector<RefinementOutcome> outcomes;
    RefinementStats stats;
};

inline RefineCorpusResult refine_corpus(std::span<const DraftSample> drafts, const ScoreMap& scores, double delta) {
    std::vector<std::size_t> order(drafts.size());
    for (std::size_t i = 0; i < drafts.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return drafts[a].query.id < drafts[b].query.id; });

    RefineCorpusResult result;
    result.outcomes.resize(drafts.size());
    result.stats.delta = delta;
    for (std::size_t idx : order) {
        const DraftSample& sample = drafts[idx];
        const SampleScoreSet& set = detail::scores_for(scores, sample.query.id);
        if (!set.raw) throw validation_error("missing raw retrieval score for query '" + sample.query.id + "'");
        std::vector<double> ss_rewrites;
        ss_rewrites.reserve(sample.rewrites.size());
        for (const Rewrite& r : sample.rewrites)
            ss_rewrites.push_back(detail::rewrite_score_for(set, sample.query.id, r.source_index));

        RefineResult one = refine(sample, *set.raw, ss_rewrites, delta);
        result.stats.samples += 1;
        result.stats.rewrites += sample.rewrites.size();
        if (one.outcome.sample_label == SampleLabel::Irrelevant) {
            result.stats.irrelevant_samples += 1;
        } else {
            result.stats.kept_samples += 1;
            for (RewriteLabel label : one.outcome.per_rewrite) {
                if (label == RewriteLabel::Failed)
                    result.stats.failed_rewrites += 1;
                else
                    result.stats.successful_rewrites += 1;
            }
        }
        result.stats.sft_examples += one.examples.size();
        result.outcomes[idx] = std::move(one.outcome);
        for (auto& ex : one.examples) result.examples.push_back(std::move(ex));
    }
    return result;
}

// Candidate set per sample: every draft rewrite plus the "irrelevant"
// pseudo-rewrite, all scored by the standard pipeline.
inline std::vector<PreferencePair> build_pairs_corpus(std::span<const DraftSample> drafts, const ScoreMap& scores,
                                                      double margin = 1.0) {
    std::vector<std::size_t> order(drafts.size());
    for (std::size_t i = 0; i < drafts.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return drafts[a].query.id < drafts[b].query.id; });

    std::vector<PreferencePair> pairs;
    for (std::size_t idx : order) {
        const DraftSample& sample = drafts[idx];
        const SampleScoreSet& set = detail::scores_for(scores, sample.query.id);
        std::vector<ScoredCandidate> candidates;
        candidates.reserve(sample.rewrites.size() + 1);
        for (const Rewrite& r : sample.rewrites)
            candidates.push_back({r.source_index, r.text, detail::rewrite_score_for(set, sample.query.id, r.source_index)});
        candidates.push_back({kIrrelevantSourceIndex, kIrrelevantText,
                              detail::rewrite_score_for(set, sample.query.id, kIrrelevantSourceIndex)});
        auto sample_pairs = build_preference_pairs(sample, candidates, margin);
        pairs.insert(pairs.end(), std::make_move_iterator(sample_pairs.begin()),
                     std::make_move_iterator(sample_pairs.end()));
    }
    return pairs;
}

// --- draft assembly and JSONL round trip ---

inline std::vector<DraftSample> assemble_drafts(std::span<const Query> queries,
                                                std::span<const KnowledgeChunk> chunks,
                                                std::span<const RetrievalResult> retrieval,
                                                std::span<const Rewrite> rewrites, std::uint64_t seed) {
    std::unordered_map<std::string_view, const KnowledgeChunk*> chunk_by_id;
    for (const auto& c : chunks) chunk_by_id.emplace(c.id, &c);
    std::unordered_map<std::string_view, const RetrievalResult*> retrieval_by_query;
    for (const auto& r : retrieval) retrieval_by_query.emplace(r.query_id, &r);
    std::unordered_map<std::string_view, std::vector<const Rewrite*>> rewrites_by_query;
    for (const auto& r : rewrites) rewrites_by_query[r.query_id].push_back(&r);

    const std::vector<int> depths = assign_retrieval_depths(queries.size(), seed);

    std::vector<DraftSample> drafts;
    drafts.reserve(queries.size());
    for (std::size_t i = 0; i < queries.size(); ++i) {
        const Query& q = queries[i];
        DraftSample sample;
        sample.query = q;
        sample.retrieval_depth = depths[i];

        auto rit = retrieval_by_query.find(q.id);
        if (rit == retrieval_by_query.end())
            throw validation_error("no retrieval result for query '" + q.id + "'");
        const RetrievalResult& rr = *rit->second;
        if (rr.ranked.size() < static_cast<std::size_t>(sample.retrieval_depth))
            throw validation_error("query '" + q.id + "': retrieval has " + std::to_string(rr.ranked.size()) +
                                   " entries, need " + std::to_string(sample.retrieval_depth));
        for (int d = 0; d < sample.retrieval_depth; ++d) {
            auto cit = chunk_by_id.find(rr.ranked[static_cast<std::size_t>(d)].chunk_id);
            if (cit == chunk_by_id.end())
                throw validation_error("query '" + q.id + "': retrieval references unknown chunk '" +
                                       rr.ranked[static_cast<std::size_t>(d)].chunk_id + "'");
            // Drafts carry text only; embeddings are dead weight downstream.
            sample.chunks.push_back({cit->second->id, cit->second->text, std::nullopt});
        }

        auto wit = rewrites_by_query.find(q.id);
        if (wit == rewrites_by_query.end())
            throw validation_error("no rewrites for query '" + q.id + "'");
        for (const Rewrite* r : wit->second) sample.rewrites.push_back(*r);

        validate(sample);
        drafts.push_back(std::move(sample));
    }
    std::sort(drafts.begin(), drafts.end(),
              [](const DraftSample& a, const DraftSample& b) { return a.query.id < b.query.id; });
    return drafts;
}

inline std::string to_jsonl_line(const DraftSample& s) {
    std::string out = "{\"query\":{\"id\":" + jsonl::quote(s.query.id) + ",\"text\":" + jsonl::quote(s.query.text) +
                      ",\"targets\":[";
    for (std::size_t i = 0; i < s.query.targets.size(); ++i) {
        if (i) out += ',';
        out += jsonl::quote(s.query.targets[i]);
    }
    out += "]},\"retrieval_depth\":" + std::to_string(s.retrieval_depth) + ",\"chunks\":[";
    for (std::size_t i = 0; i < s.chunks.size(); ++i) {
        if (i) out += ',';
        out += "{\"id\":" + jsonl::quote(s.chunks[i].id) + ",\"text\":" + jsonl::quote(s.chunks[i].text) + "}";
    }
    out += "],\"rewrites\":[";
    for (std::size_t i = 0; i < s.rewrites.size(); ++i) {
        if (i) out += ',';
        out += "{\"query_id\":" + jsonl::quote(s.rewrites[i].query_id) +
               ",\"source_index\":" + std::to_string(s.rewrites[i].source_index) +
               ",\"text\":" + jsonl::quote(s.rewrites[i].text) + "}";
    }
    out += "]}";
    return out;
}

inline std::vector<DraftSample> load_drafts(const std::string& path) {
    std::vector<DraftSample> out;
    std::set<std::string> seen;
    jsonl::for_each_object(path, [&](std::size_t line, const jsonl::json& j) {
        DraftSample s;
        const auto& qj = jsonl::field(j, "query", path, line);
        if (!qj.is_object()) jsonl::fail(path, line, "field \"query\" must be an object");
        s.query.id = jsonl::get_string(qj, "id", path, line);
        s.query.text = jsonl::get_string(qj, "text", path, line);
        const auto& targets = jsonl::field(qj, "targets", path, line);
        if (!targets.is_array()) jsonl::fail(path, line, "query targets must be an array");
        for (const auto& t : targets) {
            if (!t.is_string()) jsonl::fail(path, line, "query targets must contain strings");
            s.query.targets.push_back(t.get<std::string>());
        }
        s.retrieval_depth = static_cast<int>(jsonl::get_int(j, "retrieval_depth", path, line));
        const auto& chunks = jsonl::field(j, "chunks", path, line);
        if (!chunks.is_array()) jsonl::fail(path, line, "field \"chunks\" must be an array");
        for (const auto& c : chunks) {
            if (!c.is_object()) jsonl::fail(path, line, "chunks must contain objects");
            s.chunks.push_back({jsonl::get_string(c, "id", path, line), jsonl::get_string(c, "text", path, line),
                                std::nullopt});
        }
        const auto& rewrites = jsonl::field(j, "rewrites", path, line);
        if (!rewrites.is_array()) jsonl::fail(path, line, "field \"rewrites\" must be an array");
        for (const auto& r : rewrites) {
            if (!r.is_object()) jsonl::fail(path, line, "rewrites must contain objects");
            Rewrite rw;
            rw.query_id = jsonl::get_string(r, "query_id", path, line);
            rw.source_index = static_cast<int>(jsonl::get_int(r, "source_index", path, line));
            rw.text = jsonl::get_string(r, "text", path, line);
            s.rewrites.push_back(std::move(rw));
        }
        try {
            validate(s);
        } catch (const validation_error& e) {
            jsonl::fail(path, line, e.what());
        }
        if (!seen.insert(s.query.id).second) jsonl::fail(path, line, "duplicate draft for query '" + s.query.id + "'");
        out.push_back(std::move(s));
    });
    return out;
}

}  // namespace skr

// Perplexity of a scored continuation, the raw/retrieval perplexity ratio,
// and the supportiveness score that corrects the ratio for how easily the
// model answers without any retrieval.
#pragma once

#include <cmath>
#include <future>
#include <iostream>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "skr/common.hpp"
#include "skr/core.hpp"
#include "skr/prompt.hpp"
#include "skr/provider.hpp"

namespace skr {

// exp(-(1/N) sum log P(w_i | S ∘ w_<i)), natural log convention.
inline double perplexity(const TargetLogprobs& lp) {
    validate(lp);
    double sum = 0.0;
    for (double v : lp.logprobs) sum += v;
    const double mean = sum / static_cast<double>(lp.logprobs.size());
    return std::exp(-mean);
}

// Arithmetic mean of per-target perplexities (mean of exponentials, not
// exponential of the pooled mean).
inline double avg_perplexity(std::span<const TargetLogprobs> lps) {
    if (lps.empty()) throw validation_error("avg_perplexity: need at least one target");
    double sum = 0.0;
    for (const TargetLogprobs& lp : lps) sum += perplexity(lp);
    return sum / static_cast<double>(lps.size());
}

struct Supportiveness {
    double ratio;
    double score;
};

inline Supportiveness supportiveness(double pp_raw, double pp_retrieval) {
    if (!std::isfinite(pp_raw) || !std::isfinite(pp_retrieval))
        throw validation_error("supportiveness: perplexities must be finite");
    if (pp_raw < 1.0 || pp_retrieval < 1.0)
        throw validation_error("supportiveness: perplexities must be >= 1");
    const double ratio = pp_raw / pp_retrieval;
    return {ratio, ratio / sigmoid(pp_raw)};
}

struct RawRetrievalContent {
    std::vector<std::string> chunk_texts;  // at least one
};

struct RewriteContent {
    int source_index = 0;  // kIrrelevantSourceIndex for the pseudo-rewrite
    std::string text;
};

using ScoreContent = std::variant<RawRetrievalContent, RewriteContent>;

// pp_raw does not depend on the content, so one query scored against many
// contents computes it once. Keys carry the template hash and provider
// identity; computation is at-most-once even under concurrent callers.
class PpRawCache {
public:
    template <typename Fn>
    double get_or_compute(const std::string& key, Fn&& compute) {
        std::shared_ptr<std::promise<double>> promise;
        std::shared_future<double> future;
        {
            std::lock_guard<std::mutex> lock(mutex_);
            auto [it, inserted] = futures_.try_emplace(key);
            if (inserted) {
                promise = std::make_shared<std::promise<double>>();
                it->second = promise->get_future().share();
            }
            future = it->second;
        }
        if (promise) {
            try {
                promise->set_value(compute());
            } catch (...) {
                promise->set_exception(std::current_exception());
            }
        }
        return future.get();
    }

    std::size_t size() const {
        std::lock_guard<std::mutex> lock(mutex_);
        return futures_.size();
    }

private:
    mutable std::mutex mutex_;
    std::unordered_map<std::string, std::shared_future<double>> futures_;
};

inline std::string pp_raw_cache_key(const Query& query, const TemplateSet& templates, const Provider& provider) {
    return query.id + "\x1f" + hash_hex(templates.stable_hash()) + "\x1f" + provider.identity();
}

namespace detail {

inline double avg_pp_for_prompt(Provider& provider, const std::string& prompt, const Query& query) {
    std::vector<TargetLogprobs> lps;
    lps.reserve(query.targets.size());
    for (const std::string& target : query.targets) {
        try {
            lps.push_back(provider.score_continuation(prompt, target));
        } catch (const std::exception& e) {
            throw transport_error("scoring query '" + query.id + "': " + e.what());
        }
    }
    return avg_perplexity(lps);
}

}  // namespace detail

// Scores one (query, content) pair: 2 x |targets| provider calls, minus the
// without-retrieval half when the cache already holds pp_raw for this query.
inline SupportivenessRecord score_pair(Provider& provider, const TemplateSet& templates, const Query& query,
                                       const ScoreContent& content, PpRawCache* cache = nullptr) {
    validate(query);

    std::vector<std::string> knowledge;
    SupportivenessRecord record;
    record.query_id = query.id;
    if (const auto* raw = std::get_if<RawRetrievalContent>(&content)) {
        if (raw->chunk_texts.empty())
            throw validation_error("score_pair: raw retrieval content must carry at least one chunk");
        knowledge = raw->chunk_texts;
        record.content_kind = ContentKind::RawRetrieval;
        record.source_index = 0;
    } else {
        const auto& rewrite = std::get<RewriteContent>(content);
        knowledge = {rewrite.text};
        record.content_kind = ContentKind::Rewrite;
        record.source_index = rewrite.source_index;
    }

    const std::string prompt_without = render_no_retrieval(templates.without_knowledge, query);
    const std::string prompt_with = render_with_retrieval(templates.with_knowledge, query, knowledge);

    const auto compute_raw = [&]() { return detail::avg_pp_for_prompt(provider, prompt_without, query); };
    double pp_raw = cache ? cache->get_or_compute(pp_raw_cache_key(query, templates, provider), compute_raw)
                          : compute_raw();
    double pp_retrieval = detail::avg_pp_for_prompt(provider, prompt_with, query);

    // Guard against a misbehaving backend; a proper distribution over the
    // observed tokens cannot yield perplexity below 1.
    if (pp_raw < 1.0) {
        std::cerr << "warning: clamping pp_raw " << pp_raw << " to 1 for query '" << query.id << "'\n";
        pp_raw = 1.0;
    }
    if (pp_retrieval < 1.0) {
        std::cerr << "warning: clamping pp_retrieval " << pp_retrieval << " to 1 for query '" << query.id << "'\n";
        pp_retrieval = 1.0;
    }

    const Supportiveness ss = supportiveness(pp_raw, pp_retrieval);
    record.pp_raw = pp_raw;
    record.pp_retrieval = pp_retrieval;
    record.ratio = ss.ratio;
    record.score = ss.score;
    return record;
}

}  // namespace skr

// In-memory dense retrieval: exact dot-product top-k over stored embeddings.
// Exact linear scan, no ANN structures; ties on score break by ascending
// chunk id so rankings are reproducible.
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "skr/common.hpp"
#include "skr/core.hpp"

namespace skr {

enum class EncoderMode {
    DualEncoder,    // separate query/document encoders
    SharedEncoder,  // one encoder for both sides
};

inline double similarity(std::span<const double> query_vec, std::span<const double> chunk_vec) {
    if (query_vec.size() != chunk_vec.size())
        throw validation_error("similarity: dimension mismatch (" + std::to_string(query_vec.size()) + " vs " +
                               std::to_string(chunk_vec.size()) + ")");
    double acc = 0.0;
    for (std::size_t i = 0; i < query_vec.size(); ++i) acc += query_vec[i] * chunk_vec[i];
    return acc;
}

class EmbeddingIndex {
public:
    static EmbeddingIndex build(std::span<const KnowledgeChunk> chunks, std::size_t dimension, EncoderMode mode) {
        if (dimension == 0) throw validation_error("build_index: dimension must be positive");
        EmbeddingIndex index;
        index.dimension_ = dimension;
        index.mode_ = mode;
        index.ids_.reserve(chunks.size());
        index.data_.reserve(chunks.size() * dimension);

        std::vector<std::size_t> order(chunks.size());
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(),
                  [&](std::size_t a, std::size_t b) { return chunks[a].id < chunks[b].id; });

        for (std::size_t pos : order) {
            const KnowledgeChunk& c = chunks[pos];
            if (!c.embedding)
                throw validation_error("build_index: chunk '" + c.id + "' has no embedding");
            if (c.embedding->size() != dimension)
                throw validation_error("build_index: chunk '" + c.id + "' has dimension " +
                                       std::to_string(c.embedding->size()) + ", expected " +
                                       std::to_string(dimension));
            for (double v : *c.embedding) {
                if (!std::isfinite(v))
                    throw validation_error("build_index: chunk '" + c.id + "' has a non-finite component");
            }
            if (!index.ids_.empty() && index.ids_.back() == c.id)
                throw validation_error("build_index: duplicate chunk id '" + c.id + "'");
            index.ids_.push_back(c.id);
            index.data_.insert(index.data_.end(), c.embedding->begin(), c.embedding->end());
        }
        return index;
    }

    std::size_t size() const { return ids_.size(); }
    std::size_t dimension() const { return dimension_; }
    EncoderMode mode() const { return mode_; }

    std::span<const double> vector_at(std::size_t i) const {
        return std::span<const double>(data_.data() + i * dimension_, dimension_);
    }
    const std::string& id_at(std::size_t i) const { return ids_[i]; }

    RetrievalResult top_k(const std::string& query_id, std::span<const double> query_vec, std::size_t k) const {
        if (ids_.empty()) throw validation_error("top_k: index is empty");
        if (k == 0) throw validation_error("top_k: k must be positive");
        if (query_vec.size() != dimension_)
            throw validation_error("top_k: query dimension " + std::to_string(query_vec.size()) + " does not match index dimension " +
                                   std::to_string(dimension_));

        std::vector<double> scores(ids_.size());
        for (std::size_t i = 0; i < ids_.size(); ++i) scores[i] = similarity(query_vec, vector_at(i));

        const std::size_t take = std::min(k, ids_.size());
        std::vector<std::size_t> order(ids_.size());
        std::iota(order.begin(), order.end(), 0);
        // Entries are stored sorted by id, so index order breaks score ties
        // by ascending chunk id.
        const auto better = [&](std::size_t a, std::size_t b) {
            if (scores[a] != scores[b]) return scores[a] > scores[b];
            return a < b;
        };
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(), better);

        RetrievalResult result;
        result.query_id = query_id;
        result.ranked.reserve(take);
        for (std::size_t i = 0; i < take; ++i) result.ranked.push_back({ids_[order[i]], scores[order[i]]});
        return result;
    }

private:
    std::size_t dimension_ = 0;
    EncoderMode mode_ = EncoderMode::DualEncoder;
    std::vector<std::string> ids_;  // ascending
    std::vector<double> data_;      // row-major, ids_.size() x dimension_
};

}  // namespace skr

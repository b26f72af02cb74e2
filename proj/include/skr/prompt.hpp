// Deterministic prompt construction: the with/without-knowledge prompts used
// for perplexity scoring and the newline-joined rewriter input.
#pragma once

#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "skr/common.hpp"
#include "skr/core.hpp"

namespace skr {

inline constexpr std::string_view kQueryPlaceholder = "{query}";
inline constexpr std::string_view kKnowledgePlaceholder = "{knowledge}";

namespace detail {

inline std::size_t count_occurrences(std::string_view body, std::string_view needle) {
    std::size_t count = 0;
    std::size_t pos = 0;
    while ((pos = body.find(needle, pos)) != std::string_view::npos) {
        ++count;
        pos += needle.size();
    }
    return count;
}

// Substitutes placeholders at their positions in the template body only, so
// placeholder-like text inside the substituted values stays verbatim.
inline std::string render_body(std::string_view body, std::string_view query_text, const std::string* knowledge) {
    std::string out;
    out.reserve(body.size() + query_text.size());
    std::size_t i = 0;
    while (i < body.size()) {
        if (body.compare(i, kQueryPlaceholder.size(), kQueryPlaceholder) == 0) {
            out += query_text;
            i += kQueryPlaceholder.size();
        } else if (knowledge != nullptr && body.compare(i, kKnowledgePlaceholder.size(), kKnowledgePlaceholder) == 0) {
            out += *knowledge;
            i += kKnowledgePlaceholder.size();
        } else {
            out += body[i];
            ++i;
        }
    }
    return out;
}

}  // namespace detail

struct PromptTemplate {
    std::string name;
    std::string body;
    std::string knowledge_separator;

    bool has_knowledge_slot() const { return body.find(kKnowledgePlaceholder) != std::string::npos; }
};

inline void validate_template(const PromptTemplate& t, bool expects_knowledge) {
    if (detail::count_occurrences(t.body, kQueryPlaceholder) != 1)
        throw validation_error("template '" + t.name + "': body must contain {query} exactly once");
    const std::size_t knowledge_slots = detail::count_occurrences(t.body, kKnowledgePlaceholder);
    if (knowledge_slots > 1)
        throw validation_error("template '" + t.name + "': body may contain {knowledge} at most once");
    if (expects_knowledge && knowledge_slots == 0)
        throw validation_error("template '" + t.name + "': body must contain {knowledge}");
    if (!expects_knowledge && knowledge_slots != 0)
        throw validation_error("template '" + t.name + "': body must not contain {knowledge}");
}

// A usable set always carries both prompt forms.
struct TemplateSet {
    PromptTemplate with_knowledge;
    PromptTemplate without_knowledge;

    static TemplateSet defaults() {
        TemplateSet set;
        set.with_knowledge = {"with_knowledge", "Knowledge: {knowledge}\n\nQuestion: {query}\nAnswer:", "\n"};
        set.without_knowledge = {"without_knowledge", "Question: {query}\nAnswer:", "\n"};
        return set;
    }

    static TemplateSet load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw validation_error("cannot open template file '" + path + "'");
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(in);
        } catch (const nlohmann::json::parse_error& e) {
            throw validation_error("template file '" + path + "': malformed JSON: " + e.what());
        }
        for (const char* key : {"with_knowledge", "without_knowledge", "knowledge_separator"}) {
            if (!j.contains(key) || !j[key].is_string())
                throw validation_error("template file '" + path + "': missing string field \"" + key + "\"");
        }
        TemplateSet set;
        const std::string sep = j["knowledge_separator"].get<std::string>();
        set.with_knowledge = {"with_knowledge", j["with_knowledge"].get<std::string>(), sep};
        set.without_knowledge = {"without_knowledge", j["without_knowledge"].get<std::string>(), sep};
        set.validate();
        return set;
    }

    void validate() const {
        validate_template(with_knowledge, true);
        validate_template(without_knowledge, false);
    }

    std::uint64_t stable_hash() const {
        std::uint64_t h = fnv1a64(with_knowledge.body);
        h = fnv1a64("\x1f", h);
        h = fnv1a64(with_knowledge.knowledge_separator, h);
        h = fnv1a64("\x1f", h);
        h = fnv1a64(without_knowledge.body, h);
        return h;
    }
};

inline std::string render_no_retrieval(const PromptTemplate& tmpl, const Query& query) {
    validate_template(tmpl, false);
    return detail::render_body(tmpl.body, query.text, nullptr);
}

inline std::string render_with_retrieval(const PromptTemplate& tmpl, const Query& query,
                                         std::span<const std::string> knowledge) {
    validate_template(tmpl, true);
    if (knowledge.empty()) throw validation_error("render_with_retrieval: knowledge list must be non-empty");
    std::string joined;
    for (std::size_t i = 0; i < knowledge.size(); ++i) {
        if (i) joined += tmpl.knowledge_separator;
        joined += knowledge[i];
    }
    return detail::render_body(tmpl.body, query.text, &joined);
}

inline constexpr std::size_t kDefaultMaxRewriterChunks = 5;

// Query text then each chunk text, newline-joined, chunk texts verbatim.
inline std::string build_rewriter_input(const Query& query, std::span<const KnowledgeChunk> chunks,
                                        std::size_t k_max = kDefaultMaxRewriterChunks) {
    if (chunks.empty()) throw validation_error("build_rewriter_input: chunk list must be non-empty");
    if (chunks.size() > k_max)
        throw validation_error("build_rewriter_input: " + std::to_string(chunks.size()) + " chunks exceeds k_max " +
                               std::to_string(k_max));
    std::string out = query.text;
    for (const KnowledgeChunk& c : chunks) {
        out += '\n';
        out += c.text;
    }
    return out;
}

}  // namespace skr

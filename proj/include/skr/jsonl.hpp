// Line-delimited JSON ingestion and emission for every dataset the pipeline
// reads or writes. Loading validates invariants and reports the offending
// line; emission uses a fixed key order and 17-significant-digit floats so
// that load ∘ emit is the identity on valid records.
#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

#include "skr/common.hpp"
#include "skr/core.hpp"

namespace skr {

// Row of an embedding ingestion file: {"id": ..., "embedding": [...]}.
struct EmbeddedVector {
    std::string id;
    std::vector<double> embedding;

    bool operator==(const EmbeddedVector&) const = default;
};

struct Prediction {
    std::string query_id;
    std::string text;

    bool operator==(const Prediction&) const = default;
};

inline void validate(const EmbeddedVector& e) {
    if (e.id.empty()) throw validation_error("embedding row id must be non-empty");
    if (e.embedding.empty()) throw validation_error("embedding row '" + e.id + "': vector must be non-empty");
    for (double v : e.embedding) {
        if (!std::isfinite(v)) throw validation_error("embedding row '" + e.id + "': non-finite component");
    }
}

inline void validate(const Prediction& p) {
    if (p.query_id.empty()) throw validation_error("prediction query_id must be non-empty");
}

namespace jsonl {

using json = nlohmann::json;

[[noreturn]] inline void fail(const std::string& path, std::size_t line, const std::string& msg) {
    throw validation_error(path + ":" + std::to_string(line) + ": " + msg);
}

inline const json& field(const json& j, const char* key, const std::string& path, std::size_t line) {
    auto it = j.find(key);
    if (it == j.end()) fail(path, line, std::string("missing required field \"") + key + "\"");
    return *it;
}

inline std::string get_string(const json& j, const char* key, const std::string& path, std::size_t line) {
    const json& v = field(j, key, path, line);
    if (!v.is_string()) fail(path, line, std::string("field \"") + key + "\" must be a string");
    return v.get<std::string>();
}

inline double get_double(const json& j, const char* key, const std::string& path, std::size_t line) {
    const json& v = field(j, key, path, line);
    if (!v.is_number()) fail(path, line, std::string("field \"") + key + "\" must be a number");
    return v.get<double>();
}

inline std::int64_t get_int(const json& j, const char* key, const std::string& path, std::size_t line) {
    const json& v = field(j, key, path, line);
    if (!v.is_number_integer()) fail(path, line, std::string("field \"") + key + "\" must be an integer");
    return v.get<std::int64_t>();
}

// Calls fn(line_number, parsed_object) for every non-empty line.
template <typename Fn>
void for_each_object(const std::string& path, Fn&& fn) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw validation_error("cannot open '" + path + "' for reading");
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            fail(path, lineno, std::string("malformed JSON: ") + e.what());
        }
        if (!j.is_object()) fail(path, lineno, "each line must be a JSON object");
        fn(lineno, j);
    }
}

inline std::string quote(std::string_view s) { return json(std::string(s)).dump(); }

inline void write_file(const std::string& path, const std::string& contents) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw validation_error("cannot open '" + path + "' for writing");
    out << contents;
    if (!out) throw validation_error("failed writing '" + path + "'");
}

}  // namespace jsonl

// --- per-type line builders (field order matches the wire schema) ---

inline std::string to_jsonl_line(const Query& q) {
    std::string s = "{\"id\":" + jsonl::quote(q.id) + ",\"text\":" + jsonl::quote(q.text) + ",\"targets\":[";
    for (std::size_t i = 0; i < q.targets.size(); ++i) {
        if (i) s += ',';
        s += jsonl::quote(q.targets[i]);
    }
    s += "]}";
    return s;
}

inline std::string to_jsonl_line(const KnowledgeChunk& c) {
    std::string s = "{\"id\":" + jsonl::quote(c.id) + ",\"text\":" + jsonl::quote(c.text);
    if (c.embedding) {
        s += ",\"embedding\":[";
        for (std::size_t i = 0; i < c.embedding->size(); ++i) {
            if (i) s += ',';
            s += format_double((*c.embedding)[i]);
        }
        s += ']';
    }
    s += '}';
    return s;
}

inline std::string to_jsonl_line(const RetrievalResult& r) {
    std::string s = "{\"query_id\":" + jsonl::quote(r.query_id) + ",\"ranked\":[";
    for (std::size_t i = 0; i < r.ranked.size(); ++i) {
        if (i) s += ',';
        s += "{\"chunk_id\":" + jsonl::quote(r.ranked[i].chunk_id) + ",\"score\":" + format_double(r.ranked[i].score) + "}";
    }
    s += "]}";
    return s;
}

inline std::string to_jsonl_line(const Rewrite& r) {
    return "{\"query_id\":" + jsonl::quote(r.query_id) + ",\"source_index\":" + std::to_string(r.source_index) +
           ",\"text\":" + jsonl::quote(r.text) + "}";
}

inline std::string to_jsonl_line(const SupportivenessRecord& s) {
    std::string out = "{\"query_id\":" + jsonl::quote(s.query_id) + ",\"content_kind\":";
    if (s.content_kind == ContentKind::RawRetrieval) {
        out += "\"raw\"";
    } else {
        out += "\"rewrite\",\"source_index\":" + std::to_string(s.source_index);
    }
    out += ",\"pp_raw\":" + format_double(s.pp_raw) + ",\"pp_retrieval\":" + format_double(s.pp_retrieval) +
           ",\"ratio\":" + format_double(s.ratio) + ",\"score\":" + format_double(s.score) + "}";
    return out;
}

inline std::string to_jsonl_line(const SftExample& e) {
    return "{\"input\":" + jsonl::quote(e.input) + ",\"target\":" + jsonl::quote(e.target) + "}";
}

inline std::string to_jsonl_line(const PreferencePair& p) {
    return "{\"input\":" + jsonl::quote(p.input) + ",\"chosen\":" + jsonl::quote(p.chosen) +
           ",\"rejected\":" + jsonl::quote(p.rejected) + ",\"ss_chosen\":" + format_double(p.ss_chosen) +
           ",\"ss_rejected\":" + format_double(p.ss_rejected) + "}";
}

inline std::string to_jsonl_line(const EmbeddedVector& e) {
    std::string s = "{\"id\":" + jsonl::quote(e.id) + ",\"embedding\":[";
    for (std::size_t i = 0; i < e.embedding.size(); ++i) {
        if (i) s += ',';
        s += format_double(e.embedding[i]);
    }
    s += "]}";
    return s;
}

inline std::string to_jsonl_line(const Prediction& p) {
    return "{\"query_id\":" + jsonl::quote(p.query_id) + ",\"text\":" + jsonl::quote(p.text) + "}";
}

// One object per line, newline-terminated, records validated first.
template <typename T>
void emit_dataset(const std::vector<T>& records, const std::string& path) {
    std::string buf;
    for (const T& rec : records) {
        validate(rec);
        buf += to_jsonl_line(rec);
        buf += '\n';
    }
    jsonl::write_file(path, buf);
}

inline std::vector<Query> load_queries(const std::string& path) {
    std::vector<Query> out;
    std::set<std::string> seen;
    jsonl::for_each_object(path, [&](std::size_t line, const jsonl::json& j) {
        Query q;
        q.id = jsonl::get_string(j, "id", path, line);
        q.text = jsonl::get_string(j, "text", path, line);
        const auto& targets = jsonl::field(j, "targets", path, line);
        if (!targets.is_array()) jsonl::fail(path, line, "field \"targets\" must be an array");
        for (const auto& t : targets) {
            if (!t.is_string()) jsonl::fail(path, line, "targets must contain strings");
            q.targets.push_back(t.get<std::string>());
        }
        try {
            validate(q);
        } catch (const validation_error& e) {
            jsonl::fail(path, line, e.what());
        }
        if (!seen.insert(q.id).second) jsonl::fail(path, line, "duplicate id '" + q.id + "'");
        out.push_back(std::move(q));
    });
    return out;
}

inline std::vector<KnowledgeChunk> load_chunks(const std::string& path) {
    std::vector<KnowledgeChunk> out;
    std::set<std::string> seen;
    jsonl::for_each_object(path, [&](std::size_t line, const jsonl::json& j) {
        KnowledgeChunk c;
        c.id = jsonl::get_string(j, "id", path, line);
        c.text = jsonl::get_string(j, "text", path, line);
        if (auto it = j.find("embedding"); it != j.end()) {
            if (!it->is_array()) jsonl::fail(path, line, "field \"embedding\" must be an array");
            std::vector<double> vec;
            for (const auto& v : *it) {
                if (!v.is_number()) jsonl::fail(path, line, "embedding must contain numbers");
                vec.push_back(v.get<double>());
            }
            c.embedding = std::move(vec);
        }
        try {
            validate(c);
        } catch (const validation_error& e) {
            jsonl::fail(path, line, e.what());
        }
        if (!seen.insert(c.id).second) jsonl::fail(path, line, "duplicate id '" + c.id + "'");
        out.push_back(std::move(c));
    });
    return out;
}

inline std::vector<RetrievalResult> load_retrieval(const std::string& path) {
    std::vector<RetrievalResult> out;
    std::set<std::string> seen;
    jsonl::for_each_object(path, [&](std::size_t line, const jsonl::json& j) {
        RetrievalResult r;
        r.query_id = jsonl::get_string(j, "query_id", path, line);
        const auto& ranked = jsonl::field(j, "ranked", path, line);
        if (!ranked.is_array()) jsonl::fail(path, line, "field \"ranked\" must be an array");
        for (const auto& e : ranked) {
            if (!e.is_object()) jsonl::fail(path, line, "ranked entries must be objects");
            ScoredChunk sc;
            sc.chunk_id = jsonl::get_string(e, "chunk_id", path, line);
            sc.score = jsonl::get_double(e, "score", path, line);
            r.ranked.push_back(std::move(sc));
        }
        try {
            validate(r);
        } catch (const validation_error& e) {
            jsonl::fail(path, line, e.what());
        }
        if (!seen.insert(r.query_id).second) jsonl::fail(path, line, "duplicate query_id '" + r.query_id + "'");
        out.push_back(std::move(r));
    });
    return out;
}

inline std::vector<Rewrite> load_rewrites(const std::string& path) {
    std::vector<Rewrite> out;
    std::set<std::pair<std::string, int>> seen;
    jsonl::for_each_object(path, [&](std::size_t line, const jsonl::json& j) {
        Rewrite r;
        r.query_id = jsonl::get_string(j, "query_id", path, line);
        r.source_index = static_cast<int>(jsonl::get_int(j, "source_index", path, line));
        r.text = jsonl::get_string(j, "text", path, line);
        try {
            validate(r);
        } catch (const validation_error& e) {
            jsonl::fail(path, line, e.what());
        }
        if (!seen.insert({r.query_id, r.source_index}).second)
            jsonl::fail(path, line, "duplicate rewrite (query_id '" + r.query_id + "', source_index " +
                                        std::to_string(r.source_index) + ")");
        out.push_back(std::move(r));
    });
    return out;
}

inline std::vector<SupportivenessRecord> load_scores(const std::string& path) {
    std::vector<SupportivenessRecord> out;
    std::set<std::tuple<std::string, int, int>> seen;
    jsonl::for_each_object(path, [&](std::size_t line, const jsonl::json& j) {
        SupportivenessRecord s;
        s.query_id = jsonl::get_string(j, "query_id", path, line);
        const std::string kind = jsonl::get_string(j, "content_kind", path, line);
        if (kind == "raw") {
            s.content_kind = ContentKind::RawRetrieval;
            s.source_index = 0;
        } else if (kind == "rewrite") {
            s.content_kind = ContentKind::Rewrite;
            s.source_index = static_cast<int>(jsonl::get_int(j, "source_index", path, line));
        } else {
            jsonl::fail(path, line, "content_kind must be \"raw\" or \"rewrite\"");
        }
        s.pp_raw = jsonl::get_double(j, "pp_raw", path, line);
        s.pp_retrieval = jsonl::get_double(j, "pp_retrieval", path, line);
        s.ratio = jsonl::get_double(j, "ratio", path, line);
        s.score = jsonl::get_double(j, "score", path, line);
        try {
            validate(s);
        } catch (const validation_error& e) {
            jsonl::fail(path, line, e.what());
        }
        const int kind_key = s.content_kind == ContentKind::RawRetrieval ? 0 : 1;
        if (!seen.insert({s.query_id, kind_key, kind_key ? s.source_index : 0}).second)
            jsonl::fail(path, line, "duplicate score record for query '" + s.query_id + "'");
        out.push_back(std::move(s));
    });
    return out;
}

inline std::vector<SftExample> load_sft(const std::string& path) {
    std::vector<SftExample> out;
    jsonl::for_each_object(path, [&](std::size_t line, const jsonl::json& j) {
        SftExample e;
        e.input = jsonl::get_string(j, "input", path, line);
        e.target = jsonl::get_string(j, "target", path, line);
        try {
            validate(e);
        } catch (const validation_error& err) {
            jsonl::fail(path, line, err.what());
        }
        out.push_back(std::move(e));
    });
    return out;
}

inline std::vector<PreferencePair> load_pairs(const std::string& path) {
    std::vector<PreferencePair> out;
    jsonl::for_each_object(path, [&](std::size_t line, const jsonl::json& j) {
        PreferencePair p;
        p.input = jsonl::get_string(j, "input", path, line);
        p.chosen = jsonl::get_string(j, "chosen", path, line);
        p.rejected = jsonl::get_string(j, "rejected", path, line);
        p.ss_chosen = jsonl::get_double(j, "ss_chosen", path, line);
        p.ss_rejected = jsonl::get_double(j, "ss_rejected", path, line);
        try {
            validate(p);
        } catch (const validation_error& e) {
            jsonl::fail(path, line, e.what());
        }
        out.push_back(std::move(p));
    });
    return out;
}

inline std::vector<EmbeddedVector> load_embeddings(const std::string& path) {
    std::vector<EmbeddedVector> out;
    std::set<std::string> seen;
    jsonl::for_each_object(path, [&](std::size_t line, const jsonl::json& j) {
        EmbeddedVector e;
        e.id = jsonl::get_string(j, "id", path, line);
        const auto& emb = jsonl::field(j, "embedding", path, line);
        if (!emb.is_array()) jsonl::fail(path, line, "field \"embedding\" must be an array");
        for (const auto& v : emb) {
            if (!v.is_number()) jsonl::fail(path, line, "embedding must contain numbers");
            e.embedding.push_back(v.get<double>());
        }
        try {
            validate(e);
        } catch (const validation_error& err) {
            jsonl::fail(path, line, err.what());
        }
        if (!seen.insert(e.id).second) jsonl::fail(path, line, "duplicate id '" + e.id + "'");
        out.push_back(std::move(e));
    });
    return out;
}

inline std::vector<Prediction> load_predictions(const std::string& path) {
    std::vector<Prediction> out;
    jsonl::for_each_object(path, [&](std::size_t line, const jsonl::json& j) {
        Prediction p;
        p.query_id = jsonl::get_string(j, "query_id", path, line);
        p.text = jsonl::get_string(j, "text", path, line);
        out.push_back(std::move(p));
    });
    return out;
}

}  // namespace skr

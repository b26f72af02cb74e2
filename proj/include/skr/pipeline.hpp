// Pipeline orchestration: a declarative run configuration, the stage
// sequence retrieve → draft → score → refine/pairs → dpo-check → eval →
// perturb, and a manifest of input/output hashes so that mock-provider runs
// are reproducible byte for byte.
#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "skr/common.hpp"
#include "skr/core.hpp"
#include "skr/curation.hpp"
#include "skr/eval.hpp"
#include "skr/jsonl.hpp"
#include "skr/objectives.hpp"
#include "skr/prompt.hpp"
#include "skr/provider.hpp"
#include "skr/retrieval.hpp"
#include "skr/supportiveness.hpp"

namespace skr {

inline const std::vector<std::string> kAllStages = {"retrieve", "draft",     "score", "refine",
                                                    "pairs",    "dpo-check", "eval",  "perturb"};

struct RunConfig {
    ProviderConfig provider;
    std::string templates_path;  // empty: built-in defaults
    double delta = 1.0;
    double margin = 1.0;
    std::optional<double> beta;  // required by dpo-check, no silent default
    std::uint64_t seed = 0;
    int k = 5;
    int jobs = 1;
    std::size_t dimension = 0;  // 0: take it from the first chunk embedding
    EncoderMode encoder_mode = EncoderMode::DualEncoder;
    std::string dataset_name = "default";
    std::string perturb_mode = "bad";
    std::string out_dir = "out";
    std::map<std::string, std::string> paths;

    void validate() const {
        provider.validate();
        if (!(delta > 0.0)) throw validation_error("config: delta must be positive");
        if (margin < 0.0) throw validation_error("config: margin must be >= 0");
        if (k < 1) throw validation_error("config: k must be >= 1");
        if (jobs < 1) throw validation_error("config: jobs must be >= 1");
        if (perturb_mode != "bad" && perturb_mode != "random")
            throw validation_error("config: perturb_mode must be 'bad' or 'random'");
    }

    // Every stage derives its randomness from the run seed and its own name.
    std::uint64_t stage_seed(std::string_view stage) const { return seed ^ fnv1a64(stage); }

    std::string artifact_path(const std::string& key) const {
        static const std::map<std::string, std::string> kDefaults = {
            {"retrieval", "retrieval.jsonl"},     {"drafts", "drafts.jsonl"},
            {"scores", "scores.jsonl"},           {"sft", "sft.jsonl"},
            {"stats", "stats.json"},              {"pairs", "pairs.jsonl"},
            {"policy_scores", "policy_scores.jsonl"}, {"ref_scores", "ref_scores.jsonl"},
            {"losses", "losses.jsonl"},           {"predictions", "predictions.jsonl"},
            {"report", "report.json"},            {"perturbed", "perturbed.jsonl"},
            {"manifest", "manifest.json"},
        };
        if (auto it = paths.find(key); it != paths.end()) return it->second;
        auto it = kDefaults.find(key);
        if (it == kDefaults.end()) throw validation_error("config: no path configured for '" + key + "'");
        return (std::filesystem::path(out_dir) / it->second).string();
    }

    std::string input_path(const std::string& key) const {
        if (auto it = paths.find(key); it != paths.end()) return it->second;
        throw validation_error("config: required input path '" + key + "' is not configured");
    }

    TemplateSet templates() const {
        return templates_path.empty() ? TemplateSet::defaults() : TemplateSet::load(templates_path);
    }

    // Hash of the semantic knobs (not file locations), part of the manifest.
    std::string semantic_hash() const {
        std::string canon;
        if (provider.kind == ProviderConfig::Kind::Mock) {
            canon += "provider=mock;seed=" + std::to_string(provider.mock.seed) + ";";
        } else {
            canon += "provider=http;endpoint=" + provider.http.endpoint + ";model=" + provider.http.model + ";";
        }
        canon += "delta=" + format_double(delta) + ";margin=" + format_double(margin) + ";";
        canon += "beta=" + (beta ? format_double(*beta) : std::string("none")) + ";";
        canon += "seed=" + std::to_string(seed) + ";k=" + std::to_string(k) + ";";
        canon += "dimension=" + std::to_string(dimension) + ";";
        canon += std::string("encoder=") + (encoder_mode == EncoderMode::SharedEncoder ? "shared" : "dual") + ";";
        canon += "dataset=" + dataset_name + ";perturb=" + perturb_mode + ";";
        canon += "templates=" + hash_hex(templates().stable_hash());
        return hash_hex(fnv1a64(canon));
    }
};

namespace detail {

inline std::string resolve_relative(const std::filesystem::path& base, const std::string& value) {
    std::filesystem::path p(value);
    if (p.is_absolute()) return p.string();
    return (base / p).lexically_normal().string();
}

inline bool parse_bool_like_kind(const std::string& value, ProviderConfig& provider) {
    if (value == "mock") {
        provider.kind = ProviderConfig::Kind::Mock;
        return true;
    }
    if (value == "http") {
        provider.kind = ProviderConfig::Kind::Http;
        return true;
    }
    return false;
}

}  // namespace detail

// key = value lines, # comments, optional double quotes around values.
// Relative paths resolve against the config file's directory.
inline RunConfig load_run_config(const std::string& config_path) {
    std::ifstream in(config_path);
    if (!in) throw validation_error("cannot open config file '" + config_path + "'");
    const std::filesystem::path base = std::filesystem::path(config_path).parent_path();

    RunConfig config;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string_view sv = trim(line);
        if (sv.empty() || sv.front() == '#') continue;
        const std::size_t eq = sv.find('=');
        if (eq == std::string_view::npos)
            throw validation_error(config_path + ":" + std::to_string(lineno) + ": expected key = value");
        std::string key(trim(sv.substr(0, eq)));
        std::string value(trim(sv.substr(eq + 1)));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
            value = value.substr(1, value.size() - 2);

        try {
            if (key == "provider") {
                if (!detail::parse_bool_like_kind(value, config.provider))
                    throw validation_error("provider must be 'mock' or 'http'");
            } else if (key == "seed") {
                config.seed = std::stoull(value);
                config.provider.mock.seed = config.seed;
            } else if (key == "provider_seed") {
                config.provider.mock.seed = std::stoull(value);
            } else if (key == "endpoint") {
                config.provider.http.endpoint = value;
            } else if (key == "model") {
                config.provider.http.model = value;
            } else if (key == "timeout_s") {
                config.provider.http.timeout_s = std::stod(value);
            } else if (key == "concurrency") {
                config.provider.http.max_concurrency = std::stoi(value);
            } else if (key == "retries") {
                config.provider.http.retries = std::stoi(value);
            } else if (key == "templates") {
                config.templates_path = detail::resolve_relative(base, value);
            } else if (key == "delta") {
                config.delta = std::stod(value);
            } else if (key == "margin") {
                config.margin = std::stod(value);
            } else if (key == "beta") {
                config.beta = std::stod(value);
            } else if (key == "k") {
                config.k = std::stoi(value);
            } else if (key == "jobs") {
                config.jobs = std::stoi(value);
            } else if (key == "dimension") {
                config.dimension = static_cast<std::size_t>(std::stoull(value));
            } else if (key == "encoder_mode") {
                if (value == "dual")
                    config.encoder_mode = EncoderMode::DualEncoder;
                else if (value == "shared")
                    config.encoder_mode = EncoderMode::SharedEncoder;
                else
                    throw validation_error("encoder_mode must be 'dual' or 'shared'");
            } else if (key == "dataset") {
                config.dataset_name = value;
            } else if (key == "perturb_mode") {
                config.perturb_mode = value;
            } else if (key == "out_dir") {
                config.out_dir = detail::resolve_relative(base, value);
            } else if (key.rfind("paths.", 0) == 0) {
                config.paths[key.substr(6)] = detail::resolve_relative(base, value);
            } else {
                throw validation_error("unknown config key '" + key + "'");
            }
        } catch (const std::invalid_argument&) {
            throw validation_error(config_path + ":" + std::to_string(lineno) + ": bad value for '" + key + "'");
        } catch (const std::out_of_range&) {
            throw validation_error(config_path + ":" + std::to_string(lineno) + ": value out of range for '" + key + "'");
        }
    }
    return config;
}

inline std::string hash_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw dependency_error("cannot open '" + path + "' for hashing");
    std::ostringstream buf;
    buf << in.rdbuf();
    return hash_hex(fnv1a64(buf.str()));
}

// Scores every draft sample against its raw retrieval, each rewrite, and the
// "irrelevant" pseudo-rewrite. Output order is fixed (raw, rewrites in draft
// order, pseudo-rewrite) regardless of worker count.
inline std::vector<SupportivenessRecord> score_drafts(Provider& provider, const TemplateSet& templates,
                                                      std::span<const DraftSample> drafts, int jobs = 1) {
    struct Task {
        const DraftSample* sample;
        ScoreContent content;
    };
    std::vector<Task> tasks;
    for (const DraftSample& sample : drafts) {
        RawRetrievalContent raw;
        for (const auto& c : sample.chunks) raw.chunk_texts.push_back(c.text);
        tasks.push_back({&sample, std::move(raw)});
        for (const Rewrite& r : sample.rewrites) tasks.push_back({&sample, RewriteContent{r.source_index, r.text}});
        // The pseudo-rewrite is scored like any other; DPO pair construction
        // treats the irrelevant marker as one more candidate.
        tasks.push_back({&sample, RewriteContent{kIrrelevantSourceIndex, kIrrelevantText}});
    }

    std::vector<SupportivenessRecord> records(tasks.size());
    PpRawCache cache;
    std::atomic<std::size_t> next{0};
    std::optional<std::string> first_error;
    std::mutex error_mutex;
    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= tasks.size()) return;
            try {
                records[i] = score_pair(provider, templates, tasks[i].sample->query, tasks[i].content, &cache);
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = e.what();
                return;
            }
        }
    };
    const int workers = std::clamp(jobs, 1, static_cast<int>(std::max<std::size_t>(tasks.size(), 1)));
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (first_error) throw transport_error(*first_error);
    return records;
}

// Interference protocols over a retrieval file: "bad" reverses the top-30
// window and serves its first k, "random" swaps in k uniform corpus samples
// per query. Returns ready-to-write JSONL.
inline std::string perturb_retrieval(std::span<const RetrievalResult> retrieval,
                                     std::span<const KnowledgeChunk> corpus, const std::string& mode, std::size_t k,
                                     std::uint64_t seed) {
    if (mode != "bad" && mode != "random") throw validation_error("perturb mode must be 'bad' or 'random'");
    std::string lines;
    for (const RetrievalResult& rr : retrieval) {
        std::vector<std::string> ids;
        if (mode == "bad") {
            ids = make_bad_retrieval(rr);
            if (ids.size() > k) ids.resize(k);
        } else {
            ids = make_random_retrieval(corpus, k, seed ^ fnv1a64(rr.query_id));
        }
        lines += "{\"query_id\":" + jsonl::quote(rr.query_id) + ",\"chunk_ids\":[";
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (i) lines += ',';
            lines += jsonl::quote(ids[i]);
        }
        lines += "]}\n";
    }
    return lines;
}

// Sequence log-likelihood files consumed by dpo-check:
// {"index": i, "chosen_loglik": x, "rejected_loglik": y} per line.
struct SequenceLoglik {
    double chosen = 0.0;
    double rejected = 0.0;
};

inline std::vector<SequenceLoglik> load_sequence_logliks(const std::string& path) {
    std::vector<SequenceLoglik> out;
    jsonl::for_each_object(path, [&](std::size_t line, const jsonl::json& j) {
        SequenceLoglik s;
        s.chosen = jsonl::get_double(j, "chosen_loglik", path, line);
        s.rejected = jsonl::get_double(j, "rejected_loglik", path, line);
        if (j.contains("index") && j["index"].is_number_integer() &&
            j["index"].get<std::int64_t>() != static_cast<std::int64_t>(out.size()))
            jsonl::fail(path, line, "index out of order");
        out.push_back(s);
    });
    return out;
}

struct ManifestEntry {
    std::string stage;
    std::map<std::string, std::string> inputs;   // logical name -> content hash
    std::map<std::string, std::string> outputs;  // logical name -> content hash
    std::map<std::string, std::int64_t> counts;
};

class Manifest {
public:
    explicit Manifest(std::string config_hash) : config_hash_(std::move(config_hash)) {}

    void record(ManifestEntry entry) {
        for (auto& existing : entries_) {
            if (existing.stage == entry.stage) {
                existing = std::move(entry);
                return;
            }
        }
        entries_.push_back(std::move(entry));
    }

    // Keeps entries from a previous partial run so stage-at-a-time
    // invocations accumulate one coherent manifest.
    void absorb_existing(const std::string& path) {
        std::ifstream in(path);
        if (!in) return;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(in);
        } catch (const nlohmann::json::parse_error&) {
            return;  // unreadable manifest is rebuilt from scratch
        }
        if (!j.contains("config_hash") || j["config_hash"] != config_hash_) return;
        if (!j.contains("stages") || !j["stages"].is_array()) return;
        for (const auto& s : j["stages"]) {
            ManifestEntry e;
            e.stage = s.value("stage", "");
            if (e.stage.empty()) continue;
            for (const auto& [k, v] : s.value("inputs", nlohmann::json::object()).items())
                e.inputs[k] = v.get<std::string>();
            for (const auto& [k, v] : s.value("outputs", nlohmann::json::object()).items())
                e.outputs[k] = v.get<std::string>();
            for (const auto& [k, v] : s.value("counts", nlohmann::json::object()).items())
                e.counts[k] = v.get<std::int64_t>();
            entries_.push_back(std::move(e));
        }
    }

    nlohmann::json to_json() const {
        // Entries are kept in canonical stage order regardless of how the
        // stages were invoked.
        std::vector<const ManifestEntry*> ordered;
        for (const std::string& stage : kAllStages) {
            for (const auto& e : entries_) {
                if (e.stage == stage) ordered.push_back(&e);
            }
        }
        for (const auto& e : entries_) {
            bool known = false;
            for (const std::string& stage : kAllStages) known = known || e.stage == stage;
            if (!known) ordered.push_back(&e);
        }
        nlohmann::json j;
        j["config_hash"] = config_hash_;
        j["stages"] = nlohmann::json::array();
        for (const ManifestEntry* e : ordered) {
            nlohmann::json s;
            s["stage"] = e->stage;
            s["inputs"] = nlohmann::json::object();
            for (const auto& [k, v] : e->inputs) s["inputs"][k] = v;
            s["outputs"] = nlohmann::json::object();
            for (const auto& [k, v] : e->outputs) s["outputs"][k] = v;
            s["counts"] = nlohmann::json::object();
            for (const auto& [k, v] : e->counts) s["counts"][k] = v;
            j["stages"].push_back(std::move(s));
        }
        return j;
    }

    void write(const std::string& path) const { jsonl::write_file(path, to_json().dump(2) + "\n"); }

    const std::vector<ManifestEntry>& entries() const { return entries_; }

private:
    std::string config_hash_;
    std::vector<ManifestEntry> entries_;
};

class Pipeline {
public:
    explicit Pipeline(RunConfig config) : config_(std::move(config)), manifest_(config_.semantic_hash()) {
        config_.validate();
    }

    const RunConfig& config() const { return config_; }
    const Manifest& manifest() const { return manifest_; }

    // Runs the given stages in order and writes the manifest.
    void run(std::span<const std::string> stages, std::ostream& log = std::cerr) {
        std::filesystem::create_directories(config_.out_dir);
        manifest_.absorb_existing(config_.artifact_path("manifest"));
        for (const std::string& stage : stages) {
            log << "[skrforge] stage " << stage << "\n";
            try {
                dispatch(stage);
            } catch (const validation_error& e) {
                throw validation_error("stage '" + stage + "': " + e.what());
            } catch (const transport_error& e) {
                throw transport_error("stage '" + stage + "': " + e.what());
            } catch (const dependency_error& e) {
                throw dependency_error("stage '" + stage + "': " + e.what());
            }
        }
        manifest_.write(config_.artifact_path("manifest"));
    }

    void run_all(std::ostream& log = std::cerr) { run(kAllStages, log); }

private:
    void dispatch(const std::string& stage) {
        if (stage == "retrieve")
            stage_retrieve();
        else if (stage == "draft")
            stage_draft();
        else if (stage == "score")
            stage_score();
        else if (stage == "refine")
            stage_refine();
        else if (stage == "pairs")
            stage_pairs();
        else if (stage == "dpo-check")
            stage_dpo_check();
        else if (stage == "eval")
            stage_eval();
        else if (stage == "perturb")
            stage_perturb();
        else
            throw validation_error("unknown stage '" + stage + "'");
    }

    std::string require_file(const std::string& logical, const std::string& path) {
        if (!std::filesystem::exists(path))
            throw dependency_error("missing dependency artifact '" + logical + "' at '" + path + "'");
        return path;
    }

    std::string input_file(const std::string& logical) { return require_file(logical, config_.input_path(logical)); }
    std::string upstream_file(const std::string& logical) {
        return require_file(logical, config_.artifact_path(logical));
    }

    static void ensure_parent_dir(const std::string& path) {
        const auto parent = std::filesystem::path(path).parent_path();
        if (!parent.empty()) std::filesystem::create_directories(parent);
    }

    std::unique_ptr<Provider> stage_provider(std::optional<std::uint64_t> seed_override = {}) const {
        ProviderConfig pc = config_.provider;
        if (seed_override && pc.kind == ProviderConfig::Kind::Mock) pc.mock.seed = *seed_override;
        return make_provider(pc);
    }

    void record(ManifestEntry entry) { manifest_.record(std::move(entry)); }

    // --- stages ---

    void stage_retrieve() {
        ManifestEntry entry;
        entry.stage = "retrieve";
        const std::string chunks_path = input_file("chunks");
        const std::string embeds_path = input_file("query_embeddings");
        entry.inputs["chunks"] = hash_file(chunks_path);
        entry.inputs["query_embeddings"] = hash_file(embeds_path);

        const auto chunks = load_chunks(chunks_path);
        const auto query_vecs = load_embeddings(embeds_path);
        std::size_t dim = config_.dimension;
        if (dim == 0) {
            for (const auto& c : chunks) {
                if (c.embedding) {
                    dim = c.embedding->size();
                    break;
                }
            }
        }
        if (dim == 0) throw validation_error("no embedding dimension available");
        const EmbeddingIndex index = EmbeddingIndex::build(chunks, dim, config_.encoder_mode);

        // Keep at least the bad-retrieval window so perturbation stays
        // possible downstream.
        const std::size_t k_retrieve = std::max<std::size_t>(static_cast<std::size_t>(config_.k), kBadRetrievalWindow);
        std::vector<RetrievalResult> results;
        results.reserve(query_vecs.size());
        for (const auto& qv : query_vecs) results.push_back(index.top_k(qv.id, qv.embedding, k_retrieve));

        const std::string out_path = config_.artifact_path("retrieval");
        ensure_parent_dir(out_path);
        emit_dataset(results, out_path);
        entry.outputs["retrieval"] = hash_file(out_path);
        entry.counts["results"] = static_cast<std::int64_t>(results.size());
        record(std::move(entry));
    }

    void stage_draft() {
        ManifestEntry entry;
        entry.stage = "draft";
        const std::string queries_path = input_file("queries");
        const std::string chunks_path = input_file("chunks");
        const std::string rewrites_path = input_file("rewrites");
        const std::string retrieval_path = upstream_file("retrieval");
        entry.inputs["queries"] = hash_file(queries_path);
        entry.inputs["chunks"] = hash_file(chunks_path);
        entry.inputs["rewrites"] = hash_file(rewrites_path);
        entry.inputs["retrieval"] = hash_file(retrieval_path);

        const auto queries = load_queries(queries_path);
        const auto chunks = load_chunks(chunks_path);
        const auto retrieval = load_retrieval(retrieval_path);
        const auto rewrites = load_rewrites(rewrites_path);
        const auto drafts = assemble_drafts(queries, chunks, retrieval, rewrites, config_.stage_seed("draft"));

        const std::string out_path = config_.artifact_path("drafts");
        ensure_parent_dir(out_path);
        emit_dataset(drafts, out_path);
        entry.outputs["drafts"] = hash_file(out_path);
        entry.counts["drafts"] = static_cast<std::int64_t>(drafts.size());
        record(std::move(entry));
    }

    void stage_score() {
        ManifestEntry entry;
        entry.stage = "score";
        const std::string drafts_path = upstream_file("drafts");
        entry.inputs["drafts"] = hash_file(drafts_path);
        if (!config_.templates_path.empty()) entry.inputs["templates"] = hash_file(config_.templates_path);

        const auto drafts = load_drafts(drafts_path);
        const TemplateSet templates = config_.templates();
        auto provider = stage_provider();
        const auto records = score_drafts(*provider, templates, drafts, config_.jobs);

        const std::string out_path = config_.artifact_path("scores");
        ensure_parent_dir(out_path);
        emit_dataset(records, out_path);
        entry.outputs["scores"] = hash_file(out_path);
        entry.counts["records"] = static_cast<std::int64_t>(records.size());
        record(std::move(entry));
    }

    void stage_refine() {
        ManifestEntry entry;
        entry.stage = "refine";
        const std::string drafts_path = upstream_file("drafts");
        const std::string scores_path = upstream_file("scores");
        entry.inputs["drafts"] = hash_file(drafts_path);
        entry.inputs["scores"] = hash_file(scores_path);

        const auto drafts = load_drafts(drafts_path);
        const auto scores = group_scores(load_scores(scores_path));
        const RefineCorpusResult result = refine_corpus(drafts, scores, config_.delta);

        const std::string sft_path = config_.artifact_path("sft");
        const std::string stats_path = config_.artifact_path("stats");
        ensure_parent_dir(sft_path);
        ensure_parent_dir(stats_path);
        emit_dataset(result.examples, sft_path);
        jsonl::write_file(stats_path, result.stats.to_json().dump(2) + "\n");

        entry.outputs["sft"] = hash_file(sft_path);
        entry.outputs["stats"] = hash_file(stats_path);
        entry.counts["sft_examples"] = static_cast<std::int64_t>(result.examples.size());
        entry.counts["irrelevant_samples"] = static_cast<std::int64_t>(result.stats.irrelevant_samples);
        entry.counts["failed_rewrites"] = static_cast<std::int64_t>(result.stats.failed_rewrites);
        record(std::move(entry));
    }

    void stage_pairs() {
        ManifestEntry entry;
        entry.stage = "pairs";
        const std::string drafts_path = upstream_file("drafts");
        const std::string scores_path = upstream_file("scores");
        entry.inputs["drafts"] = hash_file(drafts_path);
        entry.inputs["scores"] = hash_file(scores_path);

        const auto drafts = load_drafts(drafts_path);
        const auto scores = group_scores(load_scores(scores_path));
        const auto pairs = build_pairs_corpus(drafts, scores, config_.margin);

        const std::string out_path = config_.artifact_path("pairs");
        ensure_parent_dir(out_path);
        emit_dataset(pairs, out_path);
        entry.outputs["pairs"] = hash_file(out_path);
        entry.counts["pairs"] = static_cast<std::int64_t>(pairs.size());
        record(std::move(entry));
    }

    void stage_dpo_check() {
        if (!config_.beta) throw validation_error("dpo-check requires beta to be set");
        ManifestEntry entry;
        entry.stage = "dpo-check";
        const std::string pairs_path = upstream_file("pairs");
        entry.inputs["pairs"] = hash_file(pairs_path);

        const auto pairs = load_pairs(pairs_path);
        auto policy = stage_provider(config_.stage_seed("dpo-policy"));
        auto reference = stage_provider(config_.stage_seed("dpo-ref"));

        const auto sequence_loglik = [](Provider& p, const std::string& prompt, const std::string& target) {
            const TargetLogprobs lp = p.score_continuation(prompt, target);
            double sum = 0.0;
            for (double v : lp.logprobs) sum += v;
            return sum;
        };

        std::string policy_lines, ref_lines, loss_lines;
        double loss_sum = 0.0;
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            const PreferencePair& pair = pairs[i];
            DpoInputs in;
            in.policy_chosen = sequence_loglik(*policy, pair.input, pair.chosen);
            in.policy_rejected = sequence_loglik(*policy, pair.input, pair.rejected);
            in.ref_chosen = sequence_loglik(*reference, pair.input, pair.chosen);
            in.ref_rejected = sequence_loglik(*reference, pair.input, pair.rejected);
            in.beta = *config_.beta;
            const DpoResult r = dpo_loss(in);
            loss_sum += r.loss;

            policy_lines += "{\"index\":" + std::to_string(i) + ",\"chosen_loglik\":" + format_double(in.policy_chosen) +
                            ",\"rejected_loglik\":" + format_double(in.policy_rejected) + "}\n";
            ref_lines += "{\"index\":" + std::to_string(i) + ",\"chosen_loglik\":" + format_double(in.ref_chosen) +
                         ",\"rejected_loglik\":" + format_double(in.ref_rejected) + "}\n";
            loss_lines += "{\"index\":" + std::to_string(i) + ",\"margin\":" + format_double(r.margin) +
                          ",\"loss\":" + format_double(r.loss) + "}\n";
        }

        const std::string policy_path = config_.artifact_path("policy_scores");
        const std::string ref_path = config_.artifact_path("ref_scores");
        const std::string losses_path = config_.artifact_path("losses");
        for (const auto& p : {policy_path, ref_path, losses_path}) ensure_parent_dir(p);
        jsonl::write_file(policy_path, policy_lines);
        jsonl::write_file(ref_path, ref_lines);
        jsonl::write_file(losses_path, loss_lines);

        if (!pairs.empty())
            std::cerr << "[skrforge] dpo-check mean loss " << format_double(loss_sum / static_cast<double>(pairs.size()))
                      << " over " << pairs.size() << " pairs\n";

        entry.outputs["policy_scores"] = hash_file(policy_path);
        entry.outputs["ref_scores"] = hash_file(ref_path);
        entry.outputs["losses"] = hash_file(losses_path);
        entry.counts["pairs"] = static_cast<std::int64_t>(pairs.size());
        record(std::move(entry));
    }

    void stage_eval() {
        ManifestEntry entry;
        entry.stage = "eval";
        const std::string drafts_path = upstream_file("drafts");
        const std::string scores_path = upstream_file("scores");
        entry.inputs["drafts"] = hash_file(drafts_path);
        entry.inputs["scores"] = hash_file(scores_path);
        if (!config_.templates_path.empty()) entry.inputs["templates"] = hash_file(config_.templates_path);

        const auto drafts = load_drafts(drafts_path);
        const auto scores = group_scores(load_scores(scores_path));
        const TemplateSet templates = config_.templates();
        const RefineCorpusResult refined = refine_corpus(drafts, scores, config_.delta);

        auto provider = stage_provider();
        const std::uint64_t eval_seed = config_.stage_seed("eval");
        if (auto* mock = dynamic_cast<MockProvider*>(provider.get())) {
            // Offline answer key: most queries answer with their first gold
            // target, the rest answer "unknown", chosen by a stable hash.
            std::vector<GenerationRule> rules;
            for (const DraftSample& s : drafts) {
                const std::uint64_t h =
                    fnv1a64("em-designate\x1f" + s.query.id + "\x1f" + std::to_string(eval_seed));
                rules.push_back({s.query.text, s.query.targets.front(), (h & 3) != 0});
            }
            mock->set_answer_key(std::move(rules));
        }

        std::vector<Prediction> predictions;
        std::vector<Query> queries;
        std::vector<std::size_t> input_tokens, output_tokens;
        std::size_t irrelevant_served = 0;
        for (std::size_t i = 0; i < drafts.size(); ++i) {
            const DraftSample& sample = drafts[i];
            const std::string served = served_rewrite(sample, refined.outcomes[i], scores);
            if (served == kIrrelevantText) ++irrelevant_served;

            std::string knowledge_text;
            for (std::size_t c = 0; c < sample.chunks.size(); ++c) {
                if (c) knowledge_text += '\n';
                knowledge_text += sample.chunks[c].text;
            }
            input_tokens.push_back(whitespace_token_count(knowledge_text));
            output_tokens.push_back(whitespace_token_count(served));

            const std::string prompt =
                served == kIrrelevantText
                    ? render_no_retrieval(templates.without_knowledge, sample.query)
                    : render_with_retrieval(templates.with_knowledge, sample.query, std::vector<std::string>{served});
            predictions.push_back({sample.query.id, provider->generate(prompt)});
            queries.push_back(sample.query);
        }

        EvalReport report;
        report.per_dataset[config_.dataset_name] = compute_em(predictions, queries);
        report.compression = compression_rate(input_tokens, output_tokens);
        report.irr_rate = static_cast<double>(irrelevant_served) / static_cast<double>(drafts.size());
        report.tokenizer = "whitespace";

        const std::string predictions_path = config_.artifact_path("predictions");
        const std::string report_path = config_.artifact_path("report");
        ensure_parent_dir(predictions_path);
        ensure_parent_dir(report_path);
        emit_dataset(predictions, predictions_path);
        jsonl::write_file(report_path, report.to_json().dump(2) + "\n");

        entry.outputs["predictions"] = hash_file(predictions_path);
        entry.outputs["report"] = hash_file(report_path);
        entry.counts["predictions"] = static_cast<std::int64_t>(predictions.size());
        record(std::move(entry));
    }

    void stage_perturb() {
        ManifestEntry entry;
        entry.stage = "perturb";
        const std::string retrieval_path = upstream_file("retrieval");
        const std::string chunks_path = input_file("chunks");
        entry.inputs["retrieval"] = hash_file(retrieval_path);
        entry.inputs["chunks"] = hash_file(chunks_path);

        const auto retrieval = load_retrieval(retrieval_path);
        const auto chunks = load_chunks(chunks_path);
        const std::string lines = perturb_retrieval(retrieval, chunks, config_.perturb_mode,
                                                    static_cast<std::size_t>(config_.k), config_.stage_seed("perturb"));

        const std::string out_path = config_.artifact_path("perturbed");
        ensure_parent_dir(out_path);
        jsonl::write_file(out_path, lines);
        entry.outputs["perturbed"] = hash_file(out_path);
        entry.counts["results"] = static_cast<std::int64_t>(retrieval.size());
        record(std::move(entry));
    }

    // The rewrite the (simulated) rewriter serves: "irrelevant" for samples
    // refined away, otherwise the highest-scoring surviving rewrite.
    static std::string served_rewrite(const DraftSample& sample, const RefinementOutcome& outcome,
                                      const ScoreMap& scores) {
        if (outcome.sample_label == SampleLabel::Irrelevant) return kIrrelevantText;
        const SampleScoreSet& set = detail_scores(scores, sample.query.id);
        const Rewrite* best = nullptr;
        double best_ss = 0.0;
        bool best_successful = false;
        for (std::size_t i = 0; i < sample.rewrites.size(); ++i) {
            const Rewrite& r = sample.rewrites[i];
            auto it = set.by_source_index.find(r.source_index);
            if (it == set.by_source_index.end())
                throw validation_error("missing score for query '" + sample.query.id + "', source " +
                                       std::to_string(r.source_index));
            const bool successful =
                i < outcome.per_rewrite.size() && outcome.per_rewrite[i] == RewriteLabel::Successful;
            const bool improves = best == nullptr || (successful && !best_successful) ||
                                  (successful == best_successful && it->second > best_ss);
            if (improves) {
                best = &r;
                best_ss = it->second;
                best_successful = successful;
            }
        }
        return best->text;
    }

    static const SampleScoreSet& detail_scores(const ScoreMap& scores, const std::string& query_id) {
        auto it = scores.find(query_id);
        if (it == scores.end()) throw validation_error("missing scores for query '" + query_id + "'");
        return it->second;
    }

    RunConfig config_;
    Manifest manifest_;
};

}  // namespace skr

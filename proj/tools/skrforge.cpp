// skrforge: command-line entry point for the supportiveness data pipeline.
// Single-stage subcommands are thin wrappers over the library; `run` drives
// the full staged pipeline with a manifest.
#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "skr/pipeline.hpp"

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitTransport = 3;
constexpr int kExitDependency = 4;

struct CommonOpts {
    std::string config_path;
    skr::RunConfig config;

    void load() {
        if (!config_path.empty()) config = skr::load_run_config(config_path);
    }
};

struct ProviderOpts {
    std::string kind;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string endpoint;
    std::string model;
    int concurrency = 0;
    int retries = -1;
    double timeout_s = 0.0;

    void apply(skr::ProviderConfig& pc) const {
        if (kind == "mock") pc.kind = skr::ProviderConfig::Kind::Mock;
        if (kind == "http") pc.kind = skr::ProviderConfig::Kind::Http;
        if (seed_set) pc.mock.seed = seed;
        if (!endpoint.empty()) pc.http.endpoint = endpoint;
        if (!model.empty()) pc.http.model = model;
        if (concurrency > 0) pc.http.max_concurrency = concurrency;
        if (retries >= 0) pc.http.retries = retries;
        if (timeout_s > 0.0) pc.http.timeout_s = timeout_s;
    }

    void attach(CLI::App* cmd) {
        cmd->add_option("--provider", kind, "Feedback provider: mock or http")
            ->check(CLI::IsMember({"mock", "http"}));
        cmd->add_option("--seed", seed, "Mock provider seed")->each([this](const std::string&) { seed_set = true; });
        cmd->add_option("--endpoint", endpoint, "HTTP provider base URL");
        cmd->add_option("--model", model, "Model name sent to the HTTP provider");
        cmd->add_option("--concurrency", concurrency, "Max concurrent provider requests");
        cmd->add_option("--retries", retries, "HTTP retry count");
        cmd->add_option("--timeout", timeout_s, "HTTP timeout in seconds");
    }
};

int run_retrieve(const std::string& index_path, const std::string& queries_path, int k, const std::string& out_path,
                 std::size_t dimension, const std::string& encoder_mode) {
    const auto chunks = skr::load_chunks(index_path);
    const auto query_vecs = skr::load_embeddings(queries_path);
    std::size_t dim = dimension;
    if (dim == 0) {
        for (const auto& c : chunks) {
            if (c.embedding) {
                dim = c.embedding->size();
                break;
            }
        }
    }
    if (dim == 0) throw skr::validation_error("no embedding dimension available; pass --dimension");
    const auto mode = encoder_mode == "shared" ? skr::EncoderMode::SharedEncoder : skr::EncoderMode::DualEncoder;
    const skr::EmbeddingIndex index = skr::EmbeddingIndex::build(chunks, dim, mode);

    std::vector<skr::RetrievalResult> results;
    results.reserve(query_vecs.size());
    for (const auto& qv : query_vecs) results.push_back(index.top_k(qv.id, qv.embedding, static_cast<std::size_t>(k)));
    skr::emit_dataset(results, out_path);
    std::cerr << "retrieved top-" << k << " for " << results.size() << " queries -> " << out_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"supportiveness-based knowledge rewriting data pipeline"};
    app.require_subcommand(1);

    // --- retrieve ---
    auto* retrieve = app.add_subcommand("retrieve", "Exact top-k dense retrieval over a chunk file");
    std::string r_index, r_queries, r_out = "retrieval.jsonl", r_encoder = "dual";
    int r_k = 5;
    std::size_t r_dim = 0;
    retrieve->add_option("--index", r_index, "Chunk JSONL with embeddings")->required();
    retrieve->add_option("--queries", r_queries, "Embedded queries JSONL ({id, embedding})")->required();
    retrieve->add_option("--k", r_k, "Results per query")->check(CLI::PositiveNumber);
    retrieve->add_option("--out", r_out, "Output retrieval JSONL");
    retrieve->add_option("--dimension", r_dim, "Embedding dimension (default: from first chunk)");
    retrieve->add_option("--encoder-mode", r_encoder, "dual or shared")->check(CLI::IsMember({"dual", "shared"}));

    // --- draft ---
    auto* draft = app.add_subcommand("draft", "Assemble draft samples with the retrieval-depth mix");
    std::string d_queries, d_chunks, d_retrieval, d_rewrites, d_out = "drafts.jsonl";
    std::uint64_t d_seed = 0;
    draft->add_option("--queries", d_queries, "Query JSONL")->required();
    draft->add_option("--chunks", d_chunks, "Chunk JSONL")->required();
    draft->add_option("--retrieval", d_retrieval, "Retrieval results JSONL")->required();
    draft->add_option("--rewrites", d_rewrites, "Rewrite JSONL (5 per query expected)")->required();
    draft->add_option("--seed", d_seed, "Depth-mix shuffle seed");
    draft->add_option("--out", d_out, "Output drafts JSONL");

    // --- score ---
    auto* score = app.add_subcommand("score", "Supportiveness scores for drafts (raw, rewrites, pseudo-rewrite)");
    CommonOpts score_common;
    ProviderOpts score_provider;
    std::string s_drafts, s_templates, s_out = "scores.jsonl";
    int s_jobs = 1;
    score->add_option("--config", score_common.config_path, "Run config file");
    score->add_option("--drafts", s_drafts, "Drafts JSONL (from the draft stage)");
    score->add_option("--templates", s_templates, "Template JSON file");
    score->add_option("--out", s_out, "Output scores JSONL");
    score->add_option("--jobs", s_jobs, "Worker threads");
    score_provider.attach(score);

    // --- refine ---
    auto* refine = app.add_subcommand("refine", "Supportiveness-based refinement into SFT data");
    std::string f_drafts, f_scores, f_out = "sft.jsonl", f_stats = "stats.json";
    double f_delta = 1.0;
    refine->add_option("--drafts", f_drafts, "Drafts JSONL")->required();
    refine->add_option("--scores", f_scores, "Scores JSONL")->required();
    refine->add_option("--delta", f_delta, "Failed-rewrite threshold");
    refine->add_option("--out-sft", f_out, "Output SFT JSONL");
    refine->add_option("--stats", f_stats, "Output stats JSON");

    // --- pairs ---
    auto* pairs = app.add_subcommand("pairs", "DPO preference pairs from scored drafts");
    std::string p_drafts, p_scores, p_out = "pairs.jsonl";
    double p_margin = 1.0;
    pairs->add_option("--drafts", p_drafts, "Drafts JSONL")->required();
    pairs->add_option("--scores", p_scores, "Scores JSONL")->required();
    pairs->add_option("--margin", p_margin, "Supportiveness gap threshold");
    pairs->add_option("--out", p_out, "Output pairs JSONL");

    // --- dpo-check ---
    auto* dpo = app.add_subcommand("dpo-check", "Reference DPO losses for a pair file");
    std::string o_pairs, o_policy, o_ref, o_out = "losses.jsonl";
    double o_beta = 0.0;
    dpo->add_option("--pairs", o_pairs, "Pairs JSONL")->required();
    dpo->add_option("--policy-scores", o_policy, "Policy sequence log-likelihoods JSONL")->required();
    dpo->add_option("--ref-scores", o_ref, "Reference sequence log-likelihoods JSONL")->required();
    dpo->add_option("--beta", o_beta, "DPO beta (required, no default)")->required();
    dpo->add_option("--out", o_out, "Output losses JSONL");

    // --- eval ---
    auto* eval = app.add_subcommand("eval", "Exact-match report for a prediction file");
    std::string e_predictions, e_queries, e_rewrites, e_dataset = "default", e_out = "report.json";
    eval->add_option("--predictions", e_predictions, "Predictions JSONL")->required();
    eval->add_option("--queries", e_queries, "Query JSONL with gold targets")->required();
    eval->add_option("--rewrites", e_rewrites, "Optional rewrites JSONL for the irrelevant rate");
    eval->add_option("--dataset", e_dataset, "Dataset label in the report");
    eval->add_option("--out", e_out, "Output report JSON");

    // --- perturb ---
    auto* perturb = app.add_subcommand("perturb", "Bad/random retrieval interference");
    std::string t_mode, t_retrieval, t_corpus, t_out = "perturbed.jsonl";
    int t_k = 5;
    std::uint64_t t_seed = 0;
    perturb->add_option("--mode", t_mode, "bad or random")->required()->check(CLI::IsMember({"bad", "random"}));
    perturb->add_option("--retrieval", t_retrieval, "Retrieval results JSONL")->required();
    perturb->add_option("--corpus", t_corpus, "Chunk JSONL (sampled by random mode)")->required();
    perturb->add_option("--k", t_k, "Chunks served per query")->check(CLI::PositiveNumber);
    perturb->add_option("--seed", t_seed, "Sampling seed");
    perturb->add_option("--out", t_out, "Output JSONL");

    // --- run ---
    auto* run = app.add_subcommand("run", "Run pipeline stages from a config file");
    CommonOpts run_common;
    ProviderOpts run_provider;
    std::vector<std::string> run_stages;
    std::string run_out_dir;
    double run_delta = 0.0, run_margin = -1.0, run_beta = 0.0;
    int run_jobs = 0, run_k = 0;
    run->add_option("--config", run_common.config_path, "Run config file")->required();
    run->add_option("--stages", run_stages, "Stage subset, in order")->delimiter(',');
    run->add_option("--out-dir", run_out_dir, "Artifact directory (overrides config)");
    run->add_option("--delta", run_delta, "Override delta");
    run->add_option("--margin", run_margin, "Override margin");
    run->add_option("--beta", run_beta, "Override beta");
    run->add_option("--jobs", run_jobs, "Override jobs");
    run->add_option("--k", run_k, "Override retrieval depth k");
    run_provider.attach(run);

    try {
        app.parse(argc, argv);

        if (retrieve->parsed()) return run_retrieve(r_index, r_queries, r_k, r_out, r_dim, r_encoder);

        if (draft->parsed()) {
            const auto queries = skr::load_queries(d_queries);
            const auto chunks = skr::load_chunks(d_chunks);
            const auto retrieval = skr::load_retrieval(d_retrieval);
            const auto rewrites = skr::load_rewrites(d_rewrites);
            const auto drafts = skr::assemble_drafts(queries, chunks, retrieval, rewrites, d_seed);
            skr::emit_dataset(drafts, d_out);
            std::cerr << "assembled " << drafts.size() << " drafts -> " << d_out << "\n";
            return 0;
        }

        if (score->parsed()) {
            score_common.load();
            skr::RunConfig& cfg = score_common.config;
            score_provider.apply(cfg.provider);
            if (!s_templates.empty()) cfg.templates_path = s_templates;
            if (s_jobs > 1) cfg.jobs = s_jobs;
            const std::string drafts_path = !s_drafts.empty() ? s_drafts : cfg.artifact_path("drafts");
            const auto drafts = skr::load_drafts(drafts_path);
            auto provider = skr::make_provider(cfg.provider);
            const auto records = skr::score_drafts(*provider, cfg.templates(), drafts, cfg.jobs);
            skr::emit_dataset(records, s_out);
            std::cerr << "scored " << records.size() << " (query, content) pairs -> " << s_out << "\n";
            return 0;
        }

        if (refine->parsed()) {
            const auto drafts = skr::load_drafts(f_drafts);
            const auto scores = skr::group_scores(skr::load_scores(f_scores));
            const auto result = skr::refine_corpus(drafts, scores, f_delta);
            skr::emit_dataset(result.examples, f_out);
            skr::jsonl::write_file(f_stats, result.stats.to_json().dump(2) + "\n");
            std::cerr << "refined " << drafts.size() << " samples: " << result.stats.irrelevant_samples
                      << " irrelevant, " << result.stats.failed_rewrites << " failed rewrites, "
                      << result.examples.size() << " sft examples -> " << f_out << "\n";
            return 0;
        }

        if (pairs->parsed()) {
            const auto drafts = skr::load_drafts(p_drafts);
            const auto scores = skr::group_scores(skr::load_scores(p_scores));
            const auto built = skr::build_pairs_corpus(drafts, scores, p_margin);
            skr::emit_dataset(built, p_out);
            std::cerr << "built " << built.size() << " preference pairs -> " << p_out << "\n";
            return 0;
        }

        if (dpo->parsed()) {
            const auto pair_data = skr::load_pairs(o_pairs);
            const auto policy = skr::load_sequence_logliks(o_policy);
            const auto reference = skr::load_sequence_logliks(o_ref);
            if (policy.size() != pair_data.size() || reference.size() != pair_data.size())
                throw skr::validation_error("score files must align with the pair file (" +
                                            std::to_string(pair_data.size()) + " pairs)");
            std::string lines;
            double loss_sum = 0.0;
            for (std::size_t i = 0; i < pair_data.size(); ++i) {
                skr::DpoInputs in{policy[i].chosen, policy[i].rejected, reference[i].chosen, reference[i].rejected,
                                  o_beta};
                const auto r = skr::dpo_loss(in);
                loss_sum += r.loss;
                lines += "{\"index\":" + std::to_string(i) + ",\"margin\":" + skr::format_double(r.margin) +
                         ",\"loss\":" + skr::format_double(r.loss) + "}\n";
            }
            skr::jsonl::write_file(o_out, lines);
            if (!pair_data.empty())
                std::cout << "mean dpo loss " << skr::format_double(loss_sum / static_cast<double>(pair_data.size()))
                          << " over " << pair_data.size() << " pairs (beta " << o_beta << ")\n";
            return 0;
        }

        if (eval->parsed()) {
            const auto predictions = skr::load_predictions(e_predictions);
            const auto queries = skr::load_queries(e_queries);
            skr::EvalReport report;
            report.per_dataset[e_dataset] = skr::compute_em(predictions, queries);
            if (!e_rewrites.empty()) {
                const auto rewrites = skr::load_rewrites(e_rewrites);
                report.irr_rate = skr::irrelevant_rate(rewrites);
            }
            skr::jsonl::write_file(e_out, report.to_json().dump(2) + "\n");
            std::cout << "em " << skr::format_double(report.per_dataset[e_dataset].em) << " over "
                      << report.per_dataset[e_dataset].n << " queries -> " << e_out << "\n";
            return 0;
        }

        if (perturb->parsed()) {
            const auto retrieval = skr::load_retrieval(t_retrieval);
            const auto corpus = skr::load_chunks(t_corpus);
            skr::jsonl::write_file(
                t_out, skr::perturb_retrieval(retrieval, corpus, t_mode, static_cast<std::size_t>(t_k), t_seed));
            std::cerr << "perturbed " << retrieval.size() << " results (" << t_mode << ") -> " << t_out << "\n";
            return 0;
        }

        if (run->parsed()) {
            run_common.load();
            skr::RunConfig& cfg = run_common.config;
            run_provider.apply(cfg.provider);
            if (!run_out_dir.empty()) cfg.out_dir = run_out_dir;
            if (run_delta > 0.0) cfg.delta = run_delta;
            if (run_margin >= 0.0) cfg.margin = run_margin;
            if (run_beta > 0.0) cfg.beta = run_beta;
            if (run_jobs > 0) cfg.jobs = run_jobs;
            if (run_k > 0) cfg.k = run_k;
            skr::Pipeline pipeline(cfg);
            if (run_stages.empty()) {
                pipeline.run_all();
            } else {
                pipeline.run(run_stages);
            }
            return 0;
        }
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const skr::validation_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const skr::dependency_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitDependency;
    } catch (const skr::transport_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitTransport;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

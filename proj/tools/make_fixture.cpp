// Generates the bundled mock fixture: 50 synthetic queries with gold
// answers, a 200-chunk corpus with 16-dim embeddings arranged so each
// query's two supporting chunks rank on top, five draft rewrites per query,
// templates, and a run config. Fully deterministic per seed.
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "skr/common.hpp"
#include "skr/core.hpp"
#include "skr/jsonl.hpp"
#include "skr/prompt.hpp"

namespace {

using skr::DetRng;

constexpr std::size_t kQueries = 50;
constexpr std::size_t kFillerChunks = 100;
constexpr std::size_t kDim = 16;

const std::vector<std::string> kAdjectives = {"Crimson", "Silver", "Hollow", "Northern", "Amber",
                                              "Quiet",   "Stone",  "Green",  "Iron",     "Misty"};
const std::vector<std::string> kNouns = {"Harbor", "Ridge", "Valley", "Falls",  "Moor",
                                         "Basin",  "Grove", "Summit", "Strand", "Point"};

struct AttributeKind {
    std::string question;   // {e} = entity
    std::string statement;  // {e}, {a}
    std::vector<std::string> answers;
};

const std::vector<AttributeKind> kAttributes = {
    {"What is the primary mineral of {e}?",
     "The primary mineral of {e} is {a}, worked in the open pits east of town.",
     {"galena", "bauxite", "gypsum", "feldspar", "quartzite", "slate"}},
    {"Which river flows past {e}?",
     "The river {a} flows past {e} before reaching the lowland marshes.",
     {"Maren", "Osler", "Kirvan", "Dunlee", "Sorrel", "Tavish"}},
    {"In which month is the lantern festival of {e} held?",
     "{e} holds its lantern festival in {a}, when the harbor lights are relit.",
     {"March", "June", "September", "November", "April", "August"}},
    {"In what year was the old mill of {e} built?",
     "The old mill of {e} was built in {a} and still grinds barley today.",
     {"1742", "1803", "1851", "1777", "1820", "1866"}},
};

std::string fill(std::string text, const std::string& entity, const std::string& answer) {
    auto replace_all = [](std::string s, const std::string& from, const std::string& to) {
        std::size_t pos = 0;
        while ((pos = s.find(from, pos)) != std::string::npos) {
            s.replace(pos, from.size(), to);
            pos += to.size();
        }
        return s;
    };
    text = replace_all(text, "{e}", entity);
    text = replace_all(text, "{a}", answer);
    return text;
}

std::vector<double> random_vector(DetRng& rng) {
    std::vector<double> v(kDim);
    for (std::size_t j = 0; j < kDim; ++j)
        v[j] = (static_cast<double>(rng.below(2001)) - 1000.0) / 1000.0;  // grid keeps serialization short
    return v;
}

std::vector<double> perturbed(const std::vector<double>& base, DetRng& rng) {
    std::vector<double> v = base;
    for (std::size_t j = 0; j < kDim; ++j) {
        v[j] += (static_cast<double>(rng.below(101)) - 50.0) / 1000.0;
        v[j] = static_cast<double>(static_cast<long long>(v[j] * 1000.0)) / 1000.0;
    }
    return v;
}

std::string pad3(std::size_t n) {
    std::string s = std::to_string(n);
    while (s.size() < 3) s.insert(s.begin(), '0');
    return s;
}

}  // namespace

int main(int argc, char** argv) {
    const std::string out_dir = argc > 1 ? argv[1] : "data/fixture";
    const std::uint64_t seed = argc > 2 ? std::stoull(argv[2]) : 7;
    std::filesystem::create_directories(out_dir);

    DetRng rng(seed);

    std::vector<skr::Query> queries;
    std::vector<skr::KnowledgeChunk> chunks;
    std::vector<skr::EmbeddedVector> query_vecs;
    std::vector<skr::Rewrite> rewrites;

    std::vector<std::string> filler_texts;

    for (std::size_t i = 0; i < kQueries; ++i) {
        const std::string id = "q" + pad3(i + 1);
        const std::string entity = kAdjectives[rng.below(kAdjectives.size())] + " " +
                                   kNouns[rng.below(kNouns.size())] + " " + std::to_string(rng.below(90) + 10);
        const AttributeKind& attr = kAttributes[rng.below(kAttributes.size())];
        const std::string answer = attr.answers[rng.below(attr.answers.size())];

        skr::Query q;
        q.id = id;
        q.text = fill(attr.question, entity, answer);
        q.targets.push_back(answer);
        if (i % 3 == 0) q.targets.push_back("the " + answer);  // normalization-equal variant
        queries.push_back(q);

        const std::vector<double> base = random_vector(rng);
        query_vecs.push_back({id, base});

        skr::KnowledgeChunk primary;
        primary.id = "k" + pad3(chunks.size());
        primary.text = fill(attr.statement, entity, answer) + " Records at the district archive of " + entity +
                       " confirm this.";
        primary.embedding = perturbed(base, rng);
        chunks.push_back(primary);

        skr::KnowledgeChunk secondary;
        secondary.id = "k" + pad3(chunks.size());
        secondary.text = "Visitors to " + entity + " often ask about it; " + fill(attr.statement, entity, answer);
        secondary.embedding = perturbed(base, rng);
        chunks.push_back(secondary);

        // Five draft rewrites of varying quality and length.
        const std::string condensed = fill(attr.statement, entity, answer);
        rewrites.push_back({id, 0, condensed});
        rewrites.push_back({id, 1, primary.text + " " + secondary.text});
        rewrites.push_back({id, 2, entity + " is known for its weekly market and long piers."});
        rewrites.push_back({id, 3, "Archivists disagree on several details about " + entity + "."});
        rewrites.push_back({id, 4, "No useful information."});
    }

    for (std::size_t j = 0; j < kFillerChunks; ++j) {
        const std::string entity = kAdjectives[rng.below(kAdjectives.size())] + " " +
                                   kNouns[rng.below(kNouns.size())] + " " + std::to_string(rng.below(90) + 10);
        skr::KnowledgeChunk filler;
        filler.id = "k" + pad3(chunks.size());
        filler.text = "The archive of " + entity + " lists " + std::to_string(rng.below(400) + 20) +
                      " registered fishing boats and " + std::to_string(rng.below(40) + 3) + " grain barns.";
        filler.embedding = random_vector(rng);
        chunks.push_back(filler);
    }

    const auto path = [&](const std::string& name) { return out_dir + "/" + name; };
    skr::emit_dataset(queries, path("queries.jsonl"));
    skr::emit_dataset(chunks, path("chunks.jsonl"));
    skr::emit_dataset(query_vecs, path("queries_embedded.jsonl"));
    skr::emit_dataset(rewrites, path("rewrites.jsonl"));

    const skr::TemplateSet defaults = skr::TemplateSet::defaults();
    nlohmann::json templates = {{"with_knowledge", defaults.with_knowledge.body},
                                {"without_knowledge", defaults.without_knowledge.body},
                                {"knowledge_separator", defaults.with_knowledge.knowledge_separator}};
    skr::jsonl::write_file(path("templates.json"), templates.dump(2) + "\n");

    std::string conf;
    conf += "# bundled mock fixture\n";
    conf += "provider = mock\n";
    conf += "seed = 42\n";
    conf += "delta = 1.0\n";
    conf += "margin = 1.0\n";
    conf += "beta = 0.1\n";
    conf += "k = 5\n";
    conf += "jobs = 1\n";
    conf += "dataset = fixture\n";
    conf += "perturb_mode = bad\n";
    conf += "out_dir = out\n";
    conf += "templates = templates.json\n";
    conf += "paths.queries = queries.jsonl\n";
    conf += "paths.chunks = chunks.jsonl\n";
    conf += "paths.query_embeddings = queries_embedded.jsonl\n";
    conf += "paths.rewrites = rewrites.jsonl\n";
    skr::jsonl::write_file(path("run.conf"), conf);

    std::cerr << "wrote fixture (" << queries.size() << " queries, " << chunks.size() << " chunks) to " << out_dir
              << "\n";
    return 0;
}

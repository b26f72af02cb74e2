// Feedback-provider abstraction: anything that can score a target
// continuation token-by-token and generate a completion. Ships a
// deterministic mock (pure function of seed, prompt, target) and an HTTP
// client speaking a minimal JSON contract.
#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "skr/common.hpp"

namespace skr {

struct TargetLogprobs {
    std::vector<double> logprobs;  // one per target token, each finite and <= 0

    std::size_t token_count() const { return logprobs.size(); }

    bool operator==(const TargetLogprobs&) const = default;
};

inline void validate(const TargetLogprobs& lp) {
    if (lp.logprobs.empty()) throw validation_error("target logprobs must be non-empty");
    for (double v : lp.logprobs) {
        if (!std::isfinite(v) || v > 0.0)
            throw validation_error("target logprobs must be finite and <= 0");
    }
}

struct MockConfig {
    std::uint64_t seed = 0;
};

struct HttpConfig {
    std::string endpoint;  // base URL, e.g. http://localhost:8080
    std::string model;
    double timeout_s = 30.0;
    int max_concurrency = 4;
    int retries = 2;
};

struct ProviderConfig {
    enum class Kind { Mock, Http };
    Kind kind = Kind::Mock;
    MockConfig mock;
    HttpConfig http;

    void validate() const {
        if (kind == Kind::Http) {
            if (http.endpoint.empty()) throw validation_error("http provider requires an endpoint");
            if (http.max_concurrency < 1) throw validation_error("max_concurrency must be >= 1");
            if (http.retries < 0) throw validation_error("retries must be >= 0");
            if (!(http.timeout_s > 0.0)) throw validation_error("timeout_s must be positive");
        }
    }
};

class Provider {
public:
    virtual ~Provider() = default;

    // Per-token logprobs of `target` conditioned on `prompt`, in the
    // provider's own tokenization.
    virtual TargetLogprobs score_continuation(const std::string& prompt, const std::string& target) = 0;

    // Free-form completion, used by the eval harness.
    virtual std::string generate(const std::string& prompt) = 0;

    // Stable string naming this provider, used in cache keys.
    virtual std::string identity() const = 0;

    virtual int max_concurrency() const { return 1; }
};

// Offline answer key for MockProvider::generate.
struct GenerationRule {
    std::string match;   // substring to look for in the prompt
    std::string answer;  // returned when matched and designated
    bool designated = true;
};

namespace detail {

// Stable hash behind the mock logprobs; reimplemented independently in tests.
inline std::uint64_t mock_token_hash(std::uint64_t seed, const std::string& prompt, std::string_view token,
                                     std::size_t position) {
    std::uint64_t h = fnv1a64("skr-mock");
    h = fnv1a64("\x1f", h);
    h = fnv1a64(std::to_string(seed), h);
    h = fnv1a64("\x1f", h);
    h = fnv1a64(prompt, h);
    h = fnv1a64("\x1f", h);
    h = fnv1a64(token, h);
    h = fnv1a64("\x1f", h);
    h = fnv1a64(std::to_string(position), h);
    return h;
}

// Maps a hash into (0, 5]: the negated logprob, so mock perplexities cover
// [1, e^5] and exercise the sigmoid's nonlinear region.
inline double mock_neglogprob(std::uint64_t h) {
    const double unit = static_cast<double>(h >> 11) * 0x1.0p-53;  // [0, 1)
    return 5.0 * (1.0 - unit);                                     // (0, 5]
}

}  // namespace detail

class MockProvider : public Provider {
public:
    explicit MockProvider(MockConfig config) : config_(config) {}
    explicit MockProvider(std::uint64_t seed) : config_{seed} {}

    TargetLogprobs score_continuation(const std::string& prompt, const std::string& target) override {
        if (target.empty()) throw validation_error("score_continuation: target must be non-empty");
        const auto tokens = split_whitespace(target);
        if (tokens.empty()) throw validation_error("score_continuation: target has no tokens");
        TargetLogprobs out;
        out.logprobs.reserve(tokens.size());
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            const std::uint64_t h = detail::mock_token_hash(config_.seed, prompt, tokens[i], i);
            out.logprobs.push_back(-detail::mock_neglogprob(h));
        }
        return out;
    }

    std::string generate(const std::string& prompt) override {
        for (const GenerationRule& rule : answer_key_) {
            if (!rule.match.empty() && prompt.find(rule.match) != std::string::npos)
                return rule.designated ? rule.answer : "unknown";
        }
        return "unknown";
    }

    std::string identity() const override { return "mock:seed=" + std::to_string(config_.seed); }

    int max_concurrency() const override { return 8; }

    void set_answer_key(std::vector<GenerationRule> rules) { answer_key_ = std::move(rules); }

private:
    MockConfig config_;
    std::vector<GenerationRule> answer_key_;
};

class HttpProvider : public Provider {
public:
    explicit HttpProvider(HttpConfig config) : config_(std::move(config)) {
        if (const char* key = std::getenv("SKRFORGE_API_KEY")) api_key_ = key;
    }

    TargetLogprobs score_continuation(const std::string& prompt, const std::string& target) override {
        if (target.empty()) throw validation_error("score_continuation: target must be non-empty");
        nlohmann::json body = {{"prompt", prompt}, {"target", target}, {"model", config_.model}};
        const nlohmann::json resp = post_json("/score", body);

        if (!resp.contains("tokens") || !resp["tokens"].is_array() || !resp.contains("logprobs") ||
            !resp["logprobs"].is_array())
            throw transport_error("provider response missing tokens/logprobs arrays");
        if (resp["tokens"].size() != resp["logprobs"].size())
            throw transport_error("provider returned mismatched token count (" +
                                  std::to_string(resp["tokens"].size()) + " tokens vs " +
                                  std::to_string(resp["logprobs"].size()) + " logprobs)");
        TargetLogprobs out;
        for (const auto& v : resp["logprobs"]) {
            if (!v.is_number()) throw transport_error("provider returned a non-numeric logprob");
            const double lp = v.get<double>();
            if (!std::isfinite(lp) || lp > 0.0)
                throw transport_error("provider returned an invalid logprob " + format_double(lp));
            out.logprobs.push_back(lp);
        }
        if (out.logprobs.empty()) throw transport_error("provider returned zero tokens for a non-empty target");
        return out;
    }

    std::string generate(const std::string& prompt) override {
        nlohmann::json body = {{"prompt", prompt}, {"model", config_.model}};
        const nlohmann::json resp = post_json("/generate", body);
        if (!resp.contains("text") || !resp["text"].is_string())
            throw transport_error("provider generate response missing \"text\"");
        return resp["text"].get<std::string>();
    }

    std::string identity() const override { return "http:" + config_.endpoint + "|" + config_.model; }

    int max_concurrency() const override { return config_.max_concurrency; }

private:
    nlohmann::json post_json(const std::string& path, const nlohmann::json& body) {
        const std::string payload = body.dump();
        std::string last_error;
        for (int attempt = 0; attempt <= config_.retries; ++attempt) {
            if (attempt > 0) backoff(attempt);
            httplib::Client client(config_.endpoint);
            client.set_connection_timeout(std::chrono::milliseconds(static_cast<int>(config_.timeout_s * 1000)));
            client.set_read_timeout(std::chrono::milliseconds(static_cast<int>(config_.timeout_s * 1000)));
            httplib::Headers headers;
            if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
            auto res = client.Post(path, headers, payload, "application/json");
            if (!res) {
                last_error = "transport failure: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status >= 500) {
                last_error = "server error: HTTP " + std::to_string(res->status);
                continue;
            }
            if (res->status != 200)
                throw transport_error("provider rejected request: HTTP " + std::to_string(res->status));
            try {
                return nlohmann::json::parse(res->body);
            } catch (const nlohmann::json::parse_error& e) {
                throw transport_error(std::string("provider returned malformed JSON: ") + e.what());
            }
        }
        throw transport_error("provider unreachable after " + std::to_string(config_.retries + 1) +
                              " attempts: " + last_error);
    }

    void backoff(int attempt) {
        static thread_local std::mt19937 jitter_rng{std::random_device{}()};
        const int base_ms = 100 * (1 << std::min(attempt - 1, 6));
        const int jitter_ms = static_cast<int>(jitter_rng() % 100);
        std::this_thread::sleep_for(std::chrono::milliseconds(base_ms + jitter_ms));
    }

    HttpConfig config_;
    std::string api_key_;
};

inline std::unique_ptr<Provider> make_provider(const ProviderConfig& config) {
    config.validate();
    if (config.kind == ProviderConfig::Kind::Mock) return std::make_unique<MockProvider>(config.mock);
    return std::make_unique<HttpProvider>(config.http);
}

// One slot per request: either the logprobs or the per-request error.
struct BatchItem {
    std::optional<TargetLogprobs> value;
    std::string error;

    bool ok() const { return value.has_value(); }
};

using ScoreRequestPair = std::pair<std::string, std::string>;  // (prompt, target)

// Results are positionally aligned with requests; worker parallelism never
// reorders them. jobs = 0 defers to the provider's max_concurrency.
inline std::vector<BatchItem> batch_score(Provider& provider, const std::vector<ScoreRequestPair>& requests,
                                          int jobs = 0) {
    std::vector<BatchItem> results(requests.size());
    if (requests.empty()) return results;

    int workers = jobs > 0 ? jobs : provider.max_concurrency();
    workers = std::min<int>(workers, static_cast<int>(requests.size()));
    workers = std::max(workers, 1);

    std::atomic<std::size_t> next{0};
    auto run = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= requests.size()) return;
            try {
                results[i].value = provider.score_continuation(requests[i].first, requests[i].second);
            } catch (const std::exception& e) {
                results[i].error = e.what();
            }
        }
    };

    if (workers == 1) {
        run();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(workers));
        for (int w = 0; w < workers; ++w) pool.emplace_back(run);
        for (auto& t : pool) t.join();
    }
    return results;
}

}  // namespace skr

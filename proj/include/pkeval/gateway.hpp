#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace pkeval {

using json = nlohmann::json;

/// One chat-completion request. Decoding defaults follow the operational
/// policy: greedy (temperature 0) for extraction, judging, and validation
/// calls; temperature 1.0 for rationale sampling.
struct ChatRequest {
    std::string model;
    std::string system;
    std::string user;
    double temperature = 0.0;
    double top_p = 1.0;
    int max_tokens = 8192;
    std::optional<int64_t> seed;
};

void to_json(json& j, const ChatRequest& r);

struct EmbeddingVector {
    std::vector<double> values;

    int dim() const { return static_cast<int>(values.size()); }
};

/// Content-addressed key for the on-disk response cache. Any change to the
/// endpoint kind, model, prompt payload, or decoding parameters changes the key.
std::string cache_key_chat(const ChatRequest& req);
std::string cache_key_embed(const std::string& model, const std::vector<std::string>& texts);

class Backend {
public:
    virtual ~Backend() = default;
    virtual std::string name() const = 0;
    virtual std::string chat(const ChatRequest& req) = 0;
    virtual std::vector<EmbeddingVector> embed(const std::string& model,
                                               const std::vector<std::string>& texts) = 0;
};

struct RetryPolicy {
    int max_attempts = 5;
    int base_delay_ms = 100;
    int max_delay_ms = 5000;
};

struct HttpBackendConfig {
    std::string base_url;  // e.g. "http://localhost:8000"
    std::string api_key;
    int timeout_s = 120;
    RetryPolicy retry;
};

/// OpenAI-compatible chat-completions and embeddings client with bounded
/// retries (408/429/5xx and transport errors) and exponential backoff.
class HttpBackend : public Backend {
public:
    explicit HttpBackend(HttpBackendConfig cfg);

    std::string name() const override { return "http"; }
    std::string chat(const ChatRequest& req) override;
    std::vector<EmbeddingVector> embed(const std::string& model,
                                       const std::vector<std::string>& texts) override;

    uint64_t retries() const { return retries_.load(); }

private:
    json post_json(const std::string& path, const json& body, const std::string& req_digest);

    HttpBackendConfig cfg_;
    std::atomic<uint64_t> retries_{0};
};

struct MockRule {
    std::string match;     // substring matched against the user prompt
    std::string response;
};

/// Deterministic offline backend. Fixture rules take precedence; unmatched
/// prompts receive a hash-derived response shaped to fit the request: prompts
/// carrying the structural headers of the pipeline's templates get
/// format-conformant synthetic completions so offline end-to-end runs
/// complete, and anything else gets a plain digest string. Embeddings are
/// canned per text or derived from the text hash (identical texts always get
/// identical vectors).
class MockBackend : public Backend {
public:
    MockBackend() = default;

    /// Fixture format: {"rules": [{"match": ..., "response": ...}],
    ///                  "embeddings": {"text": [..]}, "embed_dim": 16}
    static std::shared_ptr<MockBackend> from_fixture_file(const std::filesystem::path& path);

    void add_rule(std::string match, std::string response);
    void set_embedding(const std::string& text, std::vector<double> values);
    void set_embed_dim(int dim) { embed_dim_ = dim; }

    std::string name() const override { return "mock"; }
    std::string chat(const ChatRequest& req) override;
    std::vector<EmbeddingVector> embed(const std::string& model,
                                       const std::vector<std::string>& texts) override;

private:
    std::string synthesize(const ChatRequest& req) const;

    std::vector<MockRule> rules_;
    std::map<std::string, std::vector<double>> canned_embeddings_;
    int embed_dim_ = 16;
};

struct GatewayConfig {
    std::string cache_dir;      // empty disables caching
    bool cache_enabled = true;
    int concurrency = 8;        // max in-flight backend requests
    int embed_chunk_size = 128;
};

struct GatewayStats {
    uint64_t chat_calls = 0;
    uint64_t embed_calls = 0;
    uint64_t network_calls = 0;  // backend invocations (cache misses)
    uint64_t cache_hits = 0;
};

/// Uniform access to chat and embedding endpoints with an on-disk response
/// cache and a bounded in-flight request limit. Shareable across threads.
class Gateway {
public:
    Gateway(std::shared_ptr<Backend> backend, GatewayConfig cfg);

    /// Returns the completion text; served from cache when available.
    std::string chat(const ChatRequest& req);

    /// Embeds texts in provider-sized chunks; output order matches input
    /// order and all vectors share one dimension.
    std::vector<EmbeddingVector> embed_batch(const std::string& model,
                                             const std::vector<std::string>& texts);

    /// Cache lookup without touching the backend; used to reconstruct judge
    /// completions verbatim for distillation data.
    std::optional<std::string> cached_completion(const ChatRequest& req) const;

    GatewayStats stats() const;
    const GatewayConfig& config() const { return cfg_; }
    Backend& backend() { return *backend_; }

private:
    class Semaphore {
    public:
        explicit Semaphore(int limit) : limit_(limit) {}
        void acquire();
        void release();

    private:
        std::mutex mu_;
        std::condition_variable cv_;
        int limit_;
        int in_use_ = 0;
    };

    std::optional<json> cache_read(const std::string& key) const;
    void cache_write(const std::string& key, const json& entry);
    std::filesystem::path cache_path(const std::string& key) const;

    std::shared_ptr<Backend> backend_;
    GatewayConfig cfg_;
    mutable Semaphore semaphore_;
    mutable std::mutex cache_mu_;
    std::atomic<uint64_t> chat_calls_{0};
    std::atomic<uint64_t> embed_calls_{0};
    std::atomic<uint64_t> network_calls_{0};
    std::atomic<uint64_t> cache_hits_{0};
};

}  // namespace pkeval

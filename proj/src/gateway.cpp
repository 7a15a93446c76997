#include "pkeval/gateway.hpp"

#include <httplib.h>

#include <algorithm>
#include <chrono>
#include <fstream>
#include <stdexcept>
#include <thread>

#include "pkeval/digest.hpp"
#include "pkeval/jsonl.hpp"

namespace pkeval {

void to_json(json& j, const ChatRequest& r) {
    j = json{{"model", r.model},
             {"system", r.system},
             {"user", r.user},
             {"temperature", r.temperature},
             {"top_p", r.top_p},
             {"max_tokens", r.max_tokens}};
    j["seed"] = r.seed ? json(*r.seed) : json(nullptr);
}

std::string cache_key_chat(const ChatRequest& req) {
    json j;
    to_json(j, req);
    j["kind"] = "chat";
    return sha256_hex(j.dump());
}

std::string cache_key_embed(const std::string& model, const std::vector<std::string>& texts) {
    json j{{"kind", "embed"}, {"model", model}, {"texts", texts}};
    return sha256_hex(j.dump());
}

// --- HttpBackend -------------------------------------------------------------

HttpBackend::HttpBackend(HttpBackendConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.base_url.empty()) {
        throw std::runtime_error("http backend: base URL not configured");
    }
}

json HttpBackend::post_json(const std::string& path, const json& body,
                            const std::string& req_digest) {
    const std::string payload = body.dump();
    std::string last_error;
    for (int attempt = 0; attempt < cfg_.retry.max_attempts; ++attempt) {
        if (attempt > 0) {
            retries_.fetch_add(1);
            // Deterministic jitter so reruns back off identically.
            uint64_t jitter = 0;
            const std::string hex = sha256_hex(req_digest + "#" + std::to_string(attempt));
            for (int i = 0; i < 8; ++i) jitter = jitter * 16 + (hex[i] <= '9' ? hex[i] - '0' : hex[i] - 'a' + 10);
            int delay = std::min(cfg_.retry.max_delay_ms,
                                 cfg_.retry.base_delay_ms * (1 << std::min(attempt, 10)));
            delay += static_cast<int>(jitter % static_cast<uint64_t>(cfg_.retry.base_delay_ms + 1));
            std::this_thread::sleep_for(std::chrono::milliseconds(delay));
        }
        // One client per request: httplib clients are not safe for concurrent
        // use, and connection reuse is irrelevant at batch-pipeline rates.
        httplib::Client client(cfg_.base_url);
        client.set_connection_timeout(cfg_.timeout_s, 0);
        client.set_read_timeout(cfg_.timeout_s, 0);
        httplib::Headers headers;
        if (!cfg_.api_key.empty()) {
            headers.emplace("Authorization", "Bearer " + cfg_.api_key);
        }
        auto res = client.Post(path, headers, payload, "application/json");
        if (!res) {
            last_error = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status >= 200 && res->status < 300) {
            try {
                return json::parse(res->body);
            } catch (const json::exception& e) {
                throw std::runtime_error(std::string("http backend: invalid JSON response: ") + e.what());
            }
        }
        last_error = "status " + std::to_string(res->status);
        bool retryable = res->status == 408 || res->status == 429 || res->status >= 500;
        if (!retryable) {
            throw std::runtime_error("http backend: " + path + " failed with " + last_error);
        }
    }
    throw std::runtime_error("http backend: " + path + " failed after " +
                             std::to_string(cfg_.retry.max_attempts) + " attempts (" + last_error + ")");
}

std::string HttpBackend::chat(const ChatRequest& req) {
    json body{{"model", req.model},
              {"messages",
               json::array({json{{"role", "system"}, {"content", req.system}},
                            json{{"role", "user"}, {"content", req.user}}})},
              {"temperature", req.temperature},
              {"top_p", req.top_p},
              {"max_tokens", req.max_tokens}};
    if (req.seed) body["seed"] = *req.seed;
    json res = post_json("/v1/chat/completions", body, cache_key_chat(req));
    if (!res.contains("choices") || res["choices"].empty()) {
        throw std::runtime_error("http backend: response has no choices");
    }
    std::string content = res["choices"][0].value("message", json::object()).value("content", "");
    if (content.empty()) {
        throw std::runtime_error("http backend: empty completion");
    }
    return content;
}

std::vector<EmbeddingVector> HttpBackend::embed(const std::string& model,
                                                const std::vector<std::string>& texts) {
    json body{{"model", model}, {"input", texts}};
    json res = post_json("/v1/embeddings", body, cache_key_embed(model, texts));
    if (!res.contains("data") || !res["data"].is_array() || res["data"].size() != texts.size()) {
        throw std::runtime_error("http backend: embeddings response size mismatch");
    }
    std::vector<EmbeddingVector> out(texts.size());
    for (const auto& item : res["data"]) {
        size_t index = item.value("index", static_cast<size_t>(0));
        if (index >= out.size()) {
            throw std::runtime_error("http backend: embedding index out of range");
        }
        out[index].values = item.at("embedding").get<std::vector<double>>();
    }
    for (size_t i = 1; i < out.size(); ++i) {
        if (out[i].dim() != out[0].dim()) {
            throw std::runtime_error("http backend: inconsistent embedding dimensions");
        }
    }
    return out;
}

// --- Gateway -----------------------------------------------------------------

void Gateway::Semaphore::acquire() {
    std::unique_lock<std::mutex> lock(mu_);
    cv_.wait(lock, [&] { return in_use_ < limit_; });
    ++in_use_;
}

void Gateway::Semaphore::release() {
    {
        std::lock_guard<std::mutex> lock(mu_);
        --in_use_;
    }
    cv_.notify_one();
}

Gateway::Gateway(std::shared_ptr<Backend> backend, GatewayConfig cfg)
    : backend_(std::move(backend)), cfg_(std::move(cfg)), semaphore_(std::max(1, cfg_.concurrency)) {
    if (!backend_) throw std::runtime_error("gateway: backend is required");
}

std::filesystem::path Gateway::cache_path(const std::string& key) const {
    return std::filesystem::path(cfg_.cache_dir) / key.substr(0, 2) / (key + ".json");
}

std::optional<json> Gateway::cache_read(const std::string& key) const {
    if (!cfg_.cache_enabled || cfg_.cache_dir.empty()) return std::nullopt;
    const auto path = cache_path(key);
    std::ifstream in(path);
    if (!in) return std::nullopt;
    try {
        json j;
        in >> j;
        return j;
    } catch (const json::exception&) {
        return std::nullopt;  // corrupt entry; treated as a miss and rewritten
    }
}

void Gateway::cache_write(const std::string& key, const json& entry) {
    if (!cfg_.cache_enabled || cfg_.cache_dir.empty()) return;
    std::lock_guard<std::mutex> lock(cache_mu_);
    const auto path = cache_path(key);
    std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        out << entry.dump(2) << '\n';
    }
    std::filesystem::rename(tmp, path);
}

std::string Gateway::chat(const ChatRequest& req) {
    chat_calls_.fetch_add(1);
    const std::string key = cache_key_chat(req);
    if (auto cached = cache_read(key)) {
        cache_hits_.fetch_add(1);
        return cached->at("response").get<std::string>();
    }
    semaphore_.acquire();
    std::string response;
    try {
        response = backend_->chat(req);
    } catch (...) {
        semaphore_.release();
        throw;
    }
    semaphore_.release();
    network_calls_.fetch_add(1);
    json entry;
    to_json(entry, req);
    entry["kind"] = "chat";
    entry["response"] = response;
    cache_write(key, entry);
    return response;
}

std::vector<EmbeddingVector> Gateway::embed_batch(const std::string& model,
                                                  const std::vector<std::string>& texts) {
    if (texts.empty()) {
        throw std::runtime_error("embed_batch: texts must be non-empty");
    }
    for (const auto& t : texts) {
        if (t.empty()) throw std::runtime_error("embed_batch: texts must be non-empty strings");
    }
    embed_calls_.fetch_add(1);
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    const size_t chunk_size = static_cast<size_t>(std::max(1, cfg_.embed_chunk_size));
    for (size_t start = 0; start < texts.size(); start += chunk_size) {
        const size_t end = std::min(texts.size(), start + chunk_size);
        std::vector<std::string> chunk(texts.begin() + static_cast<long>(start),
                                       texts.begin() + static_cast<long>(end));
        const std::string key = cache_key_embed(model, chunk);
        std::vector<EmbeddingVector> vectors;
        if (auto cached = cache_read(key)) {
            cache_hits_.fetch_add(1);
            for (const auto& v : cached->at("vectors")) {
                vectors.push_back(EmbeddingVector{v.get<std::vector<double>>()});
            }
        } else {
            semaphore_.acquire();
            try {
                vectors = backend_->embed(model, chunk);
            } catch (...) {
                semaphore_.release();
                throw;
            }
            semaphore_.release();
            network_calls_.fetch_add(1);
            json entry{{"kind", "embed"}, {"model", model}, {"texts", chunk}};
            json vs = json::array();
            for (const auto& v : vectors) vs.push_back(v.values);
            entry["vectors"] = vs;
            cache_write(key, entry);
        }
        if (vectors.size() != chunk.size()) {
            throw std::runtime_error("embed_batch: backend returned wrong vector count");
        }
        for (auto& v : vectors) out.push_back(std::move(v));
    }
    for (size_t i = 1; i < out.size(); ++i) {
        if (out[i].dim() != out[0].dim()) {
            throw std::runtime_error("embed_batch: inconsistent dimensions across batch");
        }
    }
    for (const auto& v : out) {
        for (double x : v.values) {
            if (!std::isfinite(x)) throw std::runtime_error("embed_batch: non-finite component");
        }
    }
    return out;
}

std::optional<std::string> Gateway::cached_completion(const ChatRequest& req) const {
    if (auto cached = cache_read(cache_key_chat(req))) {
        return cached->at("response").get<std::string>();
    }
    return std::nullopt;
}

GatewayStats Gateway::stats() const {
    return GatewayStats{chat_calls_.load(), embed_calls_.load(), network_calls_.load(),
                        cache_hits_.load()};
}

}  // namespace pkeval

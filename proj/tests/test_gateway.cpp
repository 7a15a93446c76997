#include <doctest.h>
#include <httplib.h>

#include <atomic>
#include <filesystem>
#include <thread>

#include "pkeval/gateway.hpp"
#include "pkeval/jsonl.hpp"

using namespace pkeval;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("pkeval_gw_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

ChatRequest simple_request(const std::string& user) {
    ChatRequest req;
    req.model = "m";
    req.user = user;
    return req;
}

/// In-process OpenAI-compatible stub with per-test handler knobs.
struct StubServer {
    httplib::Server server;
    int port = 0;
    std::thread thread;
    std::atomic<int> attempts{0};
    std::atomic<int> in_flight{0};
    std::atomic<int> peak{0};
    int fail_first_n = 0;  // respond 429 to this many initial requests

    StubServer() {
        server.Post("/v1/chat/completions", [this](const httplib::Request&, httplib::Response& res) {
            const int attempt = attempts.fetch_add(1) + 1;
            const int now = in_flight.fetch_add(1) + 1;
            int seen = peak.load();
            while (now > seen && !peak.compare_exchange_weak(seen, now)) {
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(20));
            if (attempt <= fail_first_n) {
                res.status = 429;
                res.set_content("slow down", "text/plain");
            } else {
                json body{{"choices",
                           json::array({json{{"message", json{{"content", "stub reply"}}}}})}};
                res.set_content(body.dump(), "application/json");
            }
            in_flight.fetch_sub(1);
        });
        port = server.bind_to_any_port("127.0.0.1");
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }

    ~StubServer() {
        server.stop();
        thread.join();
    }

    std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port); }
};

}  // namespace

TEST_CASE("mock rules return canned responses; cache short-circuits the backend") {
    auto mock = std::make_shared<MockBackend>();
    mock->add_rule("magic-prompt", "X");
    GatewayConfig cfg;
    cfg.cache_dir = fresh_dir("cache1").string();
    Gateway gateway(mock, cfg);

    CHECK(gateway.chat(simple_request("this is the magic-prompt here")) == "X");
    CHECK(gateway.stats().network_calls == 1);

    CHECK(gateway.chat(simple_request("this is the magic-prompt here")) == "X");
    CHECK(gateway.stats().network_calls == 1);  // second call served from cache
    CHECK(gateway.stats().cache_hits == 1);
}

TEST_CASE("cache on/off changes network counts, never responses") {
    auto run = [&](bool enabled, const std::string& dir) {
        auto mock = std::make_shared<MockBackend>();
        GatewayConfig cfg;
        cfg.cache_dir = fresh_dir(dir).string();
        cfg.cache_enabled = enabled;
        Gateway gateway(mock, cfg);
        std::vector<std::string> replies;
        for (int round = 0; round < 2; ++round) {
            for (int i = 0; i < 4; ++i) {
                replies.push_back(gateway.chat(simple_request("prompt " + std::to_string(i))));
            }
        }
        return std::make_pair(replies, gateway.stats().network_calls);
    };
    auto [with_cache, with_cache_calls] = run(true, "cache_on");
    auto [without_cache, without_cache_calls] = run(false, "cache_off");
    CHECK(with_cache == without_cache);
    CHECK(with_cache_calls == 4);
    CHECK(without_cache_calls == 8);
}

TEST_CASE("cached completions are retrievable without a network call") {
    auto mock = std::make_shared<MockBackend>();
    GatewayConfig cfg;
    cfg.cache_dir = fresh_dir("cache2").string();
    Gateway gateway(mock, cfg);

    ChatRequest req = simple_request("remember me");
    CHECK_FALSE(gateway.cached_completion(req).has_value());
    const std::string reply = gateway.chat(req);
    auto cached = gateway.cached_completion(req);
    REQUIRE(cached.has_value());
    CHECK(*cached == reply);
}

TEST_CASE("identical requests produce identical cache keys; any field change differs") {
    ChatRequest a = simple_request("payload");
    ChatRequest b = a;
    CHECK(cache_key_chat(a) == cache_key_chat(b));
    b.temperature = 1.0;
    CHECK(cache_key_chat(a) != cache_key_chat(b));
    b = a;
    b.seed = 3;
    CHECK(cache_key_chat(a) != cache_key_chat(b));
    b = a;
    b.model = "other";
    CHECK(cache_key_chat(a) != cache_key_chat(b));
    CHECK(cache_key_embed("m", {"x"}) != cache_key_embed("m", {"y"}));
}

TEST_CASE("embed_batch preserves order and supports canned basis vectors") {
    auto mock = std::make_shared<MockBackend>();
    mock->set_embedding("a", {1.0, 0.0, 0.0});
    mock->set_embedding("b", {0.0, 1.0, 0.0});
    Gateway gateway(mock, GatewayConfig{});
    auto vectors = gateway.embed_batch("emb", {"a", "b"});
    REQUIRE(vectors.size() == 2);
    CHECK(vectors[0].values == std::vector<double>{1.0, 0.0, 0.0});
    CHECK(vectors[1].values == std::vector<double>{0.0, 1.0, 0.0});
}

TEST_CASE("chunked embedding equals the one-shot result") {
    std::vector<std::string> texts;
    for (int i = 0; i < 1000; ++i) texts.push_back("text " + std::to_string(i));

    GatewayConfig one_shot;
    one_shot.embed_chunk_size = 2000;
    Gateway whole(std::make_shared<MockBackend>(), one_shot);

    GatewayConfig chunked;
    chunked.embed_chunk_size = 64;
    Gateway pieces(std::make_shared<MockBackend>(), chunked);

    auto expect = whole.embed_batch("emb", texts);
    auto got = pieces.embed_batch("emb", texts);
    REQUIRE(expect.size() == got.size());
    for (size_t i = 0; i < expect.size(); ++i) {
        CHECK(expect[i].values == got[i].values);
    }
    CHECK(pieces.stats().network_calls > whole.stats().network_calls);
}

TEST_CASE("embed_batch rejects empty input") {
    Gateway gateway(std::make_shared<MockBackend>(), GatewayConfig{});
    CHECK_THROWS(gateway.embed_batch("emb", {}));
    CHECK_THROWS(gateway.embed_batch("emb", {""}));
}

TEST_CASE("mock synthesizes format-conformant structured responses") {
    MockBackend mock;
    ChatRequest extraction = simple_request(
        "### Question\nWhat is inertia?\n\n### The Answer to the Question\n(A) property of matter\n\n"
        "### Required Conceptual Knowledge");
    const std::string completion = mock.chat(extraction);
    CHECK(completion.find("### Required Conceptual Knowledge") != std::string::npos);
    CHECK(completion.find("1. ") != std::string::npos);
    // Deterministic: same request, same completion.
    CHECK(mock.chat(extraction) == completion);

    ChatRequest judgment = simple_request(
        "### Question\nQ\n\n### The Answer to the Question\nA\n\n### Required Conceptual "
        "Knowledge\n1. First fact.\n2. Second fact.\n\n### Rationale\nBecause.\n\n### Evaluation");
    const std::string judged = mock.chat(judgment);
    CHECK(judged.find("Concept: First fact.") != std::string::npos);
    CHECK(judged.find("Application:") != std::string::npos);
    CHECK(judged.find("---") != std::string::npos);
}

TEST_CASE("http backend retries 429 then succeeds, attempts visible server-side") {
    StubServer stub;
    stub.fail_first_n = 3;
    HttpBackendConfig cfg;
    cfg.base_url = stub.base_url();
    cfg.retry.base_delay_ms = 1;
    HttpBackend backend(cfg);
    CHECK(backend.chat(simple_request("hello")) == "stub reply");
    CHECK(stub.attempts.load() == 4);  // three 429s then one success
    CHECK(backend.retries() == 3);
}

TEST_CASE("http backend gives up after bounded attempts") {
    StubServer stub;
    stub.fail_first_n = 1000;
    HttpBackendConfig cfg;
    cfg.base_url = stub.base_url();
    cfg.retry.max_attempts = 3;
    cfg.retry.base_delay_ms = 1;
    HttpBackend backend(cfg);
    CHECK_THROWS_WITH_AS(backend.chat(simple_request("hello")), doctest::Contains("3 attempts"),
                         std::runtime_error);
    CHECK(stub.attempts.load() == 3);
}

TEST_CASE("gateway bounds in-flight requests at the configured limit") {
    StubServer stub;
    HttpBackendConfig http;
    http.base_url = stub.base_url();
    GatewayConfig cfg;
    cfg.concurrency = 4;
    cfg.cache_enabled = false;
    Gateway gateway(std::make_shared<HttpBackend>(http), cfg);

    std::vector<std::thread> callers;
    for (int i = 0; i < 16; ++i) {
        callers.emplace_back([&gateway, i] {
            gateway.chat(simple_request("caller " + std::to_string(i)));
        });
    }
    for (auto& t : callers) t.join();
    CHECK(stub.peak.load() <= 4);
    CHECK(stub.peak.load() >= 2);  // parallelism actually exercised
    CHECK(stub.attempts.load() == 16);
}

#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "cotpred/error.hpp"
#include "cotpred/llm_client.hpp"
#include "cotpred/pcot.hpp"
#include "fixtures.hpp"
#include "test_support.hpp"

using namespace cotpred;
using namespace std::chrono_literals;

namespace {

/// Local chat-completions stub on an ephemeral port.
class StubServer {
public:
    explicit StubServer(std::function<void(const httplib::Request &, httplib::Response &)> handler) {
        server_.Post("/v1/chat/completions", [this, handler](const httplib::Request &req, httplib::Response &res) {
            hits_.fetch_add(1);
            handler(req, res);
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~StubServer() {
        server_.stop();
        thread_.join();
    }
    BackendConfig config() const {
        BackendConfig c;
        c.base_url = "http://127.0.0.1:" + std::to_string(port_) + "/v1";
        c.model_id = "stub";
        c.auth_token_env = "";
        c.initial_backoff = 1ms;
        c.timeout = 2000ms;
        return c;
    }
    int hits() const { return hits_.load(); }

private:
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
    std::atomic<int> hits_{0};
};

std::string reply(const std::string &content, int prompt_tokens = -1, int completion_tokens = -1) {
    nlohmann::json j = {{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}}};
    if (prompt_tokens >= 0) j["usage"] = {{"prompt_tokens", prompt_tokens}, {"completion_tokens", completion_tokens}};
    return j.dump();
}

const std::vector<ChatMessage> hello = {{"system", "sys"}, {"user", "hello"}};

} // namespace

TEST_CASE("http backend: success uses reported usage") {
    std::atomic<bool> saw_seed{false};
    StubServer stub([&](const httplib::Request &req, httplib::Response &res) {
        const auto body = nlohmann::json::parse(req.body);
        saw_seed = body.contains("seed") && body["seed"] == 9;
        CHECK(body["model"] == "stub");
        CHECK(body["messages"].size() == 2);
        CHECK(body["messages"][1]["content"] == "hello");
        res.set_content(reply("FINAL_ANSWER: 3.20", 120, 7), "application/json");
    });
    HttpBackend backend(stub.config());
    CompletionOptions opts;
    opts.seed = 9;
    const auto ex = backend.complete(hello, opts);
    CHECK(ex.response_text == "FINAL_ANSWER: 3.20");
    CHECK(ex.input_tokens == 120);
    CHECK(ex.output_tokens == 7);
    CHECK(saw_seed);
    CHECK(backend.calls() == 1);
}

TEST_CASE("http backend: missing usage falls back to estimates") {
    StubServer stub([](const httplib::Request &, httplib::Response &res) {
        res.set_content(reply("abcdefgh"), "application/json");
    });
    HttpBackend backend(stub.config());
    const auto ex = backend.complete(hello);
    CHECK(ex.output_tokens == 2);
    CHECK(ex.input_tokens == estimate_tokens(hello));
}

TEST_CASE("http backend: 5xx is retried max_retries times") {
    StubServer stub([](const httplib::Request &, httplib::Response &res) {
        res.status = 500;
        res.set_content("boom", "text/plain");
    });
    auto cfg = stub.config();
    cfg.max_retries = 2;
    HttpBackend backend(cfg);
    try {
        backend.complete(hello);
        FAIL("expected BackendError");
    } catch (const BackendError &e) {
        CHECK(e.last_status() == 500);
    }
    CHECK(stub.hits() == 3);
    CHECK(backend.calls() == 1);
}

TEST_CASE("http backend: 429 then success") {
    std::atomic<int> n{0};
    StubServer stub([&](const httplib::Request &, httplib::Response &res) {
        if (n.fetch_add(1) == 0) {
            res.status = 429;
            return;
        }
        res.set_content(reply("ok"), "application/json");
    });
    HttpBackend backend(stub.config());
    CHECK(backend.complete(hello).response_text == "ok");
    CHECK(stub.hits() == 2);
}

TEST_CASE("http backend: 4xx is not retried") {
    StubServer stub([](const httplib::Request &, httplib::Response &res) { res.status = 400; });
    HttpBackend backend(stub.config());
    CHECK_THROWS_AS(backend.complete(hello), BackendError);
    CHECK(stub.hits() == 1);
}

TEST_CASE("http backend: malformed body") {
    StubServer stub([](const httplib::Request &, httplib::Response &res) {
        res.set_content(R"({"choices": []})", "application/json");
    });
    HttpBackend backend(stub.config());
    CHECK_THROWS_AS(backend.complete(hello), BackendError);
}

TEST_CASE("http backend: timeouts exhaust retries and surface as generation errors") {
    StubServer stub([](const httplib::Request &, httplib::Response &res) {
        std::this_thread::sleep_for(400ms);
        res.set_content(reply("late"), "application/json");
    });
    auto cfg = stub.config();
    cfg.timeout = 100ms;
    cfg.max_retries = 2;
    HttpBackend backend(cfg);
    const auto ex = testing::reference_demos()[0].window;
    try {
        generate_plan("L1", ex, InstructionSet::defaults(), backend, 4);
        FAIL("expected GenerationError");
    } catch (const GenerationError &e) {
        CHECK(e.example_index() == 4);
    }
    CHECK(stub.hits() == 3);
}

TEST_CASE("http backend: configuration checks") {
    BackendConfig cfg;
    cfg.auth_token_env = "COTPRED_TEST_SURELY_UNSET_VAR";
    ::unsetenv(cfg.auth_token_env.c_str());
    CHECK_THROWS_AS(HttpBackend{cfg}, ConfigError);
    cfg.auth_token_env = "";
    cfg.base_url = "localhost:8000";
    CHECK_THROWS_AS(HttpBackend{cfg}, ConfigError);
    cfg.base_url = "http://localhost:8000/v1";
    cfg.max_retries = -1;
    CHECK_THROWS_AS(HttpBackend{cfg}, ConfigError);
}

TEST_CASE("http backend: bearer token is sent") {
    std::string auth;
    std::mutex m;
    StubServer stub([&](const httplib::Request &req, httplib::Response &res) {
        std::lock_guard lock(m);
        auth = req.get_header_value("Authorization");
        res.set_content(reply("ok"), "application/json");
    });
    ::setenv("COTPRED_TEST_TOKEN", "s3cret", 1);
    auto cfg = stub.config();
    cfg.auth_token_env = "COTPRED_TEST_TOKEN";
    HttpBackend backend(cfg);
    backend.complete(hello);
    std::lock_guard lock(m);
    CHECK(auth == "Bearer s3cret");
}

TEST_CASE("persistence mock echoes the newest query value") {
    PersistenceMock mock;
    const auto prompt = render_prompt(testing::reference_query(), testing::reference_demos(), PromptMode::m_shot_cot,
                                      InstructionSet::defaults());
    const auto ex = mock.complete(prompt.messages);
    CHECK(ex.response_text == "FINAL_ANSWER: 50.37");
    CHECK(parse_prediction(ex.response_text).value == 50.37);

    auto q = testing::reference_query();
    q.gamma.back() = 9.4;
    const auto zero = render_prompt(q, {}, PromptMode::zero_shot_icl, InstructionSet::defaults());
    CHECK(mock.complete(zero.messages).response_text == "FINAL_ANSWER: 9.40");

    const std::vector<ChatMessage> other = {{"user", "write a lecture"}};
    const auto a = mock.complete(other).response_text;
    CHECK_FALSE(a.empty());
    CHECK(a == mock.complete(other).response_text);
    CHECK(mock.calls() == 4);
}

TEST_CASE("scripted mock replays, fails and runs dry") {
    ScriptedMock mock({"a", std::string(ScriptedMock::fail), "b"});
    CHECK(mock.complete(hello).response_text == "a");
    CHECK_THROWS_AS(mock.complete(hello), BackendError);
    CHECK(mock.complete(hello).response_text == "b");
    CHECK_THROWS_AS(mock.complete(hello), BackendError);
    CHECK(mock.requests().size() == 4);
    CHECK(mock.requests()[0] == hello);
}

TEST_CASE("response cache") {
    testing::TempDir dir;
    const auto path = dir / "cache.jsonl";
    std::uint64_t inner_calls = 0;
    {
        ResponseCache cache(path);
        PersistenceMock mock;
        CachedBackend cached(mock, cache);
        const auto first = cached.complete(hello);
        CHECK_FALSE(first.from_cache);
        const auto second = cached.complete(hello);
        CHECK(second.from_cache);
        CHECK(second.response_text == first.response_text);
        CHECK(mock.calls() == 1);
        CHECK(cached.calls() == 1);
        CHECK(cache.size() == 1);
        inner_calls = mock.calls();
    }
    SUBCASE("reload from disk") {
        ResponseCache cache(path);
        CHECK(cache.size() == 1);
        PersistenceMock mock;
        CHECK(cached_complete(cache, mock, hello).from_cache);
        CHECK(mock.calls() == 0);
    }
    SUBCASE("truncated final record") {
        auto text = testing::read_file(path);
        text += text.substr(0, text.size() / 2);
        testing::write_file(path, text);
        try {
            ResponseCache cache(path);
            FAIL("expected CacheError");
        } catch (const CacheError &e) {
            CHECK(e.line() == 2);
        }
    }
    CHECK(inner_calls == 1);
}

TEST_CASE("cache keys") {
    const std::vector<ChatMessage> other = {{"system", "sys"}, {"user", "hello!"}};
    const auto k = cache_key("m", 0.2, std::nullopt, hello);
    CHECK(k == cache_key("m", 0.2, std::nullopt, hello));
    CHECK(k != cache_key("m", 0.3, std::nullopt, hello));
    CHECK(k != cache_key("n", 0.2, std::nullopt, hello));
    CHECK(k != cache_key("m", 0.2, 1, hello));
    CHECK(cache_key("m", 0.2, 1, hello) != cache_key("m", 0.2, 2, hello));
    CHECK(k != cache_key("m", 0.2, std::nullopt, other));
    // Role boundaries are part of the key.
    const std::vector<ChatMessage> merged = {{"system", "sys\nuser\nhello"}};
    CHECK(k != cache_key("m", 0.2, std::nullopt, merged));
}

TEST_CASE("token estimate") {
    CHECK(estimate_tokens("") == 0);
    CHECK(estimate_tokens("a") == 1);
    CHECK(estimate_tokens("abcd") == 1);
    CHECK(estimate_tokens("abcde") == 2);
    const std::vector<ChatMessage> msgs = {{"system", "abc"}, {"user", "defgh"}};
    CHECK(estimate_tokens(msgs) == 2);
}

TEST_CASE("global completion counter excludes cache hits") {
    reset_completion_count();
    ResponseCache cache;
    PersistenceMock mock;
    CachedBackend cached(mock, cache);
    for (int i = 0; i < 5; ++i) cached.complete(hello);
    CHECK(completion_count() == 1);
}

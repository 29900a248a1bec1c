#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace cotpred {

struct ChatMessage {
    std::string role;
    std::string content;

    bool operator==(const ChatMessage &) const = default;
};

struct ChatExchange {
    std::vector<ChatMessage> request_messages;
    std::string response_text;
    std::int64_t input_tokens = 0;
    std::int64_t output_tokens = 0;
    std::chrono::milliseconds latency{0};
    bool from_cache = false;
};

struct BackendConfig {
    std::string base_url = "http://localhost:8000/v1";
    std::string model_id = "default";
    double temperature = 0.2;
    int max_output_tokens = 512;
    std::chrono::milliseconds timeout{60000};
    int max_retries = 3;
    /// Name of the environment variable holding the bearer token; empty disables auth.
    std::string auth_token_env = "LLM_API_KEY";
    std::chrono::milliseconds initial_backoff{500};
    std::size_t max_in_flight = 4;
};

struct CompletionOptions {
    std::optional<std::uint64_t> seed;
};

/// ceil(chars / 4) over the message contents.
std::int64_t estimate_tokens(std::string_view text);
std::int64_t estimate_tokens(std::span<const ChatMessage> messages);

/// Process-wide count of backend-bound completions (cache hits excluded).
std::uint64_t completion_count() noexcept;
void reset_completion_count() noexcept;

class ChatBackend {
public:
    virtual ~ChatBackend() = default;

    /// One logical completion. Implementations count themselves exactly once per call.
    virtual ChatExchange complete(std::span<const ChatMessage> messages, const CompletionOptions &options = {}) = 0;
    virtual std::string model_id() const = 0;
    virtual double temperature() const = 0;
    /// Whether the backend honours CompletionOptions::seed.
    virtual bool supports_seed() const { return false; }
    virtual std::size_t max_in_flight() const { return 1; }

    std::uint64_t calls() const noexcept { return calls_.load(); }

protected:
    void count_call() noexcept;
    /// Per-instance count only, for adaptors whose inner backend already counted globally.
    void count_forwarded() noexcept { calls_.fetch_add(1); }

private:
    std::atomic<std::uint64_t> calls_{0};
};

/// Chat-completions over HTTP(S) with retry on transport errors, 429 and 5xx.
class HttpBackend final : public ChatBackend {
public:
    /// Throws ConfigError when the auth variable is named but unset.
    explicit HttpBackend(BackendConfig config);
    ~HttpBackend() override;

    ChatExchange complete(std::span<const ChatMessage> messages, const CompletionOptions &options = {}) override;
    std::string model_id() const override { return config_.model_id; }
    double temperature() const override { return config_.temperature; }
    bool supports_seed() const override { return true; }
    std::size_t max_in_flight() const override { return config_.max_in_flight; }
    const BackendConfig &config() const noexcept { return config_; }

private:
    struct Gate;
    BackendConfig config_;
    std::string token_;
    std::string host_;
    std::string path_;
    std::unique_ptr<Gate> gate_;
};

/// Free-function form of HttpBackend::complete.
ChatExchange complete(const BackendConfig &config, std::span<const ChatMessage> messages,
                      const CompletionOptions &options = {});

/// Answers prediction prompts with the newest value of the query window
/// ("FINAL_ANSWER: <value>") and any other prompt with deterministic filler text.
class PersistenceMock final : public ChatBackend {
public:
    explicit PersistenceMock(std::string model = "mock-persistence") : model_(std::move(model)) {}
    ChatExchange complete(std::span<const ChatMessage> messages, const CompletionOptions &options = {}) override;
    std::string model_id() const override { return model_; }
    double temperature() const override { return 0.0; }
    std::size_t max_in_flight() const override { return 4; }

private:
    std::string model_;
};

/// Replays a fixed queue of responses, then fails with "scripted-exhausted".
/// Entries equal to ScriptedMock::fail raise a BackendError instead.
class ScriptedMock final : public ChatBackend {
public:
    static constexpr std::string_view fail = "\x01" "FAIL";

    explicit ScriptedMock(std::vector<std::string> responses, std::string model = "mock-scripted");
    ChatExchange complete(std::span<const ChatMessage> messages, const CompletionOptions &options = {}) override;
    std::string model_id() const override { return model_; }
    double temperature() const override { return 0.0; }
    /// Requests seen so far, in call order.
    std::vector<std::vector<ChatMessage>> requests() const;

private:
    mutable std::mutex mutex_;
    std::deque<std::string> queue_;
    std::vector<std::vector<ChatMessage>> requests_;
    std::string model_;
};

struct CacheRecord {
    std::string key;
    std::string request_digest;
    std::string model_id;
    std::string response_text;
    std::int64_t input_tokens = 0;
    std::int64_t output_tokens = 0;
};

/// digest(model_id, temperature, seed when present, messages).
std::string cache_key(std::string_view model_id, double temperature, std::optional<std::uint64_t> seed,
                      std::span<const ChatMessage> messages);
std::string request_digest(std::span<const ChatMessage> messages);

/// Append-only line-delimited JSON response cache. Concurrent lookups are
/// allowed; appends are serialised.
class ResponseCache {
public:
    /// In-memory only.
    ResponseCache() = default;
    /// Loads existing records; a malformed line throws CacheError with its number.
    explicit ResponseCache(std::filesystem::path path);

    std::optional<CacheRecord> lookup(const std::string &key) const;
    void append(const CacheRecord &record);
    std::size_t size() const;
    const std::optional<std::filesystem::path> &path() const noexcept { return path_; }

private:
    std::optional<std::filesystem::path> path_;
    mutable std::shared_mutex mutex_;
    std::unordered_map<std::string, CacheRecord> records_;
};

/// Serves from the cache on a hit (no backend use); otherwise delegates and appends.
ChatExchange cached_complete(ResponseCache &cache, ChatBackend &backend, std::span<const ChatMessage> messages,
                             const CompletionOptions &options = {});

/// ChatBackend adaptor routing every call through cached_complete.
class CachedBackend final : public ChatBackend {
public:
    CachedBackend(ChatBackend &inner, ResponseCache &cache) : inner_(inner), cache_(cache) {}
    /// Counts only misses, i.e. calls that reached the inner backend.
    ChatExchange complete(std::span<const ChatMessage> messages, const CompletionOptions &options = {}) override {
        auto ex = cached_complete(cache_, inner_, messages, options);
        if (!ex.from_cache) count_forwarded();
        return ex;
    }
    std::string model_id() const override { return inner_.model_id(); }
    double temperature() const override { return inner_.temperature(); }
    bool supports_seed() const override { return inner_.supports_seed(); }
    std::size_t max_in_flight() const override { return inner_.max_in_flight(); }

private:
    ChatBackend &inner_;
    ResponseCache &cache_;
};

} // namespace cotpred

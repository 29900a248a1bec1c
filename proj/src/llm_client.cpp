#include "cotpred/llm_client.hpp"

#include <httplib.h>
#include <json.hpp>

#include <condition_variable>
#include <cstdlib>
#include <regex>
#include <thread>

#include "cotpred/digest.hpp"
#include "cotpred/error.hpp"
#include "cotpred/format.hpp"
#include "cotpred/prompt_format.hpp"

namespace cotpred {

using json = nlohmann::json;

namespace {

std::atomic<std::uint64_t> g_completions{0};

json messages_json(std::span<const ChatMessage> messages) {
    json arr = json::array();
    for (const auto &m : messages) arr.push_back({{"role", m.role}, {"content", m.content}});
    return arr;
}

} // namespace

std::int64_t estimate_tokens(std::string_view text) {
    return static_cast<std::int64_t>((text.size() + 3) / 4);
}

std::int64_t estimate_tokens(std::span<const ChatMessage> messages) {
    std::size_t chars = 0;
    for (const auto &m : messages) chars += m.content.size();
    return static_cast<std::int64_t>((chars + 3) / 4);
}

std::uint64_t completion_count() noexcept { return g_completions.load(); }
void reset_completion_count() noexcept { g_completions.store(0); }

void ChatBackend::count_call() noexcept {
    calls_.fetch_add(1);
    g_completions.fetch_add(1);
}

// ---------------------------------------------------------------------------
// HTTP

struct HttpBackend::Gate {
    std::mutex mutex;
    std::condition_variable cv;
    std::size_t in_flight = 0;
    std::size_t limit = 1;

    void acquire() {
        std::unique_lock lock(mutex);
        cv.wait(lock, [&] { return in_flight < limit; });
        ++in_flight;
    }
    void release() {
        {
            std::lock_guard lock(mutex);
            --in_flight;
        }
        cv.notify_one();
    }
};

HttpBackend::HttpBackend(BackendConfig config) : config_(std::move(config)), gate_(std::make_unique<Gate>()) {
    if (config_.max_retries < 0) throw ConfigError("max_retries must be >= 0");
    if (config_.timeout.count() <= 0) throw ConfigError("timeout must be positive");
    if (!config_.auth_token_env.empty()) {
        const char *token = std::getenv(config_.auth_token_env.c_str());
        if (token == nullptr) {
            throw ConfigError("auth environment variable " + config_.auth_token_env + " is not set");
        }
        token_ = token;
    }
    static const std::regex url_re(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(config_.base_url, m, url_re)) throw ConfigError("invalid base_url '" + config_.base_url + "'");
    host_ = m[1].str();
    path_ = m[2].matched ? m[2].str() : std::string();
    while (!path_.empty() && path_.back() == '/') path_.pop_back();
    path_ += "/chat/completions";
#ifndef COTPRED_HTTPS
    if (host_.starts_with("https://")) throw ConfigError("built without HTTPS support");
#endif
    gate_->limit = std::max<std::size_t>(1, config_.max_in_flight);
}

HttpBackend::~HttpBackend() = default;

ChatExchange HttpBackend::complete(std::span<const ChatMessage> messages, const CompletionOptions &options) {
    if (messages.empty()) throw ArgumentError("completion needs at least one message");

    json body = {{"model", config_.model_id},
                 {"messages", messages_json(messages)},
                 {"temperature", config_.temperature},
                 {"max_tokens", config_.max_output_tokens}};
    if (options.seed) body["seed"] = *options.seed;
    const std::string payload = body.dump();

    httplib::Headers headers;
    if (!token_.empty()) headers.emplace("Authorization", "Bearer " + token_);

    gate_->acquire();
    struct Release {
        Gate &g;
        ~Release() { g.release(); }
    } release{*gate_};

    count_call();
    const auto started = std::chrono::steady_clock::now();
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - secs);

    int last_status = 0;
    std::string last_error;
    auto backoff = config_.initial_backoff;
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(backoff);
            backoff *= 2;
        }
        httplib::Client client(host_);
        client.set_connection_timeout(secs.count(), usecs.count());
        client.set_read_timeout(secs.count(), usecs.count());
        client.set_write_timeout(secs.count(), usecs.count());
        auto res = client.Post(path_, headers, payload, "application/json");
        if (!res) {
            last_status = 0;
            last_error = "transport failure: " + httplib::to_string(res.error());
            continue;
        }
        last_status = res->status;
        if (res->status == 429 || res->status >= 500) {
            last_error = "transient HTTP status";
            continue;
        }
        if (res->status != 200) throw BackendError(res->status, "request rejected: " + res->body.substr(0, 200));

        json reply;
        try {
            reply = json::parse(res->body);
        } catch (const json::exception &e) {
            throw BackendError(res->status, std::string("malformed response body: ") + e.what());
        }
        ChatExchange ex;
        ex.request_messages.assign(messages.begin(), messages.end());
        try {
            ex.response_text = reply.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const json::exception &e) {
            throw BackendError(res->status, std::string("response lacks choices[0].message.content: ") + e.what());
        }
        ex.input_tokens = estimate_tokens(messages);
        ex.output_tokens = estimate_tokens(ex.response_text);
        if (auto it = reply.find("usage"); it != reply.end() && it->is_object()) {
            ex.input_tokens = it->value("prompt_tokens", ex.input_tokens);
            ex.output_tokens = it->value("completion_tokens", ex.output_tokens);
        }
        ex.latency = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - started);
        return ex;
    }
    throw BackendError(last_status, "retries exhausted after " + std::to_string(config_.max_retries + 1) +
                                        " attempts (" + last_error + ")");
}

ChatExchange complete(const BackendConfig &config, std::span<const ChatMessage> messages,
                      const CompletionOptions &options) {
    HttpBackend backend(config);
    return backend.complete(messages, options);
}

// ---------------------------------------------------------------------------
// Mocks

namespace {

/// Last element of the bracketed list after the final query throughput line.
std::optional<std::string> query_newest_value(std::string_view prompt) {
    auto q = prompt.rfind(prompt_format::query_header);
    if (q == std::string_view::npos) return std::nullopt;
    auto label = prompt.find(prompt_format::throughput_label, q);
    if (label == std::string_view::npos) return std::nullopt;
    auto open = prompt.find('[', label);
    auto close = prompt.find(']', open == std::string_view::npos ? label : open);
    if (open == std::string_view::npos || close == std::string_view::npos) return std::nullopt;
    auto list = prompt.substr(open + 1, close - open - 1);
    auto comma = list.rfind(',');
    auto last = trim(comma == std::string_view::npos ? list : list.substr(comma + 1));
    if (last.empty()) return std::nullopt;
    return std::string(last);
}

ChatExchange mock_exchange(std::span<const ChatMessage> messages, std::string response) {
    ChatExchange ex;
    ex.request_messages.assign(messages.begin(), messages.end());
    ex.input_tokens = estimate_tokens(messages);
    ex.output_tokens = estimate_tokens(response);
    ex.response_text = std::move(response);
    return ex;
}

} // namespace

ChatExchange PersistenceMock::complete(std::span<const ChatMessage> messages, const CompletionOptions &) {
    if (messages.empty()) throw ArgumentError("completion needs at least one message");
    count_call();
    const std::string &prompt = messages.back().content;
    if (auto value = query_newest_value(prompt)) {
        return mock_exchange(messages, std::string(prompt_format::answer_tag) + " " + *value);
    }
    std::string all;
    for (const auto &m : messages) all += m.role + "\n" + m.content + "\n";
    return mock_exchange(messages, model_ + " response " + sha256_hex(all).substr(0, 16));
}

ScriptedMock::ScriptedMock(std::vector<std::string> responses, std::string model)
    : queue_(responses.begin(), responses.end()), model_(std::move(model)) {}

ChatExchange ScriptedMock::complete(std::span<const ChatMessage> messages, const CompletionOptions &) {
    if (messages.empty()) throw ArgumentError("completion needs at least one message");
    std::string next;
    {
        std::lock_guard lock(mutex_);
        requests_.emplace_back(messages.begin(), messages.end());
        count_call();
        if (queue_.empty()) throw BackendError(0, "scripted-exhausted");
        next = std::move(queue_.front());
        queue_.pop_front();
    }
    if (next == fail) throw BackendError(0, "scripted failure");
    return mock_exchange(messages, std::move(next));
}

std::vector<std::vector<ChatMessage>> ScriptedMock::requests() const {
    std::lock_guard lock(mutex_);
    return requests_;
}

// ---------------------------------------------------------------------------
// Cache

std::string request_digest(std::span<const ChatMessage> messages) { return sha256_hex(messages_json(messages).dump()); }

std::string cache_key(std::string_view model_id, double temperature, std::optional<std::uint64_t> seed,
                      std::span<const ChatMessage> messages) {
    json key = {{"model", model_id}, {"temperature", format_roundtrip(temperature)}, {"messages", messages_json(messages)}};
    if (seed) key["seed"] = *seed;
    return sha256_hex(key.dump());
}

ResponseCache::ResponseCache(std::filesystem::path path) : path_(std::move(path)) {
    std::ifstream in(*path_, std::ios::binary);
    if (!in) return; // created on first append
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < content.size()) {
        ++line_no;
        auto end = content.find('\n', pos);
        const bool terminated = end != std::string::npos;
        std::string_view line(content.data() + pos, (terminated ? end : content.size()) - pos);
        pos = terminated ? end + 1 : content.size();
        if (trim(line).empty()) continue;
        try {
            auto j = json::parse(line);
            CacheRecord rec{j.at("key").get<std::string>(),           j.at("request_digest").get<std::string>(),
                            j.value("model_id", std::string()),       j.at("response_text").get<std::string>(),
                            j.at("input_tokens").get<std::int64_t>(), j.at("output_tokens").get<std::int64_t>()};
            records_.insert_or_assign(rec.key, std::move(rec));
        } catch (const json::exception &e) {
            throw CacheError(line_no, std::string(terminated ? "malformed record: " : "truncated final record: ") +
                                          e.what());
        }
    }
}

std::optional<CacheRecord> ResponseCache::lookup(const std::string &key) const {
    std::shared_lock lock(mutex_);
    auto it = records_.find(key);
    if (it == records_.end()) return std::nullopt;
    return it->second;
}

void ResponseCache::append(const CacheRecord &record) {
    std::unique_lock lock(mutex_);
    if (path_) {
        json j = {{"key", record.key},
                  {"request_digest", record.request_digest},
                  {"model_id", record.model_id},
                  {"response_text", record.response_text},
                  {"input_tokens", record.input_tokens},
                  {"output_tokens", record.output_tokens}};
        std::ofstream out(*path_, std::ios::app | std::ios::binary);
        if (!out) throw IoError("cannot append to cache file " + path_->string());
        out << j.dump() << '\n';
        out.flush();
        if (!out) throw IoError("failed writing cache file " + path_->string());
    }
    records_.insert_or_assign(record.key, record);
}

std::size_t ResponseCache::size() const {
    std::shared_lock lock(mutex_);
    return records_.size();
}

ChatExchange cached_complete(ResponseCache &cache, ChatBackend &backend, std::span<const ChatMessage> messages,
                             const CompletionOptions &options) {
    const auto seed = backend.supports_seed() ? options.seed : std::nullopt;
    const auto key = cache_key(backend.model_id(), backend.temperature(), seed, messages);
    if (auto hit = cache.lookup(key)) {
        ChatExchange ex;
        ex.request_messages.assign(messages.begin(), messages.end());
        ex.response_text = hit->response_text;
        ex.input_tokens = hit->input_tokens;
        ex.output_tokens = hit->output_tokens;
        ex.from_cache = true;
        return ex;
    }
    auto ex = backend.complete(messages, options);
    cache.append({key, request_digest(messages), backend.model_id(), ex.response_text, ex.input_tokens,
                  ex.output_tokens});
    return ex;
}

} // namespace cotpred

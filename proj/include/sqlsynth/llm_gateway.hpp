#pragma once

#include <nlohmann/json.hpp>

#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace sqlsynth {

enum class Purpose {
    generate_sql,
    sql_to_text,
    judge,
    repair,
    reasoning,
    keywords,
    column_filter,
    translate_candidates,
};

std::string to_string(Purpose p);

// 0.7 for generation-class purposes, 0.0 for judging and filtering.
double default_temperature(Purpose p);

struct LlmRequest {
    std::string template_id;
    std::string rendered_prompt;
    double temperature = 0.0;
    int max_tokens = 2048;
    Purpose purpose = Purpose::generate_sql;

    void validate() const;  // throws std::invalid_argument
};

enum class FinishReason { complete, length, error };

struct Usage {
    int prompt_tokens = 0;
    int completion_tokens = 0;
};

struct LlmResponse {
    std::string text;
    FinishReason finish_reason = FinishReason::complete;
    Usage usage;
};

class LlmError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ReplayMiss : public LlmError {
public:
    using LlmError::LlmError;
};

// Raised by providers; `retryable` drives the gateway's backoff loop.
class ProviderError : public LlmError {
public:
    ProviderError(const std::string& message, int status, bool retryable)
        : LlmError(message), status_(status), retryable_(retryable) {}
    int status() const noexcept { return status_; }
    bool retryable() const noexcept { return retryable_; }

private:
    int status_;
    bool retryable_;
};

std::string replay_key(std::string_view template_id, std::string_view rendered_prompt, double temperature);

// Recorded responses keyed by replay_key, consumed in recording order.
class ReplayStore {
public:
    struct Entry {
        std::string key;
        std::string request_digest;
        std::string response_text;
    };

    static std::shared_ptr<ReplayStore> load(const std::filesystem::path& path);  // missing file -> empty store
    // Entries sorted by key, recording order kept within a key.
    void save(const std::filesystem::path& path) const;

    void append(const LlmRequest& request, const std::string& response_text);
    // Next unconsumed response for the key, or nullopt.
    std::optional<std::string> next(const std::string& key);
    void rewind();

    std::size_t size() const;
    std::size_t remaining(const std::string& key) const;

private:
    mutable std::mutex mu_;
    std::map<std::string, std::vector<Entry>> entries_;
    std::map<std::string, std::size_t> cursor_;
};

class LlmProvider {
public:
    virtual ~LlmProvider() = default;
    virtual LlmResponse call(const LlmRequest& request) = 0;
};

struct HttpProviderConfig {
    std::string base_url;  // e.g. https://api.example.com/v1
    std::string api_key;
    std::string model;
    std::chrono::seconds timeout{120};

    // Reads SQLSYNTH_LLM_BASE_URL, SQLSYNTH_LLM_API_KEY and SQLSYNTH_LLM_MODEL.
    static HttpProviderConfig from_env();
};

// OpenAI-compatible /chat/completions client.
class HttpProvider : public LlmProvider {
public:
    explicit HttpProvider(HttpProviderConfig config);
    LlmResponse call(const LlmRequest& request) override;

private:
    HttpProviderConfig config_;
};

// Adapts a callable; handy for scripted and fake providers.
class FunctionProvider : public LlmProvider {
public:
    explicit FunctionProvider(std::function<LlmResponse(const LlmRequest&)> fn) : fn_(std::move(fn)) {}
    LlmResponse call(const LlmRequest& request) override { return fn_(request); }

private:
    std::function<LlmResponse(const LlmRequest&)> fn_;
};

enum class GatewayMode {
    replay,  // store only; a miss is an error
    record,  // store first, provider on a miss, then record
    live,    // provider always; records when a store is attached
};

GatewayMode gateway_mode_from_string(std::string_view s);
std::string to_string(GatewayMode m);

struct GatewayConfig {
    GatewayMode mode = GatewayMode::replay;
    int max_attempts = 3;
    std::chrono::milliseconds initial_backoff{500};
    std::size_t max_in_flight = 4;
    double requests_per_second = 4.0;  // token refill rate; <= 0 disables the limiter
    double burst = 4.0;
};

// Thread-safe front door for all model calls.
class LlmGateway {
public:
    LlmGateway(GatewayConfig config, std::shared_ptr<ReplayStore> store, std::shared_ptr<LlmProvider> provider);

    LlmResponse complete(const LlmRequest& request);

    std::size_t calls() const;
    std::size_t retries() const;
    std::size_t provider_calls() const;
    const GatewayConfig& config() const { return config_; }
    const std::shared_ptr<ReplayStore>& store() const { return store_; }

    // Retry messages, in order; cleared by the caller when consumed.
    std::vector<std::string> take_log();

private:
    LlmResponse call_provider(const LlmRequest& request);
    void acquire_slot();
    void release_slot();
    void acquire_token();

    GatewayConfig config_;
    std::shared_ptr<ReplayStore> store_;
    std::shared_ptr<LlmProvider> provider_;

    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::size_t in_flight_ = 0;
    double tokens_;
    std::chrono::steady_clock::time_point last_refill_;
    std::size_t calls_ = 0;
    std::size_t retries_ = 0;
    std::size_t provider_calls_ = 0;
    std::vector<std::string> log_;
};

// ---------------------------------------------------------------------------
// Structured output parsing.

class ResponseFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TaggedOutput {
    std::string reasoning;
    std::string answer;
    bool reasoning_missing = false;
};

// First <reasoning>…</reasoning> and <answer>…</answer>; code fences inside
// the answer are stripped. Throws ResponseFormatError without an answer.
TaggedOutput parse_tagged(std::string_view text);
std::string format_tagged(std::string_view reasoning, std::string_view answer);

std::string strip_code_fences(std::string_view text);

// First JSON object embedded in `text`. `required_keys` must be present and
// each of `string_list_keys` must hold a list of strings.
nlohmann::json parse_json_object(std::string_view text, const std::vector<std::string>& required_keys,
                                 const std::vector<std::string>& string_list_keys = {});

}  // namespace sqlsynth

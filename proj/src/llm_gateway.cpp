#include "sqlsynth/llm_gateway.hpp"

#include "sqlsynth/text_util.hpp"

#include <httplib.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <thread>

namespace sqlsynth {

std::string to_string(Purpose p) {
    switch (p) {
        case Purpose::generate_sql: return "generate_sql";
        case Purpose::sql_to_text: return "sql_to_text";
        case Purpose::judge: return "judge";
        case Purpose::repair: return "repair";
        case Purpose::reasoning: return "reasoning";
        case Purpose::keywords: return "keywords";
        case Purpose::column_filter: return "column_filter";
        case Purpose::translate_candidates: return "translate_candidates";
    }
    return "unknown";
}

double default_temperature(Purpose p) {
    switch (p) {
        case Purpose::judge:
        case Purpose::column_filter:
        case Purpose::keywords: return 0.0;
        default: return 0.7;
    }
}

void LlmRequest::validate() const {
    if (rendered_prompt.empty()) throw std::invalid_argument("empty prompt");
    if (!(temperature >= 0.0 && temperature <= 2.0)) throw std::invalid_argument("temperature outside [0, 2]");
    if (max_tokens <= 0) throw std::invalid_argument("max_tokens must be positive");
}

std::string replay_key(std::string_view template_id, std::string_view rendered_prompt, double temperature) {
    char temp[32];
    std::snprintf(temp, sizeof temp, "%.3f", temperature);
    std::string material;
    material.reserve(template_id.size() + rendered_prompt.size() + 16);
    material.append(template_id).append(1, '\x1f').append(rendered_prompt).append(1, '\x1f').append(temp);
    return sha256_hex(material);
}

// ---------------------------------------------------------------------------

std::shared_ptr<ReplayStore> ReplayStore::load(const std::filesystem::path& path) {
    auto store = std::make_shared<ReplayStore>();
    std::ifstream in(path, std::ios::binary);
    if (!in) return store;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            Entry e{j.at("key").get<std::string>(), j.at("request_digest").get<std::string>(),
                    j.at("response_text").get<std::string>()};
            store->entries_[e.key].push_back(std::move(e));
        } catch (const nlohmann::json::exception& e) {
            throw LlmError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return store;
}

void ReplayStore::save(const std::filesystem::path& path) const {
    std::lock_guard lock(mu_);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw LlmError("cannot write replay store " + path.string());
    for (const auto& [_, list] : entries_) {
        for (const auto& e : list) {
            nlohmann::ordered_json j;
            j["key"] = e.key;
            j["request_digest"] = e.request_digest;
            j["response_text"] = e.response_text;
            out << j.dump() << '\n';
        }
    }
}

void ReplayStore::append(const LlmRequest& request, const std::string& response_text) {
    const auto key = replay_key(request.template_id, request.rendered_prompt, request.temperature);
    std::lock_guard lock(mu_);
    entries_[key].push_back({key, sha256_hex(to_string(request.purpose) + "\n" + request.rendered_prompt), response_text});
}

std::optional<std::string> ReplayStore::next(const std::string& key) {
    std::lock_guard lock(mu_);
    const auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    auto& pos = cursor_[key];
    if (pos >= it->second.size()) return std::nullopt;
    return it->second[pos++].response_text;
}

void ReplayStore::rewind() {
    std::lock_guard lock(mu_);
    cursor_.clear();
}

std::size_t ReplayStore::size() const {
    std::lock_guard lock(mu_);
    std::size_t n = 0;
    for (const auto& [_, list] : entries_) n += list.size();
    return n;
}

std::size_t ReplayStore::remaining(const std::string& key) const {
    std::lock_guard lock(mu_);
    const auto it = entries_.find(key);
    if (it == entries_.end()) return 0;
    const auto c = cursor_.find(key);
    const std::size_t used = c == cursor_.end() ? 0 : c->second;
    return it->second.size() - used;
}

// ---------------------------------------------------------------------------

HttpProviderConfig HttpProviderConfig::from_env() {
    HttpProviderConfig c;
    auto get = [](const char* name) {
        const char* v = std::getenv(name);
        return v ? std::string(v) : std::string();
    };
    c.base_url = get("SQLSYNTH_LLM_BASE_URL");
    c.api_key = get("SQLSYNTH_LLM_API_KEY");
    c.model = get("SQLSYNTH_LLM_MODEL");
    return c;
}

HttpProvider::HttpProvider(HttpProviderConfig config) : config_(std::move(config)) {
    if (config_.base_url.empty()) throw LlmError("provider base URL is not configured");
    if (config_.model.empty()) throw LlmError("provider model is not configured");
}

LlmResponse HttpProvider::call(const LlmRequest& request) {
    // Split "scheme://host[:port]/prefix" into the client origin and the path prefix.
    const auto scheme_end = config_.base_url.find("://");
    const auto path_start =
        config_.base_url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
    const auto origin = config_.base_url.substr(0, path_start);
    auto prefix = path_start == std::string::npos ? std::string() : config_.base_url.substr(path_start);
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();

    httplib::Client client(origin);
    client.set_connection_timeout(std::chrono::seconds(10));
    client.set_read_timeout(config_.timeout);
    httplib::Headers headers;
    if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

    nlohmann::json body;
    body["model"] = config_.model;
    body["messages"] = nlohmann::json::array({{{"role", "user"}, {"content", request.rendered_prompt}}});
    body["temperature"] = request.temperature;
    body["max_tokens"] = request.max_tokens;

    auto res = client.Post(prefix + "/chat/completions", headers, body.dump(), "application/json");
    if (!res) throw ProviderError("HTTP transport error: " + httplib::to_string(res.error()), 0, true);
    if (res->status != 200) {
        const bool retryable = res->status == 429 || res->status >= 500;
        throw ProviderError("provider returned HTTP " + std::to_string(res->status), res->status, retryable);
    }
    LlmResponse out;
    try {
        const auto j = nlohmann::json::parse(res->body);
        const auto& choice = j.at("choices").at(0);
        out.text = choice.at("message").at("content").get<std::string>();
        const auto reason = choice.value("finish_reason", std::string("stop"));
        out.finish_reason = reason == "length" ? FinishReason::length : FinishReason::complete;
        if (j.contains("usage")) {
            out.usage.prompt_tokens = j["usage"].value("prompt_tokens", 0);
            out.usage.completion_tokens = j["usage"].value("completion_tokens", 0);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ProviderError(std::string("malformed provider response: ") + e.what(), res->status, false);
    }
    return out;
}

// ---------------------------------------------------------------------------

GatewayMode gateway_mode_from_string(std::string_view s) {
    if (s == "replay") return GatewayMode::replay;
    if (s == "record") return GatewayMode::record;
    if (s == "live") return GatewayMode::live;
    throw std::invalid_argument("unknown gateway mode: " + std::string(s));
}

std::string to_string(GatewayMode m) {
    switch (m) {
        case GatewayMode::replay: return "replay";
        case GatewayMode::record: return "record";
        case GatewayMode::live: return "live";
    }
    return "unknown";
}

LlmGateway::LlmGateway(GatewayConfig config, std::shared_ptr<ReplayStore> store, std::shared_ptr<LlmProvider> provider)
    : config_(config),
      store_(std::move(store)),
      provider_(std::move(provider)),
      tokens_(config.burst),
      last_refill_(std::chrono::steady_clock::now()) {
    if (config_.max_attempts < 1) throw std::invalid_argument("max_attempts must be >= 1");
    if (config_.max_in_flight < 1) throw std::invalid_argument("max_in_flight must be >= 1");
    if (config_.mode != GatewayMode::live && !store_) throw std::invalid_argument("replay and record modes need a store");
    if (config_.mode != GatewayMode::replay && !provider_) throw std::invalid_argument("record and live modes need a provider");
}

LlmResponse LlmGateway::complete(const LlmRequest& request) {
    request.validate();
    {
        std::lock_guard lock(mu_);
        ++calls_;
    }
    const auto key = replay_key(request.template_id, request.rendered_prompt, request.temperature);
    if (config_.mode != GatewayMode::live) {
        if (auto hit = store_->next(key)) return {std::move(*hit), FinishReason::complete, {}};
        if (config_.mode == GatewayMode::replay) {
            throw ReplayMiss("replay miss for key " + key.substr(0, 12) + " (template " + request.template_id + ")");
        }
    }
    auto response = call_provider(request);
    if (store_) {
        store_->append(request, response.text);
        store_->next(key);  // keep the cursor in step with what was handed out
    }
    return response;
}

LlmResponse LlmGateway::call_provider(const LlmRequest& request) {
    for (int attempt = 1;; ++attempt) {
        acquire_token();
        acquire_slot();
        try {
            {
                std::lock_guard lock(mu_);
                ++provider_calls_;
            }
            auto response = provider_->call(request);
            release_slot();
            return response;
        } catch (const ProviderError& e) {
            release_slot();
            if (!e.retryable() || attempt >= config_.max_attempts) {
                if (e.status() == 429) {
                    throw ProviderError("rate limit persisted after " + std::to_string(attempt) + " attempts", 429,
                                        false);
                }
                throw;
            }
            const auto delay = config_.initial_backoff * (1 << (attempt - 1));
            {
                std::lock_guard lock(mu_);
                ++retries_;
                log_.push_back("retry " + std::to_string(attempt) + " after: " + e.what());
            }
            std::this_thread::sleep_for(delay);
        } catch (...) {
            release_slot();
            throw;
        }
    }
}

void LlmGateway::acquire_slot() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return in_flight_ < config_.max_in_flight; });
    ++in_flight_;
}

void LlmGateway::release_slot() {
    {
        std::lock_guard lock(mu_);
        --in_flight_;
    }
    cv_.notify_one();
}

void LlmGateway::acquire_token() {
    if (config_.requests_per_second <= 0) return;
    std::unique_lock lock(mu_);
    while (true) {
        const auto now = std::chrono::steady_clock::now();
        const std::chrono::duration<double> elapsed = now - last_refill_;
        tokens_ = std::min(config_.burst, tokens_ + elapsed.count() * config_.requests_per_second);
        last_refill_ = now;
        if (tokens_ >= 1.0) {
            tokens_ -= 1.0;
            return;
        }
        const auto wait = std::chrono::duration<double>((1.0 - tokens_) / config_.requests_per_second);
        cv_.wait_for(lock, std::chrono::duration_cast<std::chrono::microseconds>(wait));
    }
}

std::size_t LlmGateway::calls() const {
    std::lock_guard lock(mu_);
    return calls_;
}

std::size_t LlmGateway::retries() const {
    std::lock_guard lock(mu_);
    return retries_;
}

std::size_t LlmGateway::provider_calls() const {
    std::lock_guard lock(mu_);
    return provider_calls_;
}

std::vector<std::string> LlmGateway::take_log() {
    std::lock_guard lock(mu_);
    return std::exchange(log_, {});
}

// ---------------------------------------------------------------------------

namespace {

std::optional<std::string> tag_body(std::string_view text, std::string_view tag) {
    const std::string open = "<" + std::string(tag) + ">";
    const std::string close = "</" + std::string(tag) + ">";
    const auto start = text.find(open);
    if (start == std::string_view::npos) return std::nullopt;
    const auto body = start + open.size();
    const auto end = text.find(close, body);
    if (end == std::string_view::npos) return std::nullopt;
    return std::string(text.substr(body, end - body));
}

}  // namespace

std::string strip_code_fences(std::string_view text) {
    auto s = trim(text);
    if (s.rfind("```", 0) != 0) return s;
    const auto first_nl = s.find('\n');
    if (first_nl == std::string::npos) return s;
    auto inner = s.substr(first_nl + 1);
    const auto close = inner.rfind("```");
    if (close != std::string::npos) inner = inner.substr(0, close);
    return trim(inner);
}

TaggedOutput parse_tagged(std::string_view text) {
    TaggedOutput out;
    auto answer = tag_body(text, "answer");
    if (!answer) throw ResponseFormatError("response has no <answer>...</answer> block");
    out.answer = strip_code_fences(*answer);
    if (auto reasoning = tag_body(text, "reasoning")) {
        out.reasoning = trim(*reasoning);
    } else {
        out.reasoning_missing = true;
    }
    return out;
}

std::string format_tagged(std::string_view reasoning, std::string_view answer) {
    std::string out;
    if (!reasoning.empty()) out.append("<reasoning>\n").append(reasoning).append("\n</reasoning>\n");
    out.append("<answer>\n").append(answer).append("\n</answer>");
    return out;
}

nlohmann::json parse_json_object(std::string_view text, const std::vector<std::string>& required_keys,
                                 const std::vector<std::string>& string_list_keys) {
    std::optional<nlohmann::json> found;
    for (std::size_t start = text.find('{'); start != std::string_view::npos && !found;
         start = text.find('{', start + 1)) {
        int depth = 0;
        bool in_string = false;
        bool escaped = false;
        for (std::size_t i = start; i < text.size(); ++i) {
            const char c = text[i];
            if (in_string) {
                if (escaped) {
                    escaped = false;
                } else if (c == '\\') {
                    escaped = true;
                } else if (c == '"') {
                    in_string = false;
                }
                continue;
            }
            if (c == '"') {
                in_string = true;
            } else if (c == '{') {
                ++depth;
            } else if (c == '}' && --depth == 0) {
                auto parsed = nlohmann::json::parse(text.substr(start, i - start + 1), nullptr, false);
                if (!parsed.is_discarded() && parsed.is_object()) found = std::move(parsed);
                break;
            }
        }
    }
    if (!found) throw ResponseFormatError("no JSON object found in response");
    for (const auto& key : required_keys) {
        if (!found->contains(key)) throw ResponseFormatError("JSON response lacks key \"" + key + "\"");
    }
    for (const auto& key : string_list_keys) {
        if (!found->contains(key)) continue;
        const auto& v = (*found)[key];
        if (!v.is_array()) throw ResponseFormatError("\"" + key + "\" must be a list of strings");
        for (const auto& item : v) {
            if (!item.is_string()) throw ResponseFormatError("\"" + key + "\" must be a list of strings");
        }
    }
    return *found;
}

}  // namespace sqlsynth

#pragma once

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

namespace taar::gateway {

enum class Role { reasoner, judge, policy };

inline std::string_view role_name(Role r) {
    switch (r) {
        case Role::reasoner: return "reasoner";
        case Role::judge: return "judge";
        case Role::policy: return "policy";
    }
    return "reasoner";
}

struct EndpointConfig {
    std::string base_url;          // absolute, e.g. http://127.0.0.1:8080
    std::string model_name;
    std::string api_key_env;       // env var holding the credential; empty = none
    double timeout_s = 120.0;
    int max_retries = 3;
    Role role = Role::reasoner;
    int backoff_ms = 250;          // base for exponential backoff
};

struct DecodingConfig {
    double temperature = 0.7;
    int max_tokens = 32768;
    std::optional<double> top_p;
    std::optional<long long> seed;
};

struct ChatMessage {
    std::string role;
    std::string content;
};

inline ChatMessage user_message(std::string content) { return {"user", std::move(content)}; }

enum class FinishReason { stop, length, error };

inline std::string_view finish_reason_name(FinishReason r) {
    switch (r) {
        case FinishReason::stop: return "stop";
        case FinishReason::length: return "length";
        case FinishReason::error: return "error";
    }
    return "stop";
}

enum class ErrorCategory { network, http_status, malformed, timeout };

struct GatewayError {
    ErrorCategory category;
    std::string message;
    int http_status = 0;
};

struct GenerationResult {
    std::string text;
    long long prompt_tokens = 0;
    long long completion_tokens = 0;
    FinishReason finish_reason = FinishReason::stop;
    long long latency_ms = 0;
    int attempts = 0;
    std::optional<GatewayError> error;

    bool ok() const { return !error.has_value(); }
};

namespace detail {

struct ParsedUrl {
    std::string scheme_host_port; // e.g. "http://127.0.0.1:8080"
    std::string path_prefix;      // e.g. "" or "/v1"
};

inline ParsedUrl split_base_url(const std::string& base_url) {
    ParsedUrl out;
    std::size_t scheme_end = base_url.find("://");
    std::size_t path_start = scheme_end == std::string::npos
                                 ? base_url.find('/')
                                 : base_url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) {
        out.scheme_host_port = base_url;
    } else {
        out.scheme_host_port = base_url.substr(0, path_start);
        out.path_prefix = base_url.substr(path_start);
        while (!out.path_prefix.empty() && out.path_prefix.back() == '/') {
            out.path_prefix.pop_back();
        }
    }
    return out;
}

// Completions path: append /v1/chat/completions unless the base URL already
// carries the /v1 prefix.
inline std::string completions_path(const ParsedUrl& url) {
    if (url.path_prefix.size() >= 3 &&
        url.path_prefix.compare(url.path_prefix.size() - 3, 3, "/v1") == 0) {
        return url.path_prefix + "/chat/completions";
    }
    return url.path_prefix + "/v1/chat/completions";
}

inline bool retryable_status(int status) {
    return status == 429 || (status >= 500 && status < 600);
}

inline long long jittered_backoff_ms(int backoff_ms, int attempt) {
    static thread_local std::mt19937_64 rng{std::random_device{}()};
    const long long base = static_cast<long long>(backoff_ms) << attempt;
    return base + static_cast<long long>(rng() % static_cast<std::uint64_t>(backoff_ms + 1));
}

inline ErrorCategory categorize(httplib::Error err) {
    switch (err) {
        case httplib::Error::ConnectionTimeout:
        case httplib::Error::Read: // read failures cover server-side stalls
            return ErrorCategory::timeout;
        default:
            return ErrorCategory::network;
    }
}

} // namespace detail

inline nlohmann::ordered_json build_request_body(const EndpointConfig& endpoint,
                                                 const std::vector<ChatMessage>& messages,
                                                 const DecodingConfig& decoding) {
    nlohmann::ordered_json body;
    body["model"] = endpoint.model_name;
    auto msgs = nlohmann::ordered_json::array();
    for (const auto& m : messages) {
        msgs.push_back({{"role", m.role}, {"content", m.content}});
    }
    body["messages"] = std::move(msgs);
    body["temperature"] = decoding.temperature;
    body["max_tokens"] = decoding.max_tokens;
    if (decoding.top_p) body["top_p"] = *decoding.top_p;
    if (decoding.seed) body["seed"] = *decoding.seed;
    return body;
}

// One chat-completions call with retries. Transient failures (network,
// timeout, 5xx, 429) are retried up to max_retries with exponential backoff;
// an exhausted budget yields an error result, never an exception.
inline GenerationResult generate(const EndpointConfig& endpoint,
                                 const std::vector<ChatMessage>& messages,
                                 const DecodingConfig& decoding = {}) {
    using Clock = std::chrono::steady_clock;
    const auto url = detail::split_base_url(endpoint.base_url);
    const std::string path = detail::completions_path(url);
    const std::string body = build_request_body(endpoint, messages, decoding).dump();

    httplib::Headers headers = {{"Content-Type", "application/json"}};
    if (!endpoint.api_key_env.empty()) {
        if (const char* key = std::getenv(endpoint.api_key_env.c_str())) {
            headers.emplace("Authorization", std::string("Bearer ") + key);
        }
    }

    GenerationResult result;
    const auto start = Clock::now();
    std::optional<GatewayError> last_error;

    for (int attempt = 0; attempt <= endpoint.max_retries; ++attempt) {
        result.attempts = attempt + 1;
        if (attempt > 0) {
            std::this_thread::sleep_for(
                std::chrono::milliseconds(detail::jittered_backoff_ms(endpoint.backoff_ms, attempt - 1)));
        }

        httplib::Client client(url.scheme_host_port);
        const auto timeout = std::chrono::duration<double>(endpoint.timeout_s);
        client.set_connection_timeout(std::chrono::duration_cast<std::chrono::milliseconds>(timeout));
        client.set_read_timeout(std::chrono::duration_cast<std::chrono::milliseconds>(timeout));
        client.set_write_timeout(std::chrono::duration_cast<std::chrono::milliseconds>(timeout));

        auto res = client.Post(path, headers, body, "application/json");
        if (!res) {
            last_error = GatewayError{detail::categorize(res.error()), httplib::to_string(res.error())};
            continue; // transient by construction
        }
        if (res->status < 200 || res->status >= 300) {
            last_error = GatewayError{ErrorCategory::http_status,
                                      "HTTP " + std::to_string(res->status), res->status};
            if (detail::retryable_status(res->status)) continue;
            break;
        }

        nlohmann::json j;
        try {
            j = nlohmann::json::parse(res->body);
            const auto& choice = j.at("choices").at(0);
            result.text = choice.at("message").at("content").get<std::string>();
            const std::string finish = choice.value("finish_reason", "stop");
            result.finish_reason =
                finish == "length" ? FinishReason::length : FinishReason::stop;
            if (j.contains("usage")) {
                result.prompt_tokens = j["usage"].value("prompt_tokens", 0LL);
                result.completion_tokens = j["usage"].value("completion_tokens", 0LL);
            }
        } catch (const std::exception& e) {
            last_error = GatewayError{ErrorCategory::malformed,
                                      std::string("malformed response body: ") + e.what()};
            break;
        }
        result.latency_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                Clock::now() - start)
                                .count();
        return result;
    }

    result.text.clear();
    result.prompt_tokens = 0;
    result.completion_tokens = 0;
    result.finish_reason = FinishReason::error;
    result.error = last_error.value_or(
        GatewayError{ErrorCategory::network, "request failed with no recorded error"});
    result.latency_ms =
        std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - start).count();
    return result;
}

struct BatchRequest {
    std::vector<ChatMessage> messages;
    DecodingConfig decoding;
};

// Fan-out with bounded concurrency: at most max_in_flight requests are
// outstanding at any instant and results come back in request order. Each
// element fails independently; a failed request is an error result in place.
inline std::vector<GenerationResult> generate_batch(const std::vector<BatchRequest>& requests,
                                                    const EndpointConfig& endpoint,
                                                    int max_in_flight) {
    if (max_in_flight < 1) throw std::invalid_argument("max_in_flight must be >= 1");
    std::vector<GenerationResult> results(requests.size());
    if (requests.empty()) return results;

    std::atomic<std::size_t> next{0};
    const std::size_t workers =
        std::min<std::size_t>(static_cast<std::size_t>(max_in_flight), requests.size());
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= requests.size()) return;
                results[i] = generate(endpoint, requests[i].messages, requests[i].decoding);
            }
        });
    }
    for (auto& t : pool) t.join();
    return results;
}

} // namespace taar::gateway

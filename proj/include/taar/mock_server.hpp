#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

namespace taar::mock {

// Scripted chat-completions endpoint for deterministic tests: a scenario
// table maps prompt fingerprints to ordered responses (with token counts and
// failure injections), and every request is recorded in a transcript.

struct MockResponse {
    enum class Fail { none, http_503, http_404, malformed, timeout, drop };

    std::string text;
    long long prompt_tokens = -1;     // -1: derive from request length
    long long completion_tokens = -1; // -1: derive from text length
    Fail fail = Fail::none;
    int delay_ms = 0;

    static MockResponse failure(Fail kind, int delay_ms = 0) {
        MockResponse r;
        r.fail = kind;
        r.delay_ms = delay_ms;
        return r;
    }
};

struct Scenario {
    std::string id;
    std::vector<std::string> contains;     // every fingerprint must appear in the prompt
    std::vector<std::string> not_contains; // none of these may appear
    std::vector<MockResponse> responses;   // consumed in order
    bool repeat_last = false;              // keep serving the final response after exhaustion

    bool matches(const std::string& prompt) const {
        for (const auto& s : contains) {
            if (prompt.find(s) == std::string::npos) return false;
        }
        for (const auto& s : not_contains) {
            if (prompt.find(s) != std::string::npos) return false;
        }
        return true;
    }
};

enum class UnmatchedBehavior { not_found, fallback };

struct MockScript {
    std::vector<Scenario> scenarios;
    UnmatchedBehavior unmatched = UnmatchedBehavior::not_found;
    MockResponse fallback;

    static MockScript from_json(const nlohmann::json& j) {
        MockScript script;
        if (j.contains("unmatched") && j.at("unmatched").get<std::string>() == "fallback") {
            script.unmatched = UnmatchedBehavior::fallback;
        }
        auto parse_response = [](const nlohmann::json& jr) {
            MockResponse r;
            if (jr.contains("fail")) {
                const std::string f = jr.at("fail").get<std::string>();
                if (f == "http_503") r.fail = MockResponse::Fail::http_503;
                else if (f == "http_404") r.fail = MockResponse::Fail::http_404;
                else if (f == "malformed") r.fail = MockResponse::Fail::malformed;
                else if (f == "timeout") r.fail = MockResponse::Fail::timeout;
                else if (f == "drop") r.fail = MockResponse::Fail::drop;
                else throw std::invalid_argument("unknown failure kind: " + f);
            }
            r.text = jr.value("text", std::string{});
            r.prompt_tokens = jr.value("prompt_tokens", -1LL);
            r.completion_tokens = jr.value("completion_tokens", -1LL);
            r.delay_ms = jr.value("delay_ms", 0);
            return r;
        };
        if (j.contains("fallback")) script.fallback = parse_response(j.at("fallback"));
        for (const auto& js : j.value("scenarios", nlohmann::json::array())) {
            Scenario s;
            s.id = js.at("id").get<std::string>();
            if (js.contains("match")) {
                const auto& m = js.at("match");
                for (const auto& c : m.value("contains", nlohmann::json::array())) {
                    s.contains.push_back(c.get<std::string>());
                }
                for (const auto& c : m.value("not_contains", nlohmann::json::array())) {
                    s.not_contains.push_back(c.get<std::string>());
                }
            }
            s.repeat_last = js.value("repeat_last", false);
            for (const auto& jr : js.value("responses", nlohmann::json::array())) {
                s.responses.push_back(parse_response(jr));
            }
            script.scenarios.push_back(std::move(s));
        }
        return script;
    }
};

struct TranscriptEntry {
    int order = 0;              // arrival order, 0-based
    std::string scenario_id;    // empty when unmatched
    std::string model;
    std::string prompt;         // message contents joined by newlines
    std::string response_text;  // as served (after max_tokens truncation)
    long long prompt_tokens = 0;
    long long completion_tokens = 0;
    std::string kind;           // ok | http_503 | http_404 | malformed | timeout | drop | unmatched
    int in_flight = 0;          // concurrent handlers when this one entered
    double temperature = -1.0;  // request decoding, -1 when absent
    long long max_tokens = -1;
    long long seed = -1;
};

class MockServer {
public:
    explicit MockServer(MockScript script) : script_(std::move(script)) {}

    MockServer(const MockServer&) = delete;
    MockServer& operator=(const MockServer&) = delete;

    ~MockServer() { stop(); }

    void start() {
        server_ = std::make_unique<httplib::Server>();
        // Handlers may sleep (timeout injection) and tests fan out many
        // concurrent requests; a fixed pool keeps that independent of
        // hardware_concurrency.
        server_->new_task_queue = [] { return new httplib::ThreadPool(16); };
        server_->Post("/v1/chat/completions",
                      [this](const httplib::Request& req, httplib::Response& res) {
                          handle(req, res);
                      });
        port_ = server_->bind_to_any_port("127.0.0.1");
        if (port_ <= 0) throw std::runtime_error("mock server failed to bind");
        thread_ = std::thread([this] { server_->listen_after_bind(); });
        server_->wait_until_ready();
    }

    void stop() {
        if (server_) server_->stop();
        if (thread_.joinable()) thread_.join();
    }

    int port() const { return port_; }
    std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_); }

    std::vector<TranscriptEntry> transcript() const {
        std::lock_guard<std::mutex> lock(mutex_);
        return transcript_;
    }

    int peak_in_flight() const { return peak_in_flight_.load(); }

    // restart the high-water mark, e.g. between property-test trials
    void reset_peak() { peak_in_flight_.store(active_.load()); }

    std::size_t request_count() const {
        std::lock_guard<std::mutex> lock(mutex_);
        return transcript_.size();
    }

private:
    static long long estimate_tokens(const std::string& text) {
        return static_cast<long long>((text.size() + 3) / 4);
    }

    void handle(const httplib::Request& req, httplib::Response& res) {
        const int active = active_.fetch_add(1) + 1;
        int expected = peak_in_flight_.load();
        while (active > expected && !peak_in_flight_.compare_exchange_weak(expected, active)) {
        }
        struct Depart {
            std::atomic<int>& counter;
            ~Depart() { counter.fetch_sub(1); }
        } depart{active_};

        std::string model;
        std::string prompt;
        long long max_tokens = -1;
        double temperature = -1.0;
        long long seed = -1;
        try {
            const auto body = nlohmann::json::parse(req.body);
            model = body.value("model", std::string{});
            for (const auto& m : body.value("messages", nlohmann::json::array())) {
                if (!prompt.empty()) prompt += "\n";
                prompt += m.value("content", std::string{});
            }
            if (body.contains("max_tokens")) max_tokens = body["max_tokens"].get<long long>();
            if (body.contains("temperature")) temperature = body["temperature"].get<double>();
            if (body.contains("seed")) seed = body["seed"].get<long long>();
        } catch (const std::exception&) {
            res.status = 400;
            res.set_content(R"({"error":{"message":"invalid request body"}})", "application/json");
            return;
        }

        TranscriptEntry entry;
        entry.model = model;
        entry.prompt = prompt;
        entry.in_flight = active;
        entry.temperature = temperature;
        entry.max_tokens = max_tokens;
        entry.seed = seed;

        MockResponse response;
        bool matched = false;
        {
            std::lock_guard<std::mutex> lock(mutex_);
            entry.order = next_order_++;
            for (auto& scenario : script_.scenarios) {
                if (!scenario.matches(prompt)) continue;
                auto& cursor = cursors_[&scenario - script_.scenarios.data()];
                if (cursor < scenario.responses.size()) {
                    response = scenario.responses[cursor++];
                    matched = true;
                    entry.scenario_id = scenario.id;
                } else if (scenario.repeat_last && !scenario.responses.empty()) {
                    response = scenario.responses.back();
                    matched = true;
                    entry.scenario_id = scenario.id;
                }
                // exhausted non-repeating scenarios fall through to unmatched
                break;
            }
        }

        if (!matched) {
            if (script_.unmatched == UnmatchedBehavior::fallback) {
                response = script_.fallback;
                entry.scenario_id = "(fallback)";
            } else {
                entry.kind = "unmatched";
                record(entry);
                res.status = 404;
                res.set_content(R"({"error":{"message":"no scenario matches request"}})",
                                "application/json");
                return;
            }
        }

        if (response.delay_ms > 0) {
            std::this_thread::sleep_for(std::chrono::milliseconds(response.delay_ms));
        }

        switch (response.fail) {
            case MockResponse::Fail::http_503:
                entry.kind = "http_503";
                record(entry);
                res.status = 503;
                res.set_content(R"({"error":{"message":"scripted 503"}})", "application/json");
                return;
            case MockResponse::Fail::http_404:
                entry.kind = "http_404";
                record(entry);
                res.status = 404;
                res.set_content(R"({"error":{"message":"scripted 404"}})", "application/json");
                return;
            case MockResponse::Fail::malformed:
                entry.kind = "malformed";
                record(entry);
                res.status = 200;
                res.set_content("this is not json {{{", "application/json");
                return;
            case MockResponse::Fail::timeout:
                // the delay already happened above; serve a body the client
                // will never read in time
                entry.kind = "timeout";
                record(entry);
                res.status = 200;
                res.set_content(R"({"late":true})", "application/json");
                return;
            case MockResponse::Fail::drop: {
                entry.kind = "drop";
                record(entry);
                res.status = 200;
                res.set_content_provider(
                    1024, "application/json",
                    [](std::size_t, std::size_t, httplib::DataSink&) { return false; });
                return;
            }
            case MockResponse::Fail::none:
                break;
        }

        std::string text = response.text;
        long long completion_tokens = response.completion_tokens >= 0
                                          ? response.completion_tokens
                                          : estimate_tokens(text);
        long long prompt_tokens =
            response.prompt_tokens >= 0 ? response.prompt_tokens : estimate_tokens(prompt);
        std::string finish_reason = "stop";
        if (max_tokens >= 0 && completion_tokens > max_tokens) {
            completion_tokens = max_tokens;
            finish_reason = "length";
            const std::size_t keep = static_cast<std::size_t>(max_tokens) * 4;
            if (text.size() > keep) text.resize(keep);
        }

        entry.kind = "ok";
        entry.response_text = text;
        entry.prompt_tokens = prompt_tokens;
        entry.completion_tokens = completion_tokens;
        record(entry);

        nlohmann::ordered_json body;
        body["id"] = "mock-" + std::to_string(entry.order);
        body["object"] = "chat.completion";
        body["model"] = model.empty() ? "mock" : model;
        body["choices"] = nlohmann::ordered_json::array(
            {{{"index", 0},
              {"message", {{"role", "assistant"}, {"content", text}}},
              {"finish_reason", finish_reason}}});
        body["usage"] = {{"prompt_tokens", prompt_tokens},
                         {"completion_tokens", completion_tokens},
                         {"total_tokens", prompt_tokens + completion_tokens}};
        res.status = 200;
        res.set_content(body.dump(), "application/json");
    }

    void record(const TranscriptEntry& entry) {
        std::lock_guard<std::mutex> lock(mutex_);
        transcript_.push_back(entry);
    }

    MockScript script_;
    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
    int port_ = 0;

    mutable std::mutex mutex_;
    std::map<std::ptrdiff_t, std::size_t> cursors_;
    std::vector<TranscriptEntry> transcript_;
    int next_order_ = 0;
    std::atomic<int> active_{0};
    std::atomic<int> peak_in_flight_{0};
};

} // namespace taar::mock

#pragma once

#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "taar/controller.hpp"
#include "taar/forge.hpp"
#include "taar/gateway.hpp"

namespace taar::config {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// One place for every pipeline constant: endpoints per role, decoding
// defaults, escape budget N=36, gating thresholds 0.6/0.1, path budget K=4,
// split seed 42. Credentials stay in environment variables named here.
struct PipelineConfig {
    bool mock_mode = false;
    std::string mock_script_path;

    std::map<std::string, gateway::EndpointConfig> endpoints; // reasoner | judge | policy

    gateway::DecodingConfig decoding; // temperature 0.7, max_tokens 32768
    int escape_budget = 36;
    controller::Thresholds thresholds; // hi 0.6, lo 0.1
    int budget_k = 4;
    std::string suffix_language = "en";
    std::string strong_operator = "high_temp";
    forge::SplitRatios split_ratios;
    std::uint64_t split_seed = 42;
    std::uint64_t seed = 0;
    int max_in_flight = 8;
    std::string verifier = "math";
    double prefix_fraction = 1.0;
    std::string aggregator = "avg";
    int pair_copies = 5;
    int delta_max = 20;
    std::size_t min_segment_len = 200;
};

inline gateway::EndpointConfig endpoint_from_json(const nlohmann::json& j,
                                                  const std::string& role) {
    gateway::EndpointConfig cfg;
    cfg.base_url = j.value("base_url", std::string{});
    cfg.model_name = j.value("model_name", std::string{});
    cfg.api_key_env = j.value("api_key_env", std::string{});
    cfg.timeout_s = j.value("timeout_s", 120.0);
    cfg.max_retries = j.value("max_retries", 3);
    cfg.backoff_ms = j.value("backoff_ms", 250);
    if (cfg.timeout_s <= 0) throw ConfigError("endpoint " + role + ": timeout_s must be > 0");
    if (cfg.max_retries < 0) throw ConfigError("endpoint " + role + ": max_retries must be >= 0");
    if (!cfg.base_url.empty() && cfg.base_url.rfind("http://", 0) != 0 &&
        cfg.base_url.rfind("https://", 0) != 0) {
        throw ConfigError("endpoint " + role + ": base_url must be absolute (http:// or https://)");
    }
    if (role == "reasoner") cfg.role = gateway::Role::reasoner;
    else if (role == "judge") cfg.role = gateway::Role::judge;
    else if (role == "policy") cfg.role = gateway::Role::policy;
    else throw ConfigError("unknown endpoint role: " + role);
    return cfg;
}

// Config file (JSON) merged onto built-in defaults. CLI flags are merged on
// top by the driver, so precedence is flag > file > default.
inline PipelineConfig config_from_json(const nlohmann::json& j) {
    PipelineConfig cfg;
    try {
        cfg.mock_mode = j.value("mock_mode", cfg.mock_mode);
        cfg.mock_script_path = j.value("mock_script", cfg.mock_script_path);
        if (j.contains("endpoints")) {
            for (const auto& [role, je] : j.at("endpoints").items()) {
                cfg.endpoints[role] = endpoint_from_json(je, role);
            }
        }
        if (j.contains("decoding")) {
            const auto& jd = j.at("decoding");
            cfg.decoding.temperature = jd.value("temperature", cfg.decoding.temperature);
            cfg.decoding.max_tokens = jd.value("max_tokens", cfg.decoding.max_tokens);
            if (jd.contains("top_p")) cfg.decoding.top_p = jd.at("top_p").get<double>();
            if (jd.contains("seed")) cfg.decoding.seed = jd.at("seed").get<long long>();
        }
        cfg.escape_budget = j.value("escape_budget", cfg.escape_budget);
        if (j.contains("thresholds")) {
            cfg.thresholds.hi = j.at("thresholds").value("hi", cfg.thresholds.hi);
            cfg.thresholds.lo = j.at("thresholds").value("lo", cfg.thresholds.lo);
        }
        cfg.budget_k = j.value("budget_k", cfg.budget_k);
        cfg.suffix_language = j.value("suffix_language", cfg.suffix_language);
        cfg.strong_operator = j.value("strong_operator", cfg.strong_operator);
        if (j.contains("split")) {
            const auto& js = j.at("split");
            cfg.split_ratios.train = js.value("train", cfg.split_ratios.train);
            cfg.split_ratios.dev = js.value("dev", cfg.split_ratios.dev);
            cfg.split_ratios.test = js.value("test", cfg.split_ratios.test);
            cfg.split_seed = js.value("seed", cfg.split_seed);
        }
        cfg.seed = j.value("seed", cfg.seed);
        cfg.max_in_flight = j.value("max_in_flight", cfg.max_in_flight);
        cfg.verifier = j.value("verifier", cfg.verifier);
        cfg.prefix_fraction = j.value("prefix_fraction", cfg.prefix_fraction);
        cfg.aggregator = j.value("aggregator", cfg.aggregator);
        cfg.pair_copies = j.value("pair_copies", cfg.pair_copies);
        cfg.delta_max = j.value("delta_max", cfg.delta_max);
        cfg.min_segment_len = j.value("min_segment_len", cfg.min_segment_len);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    if (!(cfg.thresholds.lo < cfg.thresholds.hi)) {
        throw ConfigError("config: thresholds.lo must be < thresholds.hi");
    }
    if (cfg.budget_k < 1) throw ConfigError("config: budget_k must be >= 1");
    if (cfg.escape_budget < 1) throw ConfigError("config: escape_budget must be >= 1");
    if (cfg.max_in_flight < 1) throw ConfigError("config: max_in_flight must be >= 1");
    return cfg;
}

inline PipelineConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config parse failure: ") + e.what());
    }
    return config_from_json(j);
}

} // namespace taar::config

#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "taar/annotator.hpp"
#include "taar/controller.hpp"
#include "taar/gateway.hpp"
#include "taar/jsonl.hpp"
#include "taar/metrics.hpp"
#include "taar/prompts.hpp"
#include "taar/rng.hpp"
#include "taar/trace.hpp"
#include "taar/verify.hpp"

namespace taar::harness {

// ---------------------------------------------------------------------------
// Method specifications
// ---------------------------------------------------------------------------

enum class MethodName { avg_k, taar, fixed_cut, all_traps, random_p };

struct MethodSpec {
    MethodName name = MethodName::avg_k;
    int budget_k = 4;
    double fixed_cut_q = 0.5;        // for fixed_cut
    std::uint64_t random_p_seed = 0; // for random_p

    std::string label() const {
        switch (name) {
            case MethodName::avg_k: return "avg_k";
            case MethodName::taar: return "taar";
            case MethodName::fixed_cut: {
                std::string q = std::to_string(fixed_cut_q);
                q.erase(q.find_last_not_of('0') + 1);
                if (!q.empty() && q.back() == '.') q.pop_back();
                return "fixed_cut@" + q;
            }
            case MethodName::all_traps: return "all_traps";
            case MethodName::random_p: return "random_p";
        }
        return "avg_k";
    }
};

// "avg_k", "taar", "fixed_cut@0.25", "all_traps", "random_p"
inline MethodSpec parse_method(std::string_view name, int budget_k = 4) {
    MethodSpec spec;
    spec.budget_k = budget_k;
    if (name == "avg_k") spec.name = MethodName::avg_k;
    else if (name == "taar") spec.name = MethodName::taar;
    else if (name == "all_traps") spec.name = MethodName::all_traps;
    else if (name == "random_p") spec.name = MethodName::random_p;
    else if (name.starts_with("fixed_cut")) {
        spec.name = MethodName::fixed_cut;
        const std::size_t at = name.find('@');
        if (at != std::string_view::npos) {
            spec.fixed_cut_q = std::stod(std::string(name.substr(at + 1)));
        }
        if (spec.fixed_cut_q <= 0.0 || spec.fixed_cut_q >= 1.0) {
            throw std::invalid_argument("fixed_cut fraction must lie in (0,1)");
        }
    } else {
        throw std::invalid_argument("unknown method: " + std::string(name));
    }
    return spec;
}

struct ProblemResult {
    std::string problem_id;
    std::vector<std::optional<bool>> path_correct;
    std::optional<double> accuracy;
    long long tokens_baseline = 0;
    long long tokens_extra = 0;
};

struct MethodRunReport {
    std::string method;
    std::vector<ProblemResult> per_problem;
    std::optional<double> accuracy; // mean of per-problem accuracies
    long long tokens_baseline = 0;
    long long tokens_extra = 0;
};

namespace detail {

inline ProblemResult summarize(const controller::ControlledRun& run,
                               controller::Aggregator aggregator) {
    ProblemResult result;
    result.problem_id = run.problem_id;
    for (const auto& path : run.paths) result.path_correct.push_back(path.is_correct);
    if (aggregator == controller::Aggregator::vote && run.vote_correct) {
        result.accuracy = *run.vote_correct ? 1.0 : 0.0;
    } else {
        result.accuracy = run.accuracy;
    }
    result.tokens_baseline = run.tokens_baseline;
    result.tokens_extra = run.tokens_extra;
    return result;
}

} // namespace detail

// Avg@K baseline: budget_k independent samples per problem, mean correctness,
// no diagnosis and no extra tokens.
inline ProblemResult run_avg_k(const controller::Problem& problem,
                               const gateway::EndpointConfig& reasoner,
                               const verify::Verifier& verifier, int budget_k,
                               const controller::RunConfig& config) {
    std::vector<gateway::BatchRequest> requests;
    for (int p = 0; p < budget_k; ++p) {
        gateway::BatchRequest req;
        req.messages = {gateway::user_message(problem.problem_text)};
        req.decoding = config.decoding;
        req.decoding.seed = static_cast<long long>(config.seed + static_cast<std::uint64_t>(p));
        requests.push_back(std::move(req));
    }
    const auto results = gateway::generate_batch(requests, reasoner, budget_k);

    ProblemResult out;
    out.problem_id = problem.problem_id;
    int known = 0;
    int correct = 0;
    for (const auto& r : results) {
        out.tokens_baseline += r.completion_tokens;
        if (problem.ground_truth.empty()) {
            out.path_correct.emplace_back(std::nullopt);
            continue;
        }
        const bool ok = r.ok() && verifier.verify(r.text, problem.ground_truth).is_correct;
        out.path_correct.emplace_back(ok);
        ++known;
        correct += ok ? 1 : 0;
    }
    if (known > 0) out.accuracy = static_cast<double>(correct) / known;
    return out;
}

// Runs one method over a dataset under a fixed path budget. taar/all_traps/
// random_p/fixed_cut all route through the restart controller with the
// matching ablation hook.
inline MethodRunReport run_method(const std::vector<controller::Problem>& problems,
                                  const MethodSpec& method,
                                  const gateway::EndpointConfig& reasoner,
                                  const gateway::EndpointConfig& policy,
                                  const verify::Verifier& verifier,
                                  controller::RunConfig config = {}) {
    MethodRunReport report;
    report.method = method.label();

    switch (method.name) {
        case MethodName::avg_k:
            break;
        case MethodName::taar:
            break;
        case MethodName::fixed_cut:
            config.fixed_cut_fraction = method.fixed_cut_q;
            break;
        case MethodName::all_traps:
            config.force_strong = true;
            break;
        case MethodName::random_p:
            config.random_p_seed = method.random_p_seed;
            break;
    }

    double accuracy_sum = 0.0;
    int accuracy_n = 0;
    for (const auto& problem : problems) {
        ProblemResult result;
        if (method.name == MethodName::avg_k) {
            result = run_avg_k(problem, reasoner, verifier, method.budget_k, config);
        } else {
            result = detail::summarize(
                controller::run_taar(problem, reasoner, policy, verifier, method.budget_k, config),
                config.aggregator);
        }
        report.tokens_baseline += result.tokens_baseline;
        report.tokens_extra += result.tokens_extra;
        if (result.accuracy) {
            accuracy_sum += *result.accuracy;
            ++accuracy_n;
        }
        report.per_problem.push_back(std::move(result));
    }
    if (accuracy_n > 0) report.accuracy = accuracy_sum / accuracy_n;
    return report;
}

// ---------------------------------------------------------------------------
// Selection-baseline interface (outcome reranking such as PRM@K or adaptive
// routing). Internals of those baselines are out of scope here: this samples
// K candidates exactly like avg_k, hands them to an external scorer, and
// scores the problem by the top-ranked candidate. Plug a reward model or a
// router in as the scorer.
// ---------------------------------------------------------------------------

using CandidateScorer = std::function<double(const controller::Problem& problem,
                                             const gateway::GenerationResult& candidate)>;

inline MethodRunReport run_selection_baseline(const std::vector<controller::Problem>& problems,
                                              const std::string& name, int budget_k,
                                              const gateway::EndpointConfig& reasoner,
                                              const CandidateScorer& scorer,
                                              const verify::Verifier& verifier,
                                              const controller::RunConfig& config = {}) {
    if (budget_k < 1) throw std::invalid_argument("budget_k must be >= 1");
    MethodRunReport report;
    report.method = name;
    double accuracy_sum = 0.0;
    int accuracy_n = 0;
    for (const auto& problem : problems) {
        std::vector<gateway::BatchRequest> requests;
        for (int p = 0; p < budget_k; ++p) {
            gateway::BatchRequest req;
            req.messages = {gateway::user_message(problem.problem_text)};
            req.decoding = config.decoding;
            req.decoding.seed = static_cast<long long>(config.seed + static_cast<std::uint64_t>(p));
            requests.push_back(std::move(req));
        }
        const auto candidates = gateway::generate_batch(requests, reasoner, budget_k);

        ProblemResult result;
        result.problem_id = problem.problem_id;
        const gateway::GenerationResult* best = nullptr;
        double best_score = 0.0;
        for (const auto& c : candidates) {
            result.tokens_baseline += c.completion_tokens;
            if (!c.ok()) continue;
            const double score = scorer(problem, c);
            if (!best || score > best_score) {
                best = &c;
                best_score = score;
            }
        }
        if (best && !problem.ground_truth.empty()) {
            const bool ok = verifier.verify(best->text, problem.ground_truth).is_correct;
            result.path_correct.emplace_back(ok);
            result.accuracy = ok ? 1.0 : 0.0;
            accuracy_sum += *result.accuracy;
            ++accuracy_n;
        }
        report.tokens_baseline += result.tokens_baseline;
        report.per_problem.push_back(std::move(result));
    }
    if (accuracy_n > 0) report.accuracy = accuracy_sum / accuracy_n;
    return report;
}

// ---------------------------------------------------------------------------
// Cut-strategy escape rates (Cut@Trap vs Cut@Post-trap vs Cut@Random)
// ---------------------------------------------------------------------------

struct GoldRecord {
    trace::SegmentedTrajectory trajectory;
    annotator::TrapAnnotation annotation; // must carry a trap
    std::string ground_truth;
    std::string model_id;
};

inline constexpr std::string_view kStrategyTrap = "trap";
inline constexpr std::string_view kStrategyPostTrap = "post_trap";
inline constexpr std::string_view kStrategyRandom = "random";

struct StrategyOutcome {
    int trials = 0;
    int successes = 0;
    int gateway_errors = 0;

    double rate() const { return trials == 0 ? 0.0 : static_cast<double>(successes) / trials; }
};

struct EscapeRateTable {
    std::map<std::string, StrategyOutcome> overall;                        // strategy -> outcome
    std::map<std::string, std::map<std::string, StrategyOutcome>> by_model; // model -> strategy
    int skipped = 0;        // degenerate trajectories
    std::string error_note; // set when the whole computation could not run
};

// Uniform cut positions over [1, T-1] excluding the given points, i.i.d. per
// trial. Public so scripted suites can precompute the exact draw.
inline std::vector<int> random_cut_positions(int T, const std::vector<int>& exclude, int budget,
                                             std::uint64_t seed) {
    std::set<int> banned(exclude.begin(), exclude.end());
    std::vector<int> eligible;
    for (int p = 1; p <= T - 1; ++p) {
        if (!banned.count(p)) eligible.push_back(p);
    }
    std::vector<int> out;
    if (eligible.empty() || budget <= 0) return out;
    std::mt19937_64 rng(seed);
    out.reserve(static_cast<std::size_t>(budget));
    for (int i = 0; i < budget; ++i) {
        out.push_back(eligible[static_cast<std::size_t>(uniform_below(rng, eligible.size()))]);
    }
    return out;
}

// Round-robin allocation of a trial budget across the window points, ascending.
inline std::vector<int> window_cut_positions(const std::vector<int>& windows, int budget) {
    std::vector<int> out;
    if (windows.empty() || budget <= 0) return out;
    out.reserve(static_cast<std::size_t>(budget));
    for (int i = 0; i < budget; ++i) {
        out.push_back(windows[static_cast<std::size_t>(i) % windows.size()]);
    }
    return out;
}

// Escape rate per cut strategy under an equal resample budget: Cut@Trap
// truncates at t* (prefix excludes the trap), Cut@Post-trap at the self-repair
// windows, Cut@Random at uniform positions disjoint from both.
inline EscapeRateTable cut_strategy_escape(const std::vector<GoldRecord>& records,
                                           const gateway::EndpointConfig& reasoner,
                                           const verify::Verifier& verifier, int budget_per_strategy,
                                           std::uint64_t seed, int max_in_flight = 8,
                                           gateway::DecodingConfig decoding = {}) {
    EscapeRateTable table;
    if (budget_per_strategy <= 0) {
        table.error_note = "zero resample budget: nothing to estimate";
        return table;
    }
    for (std::size_t rec_idx = 0; rec_idx < records.size(); ++rec_idx) {
        const GoldRecord& rec = records[rec_idx];
        if (!rec.annotation.has_trap()) {
            ++table.skipped;
            continue;
        }
        const int T = rec.trajectory.segment_count();
        const int t_star = *rec.annotation.trap_index;
        if (T < 2 || t_star >= T) {
            ++table.skipped;
            continue;
        }
        const std::vector<int> windows = annotator::cut_eligible_points(rec.annotation);

        std::map<std::string, std::vector<int>> strategy_cuts;
        strategy_cuts[std::string(kStrategyTrap)] =
            std::vector<int>(static_cast<std::size_t>(budget_per_strategy), t_star);
        strategy_cuts[std::string(kStrategyPostTrap)] =
            window_cut_positions(windows, budget_per_strategy);
        std::vector<int> exclude = windows;
        exclude.push_back(t_star);
        strategy_cuts[std::string(kStrategyRandom)] = random_cut_positions(
            T, exclude, budget_per_strategy, seed + rec_idx * 0x9e3779b97f4a7c15ULL);

        for (const auto& [strategy, cuts] : strategy_cuts) {
            if (cuts.empty()) continue;
            std::vector<gateway::BatchRequest> requests;
            requests.reserve(cuts.size());
            for (std::size_t i = 0; i < cuts.size(); ++i) {
                gateway::BatchRequest req;
                req.messages = {gateway::user_message(prompts::build_continuation_prompt(
                    rec.trajectory.problem_text, trace::prefix_text(rec.trajectory, cuts[i])))};
                req.decoding = decoding;
                req.decoding.seed = static_cast<long long>(seed + rec_idx * 1000u + i);
                requests.push_back(std::move(req));
            }
            const auto results = gateway::generate_batch(requests, reasoner, max_in_flight);
            auto& overall = table.overall[strategy];
            auto& per_model = table.by_model[rec.model_id][strategy];
            for (const auto& r : results) {
                ++overall.trials;
                ++per_model.trials;
                if (!r.ok()) {
                    ++overall.gateway_errors;
                    ++per_model.gateway_errors;
                    continue;
                }
                if (verifier.verify(r.text, rec.ground_truth).is_correct) {
                    ++overall.successes;
                    ++per_model.successes;
                }
            }
        }
    }
    return table;
}

// ---------------------------------------------------------------------------
// Report emission (CSV per table + JSON bundle + plot-ready long format)
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

inline void write_accuracy_csv(const std::string& path,
                               const std::vector<MethodRunReport>& reports) {
    std::vector<std::vector<std::string>> rows;
    for (const auto& r : reports) {
        rows.push_back({r.method, std::to_string(r.per_problem.size()),
                        r.accuracy ? format_double(*r.accuracy) : "undefined",
                        std::to_string(r.tokens_baseline), std::to_string(r.tokens_extra)});
    }
    io::write_csv(path, {"method", "problems", "accuracy", "tokens_baseline", "tokens_extra"},
                  rows);
}

inline void write_escape_rates_csv(const std::string& path, const EscapeRateTable& table) {
    std::vector<std::vector<std::string>> rows;
    for (const auto& [strategy, outcome] : table.overall) {
        rows.push_back({"(all)", strategy, std::to_string(outcome.trials),
                        std::to_string(outcome.successes), format_double(outcome.rate())});
    }
    for (const auto& [model, strategies] : table.by_model) {
        for (const auto& [strategy, outcome] : strategies) {
            rows.push_back({model, strategy, std::to_string(outcome.trials),
                            std::to_string(outcome.successes), format_double(outcome.rate())});
        }
    }
    io::write_csv(path, {"model", "strategy", "trials", "successes", "escape_rate"}, rows);
}

inline void write_localization_csv(const std::string& path,
                                   const metrics::LocalizationReport& report) {
    std::vector<std::vector<std::string>> rows;
    rows.push_back({"overall", "", std::to_string(report.detected),
                    report.top1 ? format_double(*report.top1) : "undefined",
                    report.within3 ? format_double(*report.within3) : "undefined",
                    report.mae ? format_double(*report.mae) : "undefined"});
    for (const auto& b : report.by_distance) {
        rows.push_back({"distance", b.label, std::to_string(b.n), format_double(b.top1),
                        format_double(b.within3), format_double(b.mae)});
    }
    for (const auto& b : report.by_length) {
        rows.push_back({"input_length", b.label, std::to_string(b.n), format_double(b.top1),
                        format_double(b.within3), format_double(b.mae)});
    }
    io::write_csv(path, {"scope", "bucket", "n", "top1", "within3", "mae"}, rows);
}

inline void write_tokens_csv(const std::string& path, const std::vector<metrics::TokenRow>& rows) {
    std::vector<std::vector<std::string>> out;
    for (const auto& r : rows) {
        out.push_back({r.model, std::to_string(r.baseline), std::to_string(r.extra_taar),
                       format_double(r.extra_over_base_taar), std::to_string(r.extra_ablation),
                       format_double(r.extra_over_base_ablation), format_double(r.savings)});
    }
    io::write_csv(path,
                  {"model", "baseline_tokens", "extra_taar", "extra_over_base_taar",
                   "extra_ablation", "extra_over_base_ablation", "savings"},
                  out);
}

// Long-format rows for plotting (escape-rate and AUC figures).
inline void write_long_csv(const std::string& path, const EscapeRateTable& escape_table,
                           const std::map<double, std::optional<double>>& auc_by_prefix) {
    std::vector<std::vector<std::string>> rows;
    for (const auto& [strategy, outcome] : escape_table.overall) {
        rows.push_back({"escape_rate_by_strategy", strategy, "", format_double(outcome.rate())});
    }
    for (const auto& [fraction, value] : auc_by_prefix) {
        rows.push_back({"auc_by_prefix", "auc", format_double(fraction),
                        value ? format_double(*value) : "undefined"});
    }
    io::write_csv(path, {"figure", "series", "x", "y"}, rows);
}

inline nlohmann::ordered_json bundle_json(
    const std::vector<MethodRunReport>& methods, const EscapeRateTable& escape_table,
    const std::map<double, std::optional<double>>& auc,
    const std::vector<metrics::TokenRow>& tokens,
    const std::map<std::string, std::optional<double>>& correlations = {}) {
    nlohmann::ordered_json j;
    auto jm = nlohmann::ordered_json::array();
    for (const auto& r : methods) {
        nlohmann::ordered_json row;
        row["method"] = r.method;
        row["problems"] = r.per_problem.size();
        row["accuracy"] = r.accuracy ? nlohmann::ordered_json(*r.accuracy)
                                     : nlohmann::ordered_json(nullptr);
        row["tokens_baseline"] = r.tokens_baseline;
        row["tokens_extra"] = r.tokens_extra;
        jm.push_back(std::move(row));
    }
    j["methods"] = std::move(jm);
    nlohmann::ordered_json je = nlohmann::ordered_json::object();
    for (const auto& [strategy, outcome] : escape_table.overall) {
        je[strategy] = {{"trials", outcome.trials},
                        {"successes", outcome.successes},
                        {"rate", outcome.rate()}};
    }
    j["escape_rates"] = std::move(je);
    nlohmann::ordered_json ja = nlohmann::ordered_json::object();
    for (const auto& [fraction, value] : auc) {
        ja[format_double(fraction)] =
            value ? nlohmann::ordered_json(*value) : nlohmann::ordered_json(nullptr);
    }
    j["auc_by_prefix"] = std::move(ja);
    auto jt = nlohmann::ordered_json::array();
    for (const auto& r : tokens) {
        jt.push_back({{"model", r.model},
                      {"baseline", r.baseline},
                      {"extra_taar", r.extra_taar},
                      {"extra_over_base_taar", r.extra_over_base_taar},
                      {"extra_ablation", r.extra_ablation},
                      {"extra_over_base_ablation", r.extra_over_base_ablation},
                      {"savings", r.savings}});
    }
    j["tokens"] = std::move(jt);
    nlohmann::ordered_json jc = nlohmann::ordered_json::object();
    for (const auto& [name, value] : correlations) {
        jc[name] = value ? nlohmann::ordered_json(*value) : nlohmann::ordered_json(nullptr);
    }
    j["correlations"] = std::move(jc);
    return j;
}

} // namespace taar::harness

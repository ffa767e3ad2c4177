#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <json.hpp>

#include "taar/gateway.hpp"
#include "taar/jsonl.hpp"
#include "taar/prompts.hpp"
#include "taar/trace.hpp"
#include "taar/verify.hpp"

namespace taar::controller {

// ---------------------------------------------------------------------------
// Diagnosis: the policy's (t_hat, p_hat) prediction
// ---------------------------------------------------------------------------

struct Diagnosis {
    std::optional<int> trap_index;     // in [0, T-1] whenever present
    std::optional<double> escape_prob; // present whenever trap_index is
    std::string raw;
    std::optional<std::string> violation; // out-of-range labels, missing p_hat, ...
    bool parse_error = false;

    bool has_trap() const { return trap_index.has_value(); }
};

// Extracts the policy's JSON verdict. Out-of-range or incoherent predictions
// are carried as violations (never clamped) and leave the diagnosis trap-free,
// which the controller treats as no-intervention.
inline Diagnosis parse_diagnosis(std::string_view policy_output, int T) {
    Diagnosis diag;
    diag.raw = std::string(policy_output);
    auto raw_json = io::first_json_object(policy_output);
    if (!raw_json) {
        diag.parse_error = true;
        diag.violation = "no JSON object in policy output";
        return diag;
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(*raw_json);
    } catch (const nlohmann::json::parse_error& e) {
        diag.parse_error = true;
        diag.violation = std::string("policy JSON parse failure: ") + e.what();
        return diag;
    }
    if (!j.contains("trap_index")) {
        diag.parse_error = true;
        diag.violation = "missing trap_index";
        return diag;
    }

    std::optional<int> index;
    const auto& jt = j.at("trap_index");
    if (jt.is_number_integer()) {
        index = jt.get<int>();
    } else if (jt.is_string()) {
        const std::string label = jt.get<std::string>();
        if (!label.empty()) {
            index = trace::parse_cot_label(label);
            if (!index) {
                diag.violation = "unparseable trap_index label: " + label;
                return diag;
            }
        }
    } else if (!jt.is_null()) {
        diag.violation = "trap_index has unexpected type";
        return diag;
    }
    if (!index) return diag; // explicit no-trap

    if (*index < 0 || *index >= T) {
        diag.violation = "trap_index " + std::to_string(*index) + " outside [0, " +
                         std::to_string(T - 1) + "]";
        return diag;
    }

    std::optional<double> p;
    if (j.contains("escape_probability")) {
        const auto& jp = j.at("escape_probability");
        if (jp.is_number()) {
            p = jp.get<double>();
        } else if (jp.is_string()) {
            const std::string s = jp.get<std::string>();
            if (!s.empty()) {
                try {
                    std::size_t used = 0;
                    const double v = std::stod(s, &used);
                    if (used == s.size()) p = v;
                } catch (const std::exception&) {
                }
            }
        }
    }
    if (!p || *p < 0.0 || *p > 1.0) {
        diag.violation = "trap predicted without a usable escape_probability";
        return diag;
    }
    diag.trap_index = index;
    diag.escape_prob = p;
    return diag;
}

// ---------------------------------------------------------------------------
// Intervention gating
// ---------------------------------------------------------------------------

enum class InterventionKind { none, mild, strong };

inline std::string_view intervention_name(InterventionKind k) {
    switch (k) {
        case InterventionKind::none: return "none";
        case InterventionKind::mild: return "mild";
        case InterventionKind::strong: return "strong";
    }
    return "none";
}

enum class StrongOperator { high_temp, suffix, both };

inline StrongOperator parse_strong_operator(std::string_view name) {
    if (name == "high_temp") return StrongOperator::high_temp;
    if (name == "suffix") return StrongOperator::suffix;
    if (name == "both") return StrongOperator::both;
    throw std::invalid_argument("unknown strong operator: " + std::string(name));
}

struct Thresholds {
    double hi = 0.6; // p_hat >= hi: no intervention
    double lo = 0.1; // p_hat <= lo: strong intervention
};

struct RestartOperator {
    gateway::DecodingConfig decoding;
    std::optional<std::string> suffix;
};

struct InterventionDecision {
    InterventionKind kind = InterventionKind::none;
    std::optional<RestartOperator> op; // populated for mild/strong
};

struct OperatorConfig {
    gateway::DecodingConfig default_decoding{};
    StrongOperator strong_operator = StrongOperator::high_temp;
    double strong_temperature = 1.0;
    std::string suffix_text = std::string(prompts::kRebootSuffixEn);
};

// Gating boundaries are inclusive on both sides: no intervention at
// p_hat >= hi (inclusive), strong at p_hat <= lo (inclusive), mild between.
inline InterventionDecision decide(const Diagnosis& diag, Thresholds thresholds = {},
                                   const OperatorConfig& operators = {}) {
    if (!(thresholds.lo < thresholds.hi)) {
        throw std::invalid_argument("thresholds.lo must be < thresholds.hi");
    }
    InterventionDecision decision;
    if (!diag.trap_index || !diag.escape_prob) return decision;
    const double p = *diag.escape_prob;
    if (p >= thresholds.hi) return decision;

    if (p <= thresholds.lo) {
        decision.kind = InterventionKind::strong;
        RestartOperator op;
        op.decoding = operators.default_decoding;
        switch (operators.strong_operator) {
            case StrongOperator::high_temp:
                op.decoding.temperature = operators.strong_temperature;
                break;
            case StrongOperator::suffix:
                op.suffix = operators.suffix_text;
                break;
            case StrongOperator::both:
                op.decoding.temperature = operators.strong_temperature;
                op.suffix = operators.suffix_text;
                break;
        }
        decision.op = std::move(op);
    } else {
        decision.kind = InterventionKind::mild;
        decision.op = RestartOperator{operators.default_decoding, std::nullopt};
    }
    return decision;
}

// Restart prompt: problem + continue-instruction + prefix Y_<t_hat, with the
// reboot suffix appended after the prefix for suffix-bearing strong restarts.
// t_hat = 0 regenerates from scratch.
inline std::vector<gateway::ChatMessage> build_restart_prompt(
    const std::string& problem, const trace::SegmentedTrajectory& traj, int t_hat,
    const InterventionDecision& decision) {
    if (decision.kind == InterventionKind::none || !decision.op) {
        throw std::invalid_argument("build_restart_prompt requires an intervention");
    }
    const int T = traj.segment_count();
    if (t_hat < 0 || t_hat > T - 1) {
        throw std::out_of_range("t_hat outside [0, T-1]");
    }
    const std::string prefix = trace::prefix_text(traj, t_hat);
    const std::string suffix = decision.op->suffix.value_or("");
    return {gateway::user_message(prompts::build_continuation_prompt(problem, prefix, suffix))};
}

// ---------------------------------------------------------------------------
// Controlled runs
// ---------------------------------------------------------------------------

struct PathRecord {
    gateway::GenerationResult initial;
    Diagnosis diagnosis;
    long long diagnosis_tokens = 0; // completion tokens of the policy call
    InterventionDecision decision;
    std::optional<gateway::GenerationResult> restarted;
    std::string final_text;
    std::optional<std::string> final_answer;
    std::optional<bool> is_correct;
    std::string note; // degradations (endpoint failures etc.)
};

struct ControlledRun {
    std::string problem_id;
    std::vector<PathRecord> paths;
    int budget_k = 0;
    long long tokens_baseline = 0;         // sum of initial completion tokens
    long long tokens_extra = 0;            // diagnostic + restart tokens
    long long tokens_extra_diagnostic = 0; // itemized: policy calls
    long long tokens_extra_restart = 0;    // itemized: restarted continuations
    std::optional<double> accuracy;        // Avg@K per-path mean correctness
    std::optional<std::string> vote_answer;
    std::optional<bool> vote_correct;
};

enum class Aggregator { avg, vote };

struct RunConfig {
    Thresholds thresholds{};
    gateway::DecodingConfig decoding{};         // initial sampling + mild restarts
    gateway::DecodingConfig policy_decoding{0.0, 1024, std::nullopt, std::nullopt};
    OperatorConfig operators{};
    double prefix_fraction = 1.0; // fraction of segments shown to the policy
    bool count_diagnostic_tokens = true;
    std::size_t min_segment_len = trace::kMinSegmentLen;
    std::uint64_t seed = 0;
    Aggregator aggregator = Aggregator::avg;
    // ablation hooks
    bool force_strong = false;                  // restart at every detected trap
    std::optional<std::uint64_t> random_p_seed; // replace p_hat with a seeded draw
    std::optional<double> fixed_cut_fraction;   // fixed-position truncation at ceil(q*T)
};

struct Problem {
    std::string problem_id;
    std::string problem_text;
    std::string ground_truth; // empty when unknown (live traffic)
};

namespace detail {

inline double seeded_unit_draw(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// FNV-1a: a portable stand-in for std::hash so seeded draws reproduce across
// standard libraries.
inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline int prefix_segments(int T, double fraction) {
    if (T <= 0) return 0;
    if (fraction >= 1.0) return T;
    const int n = static_cast<int>(std::ceil(fraction * T));
    return std::clamp(n, 1, T);
}

} // namespace detail

// One TAAR path: sample, diagnose on a (possibly truncated) rendering, gate,
// and restart from the truncated prefix when warranted. Endpoint failures
// degrade the path to its initial answer; they never abort the run.
inline PathRecord run_taar_path(const Problem& problem, const gateway::EndpointConfig& reasoner,
                                const gateway::EndpointConfig& policy,
                                const verify::Verifier& verifier, const RunConfig& config,
                                int path_index) {
    PathRecord path;

    gateway::DecodingConfig initial_decoding = config.decoding;
    initial_decoding.seed = static_cast<long long>(config.seed + static_cast<std::uint64_t>(path_index));
    path.initial = gateway::generate(
        reasoner, {gateway::user_message(problem.problem_text)}, initial_decoding);
    if (!path.initial.ok()) {
        path.note = "initial generation failed: " + path.initial.error->message;
        return path;
    }

    const auto traj = trace::make_trajectory(problem.problem_id, reasoner.model_name,
                                             problem.problem_text, path.initial.text,
                                             config.min_segment_len);
    const int T = traj.segment_count();
    path.final_text = path.initial.text;

    if (T > 0 && config.fixed_cut_fraction) {
        // fixed-position baseline: no diagnosis, always a mild restart at ceil(q*T)
        path.decision.kind = InterventionKind::mild;
        path.decision.op = RestartOperator{config.operators.default_decoding, std::nullopt};
        const int cut =
            std::clamp(static_cast<int>(std::ceil(*config.fixed_cut_fraction * T)), 0, T);
        const std::string prefix = trace::prefix_text(traj, cut);
        gateway::DecodingConfig restart_decoding = path.decision.op->decoding;
        restart_decoding.seed =
            static_cast<long long>(config.seed + 1000003u + static_cast<std::uint64_t>(path_index));
        auto restarted = gateway::generate(
            reasoner,
            {gateway::user_message(
                prompts::build_continuation_prompt(problem.problem_text, prefix))},
            restart_decoding);
        if (restarted.ok()) {
            path.final_text = restarted.text;
        } else {
            path.note = "restart failed: " + restarted.error->message;
        }
        path.restarted = std::move(restarted);
    } else if (T > 0) {
        const int visible = detail::prefix_segments(T, config.prefix_fraction);
        std::vector<trace::Segment> shown(traj.segments.begin(), traj.segments.begin() + visible);
        const std::string policy_input =
            prompts::render_diag_input(reasoner.model_name, problem.problem_text, shown);
        auto policy_result =
            gateway::generate(policy, {gateway::user_message(policy_input)}, config.policy_decoding);
        path.diagnosis.raw = policy_result.text;
        if (!policy_result.ok()) {
            path.note = "policy call failed: " + policy_result.error->message;
        } else {
            path.diagnosis = parse_diagnosis(policy_result.text, T);
        }
        path.diagnosis_tokens = policy_result.ok() ? policy_result.completion_tokens : 0;

        if (config.random_p_seed && path.diagnosis.has_trap()) {
            path.diagnosis.escape_prob = detail::seeded_unit_draw(
                *config.random_p_seed ^ detail::fnv1a(problem.problem_id) ^
                (static_cast<std::uint64_t>(path_index) * 7919u));
        }

        if (path.diagnosis.has_trap()) {
            InterventionDecision decision;
            if (config.force_strong) {
                Diagnosis forced = path.diagnosis;
                forced.escape_prob = 0.0;
                decision = decide(forced, config.thresholds, config.operators);
            } else {
                decision = decide(path.diagnosis, config.thresholds, config.operators);
            }
            path.decision = decision;
            if (decision.kind != InterventionKind::none) {
                gateway::DecodingConfig restart_decoding = decision.op->decoding;
                restart_decoding.seed =
                    static_cast<long long>(config.seed + 1000003u + static_cast<std::uint64_t>(path_index));
                InterventionDecision seeded = decision;
                seeded.op->decoding = restart_decoding;
                auto restarted =
                    gateway::generate(reasoner,
                                      build_restart_prompt(problem.problem_text, traj,
                                                           *path.diagnosis.trap_index, seeded),
                                      restart_decoding);
                if (restarted.ok()) {
                    path.final_text = restarted.text;
                } else {
                    path.note = "restart failed: " + restarted.error->message;
                }
                path.restarted = std::move(restarted);
            }
        }
    }

    path.final_answer = verify::extract_final_answer(path.final_text);
    if (!problem.ground_truth.empty()) {
        path.is_correct = verifier.verify(path.final_text, problem.ground_truth).is_correct;
    }
    return path;
}

// Full controlled run: budget_k concurrent paths, Avg@K aggregation (majority
// vote available), and exact token accounting split into baseline vs extra.
inline ControlledRun run_taar(const Problem& problem, const gateway::EndpointConfig& reasoner,
                              const gateway::EndpointConfig& policy,
                              const verify::Verifier& verifier, int budget_k = 4,
                              const RunConfig& config = {}) {
    if (budget_k < 1) throw std::invalid_argument("budget_k must be >= 1");
    ControlledRun run;
    run.problem_id = problem.problem_id;
    run.budget_k = budget_k;
    run.paths.resize(static_cast<std::size_t>(budget_k));

    std::vector<std::thread> workers;
    workers.reserve(static_cast<std::size_t>(budget_k));
    for (int p = 0; p < budget_k; ++p) {
        workers.emplace_back([&, p] {
            run.paths[static_cast<std::size_t>(p)] =
                run_taar_path(problem, reasoner, policy, verifier, config, p);
        });
    }
    for (auto& t : workers) t.join();

    int known = 0;
    int correct = 0;
    std::map<std::string, int> votes;
    for (const auto& path : run.paths) {
        run.tokens_baseline += path.initial.completion_tokens;
        run.tokens_extra_diagnostic += path.diagnosis_tokens;
        if (path.restarted && path.restarted->ok()) {
            run.tokens_extra_restart += path.restarted->completion_tokens;
        }
        if (path.is_correct) {
            ++known;
            correct += *path.is_correct ? 1 : 0;
        }
        if (path.final_answer) ++votes[*path.final_answer];
    }
    run.tokens_extra = run.tokens_extra_restart +
                       (config.count_diagnostic_tokens ? run.tokens_extra_diagnostic : 0);
    if (known > 0) run.accuracy = static_cast<double>(correct) / known;
    if (!votes.empty()) {
        auto best = votes.begin();
        for (auto it = votes.begin(); it != votes.end(); ++it) {
            if (it->second > best->second) best = it;
        }
        run.vote_answer = best->first;
        if (!problem.ground_truth.empty()) {
            run.vote_correct = verify::answers_equivalent(*run.vote_answer, problem.ground_truth);
        }
    }
    return run;
}

// --- Run JSONL ---------------------------------------------------------------

// latency_ms is deliberately left out: run artifacts must be byte-identical
// across reruns with unchanged inputs.
inline nlohmann::ordered_json to_json(const gateway::GenerationResult& r) {
    nlohmann::ordered_json j;
    j["text"] = r.text;
    j["prompt_tokens"] = r.prompt_tokens;
    j["completion_tokens"] = r.completion_tokens;
    j["finish_reason"] = std::string(gateway::finish_reason_name(r.finish_reason));
    j["attempts"] = r.attempts;
    if (r.error) j["error"] = r.error->message;
    return j;
}

inline nlohmann::ordered_json to_json(const ControlledRun& run) {
    nlohmann::ordered_json j;
    j["problem_id"] = run.problem_id;
    j["budget_k"] = run.budget_k;
    auto paths = nlohmann::ordered_json::array();
    for (const auto& path : run.paths) {
        nlohmann::ordered_json jp;
        jp["initial"] = to_json(path.initial);
        nlohmann::ordered_json jd;
        jd["trap_index"] =
            path.diagnosis.trap_index ? nlohmann::ordered_json(*path.diagnosis.trap_index)
                                      : nlohmann::ordered_json(nullptr);
        jd["escape_prob"] =
            path.diagnosis.escape_prob ? nlohmann::ordered_json(*path.diagnosis.escape_prob)
                                       : nlohmann::ordered_json(nullptr);
        jd["raw"] = path.diagnosis.raw;
        if (path.diagnosis.violation) jd["violation"] = *path.diagnosis.violation;
        jd["parse_error"] = path.diagnosis.parse_error;
        jp["diagnosis"] = std::move(jd);
        jp["decision"] = std::string(intervention_name(path.decision.kind));
        if (path.restarted) jp["restarted"] = to_json(*path.restarted);
        jp["final_answer"] = path.final_answer ? nlohmann::ordered_json(*path.final_answer)
                                               : nlohmann::ordered_json(nullptr);
        jp["is_correct"] = path.is_correct ? nlohmann::ordered_json(*path.is_correct)
                                           : nlohmann::ordered_json(nullptr);
        if (!path.note.empty()) jp["note"] = path.note;
        paths.push_back(std::move(jp));
    }
    j["paths"] = std::move(paths);
    j["tokens_baseline"] = run.tokens_baseline;
    j["tokens_extra"] = run.tokens_extra;
    j["tokens_extra_diagnostic"] = run.tokens_extra_diagnostic;
    j["tokens_extra_restart"] = run.tokens_extra_restart;
    j["accuracy"] = run.accuracy ? nlohmann::ordered_json(*run.accuracy)
                                 : nlohmann::ordered_json(nullptr);
    if (run.vote_answer) j["vote_answer"] = *run.vote_answer;
    if (run.vote_correct) j["vote_correct"] = *run.vote_correct;
    return j;
}

} // namespace taar::controller

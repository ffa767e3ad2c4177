// taar: stage-oriented pipeline driver for trap-aware adaptive restart.
//
// Subcommands map to pipeline stages: segment -> annotate -> estimate-escape
// -> build-dataset for corpus construction, and diagnose / run / eval /
// report for inference-time control and measurement. All stages speak JSONL
// and CSV; --mock serves every endpoint from a local scripted server so the
// whole pipeline runs deterministically offline.

#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "taar/annotator.hpp"
#include "taar/config.hpp"
#include "taar/controller.hpp"
#include "taar/escape.hpp"
#include "taar/forge.hpp"
#include "taar/gateway.hpp"
#include "taar/harness.hpp"
#include "taar/jsonl.hpp"
#include "taar/metrics.hpp"
#include "taar/mock_server.hpp"
#include "taar/prompts.hpp"
#include "taar/trace.hpp"
#include "taar/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;
using namespace taar;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitMissingInput = 3;
constexpr int kExitEndpoint = 4;

struct CliError : std::runtime_error {
    int exit_code;
    CliError(int code, const std::string& msg) : std::runtime_error(msg), exit_code(code) {}
};

void require_input(const std::string& path, const std::string& what) {
    if (path.empty()) throw CliError(kExitMissingInput, "missing required input: " + what);
    if (!fs::exists(path)) throw CliError(kExitMissingInput, what + " not found: " + path);
}

struct ProblemManifest {
    std::map<std::string, controller::Problem> by_id;

    static ProblemManifest load(const std::string& path) {
        ProblemManifest manifest;
        for (const auto& j : io::read_jsonl(path)) {
            controller::Problem p;
            p.problem_id = j.at("problem_id").get<std::string>();
            p.problem_text = j.value("problem_text", std::string{});
            p.ground_truth = j.value("answer", std::string{});
            manifest.by_id[p.problem_id] = std::move(p);
        }
        return manifest;
    }

    const controller::Problem& at(const std::string& id) const {
        auto it = by_id.find(id);
        if (it == by_id.end()) {
            throw CliError(kExitMissingInput, "problem missing from manifest: " + id);
        }
        return it->second;
    }
};

// Endpoints resolve against the mock server in mock mode; a live run needs a
// configured base_url for every role it touches.
struct Endpoints {
    config::PipelineConfig* cfg = nullptr;
    std::unique_ptr<mock::MockServer> mock_server;

    void init(config::PipelineConfig& config, const std::string& mock_script_flag) {
        cfg = &config;
        if (!config.mock_mode) return;
        std::string script_path =
            !mock_script_flag.empty() ? mock_script_flag : config.mock_script_path;
        mock::MockScript script;
        if (!script_path.empty()) {
            require_input(script_path, "mock script");
            script = mock::MockScript::from_json(json::parse(io::read_file(script_path)));
        } else {
            script.unmatched = mock::UnmatchedBehavior::fallback;
            script.fallback.text = "\\boxed{0}";
        }
        mock_server = std::make_unique<mock::MockServer>(std::move(script));
        mock_server->start();
    }

    gateway::EndpointConfig get(const std::string& role) const {
        gateway::EndpointConfig ep;
        auto it = cfg->endpoints.find(role);
        if (it != cfg->endpoints.end()) ep = it->second;
        if (mock_server) {
            ep.base_url = mock_server->base_url();
            ep.api_key_env.clear();
            if (ep.model_name.empty()) ep.model_name = "mock-" + role;
            if (cfg->endpoints.find(role) == cfg->endpoints.end()) {
                ep.timeout_s = 10.0;
                ep.max_retries = 1;
                ep.backoff_ms = 5;
            }
        } else if (ep.base_url.empty()) {
            throw CliError(kExitEndpoint,
                           "endpoint '" + role + "' has no base_url and --mock is off");
        }
        return ep;
    }
};

// ---------------------------------------------------------------------------
// segment
// ---------------------------------------------------------------------------

int cmd_segment(const std::string& input, const std::string& output, std::size_t min_len) {
    require_input(input, "--input");
    auto records = io::read_jsonl(input);
    std::vector<ordered_json> out;
    out.reserve(records.size());
    for (const auto& j : records) {
        auto traj = trace::make_trajectory(j.at("problem_id").get<std::string>(),
                                           j.value("model_id", std::string{}),
                                           j.value("problem_text", std::string{}),
                                           j.value("raw_output", std::string{}), min_len);
        if (j.contains("completion_tokens") && !j.at("completion_tokens").is_null()) {
            traj.completion_tokens = j.at("completion_tokens").get<long long>();
        }
        if (j.contains("final_answer") && !j.at("final_answer").is_null()) {
            traj.final_answer = j.at("final_answer").get<std::string>();
        }
        if (j.contains("is_correct") && !j.at("is_correct").is_null()) {
            traj.is_correct = j.at("is_correct").get<bool>();
        }
        out.push_back(trace::to_json(traj));
    }
    io::write_jsonl(output, out);
    std::cout << "segment: " << out.size() << " trajectories -> " << output << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// annotate
// ---------------------------------------------------------------------------

int cmd_annotate(const Endpoints& endpoints, const config::PipelineConfig& cfg,
                 const std::string& trajectories, const std::string& problems,
                 const std::string& output) {
    require_input(trajectories, "--trajectories");
    require_input(problems, "--problems");
    auto manifest = ProblemManifest::load(problems);
    auto judge = endpoints.get("judge");

    std::vector<trace::SegmentedTrajectory> trajs;
    for (const auto& j : io::read_jsonl(trajectories)) {
        trajs.push_back(trace::trajectory_from_json(j));
    }

    std::vector<gateway::BatchRequest> requests;
    std::vector<std::size_t> request_traj; // request -> trajectory index
    gateway::DecodingConfig judge_decoding;
    judge_decoding.temperature = 0.0; // deterministic annotation
    judge_decoding.max_tokens = 4096;
    for (std::size_t i = 0; i < trajs.size(); ++i) {
        const auto& traj = trajs[i];
        if (traj.segments.empty()) continue; // nothing to annotate
        annotator::JudgeRequest req{manifest.at(traj.problem_id).problem_text, traj.segments,
                                    manifest.at(traj.problem_id).ground_truth};
        gateway::BatchRequest breq;
        breq.messages = {gateway::user_message(annotator::build_judge_prompt(req))};
        breq.decoding = judge_decoding;
        requests.push_back(std::move(breq));
        request_traj.push_back(i);
    }
    auto batch = gateway::generate_batch(requests, judge, cfg.max_in_flight);
    std::map<std::size_t, const gateway::GenerationResult*> result_of;
    for (std::size_t r = 0; r < batch.size(); ++r) result_of[request_traj[r]] = &batch[r];

    std::vector<ordered_json> out;
    int api_errors = 0;
    int parse_errors = 0;
    for (std::size_t i = 0; i < trajs.size(); ++i) {
        ordered_json rec;
        rec["problem_id"] = trajs[i].problem_id;
        rec["model_id"] = trajs[i].model_id;
        if (!result_of.count(i)) {
            rec["status"] = "missing_field";
            rec["error"] = "trajectory has no segments";
            out.push_back(std::move(rec));
            continue;
        }
        const auto& result = *result_of.at(i);
        if (!result.ok()) {
            ++api_errors;
            rec["status"] = "api_error";
            rec["error"] = result.error->message;
            out.push_back(std::move(rec));
            continue;
        }
        auto parsed = annotator::parse_judge_output(result.text, trajs[i].segment_count());
        rec["judge_raw"] = result.text;
        if (!parsed.ok()) {
            ++parse_errors;
            rec["status"] = "json_error";
            rec["error"] = parsed.error->message;
            out.push_back(std::move(rec));
            continue;
        }
        auto report = annotator::validate_annotation(*parsed.annotation, trajs[i].segment_count());
        rec["status"] = "ok";
        rec["annotation"] = annotator::render_annotation_json(*parsed.annotation);
        ordered_json validation;
        validation["ok"] = report.ok;
        validation["violations"] = report.violations;
        rec["validation"] = std::move(validation);
        out.push_back(std::move(rec));
    }
    io::write_jsonl(output, out);
    std::cout << "annotate: " << out.size() << " records (" << api_errors << " api errors, "
              << parse_errors << " parse errors) -> " << output << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// estimate-escape
// ---------------------------------------------------------------------------

int cmd_estimate_escape(const Endpoints& endpoints, const config::PipelineConfig& cfg,
                        const std::string& trajectories, const std::string& annotations,
                        const std::string& problems, const std::string& output, int budget,
                        std::uint64_t seed) {
    require_input(trajectories, "--trajectories");
    require_input(annotations, "--annotations");
    require_input(problems, "--problems");
    auto manifest = ProblemManifest::load(problems);
    auto reasoner = endpoints.get("reasoner");
    auto verifier = verify::make_verifier(cfg.verifier);

    std::map<std::string, trace::SegmentedTrajectory> trajs;
    for (const auto& j : io::read_jsonl(trajectories)) {
        auto traj = trace::trajectory_from_json(j);
        trajs[traj.problem_id + "\x1f" + traj.model_id] = std::move(traj);
    }

    std::vector<ordered_json> out;
    int estimated = 0;
    int skipped = 0;
    for (const auto& j : io::read_jsonl(annotations)) {
        if (j.value("status", std::string{}) != "ok") {
            ++skipped;
            continue;
        }
        const std::string key = j.at("problem_id").get<std::string>() + "\x1f" +
                                j.value("model_id", std::string{});
        auto it = trajs.find(key);
        if (it == trajs.end()) {
            ++skipped;
            continue;
        }
        const auto& traj = it->second;
        auto parsed = annotator::parse_judge_output(j.at("annotation").dump(),
                                                    traj.segment_count());
        if (!parsed.ok() || !parsed.annotation->has_trap()) {
            ++skipped;
            continue;
        }
        const auto& problem = manifest.at(traj.problem_id);
        escape::CutPlan plan;
        try {
            plan = escape::plan_cuts(*parsed.annotation, traj.segment_count(), budget, seed);
        } catch (const escape::DegenerateTrapError&) {
            ++skipped;
            continue;
        }
        auto estimate = escape::estimate_escape(
            traj, plan, reasoner, escape::make_verify_fn(*verifier, problem.ground_truth),
            cfg.decoding, cfg.max_in_flight, seed);
        ++estimated;

        ordered_json rec;
        rec["problem_id"] = traj.problem_id;
        rec["model_id"] = traj.model_id;
        rec["plan"] = escape::to_json(plan);
        rec["estimate"] = escape::to_json(estimate);
        rec["rng_seed"] = seed;
        out.push_back(std::move(rec));
    }
    io::write_jsonl(output, out);
    std::cout << "estimate-escape: " << estimated << " estimated, " << skipped << " skipped -> "
              << output << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// build-dataset
// ---------------------------------------------------------------------------

forge::TrajectoryRecord assemble_record(const trace::SegmentedTrajectory& traj,
                                        const json* annotation_line, const json* escape_line,
                                        const controller::Problem& problem,
                                        const verify::Verifier& verifier) {
    forge::TrajectoryRecord rec;
    rec.problem_id = traj.problem_id;
    rec.trajectory = traj;
    auto scale = forge::parse_model_scale(traj.model_id);
    rec.model_scale = scale.value_or(forge::ModelScale::s4B);

    if (traj.is_correct) {
        rec.is_correct = *traj.is_correct;
    } else {
        rec.is_correct = verifier.verify(traj.raw_output, problem.ground_truth).is_correct;
    }

    if (traj.problem_text.empty() || traj.reasoning_text.empty()) {
        rec.pipeline_status = forge::PipelineStatus::missing_field;
        return rec;
    }
    if (!annotation_line) {
        rec.pipeline_status = forge::PipelineStatus::api_error;
        return rec;
    }
    const std::string status = annotation_line->value("status", std::string{});
    if (status == "api_error") {
        rec.pipeline_status = forge::PipelineStatus::api_error;
        return rec;
    }
    if (status != "ok") {
        rec.pipeline_status = forge::PipelineStatus::json_error;
        return rec;
    }
    auto parsed = annotator::parse_judge_output(annotation_line->at("annotation").dump(),
                                                traj.segment_count());
    if (!parsed.ok()) {
        rec.pipeline_status = forge::PipelineStatus::json_error;
        return rec;
    }
    rec.annotation = parsed.annotation;
    if (rec.annotation->has_trap()) {
        if (escape_line) {
            rec.escape = escape::estimate_from_json(escape_line->at("estimate"));
        } else {
            rec.pipeline_status = forge::PipelineStatus::missing_field;
            return rec;
        }
    }
    rec.pipeline_status = forge::PipelineStatus::ok;
    return rec;
}

int cmd_build_dataset(const config::PipelineConfig& cfg, const std::string& trajectories,
                      const std::string& annotations, const std::string& escapes,
                      const std::string& problems, const std::string& outdir,
                      std::uint64_t split_seed, std::uint64_t seed) {
    require_input(trajectories, "--trajectories");
    require_input(annotations, "--annotations");
    require_input(problems, "--problems");
    fs::create_directories(outdir);
    auto manifest = ProblemManifest::load(problems);
    auto verifier = verify::make_verifier(cfg.verifier);

    auto key_of = [](const json& j) {
        return j.at("problem_id").get<std::string>() + "\x1f" + j.value("model_id", std::string{});
    };
    std::map<std::string, json> ann_by_key;
    for (const auto& j : io::read_jsonl(annotations)) ann_by_key[key_of(j)] = j;
    std::map<std::string, json> esc_by_key;
    if (!escapes.empty()) {
        require_input(escapes, "--escapes");
        for (const auto& j : io::read_jsonl(escapes)) esc_by_key[key_of(j)] = j;
    }

    std::vector<forge::TrajectoryRecord> records;
    for (const auto& j : io::read_jsonl(trajectories)) {
        auto traj = trace::trajectory_from_json(j);
        const std::string key = traj.problem_id + "\x1f" + traj.model_id;
        const json* ann = ann_by_key.count(key) ? &ann_by_key.at(key) : nullptr;
        const json* esc = esc_by_key.count(key) ? &esc_by_key.at(key) : nullptr;
        records.push_back(
            assemble_record(traj, ann, esc, manifest.at(traj.problem_id), *verifier));
    }

    auto pre = forge::preprocess_filter(records);
    auto consistent = forge::consistency_filter(pre.kept);

    // correctness patterns are a problem-level property (all four scales
    // present); the table rows count trajectories of those problems
    std::map<std::string, std::map<forge::ModelScale, bool>> per_problem;
    for (const auto& rec : consistent.kept) {
        per_problem[rec.problem_id][rec.model_scale] = rec.is_correct;
    }
    std::map<std::string, forge::CorrectnessPattern> pattern_of_problem;
    int incomplete = 0;
    for (const auto& [pid, scales] : per_problem) {
        if (scales.size() != forge::kAllScales.size()) {
            ++incomplete;
            continue;
        }
        pattern_of_problem[pid] = forge::compute_patterns(scales);
    }
    std::vector<std::pair<forge::CorrectnessPattern, bool>> pattern_rows;
    for (const auto& rec : consistent.kept) {
        auto it = pattern_of_problem.find(rec.problem_id);
        if (it == pattern_of_problem.end()) continue;
        pattern_rows.emplace_back(it->second, rec.has_trap());
    }
    auto table = forge::pattern_table(pattern_rows);
    {
        std::vector<std::vector<std::string>> rows;
        for (const auto& r : table) {
            const double rate = r.total ? static_cast<double>(r.with_trap) / r.total : 0.0;
            rows.push_back({r.pattern, std::to_string(r.total), std::to_string(r.with_trap),
                            std::to_string(r.no_trap), harness::format_double(rate)});
        }
        io::write_csv((fs::path(outdir) / "pattern_table.csv").string(),
                      {"pattern", "total", "with_trap", "no_trap", "trap_rate"}, rows);
    }
    {
        std::map<int, std::pair<int, int>> by_difficulty; // difficulty -> {count, with_trap}
        for (const auto& [pattern, has_trap] : pattern_rows) {
            auto& acc = by_difficulty[pattern.difficulty()];
            ++acc.first;
            acc.second += has_trap ? 1 : 0;
        }
        std::vector<std::vector<std::string>> rows;
        for (const auto& [difficulty, acc] : by_difficulty) {
            const double rate = acc.first ? static_cast<double>(acc.second) / acc.first : 0.0;
            rows.push_back({std::to_string(difficulty), forge::difficulty_label(difficulty),
                            std::to_string(acc.first), harness::format_double(rate)});
        }
        io::write_csv((fs::path(outdir) / "difficulty_table.csv").string(),
                      {"difficulty", "label", "trajectories", "trap_rate"}, rows);
    }

    // splits over all problems present in the kept corpus
    std::vector<std::string> problem_ids;
    for (const auto& [pid, _] : per_problem) problem_ids.push_back(pid);
    forge::SplitAssignment assignment;
    if (!problem_ids.empty()) {
        assignment = forge::split_problems(problem_ids, cfg.split_ratios, split_seed);
        io::write_file((fs::path(outdir) / "split_manifest.json").string(),
                       forge::split_manifest_json(assignment, cfg.split_ratios, split_seed).dump(2));
    }

    // filtered corpus
    {
        std::vector<ordered_json> corpus;
        for (const auto& rec : consistent.kept) {
            ordered_json j;
            j["problem_id"] = rec.problem_id;
            j["model_scale"] = std::string(forge::scale_name(rec.model_scale));
            j["model_id"] = rec.trajectory.model_id;
            j["is_correct"] = rec.is_correct;
            j["annotation"] = annotator::render_annotation_json(*rec.annotation);
            if (rec.escape) j["escape"] = escape::to_json(*rec.escape);
            j["split"] = assignment.by_problem.count(rec.problem_id)
                             ? std::string(forge::split_name(assignment.at(rec.problem_id)))
                             : std::string{};
            corpus.push_back(std::move(j));
        }
        io::write_jsonl((fs::path(outdir) / "corpus.jsonl").string(), corpus);
    }

    // diagnostic pairs
    forge::PairConfig pair_config;
    pair_config.copies = cfg.pair_copies;
    pair_config.delta_max = cfg.delta_max;
    std::vector<ordered_json> pairs;
    std::uint64_t pair_seed = seed;
    for (const auto& rec : consistent.kept) {
        const std::string split = assignment.by_problem.count(rec.problem_id)
                                      ? std::string(forge::split_name(assignment.at(rec.problem_id)))
                                      : std::string{};
        for (auto& pair : forge::make_diagnostic_pairs(rec, split, pair_config, pair_seed++)) {
            pairs.push_back(forge::to_json(pair));
        }
    }
    io::write_jsonl((fs::path(outdir) / "pairs.jsonl").string(), pairs);

    // audit worksheet
    {
        const std::size_t n = std::min<std::size_t>(100, consistent.kept.size());
        auto rows = forge::sample_audit(consistent.kept, n, seed);
        std::vector<std::vector<std::string>> csv_rows;
        for (const auto& row : rows) {
            csv_rows.push_back({row.problem_id, std::string(forge::scale_name(row.model_scale)),
                                row.trap_label, row.trap_text, row.window_labels,
                                row.escape_label, "", "", "", "", "", ""});
        }
        io::write_csv((fs::path(outdir) / "audit_worksheet.csv").string(),
                      {"problem_id", "model_scale", "trap_label", "trap_text", "window_labels",
                       "escape_label", "a1_trap_ok", "a1_windows_ok", "a1_escape_ok", "a2_trap_ok",
                       "a2_windows_ok", "a2_escape_ok"},
                      csv_rows);
    }

    ordered_json ledger = ordered_json::object();
    for (const auto& [k, v] : pre.ledger) ledger["preprocess:" + k] = v;
    for (const auto& [k, v] : consistent.ledger) ledger["consistency:" + k] = v;
    std::cout << "build-dataset: " << records.size() << " in, " << consistent.kept.size()
              << " kept, removed " << ledger.dump() << ", " << pairs.size() << " pairs, "
              << incomplete << " problems lacking all scales -> " << outdir << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// diagnose
// ---------------------------------------------------------------------------

int cmd_diagnose(const Endpoints& endpoints, const config::PipelineConfig& cfg,
                 const std::string& trajectories, const std::string& output,
                 double prefix_fraction) {
    require_input(trajectories, "--trajectories");
    auto policy = endpoints.get("policy");

    std::vector<trace::SegmentedTrajectory> trajs;
    for (const auto& j : io::read_jsonl(trajectories)) {
        trajs.push_back(trace::trajectory_from_json(j));
    }
    gateway::DecodingConfig policy_decoding;
    policy_decoding.temperature = 0.0;
    policy_decoding.max_tokens = 1024;

    std::vector<gateway::BatchRequest> requests;
    for (const auto& traj : trajs) {
        const int T = traj.segment_count();
        const int visible =
            T == 0 ? 0
                   : std::clamp(static_cast<int>(std::ceil(prefix_fraction * T)), 1, T);
        std::vector<trace::Segment> shown(traj.segments.begin(),
                                          traj.segments.begin() + visible);
        gateway::BatchRequest req;
        req.messages = {gateway::user_message(
            prompts::render_diag_input(traj.model_id, traj.problem_text, shown))};
        req.decoding = policy_decoding;
        requests.push_back(std::move(req));
    }
    auto results = gateway::generate_batch(requests, policy, cfg.max_in_flight);

    std::vector<ordered_json> out;
    for (std::size_t i = 0; i < trajs.size(); ++i) {
        ordered_json rec;
        rec["problem_id"] = trajs[i].problem_id;
        rec["model_id"] = trajs[i].model_id;
        if (!results[i].ok()) {
            rec["status"] = "api_error";
            rec["error"] = results[i].error->message;
        } else {
            auto diag = controller::parse_diagnosis(results[i].text, trajs[i].segment_count());
            rec["status"] = "ok";
            rec["trap_index"] = diag.trap_index ? ordered_json(*diag.trap_index)
                                                : ordered_json(nullptr);
            rec["escape_probability"] = diag.escape_prob ? ordered_json(*diag.escape_prob)
                                                         : ordered_json(nullptr);
            rec["parse_error"] = diag.parse_error;
            if (diag.violation) rec["violation"] = *diag.violation;
            rec["policy_raw"] = results[i].text;
        }
        out.push_back(std::move(rec));
    }
    io::write_jsonl(output, out);
    std::cout << "diagnose: " << out.size() << " trajectories -> " << output << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// run / eval / report
// ---------------------------------------------------------------------------

controller::RunConfig run_config_from(const config::PipelineConfig& cfg) {
    controller::RunConfig rc;
    rc.thresholds = cfg.thresholds;
    rc.decoding = cfg.decoding;
    rc.operators.default_decoding = cfg.decoding;
    rc.operators.strong_operator = controller::parse_strong_operator(cfg.strong_operator);
    rc.operators.suffix_text =
        prompts::reboot_suffix(prompts::parse_suffix_language(cfg.suffix_language)).text;
    rc.prefix_fraction = cfg.prefix_fraction;
    rc.seed = cfg.seed;
    rc.min_segment_len = cfg.min_segment_len;
    rc.aggregator = cfg.aggregator == "vote" ? controller::Aggregator::vote
                                             : controller::Aggregator::avg;
    return rc;
}

int cmd_run(const Endpoints& endpoints, const config::PipelineConfig& cfg,
            const std::string& problems, const std::string& output) {
    require_input(problems, "--problems");
    auto manifest = ProblemManifest::load(problems);
    auto reasoner = endpoints.get("reasoner");
    auto policy = endpoints.get("policy");
    auto verifier = verify::make_verifier(cfg.verifier);
    auto rc = run_config_from(cfg);

    std::vector<ordered_json> out;
    double accuracy_sum = 0.0;
    int accuracy_n = 0;
    for (const auto& [pid, problem] : manifest.by_id) {
        auto run = controller::run_taar(problem, reasoner, policy, *verifier, cfg.budget_k, rc);
        if (run.accuracy) {
            accuracy_sum += *run.accuracy;
            ++accuracy_n;
        }
        auto j = controller::to_json(run);
        j["model_id"] = reasoner.model_name;
        out.push_back(std::move(j));
    }
    io::write_jsonl(output, out);
    std::cout << "run: " << out.size() << " problems, budget_k=" << cfg.budget_k;
    if (accuracy_n > 0) {
        std::cout << ", accuracy=" << harness::format_double(accuracy_sum / accuracy_n);
    }
    std::cout << " -> " << output << "\n";
    return 0;
}

// Gold records for the cut-strategy comparison come from upstream trajectory
// and annotation JSONL; only records with validated traps qualify.
std::vector<harness::GoldRecord> load_gold_records(const std::string& trajectories,
                                                   const std::string& annotations,
                                                   const ProblemManifest& manifest) {
    std::map<std::string, trace::SegmentedTrajectory> trajs;
    for (const auto& j : io::read_jsonl(trajectories)) {
        auto traj = trace::trajectory_from_json(j);
        trajs[traj.problem_id + "\x1f" + traj.model_id] = std::move(traj);
    }
    std::vector<harness::GoldRecord> gold;
    for (const auto& j : io::read_jsonl(annotations)) {
        if (j.value("status", std::string{}) != "ok") continue;
        const std::string key = j.at("problem_id").get<std::string>() + "\x1f" +
                                j.value("model_id", std::string{});
        auto it = trajs.find(key);
        if (it == trajs.end()) continue;
        auto parsed = annotator::parse_judge_output(j.at("annotation").dump(),
                                                    it->second.segment_count());
        if (!parsed.ok() || !parsed.annotation->has_trap()) continue;
        harness::GoldRecord rec;
        rec.trajectory = it->second;
        rec.annotation = *parsed.annotation;
        rec.ground_truth = manifest.at(it->second.problem_id).ground_truth;
        rec.model_id = it->second.model_id;
        gold.push_back(std::move(rec));
    }
    return gold;
}

int cmd_eval(const Endpoints& endpoints, const config::PipelineConfig& cfg,
             const std::string& problems, const std::string& methods_csv,
             const std::string& outdir, const std::string& trajectories,
             const std::string& annotations, int cut_budget) {
    require_input(problems, "--problems");
    fs::create_directories(outdir);
    auto manifest = ProblemManifest::load(problems);
    std::vector<controller::Problem> dataset;
    for (const auto& [_, p] : manifest.by_id) dataset.push_back(p);

    auto reasoner = endpoints.get("reasoner");
    auto policy = endpoints.get("policy");
    auto verifier = verify::make_verifier(cfg.verifier);
    auto rc = run_config_from(cfg);

    std::vector<harness::MethodRunReport> reports;
    std::string token;
    std::stringstream ss(methods_csv);
    while (std::getline(ss, token, ',')) {
        if (token.empty()) continue;
        auto spec = harness::parse_method(token, cfg.budget_k);
        reports.push_back(
            harness::run_method(dataset, spec, reasoner, policy, *verifier, rc));
        const auto& r = reports.back();
        std::cout << "eval[" << r.method << "]: accuracy="
                  << (r.accuracy ? harness::format_double(*r.accuracy) : "undefined")
                  << " extra_tokens=" << r.tokens_extra << "\n";
    }
    harness::write_accuracy_csv((fs::path(outdir) / "accuracy.csv").string(), reports);

    harness::EscapeRateTable escape_table;
    std::map<double, std::optional<double>> auc;
    if (!trajectories.empty() && !annotations.empty()) {
        require_input(trajectories, "--trajectories");
        require_input(annotations, "--annotations");
        auto gold = load_gold_records(trajectories, annotations, manifest);
        escape_table = harness::cut_strategy_escape(gold, reasoner, *verifier, cut_budget,
                                                    cfg.seed, cfg.max_in_flight, cfg.decoding);
        harness::write_escape_rates_csv((fs::path(outdir) / "escape_rates.csv").string(),
                                        escape_table);
        harness::write_long_csv((fs::path(outdir) / "long.csv").string(), escape_table, auc);
        std::cout << "eval: cut-strategy table over " << gold.size() << " gold records ("
                  << escape_table.skipped << " skipped)\n";
    }
    io::write_file((fs::path(outdir) / "bundle.json").string(),
                   harness::bundle_json(reports, escape_table, auc, {}).dump(2));
    std::cout << "eval: " << reports.size() << " methods -> " << outdir << "\n";
    return 0;
}

int cmd_report(const std::string& runs, const std::string& ablation_runs,
               const std::string& outdir) {
    require_input(runs, "--runs");
    fs::create_directories(outdir);
    auto totals_of = [](const std::string& path) {
        std::map<std::string, metrics::TokenTotals> totals;
        for (const auto& j : io::read_jsonl(path)) {
            auto& t = totals[j.value("model_id", std::string("unknown"))];
            t.baseline += j.value("tokens_baseline", 0LL);
            t.extra += j.value("tokens_extra", 0LL);
        }
        return totals;
    };
    auto taar_totals = totals_of(runs);
    std::map<std::string, metrics::TokenTotals> ablation_totals;
    if (!ablation_runs.empty()) {
        require_input(ablation_runs, "--ablation-runs");
        ablation_totals = totals_of(ablation_runs);
    }
    auto rows = metrics::token_report(taar_totals, ablation_totals);
    harness::write_tokens_csv((fs::path(outdir) / "tokens.csv").string(), rows);
    std::cout << "report: " << rows.size() - 1 << " model rows -> " << outdir << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "taar: trap-aware adaptive restart pipeline.\n"
        "Defaults: escape budget N=36 per trajectory, gating thresholds hi=0.6 / lo=0.1,\n"
        "path budget K=4, split 80/10/10 at seed 42, decoding temperature 0.7 with\n"
        "max_tokens 32768 and top-p disabled."};
    app.require_subcommand(1);

    std::string config_path;
    bool mock_flag = false;
    std::string mock_script_flag;
    app.add_option("--config", config_path, "pipeline config file (JSON)");
    app.add_flag("--mock", mock_flag, "serve all endpoints from the bundled mock server");
    app.add_option("--mock-script", mock_script_flag, "mock scenario table (JSON)");

    // segment
    auto* seg_cmd = app.add_subcommand("segment", "split raw outputs into indexed segments");
    std::string seg_input;
    std::string seg_output = "trajectories.jsonl";
    int seg_min_len = -1;
    seg_cmd->add_option("--input", seg_input, "raw outputs JSONL")->required();
    seg_cmd->add_option("--output", seg_output, "trajectory JSONL path");
    seg_cmd->add_option("--min-len", seg_min_len, "minimum segment length in characters (default 200)");

    // annotate
    auto* ann_cmd = app.add_subcommand("annotate", "judge-annotate traps and repair windows");
    std::string ann_traj;
    std::string ann_problems;
    std::string ann_output = "annotations.jsonl";
    ann_cmd->add_option("--trajectories", ann_traj, "trajectory JSONL")->required();
    ann_cmd->add_option("--problems", ann_problems, "problem manifest JSONL")->required();
    ann_cmd->add_option("--output", ann_output, "annotation JSONL path");

    // estimate-escape
    auto* esc_cmd = app.add_subcommand("estimate-escape", "resample continuations and estimate p_escape");
    std::string esc_traj;
    std::string esc_ann;
    std::string esc_problems;
    std::string esc_output = "escapes.jsonl";
    int escape_budget_flag = -1;
    std::uint64_t esc_seed_flag = 0;
    bool esc_seed_set = false;
    esc_cmd->add_option("--trajectories", esc_traj, "trajectory JSONL")->required();
    esc_cmd->add_option("--annotations", esc_ann, "annotation JSONL")->required();
    esc_cmd->add_option("--problems", esc_problems, "problem manifest JSONL")->required();
    esc_cmd->add_option("--output", esc_output, "escape JSONL path");
    esc_cmd->add_option("--escape-budget", escape_budget_flag,
                        "N resampled continuations per trajectory (default 36)");
    esc_cmd->add_option("--seed", esc_seed_flag, "cut-plan RNG seed")
        ->each([&esc_seed_set](const std::string&) { esc_seed_set = true; });

    // build-dataset
    auto* ds_cmd = app.add_subcommand("build-dataset", "filter, bucket, split and export training pairs");
    std::string ds_traj;
    std::string ds_ann;
    std::string ds_esc;
    std::string ds_problems;
    std::string ds_outdir = "dataset";
    std::uint64_t ds_split_seed_flag = 0;
    bool ds_split_seed_set = false;
    std::uint64_t ds_seed_flag = 0;
    bool ds_seed_set = false;
    ds_cmd->add_option("--trajectories", ds_traj, "trajectory JSONL")->required();
    ds_cmd->add_option("--annotations", ds_ann, "annotation JSONL")->required();
    ds_cmd->add_option("--escapes", ds_esc, "escape JSONL");
    ds_cmd->add_option("--problems", ds_problems, "problem manifest JSONL")->required();
    ds_cmd->add_option("--outdir", ds_outdir, "output directory");
    ds_cmd->add_option("--seed", ds_split_seed_flag, "split shuffle seed (default 42)")
        ->each([&ds_split_seed_set](const std::string&) { ds_split_seed_set = true; });
    ds_cmd->add_option("--pair-seed", ds_seed_flag, "truncation-augmentation seed")
        ->each([&ds_seed_set](const std::string&) { ds_seed_set = true; });

    // diagnose
    auto* diag_cmd = app.add_subcommand("diagnose", "query the diagnostic policy on trajectories");
    std::string diag_traj;
    std::string diag_output = "diagnoses.jsonl";
    double diag_prefix_flag = -1.0;
    diag_cmd->add_option("--trajectories", diag_traj, "trajectory JSONL")->required();
    diag_cmd->add_option("--output", diag_output, "diagnosis JSONL path");
    diag_cmd->add_option("--prefix-fraction", diag_prefix_flag,
                         "fraction of segments shown to the policy (default 1.0)");

    // run
    auto* run_cmd = app.add_subcommand("run", "adaptive truncate-and-restart over a problem set");
    std::string run_problems;
    std::string run_output = "runs.jsonl";
    int budget_k_flag = -1;
    std::string thresholds_flag;
    std::string strong_op_flag;
    std::string suffix_lang_flag;
    double run_prefix_flag = -1.0;
    std::string aggregator_flag;
    run_cmd->add_option("--problems", run_problems, "problem manifest JSONL")->required();
    run_cmd->add_option("--output", run_output, "run JSONL path");
    run_cmd->add_option("--budget-k", budget_k_flag, "sampled paths per problem (default 4)");
    run_cmd->add_option("--thresholds", thresholds_flag,
                        "hi,lo gating thresholds (default 0.6,0.1)");
    run_cmd->add_option("--strong-operator", strong_op_flag,
                        "strong restart operator: high_temp | suffix | both");
    run_cmd->add_option("--suffix-lang", suffix_lang_flag, "reboot suffix language (en default)");
    run_cmd->add_option("--prefix-fraction", run_prefix_flag,
                        "diagnose on the first X fraction of segments");
    run_cmd->add_option("--aggregator", aggregator_flag, "avg | vote");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "compare methods under a fixed budget");
    std::string eval_problems;
    std::string eval_methods = "avg_k,taar";
    std::string eval_outdir = "reports";
    int eval_budget_flag = -1;
    std::string eval_traj;
    std::string eval_ann;
    int eval_cut_budget = 6;
    eval_cmd->add_option("--problems", eval_problems, "problem manifest JSONL")->required();
    eval_cmd->add_option("--methods", eval_methods,
                         "comma list: avg_k, taar, fixed_cut@q, all_traps, random_p");
    eval_cmd->add_option("--outdir", eval_outdir, "report directory");
    eval_cmd->add_option("--budget-k", eval_budget_flag, "sampled paths per problem");
    eval_cmd->add_option("--trajectories", eval_traj,
                         "trajectory JSONL for the cut-strategy escape table");
    eval_cmd->add_option("--annotations", eval_ann,
                         "gold annotation JSONL for the cut-strategy escape table");
    eval_cmd->add_option("--cut-budget", eval_cut_budget,
                         "resample budget per cut strategy (default 6)");

    // report
    auto* rep_cmd = app.add_subcommand("report", "token-efficiency tables from run JSONL");
    std::string rep_runs;
    std::string rep_ablation;
    std::string rep_outdir = "reports";
    rep_cmd->add_option("--runs", rep_runs, "run JSONL")->required();
    rep_cmd->add_option("--ablation-runs", rep_ablation, "ablation run JSONL");
    rep_cmd->add_option("--outdir", rep_outdir, "report directory");

    CLI11_PARSE(app, argc, argv);

    try {
        config::PipelineConfig cfg;
        if (!config_path.empty()) {
            try {
                cfg = config::load_config(config_path);
            } catch (const config::ConfigError& e) {
                std::cerr << "error: " << e.what() << "\n";
                return kExitConfig;
            }
        }
        // flag > config file > default
        if (mock_flag) cfg.mock_mode = true;
        if (budget_k_flag > 0) cfg.budget_k = budget_k_flag;
        if (eval_budget_flag > 0) cfg.budget_k = eval_budget_flag;
        if (escape_budget_flag > 0) cfg.escape_budget = escape_budget_flag;
        if (!thresholds_flag.empty()) {
            const auto comma = thresholds_flag.find(',');
            if (comma == std::string::npos) {
                std::cerr << "error: --thresholds expects hi,lo\n";
                return kExitConfig;
            }
            cfg.thresholds.hi = std::stod(thresholds_flag.substr(0, comma));
            cfg.thresholds.lo = std::stod(thresholds_flag.substr(comma + 1));
            if (!(cfg.thresholds.lo < cfg.thresholds.hi)) {
                std::cerr << "error: thresholds.lo must be < thresholds.hi\n";
                return kExitConfig;
            }
        }
        if (!strong_op_flag.empty()) cfg.strong_operator = strong_op_flag;
        if (!suffix_lang_flag.empty()) cfg.suffix_language = suffix_lang_flag;
        if (run_prefix_flag >= 0.0) cfg.prefix_fraction = run_prefix_flag;
        if (diag_prefix_flag >= 0.0) cfg.prefix_fraction = diag_prefix_flag;
        if (!aggregator_flag.empty()) cfg.aggregator = aggregator_flag;
        if (seg_min_len > 0) cfg.min_segment_len = static_cast<std::size_t>(seg_min_len);
        if (ds_split_seed_set) cfg.split_seed = ds_split_seed_flag;
        if (ds_seed_set || esc_seed_set) cfg.seed = ds_seed_set ? ds_seed_flag : esc_seed_flag;

        Endpoints endpoints;
        endpoints.init(cfg, mock_script_flag);

        if (*seg_cmd) return cmd_segment(seg_input, seg_output, cfg.min_segment_len);
        if (*ann_cmd) return cmd_annotate(endpoints, cfg, ann_traj, ann_problems, ann_output);
        if (*esc_cmd) {
            return cmd_estimate_escape(endpoints, cfg, esc_traj, esc_ann, esc_problems,
                                       esc_output, cfg.escape_budget, cfg.seed);
        }
        if (*ds_cmd) {
            return cmd_build_dataset(cfg, ds_traj, ds_ann, ds_esc, ds_problems, ds_outdir,
                                     cfg.split_seed, cfg.seed);
        }
        if (*diag_cmd) return cmd_diagnose(endpoints, cfg, diag_traj, diag_output, cfg.prefix_fraction);
        if (*run_cmd) return cmd_run(endpoints, cfg, run_problems, run_output);
        if (*eval_cmd) {
            return cmd_eval(endpoints, cfg, eval_problems, eval_methods, eval_outdir, eval_traj,
                            eval_ann, eval_cut_budget);
        }
        if (*rep_cmd) return cmd_report(rep_runs, rep_ablation, rep_outdir);
    } catch (const CliError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code;
    } catch (const config::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

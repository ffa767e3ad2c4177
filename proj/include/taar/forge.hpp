#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "taar/annotator.hpp"
#include "taar/escape.hpp"
#include "taar/prompts.hpp"
#include "taar/rng.hpp"
#include "taar/trace.hpp"

namespace taar::forge {

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

enum class ModelScale { s4B, s8B, s20B, s120B };

inline std::string_view scale_name(ModelScale s) {
    switch (s) {
        case ModelScale::s4B: return "4B";
        case ModelScale::s8B: return "8B";
        case ModelScale::s20B: return "20B";
        case ModelScale::s120B: return "120B";
    }
    return "4B";
}

inline constexpr std::array<ModelScale, 4> kAllScales = {ModelScale::s4B, ModelScale::s8B,
                                                         ModelScale::s20B, ModelScale::s120B};

// Scale tag embedded in a model id ("...-120b", "4B-Instruct", ...).
inline std::optional<ModelScale> parse_model_scale(std::string_view model_id) {
    std::string lower;
    lower.reserve(model_id.size());
    for (char c : model_id) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    if (lower.find("120b") != std::string::npos) return ModelScale::s120B;
    if (lower.find("20b") != std::string::npos) return ModelScale::s20B;
    if (lower.find("8b") != std::string::npos) return ModelScale::s8B;
    if (lower.find("4b") != std::string::npos) return ModelScale::s4B;
    return std::nullopt;
}

enum class PipelineStatus { ok, api_error, json_error, missing_field, filtered };

inline std::string_view status_name(PipelineStatus s) {
    switch (s) {
        case PipelineStatus::ok: return "ok";
        case PipelineStatus::api_error: return "api_error";
        case PipelineStatus::json_error: return "json_error";
        case PipelineStatus::missing_field: return "missing_field";
        case PipelineStatus::filtered: return "filtered";
    }
    return "ok";
}

struct TrajectoryRecord {
    std::string problem_id;
    ModelScale model_scale = ModelScale::s4B;
    trace::SegmentedTrajectory trajectory;
    std::optional<annotator::TrapAnnotation> annotation; // absent on parse error
    std::optional<escape::EscapeEstimate> escape;        // present only with a trap
    bool is_correct = false;
    PipelineStatus pipeline_status = PipelineStatus::ok;
    std::string filter_reason; // populated when pipeline_status == filtered

    bool has_trap() const { return annotation && annotation->has_trap(); }
};

// ---------------------------------------------------------------------------
// Filters
// ---------------------------------------------------------------------------

struct FilterOutcome {
    std::vector<TrajectoryRecord> kept;
    std::map<std::string, int> ledger; // removal reason -> count

    int removed() const {
        int n = 0;
        for (const auto& [_, c] : ledger) n += c;
        return n;
    }
};

// Preprocess filtering: drop API-call errors, invalid judge JSON and records
// missing required fields; everything with pipeline_status ok is kept.
inline FilterOutcome preprocess_filter(const std::vector<TrajectoryRecord>& records) {
    FilterOutcome out;
    for (const auto& rec : records) {
        switch (rec.pipeline_status) {
            case PipelineStatus::ok:
                out.kept.push_back(rec);
                break;
            case PipelineStatus::api_error:
                ++out.ledger["api_error"];
                break;
            case PipelineStatus::json_error:
                ++out.ledger["json_error"];
                break;
            case PipelineStatus::missing_field:
                ++out.ledger["missing_field"];
                break;
            case PipelineStatus::filtered:
                ++out.ledger["filtered:" + rec.filter_reason];
                break;
        }
    }
    return out;
}

// Consistency class names follow the three contradiction classes:
// (i) trap + did-not-escape + correct, (ii) trap + escaped + incorrect,
// (iii) no-trap + incorrect.
inline constexpr std::string_view kClassTrapNotEscapedCorrect = "trap_not_escaped_correct";
inline constexpr std::string_view kClassTrapEscapedIncorrect = "trap_escaped_incorrect";
inline constexpr std::string_view kClassNoTrapIncorrect = "no_trap_incorrect";

inline FilterOutcome consistency_filter(const std::vector<TrajectoryRecord>& records) {
    FilterOutcome out;
    for (const auto& rec : records) {
        if (!rec.annotation) { // should not occur after preprocessing
            out.kept.push_back(rec);
            continue;
        }
        const auto& ann = *rec.annotation;
        if (ann.has_trap() && ann.trap_type == annotator::TrapType::not_escaped && rec.is_correct) {
            ++out.ledger[std::string(kClassTrapNotEscapedCorrect)];
        } else if (ann.has_trap() && ann.trap_type == annotator::TrapType::escaped &&
                   !rec.is_correct) {
            ++out.ledger[std::string(kClassTrapEscapedIncorrect)];
        } else if (!ann.has_trap() && !rec.is_correct) {
            ++out.ledger[std::string(kClassNoTrapIncorrect)];
        } else {
            out.kept.push_back(rec);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Correctness patterns and difficulty buckets
// ---------------------------------------------------------------------------

struct CorrectnessPattern {
    // bit order [120B][20B][8B][4B]
    std::array<bool, 4> bits{};

    int correct_count() const {
        int n = 0;
        for (bool b : bits) n += b ? 1 : 0;
        return n;
    }
    int difficulty() const { return 4 - correct_count(); }
    bool excluded() const { return correct_count() == 4; } // 1111 never enters the corpus

    std::string to_string() const {
        std::string s;
        for (bool b : bits) s.push_back(b ? '1' : '0');
        return s;
    }

    bool operator==(const CorrectnessPattern&) const = default;
    auto operator<=>(const CorrectnessPattern&) const = default;
};

inline CorrectnessPattern compute_patterns(const std::map<ModelScale, bool>& per_scale) {
    for (ModelScale s : kAllScales) {
        if (!per_scale.count(s)) {
            throw std::invalid_argument(std::string("missing scale: ") + std::string(scale_name(s)));
        }
    }
    CorrectnessPattern p;
    p.bits[0] = per_scale.at(ModelScale::s120B);
    p.bits[1] = per_scale.at(ModelScale::s20B);
    p.bits[2] = per_scale.at(ModelScale::s8B);
    p.bits[3] = per_scale.at(ModelScale::s4B);
    return p;
}

// Bucket label as reported per difficulty level, e.g. "1 (3/4 correct)".
inline std::string difficulty_label(int difficulty) {
    return std::to_string(difficulty) + " (" + std::to_string(4 - difficulty) + "/4 correct)";
}

// ---------------------------------------------------------------------------
// Train/dev/test split
// ---------------------------------------------------------------------------

enum class Split { train, dev, test };

inline std::string_view split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::dev: return "dev";
        case Split::test: return "test";
    }
    return "train";
}

struct SplitRatios {
    int train = 80;
    int dev = 10;
    int test = 10;
};

struct SplitAssignment {
    std::map<std::string, Split> by_problem;

    Split at(const std::string& problem_id) const {
        auto it = by_problem.find(problem_id);
        if (it == by_problem.end()) throw std::out_of_range("problem not in split: " + problem_id);
        return it->second;
    }
};

// Deterministic keyed shuffle: ids are canonicalized by sorting and then
// Fisher-Yates shuffled with the seed, so the assignment depends only on the
// id set and the seed. Counts are floor-based with the remainder to train;
// every trajectory of a problem inherits the problem's split.
inline SplitAssignment split_problems(std::vector<std::string> problem_ids,
                                      SplitRatios ratios = {}, std::uint64_t seed = 42) {
    if (problem_ids.empty()) throw std::invalid_argument("split_problems: empty input");
    if (ratios.train + ratios.dev + ratios.test != 100) {
        throw std::invalid_argument("split ratios must sum to 100");
    }
    std::sort(problem_ids.begin(), problem_ids.end());
    problem_ids.erase(std::unique(problem_ids.begin(), problem_ids.end()), problem_ids.end());
    std::mt19937_64 rng(seed);
    fisher_yates_shuffle(problem_ids, rng);

    const std::size_t n = problem_ids.size();
    const std::size_t n_dev = n * static_cast<std::size_t>(ratios.dev) / 100;
    const std::size_t n_test = n * static_cast<std::size_t>(ratios.test) / 100;
    const std::size_t n_train = n - n_dev - n_test;

    SplitAssignment assignment;
    for (std::size_t i = 0; i < n; ++i) {
        Split s = Split::train;
        if (i >= n_train && i < n_train + n_dev) s = Split::dev;
        else if (i >= n_train + n_dev) s = Split::test;
        assignment.by_problem[problem_ids[i]] = s;
    }
    return assignment;
}

// ---------------------------------------------------------------------------
// Diagnostic training pairs
// ---------------------------------------------------------------------------

struct PairMeta {
    std::optional<int> t_star;
    std::optional<double> p_escape;
    int delta = 0; // truncation offset past t*; for no-trap pairs, the last included index
    ModelScale model_scale = ModelScale::s4B;
    std::string split;
};

struct DiagnosticPair {
    std::string input;  // policy input rendering
    std::string output; // policy output JSON
    PairMeta meta;
};

struct PairConfig {
    int delta_max = 20;  // cap on the truncation offset
    int copies = 5;      // distinct offsets drawn per trap record
    bool include_no_trap = true;
    // No-trap convention: empty trap_index and escape_probability 1.0 unless
    // configured to omit the probability.
    std::optional<double> no_trap_escape_probability = 1.0;
    bool trap_type_in_extra = false;
};

// Random truncation augmentation: draw distinct offsets delta >= 0 with
// t*+delta <= T-1 and emit one (input, output) pair per offset. A trap in the
// final segment admits only delta=0. No-trap records contribute one
// full-length negative pair when enabled.
inline std::vector<DiagnosticPair> make_diagnostic_pairs(const TrajectoryRecord& record,
                                                         const std::string& split,
                                                         const PairConfig& config,
                                                         std::uint64_t rng_seed) {
    std::vector<DiagnosticPair> pairs;
    if (!record.annotation) return pairs;
    const auto& ann = *record.annotation;
    const auto& traj = record.trajectory;
    const int T = traj.segment_count();
    if (T == 0) return pairs;

    if (!ann.has_trap()) {
        if (!config.include_no_trap) return pairs;
        DiagnosticPair pair;
        pair.input = prompts::render_diag_input(std::string(scale_name(record.model_scale)),
                                                traj.problem_text, traj.segments);
        pair.output = prompts::render_diag_output(std::nullopt, config.no_trap_escape_probability);
        pair.meta = PairMeta{std::nullopt, std::nullopt, T - 1, record.model_scale, split};
        pairs.push_back(std::move(pair));
        return pairs;
    }

    if (!record.escape) {
        throw std::invalid_argument("trap record without escape estimate: " + record.problem_id);
    }
    const int t_star = *ann.trap_index;
    if (t_star < 0 || t_star >= T) {
        throw std::out_of_range("trap index outside trajectory: " + record.problem_id);
    }
    const double p = record.escape->p_escape;

    const int max_delta = std::min(config.delta_max, T - 1 - t_star);
    std::vector<int> offsets;
    for (int d = 0; d <= max_delta; ++d) offsets.push_back(d);
    std::mt19937_64 rng(rng_seed);
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(config.copies),
                                                offsets.size());
    auto chosen = sample_without_replacement(offsets, k, rng);
    std::sort(chosen.begin(), chosen.end());

    for (int delta : chosen) {
        const int last = t_star + delta;
        std::vector<trace::Segment> visible(traj.segments.begin(),
                                            traj.segments.begin() + last + 1);
        nlohmann::ordered_json extra = nlohmann::ordered_json::object();
        if (config.trap_type_in_extra) {
            extra["trap_type"] = std::string(annotator::trap_type_name(ann.trap_type));
        }
        DiagnosticPair pair;
        pair.input = prompts::render_diag_input(std::string(scale_name(record.model_scale)),
                                                traj.problem_text, visible);
        pair.output = prompts::render_diag_output(t_star, p, std::move(extra));
        pair.meta = PairMeta{t_star, p, delta, record.model_scale, split};
        pairs.push_back(std::move(pair));
    }
    return pairs;
}

inline nlohmann::ordered_json to_json(const DiagnosticPair& pair) {
    nlohmann::ordered_json meta;
    meta["t_star"] = pair.meta.t_star ? nlohmann::ordered_json(*pair.meta.t_star)
                                      : nlohmann::ordered_json(nullptr);
    meta["p_escape"] = pair.meta.p_escape ? nlohmann::ordered_json(*pair.meta.p_escape)
                                          : nlohmann::ordered_json(nullptr);
    meta["delta"] = pair.meta.delta;
    meta["model_scale"] = std::string(scale_name(pair.meta.model_scale));
    meta["split"] = pair.meta.split;
    nlohmann::ordered_json j;
    j["input"] = pair.input;
    j["output"] = pair.output;
    j["meta"] = std::move(meta);
    return j;
}

// ---------------------------------------------------------------------------
// Manual-audit sampling and agreement
// ---------------------------------------------------------------------------

struct AuditRow {
    std::string problem_id;
    ModelScale model_scale = ModelScale::s4B;
    std::string trap_label;
    std::string trap_text;
    std::string window_labels; // semicolon-joined
    std::string escape_label;
};

inline std::vector<AuditRow> sample_audit(const std::vector<TrajectoryRecord>& records,
                                          std::size_t n, std::uint64_t seed) {
    if (n > records.size()) throw std::invalid_argument("audit sample exceeds population");
    std::vector<std::size_t> indices(records.size());
    for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
    std::mt19937_64 rng(seed);
    auto chosen = sample_without_replacement(indices, n, rng);

    std::vector<AuditRow> rows;
    rows.reserve(n);
    for (std::size_t idx : chosen) {
        const auto& rec = records[idx];
        AuditRow row;
        row.problem_id = rec.problem_id;
        row.model_scale = rec.model_scale;
        if (rec.annotation && rec.annotation->has_trap()) {
            const int t = *rec.annotation->trap_index;
            row.trap_label = trace::cot_label(t);
            if (t >= 0 && t < rec.trajectory.segment_count()) {
                row.trap_text = rec.trajectory.segments[static_cast<std::size_t>(t)].text;
            }
            std::string windows;
            for (int w : annotator::self_repair_windows(*rec.annotation)) {
                if (!windows.empty()) windows += ";";
                windows += trace::cot_label(w);
            }
            row.window_labels = windows;
            if (rec.annotation->escape_point) {
                row.escape_label = trace::cot_label(*rec.annotation->escape_point);
            }
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

// One reviewer's verdict on one audited instance.
struct AuditVerdict {
    bool trap_ok = false;
    bool windows_ok = false;
    bool escape_ok = false;
};

struct AuditAgreement {
    double trap = 0.0;
    double windows = 0.0;
    double escape = 0.0;
    double per_instance = 0.0; // all three fields agree
};

inline AuditAgreement audit_agreement(
    const std::vector<std::pair<AuditVerdict, AuditVerdict>>& reviews) {
    AuditAgreement agreement;
    if (reviews.empty()) return agreement;
    int trap = 0;
    int windows = 0;
    int escape = 0;
    int instance = 0;
    for (const auto& [a, b] : reviews) {
        const bool t = a.trap_ok == b.trap_ok;
        const bool w = a.windows_ok == b.windows_ok;
        const bool e = a.escape_ok == b.escape_ok;
        trap += t;
        windows += w;
        escape += e;
        instance += (t && w && e);
    }
    const double n = static_cast<double>(reviews.size());
    agreement.trap = trap / n;
    agreement.windows = windows / n;
    agreement.escape = escape / n;
    agreement.per_instance = instance / n;
    return agreement;
}

// ---------------------------------------------------------------------------
// Table emitters (pattern/difficulty CSVs, split manifest)
// ---------------------------------------------------------------------------

struct PatternTableRow {
    std::string pattern;
    int total = 0;
    int with_trap = 0;
    int no_trap = 0;
};

inline std::vector<PatternTableRow> pattern_table(
    const std::vector<std::pair<CorrectnessPattern, bool>>& pattern_and_trap) {
    std::map<std::string, PatternTableRow> by_pattern;
    for (const auto& [pattern, has_trap] : pattern_and_trap) {
        auto& row = by_pattern[pattern.to_string()];
        row.pattern = pattern.to_string();
        ++row.total;
        if (has_trap) ++row.with_trap;
        else ++row.no_trap;
    }
    std::vector<PatternTableRow> rows;
    for (auto& [_, row] : by_pattern) rows.push_back(row);
    std::sort(rows.begin(), rows.end(), [](const PatternTableRow& a, const PatternTableRow& b) {
        if (a.total != b.total) return a.total > b.total;
        return a.pattern < b.pattern;
    });
    return rows;
}

inline nlohmann::ordered_json split_manifest_json(const SplitAssignment& assignment,
                                                  SplitRatios ratios, std::uint64_t seed) {
    nlohmann::ordered_json j;
    j["seed"] = seed;
    j["ratios"] = {{"train", ratios.train}, {"dev", ratios.dev}, {"test", ratios.test}};
    std::map<std::string, int> counts = {{"train", 0}, {"dev", 0}, {"test", 0}};
    nlohmann::ordered_json mapping = nlohmann::ordered_json::object();
    for (const auto& [id, split] : assignment.by_problem) {
        mapping[id] = std::string(split_name(split));
        ++counts[std::string(split_name(split))];
    }
    j["counts"] = {{"train", counts["train"]}, {"dev", counts["dev"]}, {"test", counts["test"]}};
    j["assignment"] = std::move(mapping);
    return j;
}

} // namespace taar::forge

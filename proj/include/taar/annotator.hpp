#pragma once

#include <algorithm>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "taar/jsonl.hpp"
#include "taar/prompts.hpp"
#include "taar/trace.hpp"

namespace taar::annotator {

enum class TrapType { escaped, not_escaped, none };

inline std::string_view trap_type_name(TrapType t) {
    switch (t) {
        case TrapType::escaped: return "escaped successfully";
        case TrapType::not_escaped: return "did not escape";
        case TrapType::none: return "";
    }
    return "";
}

// Judge verdict: trap index t*, self-repair window labels, escape metadata.
// Indices are stored as 0-based integers; the wire shape uses cot_k labels.
struct TrapAnnotation {
    std::optional<int> trap_index;
    TrapType trap_type = TrapType::none;
    std::optional<int> escape_point;
    std::vector<int> reflection_points;
    std::vector<int> new_approach_points;
    std::vector<int> verification_points;

    bool has_trap() const { return trap_index.has_value(); }

    bool operator==(const TrapAnnotation&) const = default;
};

struct JudgeRequest {
    std::string problem;
    std::vector<trace::Segment> segments;
    std::string ground_truth;
};

enum class JudgeParseErrorKind { no_json_found, json_parse_failure, missing_key, bad_label };

struct JudgeParseError {
    JudgeParseErrorKind kind;
    std::string message;
};

inline std::string_view parse_error_name(JudgeParseErrorKind k) {
    switch (k) {
        case JudgeParseErrorKind::no_json_found: return "no_json_found";
        case JudgeParseErrorKind::json_parse_failure: return "json_parse_failure";
        case JudgeParseErrorKind::missing_key: return "missing_key";
        case JudgeParseErrorKind::bad_label: return "bad_label";
    }
    return "";
}

// parse_judge_output either yields an annotation or one typed error; the
// errors feed the preprocess-filter ledger.
struct JudgeParseResult {
    std::optional<TrapAnnotation> annotation;
    std::optional<JudgeParseError> error;

    bool ok() const { return annotation.has_value(); }
};

struct ValidationReport {
    bool ok = true;
    std::vector<std::string> violations;
};

inline std::string build_judge_prompt(const JudgeRequest& req) {
    return prompts::build_judge_prompt_text(req.problem, req.segments, req.ground_truth);
}

namespace detail {

inline std::optional<JudgeParseError> parse_label_list(const nlohmann::json& j,
                                                       const std::string& key, int T,
                                                       std::vector<int>& out) {
    if (!j.contains(key)) {
        return JudgeParseError{JudgeParseErrorKind::missing_key, "missing key: " + key};
    }
    const auto& arr = j.at(key);
    if (!arr.is_array()) {
        return JudgeParseError{JudgeParseErrorKind::json_parse_failure, key + " is not an array"};
    }
    for (const auto& item : arr) {
        if (!item.is_string()) {
            return JudgeParseError{JudgeParseErrorKind::bad_label, key + " entry is not a label"};
        }
        const std::string label = item.get<std::string>();
        auto idx = trace::parse_cot_label(label);
        if (!idx || *idx < 0 || *idx >= T) {
            return JudgeParseError{JudgeParseErrorKind::bad_label,
                                   key + " label outside cot_0..cot_" + std::to_string(T - 1) +
                                       ": " + label};
        }
        out.push_back(*idx);
    }
    return std::nullopt;
}

} // namespace detail

// Maps the judge's JSON shape, salvaged from anywhere in the reply, onto a
// TrapAnnotation. Empty-string fields become absent; "escaped successfully"
// and "did not escape" map to the trap_type enum.
inline JudgeParseResult parse_judge_output(std::string_view text, int T) {
    JudgeParseResult result;
    auto raw = io::first_json_object(text);
    if (!raw) {
        result.error = JudgeParseError{JudgeParseErrorKind::no_json_found, "no JSON object in judge output"};
        return result;
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(*raw);
    } catch (const nlohmann::json::parse_error& e) {
        result.error = JudgeParseError{JudgeParseErrorKind::json_parse_failure, e.what()};
        return result;
    }

    for (const char* key : {"trap", "trap_type", "escape_point"}) {
        if (!j.contains(key)) {
            result.error = JudgeParseError{JudgeParseErrorKind::missing_key,
                                           std::string("missing key: ") + key};
            return result;
        }
    }

    TrapAnnotation ann;
    const std::string trap = j.at("trap").is_string() ? j.at("trap").get<std::string>() : "";
    if (!trap.empty()) {
        auto idx = trace::parse_cot_label(trap);
        if (!idx || *idx < 0 || *idx >= T) {
            result.error = JudgeParseError{JudgeParseErrorKind::bad_label,
                                           "trap label outside cot_0..cot_" + std::to_string(T - 1) +
                                               ": " + trap};
            return result;
        }
        ann.trap_index = *idx;
    }

    const std::string type_str =
        j.at("trap_type").is_string() ? j.at("trap_type").get<std::string>() : "";
    if (type_str == "escaped successfully") ann.trap_type = TrapType::escaped;
    else if (type_str == "did not escape") ann.trap_type = TrapType::not_escaped;
    else if (type_str.empty()) ann.trap_type = TrapType::none;
    else {
        result.error =
            JudgeParseError{JudgeParseErrorKind::bad_label, "unknown trap_type: " + type_str};
        return result;
    }

    const std::string escape =
        j.at("escape_point").is_string() ? j.at("escape_point").get<std::string>() : "";
    if (!escape.empty()) {
        auto idx = trace::parse_cot_label(escape);
        if (!idx || *idx < 0 || *idx >= T) {
            result.error = JudgeParseError{JudgeParseErrorKind::bad_label,
                                           "escape_point label outside range: " + escape};
            return result;
        }
        ann.escape_point = *idx;
    }

    for (const auto& [key, target] :
         std::initializer_list<std::pair<const char*, std::vector<int>*>>{
             {"reflection_points", &ann.reflection_points},
             {"new_approach_points", &ann.new_approach_points},
             {"verification_points", &ann.verification_points}}) {
        if (auto err = detail::parse_label_list(j, key, T, *target)) {
            result.error = err;
            return result;
        }
    }

    result.annotation = std::move(ann);
    return result;
}

// Renders an annotation back to the judge's JSON shape. parse ∘ render is the
// identity on valid annotations.
inline nlohmann::ordered_json render_annotation_json(const TrapAnnotation& ann) {
    auto labels = [](const std::vector<int>& xs) {
        auto arr = nlohmann::ordered_json::array();
        for (int x : xs) arr.push_back(trace::cot_label(x));
        return arr;
    };
    nlohmann::ordered_json j;
    j["trap"] = ann.trap_index ? trace::cot_label(*ann.trap_index) : "";
    j["trap_type"] = std::string(trap_type_name(ann.trap_type));
    j["escape_point"] = ann.escape_point ? trace::cot_label(*ann.escape_point) : "";
    j["reflection_points"] = labels(ann.reflection_points);
    j["new_approach_points"] = labels(ann.new_approach_points);
    j["verification_points"] = labels(ann.verification_points);
    return j;
}

// Mechanical constraint checks; violations are data, not failures.
inline ValidationReport validate_annotation(const TrapAnnotation& ann, int T) {
    ValidationReport report;
    auto flag = [&report](std::string msg) {
        report.ok = false;
        report.violations.push_back(std::move(msg));
    };

    const bool lists_empty = ann.reflection_points.empty() && ann.new_approach_points.empty() &&
                             ann.verification_points.empty() && !ann.escape_point;
    if (!ann.trap_index) {
        if (ann.trap_type != TrapType::none) flag("trap absent but trap_type set");
        if (!lists_empty) flag("trap absent but point lists or escape_point nonempty");
        return report;
    }

    if (*ann.trap_index < 0 || *ann.trap_index >= T) flag("trap index outside [0, T)");
    if (ann.trap_type == TrapType::none) flag("trap present but trap_type empty");
    if ((ann.trap_type == TrapType::escaped) != ann.escape_point.has_value()) {
        flag("trap_type/escape_point mismatch: escaped iff escape_point present");
    }

    const struct {
        const char* name;
        const std::vector<int>* list;
    } lists[] = {{"reflection_points", &ann.reflection_points},
                 {"new_approach_points", &ann.new_approach_points},
                 {"verification_points", &ann.verification_points}};

    std::set<int> seen;
    for (const auto& entry : lists) {
        if (entry.list->size() > 3) {
            flag(std::string(entry.name) + " exceeds cap of 3");
        }
        for (int idx : *entry.list) {
            if (idx < 0 || idx >= T) flag(std::string(entry.name) + " label outside [0, T)");
            if (idx <= *ann.trap_index) {
                flag(std::string(entry.name) + " index " + std::to_string(idx) +
                     " not greater than trap index");
            }
            if (!seen.insert(idx).second) {
                flag("label " + trace::cot_label(idx) + " appears in more than one list");
            }
        }
    }
    if (ann.escape_point) {
        if (*ann.escape_point < 0 || *ann.escape_point >= T) flag("escape_point outside [0, T)");
        if (*ann.escape_point <= *ann.trap_index) flag("escape_point not greater than trap index");
    }
    return report;
}

// W: union of the three point lists, sorted ascending. Subset of
// {t*+1, ..., T-1} once validation passed.
inline std::vector<int> self_repair_windows(const TrapAnnotation& ann) {
    std::set<int> w;
    w.insert(ann.reflection_points.begin(), ann.reflection_points.end());
    w.insert(ann.new_approach_points.begin(), ann.new_approach_points.end());
    w.insert(ann.verification_points.begin(), ann.verification_points.end());
    return {w.begin(), w.end()};
}

// Cut-eligible points: W plus the escape point. An escape point is a repair
// attempt that succeeded, so it is always a valid place to cut.
inline std::vector<int> cut_eligible_points(const TrapAnnotation& ann) {
    std::set<int> w;
    auto ws = self_repair_windows(ann);
    w.insert(ws.begin(), ws.end());
    if (ann.escape_point) w.insert(*ann.escape_point);
    return {w.begin(), w.end()};
}

} // namespace taar::annotator

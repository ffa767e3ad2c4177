#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "taar/util.hpp"

namespace taar::trace {

// Canonical separator between segments. Joining segments with it and
// re-splitting reproduces the same segment list (round-trip identity).
inline constexpr std::string_view kSegmentSeparator = "\n\n";

// Minimum segment length in Unicode scalar values. Shorter paragraph chunks
// are merged so that index-based localization stays stable.
inline constexpr std::size_t kMinSegmentLen = 200;

struct Segment {
    int index = 0;
    std::string text;

    std::size_t char_len() const { return utf8_length(text); }

    bool operator==(const Segment&) const = default;
};

struct SegmentedTrajectory {
    std::string problem_id;
    std::string model_id;
    std::string problem_text;
    std::string raw_output;
    std::string reasoning_text;
    std::vector<Segment> segments;
    std::optional<long long> completion_tokens;
    std::optional<std::string> final_answer;
    std::optional<bool> is_correct;

    int segment_count() const { return static_cast<int>(segments.size()); }
};

// Segment label as rendered in prompts: cot_k with k the 0-based index.
inline std::string cot_label(int index) { return "cot_" + std::to_string(index); }

// Inverse of cot_label. Accepts "cot_12", "12", and a few judge-output
// variants ("<cot_12>", "cot12"). Returns nullopt for anything else.
inline std::optional<int> parse_cot_label(std::string_view label) {
    std::string_view s = trim_view(label);
    if (s.size() >= 2 && s.front() == '<' && s.back() == '>') s = s.substr(1, s.size() - 2);
    if (s.starts_with("cot_")) s.remove_prefix(4);
    else if (s.starts_with("cot")) s.remove_prefix(3);
    if (s.empty()) return std::nullopt;
    int value = 0;
    for (char c : s) {
        if (c < '0' || c > '9') return std::nullopt;
        value = value * 10 + (c - '0');
        if (value > 1'000'000) return std::nullopt;
    }
    return value;
}

// Reasoning extraction: content of the first <think>...</think> block when one
// exists, the tail after an unclosed <think>, otherwise the input unchanged.
inline std::string extract_reasoning(std::string_view raw_output) {
    constexpr std::string_view open_tag = "<think>";
    constexpr std::string_view close_tag = "</think>";
    const std::size_t open = raw_output.find(open_tag);
    if (open == std::string_view::npos) return std::string(raw_output);
    const std::size_t body = open + open_tag.size();
    const std::size_t close = raw_output.find(close_tag, body);
    if (close == std::string_view::npos) return std::string(raw_output.substr(body));
    return std::string(raw_output.substr(body, close - body));
}

namespace detail {

// Splits at blank-line boundaries. \r\n is normalized first, so \r\n\r\n and
// runs of 3+ newlines all collapse into one boundary. Whitespace-only chunks
// are dropped.
inline std::vector<std::string> split_paragraphs(std::string_view text) {
    std::string normalized = replace_all(std::string(text), "\r\n", "\n");
    std::vector<std::string> chunks;
    std::size_t start = 0;
    while (start < normalized.size()) {
        std::size_t boundary = normalized.find("\n\n", start);
        std::string chunk = boundary == std::string::npos
                                ? normalized.substr(start)
                                : normalized.substr(start, boundary - start);
        if (!is_blank(chunk)) chunks.push_back(std::string(trim_view(chunk)));
        if (boundary == std::string::npos) break;
        start = boundary;
        while (start < normalized.size() && normalized[start] == '\n') ++start;
    }
    return chunks;
}

} // namespace detail

// Paragraph segmentation with a minimum length: chunks shorter than min_len
// merge forward into the next chunk; a trailing short chunk merges backward.
// A trajectory whose whole text is short yields one sole-survivor segment.
inline std::vector<Segment> segment(std::string_view reasoning_text,
                                    std::size_t min_len = kMinSegmentLen) {
    if (min_len < 1) throw std::invalid_argument("segment: min_len must be >= 1");
    std::vector<std::string> chunks = detail::split_paragraphs(reasoning_text);
    std::vector<std::string> merged;
    std::string current;
    for (std::string& chunk : chunks) {
        if (current.empty()) {
            current = std::move(chunk);
        } else {
            current += kSegmentSeparator;
            current += chunk;
        }
        if (utf8_length(current) >= min_len) {
            merged.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) {
        if (merged.empty()) {
            merged.push_back(std::move(current));
        } else {
            merged.back() += kSegmentSeparator;
            merged.back() += current;
        }
    }
    std::vector<Segment> out;
    out.reserve(merged.size());
    for (std::size_t i = 0; i < merged.size(); ++i) {
        out.push_back(Segment{static_cast<int>(i), std::move(merged[i])});
    }
    return out;
}

inline std::string join_segments(const std::vector<Segment>& segments) {
    std::string out;
    for (std::size_t i = 0; i < segments.size(); ++i) {
        if (i) out += kSegmentSeparator;
        out += segments[i].text;
    }
    return out;
}

// Prefix Y_<t: segments with index < t joined by the canonical separator.
// t ranges over [0, T]; t=0 is the empty prefix.
inline std::string prefix_text(const SegmentedTrajectory& traj, int t) {
    const int T = traj.segment_count();
    if (t < 0 || t > T) {
        throw std::out_of_range("prefix_text: t=" + std::to_string(t) +
                                " outside [0, " + std::to_string(T) + "]");
    }
    std::string out;
    for (int i = 0; i < t; ++i) {
        if (i) out += kSegmentSeparator;
        out += traj.segments[static_cast<std::size_t>(i)].text;
    }
    return out;
}

inline SegmentedTrajectory make_trajectory(std::string problem_id, std::string model_id,
                                           std::string problem_text, std::string raw_output,
                                           std::size_t min_len = kMinSegmentLen) {
    SegmentedTrajectory traj;
    traj.problem_id = std::move(problem_id);
    traj.model_id = std::move(model_id);
    traj.problem_text = std::move(problem_text);
    traj.raw_output = std::move(raw_output);
    traj.reasoning_text = extract_reasoning(traj.raw_output);
    traj.segments = segment(traj.reasoning_text, min_len);
    return traj;
}

// --- Trajectory JSONL schema -------------------------------------------------
// {problem_id, model_id, problem_text, raw_output, reasoning_text,
//  segments:[{index,text}], completion_tokens?, final_answer?, is_correct?}

inline nlohmann::ordered_json to_json(const SegmentedTrajectory& traj) {
    nlohmann::ordered_json j;
    j["problem_id"] = traj.problem_id;
    j["model_id"] = traj.model_id;
    j["problem_text"] = traj.problem_text;
    j["raw_output"] = traj.raw_output;
    j["reasoning_text"] = traj.reasoning_text;
    auto segs = nlohmann::ordered_json::array();
    for (const Segment& s : traj.segments) {
        segs.push_back({{"index", s.index}, {"text", s.text}});
    }
    j["segments"] = std::move(segs);
    if (traj.completion_tokens) j["completion_tokens"] = *traj.completion_tokens;
    if (traj.final_answer) j["final_answer"] = *traj.final_answer;
    if (traj.is_correct) j["is_correct"] = *traj.is_correct;
    return j;
}

inline SegmentedTrajectory trajectory_from_json(const nlohmann::json& j) {
    SegmentedTrajectory traj;
    traj.problem_id = j.at("problem_id").get<std::string>();
    traj.model_id = j.value("model_id", std::string{});
    traj.problem_text = j.value("problem_text", std::string{});
    traj.raw_output = j.value("raw_output", std::string{});
    traj.reasoning_text = j.value("reasoning_text", std::string{});
    if (j.contains("segments")) {
        for (const auto& js : j.at("segments")) {
            traj.segments.push_back(Segment{js.at("index").get<int>(),
                                            js.at("text").get<std::string>()});
        }
    }
    if (j.contains("completion_tokens") && !j.at("completion_tokens").is_null()) {
        traj.completion_tokens = j.at("completion_tokens").get<long long>();
    }
    if (j.contains("final_answer") && !j.at("final_answer").is_null()) {
        traj.final_answer = j.at("final_answer").get<std::string>();
    }
    if (j.contains("is_correct") && !j.at("is_correct").is_null()) {
        traj.is_correct = j.at("is_correct").get<bool>();
    }
    return traj;
}

} // namespace taar::trace

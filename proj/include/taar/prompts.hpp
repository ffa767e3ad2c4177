#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "taar/trace.hpp"
#include "taar/util.hpp"

namespace taar::prompts {

// ---------------------------------------------------------------------------
// Judge prompt (trap / self-repair-window annotation)
// ---------------------------------------------------------------------------

inline constexpr std::string_view kJudgePromptTemplate =
    R"(You are a "long-CoT reasoning trap locator."

[Problem]
{problem}

[Input]
A long CoT text segmented with labels:
{segmented_cot}

[Ground Truth Answer]
{ground_truth}

[Task]
1. Identify exactly one trap in the CoT text:
   a. A "trap" is the earliest critical erroneous assumption,
      unjustified leap, or improper simplification that "locks"
      or severely restricts subsequent reasoning.
   b. Consequence: subsequent reasoning space becomes
      significantly constrained, leading to failure or deviation.
   c. If multiple candidates exist, select the earliest and
      most restrictive one.

2. In the entire text, find segments directly related to the
   identified trap (only output labels without repeating their
   contents):

   High-precision eligibility (MUST satisfy; otherwise exclude):
   A segment is eligible ONLY IF it explicitly contains
   meta-reasoning cues targeting the trap, i.e. it explicitly
   does at least one of:
   - Reflection points: explicitly doubt/question the trap
     assumption itself OR a direct consequence of it, but fail
     to correct it.
   - New approach points: explicitly propose a different
     method/representation/strategy to escape, but still rely
     on the trap assumption (do not fix it).
   - Verification points: explicitly check the trap assumption
     OR a direct consequence via examples/boundaries/calculations,
     but miss the key flaw.

   NOT eligible: segments that merely continue routine
   computation/derivation along the trapped path WITHOUT explicit
   doubt / alternative attempt / verification.

   Relevance ranking (internal; do NOT output scores):
   - For each eligible candidate, assign rel in {3,2,1}:
     rel=3: explicitly target the trap assumption itself
            (name/restatement/check) OR explicitly attempt
            to escape it.
     rel=2: explicitly target a direct consequence that
            critically depends on the trap, with
            doubt/alternative/check.
     rel=1: weak/implicit relation -> EXCLUDE (do not output).
   - Keep ONLY candidates with rel >= 2.
   - Each list must be sorted by (rel descending, index ascending).
     Output labels only.

   Selection constraints (precision-first):
   - Do NOT include the trap segment itself; all points must
     satisfy index > trap index.
   - No duplicates; a label can appear in at most ONE list.
   - If a segment fits multiple categories, assign it to the
     most specific with priority:
     new_approach_points > verification_points > reflection_points.
   - Hard caps (no total cap): reflection_points <= 3,
     new_approach_points <= 3, verification_points <= 3.
   - (These arrays may be empty; it is OK to output [].)

3. Determine if escaped:
   a. If any later segment explicitly corrects the trap assumption
      and breaks free from the erroneous path, set
      trap_type="escaped successfully" and "escape_point" to the
      earliest correcting segment.
   b. Otherwise, set trap_type="did not escape" and
      "escape_point"="".

[Output]
Output only valid JSON (no explanations or extra text):
{
  "trap": "cot_x" or "",
  "trap_type": "escaped successfully" or "did not escape" or "",
  "escape_point": "cot_y" or "",
  "reflection_points": ["cot_i", ...],
  "new_approach_points": ["cot_j", ...],
  "verification_points": ["cot_m", ...]
}

[Empty Output]
If no trap satisfying "maximum causal influence/strongest lock"
is found:
{
  "trap": "",
  "trap_type": "",
  "escape_point": "",
  "reflection_points": [],
  "new_approach_points": [],
  "verification_points": []
})";

// Labeled rendering shared by the judge prompt and the policy input:
// "<cot_k>\n{text}" blocks joined by blank lines.
inline std::string render_segmented_cot(const std::vector<trace::Segment>& segments) {
    std::string out;
    for (std::size_t i = 0; i < segments.size(); ++i) {
        if (i) out += "\n\n";
        out += "<" + trace::cot_label(segments[i].index) + ">\n" + segments[i].text;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Diagnostic policy templates (training-pair input/output and inference query)
// ---------------------------------------------------------------------------

inline constexpr std::string_view kDiagInputHeader =
    R"(Please identify and locate the trap in the current problem's
reasoning process, and provide the escape action.)";

inline constexpr std::string_view kDiagInputFooter = "Output your analysis in JSON format:";

inline std::string render_diag_input(std::string_view model_name, std::string_view problem,
                                     const std::vector<trace::Segment>& segments) {
    std::string out(kDiagInputHeader);
    out += "\n\n[Model]\n";
    out += model_name;
    out += "\n\n[Problem]\n";
    out += problem;
    out += "\n\n[Reasoning Process]\n";
    out += render_segmented_cot(segments);
    out += "\n\n";
    out += kDiagInputFooter;
    return out;
}

// Output side: {"trap_index": "cot_k" or "", "escape_probability": p, "extra": {...}}.
// No-trap outputs keep an empty trap_index; escape_probability may be omitted.
inline std::string render_diag_output(std::optional<int> trap_index,
                                      std::optional<double> escape_probability,
                                      nlohmann::ordered_json extra = nlohmann::ordered_json::object()) {
    nlohmann::ordered_json j;
    j["trap_index"] = trap_index ? trace::cot_label(*trap_index) : "";
    if (escape_probability) j["escape_probability"] = *escape_probability;
    j["extra"] = std::move(extra);
    return j.dump();
}

// ---------------------------------------------------------------------------
// Reboot suffixes (strong-restart operator)
// ---------------------------------------------------------------------------

enum class SuffixLanguage { en, zh, ko, ru, ar, fr };

// The English suffix is the canonical one used in main-line runs; the other
// languages are overridable defaults for code-switch experiments.
inline constexpr std::string_view kRebootSuffixEn =
    "Wait, let me completely rethink this problem in English. The previous chain of "
    "thought might be limited, so I need to reorganize my thoughts in English and "
    "analyze from scratch.";

struct RebootSuffix {
    SuffixLanguage language = SuffixLanguage::en;
    std::string text;
};

inline SuffixLanguage parse_suffix_language(std::string_view name) {
    if (name == "en") return SuffixLanguage::en;
    if (name == "zh") return SuffixLanguage::zh;
    if (name == "ko") return SuffixLanguage::ko;
    if (name == "ru") return SuffixLanguage::ru;
    if (name == "ar") return SuffixLanguage::ar;
    if (name == "fr") return SuffixLanguage::fr;
    throw std::invalid_argument("unknown suffix language: " + std::string(name));
}

inline std::string_view suffix_language_name(SuffixLanguage lang) {
    switch (lang) {
        case SuffixLanguage::en: return "en";
        case SuffixLanguage::zh: return "zh";
        case SuffixLanguage::ko: return "ko";
        case SuffixLanguage::ru: return "ru";
        case SuffixLanguage::ar: return "ar";
        case SuffixLanguage::fr: return "fr";
    }
    return "en";
}

inline RebootSuffix reboot_suffix(SuffixLanguage lang) {
    switch (lang) {
        case SuffixLanguage::en:
            return {lang, std::string(kRebootSuffixEn)};
        case SuffixLanguage::zh:
            return {lang,
                    "等一下，让我用中文彻底重新思考这个问题。之前的思路可能有局限，"
                    "所以我需要用中文重新整理思路，从头开始分析。"};
        case SuffixLanguage::ko:
            return {lang,
                    "잠깐, 이 문제를 한국어로 완전히 다시 생각해 보겠습니다. 이전의 사고 "
                    "과정에는 한계가 있을 수 있으므로, 한국어로 생각을 재정리하여 처음부터 "
                    "분석하겠습니다."};
        case SuffixLanguage::ru:
            return {lang,
                    "Подождите, позвольте мне полностью переосмыслить эту задачу на русском "
                    "языке. Предыдущая цепочка рассуждений могла быть ограниченной, поэтому "
                    "мне нужно заново упорядочить мысли на русском языке и провести анализ "
                    "с самого начала."};
        case SuffixLanguage::ar:
            return {lang,
                    "مهلاً، دعني أعيد التفكير في هذه المسألة بالكامل باللغة العربية. قد تكون "
                    "سلسلة الأفكار السابقة محدودة، لذا أحتاج إلى إعادة تنظيم أفكاري باللغة "
                    "العربية والتحليل من الصفر."};
        case SuffixLanguage::fr:
            return {lang,
                    "Attendez, laissez-moi repenser complètement ce problème en français. La "
                    "chaîne de pensée précédente pourrait être limitée, je dois donc "
                    "réorganiser mes idées en français et analyser depuis le début."};
    }
    return {SuffixLanguage::en, std::string(kRebootSuffixEn)};
}

// ---------------------------------------------------------------------------
// Continuation / restart prompt
// ---------------------------------------------------------------------------

// All resampled continuations (escape estimation and restarts alike) go over
// the wire as one user message: problem, continue-instruction, prefix, and an
// optional reboot suffix, in that order. An empty prefix is a fresh attempt.
inline constexpr std::string_view kContinueInstruction =
    "Below is the beginning of your reasoning for this problem. Continue the reasoning "
    "from exactly where it stops and finish the solution, giving the final answer in "
    "\\boxed{}.";

inline std::string build_continuation_prompt(std::string_view problem, std::string_view prefix,
                                             std::string_view suffix = {}) {
    std::string out(problem);
    if (!prefix.empty()) {
        out += "\n\n";
        out += kContinueInstruction;
        out += "\n\n";
        out += prefix;
    }
    if (!suffix.empty()) {
        out += "\n\n";
        out += suffix;
    }
    return out;
}

// Judge prompt: the template above with the three placeholders substituted.
// Each placeholder is spliced exactly once so that substituted text can never
// be re-expanded.
inline std::string build_judge_prompt_text(std::string_view problem,
                                           const std::vector<trace::Segment>& segments,
                                           std::string_view ground_truth) {
    if (segments.empty()) throw std::invalid_argument("judge prompt needs at least one segment");
    auto splice = [](std::string text, std::string_view placeholder, std::string_view value) {
        const std::size_t pos = text.find(placeholder);
        if (pos == std::string::npos) throw std::logic_error("placeholder missing from template");
        text.replace(pos, placeholder.size(), value);
        return text;
    };
    // Splice back-to-front so injected values can never shadow a later
    // placeholder.
    std::string out(kJudgePromptTemplate);
    out = splice(std::move(out), "{ground_truth}", ground_truth);
    out = splice(std::move(out), "{segmented_cot}", render_segmented_cot(segments));
    out = splice(std::move(out), "{problem}", problem);
    return out;
}

} // namespace taar::prompts

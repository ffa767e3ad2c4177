#include <doctest.h>

#include <random>
#include <string>

#include "taar/annotator.hpp"
#include "taar/jsonl.hpp"
#include "taar/rng.hpp"

using namespace taar;
using annotator::TrapAnnotation;
using annotator::TrapType;
using trace::Segment;

namespace {

std::string golden_path(const std::string& name) {
    return std::string(TAAR_TEST_DIR) + "/golden/" + name;
}

TrapAnnotation random_valid_annotation(std::mt19937_64& rng, int T) {
    TrapAnnotation ann;
    if (uniform_below(rng, 4) == 0 || T < 2) return ann; // no-trap
    const int t_star = static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(T - 1)));
    ann.trap_index = t_star;

    std::vector<int> candidates;
    for (int i = t_star + 1; i < T; ++i) candidates.push_back(i);
    fisher_yates_shuffle(candidates, rng);
    std::size_t cursor = 0;
    auto take = [&](std::vector<int>& list) {
        const std::size_t n = uniform_below(rng, 4); // 0..3
        for (std::size_t i = 0; i < n && cursor < candidates.size(); ++i) {
            list.push_back(candidates[cursor++]);
        }
        std::sort(list.begin(), list.end());
    };
    take(ann.reflection_points);
    take(ann.new_approach_points);
    take(ann.verification_points);

    if (uniform_below(rng, 2) == 0 && cursor < candidates.size()) {
        ann.trap_type = TrapType::escaped;
        ann.escape_point = candidates[cursor++];
    } else {
        ann.trap_type = TrapType::not_escaped;
    }
    return ann;
}

} // namespace

TEST_CASE("build_judge_prompt") {
    SUBCASE("single segment renders exactly one cot_0 block") {
        annotator::JudgeRequest req{"problem text", {Segment{0, "only segment"}}, "777"};
        const std::string prompt = annotator::build_judge_prompt(req);
        CHECK(prompt.find("<cot_0>\nonly segment") != std::string::npos);
        CHECK(prompt.find("<cot_1>") == std::string::npos);
        CHECK(prompt.find("{problem}") == std::string::npos);
        CHECK(prompt.find("{segmented_cot}") == std::string::npos);
        CHECK(prompt.find("{ground_truth}") == std::string::npos);
    }
    SUBCASE("three-segment fixture matches the golden file byte for byte") {
        annotator::JudgeRequest req{
            "What is 2+2?",
            {Segment{0, "I think the answer is 3."}, Segment{1, "Wait, maybe I should check."},
             Segment{2, "Actually 2+2 = 4."}},
            "4"};
        CHECK(annotator::build_judge_prompt(req) == io::read_file(golden_path("judge_prompt_3seg.golden")));
    }
    SUBCASE("empty ground truth still renders") {
        annotator::JudgeRequest req{"p", {Segment{0, "s"}}, ""};
        const std::string prompt = annotator::build_judge_prompt(req);
        CHECK(prompt.find("[Ground Truth Answer]\n\n") != std::string::npos);
    }
    SUBCASE("empty segment list is an error") {
        annotator::JudgeRequest req{"p", {}, "1"};
        CHECK_THROWS_AS(annotator::build_judge_prompt(req), std::invalid_argument);
    }
}

TEST_CASE("parse_judge_output") {
    SUBCASE("empty-output shape maps to no trap") {
        const char* text = R"({
          "trap": "", "trap_type": "", "escape_point": "",
          "reflection_points": [], "new_approach_points": [], "verification_points": []
        })";
        auto result = annotator::parse_judge_output(text, 30);
        REQUIRE(result.ok());
        CHECK_FALSE(result.annotation->has_trap());
        CHECK(result.annotation->trap_type == TrapType::none);
        CHECK(annotator::self_repair_windows(*result.annotation).empty());
    }
    SUBCASE("direct mapping with windows") {
        const char* text =
            R"({"trap":"cot_12","trap_type":"did not escape","escape_point":"",
                "reflection_points":["cot_14"],"new_approach_points":[],
                "verification_points":["cot_20","cot_25"]})";
        auto result = annotator::parse_judge_output(text, 30);
        REQUIRE(result.ok());
        const auto& ann = *result.annotation;
        CHECK(ann.trap_index == 12);
        CHECK(ann.trap_type == TrapType::not_escaped);
        CHECK_FALSE(ann.escape_point.has_value());
        CHECK(annotator::self_repair_windows(ann) == std::vector<int>{14, 20, 25});
    }
    SUBCASE("prose before the JSON is ignored") {
        const std::string text =
            "Sure! After careful study of the reasoning, here is my verdict:\n" +
            annotator::render_annotation_json(TrapAnnotation{}).dump() + "\nHope this helps!";
        auto result = annotator::parse_judge_output(text, 5);
        CHECK(result.ok());
    }
    SUBCASE("typed errors") {
        auto none = annotator::parse_judge_output("no json here", 5);
        REQUIRE_FALSE(none.ok());
        CHECK(none.error->kind == annotator::JudgeParseErrorKind::no_json_found);

        auto broken = annotator::parse_judge_output("{\"trap\": ", 5);
        REQUIRE_FALSE(broken.ok());
        CHECK(broken.error->kind == annotator::JudgeParseErrorKind::no_json_found);

        auto invalid = annotator::parse_judge_output(R"({"trap" "cot_1"})", 5);
        REQUIRE_FALSE(invalid.ok());
        CHECK(invalid.error->kind == annotator::JudgeParseErrorKind::json_parse_failure);

        auto missing = annotator::parse_judge_output(R"({"trap":"cot_1"})", 5);
        REQUIRE_FALSE(missing.ok());
        CHECK(missing.error->kind == annotator::JudgeParseErrorKind::missing_key);

        auto out_of_range = annotator::parse_judge_output(
            R"({"trap":"cot_9","trap_type":"did not escape","escape_point":"",
                "reflection_points":[],"new_approach_points":[],"verification_points":[]})",
            5);
        REQUIRE_FALSE(out_of_range.ok());
        CHECK(out_of_range.error->kind == annotator::JudgeParseErrorKind::bad_label);
    }
}

TEST_CASE("validate_annotation") {
    TrapAnnotation ann;
    ann.trap_index = 12;
    ann.trap_type = TrapType::not_escaped;

    SUBCASE("point at or before the trap index") {
        ann.reflection_points = {10};
        auto report = annotator::validate_annotation(ann, 30);
        CHECK_FALSE(report.ok);
        REQUIRE(report.violations.size() == 1);
        CHECK(report.violations[0].find("not greater than trap index") != std::string::npos);
    }
    SUBCASE("cap exceeded") {
        ann.verification_points = {13, 14, 15, 16};
        auto report = annotator::validate_annotation(ann, 30);
        CHECK_FALSE(report.ok);
        CHECK(report.violations[0].find("exceeds cap") != std::string::npos);
    }
    SUBCASE("duplicate across lists") {
        ann.reflection_points = {14};
        ann.verification_points = {14};
        auto report = annotator::validate_annotation(ann, 30);
        CHECK_FALSE(report.ok);
        bool found = false;
        for (const auto& v : report.violations) {
            if (v.find("more than one list") != std::string::npos) found = true;
        }
        CHECK(found);
    }
    SUBCASE("escaped requires escape point") {
        ann.trap_type = TrapType::escaped;
        auto report = annotator::validate_annotation(ann, 30);
        CHECK_FALSE(report.ok);
    }
    SUBCASE("clean annotation passes") {
        ann.reflection_points = {14};
        ann.verification_points = {20, 25};
        auto report = annotator::validate_annotation(ann, 30);
        CHECK(report.ok);
        CHECK(report.violations.empty());
    }
}

TEST_CASE("parse/render identity and validator soundness over random annotations") {
    std::mt19937_64 rng(5150);
    for (int iter = 0; iter < 200; ++iter) {
        const int T = 2 + static_cast<int>(uniform_below(rng, 40));
        const TrapAnnotation ann = random_valid_annotation(rng, T);

        auto report = annotator::validate_annotation(ann, T);
        CHECK(report.ok);

        auto parsed = annotator::parse_judge_output(annotator::render_annotation_json(ann).dump(), T);
        REQUIRE(parsed.ok());
        CHECK(*parsed.annotation == ann);

        // W stays inside {t*+1, ..., T-1}
        if (ann.has_trap()) {
            for (int w : annotator::self_repair_windows(ann)) {
                CHECK(w > *ann.trap_index);
                CHECK(w < T);
            }
        }
    }
}

TEST_CASE("cut_eligible_points includes the escape point") {
    TrapAnnotation ann;
    ann.trap_index = 3;
    ann.trap_type = TrapType::escaped;
    ann.escape_point = 9;
    ann.reflection_points = {5};
    CHECK(annotator::self_repair_windows(ann) == std::vector<int>{5});
    CHECK(annotator::cut_eligible_points(ann) == std::vector<int>{5, 9});
}

#include <doctest.h>

#include <random>
#include <string>
#include <thread>
#include <vector>

#include "taar/rng.hpp"
#include "taar/trace.hpp"

using namespace taar;
using trace::Segment;

namespace {

std::string para(std::size_t chars, char fill = 'x') { return std::string(chars, fill); }

// Random paragraph corpus for the property tests: lengths between 1 and 600
// characters, separators drawn from the messy variants real outputs produce.
std::string random_corpus(std::mt19937_64& rng, std::vector<std::string>* paragraphs = nullptr) {
    const std::size_t n = 1 + uniform_below(rng, 12);
    const char* seps[] = {"\n\n", "\r\n\r\n", "\n\n\n", "\n\n\n\n"};
    std::string text;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t len = 1 + uniform_below(rng, 600);
        std::string p;
        for (std::size_t k = 0; k < len; ++k) {
            p.push_back(static_cast<char>('a' + uniform_below(rng, 26)));
        }
        if (paragraphs) paragraphs->push_back(p);
        if (i) text += seps[uniform_below(rng, 4)];
        text += p;
    }
    return text;
}

} // namespace

TEST_CASE("extract_reasoning") {
    CHECK(trace::extract_reasoning("<think>steps here</think>Answer: 5") == "steps here");
    CHECK(trace::extract_reasoning("no tags at all") == "no tags at all");
    // first-block rule: candidate parses of the two-block fixture all agree the
    // first block's content is "a"
    CHECK(trace::extract_reasoning("<think>a</think><think>b</think>") == "a");
    // unclosed tag: the block extends to end of string
    CHECK(trace::extract_reasoning("<think>partial reasoning") == "partial reasoning");
    CHECK(trace::extract_reasoning("") == "");
}

TEST_CASE("segment merges short chunks") {
    SUBCASE("two short paragraphs collapse into one") {
        const std::string text = para(50, 'a') + "\n\n" + para(50, 'b');
        auto segs = trace::segment(text);
        REQUIRE(segs.size() == 1);
        CHECK(segs[0].text == para(50, 'a') + "\n\n" + para(50, 'b'));
        CHECK(segs[0].index == 0);
    }
    SUBCASE("two long paragraphs stay separate") {
        auto segs = trace::segment(para(300, 'a') + "\n\n" + para(250, 'b'));
        REQUIRE(segs.size() == 2);
        CHECK(segs[0].index == 0);
        CHECK(segs[1].index == 1);
        CHECK(segs[0].text == para(300, 'a'));
        CHECK(segs[1].text == para(250, 'b'));
    }
    SUBCASE("150/150/300 fixture: first two merge, third stands alone") {
        // hand-applied merge rule: chunk0 (150) < 200 so it merges forward into
        // chunk1 giving 150+2+150 = 302 chars; chunk2 is already long enough
        auto segs =
            trace::segment(para(150, 'a') + "\n\n" + para(150, 'b') + "\n\n" + para(300, 'c'));
        REQUIRE(segs.size() == 2);
        CHECK(segs[0].text == para(150, 'a') + "\n\n" + para(150, 'b'));
        CHECK(segs[0].char_len() == 302);
        CHECK(segs[1].text == para(300, 'c'));
    }
    SUBCASE("trailing short chunk merges backward") {
        auto segs = trace::segment(para(300, 'a') + "\n\n" + para(10, 'b'));
        REQUIRE(segs.size() == 1);
        CHECK(segs[0].text == para(300, 'a') + "\n\n" + para(10, 'b'));
    }
    SUBCASE("empty and whitespace inputs produce no segments") {
        CHECK(trace::segment("").empty());
        CHECK(trace::segment("   \n\n  \n ").empty());
    }
    SUBCASE("sole short survivor is kept") {
        auto segs = trace::segment("tiny");
        REQUIRE(segs.size() == 1);
        CHECK(segs[0].text == "tiny");
    }
}

TEST_CASE("segment boundary normalization") {
    const std::string a = para(250, 'a');
    const std::string b = para(250, 'b');
    auto plain = trace::segment(a + "\n\n" + b);
    auto crlf = trace::segment(a + "\r\n\r\n" + b);
    auto many = trace::segment(a + "\n\n\n\n\n" + b);
    REQUIRE(plain.size() == 2);
    CHECK(plain == crlf);
    CHECK(plain == many);
}

TEST_CASE("segment counts unicode scalars, not bytes") {
    // 200 two-byte characters: 400 bytes but exactly the minimum length
    std::string multibyte;
    for (int i = 0; i < 200; ++i) multibyte += "\xc3\xa9"; // é
    auto segs = trace::segment(multibyte + "\n\n" + para(250, 'b'));
    REQUIRE(segs.size() == 2);
    CHECK(segs[0].char_len() == 200);
    CHECK(segs[0].text.size() == 400);
}

TEST_CASE("prefix_text") {
    trace::SegmentedTrajectory traj;
    traj.segments = {Segment{0, "AAA"}, Segment{1, "BBB"}, Segment{2, "CCC"}};
    CHECK(trace::prefix_text(traj, 0) == "");
    CHECK(trace::prefix_text(traj, 2) == "AAA\n\nBBB");
    CHECK(trace::prefix_text(traj, 3) == "AAA\n\nBBB\n\nCCC");
    CHECK_THROWS_AS(trace::prefix_text(traj, 4), std::out_of_range);
    CHECK_THROWS_AS(trace::prefix_text(traj, -1), std::out_of_range);
}

TEST_CASE("prefix monotonicity") {
    trace::SegmentedTrajectory traj;
    for (int i = 0; i < 6; ++i) traj.segments.push_back(Segment{i, para(10, char('a' + i))});
    for (int t = 0; t < 6; ++t) {
        const std::string shorter = trace::prefix_text(traj, t);
        const std::string longer = trace::prefix_text(traj, t + 1);
        CHECK(longer.substr(0, shorter.size()) == shorter);
    }
}

TEST_CASE("segmentation properties over random corpora") {
    std::mt19937_64 rng(20240817);
    for (int iter = 0; iter < 50; ++iter) {
        const std::string text = random_corpus(rng);
        auto segs = trace::segment(text);

        // minimum length unless sole survivor
        if (segs.size() > 1) {
            for (const auto& s : segs) CHECK(s.char_len() >= trace::kMinSegmentLen);
        }
        // consecutive indices from zero
        for (std::size_t i = 0; i < segs.size(); ++i) {
            CHECK(segs[i].index == static_cast<int>(i));
        }
        // round-trip: joining and re-splitting is the identity
        auto again = trace::segment(trace::join_segments(segs));
        CHECK(again == segs);
    }
}

TEST_CASE("segmentation is identical across threads") {
    std::mt19937_64 rng(8080);
    const std::string text = random_corpus(rng);
    const auto expected = trace::segment(text);
    std::vector<std::vector<trace::Segment>> results(4);
    std::vector<std::thread> workers;
    for (int i = 0; i < 4; ++i) {
        workers.emplace_back([&, i] { results[static_cast<std::size_t>(i)] = trace::segment(text); });
    }
    for (auto& t : workers) t.join();
    for (const auto& r : results) CHECK(r == expected);
}

TEST_CASE("trajectory JSONL round-trip") {
    auto traj = trace::make_trajectory("p1", "4B", "What is 2+2?",
                                       "<think>" + para(250, 'r') + "</think>\\boxed{4}");
    traj.completion_tokens = 123;
    traj.final_answer = "4";
    traj.is_correct = true;

    const auto j = trace::to_json(traj);
    const auto back = trace::trajectory_from_json(nlohmann::json::parse(j.dump()));
    CHECK(back.problem_id == traj.problem_id);
    CHECK(back.model_id == traj.model_id);
    CHECK(back.raw_output == traj.raw_output);
    CHECK(back.reasoning_text == traj.reasoning_text);
    CHECK(back.segments == traj.segments);
    CHECK(back.completion_tokens == traj.completion_tokens);
    CHECK(back.final_answer == traj.final_answer);
    CHECK(back.is_correct == traj.is_correct);
}

TEST_CASE("cot labels") {
    CHECK(trace::cot_label(0) == "cot_0");
    CHECK(trace::cot_label(17) == "cot_17");
    CHECK(trace::parse_cot_label("cot_12") == 12);
    CHECK(trace::parse_cot_label("12") == 12);
    CHECK(trace::parse_cot_label("<cot_3>") == 3);
    CHECK(trace::parse_cot_label("") == std::nullopt);
    CHECK(trace::parse_cot_label("cot_") == std::nullopt);
    CHECK(trace::parse_cot_label("cot_x") == std::nullopt);
}

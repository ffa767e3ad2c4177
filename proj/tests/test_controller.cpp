#include <doctest.h>

#include <string>

#include "taar/controller.hpp"
#include "taar/mock_server.hpp"
#include "taar/verify.hpp"

using namespace taar;
using controller::InterventionKind;
using controller::StrongOperator;
using mock::MockResponse;
using mock::MockScript;
using mock::MockServer;
using mock::Scenario;

namespace {

gateway::EndpointConfig endpoint_for(const MockServer& server, const std::string& model) {
    gateway::EndpointConfig cfg;
    cfg.base_url = server.base_url();
    cfg.model_name = model;
    cfg.timeout_s = 2.0;
    cfg.max_retries = 0;
    cfg.backoff_ms = 1;
    return cfg;
}

MockResponse text_response(std::string text, long long tokens) {
    MockResponse r;
    r.text = std::move(text);
    r.completion_tokens = tokens;
    return r;
}

std::string seg_marker(int i) { return "SEGB" + std::to_string(i) + ";"; }

// Planted-trap trajectory: think block with three >=200-char segments carrying
// positional markers, wrong final answer outside the block.
std::string planted_trajectory(bool correct) {
    std::string out = "<think>";
    for (int i = 0; i < 3; ++i) {
        if (i) out += "\n\n";
        out += seg_marker(i) + std::string(210, 'a' + static_cast<char>(i));
    }
    out += "</think>\nThe answer is ";
    out += correct ? "\\boxed{42}" : "\\boxed{7}";
    return out;
}

} // namespace

TEST_CASE("parse_diagnosis") {
    auto diag = controller::parse_diagnosis(R"({"trap_index":"cot_11","escape_probability":0.05})", 40);
    CHECK(diag.trap_index == 11);
    CHECK(diag.escape_prob == 0.05);
    CHECK_FALSE(diag.parse_error);
    CHECK_FALSE(diag.violation.has_value());

    SUBCASE("empty shape means no trap") {
        auto none = controller::parse_diagnosis(R"({"trap_index":"","escape_probability":""})", 40);
        CHECK_FALSE(none.has_trap());
        CHECK_FALSE(none.parse_error);
    }
    SUBCASE("out-of-range index becomes a violation, not a clamp") {
        auto bad = controller::parse_diagnosis(R"({"trap_index":"cot_99","escape_probability":0.2})", 40);
        CHECK_FALSE(bad.has_trap());
        REQUIRE(bad.violation.has_value());
        CHECK(bad.violation->find("outside") != std::string::npos);
    }
    SUBCASE("numeric string and plain integer forms") {
        auto s = controller::parse_diagnosis(R"({"trap_index":"7","escape_probability":"0.3"})", 10);
        CHECK(s.trap_index == 7);
        CHECK(s.escape_prob == 0.3);
        auto n = controller::parse_diagnosis(R"({"trap_index":3,"escape_probability":0.5})", 10);
        CHECK(n.trap_index == 3);
    }
    SUBCASE("unparseable output is a logged parse error") {
        auto broken = controller::parse_diagnosis("the trap is probably early on", 10);
        CHECK(broken.parse_error);
        CHECK_FALSE(broken.has_trap());
    }
    SUBCASE("trap without escape probability is a violation") {
        auto missing = controller::parse_diagnosis(R"({"trap_index":"cot_1"})", 10);
        CHECK_FALSE(missing.has_trap());
        CHECK(missing.violation.has_value());
    }
    SUBCASE("JSON inside prose is salvaged") {
        auto wrapped = controller::parse_diagnosis(
            "Analysis: {\"trap_index\":\"cot_2\",\"escape_probability\":0.8} done.", 10);
        CHECK(wrapped.trap_index == 2);
    }
}

TEST_CASE("decide thresholds use inclusive boundaries") {
    auto with_p = [](double p) {
        controller::Diagnosis d;
        d.trap_index = 5;
        d.escape_prob = p;
        return d;
    };
    CHECK(controller::decide(with_p(0.6)).kind == InterventionKind::none);   // inclusive >= 0.6
    CHECK(controller::decide(with_p(0.1)).kind == InterventionKind::strong); // inclusive <= 0.1
    CHECK(controller::decide(with_p(0.35)).kind == InterventionKind::mild);
    CHECK(controller::decide(with_p(0.599)).kind == InterventionKind::mild);
    CHECK(controller::decide(with_p(0.101)).kind == InterventionKind::mild);
    CHECK(controller::decide(with_p(0.0)).kind == InterventionKind::strong);
    CHECK(controller::decide(with_p(1.0)).kind == InterventionKind::none);

    controller::Diagnosis no_trap;
    CHECK(controller::decide(no_trap).kind == InterventionKind::none);

    CHECK_THROWS_AS(controller::decide(with_p(0.5), controller::Thresholds{0.1, 0.6}),
                    std::invalid_argument);

    SUBCASE("strong operator composition") {
        controller::OperatorConfig ops;
        ops.strong_operator = StrongOperator::high_temp;
        auto high = controller::decide(with_p(0.05), {}, ops);
        REQUIRE(high.op.has_value());
        CHECK(high.op->decoding.temperature == 1.0);
        CHECK_FALSE(high.op->suffix.has_value());

        ops.strong_operator = StrongOperator::suffix;
        auto suffixed = controller::decide(with_p(0.05), {}, ops);
        CHECK(suffixed.op->decoding.temperature == 0.7);
        REQUIRE(suffixed.op->suffix.has_value());
        CHECK(*suffixed.op->suffix == prompts::kRebootSuffixEn);

        ops.strong_operator = StrongOperator::both;
        auto both = controller::decide(with_p(0.05), {}, ops);
        CHECK(both.op->decoding.temperature == 1.0);
        CHECK(both.op->suffix.has_value());
    }
    SUBCASE("mild keeps default decoding and no suffix") {
        auto mild = controller::decide(with_p(0.35));
        REQUIRE(mild.op.has_value());
        CHECK(mild.op->decoding.temperature == 0.7);
        CHECK_FALSE(mild.op->suffix.has_value());
    }
}

TEST_CASE("build_restart_prompt") {
    trace::SegmentedTrajectory traj;
    for (int i = 0; i < 12; ++i) {
        traj.segments.push_back(trace::Segment{i, "segment-" + std::to_string(i) + ";"});
    }
    controller::Diagnosis diag;
    diag.trap_index = 11;
    diag.escape_prob = 0.05;
    auto strong = controller::decide(diag);

    SUBCASE("prefix stops strictly before the trap") {
        auto messages = controller::build_restart_prompt("the problem", traj, 11, strong);
        REQUIRE(messages.size() == 1);
        CHECK(messages[0].content.find("segment-10;") != std::string::npos);
        CHECK(messages[0].content.find("segment-11;") == std::string::npos);
    }
    SUBCASE("t_hat = 0 is a fresh attempt") {
        auto messages = controller::build_restart_prompt("the problem", traj, 0, strong);
        CHECK(messages[0].content == "the problem");
    }
    SUBCASE("suffix-bearing strong restarts end with the reboot sentence") {
        controller::OperatorConfig ops;
        ops.strong_operator = StrongOperator::suffix;
        auto decision = controller::decide(diag, {}, ops);
        auto messages = controller::build_restart_prompt("the problem", traj, 4, decision);
        const std::string& content = messages[0].content;
        REQUIRE(content.size() >= prompts::kRebootSuffixEn.size());
        CHECK(content.substr(content.size() - prompts::kRebootSuffixEn.size()) ==
              prompts::kRebootSuffixEn);
    }
    SUBCASE("range violations throw") {
        CHECK_THROWS_AS(controller::build_restart_prompt("p", traj, 12, strong),
                        std::out_of_range);
        controller::InterventionDecision none;
        CHECK_THROWS_AS(controller::build_restart_prompt("p", traj, 3, none),
                        std::invalid_argument);
    }
}

TEST_CASE("run_taar full loop against scripted endpoints") {
    verify::MathVerifier verifier;
    controller::Problem problem{"p7", "PROB7 what is the meaning?", "42"};

    auto make_script = [](const std::string& policy_json, bool restart_correct) {
        MockScript script;
        Scenario initial;
        initial.id = "initial";
        initial.contains = {"PROB7"};
        initial.not_contains = {"Continue the reasoning", "Please identify"};
        initial.responses = {text_response(planted_trajectory(false), 100)};
        initial.repeat_last = true;
        script.scenarios.push_back(std::move(initial));

        Scenario policy;
        policy.id = "policy";
        policy.contains = {"Please identify", "PROB7"};
        policy.responses = {text_response(policy_json, 20)};
        policy.repeat_last = true;
        script.scenarios.push_back(std::move(policy));

        Scenario restart;
        restart.id = "restart";
        restart.contains = {"PROB7", "Continue the reasoning"};
        restart.not_contains = {seg_marker(2)};
        restart.responses = {
            text_response(restart_correct ? "rethought. \\boxed{42}" : "\\boxed{9}", 50)};
        restart.repeat_last = true;
        script.scenarios.push_back(std::move(restart));
        return script;
    };

    SUBCASE("planted trap flips incorrect paths to correct") {
        MockServer server(make_script(R"({"trap_index":"cot_2","escape_probability":0.05})", true));
        server.start();
        auto reasoner = endpoint_for(server, "mock-reasoner");
        auto policy = endpoint_for(server, "mock-policy");

        controller::RunConfig config;
        config.seed = 1;
        auto run = controller::run_taar(problem, reasoner, policy, verifier, 4, config);

        REQUIRE(run.paths.size() == 4);
        for (const auto& path : run.paths) {
            CHECK(path.decision.kind == InterventionKind::strong);
            REQUIRE(path.restarted.has_value());
            REQUIRE(path.is_correct.has_value());
            CHECK(*path.is_correct);
        }
        CHECK(run.accuracy == 1.0);
        CHECK(run.tokens_baseline == 400);          // 4 x 100
        CHECK(run.tokens_extra_diagnostic == 80);   // 4 x 20
        CHECK(run.tokens_extra_restart == 200);     // 4 x 50
        CHECK(run.tokens_extra == 280);

        // budget accounting against the transcript itself
        long long scripted_total = 0;
        for (const auto& entry : server.transcript()) {
            if (entry.kind == "ok") scripted_total += entry.completion_tokens;
        }
        CHECK(run.tokens_baseline + run.tokens_extra == scripted_total);

        // truncation soundness: no restart prompt carries the trap segment
        for (const auto& entry : server.transcript()) {
            if (entry.scenario_id == "restart") {
                CHECK(entry.prompt.find(seg_marker(2)) == std::string::npos);
                CHECK(entry.prompt.find(seg_marker(1)) != std::string::npos);
            }
        }
    }
    SUBCASE("no-trap diagnoses leave the run identical to Avg@K") {
        MockServer server(make_script(R"({"trap_index":"","escape_probability":""})", true));
        server.start();
        auto run = controller::run_taar(problem, endpoint_for(server, "r"),
                                        endpoint_for(server, "p"), verifier, 4, {});
        for (const auto& path : run.paths) {
            CHECK(path.decision.kind == InterventionKind::none);
            CHECK_FALSE(path.restarted.has_value());
            CHECK(path.final_text == path.initial.text); // byte-identical no-op
            CHECK_FALSE(*path.is_correct);
        }
        CHECK(run.accuracy == 0.0);
        CHECK(run.tokens_extra == run.tokens_extra_diagnostic);
        CHECK(run.tokens_extra_restart == 0);
    }
    SUBCASE("budget_k=1 with moderate p_hat issues exactly one mild restart at 0.7") {
        MockServer server(make_script(R"({"trap_index":"cot_2","escape_probability":0.35})", true));
        server.start();
        auto run = controller::run_taar(problem, endpoint_for(server, "r"),
                                        endpoint_for(server, "p"), verifier, 1, {});
        REQUIRE(run.paths.size() == 1);
        CHECK(run.paths[0].decision.kind == InterventionKind::mild);

        int restarts = 0;
        for (const auto& entry : server.transcript()) {
            if (entry.scenario_id == "restart") {
                ++restarts;
                CHECK(entry.temperature == 0.7);
            }
        }
        CHECK(restarts == 1);
    }
    SUBCASE("strong restarts use temperature 1.0 by default") {
        MockServer server(make_script(R"({"trap_index":"cot_2","escape_probability":0.05})", true));
        server.start();
        controller::RunConfig config;
        auto run = controller::run_taar(problem, endpoint_for(server, "r"),
                                        endpoint_for(server, "p"), verifier, 1, config);
        CHECK(run.paths[0].decision.kind == InterventionKind::strong);
        for (const auto& entry : server.transcript()) {
            if (entry.scenario_id == "restart") CHECK(entry.temperature == 1.0);
        }
    }
    SUBCASE("force_strong reproduces the cut-at-all-traps ablation") {
        MockServer server(make_script(R"({"trap_index":"cot_2","escape_probability":0.9})", true));
        server.start();
        controller::RunConfig config;
        config.force_strong = true;
        auto run = controller::run_taar(problem, endpoint_for(server, "r"),
                                        endpoint_for(server, "p"), verifier, 2, config);
        for (const auto& path : run.paths) {
            CHECK(path.decision.kind == InterventionKind::strong);
            CHECK(path.restarted.has_value());
        }
    }
    SUBCASE("random p_hat substitution is deterministic per seed") {
        MockServer server(make_script(R"({"trap_index":"cot_2","escape_probability":0.9})", true));
        server.start();
        controller::RunConfig config;
        config.random_p_seed = 12345;
        auto run = controller::run_taar(problem, endpoint_for(server, "r"),
                                        endpoint_for(server, "p"), verifier, 2, config);
        MockServer server2(make_script(R"({"trap_index":"cot_2","escape_probability":0.9})", true));
        server2.start();
        auto run2 = controller::run_taar(problem, endpoint_for(server2, "r"),
                                         endpoint_for(server2, "p"), verifier, 2, config);
        for (std::size_t i = 0; i < run.paths.size(); ++i) {
            CHECK(run.paths[i].diagnosis.escape_prob == run2.paths[i].diagnosis.escape_prob);
        }
    }
    SUBCASE("policy failure degrades to the initial answer") {
        MockScript script;
        Scenario initial;
        initial.id = "initial";
        initial.contains = {"PROB7"};
        initial.not_contains = {"Please identify"};
        initial.responses = {text_response(planted_trajectory(true), 90)};
        initial.repeat_last = true;
        script.scenarios.push_back(std::move(initial));
        // no policy scenario: the policy call 404s
        MockServer server(std::move(script));
        server.start();

        auto run = controller::run_taar(problem, endpoint_for(server, "r"),
                                        endpoint_for(server, "p"), verifier, 1, {});
        REQUIRE(run.paths.size() == 1);
        CHECK(run.paths[0].note.find("policy call failed") != std::string::npos);
        CHECK(*run.paths[0].is_correct); // initial answer was correct
    }
    SUBCASE("prefix fraction truncates the policy input by segment count") {
        MockServer server(make_script(R"({"trap_index":"","escape_probability":""})", true));
        server.start();
        controller::RunConfig config;
        config.prefix_fraction = 0.5; // ceil(0.5 * 3) = 2 segments shown
        controller::run_taar(problem, endpoint_for(server, "r"), endpoint_for(server, "p"),
                             verifier, 1, config);
        for (const auto& entry : server.transcript()) {
            if (entry.scenario_id == "policy") {
                CHECK(entry.prompt.find(seg_marker(1)) != std::string::npos);
                CHECK(entry.prompt.find(seg_marker(2)) == std::string::npos);
            }
        }
    }
}

TEST_CASE("controlled run serializes to JSONL shape") {
    controller::ControlledRun run;
    run.problem_id = "p1";
    run.budget_k = 2;
    run.paths.resize(2);
    run.paths[0].final_answer = "42";
    run.paths[0].is_correct = true;
    run.tokens_baseline = 100;
    run.tokens_extra = 30;
    run.accuracy = 0.5;
    auto j = controller::to_json(run);
    CHECK(j.at("problem_id") == "p1");
    CHECK(j.at("paths").size() == 2);
    CHECK(j.at("tokens_baseline") == 100);
    CHECK(j.at("paths")[0].at("final_answer") == "42");
}

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "taar/config.hpp"
#include "taar/jsonl.hpp"

using namespace taar;
namespace fs = std::filesystem;

namespace {

const std::string kCli = TAAR_CLI_PATH;
const std::string kData = TAAR_DATA_DIR;

int run_cli(const std::string& args) {
    const std::string cmd = kCli + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

fs::path work_dir() {
    const fs::path dir = fs::temp_directory_path() / "taar_cli_test";
    fs::create_directories(dir);
    return dir;
}

} // namespace

TEST_CASE("config parsing and precedence") {
    SUBCASE("file values override defaults") {
        auto cfg = config::config_from_json(nlohmann::json::parse(R"({
            "budget_k": 2, "escape_budget": 12,
            "thresholds": {"hi": 0.7, "lo": 0.2},
            "split": {"train": 70, "dev": 20, "test": 10, "seed": 7},
            "strong_operator": "both", "suffix_language": "fr",
            "max_in_flight": 3, "prefix_fraction": 0.4, "aggregator": "vote"
        })"));
        CHECK(cfg.budget_k == 2);
        CHECK(cfg.escape_budget == 12);
        CHECK(cfg.thresholds.hi == 0.7);
        CHECK(cfg.thresholds.lo == 0.2);
        CHECK(cfg.split_ratios.train == 70);
        CHECK(cfg.split_seed == 7);
        CHECK(cfg.strong_operator == "both");
        CHECK(cfg.suffix_language == "fr");
        CHECK(cfg.max_in_flight == 3);
        CHECK(cfg.prefix_fraction == 0.4);
        CHECK(cfg.aggregator == "vote");
    }
    SUBCASE("defaults carry the pipeline constants") {
        auto cfg = config::config_from_json(nlohmann::json::object());
        CHECK(cfg.escape_budget == 36);
        CHECK(cfg.thresholds.hi == 0.6);
        CHECK(cfg.thresholds.lo == 0.1);
        CHECK(cfg.budget_k == 4);
        CHECK(cfg.split_seed == 42);
        CHECK(cfg.decoding.temperature == 0.7);
        CHECK(cfg.decoding.max_tokens == 32768);
        CHECK_FALSE(cfg.decoding.top_p.has_value());
    }
    SUBCASE("invalid configs are rejected") {
        CHECK_THROWS_AS(config::config_from_json(nlohmann::json::parse(
                            R"({"thresholds": {"hi": 0.1, "lo": 0.6}})")),
                        config::ConfigError);
        CHECK_THROWS_AS(config::config_from_json(nlohmann::json::parse(R"({"budget_k": 0})")),
                        config::ConfigError);
        CHECK_THROWS_AS(
            config::config_from_json(nlohmann::json::parse(
                R"({"endpoints": {"reasoner": {"timeout_s": -1}}})")),
            config::ConfigError);
    }
}

TEST_CASE("cli: mock run smoke and determinism") {
    const fs::path dir = work_dir();
    const std::string runs = (dir / "runs.jsonl").string();
    const std::string script = kData + "/mock_scenarios.json";
    const std::string problems = kData + "/problems_sample.jsonl";

    const int code = run_cli("--mock --mock-script " + script + " run --problems " + problems +
                             " --output " + runs + " --budget-k 4");
    REQUIRE(code == 0);
    auto lines = io::read_jsonl(runs);
    REQUIRE(lines.size() == 3);
    for (const auto& j : lines) {
        CHECK(j.at("budget_k") == 4);
        CHECK(j.at("paths").size() == 4);
        CHECK(j.at("accuracy") == 1.0); // scripted restarts fix every path
        CHECK(j.at("tokens_extra").get<long long>() > 0);
    }

    // re-running with unchanged inputs overwrites with identical bytes
    const std::string before = io::read_file(runs);
    REQUIRE(run_cli("--mock --mock-script " + script + " run --problems " + problems +
                    " --output " + runs + " --budget-k 4") == 0);
    CHECK(io::read_file(runs) == before);
}

TEST_CASE("cli: full mock pipeline (segment, annotate, estimate, build-dataset)") {
    const fs::path dir = work_dir();
    const std::string script = kData + "/mock_scenarios.json";
    const std::string problems = kData + "/problems_sample.jsonl";
    const std::string traj = (dir / "traj.jsonl").string();
    const std::string ann = (dir / "ann.jsonl").string();
    const std::string esc = (dir / "esc.jsonl").string();
    const std::string outdir = (dir / "dataset").string();

    REQUIRE(run_cli("segment --input " + kData + "/raw_sample.jsonl --output " + traj) == 0);
    auto trajs = io::read_jsonl(traj);
    REQUIRE(trajs.size() == 3);
    CHECK(trajs[0].at("segments").size() == 3);

    REQUIRE(run_cli("--mock --mock-script " + script + " annotate --trajectories " + traj +
                    " --problems " + problems + " --output " + ann) == 0);
    auto anns = io::read_jsonl(ann);
    REQUIRE(anns.size() == 3);
    CHECK(anns[0].at("status") == "ok");
    CHECK(anns[0].at("annotation").at("trap") == "cot_1");
    CHECK(anns[0].at("validation").at("ok") == true);

    REQUIRE(run_cli("--mock --mock-script " + script + " estimate-escape --trajectories " + traj +
                    " --annotations " + ann + " --problems " + problems + " --output " + esc +
                    " --escape-budget 6 --seed 5") == 0);
    auto escs = io::read_jsonl(esc);
    REQUIRE(escs.size() == 3);
    CHECK(escs[0].at("estimate").at("n_trials") == 6);
    CHECK(escs[0].at("estimate").at("p_escape") == 1.0);

    const std::string ds_cmd = "build-dataset --trajectories " + traj + " --annotations " + ann +
                               " --escapes " + esc + " --problems " + problems + " --outdir " +
                               outdir + " --seed 42 --pair-seed 9";
    REQUIRE(run_cli(ds_cmd) == 0);
    REQUIRE(fs::exists(fs::path(outdir) / "corpus.jsonl"));
    REQUIRE(fs::exists(fs::path(outdir) / "pairs.jsonl"));
    REQUIRE(fs::exists(fs::path(outdir) / "split_manifest.json"));
    REQUIRE(fs::exists(fs::path(outdir) / "pattern_table.csv"));
    REQUIRE(fs::exists(fs::path(outdir) / "difficulty_table.csv"));
    REQUIRE(fs::exists(fs::path(outdir) / "audit_worksheet.csv"));

    auto corpus = io::read_jsonl((fs::path(outdir) / "corpus.jsonl").string());
    CHECK(corpus.size() == 3);
    auto pairs = io::read_jsonl((fs::path(outdir) / "pairs.jsonl").string());
    CHECK(pairs.size() > 0);
    for (const auto& p : pairs) {
        CHECK(p.contains("input"));
        CHECK(p.contains("output"));
        CHECK(p.at("meta").contains("split"));
    }

    // byte-identical rerun
    const std::string pairs_before = io::read_file((fs::path(outdir) / "pairs.jsonl").string());
    const std::string corpus_before = io::read_file((fs::path(outdir) / "corpus.jsonl").string());
    const std::string manifest_before =
        io::read_file((fs::path(outdir) / "split_manifest.json").string());
    REQUIRE(run_cli(ds_cmd) == 0);
    CHECK(io::read_file((fs::path(outdir) / "pairs.jsonl").string()) == pairs_before);
    CHECK(io::read_file((fs::path(outdir) / "corpus.jsonl").string()) == corpus_before);
    CHECK(io::read_file((fs::path(outdir) / "split_manifest.json").string()) == manifest_before);
}

TEST_CASE("cli: pattern tables need all four scales") {
    const fs::path dir = work_dir();
    const std::string script = kData + "/mock_scenarios.json";
    const std::string problems = kData + "/problems_sample.jsonl";

    // derive a 4-scale corpus: same raw outputs, one per model scale
    const std::string raw4 = (dir / "raw4.jsonl").string();
    {
        auto lines = io::read_jsonl(kData + "/raw_sample.jsonl");
        std::ofstream out(raw4);
        for (const auto& j : lines) {
            for (const char* scale : {"mock-4B", "mock-8B", "mock-20B", "mock-120B"}) {
                auto copy = j;
                copy["model_id"] = scale;
                out << copy.dump() << "\n";
            }
        }
    }
    const std::string traj = (dir / "traj4.jsonl").string();
    const std::string ann = (dir / "ann4.jsonl").string();
    const std::string esc = (dir / "esc4.jsonl").string();
    const std::string outdir = (dir / "dataset4").string();
    REQUIRE(run_cli("segment --input " + raw4 + " --output " + traj) == 0);
    REQUIRE(run_cli("--mock --mock-script " + script + " annotate --trajectories " + traj +
                    " --problems " + problems + " --output " + ann) == 0);
    REQUIRE(run_cli("--mock --mock-script " + script + " estimate-escape --trajectories " + traj +
                    " --annotations " + ann + " --problems " + problems + " --output " + esc +
                    " --escape-budget 4") == 0);
    REQUIRE(run_cli("build-dataset --trajectories " + traj + " --annotations " + ann +
                    " --escapes " + esc + " --problems " + problems + " --outdir " + outdir) == 0);

    // every trajectory is wrong at every scale: pattern 0000 over 3 problems
    // x 4 scales = 12 trajectories, all with traps
    const std::string csv = io::read_file((fs::path(outdir) / "pattern_table.csv").string());
    CHECK(csv.find("0000,12,12,0") != std::string::npos);
    const std::string diff = io::read_file((fs::path(outdir) / "difficulty_table.csv").string());
    CHECK(diff.find("4 (0/4 correct),12") != std::string::npos);
}

TEST_CASE("cli: diagnose and eval") {
    const fs::path dir = work_dir();
    const std::string script = kData + "/mock_scenarios.json";
    const std::string problems = kData + "/problems_sample.jsonl";
    const std::string traj = (dir / "traj2.jsonl").string();
    const std::string diag = (dir / "diag.jsonl").string();
    const std::string outdir = (dir / "reports").string();

    REQUIRE(run_cli("segment --input " + kData + "/raw_sample.jsonl --output " + traj) == 0);
    REQUIRE(run_cli("--mock --mock-script " + script + " diagnose --trajectories " + traj +
                    " --output " + diag) == 0);
    auto diags = io::read_jsonl(diag);
    REQUIRE(diags.size() == 3);
    CHECK(diags[0].at("trap_index") == 1);
    CHECK(diags[0].at("escape_probability") == 0.05);

    REQUIRE(run_cli("--mock --mock-script " + script + " eval --problems " + problems +
                    " --methods avg_k,taar --outdir " + outdir + " --budget-k 2") == 0);
    const std::string csv = io::read_file((fs::path(outdir) / "accuracy.csv").string());
    CHECK(csv.find("avg_k") != std::string::npos);
    CHECK(csv.find("taar") != std::string::npos);
    REQUIRE(fs::exists(fs::path(outdir) / "bundle.json"));

    // gold annotations unlock the cut-strategy escape table
    const std::string ann = (dir / "ann2.jsonl").string();
    REQUIRE(run_cli("--mock --mock-script " + script + " annotate --trajectories " + traj +
                    " --problems " + problems + " --output " + ann) == 0);
    REQUIRE(run_cli("--mock --mock-script " + script + " eval --problems " + problems +
                    " --methods taar --outdir " + outdir + " --budget-k 2 --trajectories " + traj +
                    " --annotations " + ann + " --cut-budget 4") == 0);
    const std::string escape_csv = io::read_file((fs::path(outdir) / "escape_rates.csv").string());
    CHECK(escape_csv.find("trap") != std::string::npos);
    CHECK(escape_csv.find("post_trap") != std::string::npos);
    REQUIRE(fs::exists(fs::path(outdir) / "long.csv"));
}

TEST_CASE("cli: report computes token tables from runs") {
    const fs::path dir = work_dir();
    const std::string runs = (dir / "tr.jsonl").string();
    const std::string ablation = (dir / "ta.jsonl").string();
    {
        std::ofstream out(runs);
        out << R"({"model_id":"4B","tokens_baseline":1735110,"tokens_extra":576918})" << "\n";
    }
    {
        std::ofstream out(ablation);
        out << R"({"model_id":"4B","tokens_baseline":1735110,"tokens_extra":1377418})" << "\n";
    }
    const std::string outdir = (dir / "token_reports").string();
    REQUIRE(run_cli("report --runs " + runs + " --ablation-runs " + ablation + " --outdir " +
                    outdir) == 0);
    const std::string csv = io::read_file((fs::path(outdir) / "tokens.csv").string());
    CHECK(csv.find("4B") != std::string::npos);
    CHECK(csv.find("0.332") != std::string::npos); // 576918 / 1735110
}

TEST_CASE("cli: exit codes") {
    const fs::path dir = work_dir();
    SUBCASE("missing input exits 3") {
        CHECK(run_cli("segment --input /nonexistent/raw.jsonl") == 3);
    }
    SUBCASE("config parse failure exits 2") {
        const std::string bad = (dir / "bad_config.json").string();
        std::ofstream(bad) << "{ not json";
        CHECK(run_cli("--config " + bad + " segment --input " + kData + "/raw_sample.jsonl") == 2);
    }
    SUBCASE("unreachable endpoint without mock exits 4") {
        const std::string traj = (dir / "traj3.jsonl").string();
        REQUIRE(run_cli("segment --input " + kData + "/raw_sample.jsonl --output " + traj) == 0);
        CHECK(run_cli("diagnose --trajectories " + traj + " --output " +
                      (dir / "d.jsonl").string()) == 4);
    }
}

TEST_CASE("cli: flag beats config file beats default") {
    const fs::path dir = work_dir();
    const std::string script = kData + "/mock_scenarios.json";
    const std::string problems = kData + "/problems_sample.jsonl";
    const std::string cfg_path = (dir / "cfg.json").string();
    {
        nlohmann::json cfg;
        cfg["mock_mode"] = true;
        cfg["mock_script"] = script;
        cfg["budget_k"] = 2;
        cfg["thresholds"] = {{"hi", 0.6}, {"lo", 0.1}};
        std::ofstream(cfg_path) << cfg.dump(2);
    }
    const std::string runs = (dir / "prec.jsonl").string();

    // config value (2) applies when no flag is passed
    REQUIRE(run_cli("--config " + cfg_path + " run --problems " + problems + " --output " + runs) == 0);
    CHECK(io::read_jsonl(runs)[0].at("budget_k") == 2);

    // flag (3) overrides the config file
    REQUIRE(run_cli("--config " + cfg_path + " run --problems " + problems + " --output " + runs +
                    " --budget-k 3") == 0);
    CHECK(io::read_jsonl(runs)[0].at("budget_k") == 3);
}

#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

// Full command-line walkthrough: exercised only when the binary path is
// provided (ctest sets MMINFOREC_CLI).
const char* cli_path() { return std::getenv("MMINFOREC_CLI"); }

struct CliRun {
    int exit_code = -1;
    std::string output;
};

CliRun run_cli(const std::string& args, const fs::path& log) {
    std::string cmd = std::string(cli_path()) + " " + args + " > " + log.string() + " 2>&1";
    int rc = std::system(cmd.c_str());
    CliRun res;
    res.exit_code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    std::ifstream f(log);
    std::stringstream ss;
    ss << f.rdbuf();
    res.output = ss.str();
    return res;
}

}  // namespace

TEST_CASE("cli: end-to-end walkthrough", "[cli]") {
    if (cli_path() == nullptr) {
        SKIP("MMINFOREC_CLI not set");
    }
    fs::path tmp = fs::temp_directory_path() / ("mmr_cli_" + std::to_string(::getpid()));
    fs::create_directories(tmp);
    fs::path log = tmp / "out.txt";

    SECTION("unknown subcommand exits 1") {
        CliRun r = run_cli("frobnicate", log);
        REQUIRE(r.exit_code == 1);
    }

    SECTION("pipeline: synth, preprocess, train, evaluate, inspect") {
        REQUIRE(run_cli("synth --users 150 --items 30 --attrs 5 --seed 3 --out " + (tmp / "raw").string(),
                        log).exit_code == 0);
        REQUIRE(fs::exists(tmp / "raw" / "interactions.tsv"));
        REQUIRE(fs::exists(tmp / "raw" / "transition.csv"));

        REQUIRE(run_cli("preprocess --interactions " + (tmp / "raw" / "interactions.tsv").string() +
                            " --attributes " + (tmp / "raw" / "attributes.tsv").string() + " --out " +
                            (tmp / "ds").string(),
                        log).exit_code == 0);
        REQUIRE(fs::exists(tmp / "ds" / "sequences.tsv"));
        REQUIRE(fs::exists(tmp / "ds" / "stats.json"));

        // config file + flag precedence: the flag wins
        {
            std::ofstream cf(tmp / "config.json");
            cf << R"({"d": 16, "b": 5, "epochs": 5, "lr": 0.001, "batch_size": 64})";
        }
        CliRun tr = run_cli("train --config " + (tmp / "config.json").string() + " --data " +
                                (tmp / "ds").string() + " --out " + (tmp / "run").string() +
                                " --epochs 1 --seed 11",
                            log);
        REQUIRE(tr.exit_code == 0);
        REQUIRE(fs::exists(tmp / "run" / "log.csv"));
        REQUIRE(fs::exists(tmp / "run" / "checkpoint" / "manifest.json"));
        REQUIRE(fs::exists(tmp / "run" / "memory_norms.csv"));

        std::ifstream rf(tmp / "run" / "config.resolved.json");
        nlohmann::json resolved = nlohmann::json::parse(rf);
        REQUIRE(resolved.at("epochs").get<int>() == 1);  // flag overrode the file
        REQUIRE(resolved.at("d").get<int>() == 16);      // file value kept
        REQUIRE(resolved.at("lr").get<double>() == 0.001);

        CliRun ev = run_cli("evaluate --checkpoint " + (tmp / "run" / "checkpoint").string() + " --data " +
                                (tmp / "ds").string() + " --split test --out " + (tmp / "eval").string(),
                            log);
        REQUIRE(ev.exit_code == 0);
        REQUIRE(fs::exists(tmp / "eval" / "metrics_test.json"));
        REQUIRE(fs::exists(tmp / "eval" / "metrics_test_ranks.csv"));

        // re-running evaluate from the run directory reproduces the metrics
        CliRun ev2 = run_cli("evaluate --checkpoint " + (tmp / "run" / "checkpoint").string() + " --data " +
                                 (tmp / "ds").string() + " --split test --out " + (tmp / "eval2").string(),
                             log);
        REQUIRE(ev2.exit_code == 0);
        std::ifstream m1(tmp / "eval" / "metrics_test.json"), m2(tmp / "eval2" / "metrics_test.json");
        std::stringstream s1, s2;
        s1 << m1.rdbuf();
        s2 << m2.rdbuf();
        REQUIRE(s1.str() == s2.str());

        CliRun in = run_cli("inspect --checkpoint " + (tmp / "run" / "checkpoint").string() + " --out " +
                                (tmp / "inspect").string(),
                            log);
        REQUIRE(in.exit_code == 0);
        std::ifstream norms(tmp / "inspect" / "memory_norms.csv");
        int lines = 0;
        std::string line;
        while (std::getline(norms, line)) ++lines;
        REQUIRE(lines == 1 + 5);  // header + b rows
    }

    SECTION("gradcheck subcommand exits by pass/fail") {
        CliRun gc = run_cli("gradcheck --dims 8 --batch 4", log);
        REQUIRE(gc.exit_code == 0);
        REQUIRE(gc.output.find("PASS") != std::string::npos);
    }

    SECTION("validation errors exit 1") {
        CliRun bad = run_cli("train --data /nowhere --out " + (tmp / "x").string() + " --tau -1", log);
        REQUIRE(bad.exit_code == 1);
        REQUIRE(bad.output.find("tau") != std::string::npos);

        std::ofstream cf(tmp / "bad.json");
        cf << R"({"unknown_knob": 3})";
        cf.close();
        CliRun badcfg = run_cli("train --config " + (tmp / "bad.json").string() + " --data /nowhere --out " +
                                    (tmp / "x").string(),
                                log);
        REQUIRE(badcfg.exit_code == 1);
        REQUIRE(badcfg.output.find("unknown_knob") != std::string::npos);
    }

    SECTION("ablate rejects unknown variants before running") {
        CliRun ab = run_cli("ablate --variants cpc,bogus --data " + (tmp / "ds").string() + " --out " +
                                (tmp / "abl").string(),
                            log);
        REQUIRE(ab.exit_code == 1);
        REQUIRE(ab.output.find("bogus") != std::string::npos);
    }

    SECTION("MMINFOREC_OUT provides the default output directory") {
        std::string cmd = std::string("MMINFOREC_OUT=") + (tmp / "envout").string() + " " + cli_path() +
                          " synth --users 120 --items 25 --attrs 5 > " + log.string() + " 2>&1";
        int rc = std::system(cmd.c_str());
        REQUIRE(WEXITSTATUS(rc) == 0);
        REQUIRE(fs::exists(tmp / "envout" / "interactions.tsv"));
    }

    fs::remove_all(tmp);
}

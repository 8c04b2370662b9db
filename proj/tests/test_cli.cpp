// Shells out to the takin binary (TAKIN_BIN) against the bundled fixtures
// (TAKIN_FIXTURES). Covers exit codes, stats lines, and report files.
#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "takin/config.hpp"

using nlohmann::json;

namespace {

struct CmdResult {
    int exit_code = -1;
    std::string output;
};

std::string bin() {
    const char* b = std::getenv("TAKIN_BIN");
    REQUIRE(b != nullptr);
    return b;
}

std::string fixtures() {
    const char* f = std::getenv("TAKIN_FIXTURES");
    REQUIRE(f != nullptr);
    return f;
}

CmdResult run(const std::string& args) {
    const std::string cmd = bin() + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    CmdResult result;
    std::array<char, 4096> buf{};
    size_t n = 0;
    while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) result.output.append(buf.data(), n);
    const int status = pclose(pipe);
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return result;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("cli: usage errors exit 1, help exits 0") {
    CHECK(run("--help").exit_code == 0);
    CHECK(run("frobnicate").exit_code == 1);
    CHECK(run("synth").exit_code == 1); // missing required --phones
}

TEST_CASE("cli: synth writes a WAV whose inversion matches the token log") {
    const auto r = run("synth --phones \"5 6 7 8\" --mode sampled --seed 7 --top-k 64 "
                       "--max-new-tokens 24 --out /tmp/takin_cli_synth.wav");
    CAPTURE(r.output);
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("per_self=0") != std::string::npos);
    CHECK(r.output.find("tokens=24") != std::string::npos);
    std::remove("/tmp/takin_cli_synth.wav");
}

TEST_CASE("cli: synth error paths") {
    const auto missing = run("synth --phones \"5 6\" --prompt /nonexistent/p.wav --out /tmp/x.wav");
    CHECK(missing.exit_code == 2);
    CHECK(missing.output.find("/nonexistent/p.wav") != std::string::npos);

    const auto bad_phones = run("synth --phones \"2\" --out /tmp/x.wav");
    CHECK(bad_phones.exit_code == 2);
    CHECK(bad_phones.output.find("phoneme") != std::string::npos);

    // two adapters of the same kind are rejected
    REQUIRE(run("adapter pack --out /tmp/a1.tkla --name a1 --kind domain --rank 2").exit_code == 0);
    REQUIRE(run("adapter pack --out /tmp/a2.tkla --name a2 --kind domain --rank 2").exit_code == 0);
    const auto conflict =
        run("synth --phones \"5 6\" --adapter /tmp/a1.tkla --adapter /tmp/a2.tkla --out /tmp/x.wav");
    CHECK(conflict.exit_code == 2);
    CHECK(conflict.output.find("adapter-kind-conflict") != std::string::npos);
    std::remove("/tmp/a1.tkla");
    std::remove("/tmp/a2.tkla");
}

TEST_CASE("cli: adapter pack then inspect round-trips metadata") {
    REQUIRE(run("adapter pack --out /tmp/takin_cli.tkla --name narrator --kind speaker --rank 6 "
                "--alpha 12 --seed 3").exit_code == 0);
    const auto r = run("adapter inspect --file /tmp/takin_cli.tkla");
    CHECK(r.exit_code == 0);
    const json meta = json::parse(r.output);
    CHECK(meta.at("name") == "narrator");
    CHECK(meta.at("kind") == "speaker");
    CHECK(meta.at("rank") == 6);
    CHECK(meta.at("layers") == 4);
    std::remove("/tmp/takin_cli.tkla");

    CHECK(run("adapter inspect --file /nonexistent.tkla").exit_code == 2);
}

TEST_CASE("cli: synth accepts packed adapters") {
    REQUIRE(run("adapter pack --out /tmp/dom.tkla --name dom --kind domain --rank 4").exit_code == 0);
    REQUIRE(run("adapter pack --out /tmp/spk.tkla --name spk --kind speaker --rank 4").exit_code == 0);
    const auto r = run("synth --phones \"5 6 7\" --adapter /tmp/dom.tkla --adapter /tmp/spk.tkla "
                       "--mode sampled --seed 3 --max-new-tokens 12 --out /tmp/takin_ad.wav");
    CAPTURE(r.output);
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("per_self=0") != std::string::npos);
    std::remove("/tmp/dom.tkla");
    std::remove("/tmp/spk.tkla");
    std::remove("/tmp/takin_ad.wav");
}

TEST_CASE("cli: eval pairs is deterministic and overlap reproduces 0.64") {
    const std::string fx = fixtures();
    REQUIRE(run("eval pairs --samples " + fx + "/ratings_100.jsonl --source objective --out "
                "/tmp/takin_obj1.json").exit_code == 0);
    REQUIRE(run("eval pairs --samples " + fx + "/ratings_100.jsonl --source objective --out "
                "/tmp/takin_obj2.json").exit_code == 0);
    CHECK(read_file("/tmp/takin_obj1.json") == read_file("/tmp/takin_obj2.json"));

    REQUIRE(run("eval pairs --samples " + fx + "/ratings_100.jsonl --source subjective --ranks " +
                fx + "/ranks_100.csv --out /tmp/takin_subj.json").exit_code == 0);

    const auto ov = run("eval overlap --a /tmp/takin_obj1.json --b /tmp/takin_subj.json --out "
                        "/tmp/takin_overlap.json");
    CHECK(ov.exit_code == 0);
    CHECK(ov.output.find("overlap=0.64") != std::string::npos);
    const json report = json::parse(read_file("/tmp/takin_overlap.json"));
    CHECK(report.at("overlap") == 0.64);

    std::remove("/tmp/takin_obj1.json");
    std::remove("/tmp/takin_obj2.json");
    std::remove("/tmp/takin_subj.json");
    std::remove("/tmp/takin_overlap.json");
}

TEST_CASE("cli: eval bcr reports 0.01 on the bundled fixture") {
    const auto r = run("eval bcr --input " + fixtures() + "/bcr_100.jsonl --out-json /tmp/takin_bcr.json");
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("bcr=0.01") != std::string::npos);
    const json report = json::parse(read_file("/tmp/takin_bcr.json"));
    CHECK(report.at("bad_count") == 1);
    CHECK(report.at("bcr") == 0.01);
    std::remove("/tmp/takin_bcr.json");
}

TEST_CASE("cli: eval per aggregates the demo fixture") {
    const auto r = run("eval per --input " + fixtures() + "/per_demo.jsonl --out-json /tmp/takin_per.json");
    CHECK(r.exit_code == 0);
    const json report = json::parse(read_file("/tmp/takin_per.json"));
    CHECK(report.at("count") == 3);
    CHECK_THAT(report.at("mean_per").get<double>(), Catch::Matchers::WithinAbs(0.1, 1e-12));
    std::remove("/tmp/takin_per.json");

    const auto bad = run("eval per --input /nonexistent.jsonl");
    CHECK(bad.exit_code == 2);
}

TEST_CASE("cli: eval rejects schema violations with line numbers") {
    const std::string path = "/tmp/takin_bad_schema.jsonl";
    {
        std::ofstream out(path);
        out << R"({"id": "ok", "reference": [1,2], "hypothesis": [1]})" << "\n";
        out << R"({"id": "broken", "reference": "nope"})" << "\n";
    }
    const auto r = run("eval per --input " + path);
    CHECK(r.exit_code == 2);
    CHECK(r.output.find(":2") != std::string::npos);
    std::remove(path.c_str());
}

TEST_CASE("cli: bench small run passes its budget and orders percentiles") {
    const auto r = run("bench --requests 6 --concurrency 2 --phones-len uniform:4,10 "
                       "--max-new-tokens 8 --latency-budget 10000");
    CAPTURE(r.output);
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("PASS") != std::string::npos);
    CHECK(r.output.find("failures=0") != std::string::npos);

    // p50 <= p95 <= p99
    double p50 = -1, p95 = -1, p99 = -1;
    std::sscanf(r.output.c_str() + r.output.find("p50="), "p50=%lf p95=%lf p99=%lf", &p50, &p95, &p99);
    REQUIRE(p50 >= 0);
    CHECK(p50 <= p95);
    CHECK(p95 <= p99);
}

TEST_CASE("cli: serve prints the resolved config checksum and drains on SIGTERM") {
    const std::string cfg_path = "/tmp/takin_serve_cfg.json";
    {
        std::ofstream out(cfg_path);
        out << R"({"model": {"seed": 5}, "cache": {"pages": 64}})";
    }
    takin::Config expected = takin::load_config_file(cfg_path);
    expected.port = 0; // serve runs with --port 0; the printed checksum is of the resolved config
    char want[32];
    std::snprintf(want, sizeof(want), "%016llx", static_cast<unsigned long long>(expected.checksum()));

    const std::string script = bin() + " --config " + cfg_path +
                               " serve --port 0 > /tmp/takin_serve_out.txt 2>&1 & " +
                               "PID=$!; sleep 0.7; kill -TERM $PID; wait $PID";
    const int status = std::system(("/bin/sh -c '" + script + "'").c_str());
    CHECK(WIFEXITED(status));
    CHECK(WEXITSTATUS(status) == 0);

    const std::string out = read_file("/tmp/takin_serve_out.txt");
    CAPTURE(out);
    CHECK(out.find(std::string("config_checksum=0x") + want) != std::string::npos);
    CHECK(out.find("draining") != std::string::npos);
    CHECK(out.find("bye") != std::string::npos);
    std::remove(cfg_path.c_str());
    std::remove("/tmp/takin_serve_out.txt");

    // invalid config refuses to start, naming both fields
    const std::string bad_path = "/tmp/takin_bad_cfg.json";
    {
        std::ofstream out2(bad_path);
        out2 << R"({"vocab": {"codec_count": 2000}})";
    }
    const auto bad = run("--config " + bad_path + " serve");
    CHECK(bad.exit_code == 2);
    CHECK(bad.output.find("codec_count") != std::string::npos);
    CHECK(bad.output.find("frame_len") != std::string::npos);
    std::remove(bad_path.c_str());
}

TEST_CASE("cli: TAKIN_CONFIG env var is honored") {
    const std::string cfg_path = "/tmp/takin_env_cfg.json";
    {
        std::ofstream out(cfg_path);
        // a config the validator rejects; proves the env file was read
        out << R"({"scheduler": {"preempt_policy": "bogus"}})";
    }
    const std::string cmd = "TAKIN_CONFIG=" + cfg_path + " " + bin() +
                            " synth --phones \"5 6\" --out /tmp/x.wav 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::string output;
    std::array<char, 1024> buf{};
    size_t n = 0;
    while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) output.append(buf.data(), n);
    const int status = pclose(pipe);
    CHECK(WEXITSTATUS(status) == 2);
    CHECK(output.find("bogus") != std::string::npos);
    std::remove(cfg_path.c_str());
}

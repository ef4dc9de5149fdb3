// SPDX-License-Identifier: Apache-2.0
#include "acceptance_checks.hpp"
#include "support.hpp"

#include "finesec/cli.hpp"
#include "finesec/distill.hpp"

#include <catch_amalgamated.hpp>
#include <json.hpp>

#include <sstream>

using namespace finesec;
using nlohmann::json;

namespace {

struct Invocation {
    int code;
    std::string out;
    std::string err;
};

Invocation invoke(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

void write_corpus(const std::filesystem::path& p) {
    std::string jsonl;
    for (int i = 0; i < 4; ++i) {
        json j = {{"id", "s" + std::to_string(i)},
                  {"code", "int f" + std::to_string(i) + "(int a)\n{\n    return a + " + std::to_string(i) + ";\n}\n"},
                  {"label", i % 2 ? "vulnerable" : "benign"}};
        if (i % 2) j["cwe_id"] = "CWE-190";
        jsonl += j.dump() + "\n";
    }
    fstest::spit(p, jsonl);
}

}  // namespace

TEST_CASE("unknown subcommand is a usage error") {
    const auto r = invoke({"frobnicate"});
    CHECK(r.code == cli::kExitUsage);
    CHECK(r.err.find("finesec") != std::string::npos);
    CHECK(invoke({}).code == cli::kExitUsage);
}

TEST_CASE("help and version succeed") {
    auto r = invoke({"--help"});
    CHECK(r.code == cli::kExitOk);
    CHECK(r.out.find("pipeline") != std::string::npos);
    CHECK(invoke({"--version"}).code == cli::kExitOk);
}

TEST_CASE("missing required flag names the flag") {
    fstest::TempDir tmp;
    const auto r = invoke({"evaluate", "--out", (tmp / "e").string()});
    CHECK(r.code == cli::kExitUsage);
    CHECK(r.err.find("--truth") != std::string::npos);
}

TEST_CASE("gate exit codes") {
    fstest::TempDir tmp;
    const auto verdict = tmp / "gate.json";
    auto ok = invoke({"gate", "--accuracy", "0.75", "--latency-ms", "100", "--memory-mb", "1000", "--out",
                      verdict.string()});
    CHECK(ok.code == cli::kExitOk);
    CHECK(json::parse(fstest::slurp(verdict)).at("passed") == true);

    auto bad = invoke({"gate", "--accuracy", "0.55", "--latency-ms", "100", "--memory-mb", "1000", "--out",
                       verdict.string()});
    CHECK(bad.code == cli::kExitDomain);
    CHECK(bad.out.find("accuracy below threshold") != std::string::npos);

    CHECK(invoke({"gate", "--accuracy", "0.9", "--memory-mb", "1"}).code == cli::kExitUsage);
    CHECK(invoke({"gate", "--accuracy", "0.9", "--latency-ms", "1", "--memory-mb", "1", "--min-accuracy", "2"})
              .code == cli::kExitDomain);
}

TEST_CASE("domain errors exit 1") {
    fstest::TempDir tmp;
    const auto r = invoke({"preprocess", "--in", (tmp / "missing.jsonl").string(), "--out", (tmp / "o.jsonl").string()});
    CHECK(r.code == cli::kExitDomain);
    CHECK_FALSE(r.err.empty());
}

TEST_CASE("preprocess writes outputs and a run manifest") {
    fstest::TempDir tmp;
    write_corpus(tmp / "raw.jsonl");
    const auto out = tmp / "clean.jsonl";
    const auto r = invoke({"preprocess", "--in", (tmp / "raw.jsonl").string(), "--out", out.string(), "--min-lines",
                           "1", "--name", "t"});
    INFO(r.err);
    REQUIRE(r.code == cli::kExitOk);
    CHECK(std::filesystem::exists(out));
    const auto m = json::parse(fstest::slurp(out.string() + ".run.json"));
    CHECK(m.at("command") == "preprocess");
    CHECK(m.at("exit_code") == 0);
    CHECK(m.at("status") == "ok");
    CHECK(m.at("inputs").contains((tmp / "raw.jsonl").string()));
    CHECK(m.at("outputs").at(out.string()) == sha256_hex(fstest::slurp(out)));
}

TEST_CASE("failed runs still write a manifest") {
    fstest::TempDir tmp;
    const auto manifest = tmp / "m.json";
    const auto r = invoke({"--manifest", manifest.string(), "gate", "--accuracy", "0.1", "--latency-ms", "1",
                           "--memory-mb", "1"});
    CHECK(r.code == cli::kExitDomain);
    const auto m = json::parse(fstest::slurp(manifest));
    CHECK(m.at("status") == "domain-error");
    CHECK(m.at("exit_code") == 1);
}

TEST_CASE("config sections apply and flags override them") {
    fstest::TempDir tmp;
    fstest::spit(tmp / "cfg.json", R"({"gate": {"min_accuracy": 0.9}})");
    const auto base = std::vector<std::string>{"--config", (tmp / "cfg.json").string(), "gate", "--accuracy", "0.75",
                                               "--latency-ms", "1", "--memory-mb", "1"};
    CHECK(invoke(base).code == cli::kExitDomain);
    auto with_flag = base;
    with_flag.insert(with_flag.end(), {"--min-accuracy", "0.7"});
    CHECK(invoke(with_flag).code == cli::kExitOk);
    fstest::spit(tmp / "broken.json", "{");
    CHECK(invoke({"--config", (tmp / "broken.json").string(), "gate"}).code == cli::kExitDomain);
}

TEST_CASE("knowledge base commands") {
    fstest::TempDir tmp;
    const auto data = fstest::source_dir() / "tests" / "data";
    const auto kb = (tmp / "kb").string();
    const std::vector<std::string> add = {"kb", "--root", kb, "add", "--vulnerable", (data / "cwe190_unsafe.c").string(),
                                          "--fixed", (data / "cwe190_safe.c").string(), "--cwe", "CWE-190",
                                          "--confirmed-by", "analyst"};
    CHECK(invoke(add).code == cli::kExitOk);
    CHECK(invoke(add).code == cli::kExitOk);
    const auto out = tmp / "kb.jsonl";
    CHECK(invoke({"kb", "--root", kb, "export", "--out", out.string()}).code == cli::kExitOk);
    const auto c = corpus::ingest(out, corpus::InputFormat::jsonl);
    CHECK(c.samples.size() == 2);
}

TEST_CASE("the installed binary reports exit codes") {
    const auto cli = fstest::shell_quote(fstest::cli_path().string());
    CHECK(fstest::run_command(cli + " frobnicate").exit_code == 2);
    CHECK(fstest::run_command(cli + " --help").exit_code == 0);
    CHECK(fstest::run_command(cli + " gate --accuracy 0.1 --latency-ms 1 --memory-mb 1 --manifest /dev/null")
              .exit_code == 1);
}

TEST_CASE("pipeline end to end") {
    const auto r = fstest::check_pipeline_end_to_end();
    INFO(r.detail);
    CHECK(r.passed);
}

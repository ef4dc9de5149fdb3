// SPDX-License-Identifier: Apache-2.0
#include "acceptance_checks.hpp"
#include "support.hpp"

#include "finesec/registry.hpp"

#include <catch_amalgamated.hpp>

#include <set>
#include <thread>

using namespace finesec;
using namespace finesec::registry;

namespace {

ModelCard passing_card(const std::string& id) {
    ModelCard c;
    c.model_id = id;
    c.base_model_id = "base";
    c.training_data_summary = {"abc", 3, {{"CWE-190", 2}, {"benign", 1}}};
    c.metrics = {"eval.json", "run-1", 0.75, 120, 2048};
    c.gate_result = {true, {}};
    c.created_at = "2026-01-01T00:00:00Z";
    return c;
}

}  // namespace

TEST_CASE("gate examples") {
    GateThresholds t;
    t.min_accuracy = 0.6;
    CHECK(evaluate_gate({0.75, 100, 1000, {}}, t).passed);
    const auto low = evaluate_gate({0.55, 100, 1000, {}}, t);
    CHECK_FALSE(low.passed);
    CHECK(low.reasons == std::vector<std::string>{"accuracy below threshold"});
    const auto two = evaluate_gate({0.55, 9000, 1000, {}}, t);
    CHECK(two.reasons == std::vector<std::string>{"accuracy below threshold", "latency above threshold"});
    CHECK(evaluate_gate({0.6, 5000, 16384, {}}, t).passed);

    t.required_invariant_suites = {"dataset-purity"};
    const auto missing = evaluate_gate({0.9, 1, 1, {}}, t);
    CHECK(missing.reasons == std::vector<std::string>{"missing required suite: dataset-purity"});
    CHECK(evaluate_gate({0.9, 1, 1, {"dataset-purity"}}, t).passed);

    const auto r = fstest::check_gate_conjunction();
    INFO(r.detail);
    CHECK(r.passed);
}

TEST_CASE("gate thresholds validate") {
    GateThresholds t;
    t.min_accuracy = 0;
    CHECK_THROWS_AS(t.validate(), ConfigError);
    t = {};
    t.required_invariant_suites = {"vibes"};
    CHECK_THROWS_AS(t.validate(), ConfigError);
    t = {};
    t.max_memory_mb = 0;
    CHECK_THROWS_AS(t.validate(), ConfigError);
    t = {};
    t.required_invariant_suites = {"report-parse"};
    CHECK(thresholds_from_json(nlohmann::json::parse(to_json(t).dump())).required_invariant_suites ==
          t.required_invariant_suites);
}

TEST_CASE("registry versions and rejection") {
    fstest::TempDir tmp;
    Registry reg(tmp / "reg");
    CHECK(reg.register_model(passing_card("m")) == 1);
    CHECK(reg.register_model(passing_card("m")) == 2);
    CHECK(reg.register_model(passing_card("other")) == 1);

    auto failed = passing_card("m");
    failed.gate_result = {false, {"accuracy below threshold"}};
    CHECK_THROWS_AS(reg.register_model(failed), RegistrationRejected);
    CHECK(reg.list("m").size() == 2);
    CHECK(reg.list().size() == 3);

    const auto got = reg.get("m", 2);
    CHECK(got.version == 2);
    CHECK(got.metrics.accuracy == 0.75);
    CHECK(got.training_data_summary.cwe_distribution.at("CWE-190") == 2);
    CHECK(to_json(card_from_json(nlohmann::json::parse(to_json(got).dump()))) == to_json(got));
    CHECK_THROWS_AS(reg.get("m", 9), ConfigError);
    CHECK_THROWS_AS(reg.register_model(passing_card("../escape")), ConfigError);
    CHECK(std::filesystem::exists(tmp / "reg" / "index.json"));
}

TEST_CASE("registry stores local artifacts by content hash") {
    fstest::TempDir tmp;
    fstest::spit(tmp / "weights.bin", "weights");
    auto card = passing_card("m");
    card.artifact_ref = (tmp / "weights.bin").string();
    Registry reg(tmp / "reg");
    reg.register_model(card);
    const auto ref = nlohmann::json::parse(fstest::slurp(tmp / "reg" / "m" / "1" / "artifact" / "REF.json"));
    const auto stored = tmp / "reg" / "m" / "1" / ref.at("stored_as").get<std::string>();
    CHECK(fstest::slurp(stored) == "weights");
}

TEST_CASE("concurrent registrations get distinct versions") {
    fstest::TempDir tmp;
    constexpr int kThreads = 8;
    std::vector<int> versions(kThreads);
    std::vector<std::thread> threads;
    for (int i = 0; i < kThreads; ++i)
        threads.emplace_back([&, i] { versions[i] = Registry(tmp / "reg").register_model(passing_card("m")); });
    for (auto& t : threads) t.join();
    CHECK(std::set<int>(versions.begin(), versions.end()).size() == kThreads);
    CHECK(*std::max_element(versions.begin(), versions.end()) == kThreads);
    CHECK(Registry(tmp / "reg").list("m").size() == kThreads);
}

TEST_CASE("knowledge base ingest and export") {
    fstest::TempDir tmp;
    const auto data = fstest::source_dir() / "tests" / "data";
    KnowledgePair p{fstest::slurp(data / "cwe190_unsafe.c"), fstest::slurp(data / "cwe190_safe.c"), "CWE-190",
                    PairSource::deployment_feedback, "analyst"};
    KnowledgeBase kb(tmp / "kb");
    CHECK(kb.ingest_feedback(p));
    CHECK(kb.size() == 1);
    CHECK_FALSE(kb.ingest_feedback(p));
    CHECK(kb.size() == 1);

    const auto c = kb.export_corpus();
    REQUIRE(c.samples.size() == 2);
    int vulnerable = 0, benign = 0;
    for (const auto& s : c.samples) {
        CHECK(s.cwe_id == std::optional<std::string>("CWE-190"));
        vulnerable += s.label == corpus::Label::vulnerable;
        benign += s.label == corpus::Label::benign;
    }
    CHECK(vulnerable == 1);
    CHECK(benign == 1);
    CHECK(kb.pairs().front().confirmed_by == "analyst");

    auto bad = p;
    bad.fixed_code = "  \n";
    CHECK_THROWS_AS(kb.ingest_feedback(bad), ConfigError);
    bad = p;
    bad.cwe_id = "190";
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    CHECK(kb.size() == 1);

    auto other = p;
    other.cwe_id = "CWE-191";
    CHECK(pair_hash(other) != pair_hash(p));
}

TEST_CASE("knowledge base terms") {
    fstest::TempDir tmp;
    KnowledgeBase kb(tmp / "kb");
    CHECK(kb.add_terms({"integer overflow", "use-after-free"}) == 2);
    CHECK(kb.add_terms({"use-after-free", "TOCTOU"}) == 1);
    const auto t = kb.terms();
    CHECK(t.size() == 3);
    CHECK(std::find(t.begin(), t.end(), "TOCTOU") != t.end());
}

TEST_CASE("pair sources round-trip") {
    for (auto s : {PairSource::distilled, PairSource::deployment_feedback, PairSource::manual})
        CHECK(parse_pair_source(to_string(s)) == s);
    CHECK_FALSE(parse_pair_source("rumor"));
}

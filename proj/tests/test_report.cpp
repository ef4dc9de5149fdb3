// SPDX-License-Identifier: Apache-2.0
#include "acceptance_checks.hpp"
#include "support.hpp"

#include "finesec/report.hpp"

#include <catch_amalgamated.hpp>
#include <json.hpp>

#include <random>

using namespace finesec;
using namespace finesec::report;

namespace {

const std::string kListing = fstest::slurp(fstest::source_dir() / "tests" / "data" / "listing_report.json");

corpus::CodeSample truth(corpus::Label label, std::optional<std::string> cwe) {
    return corpus::make_sample("int f(void)\n{\n    return 0;\n}\n", corpus::Language::c, label, std::move(cwe),
                               {"unit", "t.c"});
}

Detection detection(std::string cwe) { return Detection{"issue", std::move(cwe), {}, {}, {"why"}, {}}; }

}  // namespace

TEST_CASE("the structured output listing parses") {
    for (const std::string raw : {kListing, "Here is my analysis.\n```json\n" + kListing + "```\nThanks.",
                                  "Report: " + kListing + " (end)"}) {
        const auto r = parse_report(raw);
        CHECK(r.target == "target.c:copy_data");
        REQUIRE(r.detections.size() == 1);
        const auto& d = r.detections[0];
        CHECK(d.cwe == "CWE-190");
        CHECK(d.locations == std::vector<Location>{{"target.c", "2"}});
        CHECK(d.rationales.size() == 3);
        REQUIRE(d.patch);
        CHECK(d.patch->diff.size() == 5);
        CHECK_FALSE(d.severity);
    }
}

TEST_CASE("canonical serialization uses the listing keys") {
    const auto r = parse_report(kListing);
    CHECK(nlohmann::json::parse(serialize(r)) == nlohmann::json::parse(kListing));
    const auto j = to_json(r);
    std::vector<std::string> keys;
    for (auto& [k, _] : j["detections"][0].items()) keys.push_back(k);
    CHECK(keys == std::vector<std::string>{"issue", "taxonomy", "locations", "rationales", "patch"});
    const auto r2 = parse_report(kListing);
    CHECK(serialize(parse_report(serialize(r2))) == serialize(r2));
}

TEST_CASE("negation and unparseable text") {
    CHECK(parse_report("The code is not vulnerable.").detections.empty());
    CHECK(parse_report("No vulnerability found.", "a.c:f").target == "a.c:f");
    CHECK_THROWS_AS(parse_report("I am not sure."), UnparseableReport);
    CHECK(parse_report(R"({"target":"a.c:f","detections":[]})").detections.empty());
}

TEST_CASE("CWE ids are normalized") {
    const auto r = parse_report(R"({"target":"a.c:f","detections":[{"issue":"x","taxonomy":{"CWE":"190"},)"
                                R"("locations":[],"rationales":["r"]}]})");
    CHECK(r.detections.at(0).cwe == "CWE-190");
    const auto num = parse_report(R"({"detections":[{"issue":"x","taxonomy":{"CWE":787},"rationales":["r"]}]})");
    CHECK(num.detections.at(0).cwe == "CWE-787");
    CHECK(num.target == kDefaultTarget);
}

TEST_CASE("schema violations list their paths") {
    try {
        parse_report(R"({"target":"t","detections":[{"issue":"x","taxonomy":{"CWE":"overflow"},)"
                     R"("locations":[{"file":"a.c","lines":"5-2"}],"rationales":[]}]})");
        FAIL("expected SchemaError");
    } catch (const SchemaError& e) {
        const auto& p = e.paths();
        CHECK(std::find(p.begin(), p.end(), "/detections/0/taxonomy/CWE") != p.end());
        CHECK(std::find(p.begin(), p.end(), "/detections/0/locations/0/lines") != p.end());
        CHECK(std::find(p.begin(), p.end(), "/detections/0/rationales") != p.end());
    }
    CHECK_THROWS_AS(parse_report(R"({"target":"t"})"), SchemaError);
    CHECK_THROWS_AS(parse_report(R"({"detections":[{"issue":"x","taxonomy":{"CWE":"CWE-1"},"rationales":["r"],)"
                                 R"("severity":"catastrophic"}]})"),
                    SchemaError);
}

TEST_CASE("line ranges") {
    CHECK(parse_line_range("2") == std::optional<std::pair<int, int>>({2, 2}));
    CHECK(parse_line_range("3-7") == std::optional<std::pair<int, int>>({3, 7}));
    CHECK_FALSE(parse_line_range("0"));
    CHECK_FALSE(parse_line_range("7-3"));
    CHECK_FALSE(parse_line_range("a"));
    CHECK_FALSE(parse_line_range(""));
}

TEST_CASE("first JSON object") {
    CHECK(find_first_json_object("x {\"a\": \"}\"} {\"b\":1}")->at("a") == "}");
    CHECK_FALSE(find_first_json_object("no braces"));
}

TEST_CASE("scoring against ground truth") {
    const VulnReport empty{"t.c:f", {}};
    const VulnReport found{"t.c:f", {detection("CWE-416")}};
    const auto vuln = truth(corpus::Label::vulnerable, "CWE-415");
    const auto benign = truth(corpus::Label::benign, std::nullopt);

    CHECK(score_against_truth(empty, benign, MatchMode::binary) == Outcome::TN);
    CHECK(score_against_truth(found, vuln, MatchMode::binary) == Outcome::TP);
    CHECK(score_against_truth(found, benign, MatchMode::binary) == Outcome::FP);
    CHECK(score_against_truth(empty, vuln, MatchMode::binary) == Outcome::FN);
    CHECK(score_against_truth(found, vuln, MatchMode::exact_cwe) == Outcome::FN);
    CHECK(score_against_truth(found, vuln, MatchMode::category) == Outcome::TP);

    const VulnReport mixed{"t.c:f", {detection("CWE-78"), detection("CWE-415")}};
    CHECK(score_against_truth(mixed, vuln, MatchMode::exact_cwe) == Outcome::TP);
    CHECK(score_against_truth(VulnReport{"t", {detection("CWE-78")}}, vuln, MatchMode::category) == Outcome::FN);
    CHECK_THROWS_AS(score_against_truth(found, truth(corpus::Label::unknown, std::nullopt), MatchMode::binary),
                    ConfigError);

    const auto r = fstest::check_report_roundtrip();
    INFO(r.detail);
    CHECK(r.passed);
}

TEST_CASE("round-trip over random reports") {
    std::mt19937 rng(11);
    auto word = [&] { return std::string(1 + rng() % 6, static_cast<char>('a' + rng() % 26)); };
    for (int trial = 0; trial < 300; ++trial) {
        VulnReport r;
        r.target = word() + ".c:" + word();
        for (int d = static_cast<int>(rng() % 4); d > 0; --d) {
            Detection det;
            det.issue = word() + " \"quoted\" " + word();
            det.cwe = "CWE-" + std::to_string(1 + rng() % 1400);
            if (rng() % 2) det.severity = static_cast<Severity>(rng() % 4);
            for (int l = static_cast<int>(rng() % 3); l > 0; --l) {
                const int a = 1 + static_cast<int>(rng() % 50);
                det.locations.push_back({word() + ".c", rng() % 2 ? std::to_string(a) : std::to_string(a) + "-" + std::to_string(a + static_cast<int>(rng() % 9))});
            }
            for (int k = 1 + static_cast<int>(rng() % 3); k > 0; --k) det.rationales.push_back(word() + "\n" + word());
            if (rng() % 2) det.patch = Patch{word(), {"+ " + word(), "- " + word()}};
            r.detections.push_back(det);
        }
        const auto s = serialize(r);
        INFO(s);
        CHECK(parse_report(s) == r);
        CHECK(serialize(parse_report(s)) == s);
        // Every emitted detection comes from an input object.
        CHECK(parse_report(s).detections.size() == nlohmann::json::parse(s)["detections"].size());
    }
}

TEST_CASE("enum spellings") {
    CHECK(to_string(Outcome::FN) == "FN");
    CHECK(parse_match_mode("exact_cwe") == MatchMode::exact_cwe);
    CHECK_FALSE(parse_match_mode("fuzzy"));
    CHECK(parse_severity("high") == Severity::high);
    CHECK(to_string(Severity::critical) == "critical");
}

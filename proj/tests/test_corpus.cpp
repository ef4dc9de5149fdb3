// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include "finesec/corpus.hpp"

#include <catch_amalgamated.hpp>
#include <json.hpp>

#include <random>
#include <regex>
#include <set>

using namespace finesec;
using namespace finesec::corpus;
using fstest::spit;

namespace {

CodeSample c_sample(std::string code, std::string original_id = "x.c", Label label = Label::unknown,
                    std::optional<std::string> cwe = std::nullopt) {
    return make_sample(std::move(code), Language::c, label, std::move(cwe), {"unit", std::move(original_id)});
}

Corpus corpus_of(std::vector<CodeSample> samples) {
    Corpus c;
    c.name = "unit";
    c.samples = std::move(samples);
    return c;
}

std::string lines(std::size_t n) {
    std::string s;
    for (std::size_t i = 0; i < n; ++i) s += "x;\n";
    return s;
}

std::string record(const std::string& code, const std::string& label, const std::string& id) {
    return nlohmann::json{{"code", code}, {"label", label}, {"original_id", id}}.dump() + "\n";
}

}  // namespace

TEST_CASE("sample fields derive from code") {
    const auto s = c_sample("int a;\nint b;\n");
    CHECK(s.byte_len == 14);
    CHECK(s.line_count == 2);
    CHECK(s.id == sample_id(s.code, s.provenance));
    CHECK(s.id.size() == 16);
    CHECK(c_sample("int a;\nint b;\n").id == s.id);
    CHECK(c_sample("int a;\nint b;\n", "y.c").id != s.id);
}

TEST_CASE("ingest jsonl") {
    fstest::TempDir tmp;
    SECTION("three records give three distinct ids in input order") {
        spit(tmp / "c.jsonl", record("int a;", "benign", "1") + record("int b;", "benign", "2") +
                                   record("int c;", "unknown", "3"));
        const auto c = ingest(tmp / "c.jsonl", InputFormat::jsonl);
        REQUIRE(c.samples.size() == 3);
        CHECK(c.samples[0].code == "int a;");
        CHECK(c.samples[2].label == Label::unknown);
        std::set<std::string> ids;
        for (const auto& s : c.samples) ids.insert(s.id);
        CHECK(ids.size() == 3);
    }
    SECTION("empty file gives an empty corpus with an empty log") {
        spit(tmp / "e.jsonl", "");
        const auto c = ingest(tmp / "e.jsonl", InputFormat::jsonl);
        CHECK(c.samples.empty());
        CHECK(c.manifest.preprocessing_log.empty());
    }
    SECTION("unknown label names the offending line") {
        spit(tmp / "bad.jsonl", record("int a;", "benign", "1") + record("int b;", "vuln", "2"));
        try {
            ingest(tmp / "bad.jsonl", InputFormat::jsonl);
            FAIL("expected RecordError");
        } catch (const RecordError& e) {
            CHECK(e.line() == 2);
            CHECK(std::string(e.what()).find("vuln") != std::string::npos);
        }
    }
    SECTION("vulnerable benchmark record without a CWE is rejected") {
        const auto line = nlohmann::json{{"code", "int a;"}, {"label", "vulnerable"}, {"dataset_name", "juliet"}}.dump();
        CHECK_THROWS_AS(ingest_jsonl_text(line, "x"), RecordError);
    }
    SECTION("cwe ids are normalized") {
        const auto line = nlohmann::json{{"code", "int a;"}, {"label", "vulnerable"}, {"cwe_id", 190}}.dump();
        CHECK(ingest_jsonl_text(line, "x").samples.at(0).cwe_id == std::optional<std::string>("CWE-190"));
    }
    SECTION("missing path") {
        CHECK_THROWS_AS(ingest(tmp / "nope.jsonl", InputFormat::jsonl), IoError);
    }
    SECTION("directory mode infers unknown labels and sorts files") {
        spit(tmp / "src" / "b.c", "int b;\n");
        spit(tmp / "src" / "a.cpp", "int a;\n");
        spit(tmp / "src" / "notes.md", "ignored\n");
        const auto c = ingest(tmp / "src", InputFormat::directory_of_files);
        REQUIRE(c.samples.size() == 2);
        CHECK(c.samples[0].provenance.original_id == "a.cpp");
        CHECK(c.samples[0].language == Language::cpp);
        CHECK(c.samples[1].label == Label::unknown);
    }
}

TEST_CASE("jsonl round-trip keeps key order") {
    const auto c = corpus_of({c_sample("int a;\n", "a.c", Label::vulnerable, "CWE-190")});
    const auto text = to_jsonl(c);
    CHECK(text.rfind("{\"id\":", 0) == 0);
    const auto j = nlohmann::ordered_json::parse(text);
    std::vector<std::string> keys;
    for (auto& [k, _] : j.items()) keys.push_back(k);
    CHECK(keys == std::vector<std::string>{"id", "code", "language", "label", "cwe_id", "dataset_name", "original_id"});
    const auto back = ingest_jsonl_text(text, "other");
    CHECK(back.samples == c.samples);
}

TEST_CASE("length filter boundaries") {
    const auto kept_bytes = c_sample(lines(2) + std::string(32765 - 6 - 1, 'y') + "\n", "kb");
    const auto big = c_sample(lines(2) + std::string(32766 - 6 - 1, 'y') + "\n", "big");
    REQUIRE(kept_bytes.byte_len == 32765);
    REQUIRE(big.byte_len == 32766);
    const auto out = filter_by_length(corpus_of({kept_bytes, big, c_sample(lines(2), "two"), c_sample(lines(3), "three")}));
    REQUIRE(out.samples.size() == 2);
    CHECK(out.samples[0].provenance.original_id == "kb");
    CHECK(out.samples[1].provenance.original_id == "three");
    REQUIRE(out.manifest.preprocessing_log.size() == 1);
    CHECK(out.manifest.preprocessing_log[0] == StepRecord{"filter_by_length", 2, 2, 0});

    const auto empty = filter_by_length(corpus_of({}));
    CHECK(empty.samples.empty());
    CHECK(empty.manifest.preprocessing_log.at(0).removed == 0);
}

TEST_CASE("deduplicate") {
    SECTION("byte-identical samples keep the first") {
        const auto out = deduplicate(corpus_of({c_sample("int a;\n", "1"), c_sample("int a;\n", "2")}));
        REQUIRE(out.samples.size() == 1);
        CHECK(out.samples[0].provenance.original_id == "1");
    }
    SECTION("trailing spaces do not distinguish samples") {
        // Normalized by hand: both become "int a;\nint b;\n".
        const auto out = deduplicate(corpus_of({c_sample("int a;   \nint b;\n", "1"), c_sample("int a;\nint b;\t\n", "2")}));
        CHECK(out.samples.size() == 1);
    }
    SECTION("blank-line runs collapse") {
        CHECK(dedup_key("a\n\n\n\nb\n") == dedup_key("a\n\nb\n"));
        CHECK(dedup_key("a\n\nb\n") != dedup_key("a\nb\n"));
    }
    SECTION("one differing identifier keeps both") {
        const auto out = deduplicate(corpus_of({c_sample("int a;\n", "1"), c_sample("int b;\n", "2")}));
        CHECK(out.samples.size() == 2);
    }
}

TEST_CASE("strip_vuln_markers") {
    SECTION("marker comment lines go, other comments stay") {
        const auto s = strip_vuln_markers(c_sample("/* POTENTIAL FLAW: overflow */\n/* allocate buffer */\nchar *p = malloc(n);\n"));
        CHECK(s.code == "/* allocate buffer */\nchar *p = malloc(n);\n");
        CHECK(s.line_count == 2);
    }
    SECTION("leading marker comment leaves the code intact") {
        CHECK(strip_vuln_markers(c_sample("/* CWE-190 */ int x;")).code == "int x;");
    }
    SECTION("trailing and mid-line markers") {
        CHECK(strip_vuln_markers(c_sample("x = a * b; // flaw: overflow\n")).code == "x = a * b;\n");
        CHECK(strip_vuln_markers(c_sample("x = a/* FIX: */+b;\n")).code == "x = a +b;\n");
    }
    SECTION("markers inside literals are code") {
        const std::string code = "puts(\"CWE-190 /* FLAW */\");\nchar c = '/';\n";
        CHECK(strip_vuln_markers(c_sample(code)).code == code);
    }
    SECTION("no comments means no change") {
        const auto in = c_sample("int f(void)\n{\n    return 1;\n}\n");
        CHECK(strip_vuln_markers(in) == in);
    }
    SECTION("unterminated block comment names the line") {
        try {
            strip_vuln_markers(c_sample("int a;\n/* never closed\nint b;\n"));
            FAIL("expected LexError");
        } catch (const LexError& e) {
            CHECK(e.line() == 2);
        }
    }
    SECTION("only C and C++ samples") {
        auto s = c_sample("x");
        s.language = Language::other;
        CHECK_THROWS_AS(strip_vuln_markers(s), ConfigError);
    }
}

TEST_CASE("neutralize_identifiers") {
    SECTION("definition and call site share the placeholder") {
        const auto s = neutralize_identifiers(c_sample("void CWE190_bad()\n{\n}\nint main() { CWE190_bad(); }\n"));
        CHECK(s.code == "void func()\n{\n}\nint main() { func(); }\n");
    }
    SECTION("distinct names numbered by first appearance") {
        const auto s = neutralize_identifiers(c_sample("void goodSink(int);\nvoid badSource(void) { goodSink(1); }\n"));
        CHECK(s.code == "void func(int);\nvoid func_2(void) { func(1); }\n");
    }
    SECTION("non-function identifiers keep their names") {
        const std::string code = "int badCount = 0;\nint f(int goodValue) { return badCount + goodValue; }\n";
        CHECK(neutralize_identifiers(c_sample(code)).code == code);
    }
    SECTION("existing identifiers are not reused as placeholders") {
        const auto s = neutralize_identifiers(c_sample("int func(int);\nint vuln_helper(int a) { return func(a); }\n"));
        CHECK(s.code == "int func(int);\nint func_2(int a) { return func(a); }\n");
    }
    SECTION("no marked names means no change") {
        const auto in = c_sample("int add(int a, int b) { return a + b; }\n");
        CHECK(neutralize_identifiers(in) == in);
    }
}

TEST_CASE("preprocess composition") {
    SECTION("all four steps logged in order") {
        const auto out = preprocess(corpus_of({c_sample("/* FLAW */\nvoid bad_f()\n{\n}\n", "1"),
                                               c_sample("/* FLAW */\nvoid bad_f()\n{\n}\n", "2"), c_sample("x;", "3")}),
                                    PreprocessConfig{});
        const auto& log = out.manifest.preprocessing_log;
        REQUIRE(log.size() == 4);
        CHECK(log[0] == StepRecord{"filter_by_length", 2, 1, 0});
        CHECK(log[1] == StepRecord{"deduplicate", 1, 1, 0});
        CHECK(log[2] == StepRecord{"strip_vuln_markers", 1, 0, 1});
        CHECK(log[3] == StepRecord{"neutralize_identifiers", 1, 0, 1});
        CHECK(out.samples.at(0).code == "void func()\n{\n}\n");
    }
    SECTION("clean corpus is a fixpoint with zero counts") {
        const auto in = corpus_of({c_sample("int add(int a, int b)\n{\n    return a + b;\n}\n")});
        const auto out = preprocess(in, PreprocessConfig{});
        CHECK(out.samples == in.samples);
        for (const auto& step : out.manifest.preprocessing_log) {
            CHECK(step.removed == 0);
            CHECK(step.modified == 0);
        }
    }
    SECTION("a short duplicate is charged to the length filter") {
        const auto out = preprocess(corpus_of({c_sample("x;\n", "1"), c_sample("x;\n", "2")}), PreprocessConfig{});
        CHECK(out.manifest.preprocessing_log[0].removed == 2);
        CHECK(out.manifest.preprocessing_log[1].removed == 0);
    }
    SECTION("invalid thresholds") {
        PreprocessConfig pc;
        pc.min_lines = 0;
        CHECK_THROWS_AS(preprocess(corpus_of({}), pc), ConfigError);
    }
}

namespace {

// Random C-ish corpora mixing markers, duplicates, comments and short samples.
Corpus random_corpus(std::mt19937& rng) {
    const std::vector<std::string> names = {"helper", "badSink", "goodSource", "compute", "vuln_read", "patchedCopy"};
    const std::vector<std::string> comments = {"// FLAW: here", "/* allocate */", "/* CWE-121 */", "// keep me",
                                               "/* fix: bounds */", ""};
    std::uniform_int_distribution<int> pick(0, 5), nlines(0, 6), coin(0, 1);
    Corpus c;
    c.name = "prop";
    const int n = 1 + pick(rng) * 2;
    for (int i = 0; i < n; ++i) {
        if (i > 0 && coin(rng) && coin(rng)) {  // re-emit an earlier sample, maybe with trailing spaces
            auto copy = c.samples[std::uniform_int_distribution<int>(0, i - 1)(rng)];
            c.samples.push_back(c_sample(copy.code + (coin(rng) ? "  \n" : ""), "dup" + std::to_string(i)));
            continue;
        }
        const auto& name = names[pick(rng)];
        std::string code = comments[pick(rng)] + "\nint " + name + "(int a)\n{\n";
        for (int l = nlines(rng); l > 0; --l) code += "    a = a + " + std::to_string(l) + "; " + comments[pick(rng)] + "\n";
        code += "    return a;\n}\n";
        if (coin(rng)) code += "int caller(void) { return " + name + "(" + std::to_string(i) + "); }\n";
        const auto label = coin(rng) ? Label::vulnerable : Label::benign;
        c.samples.push_back(c_sample(code, "s" + std::to_string(i), label,
                                     label == Label::vulnerable ? std::optional<std::string>("CWE-190") : std::nullopt));
    }
    return c;
}

}  // namespace

TEST_CASE("preprocess properties over random corpora") {
    std::mt19937 rng(1234);
    const std::regex marker_name("bad|good|vuln|patched", std::regex::icase);
    PreprocessConfig pc;
    pc.min_lines = 4;
    pc.max_bytes = 400;
    for (int trial = 0; trial < 200; ++trial) {
        const auto in = random_corpus(rng);
        const auto once = preprocess(in, pc);
        const auto twice = preprocess(once, pc);
        INFO("trial " << trial);
        CHECK(twice.samples == once.samples);
        CHECK(once.samples.size() <= in.samples.size());

        std::map<std::string, const CodeSample*> by_origin;
        for (const auto& s : in.samples) by_origin[s.provenance.original_id] = &s;
        std::set<std::string> ids, keys;
        for (const auto& s : once.samples) {
            CHECK(s.byte_len <= pc.max_bytes);
            CHECK(s.line_count >= pc.min_lines);
            CHECK(s.byte_len == s.code.size());
            CHECK(s.id == sample_id(s.code, s.provenance));
            const auto* origin = by_origin.at(s.provenance.original_id);
            CHECK(s.label == origin->label);
            CHECK(s.cwe_id == origin->cwe_id);
            CHECK(ids.insert(s.id).second);
            CHECK(keys.insert(dedup_key(s.code)).second);
            for (const auto& f : function_name_identifiers(s.code)) CHECK_FALSE(std::regex_search(f, marker_name));
        }
        const auto& log = once.manifest.preprocessing_log;
        REQUIRE(log.size() == 4);
        CHECK(log[0].kept + log[0].removed == in.samples.size());
        CHECK(log[1].kept + log[1].removed == log[0].kept);
        CHECK(log[3].kept == once.samples.size());
    }
}

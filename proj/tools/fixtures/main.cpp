// SPDX-License-Identifier: Apache-2.0
//
// Writes mock backend fixtures from a response script. Prompts are rendered
// exactly as the pipeline renders them, so the fixture keys line up with the
// requests a run will make.
//
// Script layout (paths relative to the script):
//   {"preprocess": {"max_bytes": .., "min_lines": ..},
//    "prompts": "<dir>",
//    "teacher": {"dir": "<out>", "corpus": "<jsonl>",
//                "responses": {"<original_id>": {"analysis": .., "scenario": .., "security": ..}}},
//    "detectors": [{"dir": "<out>", "corpus": "<jsonl>", "responses": {"<original_id>": ".."}}]}
//
// With --check nothing is written; the exit status reports whether the
// fixture directories already hold exactly the generated files.
#include "finesec/corpus.hpp"
#include "finesec/distill.hpp"
#include "finesec/llmclient.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <iostream>
#include <map>
#include <set>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace finesec;

namespace {

using FileMap = std::map<fs::path, std::string>;

struct Templates {
    std::string system;
    std::string user;
};

Templates load(const fs::path& dir, const std::string& role) {
    return {read_file(dir / (role + ".system.txt")), read_file(dir / (role + ".user.txt"))};
}

std::string key_for(const Templates& t, const std::map<std::string, std::string>& vars) {
    return llm::fixture_key(distill::render(t.system, vars), distill::render(t.user, vars));
}

corpus::Corpus prepared(const fs::path& path, const corpus::PreprocessConfig& pc) {
    return corpus::preprocess(corpus::ingest(path, corpus::InputFormat::jsonl), pc);
}

void check_ids(const json& responses, const corpus::Corpus& c, const std::string& where) {
    std::set<std::string> ids;
    for (const auto& s : c.samples) ids.insert(s.provenance.original_id);
    for (auto& [id, _] : responses.items()) {
        if (!ids.count(id)) throw ConfigError(where + ": no preprocessed sample with original_id '" + id + "'");
    }
}

void put(FileMap& files, const fs::path& file, const std::string& text) {
    auto [it, fresh] = files.emplace(file, text);
    if (!fresh && it->second != text) throw ConfigError("two responses share fixture " + file.string());
}

FileMap generate(const fs::path& script_path, const fs::path& out_root) {
    const auto base = fs::absolute(script_path).parent_path();
    const auto script = json::parse(read_file(script_path));
    corpus::PreprocessConfig pc;
    if (auto p = script.find("preprocess"); p != script.end()) {
        pc.max_bytes = p->value("max_bytes", pc.max_bytes);
        pc.min_lines = p->value("min_lines", pc.min_lines);
    }
    const auto prompts = base / script.at("prompts").get<std::string>();
    FileMap files;

    if (auto t = script.find("teacher"); t != script.end()) {
        const auto analysis = load(prompts, "analysis");
        const auto scenario = load(prompts, "scenario");
        const auto security = load(prompts, "security");
        const auto dir = out_root / t->at("dir").get<std::string>();
        const auto c = prepared(base / t->at("corpus").get<std::string>(), pc);
        const auto& responses = t->at("responses");
        check_ids(responses, c, "teacher");
        for (const auto& s : c.samples) {
            auto r = responses.find(s.provenance.original_id);
            if (r == responses.end()) continue;
            const std::map<std::string, std::string> code{{"code", s.code}};
            if (r->contains("analysis"))
                put(files, dir / (key_for(analysis, code) + ".txt"), r->at("analysis").get<std::string>());
            if (r->contains("scenario"))
                put(files, dir / (key_for(scenario, code) + ".txt"), r->at("scenario").get<std::string>());
            if (r->contains("analysis") && r->contains("scenario") && r->contains("security")) {
                const auto a = distill::parse_analysis_response(r->at("analysis").get<std::string>());
                const auto sc = distill::parse_scenario_response(r->at("scenario").get<std::string>());
                put(files,
                    dir / (key_for(security, {{"rationale", a.rationale}, {"label", a.label}, {"scenario", sc}}) +
                           ".txt"),
                    r->at("security").get<std::string>());
            }
        }
    }

    const auto detect = load(prompts, "detect");
    for (const auto& d : script.value("detectors", json::array())) {
        const auto dir = out_root / d.at("dir").get<std::string>();
        const auto c = prepared(base / d.at("corpus").get<std::string>(), pc);
        const auto& responses = d.at("responses");
        check_ids(responses, c, "detector " + d.at("dir").get<std::string>());
        for (const auto& s : c.samples) {
            auto r = responses.find(s.provenance.original_id);
            if (r == responses.end()) continue;
            put(files, dir / (key_for(detect, {{"code", s.code}}) + ".txt"), r->get<std::string>());
        }
    }
    return files;
}

std::set<fs::path> fixture_dirs(const FileMap& files) {
    std::set<fs::path> dirs;
    for (const auto& [p, _] : files) dirs.insert(p.parent_path());
    return dirs;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Generate mock backend fixtures from a response script", "finesec-fixtures"};
    std::string script, out_root;
    bool check = false;
    app.add_option("--script", script, "Response script JSON")->required();
    app.add_option("--out-root", out_root, "Directory the script's \"dir\" entries are relative to "
                                           "(default: the script's directory)");
    app.add_flag("--check", check, "Compare against existing fixtures instead of writing");
    CLI11_PARSE(app, argc, argv);

    try {
        const fs::path root = out_root.empty() ? fs::absolute(script).parent_path() : fs::path(out_root);
        const auto files = generate(script, root);
        const auto dirs = fixture_dirs(files);
        if (check) {
            int problems = 0;
            for (const auto& [p, text] : files) {
                std::error_code ec;
                if (!fs::is_regular_file(p, ec)) {
                    std::cerr << "missing: " << p.string() << "\n";
                    ++problems;
                } else if (read_file(p) != text) {
                    std::cerr << "differs: " << p.string() << "\n";
                    ++problems;
                }
            }
            for (const auto& d : dirs) {
                std::error_code ec;
                if (!fs::is_directory(d, ec)) continue;
                for (const auto& e : fs::directory_iterator(d)) {
                    if (e.path().extension() == ".txt" && !files.count(e.path())) {
                        std::cerr << "stale: " << e.path().string() << "\n";
                        ++problems;
                    }
                }
            }
            std::cout << files.size() << " fixtures checked, " << problems << " problem(s)\n";
            return problems == 0 ? 0 : 1;
        }
        for (const auto& d : dirs) {
            fs::create_directories(d);
            for (const auto& e : fs::directory_iterator(d)) {
                if (e.path().extension() == ".txt" && !files.count(e.path())) fs::remove(e.path());
            }
        }
        for (const auto& [p, text] : files) write_file_atomic(p, text);
        std::cout << "wrote " << files.size() << " fixtures\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "finesec-fixtures: " << e.what() << "\n";
        return 1;
    }
}

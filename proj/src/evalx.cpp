// SPDX-License-Identifier: Apache-2.0
#include "finesec/evalx.hpp"

#include "finesec/distill.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

namespace finesec::evalx {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

void ConfusionCounts::add(Outcome o) {
    switch (o) {
    case Outcome::TP: ++tp; break;
    case Outcome::FP: ++fp; break;
    case Outcome::FN: ++fn; break;
    case Outcome::TN: ++tn; break;
    }
}

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
}

double accuracy(const ConfusionCounts& c) {
    const auto total = c.total();
    if (total == 0) throw UndefinedMetric("accuracy is undefined for zero samples");
    return static_cast<double>(c.tp + c.tn) / static_cast<double>(total);
}

std::string to_string(CweCategory c) {
    switch (c) {
    case CweCategory::memory_safety: return "memory_safety";
    case CweCategory::input_validation_injection: return "input_validation_injection";
    case CweCategory::system_resource_logic: return "system_resource_logic";
    case CweCategory::permissions_access_control: return "permissions_access_control";
    case CweCategory::crypto_info_leakage: return "crypto_info_leakage";
    case CweCategory::uncategorized: return "uncategorized";
    }
    return "uncategorized";
}

std::optional<CweCategory> parse_category(std::string_view s) {
    for (auto c : {CweCategory::memory_safety, CweCategory::input_validation_injection,
                   CweCategory::system_resource_logic, CweCategory::permissions_access_control,
                   CweCategory::crypto_info_leakage, CweCategory::uncategorized}) {
        if (to_string(c) == s) return c;
    }
    return std::nullopt;
}

const std::map<std::string, CweCategory>& category_table() {
    static const std::map<std::string, CweCategory> table = [] {
        std::map<std::string, CweCategory> t;
        auto put = [&](CweCategory c, std::initializer_list<int> ids) {
            for (int id : ids) t.emplace("CWE-" + std::to_string(id), c);
        };
        put(CweCategory::memory_safety, {119, 122, 125, 787, 415, 416, 476});
        put(CweCategory::input_validation_injection, {20, 77, 78, 79, 22, 94, 59, 434});
        put(CweCategory::system_resource_logic, {400, 401, 835, 362, 189, 190});
        put(CweCategory::permissions_access_control, {862, 863, 287, 284, 269, 276});
        put(CweCategory::crypto_info_leakage, {295, 310, 200});
        return t;
    }();
    return table;
}

CweCategory categorize_cwe(std::string_view cwe) {
    if (!is_canonical_cwe(cwe)) throw ParseError("malformed CWE id '" + std::string(cwe) + "'");
    const auto& t = category_table();
    auto it = t.find(std::string(cwe));
    return it == t.end() ? CweCategory::uncategorized : it->second;
}

EvalRun aggregate(const std::vector<ScoredSample>& outcomes, std::string run_id, std::string model_id) {
    if (outcomes.empty()) throw ConfigError("cannot aggregate an empty evaluation");
    EvalRun run;
    run.run_id = std::move(run_id);
    run.model_id = std::move(model_id);
    for (const auto& s : outcomes) {
        run.per_sample.push_back({s.sample_id, s.outcome});
        run.overall.add(s.outcome);
        if (s.truth_cwe) run.per_cwe[*s.truth_cwe].add(s.outcome);
        else if (s.outcome == Outcome::FP && s.predicted_cwe) run.per_cwe[*s.predicted_cwe].add(s.outcome);
        else run.unattributed.add(s.outcome);
    }
    for (const auto& [cwe, counts] : run.per_cwe) run.per_category[categorize_cwe(cwe)] += counts;
    if (run.unattributed.total() > 0) run.per_category[CweCategory::uncategorized] += run.unattributed;
    return run;
}

namespace {

ordered_json counts_json(const ConfusionCounts& c) {
    ordered_json j = {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"tn", c.tn}};
    j["accuracy"] = c.total() ? ordered_json(accuracy(c)) : ordered_json(nullptr);
    return j;
}

ConfusionCounts counts_from_json(const json& j) {
    return ConfusionCounts{j.at("tp").get<std::uint64_t>(), j.at("fp").get<std::uint64_t>(),
                           j.at("fn").get<std::uint64_t>(), j.at("tn").get<std::uint64_t>()};
}

Outcome parse_outcome(const std::string& s) {
    for (auto o : {Outcome::TP, Outcome::FP, Outcome::FN, Outcome::TN}) {
        if (report::to_string(o) == s) return o;
    }
    throw ParseError("unknown outcome '" + s + "'");
}

// CWE ids ordered by number rather than as strings.
std::vector<std::string> sorted_cwes(const std::map<std::string, ConfusionCounts>& m) {
    std::vector<std::string> ids;
    for (const auto& [k, _] : m) ids.push_back(k);
    std::sort(ids.begin(), ids.end(), [](const std::string& a, const std::string& b) {
        return std::stoll(a.substr(4)) < std::stoll(b.substr(4));
    });
    return ids;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string csv_row(const std::string& run_id, const std::string& scope, const std::string& id,
                    const ConfusionCounts& c) {
    return run_id + "," + scope + "," + id + "," + std::to_string(c.tp) + "," + std::to_string(c.fp) + "," +
           std::to_string(c.fn) + "," + std::to_string(c.tn) + "," + (c.total() ? fmt(accuracy(c)) : "") + "\n";
}

constexpr const char* kCsvHeader = "run_id,scope,scope_id,tp,fp,fn,tn,accuracy\n";

std::string csv_body(const EvalRun& run) {
    std::string out = csv_row(run.run_id, "overall", "all", run.overall);
    for (const auto& [cat, c] : run.per_category) out += csv_row(run.run_id, "category", to_string(cat), c);
    for (const auto& id : sorted_cwes(run.per_cwe)) out += csv_row(run.run_id, "cwe", id, run.per_cwe.at(id));
    return out;
}

}  // namespace

ordered_json to_json(const EvalRun& run) {
    ordered_json j;
    j["run_id"] = run.run_id;
    j["model_id"] = run.model_id;
    j["overall"] = counts_json(run.overall);
    j["per_category"] = ordered_json::object();
    for (const auto& [cat, c] : run.per_category) j["per_category"][to_string(cat)] = counts_json(c);
    j["per_cwe"] = ordered_json::object();
    for (const auto& id : sorted_cwes(run.per_cwe)) j["per_cwe"][id] = counts_json(run.per_cwe.at(id));
    j["unattributed"] = counts_json(run.unattributed);
    j["per_sample"] = ordered_json::array();
    for (const auto& s : run.per_sample)
        j["per_sample"].push_back({{"sample_id", s.sample_id}, {"outcome", report::to_string(s.outcome)}});
    return j;
}

EvalRun run_from_json(const json& j) {
    try {
        EvalRun run;
        run.run_id = j.at("run_id").get<std::string>();
        run.model_id = j.at("model_id").get<std::string>();
        run.overall = counts_from_json(j.at("overall"));
        for (auto& [k, v] : j.at("per_category").items()) {
            auto cat = parse_category(k);
            if (!cat) throw ParseError("unknown category '" + k + "'");
            run.per_category[*cat] = counts_from_json(v);
        }
        for (auto& [k, v] : j.at("per_cwe").items()) run.per_cwe[k] = counts_from_json(v);
        run.unattributed = counts_from_json(j.at("unattributed"));
        for (const auto& s : j.at("per_sample"))
            run.per_sample.push_back({s.at("sample_id").get<std::string>(), parse_outcome(s.at("outcome").get<std::string>())});
        return run;
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed evaluation run: ") + e.what());
    }
}

std::string to_csv(const EvalRun& run) { return kCsvHeader + csv_body(run); }

Comparison compare_runs(const EvalRun& before, const EvalRun& after) {
    std::set<std::string> a, b;
    for (const auto& s : before.per_sample) a.insert(s.sample_id);
    for (const auto& s : after.per_sample) b.insert(s.sample_id);
    if (a != b) throw ConfigError("runs " + before.run_id + " and " + after.run_id + " cover different samples");

    Comparison c;
    auto row = [](std::string scope, std::string id, const ConfusionCounts* x, const ConfusionCounts* y) {
        DeltaRow r{std::move(scope), std::move(id), std::nullopt, std::nullopt, std::nullopt};
        if (x && x->total()) r.before = accuracy(*x);
        if (y && y->total()) r.after = accuracy(*y);
        if (r.before && r.after) r.delta = *r.after - *r.before;
        return r;
    };
    c.rows.push_back(row("overall", "all", &before.overall, &after.overall));
    for (auto cat : {CweCategory::memory_safety, CweCategory::input_validation_injection,
                     CweCategory::system_resource_logic, CweCategory::permissions_access_control,
                     CweCategory::crypto_info_leakage, CweCategory::uncategorized}) {
        auto x = before.per_category.find(cat);
        auto y = after.per_category.find(cat);
        if (x == before.per_category.end() && y == after.per_category.end()) continue;
        c.rows.push_back(row("category", to_string(cat), x == before.per_category.end() ? nullptr : &x->second,
                             y == after.per_category.end() ? nullptr : &y->second));
    }
    auto merged = before.per_cwe;
    for (const auto& [k, v] : after.per_cwe) merged.emplace(k, v);
    for (const auto& id : sorted_cwes(merged)) {
        auto x = before.per_cwe.find(id);
        auto y = after.per_cwe.find(id);
        c.rows.push_back(row("cwe", id, x == before.per_cwe.end() ? nullptr : &x->second,
                             y == after.per_cwe.end() ? nullptr : &y->second));
    }
    return c;
}

std::string deltas_csv(const Comparison& c) {
    std::string out = "scope,scope_id,before_accuracy,after_accuracy,delta\n";
    auto cell = [](const std::optional<double>& v) { return v ? fmt(*v) : std::string(); };
    for (const auto& r : c.rows)
        out += r.scope + "," + r.scope_id + "," + cell(r.before) + "," + cell(r.after) + "," + cell(r.delta) + "\n";
    return out;
}

std::string comparison_svg(const EvalRun& before, const EvalRun& after, const Comparison& c) {
    std::vector<const DeltaRow*> groups;
    for (const auto& r : c.rows)
        if (r.scope != "cwe") groups.push_back(&r);

    const int group_w = 120, bar_w = 40, plot_h = 240, left = 60, top = 40, bottom = 110;
    const int width = left + static_cast<int>(groups.size()) * group_w + 40;
    const int height = top + plot_h + bottom;
    auto esc = [](const std::string& s) {
        std::string o;
        for (char ch : s) {
            if (ch == '<') o += "&lt;";
            else if (ch == '>') o += "&gt;";
            else if (ch == '&') o += "&amp;";
            else o += ch;
        }
        return o;
    };

    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) + "\" height=\"" +
           std::to_string(height) + "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg += "<text x=\"" + std::to_string(left) + "\" y=\"20\" font-size=\"14\">Accuracy: " + esc(before.run_id) +
           " vs " + esc(after.run_id) + "</text>\n";
    for (int t = 0; t <= 4; ++t) {
        const int y = top + plot_h - t * plot_h / 4;
        svg += "<line x1=\"" + std::to_string(left) + "\" y1=\"" + std::to_string(y) + "\" x2=\"" +
               std::to_string(width - 20) + "\" y2=\"" + std::to_string(y) + "\" stroke=\"#ddd\"/>\n";
        svg += "<text x=\"" + std::to_string(left - 8) + "\" y=\"" + std::to_string(y + 4) +
               "\" text-anchor=\"end\">" + fmt(t / 4.0).substr(0, 4) + "</text>\n";
    }
    auto bar = [&](int x, std::optional<double> v, const char* color) {
        if (!v) return;
        const int h = static_cast<int>(*v * plot_h + 0.5);
        svg += "<rect x=\"" + std::to_string(x) + "\" y=\"" + std::to_string(top + plot_h - h) + "\" width=\"" +
               std::to_string(bar_w) + "\" height=\"" + std::to_string(h) + "\" fill=\"" + color + "\"/>\n";
    };
    for (std::size_t i = 0; i < groups.size(); ++i) {
        const int x = left + static_cast<int>(i) * group_w + 15;
        bar(x, groups[i]->before, "#9e9e9e");
        bar(x + bar_w, groups[i]->after, "#1f77b4");
        const int lx = x + bar_w, ly = top + plot_h + 14;
        svg += "<text x=\"" + std::to_string(lx) + "\" y=\"" + std::to_string(ly) + "\" text-anchor=\"end\" transform=\"rotate(-30 " +
               std::to_string(lx) + " " + std::to_string(ly) + ")\">" + esc(groups[i]->scope_id) + "</text>\n";
    }
    const int ly = height - 16;
    svg += "<rect x=\"" + std::to_string(left) + "\" y=\"" + std::to_string(ly - 10) +
           "\" width=\"12\" height=\"12\" fill=\"#9e9e9e\"/><text x=\"" + std::to_string(left + 16) + "\" y=\"" +
           std::to_string(ly) + "\">" + esc(before.run_id) + "</text>\n";
    svg += "<rect x=\"" + std::to_string(left + 160) + "\" y=\"" + std::to_string(ly - 10) +
           "\" width=\"12\" height=\"12\" fill=\"#1f77b4\"/><text x=\"" + std::to_string(left + 176) + "\" y=\"" +
           std::to_string(ly) + "\">" + esc(after.run_id) + "</text>\n";
    svg += "</svg>\n";
    return svg;
}

ComparisonFiles write_comparison(const EvalRun& before, const EvalRun& after, const fs::path& out_dir) {
    const auto cmp = compare_runs(before, after);
    fs::create_directories(out_dir);
    ComparisonFiles files{out_dir / "comparison.csv", out_dir / "deltas.csv", out_dir / "comparison.svg"};
    write_file_atomic(files.csv, std::string(kCsvHeader) + csv_body(before) + csv_body(after));
    write_file_atomic(files.deltas, deltas_csv(cmp));
    write_file_atomic(files.chart, comparison_svg(before, after, cmp));
    return files;
}

// ---------------------------------------------------------------------------
// Scoring model output

ScoredCorpus score_outputs(const corpus::Corpus& truth, const std::vector<std::string>& raw_outputs,
                           const ScoreOptions& options) {
    if (truth.samples.size() != raw_outputs.size())
        throw ConfigError("got " + std::to_string(raw_outputs.size()) + " model outputs for " +
                          std::to_string(truth.samples.size()) + " samples");
    ScoredCorpus out;
    for (std::size_t i = 0; i < raw_outputs.size(); ++i) {
        const auto& sample = truth.samples[i];
        report::VulnReport rep;
        try {
            rep = report::parse_report(raw_outputs[i], sample.provenance.original_id);
        } catch (const ParseError& e) {
            out.notes.push_back(sample.id + ": " + e.what() + " (scored as no detection)");
            rep = report::VulnReport{sample.provenance.original_id, {}};
        }
        ScoredSample s;
        s.sample_id = sample.id;
        s.outcome = report::score_against_truth(rep, sample, options.mode);
        if (sample.label == corpus::Label::vulnerable) s.truth_cwe = sample.cwe_id;
        if (!rep.detections.empty()) s.predicted_cwe = rep.detections.front().cwe;
        out.samples.push_back(std::move(s));
    }
    return out;
}

std::vector<std::string> read_report_dir(const corpus::Corpus& truth, const fs::path& dir) {
    std::vector<std::string> out;
    for (const auto& s : truth.samples) {
        std::error_code ec;
        const auto txt = dir / (s.id + ".txt");
        const auto jsn = dir / (s.id + ".json");
        if (fs::is_regular_file(txt, ec)) out.push_back(read_file(txt));
        else if (fs::is_regular_file(jsn, ec)) out.push_back(read_file(jsn));
        else throw IoError("no model report for sample " + s.id + " in " + dir.string());
    }
    return out;
}

DetectorConfig load_detector(const fs::path& prompts_dir, std::string backend_id, llm::Decoding decoding) {
    DetectorConfig cfg{read_file(prompts_dir / "detect.system.txt"), read_file(prompts_dir / "detect.user.txt"),
                       std::move(backend_id), decoding};
    for (const auto* t : {&cfg.system_prompt_template, &cfg.user_prompt_template}) {
        for (const auto& name : distill::template_placeholders(*t)) {
            if (name != "code") throw ConfigError("detector templates may only use {{code}}, found {{" + name + "}}");
        }
    }
    const auto user = distill::template_placeholders(cfg.user_prompt_template);
    if (std::find(user.begin(), user.end(), "code") == user.end())
        throw ConfigError("detector user template must contain {{code}}");
    return cfg;
}

DetectorRun run_detector(const corpus::Corpus& corpus, const DetectorConfig& cfg, llm::Client& client) {
    DetectorRun run;
    std::int64_t latency = 0;
    for (const auto& s : corpus.samples) {
        llm::CompletionRequest req;
        req.system_prompt = distill::render(cfg.system_prompt_template, {{"code", s.code}});
        req.user_prompt = distill::render(cfg.user_prompt_template, {{"code", s.code}});
        req.decoding = cfg.decoding;
        req.backend_id = cfg.backend_id;
        auto res = client.complete(req);
        latency += res.latency_ms;
        run.outputs.push_back(std::move(res.text));
    }
    if (!corpus.samples.empty()) run.mean_latency_ms = static_cast<double>(latency) / corpus.samples.size();
    return run;
}

}  // namespace finesec::evalx

// SPDX-License-Identifier: Apache-2.0
#include "finesec/report.hpp"

#include "finesec/evalx.hpp"

#include <algorithm>
#include <cctype>
#include <regex>

namespace finesec::report {

using nlohmann::json;
using nlohmann::ordered_json;

std::string to_string(Severity s) {
    switch (s) {
    case Severity::low: return "low";
    case Severity::medium: return "medium";
    case Severity::high: return "high";
    case Severity::critical: return "critical";
    }
    return "low";
}

std::optional<Severity> parse_severity(std::string_view s) {
    const auto v = to_lower(trim(s));
    for (auto sev : {Severity::low, Severity::medium, Severity::high, Severity::critical}) {
        if (to_string(sev) == v) return sev;
    }
    return std::nullopt;
}

std::optional<std::pair<int, int>> parse_line_range(std::string_view s) {
    static const std::regex kRange(R"(^\s*(\d{1,9})\s*(?:-\s*(\d{1,9})\s*)?$)");
    const std::string str(s);
    std::smatch m;
    if (!std::regex_match(str, m, kRange)) return std::nullopt;
    const int a = std::stoi(m[1].str());
    const int b = m[2].matched ? std::stoi(m[2].str()) : a;
    if (a < 1 || a > b) return std::nullopt;
    return std::make_pair(a, b);
}

namespace {

class Checker {
public:
    std::vector<std::string> problems;

    void fail(const std::string& path, const std::string& msg) { problems.push_back(path + ": " + msg); }

    std::optional<std::string> string_at(const json& obj, const char* key, const std::string& path, bool required) {
        auto it = obj.find(key);
        if (it == obj.end() || it->is_null()) {
            if (required) fail(path + "/" + key, "missing");
            return std::nullopt;
        }
        if (!it->is_string()) {
            fail(path + "/" + key, "expected a string");
            return std::nullopt;
        }
        return it->get<std::string>();
    }
};

// Key lookup that tolerates "cwe" for "CWE".
const json* find_cwe(const json& taxonomy) {
    if (auto it = taxonomy.find("CWE"); it != taxonomy.end()) return &*it;
    for (auto it = taxonomy.begin(); it != taxonomy.end(); ++it) {
        if (to_lower(it.key()) == "cwe") return &*it;
    }
    return nullptr;
}

Detection detection_from_json(const json& d, const std::string& path, Checker& ck) {
    Detection det;
    if (!d.is_object()) {
        ck.fail(path, "expected an object");
        return det;
    }
    if (auto issue = ck.string_at(d, "issue", path, true)) {
        if (trim(*issue).empty()) ck.fail(path + "/issue", "empty");
        det.issue = *issue;
    }

    auto tax = d.find("taxonomy");
    if (tax == d.end() || !tax->is_object()) {
        ck.fail(path + "/taxonomy", tax == d.end() ? "missing" : "expected an object");
    } else if (const json* cwe = find_cwe(*tax); cwe == nullptr) {
        ck.fail(path + "/taxonomy/CWE", "missing");
    } else {
        std::optional<std::string> canon;
        if (cwe->is_string()) canon = canonical_cwe(cwe->get<std::string>());
        else if (cwe->is_number_unsigned() || (cwe->is_number_integer() && cwe->get<long long>() >= 0))
            canon = canonical_cwe(std::to_string(cwe->get<long long>()));
        if (!canon) ck.fail(path + "/taxonomy/CWE", "not a CWE id: " + cwe->dump());
        else det.cwe = *canon;
    }

    if (auto sev = d.find("severity"); sev != d.end() && !sev->is_null()) {
        std::optional<Severity> s;
        if (sev->is_string()) s = parse_severity(sev->get<std::string>());
        if (!s) ck.fail(path + "/severity", "expected one of low, medium, high, critical");
        det.severity = s;
    }

    if (auto locs = d.find("locations"); locs != d.end() && !locs->is_null()) {
        if (!locs->is_array()) {
            ck.fail(path + "/locations", "expected an array");
        } else {
            for (std::size_t i = 0; i < locs->size(); ++i) {
                const auto& l = (*locs)[i];
                const auto lp = path + "/locations/" + std::to_string(i);
                if (!l.is_object()) {
                    ck.fail(lp, "expected an object");
                    continue;
                }
                Location loc;
                if (auto f = ck.string_at(l, "file", lp, true)) loc.file = *f;
                auto lines = l.find("lines");
                if (lines == l.end() || lines->is_null()) {
                    ck.fail(lp + "/lines", "missing");
                } else {
                    if (lines->is_string()) loc.lines = lines->get<std::string>();
                    else if (lines->is_number_integer()) loc.lines = std::to_string(lines->get<long long>());
                    // Kept verbatim once valid, so serialization round-trips.
                    if (!parse_line_range(loc.lines))
                        ck.fail(lp + "/lines", "expected \"n\" or \"n-m\" with n <= m");
                }
                det.locations.push_back(std::move(loc));
            }
        }
    }

    auto rats = d.find("rationales");
    if (rats == d.end() || rats->is_null()) {
        ck.fail(path + "/rationales", "missing");
    } else if (!rats->is_array()) {
        ck.fail(path + "/rationales", "expected an array");
    } else {
        for (std::size_t i = 0; i < rats->size(); ++i) {
            if (!(*rats)[i].is_string()) ck.fail(path + "/rationales/" + std::to_string(i), "expected a string");
            else det.rationales.push_back((*rats)[i].get<std::string>());
        }
        if (rats->empty()) ck.fail(path + "/rationales", "empty");
    }

    if (auto p = d.find("patch"); p != d.end() && !p->is_null()) {
        if (!p->is_object()) {
            ck.fail(path + "/patch", "expected an object");
        } else {
            Patch patch;
            if (auto s = ck.string_at(*p, "strategy", path + "/patch", true)) patch.strategy = *s;
            if (auto diff = p->find("diff"); diff != p->end() && !diff->is_null()) {
                if (!diff->is_array()) {
                    ck.fail(path + "/patch/diff", "expected an array");
                } else {
                    for (std::size_t i = 0; i < diff->size(); ++i) {
                        if (!(*diff)[i].is_string())
                            ck.fail(path + "/patch/diff/" + std::to_string(i), "expected a string");
                        else patch.diff.push_back((*diff)[i].get<std::string>());
                    }
                }
            }
            det.patch = std::move(patch);
        }
    }
    return det;
}

}  // namespace

VulnReport from_json(const json& j, const std::string& fallback_target) {
    Checker ck;
    VulnReport r;
    if (!j.is_object()) throw SchemaError("report is not a JSON object", {"/"});
    if (auto t = ck.string_at(j, "target", "", false); t && !trim(*t).empty()) r.target = *t;
    else r.target = fallback_target;

    auto dets = j.find("detections");
    if (dets == j.end() || dets->is_null()) {
        ck.fail("/detections", "missing");
    } else if (!dets->is_array()) {
        ck.fail("/detections", "expected an array");
    } else {
        for (std::size_t i = 0; i < dets->size(); ++i)
            r.detections.push_back(detection_from_json((*dets)[i], "/detections/" + std::to_string(i), ck));
    }
    if (!ck.problems.empty()) {
        std::string msg = "report does not match the schema:";
        std::vector<std::string> paths;
        for (const auto& p : ck.problems) {
            msg += "\n  " + p;
            paths.push_back(p.substr(0, p.find(": ")));
        }
        throw SchemaError(msg, std::move(paths));
    }
    return r;
}

ordered_json to_json(const VulnReport& r) {
    ordered_json j;
    j["target"] = r.target;
    j["detections"] = ordered_json::array();
    for (const auto& d : r.detections) {
        ordered_json o;
        o["issue"] = d.issue;
        o["taxonomy"] = {{"CWE", d.cwe}};
        if (d.severity) o["severity"] = to_string(*d.severity);
        o["locations"] = ordered_json::array();
        for (const auto& l : d.locations) o["locations"].push_back({{"file", l.file}, {"lines", l.lines}});
        o["rationales"] = d.rationales;
        if (d.patch) o["patch"] = {{"strategy", d.patch->strategy}, {"diff", d.patch->diff}};
        j["detections"].push_back(std::move(o));
    }
    return j;
}

std::string serialize(const VulnReport& r) { return to_json(r).dump(2) + "\n"; }

std::optional<json> find_first_json_object(std::string_view raw) {
    for (std::size_t start = raw.find('{'); start != std::string_view::npos; start = raw.find('{', start + 1)) {
        int depth = 0;
        bool in_string = false;
        bool escaped = false;
        std::size_t end = std::string_view::npos;
        for (std::size_t i = start; i < raw.size(); ++i) {
            const char c = raw[i];
            if (in_string) {
                if (escaped) escaped = false;
                else if (c == '\\') escaped = true;
                else if (c == '"') in_string = false;
                continue;
            }
            if (c == '"') in_string = true;
            else if (c == '{') ++depth;
            else if (c == '}' && --depth == 0) {
                end = i;
                break;
            }
        }
        if (end == std::string_view::npos) continue;
        auto parsed = json::parse(raw.substr(start, end - start + 1), nullptr, false);
        if (!parsed.is_discarded() && parsed.is_object()) return parsed;
    }
    return std::nullopt;
}

bool has_negation_phrase(std::string_view raw) {
    for (std::string_view phrase : {"no vulnerability", "no vulnerabilities", "not vulnerable"}) {
        if (icontains(raw, phrase)) return true;
    }
    return false;
}

VulnReport parse_report(std::string_view raw, const std::string& fallback_target) {
    if (auto obj = find_first_json_object(raw)) return from_json(*obj, fallback_target);
    if (has_negation_phrase(raw)) return VulnReport{fallback_target, {}};
    throw UnparseableReport("no JSON report and no negative verdict in model output");
}

std::string to_string(Outcome o) {
    switch (o) {
    case Outcome::TP: return "TP";
    case Outcome::FP: return "FP";
    case Outcome::FN: return "FN";
    case Outcome::TN: return "TN";
    }
    return "TN";
}

std::string to_string(MatchMode m) {
    switch (m) {
    case MatchMode::binary: return "binary";
    case MatchMode::exact_cwe: return "exact_cwe";
    case MatchMode::category: return "category";
    }
    return "binary";
}

std::optional<MatchMode> parse_match_mode(std::string_view s) {
    for (auto m : {MatchMode::binary, MatchMode::exact_cwe, MatchMode::category}) {
        if (to_string(m) == s) return m;
    }
    return std::nullopt;
}

Outcome score_against_truth(const VulnReport& report, const corpus::CodeSample& sample, MatchMode mode) {
    if (sample.label == corpus::Label::unknown)
        throw ConfigError("sample " + sample.id + " has no ground-truth label");
    const bool positive = !report.detections.empty();
    if (sample.label == corpus::Label::benign) return positive ? Outcome::FP : Outcome::TN;
    if (!positive) return Outcome::FN;
    if (mode == MatchMode::binary) return Outcome::TP;

    if (!sample.cwe_id) throw ConfigError("vulnerable sample " + sample.id + " has no cwe_id to match against");
    const auto& truth = *sample.cwe_id;
    const auto truth_cat = evalx::categorize_cwe(truth);
    for (const auto& d : report.detections) {
        if (d.cwe == truth) return Outcome::TP;
        if (mode == MatchMode::category && truth_cat != evalx::CweCategory::uncategorized &&
            evalx::categorize_cwe(d.cwe) == truth_cat)
            return Outcome::TP;
    }
    return Outcome::FN;
}

}  // namespace finesec::report

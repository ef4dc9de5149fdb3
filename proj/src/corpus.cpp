// SPDX-License-Identifier: Apache-2.0
#include "finesec/corpus.hpp"

#include "finesec/clex.hpp"

#include <json.hpp>

#include <algorithm>
#include <map>
#include <set>
#include <unordered_map>
#include <unordered_set>

namespace finesec::corpus {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

std::string to_string(Language lang) {
    switch (lang) {
    case Language::c: return "c";
    case Language::cpp: return "cpp";
    case Language::other: return "other";
    }
    return "other";
}

std::string to_string(Label label) {
    switch (label) {
    case Label::vulnerable: return "vulnerable";
    case Label::benign: return "benign";
    case Label::unknown: return "unknown";
    }
    return "unknown";
}

std::optional<Language> parse_language(std::string_view s) {
    const auto l = to_lower(s);
    if (l == "c") return Language::c;
    if (l == "cpp" || l == "c++") return Language::cpp;
    if (l == "other") return Language::other;
    return std::nullopt;
}

std::optional<Label> parse_label(std::string_view s) {
    if (s == "vulnerable") return Label::vulnerable;
    if (s == "benign") return Label::benign;
    if (s == "unknown") return Label::unknown;
    return std::nullopt;
}

namespace {

std::optional<Language> language_from_extension(const fs::path& p) {
    const auto ext = to_lower(p.extension().string());
    if (ext == ".c" || ext == ".h") return Language::c;
    if (ext == ".cc" || ext == ".cpp" || ext == ".cxx" || ext == ".hpp" || ext == ".hh" || ext == ".hxx" ||
        ext == ".c++")
        return Language::cpp;
    return std::nullopt;
}

bool is_labeled_benchmark(std::string_view dataset_name) {
    static constexpr std::string_view kLabeled[] = {"juliet", "sard", "cvefixes"};
    return std::any_of(std::begin(kLabeled), std::end(kLabeled),
                       [&](std::string_view n) { return icontains(dataset_name, n); });
}

std::string json_scalar_to_string(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_integer()) return std::to_string(v.get<long long>());
    return v.dump();
}

}  // namespace

std::string sample_id(std::string_view code, const Provenance& provenance) {
    std::string material;
    material.reserve(code.size() + provenance.dataset_name.size() + provenance.original_id.size() + 2);
    material.append(provenance.dataset_name).push_back('\0');
    material.append(provenance.original_id).push_back('\0');
    material.append(code);
    return sha256_hex(material).substr(0, 16);
}

CodeSample make_sample(std::string code, Language language, Label label, std::optional<std::string> cwe_id,
                       Provenance provenance) {
    CodeSample s;
    s.language = language;
    s.label = label;
    s.cwe_id = std::move(cwe_id);
    s.provenance = std::move(provenance);
    s.byte_len = code.size();
    s.line_count = count_lines(code);
    s.id = sample_id(code, s.provenance);
    s.code = std::move(code);
    return s;
}

CodeSample with_code(const CodeSample& sample, std::string code) {
    return make_sample(std::move(code), sample.language, sample.label, sample.cwe_id, sample.provenance);
}

Corpus ingest_jsonl_text(std::string_view text, const std::string& dataset_name) {
    Corpus corpus;
    corpus.name = dataset_name;
    std::unordered_set<std::string> seen;
    std::size_t lineno = 0;
    for (const auto& raw_line : split_lines(text)) {
        ++lineno;
        if (trim(raw_line).empty()) continue;
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(raw_line);
        } catch (const nlohmann::json::exception& e) {
            throw RecordError(lineno, std::string("malformed record: ") + e.what());
        }
        if (!rec.is_object()) throw RecordError(lineno, "malformed record: not a JSON object");
        if (!rec.contains("code") || !rec["code"].is_string())
            throw RecordError(lineno, "malformed record: missing string field 'code'");
        if (!rec.contains("label") || !rec["label"].is_string())
            throw RecordError(lineno, "malformed record: missing string field 'label'");
        const auto label_str = rec["label"].get<std::string>();
        const auto label = parse_label(label_str);
        if (!label) throw RecordError(lineno, "malformed record: unknown label '" + label_str + "'");

        Provenance prov;
        prov.dataset_name = dataset_name;
        if (auto it = rec.find("dataset_name"); it != rec.end() && !it->is_null())
            prov.dataset_name = json_scalar_to_string(*it);
        prov.original_id = "line-" + std::to_string(lineno);
        if (auto it = rec.find("original_id"); it != rec.end() && !it->is_null())
            prov.original_id = json_scalar_to_string(*it);

        std::optional<Language> lang;
        if (auto it = rec.find("language"); it != rec.end() && !it->is_null()) {
            if (!it->is_string()) throw RecordError(lineno, "malformed record: 'language' must be a string");
            lang = parse_language(it->get<std::string>());
            if (!lang) throw RecordError(lineno, "malformed record: unknown language '" + it->get<std::string>() + "'");
        } else {
            lang = language_from_extension(prov.original_id);
        }

        std::optional<std::string> cwe;
        if (auto it = rec.find("cwe_id"); it != rec.end() && !it->is_null()) {
            const auto raw = json_scalar_to_string(*it);
            cwe = canonical_cwe(raw);
            if (!cwe) throw RecordError(lineno, "malformed record: invalid cwe_id '" + raw + "'");
        }
        if (*label == Label::vulnerable && !cwe && is_labeled_benchmark(prov.dataset_name))
            throw RecordError(lineno, "malformed record: vulnerable sample from labeled benchmark '" +
                                          prov.dataset_name + "' lacks cwe_id");

        auto sample = make_sample(rec["code"].get<std::string>(), lang.value_or(Language::c), *label,
                                  std::move(cwe), std::move(prov));
        if (!seen.insert(sample.id).second)
            throw RecordError(lineno, "duplicate record (same code and provenance) with id " + sample.id);
        corpus.samples.push_back(std::move(sample));
    }
    corpus.manifest.created_at = now_iso8601();
    return corpus;
}

Corpus ingest(const fs::path& path, InputFormat format) {
    std::error_code ec;
    if (!fs::exists(path, ec)) throw IoError("input path does not exist: " + path.string());

    if (format == InputFormat::jsonl) {
        if (!fs::is_regular_file(path, ec)) throw IoError("not a regular file: " + path.string());
        auto corpus = ingest_jsonl_text(read_file(path), path.stem().string());
        corpus.manifest.source_description = "jsonl:" + path.string();
        return corpus;
    }

    if (!fs::is_directory(path, ec)) throw IoError("not a directory: " + path.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(path)) {
        if (entry.is_regular_file() && language_from_extension(entry.path())) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());

    Corpus corpus;
    const auto dir_name = fs::absolute(path).lexically_normal().filename().string();
    corpus.name = dir_name.empty() ? fs::absolute(path).parent_path().filename().string() : dir_name;
    for (const auto& file : files) {
        Provenance prov{corpus.name, fs::relative(file, path).generic_string()};
        corpus.samples.push_back(make_sample(read_file(file), *language_from_extension(file), Label::unknown,
                                             std::nullopt, std::move(prov)));
    }
    corpus.manifest.created_at = now_iso8601();
    corpus.manifest.source_description = "directory:" + path.string();
    return corpus;
}

std::string to_jsonl(const Corpus& corpus) {
    std::string out;
    for (const auto& s : corpus.samples) {
        ordered_json rec;
        rec["id"] = s.id;
        rec["code"] = s.code;
        rec["language"] = to_string(s.language);
        rec["label"] = to_string(s.label);
        rec["cwe_id"] = s.cwe_id ? ordered_json(*s.cwe_id) : ordered_json(nullptr);
        rec["dataset_name"] = s.provenance.dataset_name;
        rec["original_id"] = s.provenance.original_id;
        out += rec.dump();
        out.push_back('\n');
    }
    return out;
}

void write_jsonl(const Corpus& corpus, const fs::path& path) { write_file_atomic(path, to_jsonl(corpus)); }

void write_manifest(const Corpus& corpus, const fs::path& path) {
    ordered_json m;
    m["name"] = corpus.name;
    m["created_at"] = corpus.manifest.created_at;
    m["source_description"] = corpus.manifest.source_description;
    m["sample_count"] = corpus.samples.size();
    m["preprocessing_log"] = ordered_json::array();
    for (const auto& step : corpus.manifest.preprocessing_log) {
        m["preprocessing_log"].push_back(
            {{"step", step.step}, {"kept", step.kept}, {"removed", step.removed}, {"modified", step.modified}});
    }
    write_file_atomic(path, m.dump(2) + "\n");
}

void PreprocessConfig::validate() const {
    if (max_bytes == 0) throw ConfigError("max_bytes must be positive");
    if (min_lines < 1) throw ConfigError("min_lines must be at least 1");
}

// ---------------------------------------------------------------------------
// Length filter and deduplication

namespace {

bool within_length(const CodeSample& s, std::size_t max_bytes, std::size_t min_lines) {
    return s.byte_len <= max_bytes && s.line_count >= min_lines;
}

Corpus derive(const Corpus& from) {
    Corpus out;
    out.name = from.name;
    out.manifest = from.manifest;
    return out;
}

}  // namespace

Corpus filter_by_length(const Corpus& corpus, std::size_t max_bytes, std::size_t min_lines) {
    PreprocessConfig{max_bytes, min_lines}.validate();
    Corpus out = derive(corpus);
    for (const auto& s : corpus.samples) {
        if (within_length(s, max_bytes, min_lines)) out.samples.push_back(s);
    }
    out.manifest.preprocessing_log.push_back(
        {"filter_by_length", out.samples.size(), corpus.samples.size() - out.samples.size(), 0});
    return out;
}

std::string dedup_key(std::string_view code) {
    std::string key;
    bool prev_blank = false;
    for (const auto& raw : split_lines(code)) {
        std::string_view line = raw;
        while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.remove_suffix(1);
        const bool blank = line.empty();
        if (blank && prev_blank) continue;
        prev_blank = blank;
        key.append(line);
        key.push_back('\n');
    }
    return key;
}

Corpus deduplicate(const Corpus& corpus) {
    Corpus out = derive(corpus);
    std::unordered_set<std::string> seen;
    for (const auto& s : corpus.samples) {
        if (seen.insert(dedup_key(s.code)).second) out.samples.push_back(s);
    }
    out.manifest.preprocessing_log.push_back(
        {"deduplicate", out.samples.size(), corpus.samples.size() - out.samples.size(), 0});
    return out;
}

// ---------------------------------------------------------------------------
// Marker comments

namespace {

bool is_hspace(char c) { return c == ' ' || c == '\t'; }

bool at_line_end(const std::string& s, std::size_t pos) {
    return pos >= s.size() || s[pos] == '\n' || (s[pos] == '\r' && pos + 1 < s.size() && s[pos + 1] == '\n');
}

// Deletes s[begin, end) along with the whitespace that only existed to
// separate it from its neighbours. A comment that was alone on its line(s)
// takes the line with it.
void erase_comment(std::string& s, std::size_t begin, std::size_t end) {
    std::size_t ls = begin;
    while (ls > 0 && is_hspace(s[ls - 1])) --ls;
    std::size_t re = end;
    while (re < s.size() && is_hspace(s[re])) ++re;
    const bool starts_line = ls == 0 || s[ls - 1] == '\n';
    const bool ends_line = at_line_end(s, re);

    if (starts_line && ends_line) {
        if (re < s.size()) {
            std::size_t after = re + (s[re] == '\r' ? 2 : 1);
            s.erase(ls, after - ls);
        } else {
            std::size_t from = ls;
            if (from > 0) {
                --from;  // the newline that ended the previous line
                if (from > 0 && s[from - 1] == '\r') --from;
            }
            s.erase(from, re - from);
        }
    } else if (starts_line) {
        s.erase(begin, re - begin);
    } else if (ends_line) {
        s.erase(ls, re - ls);
    } else {
        s.replace(ls, re - ls, " ");
    }
}

}  // namespace

CodeSample strip_vuln_markers(const CodeSample& sample, const std::vector<std::string>& patterns) {
    if (sample.language == Language::other)
        throw ConfigError("strip_vuln_markers requires a C or C++ sample (id " + sample.id + ")");
    const auto lexed = clex::lex(sample.code);
    for (const auto& d : lexed.diagnostics) {
        if (d.kind == clex::DiagKind::unterminated_block_comment)
            throw LexError(d.line, "unterminated block comment at line " + std::to_string(d.line));
    }

    std::vector<clex::Token> doomed;
    for (const auto& tok : lexed.tokens) {
        if (!tok.is_comment()) continue;
        const auto body = clex::comment_body(tok, sample.code);
        if (std::any_of(patterns.begin(), patterns.end(), [&](const std::string& p) { return icontains(body, p); }))
            doomed.push_back(tok);
    }
    if (doomed.empty()) return sample;

    std::string code = sample.code;
    for (auto it = doomed.rbegin(); it != doomed.rend(); ++it) erase_comment(code, it->begin, it->end);
    return with_code(sample, std::move(code));
}

// ---------------------------------------------------------------------------
// Marker identifiers

namespace {

bool is_function_name_at(const std::vector<clex::Token>& toks, std::size_t i, std::string_view src) {
    if (toks[i].kind != clex::TokenKind::identifier) return false;
    if (i + 1 >= toks.size()) return false;
    const auto& next = toks[i + 1];
    return next.kind == clex::TokenKind::punct && next.text(src) == "(" && !clex::is_keyword(toks[i].text(src));
}

}  // namespace

std::vector<std::string> function_name_identifiers(std::string_view code) {
    const auto toks = clex::code_tokens(clex::lex(code));
    std::vector<std::string> names;
    std::set<std::string, std::less<>> seen;
    for (std::size_t i = 0; i < toks.size(); ++i) {
        if (!is_function_name_at(toks, i, code)) continue;
        auto name = std::string(toks[i].text(code));
        if (seen.insert(name).second) names.push_back(std::move(name));
    }
    return names;
}

CodeSample neutralize_identifiers(const CodeSample& sample, const std::vector<std::string>& markers) {
    if (sample.language == Language::other)
        throw ConfigError("neutralize_identifiers requires a C or C++ sample (id " + sample.id + ")");
    const std::string& src = sample.code;
    const auto toks = clex::code_tokens(clex::lex(src));

    auto marked = [&](std::string_view name) {
        return std::any_of(markers.begin(), markers.end(), [&](const std::string& m) { return icontains(name, m); });
    };

    std::set<std::string, std::less<>> function_names;
    std::set<std::string, std::less<>> all_identifiers;
    for (std::size_t i = 0; i < toks.size(); ++i) {
        if (toks[i].kind != clex::TokenKind::identifier) continue;
        all_identifiers.emplace(toks[i].text(src));
        if (is_function_name_at(toks, i, src) && marked(toks[i].text(src))) function_names.emplace(toks[i].text(src));
    }
    if (function_names.empty()) return sample;

    // Placeholders in order of each name's first appearance anywhere in the code.
    std::map<std::string, std::string, std::less<>> rename;
    std::size_t counter = 1;
    auto next_placeholder = [&] {
        for (;;) {
            std::string candidate = counter == 1 ? "func" : "func_" + std::to_string(counter);
            ++counter;
            if (!all_identifiers.contains(candidate)) return candidate;
        }
    };
    for (const auto& tok : toks) {
        if (tok.kind != clex::TokenKind::identifier) continue;
        const auto text = tok.text(src);
        if (function_names.contains(text) && !rename.contains(text)) rename.emplace(std::string(text), next_placeholder());
    }

    std::string out;
    out.reserve(src.size());
    std::size_t cursor = 0;
    for (const auto& tok : toks) {
        if (tok.kind != clex::TokenKind::identifier) continue;
        auto it = rename.find(tok.text(src));
        if (it == rename.end()) continue;
        out.append(src, cursor, tok.begin - cursor);
        out.append(it->second);
        cursor = tok.end;
    }
    out.append(src, cursor, std::string::npos);
    return with_code(sample, std::move(out));
}

// ---------------------------------------------------------------------------
// Composition

Corpus preprocess(const Corpus& corpus, const PreprocessConfig& config) {
    config.validate();
    Corpus out = derive(corpus);
    const std::size_t n = corpus.samples.size();

    // Length filter. A sample has to satisfy the bounds both as supplied and
    // after cleaning so that every emitted sample honours them.
    std::vector<std::size_t> kept;
    std::vector<CodeSample> stripped(n), cleaned(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& s = corpus.samples[i];
        if (!within_length(s, config.max_bytes, config.min_lines)) continue;
        if (s.language == Language::other) {
            stripped[i] = cleaned[i] = s;
        } else {
            try {
                stripped[i] = strip_vuln_markers(s, config.marker_patterns);
                cleaned[i] = neutralize_identifiers(stripped[i], config.identifier_markers);
            } catch (const LexError& e) {
                throw LexError(e.line(), "sample " + s.id + ": " + e.what());
            }
        }
        if (within_length(cleaned[i], config.max_bytes, config.min_lines)) kept.push_back(i);
    }
    out.manifest.preprocessing_log.push_back({"filter_by_length", kept.size(), n - kept.size(), 0});

    // Duplicates are judged on the cleaned text: two samples that differ only
    // in marker comments or marker names are the same sample once hidden.
    std::vector<std::size_t> unique;
    std::unordered_set<std::string> seen;
    for (auto i : kept) {
        if (seen.insert(dedup_key(cleaned[i].code)).second) unique.push_back(i);
    }
    out.manifest.preprocessing_log.push_back({"deduplicate", unique.size(), kept.size() - unique.size(), 0});

    std::size_t strip_modified = 0, rename_modified = 0;
    for (auto i : unique) {
        if (stripped[i].code != corpus.samples[i].code) ++strip_modified;
        if (cleaned[i].code != stripped[i].code) ++rename_modified;
        out.samples.push_back(cleaned[i]);
    }
    out.manifest.preprocessing_log.push_back({"strip_vuln_markers", unique.size(), 0, strip_modified});
    out.manifest.preprocessing_log.push_back({"neutralize_identifiers", unique.size(), 0, rename_modified});
    return out;
}

}  // namespace finesec::corpus

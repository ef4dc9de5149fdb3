// SPDX-License-Identifier: Apache-2.0
//
// Corpus ingestion and the four cleaning passes applied to raw vulnerability
// datasets: length filtering, deduplication, marker-comment stripping and
// marker-identifier neutralization.
#pragma once

#include "finesec/common.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace finesec::corpus {

enum class Language { c, cpp, other };
enum class Label { vulnerable, benign, unknown };

std::string to_string(Language lang);
std::string to_string(Label label);
std::optional<Language> parse_language(std::string_view s);
std::optional<Label> parse_label(std::string_view s);

struct Provenance {
    std::string dataset_name;
    std::string original_id;

    bool operator==(const Provenance&) const = default;
};

struct CodeSample {
    std::string id;
    std::string code;
    Language language = Language::c;
    Label label = Label::unknown;
    std::optional<std::string> cwe_id;
    Provenance provenance;
    std::size_t byte_len = 0;
    std::size_t line_count = 1;

    bool operator==(const CodeSample&) const = default;
};

/// Deterministic id from code and provenance.
std::string sample_id(std::string_view code, const Provenance& provenance);

/// Builds a sample with id, byte_len and line_count derived from `code`.
CodeSample make_sample(std::string code, Language language, Label label,
                       std::optional<std::string> cwe_id, Provenance provenance);

/// Replaces the code of `sample`, recomputing the derived fields.
CodeSample with_code(const CodeSample& sample, std::string code);

struct StepRecord {
    std::string step;
    std::size_t kept = 0;
    std::size_t removed = 0;
    std::size_t modified = 0;

    bool operator==(const StepRecord&) const = default;
};

struct Manifest {
    std::string created_at;
    std::string source_description;
    std::vector<StepRecord> preprocessing_log;
};

struct Corpus {
    std::string name;
    std::vector<CodeSample> samples;
    Manifest manifest;
};

/// Raised for per-record problems during ingestion. `line` is 1-based; 0 when
/// the problem is not tied to a line.
class RecordError : public ParseError {
public:
    RecordError(std::size_t line, const std::string& what)
        : ParseError(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

/// Raised by the comment lexer; names the offending line.
class LexError : public Error {
public:
    LexError(std::size_t line, const std::string& what) : Error(what), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

enum class InputFormat { jsonl, directory_of_files };

Corpus ingest(const std::filesystem::path& path, InputFormat format);

/// Parses JSONL text. `dataset_name` is the fallback when a record carries none.
Corpus ingest_jsonl_text(std::string_view text, const std::string& dataset_name);

/// One JSON object per line with the canonical sample keys.
std::string to_jsonl(const Corpus& corpus);
void write_jsonl(const Corpus& corpus, const std::filesystem::path& path);
void write_manifest(const Corpus& corpus, const std::filesystem::path& path);

struct PreprocessConfig {
    std::size_t max_bytes = 32765;
    std::size_t min_lines = 3;
    std::vector<std::string> marker_patterns = {"CWE", "FLAW", "FIX:", "POTENTIAL FLAW"};
    std::vector<std::string> identifier_markers = {"BAD", "GOOD", "VULN", "PATCHED"};

    void validate() const;
};

Corpus filter_by_length(const Corpus& corpus, std::size_t max_bytes = 32765, std::size_t min_lines = 3);

/// Whitespace-normalized form used as the duplicate key.
std::string dedup_key(std::string_view code);
Corpus deduplicate(const Corpus& corpus);

CodeSample strip_vuln_markers(const CodeSample& sample,
                              const std::vector<std::string>& patterns = PreprocessConfig{}.marker_patterns);

CodeSample neutralize_identifiers(const CodeSample& sample,
                                  const std::vector<std::string>& markers = PreprocessConfig{}.identifier_markers);

/// Names of identifiers that neutralize_identifiers treats as function names
/// (an identifier immediately followed by '(').
std::vector<std::string> function_name_identifiers(std::string_view code);

Corpus preprocess(const Corpus& corpus, const PreprocessConfig& config);

}  // namespace finesec::corpus

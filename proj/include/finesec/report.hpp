// SPDX-License-Identifier: Apache-2.0
//
// Structured vulnerability reports: the JSON shape a fine-tuned model is
// asked to produce, extraction of that shape from free text, and scoring of
// a report against a labeled sample.
#pragma once

#include "finesec/common.hpp"
#include "finesec/corpus.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace finesec::report {

enum class Severity { low, medium, high, critical };

std::string to_string(Severity s);
std::optional<Severity> parse_severity(std::string_view s);

struct Location {
    std::string file;
    std::string lines;  // "n" or "n-m"

    bool operator==(const Location&) const = default;
};

/// Parses "n" or "n-m" with 1 <= n <= m.
std::optional<std::pair<int, int>> parse_line_range(std::string_view s);

struct Patch {
    std::string strategy;
    std::vector<std::string> diff;

    bool operator==(const Patch&) const = default;
};

struct Detection {
    std::string issue;
    std::string cwe;
    std::optional<Severity> severity;
    std::vector<Location> locations;
    std::vector<std::string> rationales;
    std::optional<Patch> patch;

    bool operator==(const Detection&) const = default;
};

struct VulnReport {
    std::string target;
    std::vector<Detection> detections;

    bool operator==(const VulnReport&) const = default;
};

inline constexpr const char* kDefaultTarget = "unknown:unknown";

/// JSON was found but does not fit the report schema.
class SchemaError : public ParseError {
public:
    SchemaError(const std::string& what, std::vector<std::string> paths)
        : ParseError(what), paths_(std::move(paths)) {}
    const std::vector<std::string>& paths() const { return paths_; }

private:
    std::vector<std::string> paths_;
};

/// Neither a JSON object nor a negation phrase.
class UnparseableReport : public ParseError {
public:
    using ParseError::ParseError;
};

/// Validates a JSON value against the report schema. Unknown keys are
/// ignored; `fallback_target` fills a missing "target".
VulnReport from_json(const nlohmann::json& j, const std::string& fallback_target = kDefaultTarget);

/// Canonical form: keys in schema order, "severity" and "patch" only when set.
nlohmann::ordered_json to_json(const VulnReport& r);
std::string serialize(const VulnReport& r);

/// The first complete JSON object in `raw` (fenced or bare), if any.
std::optional<nlohmann::json> find_first_json_object(std::string_view raw);

/// True when the text says no vulnerability was found.
bool has_negation_phrase(std::string_view raw);

VulnReport parse_report(std::string_view raw, const std::string& fallback_target = kDefaultTarget);

enum class Outcome { TP, FP, FN, TN };
enum class MatchMode { binary, exact_cwe, category };

std::string to_string(Outcome o);
std::string to_string(MatchMode m);
std::optional<MatchMode> parse_match_mode(std::string_view s);

Outcome score_against_truth(const VulnReport& report, const corpus::CodeSample& sample, MatchMode mode);

}  // namespace finesec::report

// SPDX-License-Identifier: Apache-2.0
//
// Accuracy accounting over scored samples, grouped per CWE and per weakness
// category, plus before/after comparison output (CSV and an SVG bar chart).
#pragma once

#include "finesec/common.hpp"
#include "finesec/corpus.hpp"
#include "finesec/llmclient.hpp"
#include "finesec/report.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace finesec::evalx {

using report::Outcome;

struct ConfusionCounts {
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;
    std::uint64_t tn = 0;

    std::uint64_t total() const { return tp + fp + fn + tn; }
    void add(Outcome o);
    ConfusionCounts& operator+=(const ConfusionCounts& o);
    bool operator==(const ConfusionCounts&) const = default;
};

class UndefinedMetric : public Error {
public:
    using Error::Error;
};

/// (tp + tn) / total. Throws UndefinedMetric when total is zero.
double accuracy(const ConfusionCounts& c);

enum class CweCategory {
    memory_safety,
    input_validation_injection,
    system_resource_logic,
    permissions_access_control,
    crypto_info_leakage,
    uncategorized,
};

std::string to_string(CweCategory c);
std::optional<CweCategory> parse_category(std::string_view s);

/// The built-in table: 30 CWE ids across five categories.
const std::map<std::string, CweCategory>& category_table();

/// Category of a canonical "CWE-<n>" id; ids outside the table are
/// uncategorized. Malformed ids raise ParseError.
CweCategory categorize_cwe(std::string_view cwe);

struct ScoredSample {
    std::string sample_id;
    Outcome outcome = Outcome::TN;
    /// Ground truth for vulnerable samples.
    std::optional<std::string> truth_cwe;
    /// First detection's CWE, when the model predicted any.
    std::optional<std::string> predicted_cwe;
};

struct SampleOutcome {
    std::string sample_id;
    Outcome outcome;
};

struct EvalRun {
    std::string run_id;
    std::string model_id;
    std::vector<SampleOutcome> per_sample;
    std::map<std::string, ConfusionCounts> per_cwe;
    /// Outcomes with no CWE to credit: true negatives and false positives
    /// without a predicted CWE.
    ConfusionCounts unattributed;
    std::map<CweCategory, ConfusionCounts> per_category;
    ConfusionCounts overall;
};

/// Vulnerable samples count under their true CWE. A false positive counts
/// under the predicted CWE when there is one. Everything else is
/// unattributed; that bucket rolls up into the uncategorized category.
EvalRun aggregate(const std::vector<ScoredSample>& outcomes, std::string run_id, std::string model_id);

nlohmann::ordered_json to_json(const EvalRun& run);
EvalRun run_from_json(const nlohmann::json& j);

/// CSV with columns run_id, scope, scope_id, tp, fp, fn, tn, accuracy.
std::string to_csv(const EvalRun& run);

struct DeltaRow {
    std::string scope;  // overall | category | cwe
    std::string scope_id;
    std::optional<double> before;
    std::optional<double> after;
    std::optional<double> delta;
};

struct Comparison {
    std::vector<DeltaRow> rows;
};

/// Accuracy deltas overall and per category. Both runs must cover the same
/// sample ids.
Comparison compare_runs(const EvalRun& before, const EvalRun& after);

std::string deltas_csv(const Comparison& c);
std::string comparison_svg(const EvalRun& before, const EvalRun& after, const Comparison& c);

struct ComparisonFiles {
    std::filesystem::path csv;
    std::filesystem::path deltas;
    std::filesystem::path chart;
};

/// comparison.csv (both runs), deltas.csv and comparison.svg in `out_dir`.
ComparisonFiles write_comparison(const EvalRun& before, const EvalRun& after, const std::filesystem::path& out_dir);

// ---------------------------------------------------------------------------
// Scoring model output

struct ScoreOptions {
    report::MatchMode mode = report::MatchMode::binary;
};

struct ScoredCorpus {
    std::vector<ScoredSample> samples;
    /// Samples whose report could not be parsed; they count as negative.
    std::vector<std::string> notes;
};

/// Scores one raw model output per sample, aligned with `truth.samples`.
ScoredCorpus score_outputs(const corpus::Corpus& truth, const std::vector<std::string>& raw_outputs,
                           const ScoreOptions& options = {});

/// Reads `<sample_id>.txt` (or `.json`) for every sample from a directory.
std::vector<std::string> read_report_dir(const corpus::Corpus& truth, const std::filesystem::path& dir);

struct DetectorConfig {
    std::string system_prompt_template;  // may use {{code}}
    std::string user_prompt_template;    // must use {{code}}
    std::string backend_id;
    llm::Decoding decoding;
};

/// Loads detect.system.txt and detect.user.txt from a prompts directory.
DetectorConfig load_detector(const std::filesystem::path& prompts_dir, std::string backend_id,
                             llm::Decoding decoding = {});

struct DetectorRun {
    std::vector<std::string> outputs;
    /// Mean backend latency per sample, in milliseconds.
    double mean_latency_ms = 0;
};

/// Asks a model for a report on every sample.
DetectorRun run_detector(const corpus::Corpus& corpus, const DetectorConfig& cfg, llm::Client& client);

}  // namespace finesec::evalx

// SPDX-License-Identifier: Apache-2.0
//
// Release gate, the versioned model registry and the knowledge base of
// confirmed vulnerable/fixed code pairs.
//
// Registry layout:
//   <root>/index.json
//   <root>/<model_id>/<version>/card.json
//   <root>/<model_id>/<version>/artifact/REF.json
// Knowledge base layout:
//   <root>/pairs/<sha256>.json
//   <root>/terms.txt
#pragma once

#include "finesec/common.hpp"
#include "finesec/corpus.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace finesec::registry {

/// Suite names a gate may require. "adversarial-robustness" has no built-in
/// runner; it passes only when reported by the caller.
const std::vector<std::string>& known_suites();

struct GateThresholds {
    double min_accuracy = 0.6;
    std::int64_t max_latency_ms_per_sample = 5000;
    std::int64_t max_memory_mb = 16384;
    std::vector<std::string> required_invariant_suites;

    void validate() const;
};

nlohmann::ordered_json to_json(const GateThresholds& t);
GateThresholds thresholds_from_json(const nlohmann::json& j);

struct GateMetrics {
    double accuracy = 0;
    std::int64_t latency_ms = 0;
    std::int64_t memory_mb = 0;
    std::vector<std::string> suites_passed;
};

struct GateResult {
    bool passed = false;
    std::vector<std::string> reasons;

    bool operator==(const GateResult&) const = default;
};

GateResult evaluate_gate(const GateMetrics& metrics, const GateThresholds& thresholds);

struct TrainingDataSummary {
    std::string dataset_hash;
    std::size_t size = 0;
    std::map<std::string, std::size_t> cwe_distribution;
};

/// Hash, item count and label histogram of a distilled dataset file.
TrainingDataSummary summarize_dataset(const std::filesystem::path& dataset);

struct MetricsRef {
    std::string eval_run_ref;  // path of the evaluation run JSON
    std::string run_id;
    double accuracy = 0;
    std::int64_t latency_ms = 0;
    std::int64_t memory_mb = 0;
};

struct ModelCard {
    std::string model_id;
    int version = 0;  // assigned on registration
    std::string base_model_id;
    TrainingDataSummary training_data_summary;
    MetricsRef metrics;
    GateResult gate_result;
    std::string created_at;
    std::string deployment_notes;
    std::optional<std::string> artifact_ref;
};

nlohmann::ordered_json to_json(const ModelCard& card);
ModelCard card_from_json(const nlohmann::json& j);

class RegistrationRejected : public Error {
public:
    using Error::Error;
};

class Registry {
public:
    explicit Registry(std::filesystem::path root);

    /// Stores the card under the next version for its model id. Local
    /// artifacts are copied in under their content hash.
    int register_model(ModelCard card);

    /// All cards, or those of one model, ordered by model id then version.
    std::vector<ModelCard> list(const std::optional<std::string>& model_id = std::nullopt) const;
    ModelCard get(const std::string& model_id, int version) const;

    const std::filesystem::path& root() const { return root_; }

private:
    std::filesystem::path root_;
};

enum class PairSource { distilled, deployment_feedback, manual };

std::string to_string(PairSource s);
std::optional<PairSource> parse_pair_source(std::string_view s);

struct KnowledgePair {
    std::string vulnerable_code;
    std::string fixed_code;
    std::string cwe_id;
    PairSource source = PairSource::manual;
    std::string confirmed_by;

    void validate() const;
};

/// Content hash over CWE and both code texts.
std::string pair_hash(const KnowledgePair& p);

class KnowledgeBase {
public:
    explicit KnowledgeBase(std::filesystem::path root);

    /// Returns false, leaving the store untouched, when the pair is already
    /// present.
    bool ingest_feedback(const KnowledgePair& pair);

    /// Stored pairs ordered by hash.
    std::vector<KnowledgePair> pairs() const;
    std::size_t size() const;

    /// Two samples per pair: the vulnerable code and the fixed code labeled
    /// benign, both carrying the pair's CWE.
    corpus::Corpus export_corpus(const std::string& name = "kb") const;

    /// Adds security vocabulary; returns the number of new terms.
    std::size_t add_terms(const std::vector<std::string>& terms);
    std::vector<std::string> terms() const;

private:
    std::filesystem::path root_;
};

}  // namespace finesec::registry

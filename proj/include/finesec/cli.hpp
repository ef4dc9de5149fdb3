// SPDX-License-Identifier: Apache-2.0
//
// Command-line entry point and the end-to-end pipeline runner.
//
// Exit codes: 0 success, 1 domain error (including a failed gate), 2 usage
// error. Every invocation writes a JSON run manifest.
#pragma once

#include "finesec/corpus.hpp"
#include "finesec/distill.hpp"
#include "finesec/enhance.hpp"
#include "finesec/llmclient.hpp"
#include "finesec/registry.hpp"
#include "finesec/report.hpp"
#include "finesec/trainer.hpp"

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace finesec::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitDomain = 1;
inline constexpr int kExitUsage = 2;

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct BackendSpec {
    std::string id;
    llm::BackendKind kind = llm::BackendKind::mock;
    llm::Settings settings;
};

/// Reads the "backends" object of a config document. Relative "fixtures"
/// paths resolve against `base_dir`.
std::vector<BackendSpec> parse_backends(const nlohmann::json& backends, const std::filesystem::path& base_dir);

struct PipelineConfig {
    std::filesystem::path train_corpus;
    std::filesystem::path test_corpus;
    corpus::InputFormat format = corpus::InputFormat::jsonl;
    std::filesystem::path prompts_dir;
    std::filesystem::path output_root;
    std::vector<BackendSpec> backends;

    corpus::PreprocessConfig preprocess;

    std::string teacher_backend;
    int distill_workers = 1;
    distill::PsiOptions psi;
    bool write_transcripts = false;

    enhance::EnhanceConfig enhance;
    std::vector<std::string> models;
    std::string base_model_id;
    std::string trainer_kind = "simulated";  // simulated | external
    std::vector<std::string> adapter_argv;
    /// Loss trajectories replayed by the simulated trainer, by candidate id.
    std::map<std::string, std::vector<double>> trainer_scripts;
    /// Scripted combined losses by candidate id and round. When empty the
    /// candidates are scored by querying `eval_backend`.
    std::map<std::string, std::vector<double>> scripted_losses;
    std::string eval_backend;
    std::string review_mode = "interactive";  // interactive | scripted:<edits.json>
    std::int64_t review_timeout_s = 3600;
    trainer::TrainJobSpec job_template;
    std::vector<std::string> vocab_terms;

    report::MatchMode match_mode = report::MatchMode::binary;
    std::string before_backend;
    std::string after_backend;

    registry::GateThresholds thresholds;
    /// Declared serving footprint of the candidate model.
    std::int64_t memory_mb = 0;
    /// Suites verified outside this run (e.g. adversarial-robustness).
    std::vector<std::string> external_suites_passed;

    std::filesystem::path registry_root;
    std::optional<std::string> model_id;
    std::string deployment_notes;
    std::optional<std::filesystem::path> kb_root;

    std::int64_t seed = 42;
};

/// Relative paths in the document resolve against `base_dir`.
PipelineConfig pipeline_config_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

struct PipelineResult {
    std::filesystem::path output_root;
    std::filesystem::path final_dataset;
    std::filesystem::path comparison_csv;
    registry::GateResult gate;
    std::string model_id;
    int registered_version = 0;
    double before_accuracy = 0;
    double after_accuracy = 0;
};

/// preprocess -> distill -> enhance -> evaluate -> gate -> register.
/// Progress goes to `log`. A failed gate raises RegistrationRejected.
PipelineResult run_pipeline(const PipelineConfig& cfg, std::ostream& log);

}  // namespace finesec::cli

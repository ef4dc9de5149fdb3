// SPDX-License-Identifier: Apache-2.0
//
// Three-agent distillation: an analysis agent labels a sample and explains
// it, a scenario agent describes a realistic deployment context, and a
// security agent synthesizes a minimal vulnerable snippet from both. Only
// snippets that pass the structural validator enter the dataset.
#pragma once

#include "finesec/common.hpp"
#include "finesec/corpus.hpp"
#include "finesec/llmclient.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace finesec::distill {

enum class Role { analysis, scenario, security };

std::string to_string(Role role);

/// Placeholders a role's templates must reference, and may not exceed.
std::vector<std::string> required_placeholders(Role role);

/// Names of `{{name}}` placeholders in a template, in order, without repeats.
std::vector<std::string> template_placeholders(std::string_view tmpl);

/// Substitutes `{{name}}` placeholders; unknown names are an error.
std::string render(std::string_view tmpl, const std::map<std::string, std::string>& vars);

struct AgentConfig {
    Role role = Role::analysis;
    std::string system_prompt_template;
    std::string user_prompt_template;
    std::string backend_id;
    llm::Decoding decoding;

    void validate() const;
};

/// Reads `<role>.system.txt` and `<role>.user.txt` from a prompts directory.
AgentConfig load_agent_config(const std::filesystem::path& prompts_dir, Role role, std::string backend_id,
                              llm::Decoding decoding = {});

struct AgentSet {
    AgentConfig analysis;
    AgentConfig scenario;
    AgentConfig security;

    void validate() const;
};

AgentSet load_agent_set(const std::filesystem::path& prompts_dir, const std::string& backend_id,
                        llm::Decoding decoding = {});

/// An agent response that does not follow the answer conventions. `reason`
/// is the stable key used in dataset statistics.
class ExtractionError : public Error {
public:
    ExtractionError(std::string reason, const std::string& what) : Error(what), reason_(std::move(reason)) {}
    const std::string& reason() const { return reason_; }

private:
    std::string reason_;
};

struct Analysis {
    std::string rationale;
    std::string label;
};

Analysis parse_analysis_response(std::string_view text);
std::string parse_scenario_response(std::string_view text);
std::string extract_code_block(std::string_view text);

struct TranscriptEntry {
    Role role;
    std::int64_t seq;
    std::int64_t started_us;
    std::int64_t finished_us;
    std::string system_prompt;
    std::string user_prompt;
    std::string response;
};

struct Transcript {
    std::string sample_id;
    std::vector<TranscriptEntry> entries;
};

Analysis run_analysis(const corpus::CodeSample& sample, const AgentConfig& cfg, llm::Client& client,
                      Transcript* transcript = nullptr);
std::string run_scenario(const corpus::CodeSample& sample, const AgentConfig& cfg, llm::Client& client,
                         Transcript* transcript = nullptr);
std::string run_security(const std::string& rationale, const std::string& label, const std::string& scenario,
                         const AgentConfig& cfg, llm::Client& client, Transcript* transcript = nullptr);

struct PsiOptions {
    std::size_t max_lines = 80;
    /// Optional strict mode: a shell command containing "{file}", run against
    /// the snippet written to a temporary file. Non-zero exit fails the check.
    std::optional<std::string> compiler_command;
    std::string source_extension = ".c";
};

struct PsiVerdict {
    bool passed = false;
    std::vector<std::string> reasons;
};

/// Reason keys, in the order checks are reported.
inline constexpr std::string_view kPsiEmpty = "empty";
inline constexpr std::string_view kPsiLexError = "lex-error";
inline constexpr std::string_view kPsiUnbalanced = "unbalanced-delimiters";
inline constexpr std::string_view kPsiNoFunction = "no-function-definition";
inline constexpr std::string_view kPsiTooLong = "exceeds-minimality-cap";
inline constexpr std::string_view kPsiCompileFailed = "compile-failed";

PsiVerdict validate_psi(std::string_view code, const PsiOptions& options = {});

/// Number of function definitions found by the validator's token heuristic.
std::size_t count_function_definitions(std::string_view code);

struct DistilledItem {
    std::string source_sample_id;
    std::string label;
    std::string rationale;
    std::string scenario;
    std::string synth_code;
    PsiVerdict psi;
    std::optional<std::string> transcript_ref;
};

struct DistillStats {
    std::size_t attempted = 0;
    std::size_t passed = 0;
    std::map<std::string, std::size_t> failed_by_reason;
};

struct DistilledDataset {
    std::vector<DistilledItem> items;
    DistillStats stats;
};

struct DistillOptions {
    PsiOptions psi;
    /// Processed-sample log; enables resuming after a backend outage.
    std::optional<std::filesystem::path> checkpoint;
    bool resume = false;
    std::optional<std::filesystem::path> transcript_dir;
    int workers = 1;
};

/// Raised when a backend stays unavailable after retries. Everything
/// processed so far is in the checkpoint.
class DistillAborted : public Error {
public:
    using Error::Error;
};

DistilledDataset distill_corpus(const corpus::Corpus& corpus, const AgentSet& agents, llm::Client& client,
                                const DistillOptions& options = {});

std::string to_jsonl(const DistilledDataset& dataset);
void write_dataset(const DistilledDataset& dataset, const std::filesystem::path& path);
DistilledDataset read_dataset(const std::filesystem::path& path);
DistilledDataset parse_dataset_jsonl(std::string_view text);

}  // namespace finesec::distill

// SPDX-License-Identifier: Apache-2.0
//
// Iterative enhancement controller. Each round trains every active candidate
// on the current dataset version, scores it, and triages it against two loss
// thresholds: accept at or below the low one, keep for another round up to
// the high one, drop above it. The first keep verdict of a round sends the
// dataset to a reviewer, whose revision becomes the next version.
#pragma once

#include "finesec/common.hpp"
#include "finesec/distill.hpp"
#include "finesec/trainer.hpp"

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace finesec::enhance {

struct EnhanceConfig {
    double loss_low = 0.2;
    double loss_high = 0.5;
    /// Accepted and recorded, never consulted.
    std::optional<double> label_loss_threshold;
    int max_iterations = 5;
    double beta = 0.7;
    /// Items listed in a review bundle.
    std::size_t worst_items = 10;

    void validate() const;
};

enum class Verdict { accept, retain, discard };

std::string to_string(Verdict v);

Verdict classify_candidate(double loss, const EnhanceConfig& cfg);

struct DatasetVersion {
    std::filesystem::path path;
    std::string tag;  // "v0", "v1", ...

    bool operator==(const DatasetVersion&) const = default;
};

struct ItemContribution {
    std::size_t index = 0;
    std::string source_sample_id;
    double contribution = 0;
};

struct IterationState {
    int k = 0;
    /// Candidates trained this round, carrying their verdicts and losses.
    std::vector<trainer::ModelCandidate> active_models;
    /// The version the round trained on.
    DatasetVersion dataset_version;
    /// Every candidate accepted up to and including this round.
    std::vector<trainer::ModelCandidate> accepted;
    bool satisfactory_found = false;
    bool dataset_modified_this_iter = false;
    /// Version produced by this round's review, if any.
    std::optional<DatasetVersion> revised_to;
    /// Loss breakdown of the candidate whose keep verdict triggered review.
    std::vector<ItemContribution> review_contributions;
};

nlohmann::ordered_json to_json(const IterationState& s);
IterationState iteration_from_json(const nlohmann::json& j);

struct LossEvaluation {
    double loss = 0;
    /// One entry per dataset item; sums to `loss`.
    std::vector<double> per_item;
};

class LossEvaluator {
public:
    virtual ~LossEvaluator() = default;
    virtual LossEvaluation evaluate(const trainer::ModelCandidate& candidate,
                                    const distill::DistilledDataset& dataset, int k) = 0;
};

/// Replays a loss per candidate id and round. Item contributions are spread
/// evenly.
class ScriptedLossEvaluator final : public LossEvaluator {
public:
    explicit ScriptedLossEvaluator(std::map<std::string, std::vector<double>> losses);
    LossEvaluation evaluate(const trainer::ModelCandidate& candidate, const distill::DistilledDataset& dataset,
                            int k) override;

private:
    std::map<std::string, std::vector<double>> losses_;
};

/// Asks the candidate model for a label and rationale on every item and
/// scores them with the combined loss.
class PredictionLossEvaluator final : public LossEvaluator {
public:
    using Predictor =
        std::function<trainer::Prediction(const trainer::ModelCandidate&, const distill::DistilledItem&)>;

    PredictionLossEvaluator(Predictor predictor, double beta);
    LossEvaluation evaluate(const trainer::ModelCandidate& candidate, const distill::DistilledDataset& dataset,
                            int k) override;

private:
    Predictor predictor_;
    double beta_;
};

struct ReviewRequest {
    int k = 0;
    std::filesystem::path bundle_dir;
    DatasetVersion current;
    /// Where the revised dataset must be written.
    std::filesystem::path next_path;
};

/// The reviewer did not deliver in time. The controller state is saved and
/// the run can be resumed once the sentinel file exists.
class ReviewTimeout : public Error {
public:
    using Error::Error;
};

class Reviewer {
public:
    virtual ~Reviewer() = default;
    /// Writes the revised dataset to request.next_path.
    virtual void revise(const ReviewRequest& request) = 0;
};

/// Non-interactive reviewer. The n-th revision applies the n-th edit; once
/// edits run out the dataset is carried over unchanged. An edit is an object
/// with optional "drop" (source ids), "update" (objects keyed by
/// source_sample_id) and "append" (full items).
class ScriptedReviewer final : public Reviewer {
public:
    explicit ScriptedReviewer(nlohmann::json edits);
    static ScriptedReviewer from_file(const std::filesystem::path& path);
    void revise(const ReviewRequest& request) override;
    std::size_t revisions() const { return applied_; }

private:
    nlohmann::json edits_;
    std::size_t applied_ = 0;
};

/// Human reviewer working on the bundle directory: edit dataset.jsonl in
/// place, then create the DONE file.
class FileReviewer final : public Reviewer {
public:
    FileReviewer(std::chrono::milliseconds timeout, std::chrono::milliseconds poll = std::chrono::milliseconds(200));
    void revise(const ReviewRequest& request) override;

private:
    std::chrono::milliseconds timeout_;
    std::chrono::milliseconds poll_;
};

inline constexpr const char* kReviewSentinel = "DONE";

/// Applies one scripted edit to a dataset.
distill::DistilledDataset apply_edit(const distill::DistilledDataset& dataset, const nlohmann::json& edit);

/// Writes the round's dataset, the `worst_items` largest contributions (descending) and a
/// README into `dest`. Requires a keep verdict in `state`.
std::filesystem::path emit_review_bundle(const IterationState& state, std::size_t worst_items,
                                         const std::filesystem::path& dest);

struct EnhanceOptions {
    /// Holds datasets/, reviews/, history.json and enhance_state.json.
    std::filesystem::path work_dir;
    trainer::TrainJobSpec job_template;
    bool resume = false;
};

struct EnhanceResult {
    std::vector<trainer::ModelCandidate> accepted;
    DatasetVersion final_dataset;
    std::vector<IterationState> history;
};

/// Runs rounds until a candidate is accepted, max_iterations rounds have
/// run, or no candidate is left.
EnhanceResult run_enhancement(const std::vector<trainer::ModelCandidate>& models,
                              const std::filesystem::path& dataset, const EnhanceConfig& cfg,
                              trainer::Trainer& trainer, LossEvaluator& evaluator, Reviewer& reviewer,
                              const EnhanceOptions& options);

nlohmann::ordered_json history_to_json(const std::vector<IterationState>& history);

}  // namespace finesec::enhance

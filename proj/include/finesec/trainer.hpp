// SPDX-License-Identifier: Apache-2.0
//
// Training jobs. The orchestrator never touches model weights: it writes a
// job spec, launches a trainer, and consumes newline-delimited JSON messages
// ("hello", "step", "checkpoint", "done", "error") from its stdout. The
// simulated trainer speaks the same protocol in-process.
#pragma once

#include "finesec/common.hpp"
#include "finesec/distill.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace finesec::trainer {

struct Hyperparams {
    double learning_rate = 5e-4;
    int max_steps = 500;
    int checkpoint_every = 50;
    int batch_size = 4;
    int quant_bits = 8;
    int lora_rank = 8;
    double alpha_kd = 0.5;
    bool mixed_precision = true;
    std::string lr_schedule = "linear_warmup";

    void validate() const;
    bool operator==(const Hyperparams&) const = default;
};

struct TrainJobSpec {
    std::string base_model_id;
    std::filesystem::path dataset_ref;
    Hyperparams hyperparams;
    std::vector<std::string> vocab_extension;
    std::int64_t seed = 42;
    /// Weights to continue from when a candidate is retrained.
    std::optional<std::string> init_artifact_ref;

    void validate() const;
    bool operator==(const TrainJobSpec&) const = default;
};

nlohmann::ordered_json to_json(const TrainJobSpec& spec);
TrainJobSpec spec_from_json(const nlohmann::json& j);

/// Steps at which a checkpoint is due: every multiple of checkpoint_every up
/// to max_steps, plus max_steps itself.
std::vector<int> expected_checkpoints(const Hyperparams& hp);

struct LossRecord {
    std::int64_t step = 0;
    double train_loss = 0;
    double grad_norm = 0;

    bool operator==(const LossRecord&) const = default;
};

enum class CandidateStatus { training, trained, discarded, retained, accepted };

std::string to_string(CandidateStatus s);
std::optional<CandidateStatus> parse_candidate_status(std::string_view s);

struct ModelCandidate {
    std::string id;
    std::string base_model_id;
    std::optional<std::string> artifact_ref;
    CandidateStatus status = CandidateStatus::training;
    std::optional<double> combined_loss;

    /// training -> trained. Clears any previous loss.
    void mark_trained(std::string artifact);
    /// trained -> discarded | retained | accepted, recording the loss.
    void settle(CandidateStatus verdict, double loss);
    /// retained -> training, for another round on a revised dataset.
    void restart();

    bool operator==(const ModelCandidate&) const = default;
};

nlohmann::ordered_json to_json(const ModelCandidate& c);
ModelCandidate candidate_from_json(const nlohmann::json& j);

/// Distillation objective: alpha * CE(student, label) + (1 - alpha) * KL(student || teacher).
/// Returns +inf when alpha > 0 and the student gives the label zero mass.
double kd_loss(const std::vector<double>& student, const std::vector<double>& teacher, std::size_t label,
               double alpha);

/// Token-level F1 over lowercased whitespace-separated tokens (multiset
/// overlap). Two empty texts score 1.
double token_f1(std::string_view predicted, std::string_view reference);

struct Prediction {
    std::string label;  // "CWE-<n>" or "none"
    std::string rationale;
};

/// Per-item terms of the combined loss, each already divided by N.
std::vector<double> combined_loss_terms(const std::vector<Prediction>& outputs,
                                        const distill::DistilledDataset& dataset, double beta);

/// (1/N) * sum(beta * [label wrong] + (1 - beta) * (1 - token_f1)). Zero for
/// an empty dataset.
double combined_loss(const std::vector<Prediction>& outputs, const distill::DistilledDataset& dataset,
                     double beta = 0.7);

/// Lowercased terms with all whitespace removed, deduplicated and sorted.
std::vector<std::string> build_vocab_extension(const std::vector<std::string>& terms);

// ---------------------------------------------------------------------------
// Wire protocol

enum class MessageType { hello, step, checkpoint, done, error };

std::string to_string(MessageType t);

struct Message {
    MessageType type = MessageType::hello;
    LossRecord record;            // step
    std::int64_t step = 0;        // checkpoint
    std::string path;             // checkpoint
    std::string artifact_ref;     // done
    std::string text;             // error
    nlohmann::json payload;       // the whole object as received
};

std::string encode(const Message& m);

/// A line that is not a protocol message. The offending line is attached.
class ProtocolError : public Error {
public:
    ProtocolError(const std::string& what, std::string raw) : Error(what), raw_(std::move(raw)) {}
    const std::string& raw_payload() const { return raw_; }

private:
    std::string raw_;
};

/// The trainer reported failure through an "error" message or exit status.
class TrainingFailed : public Error {
public:
    using Error::Error;
};

Message parse_message(std::string_view line);

/// Enforces message ordering and checkpoint cadence for one job stream.
class ProtocolValidator {
public:
    explicit ProtocolValidator(Hyperparams hp);

    /// Throws ProtocolError on any violation.
    void accept(const Message& m, std::string_view raw);
    /// Called at end of stream; throws if the stream ended early.
    void finish();

    bool terminated() const { return terminated_; }
    const std::vector<LossRecord>& records() const { return records_; }
    const std::vector<std::int64_t>& checkpoints() const { return checkpoints_; }
    const std::optional<std::string>& artifact_ref() const { return artifact_; }
    const std::optional<std::string>& error_text() const { return error_; }

private:
    Hyperparams hp_;
    std::vector<int> due_;
    bool seen_hello_ = false;
    bool terminated_ = false;
    std::vector<LossRecord> records_;
    std::vector<std::int64_t> checkpoints_;
    std::optional<std::string> artifact_;
    std::optional<std::string> error_;
};

struct TranscriptCheck {
    bool ok = false;
    std::string problem;  // empty when ok
    std::vector<LossRecord> records;
    std::vector<std::int64_t> checkpoints;
    std::optional<std::string> artifact_ref;
    /// Set when the stream ended with a well-formed "error" message.
    std::optional<std::string> error_text;
};

/// Validates a captured adapter transcript against the spec it ran with.
TranscriptCheck validate_transcript(std::string_view text, const Hyperparams& hp);

// ---------------------------------------------------------------------------
// Jobs

/// Produces protocol lines; nullopt at end of stream.
class LineSource {
public:
    virtual ~LineSource() = default;
    virtual std::optional<std::string> next_line() = 0;
    /// Called once the stream has ended; may throw TrainingFailed.
    virtual void close() {}
};

/// One running job. Move-only; a single reader consumes its records.
class JobHandle {
public:
    JobHandle(ModelCandidate candidate, Hyperparams hp, std::unique_ptr<LineSource> source);
    JobHandle(JobHandle&&) noexcept;
    JobHandle& operator=(JobHandle&&) noexcept;
    ~JobHandle();

    /// Next loss record, or nullopt once the job has finished.
    std::optional<LossRecord> next();
    /// Drains the stream and returns the candidate with status trained.
    ModelCandidate wait();

    const std::vector<LossRecord>& records() const { return validator_.records(); }
    const std::vector<std::int64_t>& checkpoints() const { return validator_.checkpoints(); }

private:
    ModelCandidate candidate_;
    ProtocolValidator validator_;
    std::unique_ptr<LineSource> source_;
    bool finished_ = false;
};

class Trainer {
public:
    virtual ~Trainer() = default;
    virtual JobHandle launch(const TrainJobSpec& spec, const std::string& candidate_id) = 0;
};

/// In-process stand-in. Emits one step record per checkpoint: either a
/// scripted loss trajectory (one value per checkpoint) or a seeded synthetic
/// decay curve.
class SimulatedTrainer final : public Trainer {
public:
    SimulatedTrainer() = default;
    /// Scripts keyed by candidate id; a retrained candidate replays the same one.
    explicit SimulatedTrainer(std::map<std::string, std::vector<double>> scripts);

    JobHandle launch(const TrainJobSpec& spec, const std::string& candidate_id) override;

    /// The protocol lines a launch would emit.
    std::vector<std::string> transcript(const TrainJobSpec& spec, const std::string& candidate_id) const;

private:
    std::map<std::string, std::vector<double>> scripts_;
};

/// Runs `<argv...> --spec <file>` and reads the protocol from its stdout.
/// stderr passes through to ours.
class ExternalTrainer final : public Trainer {
public:
    ExternalTrainer(std::vector<std::string> argv, std::filesystem::path work_dir);

    JobHandle launch(const TrainJobSpec& spec, const std::string& candidate_id) override;

private:
    std::vector<std::string> argv_;
    std::filesystem::path work_dir_;
};

}  // namespace finesec::trainer

// SPDX-License-Identifier: Apache-2.0
#include "finesec/trainer.hpp"

#include "finesec/subprocess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

namespace finesec::trainer {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

void Hyperparams::validate() const {
    if (!std::isfinite(learning_rate) || learning_rate <= 0) throw ConfigError("learning_rate must be positive");
    if (max_steps < 1) throw ConfigError("max_steps must be at least 1");
    if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be at least 1");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (quant_bits < 1) throw ConfigError("quant_bits must be at least 1");
    if (lora_rank < 1) throw ConfigError("lora_rank must be at least 1");
    if (!(alpha_kd >= 0 && alpha_kd <= 1)) throw ConfigError("alpha_kd must lie in [0, 1]");
    if (lr_schedule != "linear_warmup") throw ConfigError("unsupported lr_schedule '" + lr_schedule + "'");
}

void TrainJobSpec::validate() const {
    if (base_model_id.empty()) throw ConfigError("base_model_id is empty");
    if (dataset_ref.empty()) throw ConfigError("dataset_ref is empty");
    hyperparams.validate();
}

ordered_json to_json(const TrainJobSpec& spec) {
    const auto& hp = spec.hyperparams;
    ordered_json j;
    j["base_model_id"] = spec.base_model_id;
    j["dataset_ref"] = spec.dataset_ref.string();
    j["hyperparams"] = {
        {"learning_rate", hp.learning_rate}, {"max_steps", hp.max_steps},
        {"checkpoint_every", hp.checkpoint_every}, {"batch_size", hp.batch_size},
        {"quant_bits", hp.quant_bits}, {"lora_rank", hp.lora_rank},
        {"alpha_kd", hp.alpha_kd}, {"mixed_precision", hp.mixed_precision},
        {"lr_schedule", hp.lr_schedule},
    };
    j["vocab_extension"] = spec.vocab_extension;
    j["seed"] = spec.seed;
    if (spec.init_artifact_ref) j["init_artifact_ref"] = *spec.init_artifact_ref;
    return j;
}

TrainJobSpec spec_from_json(const json& j) {
    try {
        TrainJobSpec spec;
        spec.base_model_id = j.at("base_model_id").get<std::string>();
        spec.dataset_ref = j.at("dataset_ref").get<std::string>();
        Hyperparams defaults;
        const auto& h = j.contains("hyperparams") ? j.at("hyperparams") : json::object();
        auto& hp = spec.hyperparams;
        hp.learning_rate = h.value("learning_rate", defaults.learning_rate);
        hp.max_steps = h.value("max_steps", defaults.max_steps);
        hp.checkpoint_every = h.value("checkpoint_every", defaults.checkpoint_every);
        hp.batch_size = h.value("batch_size", defaults.batch_size);
        hp.quant_bits = h.value("quant_bits", defaults.quant_bits);
        hp.lora_rank = h.value("lora_rank", defaults.lora_rank);
        hp.alpha_kd = h.value("alpha_kd", defaults.alpha_kd);
        hp.mixed_precision = h.value("mixed_precision", defaults.mixed_precision);
        hp.lr_schedule = h.value("lr_schedule", defaults.lr_schedule);
        spec.vocab_extension = j.value("vocab_extension", std::vector<std::string>{});
        spec.seed = j.value("seed", spec.seed);
        if (j.contains("init_artifact_ref")) spec.init_artifact_ref = j.at("init_artifact_ref").get<std::string>();
        spec.validate();
        return spec;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid train job spec: ") + e.what());
    }
}

std::vector<int> expected_checkpoints(const Hyperparams& hp) {
    std::vector<int> due;
    for (int s = hp.checkpoint_every; s <= hp.max_steps; s += hp.checkpoint_every) due.push_back(s);
    if (due.empty() || due.back() != hp.max_steps) due.push_back(hp.max_steps);
    return due;
}

// ---------------------------------------------------------------------------
// Candidates

std::string to_string(CandidateStatus s) {
    switch (s) {
    case CandidateStatus::training: return "training";
    case CandidateStatus::trained: return "trained";
    case CandidateStatus::discarded: return "discarded";
    case CandidateStatus::retained: return "retained";
    case CandidateStatus::accepted: return "accepted";
    }
    return "training";
}

std::optional<CandidateStatus> parse_candidate_status(std::string_view s) {
    for (auto st : {CandidateStatus::training, CandidateStatus::trained, CandidateStatus::discarded,
                    CandidateStatus::retained, CandidateStatus::accepted}) {
        if (to_string(st) == s) return st;
    }
    return std::nullopt;
}

void ModelCandidate::mark_trained(std::string artifact) {
    if (status != CandidateStatus::training)
        throw ConfigError("candidate " + id + " cannot become trained from " + to_string(status));
    status = CandidateStatus::trained;
    artifact_ref = std::move(artifact);
    combined_loss.reset();
}

void ModelCandidate::settle(CandidateStatus verdict, double loss) {
    if (status != CandidateStatus::trained)
        throw ConfigError("candidate " + id + " cannot be judged from " + to_string(status));
    if (verdict != CandidateStatus::discarded && verdict != CandidateStatus::retained &&
        verdict != CandidateStatus::accepted)
        throw ConfigError("not a verdict: " + to_string(verdict));
    status = verdict;
    combined_loss = loss;
}

void ModelCandidate::restart() {
    if (status != CandidateStatus::retained)
        throw ConfigError("only retained candidates are retrained; " + id + " is " + to_string(status));
    status = CandidateStatus::training;
    combined_loss.reset();
}

ordered_json to_json(const ModelCandidate& c) {
    ordered_json j;
    j["id"] = c.id;
    j["base_model_id"] = c.base_model_id;
    j["artifact_ref"] = c.artifact_ref ? ordered_json(*c.artifact_ref) : ordered_json(nullptr);
    j["status"] = to_string(c.status);
    j["combined_loss"] = c.combined_loss ? ordered_json(*c.combined_loss) : ordered_json(nullptr);
    return j;
}

ModelCandidate candidate_from_json(const json& j) {
    ModelCandidate c;
    c.id = j.at("id").get<std::string>();
    c.base_model_id = j.at("base_model_id").get<std::string>();
    if (j.contains("artifact_ref") && !j.at("artifact_ref").is_null())
        c.artifact_ref = j.at("artifact_ref").get<std::string>();
    auto st = parse_candidate_status(j.at("status").get<std::string>());
    if (!st) throw ParseError("unknown candidate status in " + j.dump());
    c.status = *st;
    if (j.contains("combined_loss") && !j.at("combined_loss").is_null())
        c.combined_loss = j.at("combined_loss").get<double>();
    return c;
}

// ---------------------------------------------------------------------------
// Losses

namespace {

void check_distribution(const std::vector<double>& p, const char* name) {
    double sum = 0;
    for (double v : p) {
        if (!std::isfinite(v) || v < 0) throw ConfigError(std::string(name) + " has a negative or non-finite entry");
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError(std::string(name) + " does not sum to 1");
}

std::vector<std::string> lower_tokens(std::string_view text) {
    std::istringstream in{to_lower(text)};
    std::vector<std::string> out;
    for (std::string tok; in >> tok;) out.push_back(std::move(tok));
    return out;
}

}  // namespace

double kd_loss(const std::vector<double>& student, const std::vector<double>& teacher, std::size_t label,
               double alpha) {
    if (student.empty() || student.size() != teacher.size())
        throw ConfigError("student and teacher distributions must be non-empty and of equal length");
    if (!(alpha >= 0 && alpha <= 1)) throw ConfigError("alpha must lie in [0, 1]");
    if (label >= student.size()) throw ConfigError("label index out of range");
    check_distribution(student, "student distribution");
    check_distribution(teacher, "teacher distribution");

    double ce = 0;
    if (alpha > 0) {
        if (student[label] == 0) return std::numeric_limits<double>::infinity();
        ce = -std::log(student[label]);
    }
    double kl = 0;
    if (1 - alpha > 0) {
        for (std::size_t i = 0; i < student.size(); ++i) {
            if (student[i] == 0) continue;
            if (teacher[i] == 0) throw ConfigError("KL divergence undefined: teacher has zero mass where student does not");
            kl += student[i] * std::log(student[i] / teacher[i]);
        }
        kl = std::max(kl, 0.0);  // rounding can leave a tiny negative for equal inputs
    }
    return alpha * ce + (1 - alpha) * kl;
}

double token_f1(std::string_view predicted, std::string_view reference) {
    const auto p = lower_tokens(predicted);
    const auto r = lower_tokens(reference);
    if (p.empty() && r.empty()) return 1.0;
    if (p.empty() || r.empty()) return 0.0;
    std::unordered_map<std::string, int> counts;
    for (const auto& t : r) ++counts[t];
    std::size_t overlap = 0;
    for (const auto& t : p) {
        auto it = counts.find(t);
        if (it != counts.end() && it->second > 0) {
            --it->second;
            ++overlap;
        }
    }
    if (overlap == 0) return 0.0;
    const double precision = static_cast<double>(overlap) / static_cast<double>(p.size());
    const double recall = static_cast<double>(overlap) / static_cast<double>(r.size());
    return 2 * precision * recall / (precision + recall);
}

std::vector<double> combined_loss_terms(const std::vector<Prediction>& outputs,
                                        const distill::DistilledDataset& dataset, double beta) {
    if (outputs.size() != dataset.items.size())
        throw ConfigError("got " + std::to_string(outputs.size()) + " predictions for " +
                          std::to_string(dataset.items.size()) + " dataset items");
    if (!(beta >= 0 && beta <= 1)) throw ConfigError("beta must lie in [0, 1]");
    const double n = static_cast<double>(outputs.size());
    std::vector<double> terms;
    terms.reserve(outputs.size());
    for (std::size_t i = 0; i < outputs.size(); ++i) {
        const auto& item = dataset.items[i];
        const auto predicted = canonical_cwe(outputs[i].label).value_or(outputs[i].label);
        const double wrong = predicted == item.label ? 0.0 : 1.0;
        const double f1 = token_f1(outputs[i].rationale, item.rationale);
        terms.push_back((beta * wrong + (1 - beta) * (1 - f1)) / n);
    }
    return terms;
}

double combined_loss(const std::vector<Prediction>& outputs, const distill::DistilledDataset& dataset, double beta) {
    const auto terms = combined_loss_terms(outputs, dataset, beta);
    const double sum = std::accumulate(terms.begin(), terms.end(), 0.0);
    return std::clamp(sum, 0.0, 1.0);
}

std::vector<std::string> build_vocab_extension(const std::vector<std::string>& terms) {
    std::set<std::string> out;
    for (const auto& t : terms) {
        std::string s;
        for (unsigned char c : t) {
            if (!std::isspace(c)) s.push_back(static_cast<char>(std::tolower(c)));
        }
        if (!s.empty()) out.insert(std::move(s));
    }
    return {out.begin(), out.end()};
}

// ---------------------------------------------------------------------------
// Protocol

std::string to_string(MessageType t) {
    switch (t) {
    case MessageType::hello: return "hello";
    case MessageType::step: return "step";
    case MessageType::checkpoint: return "checkpoint";
    case MessageType::done: return "done";
    case MessageType::error: return "error";
    }
    return "hello";
}

std::string encode(const Message& m) {
    ordered_json j;
    j["type"] = to_string(m.type);
    switch (m.type) {
    case MessageType::hello:
        if (m.payload.is_object()) {
            for (auto& [k, v] : m.payload.items())
                if (k != "type") j[k] = v;
        }
        break;
    case MessageType::step:
        j["step"] = m.record.step;
        j["train_loss"] = m.record.train_loss;
        j["grad_norm"] = m.record.grad_norm;
        break;
    case MessageType::checkpoint:
        j["step"] = m.step;
        j["path"] = m.path;
        break;
    case MessageType::done: j["artifact_ref"] = m.artifact_ref; break;
    case MessageType::error: j["message"] = m.text; break;
    }
    return j.dump();
}

namespace {

std::int64_t int_field(const json& j, const char* key, const std::string& raw) {
    auto it = j.find(key);
    if (it == j.end() || !it->is_number_integer())
        throw ProtocolError(std::string("field '") + key + "' must be an integer", raw);
    return it->get<std::int64_t>();
}

double nonneg_field(const json& j, const char* key, const std::string& raw) {
    auto it = j.find(key);
    if (it == j.end() || !it->is_number()) throw ProtocolError(std::string("field '") + key + "' must be a number", raw);
    const double v = it->get<double>();
    if (!std::isfinite(v) || v < 0) throw ProtocolError(std::string("field '") + key + "' must be non-negative", raw);
    return v;
}

std::string string_field(const json& j, const char* key, const std::string& raw) {
    auto it = j.find(key);
    if (it == j.end() || !it->is_string()) throw ProtocolError(std::string("field '") + key + "' must be a string", raw);
    return it->get<std::string>();
}

}  // namespace

Message parse_message(std::string_view line) {
    const std::string raw(line);
    json j;
    try {
        j = json::parse(raw);
    } catch (const json::exception&) {
        throw ProtocolError("not valid JSON", raw);
    }
    if (!j.is_object()) throw ProtocolError("message is not a JSON object", raw);
    auto type = j.find("type");
    if (type == j.end() || !type->is_string()) throw ProtocolError("message has no string 'type'", raw);
    const auto t = type->get<std::string>();

    Message m;
    m.payload = j;
    if (t == "hello") {
        m.type = MessageType::hello;
    } else if (t == "step") {
        m.type = MessageType::step;
        m.record.step = int_field(j, "step", raw);
        m.record.train_loss = nonneg_field(j, "train_loss", raw);
        m.record.grad_norm = nonneg_field(j, "grad_norm", raw);
    } else if (t == "checkpoint") {
        m.type = MessageType::checkpoint;
        m.step = int_field(j, "step", raw);
        m.path = string_field(j, "path", raw);
    } else if (t == "done") {
        m.type = MessageType::done;
        m.artifact_ref = string_field(j, "artifact_ref", raw);
        if (m.artifact_ref.empty()) throw ProtocolError("empty artifact_ref", raw);
    } else if (t == "error") {
        m.type = MessageType::error;
        m.text = string_field(j, "message", raw);
    } else {
        throw ProtocolError("unknown message type '" + t + "'", raw);
    }
    return m;
}

ProtocolValidator::ProtocolValidator(Hyperparams hp) : hp_(std::move(hp)), due_(expected_checkpoints(hp_)) {}

void ProtocolValidator::accept(const Message& m, std::string_view raw_view) {
    const std::string raw(raw_view);
    if (terminated_) throw ProtocolError("message after end of stream", raw);
    if (!seen_hello_) {
        if (m.type != MessageType::hello) throw ProtocolError("first message must be hello", raw);
        seen_hello_ = true;
        return;
    }
    switch (m.type) {
    case MessageType::hello: throw ProtocolError("duplicate hello", raw);
    case MessageType::step: {
        const auto s = m.record.step;
        if (s < 1 || s > hp_.max_steps)
            throw ProtocolError("step " + std::to_string(s) + " outside 1.." + std::to_string(hp_.max_steps), raw);
        if (!records_.empty() && s <= records_.back().step)
            throw ProtocolError("step " + std::to_string(s) + " does not increase on " +
                                    std::to_string(records_.back().step),
                                raw);
        records_.push_back(m.record);
        return;
    }
    case MessageType::checkpoint: {
        const auto idx = checkpoints_.size();
        if (idx >= due_.size()) throw ProtocolError("unexpected checkpoint at step " + std::to_string(m.step), raw);
        if (m.step != due_[idx])
            throw ProtocolError("checkpoint at step " + std::to_string(m.step) + ", expected step " +
                                    std::to_string(due_[idx]),
                                raw);
        checkpoints_.push_back(m.step);
        return;
    }
    case MessageType::done:
        if (checkpoints_.size() != due_.size())
            throw ProtocolError("done before checkpoint at step " + std::to_string(due_[checkpoints_.size()]), raw);
        artifact_ = m.artifact_ref;
        terminated_ = true;
        return;
    case MessageType::error:
        error_ = m.text;
        terminated_ = true;
        return;
    }
}

void ProtocolValidator::finish() {
    if (!terminated_) throw ProtocolError("stream ended before done or error", "");
}

TranscriptCheck validate_transcript(std::string_view text, const Hyperparams& hp) {
    TranscriptCheck out;
    ProtocolValidator v(hp);
    try {
        for (const auto& line : split_lines(text)) {
            if (trim(line).empty()) continue;
            v.accept(parse_message(line), line);
        }
        v.finish();
        out.ok = true;
    } catch (const ProtocolError& e) {
        out.problem = e.what();
        if (!e.raw_payload().empty()) out.problem += ": " + e.raw_payload();
    }
    out.records = v.records();
    out.checkpoints = v.checkpoints();
    out.artifact_ref = v.artifact_ref();
    out.error_text = v.error_text();
    return out;
}

// ---------------------------------------------------------------------------
// Jobs

JobHandle::JobHandle(ModelCandidate candidate, Hyperparams hp, std::unique_ptr<LineSource> source)
    : candidate_(std::move(candidate)), validator_(std::move(hp)), source_(std::move(source)) {}
JobHandle::JobHandle(JobHandle&&) noexcept = default;
JobHandle& JobHandle::operator=(JobHandle&&) noexcept = default;
JobHandle::~JobHandle() = default;

std::optional<LossRecord> JobHandle::next() {
    while (!finished_) {
        auto line = source_->next_line();
        if (!line) {
            finished_ = true;
            if (!validator_.terminated()) {
                std::string detail;
                try {
                    source_->close();
                } catch (const TrainingFailed& e) {
                    detail = std::string(" (") + e.what() + ")";
                }
                throw ProtocolError("trainer stream ended before done" + detail, "");
            }
            if (validator_.error_text()) {
                try {
                    source_->close();
                } catch (const TrainingFailed&) {
                    // the error message is the better diagnostic
                }
                throw TrainingFailed("trainer reported error: " + *validator_.error_text());
            }
            source_->close();
            return std::nullopt;
        }
        if (trim(*line).empty()) continue;
        const auto m = parse_message(*line);
        validator_.accept(m, *line);
        if (m.type == MessageType::step) return m.record;
    }
    return std::nullopt;
}

ModelCandidate JobHandle::wait() {
    while (next()) {
    }
    candidate_.mark_trained(*validator_.artifact_ref());
    return candidate_;
}

namespace {

class VectorSource final : public LineSource {
public:
    explicit VectorSource(std::vector<std::string> lines) : lines_(std::move(lines)) {}
    std::optional<std::string> next_line() override {
        if (pos_ >= lines_.size()) return std::nullopt;
        return lines_[pos_++];
    }

private:
    std::vector<std::string> lines_;
    std::size_t pos_ = 0;
};

class ProcessSource final : public LineSource {
public:
    explicit ProcessSource(Subprocess proc) : proc_(std::move(proc)) {}
    std::optional<std::string> next_line() override { return proc_.read_line(); }
    void close() override {
        const int rc = proc_.wait();
        if (rc != 0) throw TrainingFailed("trainer exited with status " + std::to_string(rc));
    }

private:
    Subprocess proc_;
};

// Deterministic value in [0, 1) from arbitrary text.
double unit_hash(const std::string& text) {
    const auto h = sha256_hex(text);
    return static_cast<double>(std::stoull(h.substr(0, 13), nullptr, 16)) / static_cast<double>(1ULL << 52);
}

void require_dataset(const TrainJobSpec& spec) {
    std::error_code ec;
    if (!fs::is_regular_file(spec.dataset_ref, ec))
        throw IoError("dataset_ref is not a readable file: " + spec.dataset_ref.string());
}

ModelCandidate fresh_candidate(const TrainJobSpec& spec, const std::string& id) {
    ModelCandidate c;
    c.id = id;
    c.base_model_id = spec.base_model_id;
    c.status = CandidateStatus::training;
    return c;
}

}  // namespace

SimulatedTrainer::SimulatedTrainer(std::map<std::string, std::vector<double>> scripts) : scripts_(std::move(scripts)) {}

std::vector<std::string> SimulatedTrainer::transcript(const TrainJobSpec& spec, const std::string& candidate_id) const {
    spec.validate();
    const auto due = expected_checkpoints(spec.hyperparams);
    // Keyed on dataset content, not location, so a run is reproducible in
    // another output directory.
    auto spec_json = to_json(spec);
    std::error_code ec;
    if (fs::is_regular_file(spec.dataset_ref, ec)) spec_json["dataset_ref"] = "sha256:" + sha256_hex(read_file(spec.dataset_ref));
    const std::string spec_text = spec_json.dump();

    std::vector<double> losses;
    if (auto it = scripts_.find(candidate_id); it != scripts_.end()) {
        losses = it->second;
        if (losses.size() != due.size())
            throw ConfigError("loss script for " + candidate_id + " has " + std::to_string(losses.size()) +
                              " values but the job has " + std::to_string(due.size()) + " checkpoints");
    } else {
        const double max = spec.hyperparams.max_steps;
        for (int step : due) {
            const double noise = unit_hash(spec_text + '\0' + candidate_id + '\0' + std::to_string(step));
            losses.push_back(2.5 * std::exp(-3.0 * step / max) + 0.05 * noise);
        }
    }

    std::vector<std::string> lines;
    Message hello;
    hello.payload = {{"trainer", "simulated"}, {"protocol", 1}};
    lines.push_back(encode(hello));
    for (std::size_t i = 0; i < due.size(); ++i) {
        Message step;
        step.type = MessageType::step;
        step.record.step = due[i];
        step.record.train_loss = losses[i];
        const double noise = unit_hash(spec_text + "\ngrad\n" + candidate_id + "\n" + std::to_string(due[i]));
        step.record.grad_norm = 1.5 * std::exp(-2.0 * due[i] / spec.hyperparams.max_steps) + 0.1 * noise;
        lines.push_back(encode(step));

        Message cp;
        cp.type = MessageType::checkpoint;
        cp.step = due[i];
        cp.path = "sim://" + candidate_id + "/checkpoint-" + std::to_string(due[i]);
        lines.push_back(encode(cp));
    }
    std::string script_text;
    for (double l : losses) script_text += std::to_string(l) + ',';
    Message done;
    done.type = MessageType::done;
    done.artifact_ref = "sim://" + spec.base_model_id + "/" + candidate_id + "@" +
                        sha256_hex(spec_text + '\0' + candidate_id + '\0' + script_text).substr(0, 12);
    lines.push_back(encode(done));
    return lines;
}

JobHandle SimulatedTrainer::launch(const TrainJobSpec& spec, const std::string& candidate_id) {
    require_dataset(spec);
    return JobHandle(fresh_candidate(spec, candidate_id), spec.hyperparams,
                     std::make_unique<VectorSource>(transcript(spec, candidate_id)));
}

ExternalTrainer::ExternalTrainer(std::vector<std::string> argv, fs::path work_dir)
    : argv_(std::move(argv)), work_dir_(std::move(work_dir)) {
    if (argv_.empty()) throw ConfigError("external trainer command is empty");
}

JobHandle ExternalTrainer::launch(const TrainJobSpec& spec, const std::string& candidate_id) {
    spec.validate();
    require_dataset(spec);
    fs::create_directories(work_dir_);
    std::string stem;
    for (unsigned char c : candidate_id) stem.push_back(std::isalnum(c) || c == '-' || c == '.' ? c : '_');
    const auto spec_path = work_dir_ / (stem + ".spec.json");
    write_file_atomic(spec_path, to_json(spec).dump(2) + "\n");

    auto argv = argv_;
    argv.push_back("--spec");
    argv.push_back(spec_path.string());
    return JobHandle(fresh_candidate(spec, candidate_id), spec.hyperparams,
                     std::make_unique<ProcessSource>(Subprocess::spawn(argv)));
}

}  // namespace finesec::trainer

// SPDX-License-Identifier: Apache-2.0
#include "finesec/enhance.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <thread>

namespace finesec::enhance {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;
using trainer::CandidateStatus;
using trainer::ModelCandidate;

void EnhanceConfig::validate() const {
    if (!std::isfinite(loss_low) || !std::isfinite(loss_high) || loss_low < 0)
        throw ConfigError("loss thresholds must be finite and non-negative");
    if (!(loss_low < loss_high)) throw ConfigError("loss_low must be below loss_high");
    if (max_iterations < 1) throw ConfigError("max_iterations must be at least 1");
    if (!(beta >= 0 && beta <= 1)) throw ConfigError("beta must lie in [0, 1]");
}

std::string to_string(Verdict v) {
    switch (v) {
    case Verdict::accept: return "accept";
    case Verdict::retain: return "retain";
    case Verdict::discard: return "discard";
    }
    return "discard";
}

Verdict classify_candidate(double loss, const EnhanceConfig& cfg) {
    if (!std::isfinite(loss) || loss < 0) throw ConfigError("loss must be finite and non-negative");
    if (loss <= cfg.loss_low) return Verdict::accept;
    if (loss <= cfg.loss_high) return Verdict::retain;
    return Verdict::discard;
}

namespace {

ordered_json version_json(const DatasetVersion& v) { return {{"path", v.path.string()}, {"tag", v.tag}}; }

DatasetVersion version_from_json(const json& j) {
    return DatasetVersion{j.at("path").get<std::string>(), j.at("tag").get<std::string>()};
}

ordered_json candidates_json(const std::vector<ModelCandidate>& cs) {
    auto arr = ordered_json::array();
    for (const auto& c : cs) arr.push_back(trainer::to_json(c));
    return arr;
}

std::vector<ModelCandidate> candidates_from_json(const json& j) {
    std::vector<ModelCandidate> out;
    for (const auto& c : j) out.push_back(trainer::candidate_from_json(c));
    return out;
}

distill::DistilledDataset load(const fs::path& p) { return distill::parse_dataset_jsonl(read_file(p)); }

void check_purity(const distill::DistilledDataset& ds, const std::string& who) {
    for (const auto& item : ds.items) {
        if (!is_canonical_cwe(item.label))
            throw ConfigError(who + ": item " + item.source_sample_id + " has label '" + item.label +
                              "', expected CWE-<n>");
        const auto v = distill::validate_psi(item.synth_code);
        if (!v.passed)
            throw ConfigError(who + ": item " + item.source_sample_id + " fails snippet validation (" +
                              v.reasons.front() + ")");
    }
}

}  // namespace

ordered_json to_json(const IterationState& s) {
    ordered_json j;
    j["k"] = s.k;
    j["dataset_version"] = version_json(s.dataset_version);
    j["active_models"] = candidates_json(s.active_models);
    j["accepted"] = candidates_json(s.accepted);
    j["satisfactory_found"] = s.satisfactory_found;
    j["dataset_modified_this_iter"] = s.dataset_modified_this_iter;
    j["revised_to"] = s.revised_to ? version_json(*s.revised_to) : ordered_json(nullptr);
    return j;
}

IterationState iteration_from_json(const json& j) {
    IterationState s;
    s.k = j.at("k").get<int>();
    s.dataset_version = version_from_json(j.at("dataset_version"));
    s.active_models = candidates_from_json(j.at("active_models"));
    s.accepted = candidates_from_json(j.at("accepted"));
    s.satisfactory_found = j.at("satisfactory_found").get<bool>();
    s.dataset_modified_this_iter = j.at("dataset_modified_this_iter").get<bool>();
    if (!j.at("revised_to").is_null()) s.revised_to = version_from_json(j.at("revised_to"));
    return s;
}

ordered_json history_to_json(const std::vector<IterationState>& history) {
    auto arr = ordered_json::array();
    for (const auto& s : history) arr.push_back(to_json(s));
    return arr;
}

// ---------------------------------------------------------------------------
// Evaluators

ScriptedLossEvaluator::ScriptedLossEvaluator(std::map<std::string, std::vector<double>> losses)
    : losses_(std::move(losses)) {}

LossEvaluation ScriptedLossEvaluator::evaluate(const ModelCandidate& candidate,
                                               const distill::DistilledDataset& dataset, int k) {
    auto it = losses_.find(candidate.id);
    if (it == losses_.end()) throw ConfigError("no scripted losses for candidate " + candidate.id);
    if (k < 0 || static_cast<std::size_t>(k) >= it->second.size())
        throw ConfigError("scripted losses for " + candidate.id + " end before round " + std::to_string(k));
    LossEvaluation out;
    out.loss = it->second[static_cast<std::size_t>(k)];
    const auto n = dataset.items.size();
    out.per_item.assign(n, n ? out.loss / static_cast<double>(n) : 0.0);
    return out;
}

PredictionLossEvaluator::PredictionLossEvaluator(Predictor predictor, double beta)
    : predictor_(std::move(predictor)), beta_(beta) {
    if (!predictor_) throw ConfigError("prediction evaluator needs a predictor");
}

LossEvaluation PredictionLossEvaluator::evaluate(const ModelCandidate& candidate,
                                                 const distill::DistilledDataset& dataset, int) {
    std::vector<trainer::Prediction> outputs;
    outputs.reserve(dataset.items.size());
    for (const auto& item : dataset.items) outputs.push_back(predictor_(candidate, item));
    LossEvaluation out;
    out.per_item = trainer::combined_loss_terms(outputs, dataset, beta_);
    out.loss = trainer::combined_loss(outputs, dataset, beta_);
    return out;
}

// ---------------------------------------------------------------------------
// Reviewers

namespace {

distill::DistilledDataset apply_edit_impl(const distill::DistilledDataset& dataset, const json& edit) {
    if (!edit.is_object()) throw ConfigError("a review edit must be a JSON object");
    for (auto& [key, _] : edit.items()) {
        if (key != "drop" && key != "update" && key != "append")
            throw ConfigError("unknown review edit operation '" + key + "'");
    }
    auto out = dataset;
    auto find = [&](const std::string& id) {
        auto it = std::find_if(out.items.begin(), out.items.end(),
                               [&](const distill::DistilledItem& i) { return i.source_sample_id == id; });
        if (it == out.items.end()) throw ConfigError("review edit names unknown item " + id);
        return it;
    };
    if (auto d = edit.find("drop"); d != edit.end()) {
        for (const auto& id : *d) out.items.erase(find(id.get<std::string>()));
    }
    if (auto u = edit.find("update"); u != edit.end()) {
        for (const auto& upd : *u) {
            auto it = find(upd.at("source_sample_id").get<std::string>());
            if (upd.contains("label")) {
                auto c = canonical_cwe(upd.at("label").get<std::string>());
                if (!c) throw ConfigError("review edit sets malformed label " + upd.at("label").dump());
                it->label = *c;
            }
            if (upd.contains("rationale")) it->rationale = upd.at("rationale").get<std::string>();
            if (upd.contains("scenario")) it->scenario = upd.at("scenario").get<std::string>();
            if (upd.contains("synth_code")) it->synth_code = upd.at("synth_code").get<std::string>();
        }
    }
    if (auto a = edit.find("append"); a != edit.end()) {
        for (const auto& j : *a) {
            distill::DistilledItem item;
            item.source_sample_id = j.at("source_sample_id").get<std::string>();
            auto c = canonical_cwe(j.at("label").get<std::string>());
            if (!c) throw ConfigError("appended item has malformed label " + j.at("label").dump());
            item.label = *c;
            item.rationale = j.at("rationale").get<std::string>();
            item.scenario = j.at("scenario").get<std::string>();
            item.synth_code = j.at("synth_code").get<std::string>();
            item.psi = distill::validate_psi(item.synth_code);
            out.items.push_back(std::move(item));
        }
    }
    check_purity(out, "review edit");
    for (auto& item : out.items) item.psi.passed = true;
    out.stats.attempted = out.stats.passed = out.items.size();
    out.stats.failed_by_reason.clear();
    return out;
}

}  // namespace

distill::DistilledDataset apply_edit(const distill::DistilledDataset& dataset, const json& edit) {
    if (edit.is_null()) return dataset;
    try {
        return apply_edit_impl(dataset, edit);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed review edit: ") + e.what());
    }
}

ScriptedReviewer::ScriptedReviewer(json edits) : edits_(std::move(edits)) {
    if (edits_.is_null()) edits_ = json::array();
    if (!edits_.is_array()) throw ConfigError("scripted review edits must be a JSON array");
}

ScriptedReviewer ScriptedReviewer::from_file(const fs::path& path) {
    try {
        return ScriptedReviewer(json::parse(read_file(path)));
    } catch (const json::parse_error& e) {
        throw ConfigError("cannot parse review edits " + path.string() + ": " + e.what());
    }
}

void ScriptedReviewer::revise(const ReviewRequest& request) {
    const json edit = applied_ < edits_.size() ? edits_[applied_] : json(nullptr);
    const auto revised = apply_edit(load(request.current.path), edit);
    write_file_atomic(request.next_path, distill::to_jsonl(revised));
    ++applied_;
}

FileReviewer::FileReviewer(std::chrono::milliseconds timeout, std::chrono::milliseconds poll)
    : timeout_(timeout), poll_(poll) {}

void FileReviewer::revise(const ReviewRequest& request) {
    const auto sentinel = request.bundle_dir / kReviewSentinel;
    const auto deadline = std::chrono::steady_clock::now() + timeout_;
    std::error_code ec;
    while (!fs::exists(sentinel, ec)) {
        if (std::chrono::steady_clock::now() >= deadline)
            throw ReviewTimeout("no review sign-off: create " + sentinel.string() +
                                " after editing dataset.jsonl, then rerun with --resume");
        std::this_thread::sleep_for(poll_);
    }
    const auto revised = load(request.bundle_dir / "dataset.jsonl");
    check_purity(revised, "reviewed dataset");
    write_file_atomic(request.next_path, distill::to_jsonl(revised));
}

fs::path emit_review_bundle(const IterationState& state, std::size_t worst_items, const fs::path& dest) {
    const bool retained = std::any_of(state.active_models.begin(), state.active_models.end(),
                                      [](const ModelCandidate& c) { return c.status == CandidateStatus::retained; });
    if (!retained) throw ConfigError("review bundle requested for round " + std::to_string(state.k) +
                                     " without a retained candidate");
    std::error_code ec;
    fs::create_directories(dest, ec);
    if (ec) throw IoError("cannot create review bundle " + dest.string() + ": " + ec.message());

    write_file_atomic(dest / "dataset.jsonl", read_file(state.dataset_version.path));

    auto sorted = state.review_contributions;
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const ItemContribution& a, const ItemContribution& b) { return a.contribution > b.contribution; });
    sorted.resize(std::min(worst_items, sorted.size()));
    auto arr = ordered_json::array();
    for (std::size_t r = 0; r < sorted.size(); ++r) {
        arr.push_back({{"rank", r + 1},
                       {"index", sorted[r].index},
                       {"source_sample_id", sorted[r].source_sample_id},
                       {"contribution", sorted[r].contribution}});
    }
    write_file_atomic(dest / "contributions.json", arr.dump(2) + "\n");

    std::string readme = "# Dataset review, round " + std::to_string(state.k) + "\n\n";
    readme += "A candidate finished this round with a loss between the two thresholds.\n";
    readme += "Revise `dataset.jsonl` in this directory, one item per line, keeping the keys\n";
    readme += "source_sample_id, label, rationale, scenario, synth_code and psi_passed.\n\n";
    readme += "`contributions.json` lists the items that added most to the loss, worst first.\n";
    readme += "Fix wrong labels, tighten rationales, or drop items that cannot be repaired.\n";
    readme += "Every remaining snippet must still pass the snippet validator.\n\n";
    readme += "When finished, create an empty file named `" + std::string(kReviewSentinel) + "` here.\n";
    write_file_atomic(dest / "README.md", readme);
    return dest;
}

// ---------------------------------------------------------------------------
// Controller

namespace {

struct Pending {
    IterationState state;
    ReviewRequest request;
    std::vector<ModelCandidate> next_active;
};

struct Controller {
    const EnhanceConfig& cfg;
    trainer::Trainer& trainer;
    LossEvaluator& evaluator;
    Reviewer& reviewer;
    const EnhanceOptions& options;

    int k = 0;
    int revisions = 0;
    std::vector<ModelCandidate> active{};
    std::vector<ModelCandidate> accepted{};
    DatasetVersion dataset{};
    std::vector<IterationState> history{};
    std::optional<Pending> pending{};
    bool done = false;

    fs::path state_path() const { return options.work_dir / "enhance_state.json"; }

    void save() const {
        ordered_json j;
        j["k"] = k;
        j["revisions"] = revisions;
        j["active"] = candidates_json(active);
        j["accepted"] = candidates_json(accepted);
        j["dataset"] = version_json(dataset);
        j["history"] = history_to_json(history);
        if (pending) {
            j["pending_review"] = {
                {"iteration", to_json(pending->state)},
                {"bundle_dir", pending->request.bundle_dir.string()},
                {"next_path", pending->request.next_path.string()},
                {"next_active", candidates_json(pending->next_active)},
            };
        } else {
            j["pending_review"] = nullptr;
        }
        j["done"] = done;
        write_file_atomic(state_path(), j.dump(2) + "\n");
    }

    void load_state() {
        const auto j = json::parse(read_file(state_path()));
        k = j.at("k").get<int>();
        revisions = j.at("revisions").get<int>();
        active = candidates_from_json(j.at("active"));
        accepted = candidates_from_json(j.at("accepted"));
        dataset = version_from_json(j.at("dataset"));
        for (const auto& h : j.at("history")) history.push_back(iteration_from_json(h));
        if (const auto& p = j.at("pending_review"); !p.is_null()) {
            Pending pend;
            pend.state = iteration_from_json(p.at("iteration"));
            pend.request.k = pend.state.k;
            pend.request.bundle_dir = p.at("bundle_dir").get<std::string>();
            pend.request.current = pend.state.dataset_version;
            pend.request.next_path = p.at("next_path").get<std::string>();
            pend.next_active = candidates_from_json(p.at("next_active"));
            pending = std::move(pend);
        }
        done = j.at("done").get<bool>();
    }

    fs::path version_path(int n) const { return options.work_dir / "datasets" / ("D" + std::to_string(n) + ".jsonl"); }

    // Completes a round whose review request is outstanding.
    void finish_review() {
        auto& p = *pending;
        reviewer.revise(p.request);
        std::error_code ec;
        if (!fs::is_regular_file(p.request.next_path, ec))
            throw ConfigError("reviewer did not write " + p.request.next_path.string());
        check_purity(load(p.request.next_path), "revised dataset");
        ++revisions;
        DatasetVersion next{p.request.next_path, "v" + std::to_string(revisions)};
        p.state.dataset_modified_this_iter = true;
        p.state.revised_to = next;
        dataset = next;
        close_round(std::move(p.state), std::move(p.next_active));
        pending.reset();
    }

    void close_round(IterationState state, std::vector<ModelCandidate> next_active) {
        const bool stop = state.satisfactory_found || state.k + 1 >= cfg.max_iterations || next_active.empty();
        history.push_back(std::move(state));
        for (auto& c : next_active) c.restart();
        active = std::move(next_active);
        if (stop) {
            done = true;
        } else {
            ++k;
        }
        save();
    }

    void round() {
        const auto ds = load(dataset.path);
        IterationState state;
        state.k = k;
        state.dataset_version = dataset;

        std::vector<trainer::JobHandle> jobs;
        for (const auto& cand : active) {
            auto spec = options.job_template;
            spec.base_model_id = cand.base_model_id;
            spec.dataset_ref = dataset.path;
            spec.init_artifact_ref = cand.artifact_ref;
            jobs.push_back(trainer.launch(spec, cand.id));
        }

        std::vector<ModelCandidate> next_active;
        std::optional<std::vector<double>> review_terms;
        for (auto& job : jobs) {
            auto cand = job.wait();
            const auto eval = evaluator.evaluate(cand, ds, k);
            const auto verdict = classify_candidate(eval.loss, cfg);
            switch (verdict) {
            case Verdict::accept:
                cand.settle(CandidateStatus::accepted, eval.loss);
                accepted.push_back(cand);
                state.satisfactory_found = true;
                break;
            case Verdict::retain:
                cand.settle(CandidateStatus::retained, eval.loss);
                next_active.push_back(cand);
                if (!review_terms) review_terms = eval.per_item;
                break;
            case Verdict::discard: cand.settle(CandidateStatus::discarded, eval.loss); break;
            }
            state.active_models.push_back(cand);
        }
        state.accepted = accepted;

        if (!review_terms) {
            close_round(std::move(state), std::move(next_active));
            return;
        }
        for (std::size_t i = 0; i < ds.items.size(); ++i) {
            const double c = i < review_terms->size() ? (*review_terms)[i] : 0.0;
            state.review_contributions.push_back({i, ds.items[i].source_sample_id, c});
        }
        Pending p;
        p.request.k = k;
        p.request.bundle_dir =
            emit_review_bundle(state, cfg.worst_items, options.work_dir / "reviews" / ("round-" + std::to_string(k)));
        p.request.current = dataset;
        p.request.next_path = version_path(revisions + 1);
        p.state = std::move(state);
        p.next_active = std::move(next_active);
        pending = std::move(p);
        save();
        finish_review();
    }
};

}  // namespace

EnhanceResult run_enhancement(const std::vector<ModelCandidate>& models, const fs::path& dataset,
                              const EnhanceConfig& cfg, trainer::Trainer& trainer, LossEvaluator& evaluator,
                              Reviewer& reviewer, const EnhanceOptions& options) {
    cfg.validate();
    Controller c{cfg, trainer, evaluator, reviewer, options};
    std::error_code ec;
    if (options.resume && fs::exists(c.state_path(), ec)) {
        c.load_state();
        if (c.pending) c.finish_review();
    } else {
        if (models.empty()) throw ConfigError("enhancement needs at least one candidate model");
        std::set<std::string> ids;
        for (const auto& m : models) {
            if (m.status != CandidateStatus::training)
                throw ConfigError("candidate " + m.id + " must start in status training");
            if (!ids.insert(m.id).second) throw ConfigError("duplicate candidate id " + m.id);
        }
        if (!fs::is_regular_file(dataset, ec)) throw IoError("dataset is not a readable file: " + dataset.string());
        fs::create_directories(options.work_dir / "datasets");
        const auto d0 = c.version_path(0);
        const auto initial = load(dataset);
        write_file_atomic(d0, distill::to_jsonl(initial));
        c.dataset = {d0, "v0"};
        c.active = models;
        c.save();
    }
    while (!c.done) c.round();

    write_file_atomic(options.work_dir / "history.json", history_to_json(c.history).dump(2) + "\n");
    return EnhanceResult{c.accepted, c.dataset, c.history};
}

}  // namespace finesec::enhance

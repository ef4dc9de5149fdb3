// SPDX-License-Identifier: Apache-2.0
#include "traces.hpp"

#include "support.hpp"

#include <set>
#include <sstream>

namespace fstest {

using finesec::enhance::IterationState;
using nlohmann::json;

std::vector<TraceCase> hand_traced_cases() {
    std::vector<TraceCase> cases;

    TraceCase a;
    a.name = "accept-first-round";
    a.models = {"m1", "m2"};
    a.losses = {{"m1", {0.1}}, {"m2", {0.9}}};
    a.expected_rounds = {"k=0 on=v0 m1=accepted@0.1 m2=discarded@0.9 sat=1 mod=0 accepted=m1"};
    a.expected_final_items = 4;
    a.expected_accepted = {"m1"};
    cases.push_back(a);

    TraceCase b;
    b.name = "keep-twice-then-accept";
    b.models = {"m1"};
    b.losses = {{"m1", {0.45, 0.3, 0.15}}};
    b.edits = json::parse(R"([{"drop": ["s4"]},
                              {"update": [{"source_sample_id": "s1", "rationale": "revised after review"}]}])");
    b.expected_rounds = {
        "k=0 on=v0 m1=retained@0.45 sat=0 mod=1 next=v1 accepted=-",
        "k=1 on=v1 m1=retained@0.3 sat=0 mod=1 next=v2 accepted=-",
        "k=2 on=v2 m1=accepted@0.15 sat=1 mod=0 accepted=m1",
    };
    b.expected_revisions = 2;
    b.expected_final_items = 3;
    b.expected_accepted = {"m1"};
    cases.push_back(b);

    TraceCase c;
    c.name = "all-dropped";
    c.models = {"m1", "m2"};
    c.losses = {{"m1", {0.7}}, {"m2", {0.51}}};
    c.expected_rounds = {"k=0 on=v0 m1=discarded@0.7 m2=discarded@0.51 sat=0 mod=0 accepted=-"};
    c.expected_final_items = 4;
    cases.push_back(c);

    TraceCase d;
    d.name = "round-limit";
    d.max_iterations = 3;
    d.models = {"m1", "m2"};
    d.losses = {{"m1", {0.4, 0.35, 0.3}}, {"m2", {0.45, 0.6}}};
    d.edits = json::parse(R"([{"append": [{"source_sample_id": "s5", "label": "CWE-476",
        "rationale": "pointer used without a check", "scenario": "config parser",
        "synth_code": "int get(struct node *n)\n{\n    return n->v;\n}\n"}]}])");
    d.expected_rounds = {
        "k=0 on=v0 m1=retained@0.4 m2=retained@0.45 sat=0 mod=1 next=v1 accepted=-",
        "k=1 on=v1 m1=retained@0.35 m2=discarded@0.6 sat=0 mod=1 next=v2 accepted=-",
        "k=2 on=v2 m1=retained@0.3 sat=0 mod=1 next=v3 accepted=-",
    };
    d.expected_revisions = 3;
    d.expected_final_items = 5;
    cases.push_back(d);

    return cases;
}

std::string describe_round(const IterationState& s) {
    std::ostringstream out;
    out << "k=" << s.k << " on=" << s.dataset_version.tag;
    for (const auto& m : s.active_models) {
        out << ' ' << m.id << '=' << finesec::trainer::to_string(m.status) << '@';
        if (m.combined_loss) out << *m.combined_loss;
        else out << "none";
    }
    out << " sat=" << (s.satisfactory_found ? 1 : 0) << " mod=" << (s.dataset_modified_this_iter ? 1 : 0);
    if (s.revised_to) out << " next=" << s.revised_to->tag;
    out << " accepted=";
    if (s.accepted.empty()) out << '-';
    for (std::size_t i = 0; i < s.accepted.size(); ++i) out << (i ? "," : "") << s.accepted[i].id;
    return out.str();
}

finesec::distill::DistilledDataset trace_dataset() {
    finesec::distill::DistilledDataset ds;
    for (const char* id : {"s1", "s2", "s3", "s4"}) ds.items.push_back(valid_item(id));
    ds.stats.attempted = ds.stats.passed = ds.items.size();
    return ds;
}

TraceOutcome run_trace(const TraceCase& c, const std::filesystem::path& work_dir) {
    namespace fs = std::filesystem;
    using namespace finesec;
    fs::create_directories(work_dir);
    const auto dataset = work_dir / "dataset.jsonl";
    distill::write_dataset(trace_dataset(), dataset);

    std::vector<trainer::ModelCandidate> models;
    std::map<std::string, std::vector<double>> trajectories;
    for (const auto& id : c.models) {
        trainer::ModelCandidate m;
        m.id = id;
        m.base_model_id = "base";
        models.push_back(m);
        trajectories[id] = {1.2, 0.8};
    }
    enhance::EnhanceConfig cfg;
    cfg.loss_low = 0.2;
    cfg.loss_high = 0.5;
    cfg.max_iterations = c.max_iterations;
    trainer::SimulatedTrainer sim(trajectories);
    enhance::ScriptedLossEvaluator evaluator(c.losses);
    enhance::ScriptedReviewer reviewer(c.edits);
    enhance::EnhanceOptions opt;
    opt.work_dir = work_dir / "enhance";
    opt.job_template.base_model_id = "base";
    opt.job_template.hyperparams.max_steps = 100;
    opt.job_template.hyperparams.checkpoint_every = 50;

    TraceOutcome out;
    out.result = enhance::run_enhancement(models, dataset, cfg, sim, evaluator, reviewer, opt);
    for (const auto& s : out.result.history) out.rounds.push_back(describe_round(s));
    out.final_items = distill::read_dataset(out.result.final_dataset.path).items.size();

    std::size_t keep_rounds = 0, version_changes = 0;
    std::set<std::string> tags;
    for (std::size_t i = 0; i < out.result.history.size(); ++i) {
        const auto& s = out.result.history[i];
        bool kept = false;
        for (const auto& m : s.active_models) kept = kept || m.status == trainer::CandidateStatus::retained;
        keep_rounds += kept;
        if (s.revised_to) {
            ++out.revisions;
            if (s.revised_to->tag != s.dataset_version.tag) ++version_changes;
        }
        if (i + 1 < out.result.history.size()) {
            const auto& next_on = out.result.history[i + 1].dataset_version;
            const auto expected_on = s.revised_to ? *s.revised_to : s.dataset_version;
            if (!(next_on == expected_on)) out.mismatch += "round " + std::to_string(i + 1) + " trained on an unexpected version; ";
        }
    }
    out.parity_holds = keep_rounds == version_changes;

    std::ostringstream why;
    if (out.rounds != c.expected_rounds) {
        why << "rounds differ:";
        for (const auto& r : out.rounds) why << "\n  got      " << r;
        for (const auto& r : c.expected_rounds) why << "\n  expected " << r;
        why << '\n';
    }
    if (out.revisions != c.expected_revisions)
        why << "revisions " << out.revisions << " != " << c.expected_revisions << '\n';
    if (out.final_items != c.expected_final_items)
        why << "final items " << out.final_items << " != " << c.expected_final_items << '\n';
    std::vector<std::string> accepted;
    for (const auto& m : out.result.accepted) accepted.push_back(m.id);
    if (accepted != c.expected_accepted) why << "accepted set differs\n";
    out.mismatch += why.str();
    return out;
}

}  // namespace fstest

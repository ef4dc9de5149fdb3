// SPDX-License-Identifier: Apache-2.0
#include "finesec/cli.hpp"

#include "finesec/evalx.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <iostream>
#include <set>
#include <sstream>
#include <unistd.h>

namespace finesec::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr const char* kVersion = "0.1.0";

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

fs::path resolve(const fs::path& base, const fs::path& p) {
    if (p.empty() || p.is_absolute()) return p;
    return (base / p).lexically_normal();
}

std::vector<std::string> split_command(const std::string& cmd) {
    std::istringstream in(cmd);
    std::vector<std::string> out;
    for (std::string word; in >> word;) out.push_back(word);
    return out;
}

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
    std::string out;
    for (const auto& p : parts) out += (out.empty() ? "" : sep) + p;
    return out;
}

std::string fmt_double(double v, int precision = 4) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(precision);
    os << v;
    return os.str();
}

// ---------------------------------------------------------------------------
// Run manifest

class RunManifest {
public:
    std::string command;
    std::vector<std::string> args;
    std::optional<std::int64_t> seed;
    std::optional<fs::path> path;

    RunManifest() : started_(now_iso8601()) {}

    void input(const fs::path& p) { inputs_[p.string()] = digest(p); }
    void output(const fs::path& p) { outputs_[p.string()] = digest(p); }

    void write(int exit_code, const std::string& error) const {
        ordered_json j;
        j["tool"] = "finesec";
        j["version"] = kVersion;
        j["command"] = command;
        j["argv"] = args;
        j["seed"] = seed ? ordered_json(*seed) : ordered_json(nullptr);
        j["started_at"] = started_;
        j["finished_at"] = now_iso8601();
        j["exit_code"] = exit_code;
        j["status"] = exit_code == kExitOk ? "ok" : exit_code == kExitUsage ? "usage-error" : "domain-error";
        j["error"] = error.empty() ? ordered_json(nullptr) : ordered_json(error);
        j["inputs"] = inputs_;
        // Output digests are taken at the end so they describe what was left behind.
        ordered_json outs = ordered_json::object();
        for (const auto& [p, _] : outputs_.items()) outs[p] = digest(p);
        j["outputs"] = outs;

        fs::path target;
        if (path) {
            target = *path;
        } else {
            const char* dir = std::getenv("FINESEC_RUN_DIR");
            target = fs::path(dir && *dir ? dir : ".finesec/runs") /
                     ((command.empty() ? std::string("finesec") : command) + "-" +
                      std::to_string(now_epoch_seconds()) + "-" + std::to_string(::getpid()) + ".json");
        }
        try {
            if (target.has_parent_path()) fs::create_directories(target.parent_path());
            write_file_atomic(target, j.dump(2) + "\n");
        } catch (const std::exception& e) {
            std::cerr << "finesec: warning: cannot write run manifest " << target << ": " << e.what() << "\n";
        }
    }

private:
    static ordered_json digest(const fs::path& p) {
        std::error_code ec;
        if (fs::is_regular_file(p, ec)) {
            try {
                return sha256_hex(read_file(p));
            } catch (const std::exception&) {
                return nullptr;
            }
        }
        return nullptr;
    }

    std::string started_;
    ordered_json inputs_ = ordered_json::object();
    ordered_json outputs_ = ordered_json::object();
};

// ---------------------------------------------------------------------------
// Shared context

struct Globals {
    std::string config;
    bool verbose = false;
    std::optional<std::int64_t> seed;
    std::string manifest;
};

struct Context {
    std::ostream& out;
    std::ostream& err;
    Globals g;
    json config = json::object();
    fs::path config_dir = fs::current_path();
    RunManifest manifest;

    void log(const std::string& msg) const {
        if (g.verbose) err << "finesec: " << msg << "\n";
    }
    json section(const std::string& name) const {
        auto it = config.find(name);
        return it != config.end() && it->is_object() ? *it : json::object();
    }
};

/// Options whose config-file values are paths relative to the config file.
using PathOptions = std::set<const CLI::Option*>;

CLI::Option* path_opt(CLI::App* app, PathOptions& paths, const std::string& name, std::string& var,
                      const std::string& desc) {
    auto* o = app->add_option(name, var, desc);
    paths.insert(o);
    return o;
}

void require(CLI::App* app, std::initializer_list<const char*> names) {
    for (const char* n : names) {
        auto* o = app->get_option(n);
        if (o->count() == 0) throw UsageError(std::string(n) + " is required");
    }
}

// Fills options not given on the command line from a config section.
void apply_config(CLI::App* app, const json& section, const fs::path& base, const PathOptions& paths) {
    if (!section.is_object()) return;
    for (auto* opt : app->get_options()) {
        if (opt->count() > 0 || opt->get_lnames().empty()) continue;
        const auto& name = opt->get_single_name();
        if (name == "help") continue;
        auto underscored = name;
        std::replace(underscored.begin(), underscored.end(), '-', '_');
        auto it = section.find(name);
        if (it == section.end()) it = section.find(underscored);
        if (it == section.end() || it->is_null()) continue;

        auto as_text = [&](const json& v) -> std::string {
            if (v.is_string()) {
                auto s = v.get<std::string>();
                return paths.count(opt) ? resolve(base, s).string() : s;
            }
            if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
            if (v.is_object()) return v.dump();
            return v.dump();
        };
        if (it->is_array()) {
            for (const auto& v : *it) opt->add_result(as_text(v));
        } else {
            opt->add_result(as_text(*it));
        }
        opt->run_callback();
    }
}

// ---------------------------------------------------------------------------
// Backends

void register_named_backend(llm::Client& client, const std::vector<BackendSpec>& configured, const std::string& id,
                            const std::string& fixtures, const std::string& endpoint, const std::string& model) {
    if (client.has_backend(id)) return;
    for (const auto& b : configured) {
        if (b.id == id) {
            client.register_backend(b.id, b.kind, b.settings);
            return;
        }
    }
    if (!fixtures.empty()) {
        client.register_backend(id, llm::BackendKind::mock, {{"fixtures", fixtures}});
    } else if (!endpoint.empty()) {
        llm::Settings s{{"endpoint", endpoint}};
        if (!model.empty()) s["model"] = model;
        client.register_backend(id, llm::BackendKind::http_openai_compatible, s);
    } else {
        throw ConfigError("backend '" + id + "' is not configured; pass --fixtures or --endpoint, or define it "
                          "under \"backends\" in the config file");
    }
}

llm::Decoding decoding_for(const Globals& g) {
    llm::Decoding d;
    if (g.seed) d.seed = *g.seed;
    return d;
}

// ---------------------------------------------------------------------------
// Built-in invariant suites

/// Every item re-validates and carries a canonical label.
std::vector<std::string> dataset_purity_problems(const distill::DistilledDataset& ds, const distill::PsiOptions& psi) {
    std::vector<std::string> problems;
    for (std::size_t i = 0; i < ds.items.size(); ++i) {
        const auto& it = ds.items[i];
        const auto tag = "item " + std::to_string(i) + " (" + it.source_sample_id + ")";
        if (!is_canonical_cwe(it.label)) problems.push_back(tag + ": label '" + it.label + "' is not CWE-<n>");
        if (trim(it.rationale).empty()) problems.push_back(tag + ": empty rationale");
        if (trim(it.scenario).empty()) problems.push_back(tag + ": empty scenario");
        auto v = distill::validate_psi(it.synth_code, psi);
        if (!v.passed) problems.push_back(tag + ": fails validation (" + join(v.reasons, ", ") + ")");
    }
    return problems;
}

std::vector<std::string> report_parse_problems(const corpus::Corpus& truth, const std::vector<std::string>& outputs) {
    std::vector<std::string> problems;
    for (std::size_t i = 0; i < outputs.size() && i < truth.samples.size(); ++i) {
        try {
            (void)report::parse_report(outputs[i], truth.samples[i].provenance.original_id);
        } catch (const ParseError& e) {
            problems.push_back(truth.samples[i].id + ": " + e.what());
        }
    }
    return problems;
}

void write_text(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    write_file_atomic(p, text);
}

std::map<std::string, std::vector<double>> parse_loss_map(const json& j, const std::string& what) {
    std::map<std::string, std::vector<double>> out;
    if (!j.is_object()) throw ConfigError(what + " must be an object of candidate id -> list of numbers");
    for (auto& [k, v] : j.items()) {
        if (!v.is_array()) throw ConfigError(what + "." + k + " must be a list of numbers");
        for (const auto& x : v) {
            if (!x.is_number()) throw ConfigError(what + "." + k + " must be a list of numbers");
            out[k].push_back(x.get<double>());
        }
    }
    return out;
}

std::map<std::string, std::vector<double>> loss_map_from_arg(const std::string& arg, const std::string& what) {
    const auto t = trim(arg);
    if (!t.empty() && t.front() == '{') return parse_loss_map(json::parse(t), what);
    return parse_loss_map(json::parse(read_file(t)), what);
}

std::unique_ptr<enhance::Reviewer> make_reviewer(const std::string& mode, std::int64_t timeout_s,
                                                 const fs::path& base) {
    if (mode == "interactive")
        return std::make_unique<enhance::FileReviewer>(std::chrono::seconds(timeout_s));
    const std::string prefix = "scripted:";
    if (mode.rfind(prefix, 0) == 0) {
        const auto path = resolve(base, mode.substr(prefix.size()));
        return std::make_unique<enhance::ScriptedReviewer>(enhance::ScriptedReviewer::from_file(path));
    }
    throw ConfigError("review mode must be 'interactive' or 'scripted:<edits.json>', got '" + mode + "'");
}

/// Scores candidates by asking a served model for a report on every item.
std::unique_ptr<enhance::LossEvaluator> make_prediction_evaluator(llm::Client& client,
                                                                  const evalx::DetectorConfig& det, double beta) {
    auto predictor = [&client, det](const trainer::ModelCandidate&, const distill::DistilledItem& item) {
        llm::CompletionRequest req;
        req.system_prompt = distill::render(det.system_prompt_template, {{"code", item.synth_code}});
        req.user_prompt = distill::render(det.user_prompt_template, {{"code", item.synth_code}});
        req.decoding = det.decoding;
        req.backend_id = det.backend_id;
        const auto text = client.complete(req).text;
        trainer::Prediction p{"none", ""};
        try {
            auto r = report::parse_report(text);
            if (!r.detections.empty()) {
                p.label = r.detections.front().cwe;
                p.rationale = join(r.detections.front().rationales, " ");
            }
        } catch (const ParseError&) {
        }
        return p;
    };
    return std::make_unique<enhance::PredictionLossEvaluator>(predictor, beta);
}

std::string outcome_summary(const evalx::ConfusionCounts& c) {
    std::ostringstream os;
    os << "tp=" << c.tp << " fp=" << c.fp << " fn=" << c.fn << " tn=" << c.tn;
    return os.str();
}

// ---------------------------------------------------------------------------
// Subcommands

struct PreprocessArgs {
    std::string in, out, format = "jsonl", name;
    std::size_t max_bytes = 32765, min_lines = 3;
};

int exec_preprocess(Context& ctx, const PreprocessArgs& a) {
    corpus::InputFormat fmt;
    if (a.format == "jsonl") fmt = corpus::InputFormat::jsonl;
    else if (a.format == "dir" || a.format == "directory") fmt = corpus::InputFormat::directory_of_files;
    else throw UsageError("--format must be jsonl or dir");
    ctx.manifest.input(a.in);
    auto c = corpus::ingest(a.in, fmt);
    if (!a.name.empty()) c.name = a.name;
    corpus::PreprocessConfig pc;
    pc.max_bytes = a.max_bytes;
    pc.min_lines = a.min_lines;
    pc.validate();
    const auto before = c.samples.size();
    auto r = corpus::preprocess(c, pc);
    const fs::path out = a.out;
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    corpus::write_jsonl(r, out);
    corpus::write_manifest(r, out.string() + ".manifest.json");
    ctx.manifest.output(out);
    ctx.manifest.output(out.string() + ".manifest.json");
    for (const auto& s : r.manifest.preprocessing_log)
        ctx.out << s.step << ": kept " << s.kept << ", removed " << s.removed << ", modified " << s.modified << "\n";
    ctx.out << "wrote " << r.samples.size() << " of " << before << " samples to " << out.string() << "\n";
    return kExitOk;
}

struct BackendArgs {
    std::string fixtures, endpoint, model;
};

void add_backend_flags(CLI::App* sub, BackendArgs& b, PathOptions& paths) {
    path_opt(sub, paths, "--fixtures", b.fixtures, "Mock fixture directory for the backend");
    sub->add_option("--endpoint", b.endpoint, "OpenAI-compatible base URL for the backend");
    sub->add_option("--model", b.model, "Remote model name");
}

struct DistillArgs {
    std::string corpus, prompts, backend, out, compiler, transcripts;
    bool resume = false;
    int workers = 1;
    std::size_t max_lines = 80;
    BackendArgs b;
};

int exec_distill(Context& ctx, const DistillArgs& a) {
    llm::Client client;
    register_named_backend(client, parse_backends(ctx.config.value("backends", json::object()), ctx.config_dir),
                           a.backend, a.b.fixtures, a.b.endpoint, a.b.model);
    ctx.manifest.input(a.corpus);
    auto c = corpus::ingest(a.corpus, corpus::InputFormat::jsonl);
    auto agents = distill::load_agent_set(a.prompts, a.backend, decoding_for(ctx.g));
    distill::DistillOptions o;
    o.psi.max_lines = a.max_lines;
    if (!a.compiler.empty()) o.psi.compiler_command = a.compiler;
    const fs::path out = a.out;
    o.checkpoint = fs::path(out.string() + ".checkpoint.jsonl");
    o.resume = a.resume;
    if (!a.transcripts.empty()) o.transcript_dir = fs::path(a.transcripts);
    o.workers = a.workers;
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    distill::DistilledDataset ds;
    try {
        ds = distill::distill_corpus(c, agents, client, o);
    } catch (const distill::DistillAborted& e) {
        throw distill::DistillAborted(std::string(e.what()) + " (progress saved; rerun with --resume)");
    }
    distill::write_dataset(ds, out);
    ctx.manifest.output(out);
    ctx.manifest.output(out.string() + ".stats.json");
    ctx.out << "attempted " << ds.stats.attempted << ", passed " << ds.stats.passed << "\n";
    for (const auto& [reason, n] : ds.stats.failed_by_reason) ctx.out << "  failed " << reason << ": " << n << "\n";
    ctx.out << "wrote " << ds.items.size() << " items to " << out.string() << "\n";
    return kExitOk;
}

struct TrainArgs {
    std::string spec, trainer = "simulated", adapter, candidate = "candidate-0", out, validate_transcript;
    std::vector<double> script;
};

int exec_train(Context& ctx, const TrainArgs& a) {
    ctx.manifest.input(a.spec);
    auto spec = trainer::spec_from_json(json::parse(read_file(a.spec)));
    if (ctx.g.seed) spec.seed = *ctx.g.seed;

    if (!a.validate_transcript.empty()) {
        ctx.manifest.input(a.validate_transcript);
        const auto check = trainer::validate_transcript(read_file(a.validate_transcript), spec.hyperparams);
        ctx.out << "records: " << check.records.size() << ", checkpoints: " << check.checkpoints.size() << "\n";
        if (check.artifact_ref) ctx.out << "artifact: " << *check.artifact_ref << "\n";
        if (check.error_text) ctx.out << "trainer reported error: " << *check.error_text << "\n";
        if (!check.ok) {
            ctx.err << "finesec: transcript does not conform: " << check.problem << "\n";
            return kExitDomain;
        }
        ctx.out << "transcript conforms to the protocol\n";
        return kExitOk;
    }

    const fs::path out = a.out.empty() ? fs::path("train-" + a.candidate) : fs::path(a.out);
    fs::create_directories(out);
    std::unique_ptr<trainer::Trainer> t;
    if (a.trainer == "simulated") {
        std::map<std::string, std::vector<double>> scripts;
        if (!a.script.empty()) scripts[a.candidate] = a.script;
        t = std::make_unique<trainer::SimulatedTrainer>(scripts);
    } else if (a.trainer == "external") {
        if (a.adapter.empty()) throw UsageError("--adapter is required with --trainer external");
        t = std::make_unique<trainer::ExternalTrainer>(split_command(a.adapter), out);
    } else {
        throw UsageError("--trainer must be simulated or external");
    }
    auto job = t->launch(spec, a.candidate);
    std::string losses;
    while (auto r = job.next()) {
        ordered_json j = {{"step", r->step}, {"train_loss", r->train_loss}, {"grad_norm", r->grad_norm}};
        losses += j.dump() + "\n";
        ctx.out << "step " << r->step << " loss " << fmt_double(r->train_loss) << " grad_norm "
                << fmt_double(r->grad_norm) << "\n";
    }
    auto cand = job.wait();
    write_file_atomic(out / "losses.jsonl", losses);
    write_file_atomic(out / "candidate.json", trainer::to_json(cand).dump(2) + "\n");
    ctx.manifest.output(out / "losses.jsonl");
    ctx.manifest.output(out / "candidate.json");
    ctx.out << "trained " << cand.id << " -> " << cand.artifact_ref.value_or("") << "\n";
    return kExitOk;
}

struct EnhanceArgs {
    std::vector<std::string> models;
    std::string dataset, trainer = "simulated", adapter, review_mode = "interactive", losses, trainer_scripts,
                             eval_backend, prompts, work = "enhance-work", spec, base_model = "base";
    double ll = 0.2, lh = 0.5, beta = 0.7;
    int kmax = 5;
    std::size_t worst_items = 10;
    std::int64_t review_timeout_s = 3600;
    bool resume = false;
    BackendArgs b;
};

int exec_enhance(Context& ctx, const EnhanceArgs& a) {
    enhance::EnhanceConfig cfg;
    cfg.loss_low = a.ll;
    cfg.loss_high = a.lh;
    cfg.max_iterations = a.kmax;
    cfg.beta = a.beta;
    cfg.worst_items = a.worst_items;
    cfg.validate();
    if (a.models.empty()) throw UsageError("--models is required");

    trainer::TrainJobSpec job;
    if (!a.spec.empty()) {
        ctx.manifest.input(a.spec);
        job = trainer::spec_from_json(json::parse(read_file(a.spec)));
    }
    if (ctx.g.seed) job.seed = *ctx.g.seed;
    std::vector<trainer::ModelCandidate> cands;
    for (const auto& id : a.models) {
        trainer::ModelCandidate c;
        c.id = id;
        c.base_model_id = a.spec.empty() ? a.base_model : job.base_model_id;
        cands.push_back(c);
    }

    std::map<std::string, std::vector<double>> scripts;
    if (!a.trainer_scripts.empty()) scripts = loss_map_from_arg(a.trainer_scripts, "trainer scripts");
    const fs::path work = a.work;
    std::unique_ptr<trainer::Trainer> t;
    if (a.trainer == "simulated") t = std::make_unique<trainer::SimulatedTrainer>(scripts);
    else if (a.trainer == "external") {
        if (a.adapter.empty()) throw UsageError("--adapter is required with --trainer external");
        t = std::make_unique<trainer::ExternalTrainer>(split_command(a.adapter), work / "jobs");
    } else {
        throw UsageError("--trainer must be simulated or external");
    }

    llm::Client client;
    std::unique_ptr<enhance::LossEvaluator> evaluator;
    if (!a.losses.empty()) {
        evaluator = std::make_unique<enhance::ScriptedLossEvaluator>(loss_map_from_arg(a.losses, "losses"));
    } else if (!a.eval_backend.empty()) {
        if (a.prompts.empty()) throw UsageError("--prompts is required with --eval-backend");
        register_named_backend(client, parse_backends(ctx.config.value("backends", json::object()), ctx.config_dir),
                               a.eval_backend, a.b.fixtures, a.b.endpoint, a.b.model);
        evaluator = make_prediction_evaluator(
            client, evalx::load_detector(a.prompts, a.eval_backend, decoding_for(ctx.g)), cfg.beta);
    } else {
        throw UsageError("one of --losses or --eval-backend is required");
    }
    auto reviewer = make_reviewer(a.review_mode, a.review_timeout_s, fs::current_path());

    ctx.manifest.input(a.dataset);
    enhance::EnhanceResult res;
    try {
        res = enhance::run_enhancement(cands, a.dataset, cfg, *t, *evaluator, *reviewer, {work, job, a.resume});
    } catch (const enhance::ReviewTimeout& e) {
        throw enhance::ReviewTimeout(std::string(e.what()) + " (state saved; rerun with --resume)");
    }
    for (const auto& s : res.history) {
        ctx.out << "round " << s.k << " on " << s.dataset_version.tag << ":";
        for (const auto& m : s.active_models)
            ctx.out << " " << m.id << "=" << trainer::to_string(m.status) << "("
                    << fmt_double(m.combined_loss.value_or(0)) << ")";
        if (s.revised_to) ctx.out << " -> revised to " << s.revised_to->tag;
        ctx.out << "\n";
    }
    ordered_json acc = ordered_json::array();
    for (const auto& m : res.accepted) acc.push_back(trainer::to_json(m));
    write_file_atomic(work / "accepted.json", acc.dump(2) + "\n");
    ctx.manifest.output(work / "history.json");
    ctx.manifest.output(work / "accepted.json");
    ctx.manifest.output(res.final_dataset.path);
    ctx.out << "accepted " << res.accepted.size() << " candidate(s); final dataset " << res.final_dataset.tag << " at "
            << res.final_dataset.path.string() << "\n";
    return kExitOk;
}

struct EvaluateArgs {
    std::string reports, truth, mode = "binary", out, run_id = "eval", model_id = "model", baseline_reports, backend,
                             prompts;
    BackendArgs b;
};

int exec_evaluate(Context& ctx, const EvaluateArgs& a) {
    auto mode = report::parse_match_mode(a.mode);
    if (!mode) throw UsageError("--mode must be binary, exact_cwe or category");
    if (a.reports.empty() == a.backend.empty()) throw UsageError("exactly one of --reports or --backend is required");
    ctx.manifest.input(a.truth);
    const auto truth = corpus::ingest(a.truth, corpus::InputFormat::jsonl);
    const fs::path out = a.out;
    fs::create_directories(out);

    std::vector<std::string> outputs;
    if (!a.reports.empty()) {
        outputs = evalx::read_report_dir(truth, a.reports);
    } else {
        if (a.prompts.empty()) throw UsageError("--prompts is required with --backend");
        llm::Client client;
        register_named_backend(client, parse_backends(ctx.config.value("backends", json::object()), ctx.config_dir),
                               a.backend, a.b.fixtures, a.b.endpoint, a.b.model);
        auto run = evalx::run_detector(truth, evalx::load_detector(a.prompts, a.backend, decoding_for(ctx.g)), client);
        outputs = run.outputs;
        for (std::size_t i = 0; i < outputs.size(); ++i)
            write_text(out / "reports" / (truth.samples[i].id + ".txt"), outputs[i]);
        ctx.out << "mean latency " << fmt_double(run.mean_latency_ms, 1) << " ms/sample\n";
    }
    auto scored = evalx::score_outputs(truth, outputs, {*mode});
    for (const auto& n : scored.notes) ctx.err << "finesec: note: " << n << "\n";
    if (truth.samples.empty()) throw ConfigError("truth corpus has no samples");
    auto run = evalx::aggregate(scored.samples, a.run_id, a.model_id);
    write_file_atomic(out / "eval_run.json", evalx::to_json(run).dump(2) + "\n");
    write_file_atomic(out / "eval.csv", evalx::to_csv(run));
    ctx.manifest.output(out / "eval_run.json");
    ctx.manifest.output(out / "eval.csv");
    ctx.out << a.run_id << ": accuracy " << fmt_double(evalx::accuracy(run.overall)) << " ("
            << outcome_summary(run.overall) << ")\n";

    if (!a.baseline_reports.empty()) {
        auto base_scored = evalx::score_outputs(truth, evalx::read_report_dir(truth, a.baseline_reports), {*mode});
        auto base = evalx::aggregate(base_scored.samples, "baseline", "baseline");
        write_file_atomic(out / "baseline_run.json", evalx::to_json(base).dump(2) + "\n");
        auto files = evalx::write_comparison(base, run, out);
        for (const auto& p : {files.csv, files.deltas, files.chart}) ctx.manifest.output(p);
        ctx.out << "baseline: accuracy " << fmt_double(evalx::accuracy(base.overall)) << "; comparison in "
                << files.csv.string() << "\n";
    }
    return kExitOk;
}

struct GateArgs {
    std::string eval_run, thresholds, out, check_dataset, check_reports, truth;
    std::optional<double> accuracy, min_accuracy;
    std::optional<std::int64_t> latency_ms, memory_mb, max_latency_ms, max_memory_mb;
    std::vector<std::string> suites_passed, require_suites;
};

int exec_gate(Context& ctx, const GateArgs& a) {
    registry::GateThresholds th;
    if (!a.thresholds.empty()) {
        ctx.manifest.input(a.thresholds);
        th = registry::thresholds_from_json(json::parse(read_file(a.thresholds)));
    } else if (ctx.config.contains("gate")) {
        th = registry::thresholds_from_json(ctx.section("gate"));
    }
    if (a.min_accuracy) th.min_accuracy = *a.min_accuracy;
    if (a.max_latency_ms) th.max_latency_ms_per_sample = *a.max_latency_ms;
    if (a.max_memory_mb) th.max_memory_mb = *a.max_memory_mb;
    for (const auto& s : a.require_suites) {
        if (std::find(th.required_invariant_suites.begin(), th.required_invariant_suites.end(), s) ==
            th.required_invariant_suites.end())
            th.required_invariant_suites.push_back(s);
    }
    th.validate();

    registry::GateMetrics m;
    if (!a.eval_run.empty()) {
        ctx.manifest.input(a.eval_run);
        m.accuracy = evalx::accuracy(evalx::run_from_json(json::parse(read_file(a.eval_run))).overall);
    } else if (a.accuracy) {
        m.accuracy = *a.accuracy;
    } else {
        throw UsageError("one of --eval-run or --accuracy is required");
    }
    if (!a.latency_ms) throw UsageError("--latency-ms is required");
    if (!a.memory_mb) throw UsageError("--memory-mb is required");
    m.latency_ms = *a.latency_ms;
    m.memory_mb = *a.memory_mb;
    m.suites_passed = a.suites_passed;

    if (!a.check_dataset.empty()) {
        ctx.manifest.input(a.check_dataset);
        auto problems = dataset_purity_problems(distill::read_dataset(a.check_dataset), {});
        for (const auto& p : problems) ctx.err << "finesec: dataset-purity: " << p << "\n";
        if (problems.empty()) m.suites_passed.emplace_back("dataset-purity");
    }
    if (!a.check_reports.empty()) {
        if (a.truth.empty()) throw UsageError("--truth is required with --check-reports");
        const auto truth = corpus::ingest(a.truth, corpus::InputFormat::jsonl);
        auto problems = report_parse_problems(truth, evalx::read_report_dir(truth, a.check_reports));
        for (const auto& p : problems) ctx.err << "finesec: report-parse: " << p << "\n";
        if (problems.empty()) m.suites_passed.emplace_back("report-parse");
    }

    const auto r = registry::evaluate_gate(m, th);
    ordered_json j = {{"passed", r.passed},
                      {"reasons", r.reasons},
                      {"metrics",
                       {{"accuracy", m.accuracy},
                        {"latency_ms", m.latency_ms},
                        {"memory_mb", m.memory_mb},
                        {"suites_passed", m.suites_passed}}},
                      {"thresholds", registry::to_json(th)}};
    if (!a.out.empty()) {
        write_text(a.out, j.dump(2) + "\n");
        ctx.manifest.output(a.out);
    }
    ctx.out << (r.passed ? "gate passed" : "gate failed") << "\n";
    for (const auto& reason : r.reasons) ctx.out << "  " << reason << "\n";
    return r.passed ? kExitOk : kExitDomain;
}

struct RegistryArgs {
    std::string root = "registry", model, card;
    int version = 0;
};

void print_card_line(std::ostream& out, const registry::ModelCard& c) {
    out << c.model_id << " v" << c.version << "  base=" << c.base_model_id << "  accuracy="
        << fmt_double(c.metrics.accuracy) << "  data=" << c.training_data_summary.dataset_hash.substr(0, 12) << "  "
        << c.created_at << "\n";
}

int exec_registry_list(Context& ctx, const RegistryArgs& a) {
    registry::Registry reg(a.root);
    auto cards = reg.list(a.model.empty() ? std::nullopt : std::optional<std::string>(a.model));
    for (const auto& c : cards) print_card_line(ctx.out, c);
    if (cards.empty()) ctx.out << "no registered models\n";
    return kExitOk;
}

int exec_registry_show(Context& ctx, const RegistryArgs& a) {
    registry::Registry reg(a.root);
    ctx.out << registry::to_json(reg.get(a.model, a.version)).dump(2) << "\n";
    return kExitOk;
}

int exec_registry_register(Context& ctx, const RegistryArgs& a) {
    ctx.manifest.input(a.card);
    auto card = registry::card_from_json(json::parse(read_file(a.card)));
    registry::Registry reg(a.root);
    const int v = reg.register_model(card);
    ctx.manifest.output(fs::path(a.root) / card.model_id / std::to_string(v) / "card.json");
    ctx.out << "registered " << card.model_id << " version " << v << "\n";
    return kExitOk;
}

struct KbArgs {
    std::string root = "kb", vulnerable, fixed, cwe, source = "manual", confirmed_by, out, name = "kb";
    std::vector<std::string> add;
};

int exec_kb_add(Context& ctx, const KbArgs& a) {
    registry::KnowledgePair p;
    ctx.manifest.input(a.vulnerable);
    ctx.manifest.input(a.fixed);
    p.vulnerable_code = read_file(a.vulnerable);
    p.fixed_code = read_file(a.fixed);
    auto cwe = canonical_cwe(a.cwe);
    if (!cwe) throw ConfigError("--cwe '" + a.cwe + "' is not a CWE id");
    p.cwe_id = *cwe;
    auto src = registry::parse_pair_source(a.source);
    if (!src) throw UsageError("--source must be distilled, deployment_feedback or manual");
    p.source = *src;
    p.confirmed_by = a.confirmed_by;
    registry::KnowledgeBase kb(a.root);
    if (kb.ingest_feedback(p)) ctx.out << "stored pair " << registry::pair_hash(p).substr(0, 16) << "\n";
    else ctx.out << "notice: pair " << registry::pair_hash(p).substr(0, 16) << " already present; nothing stored\n";
    ctx.out << kb.size() << " pair(s) in the knowledge base\n";
    return kExitOk;
}

int exec_kb_export(Context& ctx, const KbArgs& a) {
    registry::KnowledgeBase kb(a.root);
    auto c = kb.export_corpus(a.name);
    const fs::path out = a.out;
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    corpus::write_jsonl(c, out);
    ctx.manifest.output(out);
    ctx.out << "exported " << c.samples.size() << " samples to " << out.string() << "\n";
    return kExitOk;
}

int exec_kb_terms(Context& ctx, const KbArgs& a) {
    registry::KnowledgeBase kb(a.root);
    if (!a.add.empty()) ctx.out << "added " << kb.add_terms(a.add) << " term(s)\n";
    for (const auto& t : kb.terms()) ctx.out << t << "\n";
    return kExitOk;
}

struct ReviewArgs {
    std::string bundle;
    bool check_only = false;
};

int exec_review(Context& ctx, const ReviewArgs& a) {
    const fs::path bundle = a.bundle;
    const auto dataset = bundle / "dataset.jsonl";
    ctx.manifest.input(dataset);
    std::vector<std::string> problems;
    try {
        problems = dataset_purity_problems(distill::read_dataset(dataset), {});
    } catch (const ParseError& e) {
        problems.emplace_back(e.what());
    }
    if (!problems.empty()) {
        for (const auto& p : problems) ctx.err << "finesec: " << p << "\n";
        ctx.err << "finesec: the revised dataset is not acceptable; fix it and run review again\n";
        return kExitDomain;
    }
    if (a.check_only) {
        ctx.out << "revised dataset is valid\n";
        return kExitOk;
    }
    write_file_atomic(bundle / enhance::kReviewSentinel, now_iso8601() + "\n");
    ctx.manifest.output(bundle / enhance::kReviewSentinel);
    ctx.out << "review complete; the controller will pick up " << dataset.string() << "\n";
    return kExitOk;
}

struct PipelineArgs {
    std::string out;
};

int exec_pipeline(Context& ctx, const PipelineArgs& a) {
    if (ctx.g.config.empty()) throw UsageError("--config is required");
    auto cfg = pipeline_config_from_json(ctx.config, ctx.config_dir);
    if (!a.out.empty()) {
        cfg.output_root = fs::absolute(a.out).lexically_normal();
        if (!ctx.section("registry").contains("root")) cfg.registry_root = cfg.output_root / "registry";
    }
    if (ctx.g.seed) {
        cfg.seed = *ctx.g.seed;
        cfg.job_template.seed = cfg.seed;
    }
    ctx.manifest.path = ctx.g.manifest.empty() ? cfg.output_root / "run_manifest.json" : fs::path(ctx.g.manifest);
    ctx.manifest.seed = cfg.seed;
    ctx.manifest.input(cfg.train_corpus);
    ctx.manifest.input(cfg.test_corpus);
    auto res = run_pipeline(cfg, ctx.out);
    ctx.manifest.output(res.final_dataset);
    ctx.manifest.output(res.comparison_csv);
    ctx.manifest.output(cfg.registry_root / res.model_id / std::to_string(res.registered_version) / "card.json");
    return kExitOk;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config documents

std::vector<BackendSpec> parse_backends(const json& backends, const fs::path& base_dir) {
    std::vector<BackendSpec> out;
    if (backends.is_null()) return out;
    if (!backends.is_object()) throw ConfigError("\"backends\" must be an object keyed by backend id");
    for (auto& [id, b] : backends.items()) {
        if (!b.is_object()) throw ConfigError("backend '" + id + "' must be an object");
        BackendSpec s;
        s.id = id;
        const auto kind = b.value("kind", std::string("mock"));
        auto k = llm::parse_backend_kind(kind);
        if (!k) throw ConfigError("backend '" + id + "' has unknown kind '" + kind + "'");
        s.kind = *k;
        for (auto& [key, v] : b.items()) {
            if (key == "kind") continue;
            std::string text = v.is_string() ? v.get<std::string>() : v.dump();
            if (key == "fixtures") text = resolve(base_dir, text).string();
            s.settings[key] = text;
        }
        out.push_back(std::move(s));
    }
    return out;
}

PipelineConfig pipeline_config_from_json(const json& doc, const fs::path& base) {
    if (!doc.is_object()) throw ConfigError("pipeline config must be a JSON object");
    PipelineConfig c;
    auto sect = [&](const char* name) {
        auto it = doc.find(name);
        if (it == doc.end() || it->is_null()) return json::object();
        if (!it->is_object()) throw ConfigError(std::string("\"") + name + "\" must be an object");
        return *it;
    };
    auto need_string = [](const json& j, const char* key, const std::string& where) {
        auto it = j.find(key);
        if (it == j.end() || !it->is_string() || it->get<std::string>().empty())
            throw ConfigError(where + "." + key + " is required");
        return it->get<std::string>();
    };

    c.seed = doc.value("seed", c.seed);
    const auto corpus_s = sect("corpus");
    c.train_corpus = resolve(base, need_string(corpus_s, "train", "corpus"));
    c.test_corpus = resolve(base, need_string(corpus_s, "test", "corpus"));
    const auto fmt = corpus_s.value("format", std::string("jsonl"));
    if (fmt == "jsonl") c.format = corpus::InputFormat::jsonl;
    else if (fmt == "dir" || fmt == "directory") c.format = corpus::InputFormat::directory_of_files;
    else throw ConfigError("corpus.format must be jsonl or dir");
    if (!doc.contains("prompts") || !doc["prompts"].is_string()) throw ConfigError("prompts is required");
    c.prompts_dir = resolve(base, doc["prompts"].get<std::string>());
    c.output_root = doc.contains("output_root") ? resolve(base, doc["output_root"].get<std::string>())
                                                : fs::absolute("finesec-out").lexically_normal();
    c.backends = parse_backends(doc.value("backends", json::object()), base);

    const auto pre = sect("preprocess");
    c.preprocess.max_bytes = pre.value("max_bytes", c.preprocess.max_bytes);
    c.preprocess.min_lines = pre.value("min_lines", c.preprocess.min_lines);
    c.preprocess.validate();

    const auto dis = sect("distill");
    c.teacher_backend = need_string(dis, "backend", "distill");
    c.distill_workers = dis.value("workers", 1);
    c.psi.max_lines = dis.value("max_lines", c.psi.max_lines);
    if (dis.contains("compiler") && dis["compiler"].is_string()) c.psi.compiler_command = dis["compiler"].get<std::string>();
    c.write_transcripts = dis.value("transcripts", false);

    const auto en = sect("enhance");
    c.models = en.value("models", std::vector<std::string>{});
    if (c.models.empty()) throw ConfigError("enhance.models must list at least one candidate id");
    c.base_model_id = en.value("base_model", std::string("base"));
    c.enhance.loss_low = en.value("ll", c.enhance.loss_low);
    c.enhance.loss_high = en.value("lh", c.enhance.loss_high);
    if (en.contains("lb") && en["lb"].is_number()) c.enhance.label_loss_threshold = en["lb"].get<double>();
    c.enhance.max_iterations = en.value("kmax", c.enhance.max_iterations);
    c.enhance.beta = en.value("beta", c.enhance.beta);
    c.enhance.worst_items = en.value("worst_items", c.enhance.worst_items);
    c.enhance.validate();
    c.trainer_kind = en.value("trainer", c.trainer_kind);
    if (c.trainer_kind != "simulated" && c.trainer_kind != "external")
        throw ConfigError("enhance.trainer must be simulated or external");
    if (en.contains("adapter")) {
        c.adapter_argv = split_command(en["adapter"].get<std::string>());
        if (!c.adapter_argv.empty() && c.adapter_argv[0].find('/') != std::string::npos)
            c.adapter_argv[0] = resolve(base, c.adapter_argv[0]).string();
    }
    if (c.trainer_kind == "external" && c.adapter_argv.empty())
        throw ConfigError("enhance.adapter is required for the external trainer");
    if (en.contains("trainer_scripts")) c.trainer_scripts = parse_loss_map(en["trainer_scripts"], "enhance.trainer_scripts");
    if (en.contains("losses")) {
        const auto& l = en["losses"];
        c.scripted_losses = l.is_string() ? parse_loss_map(json::parse(read_file(resolve(base, l.get<std::string>()))),
                                                           "enhance.losses")
                                          : parse_loss_map(l, "enhance.losses");
    }
    c.eval_backend = en.value("eval_backend", std::string());
    if (c.scripted_losses.empty() && c.eval_backend.empty())
        throw ConfigError("enhance needs either \"losses\" or \"eval_backend\"");
    c.review_mode = en.value("review_mode", c.review_mode);
    const std::string prefix = "scripted:";
    if (c.review_mode.rfind(prefix, 0) == 0)
        c.review_mode = prefix + resolve(base, c.review_mode.substr(prefix.size())).string();
    c.review_timeout_s = en.value("review_timeout_s", c.review_timeout_s);

    const auto tr = sect("train");
    if (!tr.empty()) {
        json spec = tr;
        spec.erase("vocab_terms");
        if (!spec.contains("base_model_id")) spec["base_model_id"] = c.base_model_id;
        // Replaced by the dataset version of each enhancement round.
        if (!spec.contains("dataset_ref")) spec["dataset_ref"] = "pending";
        if (!spec.contains("vocab_extension")) spec["vocab_extension"] = json::array();
        if (!spec.contains("seed")) spec["seed"] = c.seed;
        if (!spec.contains("hyperparams")) spec["hyperparams"] = trainer::to_json(trainer::TrainJobSpec{})["hyperparams"];
        c.job_template = trainer::spec_from_json(spec);
        c.vocab_terms = tr.value("vocab_terms", std::vector<std::string>{});
    } else {
        c.job_template.base_model_id = c.base_model_id;
        c.job_template.seed = c.seed;
    }

    const auto ev = sect("evaluate");
    auto mode = report::parse_match_mode(ev.value("mode", std::string("binary")));
    if (!mode) throw ConfigError("evaluate.mode must be binary, exact_cwe or category");
    c.match_mode = *mode;
    c.before_backend = need_string(ev, "before_backend", "evaluate");
    c.after_backend = need_string(ev, "after_backend", "evaluate");

    const auto gate = sect("gate");
    c.thresholds = registry::thresholds_from_json(gate);
    c.memory_mb = gate.value("memory_mb", std::int64_t{0});
    c.external_suites_passed = gate.value("suites_passed", std::vector<std::string>{});

    const auto reg = sect("registry");
    c.registry_root = reg.contains("root") ? resolve(base, reg["root"].get<std::string>()) : c.output_root / "registry";
    if (reg.contains("model_id")) c.model_id = reg["model_id"].get<std::string>();
    c.deployment_notes = reg.value("deployment_notes", std::string());

    const auto kb = sect("kb");
    if (kb.contains("root")) c.kb_root = resolve(base, kb["root"].get<std::string>());
    return c;
}

PipelineConfig load_pipeline_config(const fs::path& path) {
    json doc;
    try {
        doc = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw ConfigError("cannot parse config " + path.string() + ": " + e.what());
    }
    return pipeline_config_from_json(doc, fs::absolute(path).parent_path());
}

// ---------------------------------------------------------------------------
// Pipeline

PipelineResult run_pipeline(const PipelineConfig& cfg, std::ostream& log) {
    PipelineResult res;
    const auto root = cfg.output_root;
    res.output_root = root;
    fs::create_directories(root);
    llm::Decoding decoding;
    decoding.seed = cfg.seed;

    log << "[1/6] preprocess\n";
    auto prep = [&](const fs::path& in, const std::string& name) {
        auto c = corpus::preprocess(corpus::ingest(in, cfg.format), cfg.preprocess);
        const auto out = root / "corpus" / (name + ".jsonl");
        fs::create_directories(out.parent_path());
        corpus::write_jsonl(c, out);
        corpus::write_manifest(c, out.string() + ".manifest.json");
        log << "  " << name << ": " << c.samples.size() << " samples\n";
        return c;
    };
    const auto train = prep(cfg.train_corpus, "train");
    const auto test = prep(cfg.test_corpus, "test");
    if (test.samples.empty()) throw ConfigError("test corpus is empty after preprocessing");

    llm::Client client;
    for (const auto& b : cfg.backends) client.register_backend(b.id, b.kind, b.settings);

    log << "[2/6] distill\n";
    const auto agents = distill::load_agent_set(cfg.prompts_dir, cfg.teacher_backend, decoding);
    distill::DistillOptions dopt;
    dopt.psi = cfg.psi;
    dopt.checkpoint = root / "distill" / "checkpoint.jsonl";
    if (cfg.write_transcripts) dopt.transcript_dir = root / "distill" / "transcripts";
    dopt.workers = cfg.distill_workers;
    const auto ds = distill::distill_corpus(train, agents, client, dopt);
    const auto dataset_path = root / "distill" / "dataset.jsonl";
    distill::write_dataset(ds, dataset_path);
    log << "  attempted " << ds.stats.attempted << ", passed " << ds.stats.passed << "\n";
    if (ds.items.empty()) throw Error("distillation produced no usable items");

    log << "[3/6] enhance\n";
    auto terms = cfg.vocab_terms;
    if (cfg.kb_root) {
        for (const auto& t : registry::KnowledgeBase(*cfg.kb_root).terms()) terms.push_back(t);
    }
    auto job = cfg.job_template;
    job.vocab_extension = trainer::build_vocab_extension(terms);
    job.seed = cfg.seed;
    std::vector<trainer::ModelCandidate> cands;
    for (const auto& id : cfg.models) {
        trainer::ModelCandidate m;
        m.id = id;
        m.base_model_id = cfg.base_model_id;
        cands.push_back(m);
    }
    std::unique_ptr<trainer::Trainer> trainer_impl;
    if (cfg.trainer_kind == "external")
        trainer_impl = std::make_unique<trainer::ExternalTrainer>(cfg.adapter_argv, root / "enhance" / "jobs");
    else
        trainer_impl = std::make_unique<trainer::SimulatedTrainer>(cfg.trainer_scripts);
    std::unique_ptr<enhance::LossEvaluator> evaluator;
    if (!cfg.scripted_losses.empty())
        evaluator = std::make_unique<enhance::ScriptedLossEvaluator>(cfg.scripted_losses);
    else
        evaluator = make_prediction_evaluator(
            client, evalx::load_detector(cfg.prompts_dir, cfg.eval_backend, decoding), cfg.enhance.beta);
    auto reviewer = make_reviewer(cfg.review_mode, cfg.review_timeout_s, fs::current_path());
    const auto enh = enhance::run_enhancement(cands, dataset_path, cfg.enhance, *trainer_impl, *evaluator, *reviewer,
                                              {root / "enhance", job, false});
    for (const auto& s : enh.history) {
        log << "  round " << s.k << " (" << s.dataset_version.tag << "):";
        for (const auto& m : s.active_models)
            log << " " << m.id << " " << trainer::to_string(m.status) << " "
                << fmt_double(m.combined_loss.value_or(0));
        log << "\n";
    }
    if (enh.accepted.empty()) throw Error("no candidate reached the acceptance threshold; see enhance/history.json");
    const auto& chosen = enh.accepted.front();
    res.final_dataset = enh.final_dataset.path;
    res.model_id = cfg.model_id.value_or(chosen.id);

    log << "[4/6] evaluate\n";
    const auto eval_dir = root / "eval";
    auto evaluate_with = [&](const std::string& backend, const std::string& run_id, const std::string& model_id,
                             evalx::DetectorRun& det_run) {
        det_run = evalx::run_detector(test, evalx::load_detector(cfg.prompts_dir, backend, decoding), client);
        for (std::size_t i = 0; i < det_run.outputs.size(); ++i)
            write_text(eval_dir / run_id / "reports" / (test.samples[i].id + ".txt"), det_run.outputs[i]);
        auto scored = evalx::score_outputs(test, det_run.outputs, {cfg.match_mode});
        for (const auto& n : scored.notes) log << "  note (" << run_id << "): " << n << "\n";
        auto run = evalx::aggregate(scored.samples, run_id, model_id);
        write_text(eval_dir / (run_id + "_run.json"), evalx::to_json(run).dump(2) + "\n");
        write_text(eval_dir / (run_id + ".csv"), evalx::to_csv(run));
        return run;
    };
    evalx::DetectorRun before_det, after_det;
    const auto before = evaluate_with(cfg.before_backend, "before", cfg.base_model_id, before_det);
    const auto after = evaluate_with(cfg.after_backend, "after", res.model_id, after_det);
    const auto files = evalx::write_comparison(before, after, eval_dir);
    res.comparison_csv = files.csv;
    res.before_accuracy = evalx::accuracy(before.overall);
    res.after_accuracy = evalx::accuracy(after.overall);
    log << "  accuracy before " << fmt_double(res.before_accuracy) << ", after " << fmt_double(res.after_accuracy)
        << "\n";

    log << "[5/6] gate\n";
    registry::GateMetrics gm;
    gm.accuracy = res.after_accuracy;
    gm.latency_ms = std::llround(after_det.mean_latency_ms);
    gm.memory_mb = cfg.memory_mb;
    gm.suites_passed = cfg.external_suites_passed;
    const auto purity = dataset_purity_problems(distill::read_dataset(enh.final_dataset.path), cfg.psi);
    for (const auto& p : purity) log << "  dataset-purity: " << p << "\n";
    if (purity.empty()) gm.suites_passed.emplace_back("dataset-purity");
    const auto parse_problems = report_parse_problems(test, after_det.outputs);
    for (const auto& p : parse_problems) log << "  report-parse: " << p << "\n";
    if (parse_problems.empty()) gm.suites_passed.emplace_back("report-parse");
    res.gate = registry::evaluate_gate(gm, cfg.thresholds);
    ordered_json gj = {{"passed", res.gate.passed},
                       {"reasons", res.gate.reasons},
                       {"metrics",
                        {{"accuracy", gm.accuracy},
                         {"latency_ms", gm.latency_ms},
                         {"memory_mb", gm.memory_mb},
                         {"suites_passed", gm.suites_passed}}},
                       {"thresholds", registry::to_json(cfg.thresholds)}};
    write_text(root / "gate.json", gj.dump(2) + "\n");
    log << "  " << (res.gate.passed ? "passed" : "failed") << "\n";
    for (const auto& r : res.gate.reasons) log << "  " << r << "\n";

    log << "[6/6] register\n";
    registry::ModelCard card;
    card.model_id = res.model_id;
    card.base_model_id = cfg.base_model_id;
    card.training_data_summary = registry::summarize_dataset(enh.final_dataset.path);
    card.metrics.eval_run_ref = "eval/after_run.json";
    card.metrics.run_id = after.run_id;
    card.metrics.accuracy = gm.accuracy;
    card.metrics.latency_ms = gm.latency_ms;
    card.metrics.memory_mb = gm.memory_mb;
    card.gate_result = res.gate;
    card.deployment_notes = cfg.deployment_notes;
    card.artifact_ref = chosen.artifact_ref;
    registry::Registry reg(cfg.registry_root);
    res.registered_version = reg.register_model(card);
    log << "  registered " << res.model_id << " version " << res.registered_version << "\n";
    return res;
}

// ---------------------------------------------------------------------------
// Entry point

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"finesec: distill vulnerability datasets, fine-tune detectors, evaluate, gate and register them",
                 "finesec"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1, 1);
    app.fallthrough();

    Context ctx{out, err, {}, json::object(), fs::current_path(), {}};
    Globals& g = ctx.g;
    PathOptions paths;
    app.add_option("--config", g.config, "JSON config file; flags override its values");
    app.add_flag("--verbose,-v", g.verbose, "Log progress to stderr");
    app.add_option("--seed", g.seed, "Seed for decoding and simulated training");
    app.add_option("--manifest", g.manifest, "Where to write the run manifest");

    PreprocessArgs pre;
    auto* s_pre = app.add_subcommand("preprocess", "Clean a raw corpus (length filter, dedup, markers)");
    path_opt(s_pre, paths, "--in", pre.in, "Input corpus (JSONL file or directory)");
    path_opt(s_pre, paths, "--out", pre.out, "Output JSONL");
    s_pre->add_option("--max-bytes", pre.max_bytes, "Drop samples larger than this")->capture_default_str();
    s_pre->add_option("--min-lines", pre.min_lines, "Drop samples with fewer lines")->capture_default_str();
    s_pre->add_option("--format", pre.format, "jsonl or dir")->capture_default_str();
    s_pre->add_option("--name", pre.name, "Corpus name");

    DistillArgs dis;
    auto* s_dis = app.add_subcommand("distill", "Run the analysis/scenario/security agents over a corpus");
    path_opt(s_dis, paths, "--corpus", dis.corpus, "Preprocessed corpus JSONL");
    path_opt(s_dis, paths, "--prompts", dis.prompts, "Prompt template directory");
    s_dis->add_option("--backend", dis.backend, "Backend id of the teacher model");
    path_opt(s_dis, paths, "--out", dis.out, "Output dataset JSONL");
    s_dis->add_flag("--resume", dis.resume, "Skip samples already in the checkpoint");
    s_dis->add_option("--workers", dis.workers, "Samples processed concurrently")->capture_default_str();
    s_dis->add_option("--max-lines", dis.max_lines, "Minimality cap for synthesized code")->capture_default_str();
    s_dis->add_option("--compiler", dis.compiler, "Strict-mode compile command containing {file}");
    path_opt(s_dis, paths, "--transcripts", dis.transcripts, "Directory for per-sample agent transcripts");
    add_backend_flags(s_dis, dis.b, paths);

    TrainArgs tr;
    auto* s_tr = app.add_subcommand("train", "Launch one training job, or validate a protocol transcript");
    path_opt(s_tr, paths, "--spec", tr.spec, "Training job spec JSON");
    s_tr->add_option("--trainer", tr.trainer, "simulated or external")->capture_default_str();
    s_tr->add_option("--adapter", tr.adapter, "Adapter command line (external trainer)");
    s_tr->add_option("--candidate", tr.candidate, "Candidate id")->capture_default_str();
    s_tr->add_option("--script", tr.script, "Scripted loss per checkpoint (simulated)")->delimiter(',');
    path_opt(s_tr, paths, "--out", tr.out, "Output directory");
    path_opt(s_tr, paths, "--validate-transcript", tr.validate_transcript, "Check a captured adapter transcript");

    EnhanceArgs en;
    auto* s_en = app.add_subcommand("enhance", "Iterative fine-tuning with dual-threshold triage");
    s_en->add_option("--models", en.models, "Candidate ids")->delimiter(',');
    path_opt(s_en, paths, "--dataset", en.dataset, "Distilled dataset JSONL");
    s_en->add_option("--ll", en.ll, "Accept threshold")->capture_default_str();
    s_en->add_option("--lh", en.lh, "Discard threshold")->capture_default_str();
    s_en->add_option("--kmax", en.kmax, "Maximum rounds")->capture_default_str();
    s_en->add_option("--beta", en.beta, "Label weight in the combined loss")->capture_default_str();
    s_en->add_option("--worst-items", en.worst_items, "Items listed in review bundles")->capture_default_str();
    s_en->add_option("--trainer", en.trainer, "simulated or external")->capture_default_str();
    s_en->add_option("--adapter", en.adapter, "Adapter command line (external trainer)");
    s_en->add_option("--review-mode", en.review_mode, "interactive or scripted:<edits.json>")->capture_default_str();
    s_en->add_option("--review-timeout-s", en.review_timeout_s, "Seconds to wait for a reviewer")
        ->capture_default_str();
    s_en->add_option("--losses", en.losses, "Scripted combined losses: JSON file or inline object");
    s_en->add_option("--trainer-scripts", en.trainer_scripts, "Simulated loss curves: JSON file or inline object");
    s_en->add_option("--eval-backend", en.eval_backend, "Backend serving the candidates for scoring");
    path_opt(s_en, paths, "--prompts", en.prompts, "Prompt directory (detect templates)");
    path_opt(s_en, paths, "--work", en.work, "Working directory")->capture_default_str();
    path_opt(s_en, paths, "--spec", en.spec, "Training job spec template");
    s_en->add_option("--base-model", en.base_model, "Base model id")->capture_default_str();
    s_en->add_flag("--resume", en.resume, "Continue from the saved controller state");
    add_backend_flags(s_en, en.b, paths);

    EvaluateArgs ev;
    auto* s_ev = app.add_subcommand("evaluate", "Score model reports against a labeled corpus");
    path_opt(s_ev, paths, "--reports", ev.reports, "Directory of <sample id>.txt model outputs");
    path_opt(s_ev, paths, "--truth", ev.truth, "Labeled corpus JSONL");
    s_ev->add_option("--mode", ev.mode, "binary, exact_cwe or category")->capture_default_str();
    path_opt(s_ev, paths, "--out", ev.out, "Output directory");
    s_ev->add_option("--run-id", ev.run_id, "Run id")->capture_default_str();
    s_ev->add_option("--model-id", ev.model_id, "Model id")->capture_default_str();
    path_opt(s_ev, paths, "--baseline-reports", ev.baseline_reports, "Reports of the model to compare against");
    s_ev->add_option("--backend", ev.backend, "Query this backend instead of reading --reports");
    path_opt(s_ev, paths, "--prompts", ev.prompts, "Prompt directory (detect templates)");
    add_backend_flags(s_ev, ev.b, paths);

    GateArgs ga;
    auto* s_ga = app.add_subcommand("gate", "Check a model against the release thresholds");
    path_opt(s_ga, paths, "--eval-run", ga.eval_run, "Evaluation run JSON");
    s_ga->add_option("--accuracy", ga.accuracy, "Accuracy, when no evaluation run is given");
    s_ga->add_option("--latency-ms", ga.latency_ms, "Mean inference latency per sample");
    s_ga->add_option("--memory-mb", ga.memory_mb, "Peak memory");
    s_ga->add_option("--suites-passed", ga.suites_passed, "Invariant suites that passed")->delimiter(',');
    path_opt(s_ga, paths, "--thresholds", ga.thresholds, "Thresholds JSON");
    s_ga->add_option("--min-accuracy", ga.min_accuracy, "Override the accuracy threshold");
    s_ga->add_option("--max-latency-ms", ga.max_latency_ms, "Override the latency threshold");
    s_ga->add_option("--max-memory-mb", ga.max_memory_mb, "Override the memory threshold");
    s_ga->add_option("--require-suite", ga.require_suites, "Additionally required suite")->delimiter(',');
    path_opt(s_ga, paths, "--check-dataset", ga.check_dataset, "Run dataset-purity on this dataset");
    path_opt(s_ga, paths, "--check-reports", ga.check_reports, "Run report-parse on this report directory");
    path_opt(s_ga, paths, "--truth", ga.truth, "Corpus the checked reports belong to");
    path_opt(s_ga, paths, "--out", ga.out, "Write the verdict JSON here");

    RegistryArgs ra;
    auto* s_reg = app.add_subcommand("registry", "Inspect the model registry");
    s_reg->require_subcommand(1, 1);
    path_opt(s_reg, paths, "--root", ra.root, "Registry root")->capture_default_str();
    auto* s_reg_list = s_reg->add_subcommand("list", "List registered models");
    s_reg_list->add_option("--model", ra.model, "Only this model id");
    auto* s_reg_show = s_reg->add_subcommand("show", "Print one model card");
    s_reg_show->add_option("model", ra.model, "Model id")->required();
    s_reg_show->add_option("version", ra.version, "Version")->required();
    auto* s_reg_add = s_reg->add_subcommand("register", "Register a gate-passed model card");
    path_opt(s_reg_add, paths, "--card", ra.card, "Model card JSON");

    KbArgs kb;
    auto* s_kb = app.add_subcommand("kb", "Manage the knowledge base of confirmed code pairs");
    s_kb->require_subcommand(1, 1);
    path_opt(s_kb, paths, "--root", kb.root, "Knowledge base root")->capture_default_str();
    auto* s_kb_add = s_kb->add_subcommand("add", "Add a confirmed vulnerable/fixed pair");
    path_opt(s_kb_add, paths, "--vulnerable", kb.vulnerable, "File with the vulnerable code");
    path_opt(s_kb_add, paths, "--fixed", kb.fixed, "File with the fixed code");
    s_kb_add->add_option("--cwe", kb.cwe, "CWE id");
    s_kb_add->add_option("--source", kb.source, "distilled, deployment_feedback or manual")->capture_default_str();
    s_kb_add->add_option("--confirmed-by", kb.confirmed_by, "Who confirmed the pair");
    auto* s_kb_export = s_kb->add_subcommand("export", "Export all pairs as a labeled corpus");
    path_opt(s_kb_export, paths, "--out", kb.out, "Output JSONL");
    s_kb_export->add_option("--name", kb.name, "Dataset name")->capture_default_str();
    auto* s_kb_terms = s_kb->add_subcommand("terms", "List or add security vocabulary terms");
    s_kb_terms->add_option("--add", kb.add, "Terms to add")->delimiter(',');

    ReviewArgs rv;
    auto* s_rv = app.add_subcommand("review", "Validate a revised review bundle and mark it complete");
    path_opt(s_rv, paths, "--bundle", rv.bundle, "Review bundle directory");
    s_rv->add_flag("--check-only", rv.check_only, "Validate without marking the review complete");

    PipelineArgs pl;
    auto* s_pl = app.add_subcommand("pipeline", "Run preprocess, distill, enhance, evaluate, gate and register");
    path_opt(s_pl, paths, "--out", pl.out, "Output root (overrides output_root)");

    std::vector<std::string> rev(args.rbegin(), args.rend());
    std::string command;
    int code = kExitOk;
    std::string error;
    try {
        try {
            app.parse(rev);
        } catch (const CLI::CallForHelp&) {
            out << app.help();
            return kExitOk;
        } catch (const CLI::CallForAllHelp&) {
            out << app.help("", CLI::AppFormatMode::All);
            return kExitOk;
        } catch (const CLI::CallForVersion&) {
            out << kVersion << "\n";
            return kExitOk;
        } catch (const CLI::ParseError& e) {
            throw UsageError(e.what());
        }

        CLI::App* sub = app.get_subcommands().front();
        CLI::App* leaf = sub->get_subcommands().empty() ? sub : sub->get_subcommands().front();
        command = sub->get_name() + (leaf != sub ? "-" + leaf->get_name() : "");
        ctx.manifest.command = command;
        ctx.manifest.args = args;
        ctx.manifest.seed = g.seed;
        if (!g.manifest.empty()) ctx.manifest.path = fs::path(g.manifest);

        if (!g.config.empty()) {
            const fs::path cp = g.config;
            try {
                ctx.config = json::parse(read_file(cp));
            } catch (const json::parse_error& e) {
                throw ConfigError("cannot parse config " + cp.string() + ": " + e.what());
            }
            if (!ctx.config.is_object()) throw ConfigError("config " + cp.string() + " must be a JSON object");
            ctx.config_dir = fs::absolute(cp).parent_path();
            ctx.manifest.input(cp);
            if (sub != s_pl) {
                const auto section = ctx.section(sub->get_name());
                apply_config(sub, section, ctx.config_dir, paths);
                if (leaf != sub && section.contains(leaf->get_name()))
                    apply_config(leaf, section[leaf->get_name()], ctx.config_dir, paths);
            }
        }

        auto default_manifest = [&](const fs::path& p) {
            if (!ctx.manifest.path) ctx.manifest.path = p;
        };
        if (sub == s_pre) {
            require(s_pre, {"--in", "--out"});
            default_manifest(pre.out + ".run.json");
            code = exec_preprocess(ctx, pre);
        } else if (sub == s_dis) {
            require(s_dis, {"--corpus", "--prompts", "--backend", "--out"});
            default_manifest(dis.out + ".run.json");
            code = exec_distill(ctx, dis);
        } else if (sub == s_tr) {
            require(s_tr, {"--spec"});
            if (tr.validate_transcript.empty() && !tr.out.empty()) default_manifest(fs::path(tr.out) / "run_manifest.json");
            code = exec_train(ctx, tr);
        } else if (sub == s_en) {
            require(s_en, {"--models", "--dataset"});
            default_manifest(fs::path(en.work) / "run_manifest.json");
            code = exec_enhance(ctx, en);
        } else if (sub == s_ev) {
            require(s_ev, {"--truth", "--out"});
            default_manifest(fs::path(ev.out) / "run_manifest.json");
            code = exec_evaluate(ctx, ev);
        } else if (sub == s_ga) {
            if (!ga.out.empty()) default_manifest(ga.out + ".run.json");
            code = exec_gate(ctx, ga);
        } else if (sub == s_reg) {
            if (leaf == s_reg_list) code = exec_registry_list(ctx, ra);
            else if (leaf == s_reg_show) code = exec_registry_show(ctx, ra);
            else {
                require(s_reg_add, {"--card"});
                code = exec_registry_register(ctx, ra);
            }
        } else if (sub == s_kb) {
            if (leaf == s_kb_add) {
                require(s_kb_add, {"--vulnerable", "--fixed", "--cwe", "--confirmed-by"});
                code = exec_kb_add(ctx, kb);
            } else if (leaf == s_kb_export) {
                require(s_kb_export, {"--out"});
                code = exec_kb_export(ctx, kb);
            } else {
                code = exec_kb_terms(ctx, kb);
            }
        } else if (sub == s_rv) {
            require(s_rv, {"--bundle"});
            code = exec_review(ctx, rv);
        } else if (sub == s_pl) {
            code = exec_pipeline(ctx, pl);
        }
        if (code != kExitOk) error = command + " finished with a negative verdict";
    } catch (const UsageError& e) {
        err << "finesec: error: " << e.what() << "\n\n" << app.help() << "\n";
        code = kExitUsage;
        error = e.what();
    } catch (const Error& e) {
        err << "finesec: error: " << e.what() << "\n";
        code = kExitDomain;
        error = e.what();
    } catch (const nlohmann::json::exception& e) {
        err << "finesec: error: invalid JSON: " << e.what() << "\n";
        code = kExitDomain;
        error = e.what();
    } catch (const fs::filesystem_error& e) {
        err << "finesec: error: " << e.what() << "\n";
        code = kExitDomain;
        error = e.what();
    } catch (const std::exception& e) {
        err << "finesec: internal error: " << e.what() << "\n";
        code = kExitDomain;
        error = e.what();
    }
    if (ctx.manifest.args.empty()) ctx.manifest.args = args;
    ctx.manifest.write(code, error);
    return code;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args, out, err);
}

}  // namespace finesec::cli

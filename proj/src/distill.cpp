// SPDX-License-Identifier: Apache-2.0
#include "finesec/distill.hpp"

#include "finesec/clex.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <regex>
#include <set>
#include <thread>
#include <unistd.h>

namespace finesec::distill {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

std::string to_string(Role role) {
    switch (role) {
    case Role::analysis: return "analysis";
    case Role::scenario: return "scenario";
    case Role::security: return "security";
    }
    return "analysis";
}

std::vector<std::string> required_placeholders(Role role) {
    switch (role) {
    case Role::analysis:
    case Role::scenario: return {"code"};
    case Role::security: return {"label", "rationale", "scenario"};
    }
    return {};
}

std::vector<std::string> template_placeholders(std::string_view tmpl) {
    std::vector<std::string> names;
    std::size_t pos = 0;
    while ((pos = tmpl.find("{{", pos)) != std::string_view::npos) {
        auto close = tmpl.find("}}", pos + 2);
        if (close == std::string_view::npos) break;
        auto name = trim(tmpl.substr(pos + 2, close - pos - 2));
        if (std::find(names.begin(), names.end(), name) == names.end()) names.push_back(name);
        pos = close + 2;
    }
    return names;
}

std::string render(std::string_view tmpl, const std::map<std::string, std::string>& vars) {
    std::string out;
    out.reserve(tmpl.size());
    std::size_t pos = 0;
    for (;;) {
        auto open = tmpl.find("{{", pos);
        if (open == std::string_view::npos) break;
        auto close = tmpl.find("}}", open + 2);
        if (close == std::string_view::npos) break;
        out.append(tmpl.substr(pos, open - pos));
        const auto name = trim(tmpl.substr(open + 2, close - open - 2));
        auto it = vars.find(name);
        if (it == vars.end()) throw ConfigError("template references unknown placeholder '" + name + "'");
        out.append(it->second);
        pos = close + 2;
    }
    out.append(tmpl.substr(pos));
    return out;
}

void AgentConfig::validate() const {
    auto found = template_placeholders(system_prompt_template);
    for (auto& n : template_placeholders(user_prompt_template)) {
        if (std::find(found.begin(), found.end(), n) == found.end()) found.push_back(n);
    }
    auto required = required_placeholders(role);
    std::sort(found.begin(), found.end());
    std::sort(required.begin(), required.end());
    if (found != required) {
        std::string want, got;
        for (auto& r : required) want += (want.empty() ? "" : ", ") + r;
        for (auto& f : found) got += (got.empty() ? "" : ", ") + f;
        throw ConfigError(to_string(role) + " agent templates must use exactly {" + want + "}, found {" + got + "}");
    }
    if (backend_id.empty()) throw ConfigError(to_string(role) + " agent has no backend id");
    if (decoding.max_tokens <= 0) throw ConfigError(to_string(role) + " agent max_tokens must be positive");
}

AgentConfig load_agent_config(const fs::path& prompts_dir, Role role, std::string backend_id, llm::Decoding decoding) {
    AgentConfig cfg;
    cfg.role = role;
    cfg.system_prompt_template = read_file(prompts_dir / (to_string(role) + ".system.txt"));
    cfg.user_prompt_template = read_file(prompts_dir / (to_string(role) + ".user.txt"));
    cfg.backend_id = std::move(backend_id);
    cfg.decoding = decoding;
    cfg.validate();
    return cfg;
}

void AgentSet::validate() const {
    if (analysis.role != Role::analysis) throw ConfigError("analysis slot holds a " + to_string(analysis.role) + " agent");
    if (scenario.role != Role::scenario) throw ConfigError("scenario slot holds a " + to_string(scenario.role) + " agent");
    if (security.role != Role::security) throw ConfigError("security slot holds a " + to_string(security.role) + " agent");
    analysis.validate();
    scenario.validate();
    security.validate();
}

AgentSet load_agent_set(const fs::path& prompts_dir, const std::string& backend_id, llm::Decoding decoding) {
    return AgentSet{load_agent_config(prompts_dir, Role::analysis, backend_id, decoding),
                    load_agent_config(prompts_dir, Role::scenario, backend_id, decoding),
                    load_agent_config(prompts_dir, Role::security, backend_id, decoding)};
}

// ---------------------------------------------------------------------------
// Response conventions

Analysis parse_analysis_response(std::string_view text) {
    static const std::regex kCweLine(R"(^\s*[cC][wW][eE]\s*:\s*(.*?)\s*$)");
    static const std::regex kCweValue(R"(^(?:[cC][wW][eE][\s_\-]*)?(\d+)\b)");
    std::optional<std::string> label;
    std::string rationale;
    for (const auto& line : split_lines(text)) {
        std::smatch m;
        if (std::regex_match(line, m, kCweLine)) {
            const std::string value = m[1].str();
            std::smatch v;
            if (!label && std::regex_search(value, v, kCweValue)) label = canonical_cwe(v[1].str());
            continue;
        }
        rationale += line;
        rationale.push_back('\n');
    }
    if (!label) throw ExtractionError("analysis-no-cwe", "analysis response has no parseable 'CWE: CWE-<n>' line");
    rationale = trim(rationale);
    if (rationale.empty()) throw ExtractionError("analysis-empty-rationale", "analysis response has no rationale");
    return Analysis{std::move(rationale), *label};
}

std::string parse_scenario_response(std::string_view text) {
    auto s = trim(text);
    if (s.empty()) throw ExtractionError("scenario-empty", "scenario response is empty");
    return s;
}

std::string extract_code_block(std::string_view text) {
    auto is_fence = [](std::string_view line) {
        std::size_t i = 0;
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
        return line.substr(i, 3) == "```";
    };
    std::size_t pos = 0;
    std::optional<std::size_t> body_start;
    while (pos <= text.size()) {
        auto nl = text.find('\n', pos);
        const auto line_end = nl == std::string_view::npos ? text.size() : nl;
        const auto line = text.substr(pos, line_end - pos);
        if (is_fence(line)) {
            if (!body_start) {
                if (nl == std::string_view::npos) break;
                body_start = nl + 1;
            } else {
                return std::string(text.substr(*body_start, pos - *body_start));
            }
        }
        if (nl == std::string_view::npos) break;
        pos = nl + 1;
    }
    if (trim(text).empty()) throw ExtractionError("security-empty", "security response is empty");
    return std::string(text);
}

// ---------------------------------------------------------------------------
// Agent calls

namespace {

std::int64_t now_us() {
    return std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

std::string call_agent(const AgentConfig& cfg, const std::map<std::string, std::string>& vars, llm::Client& client,
                       Transcript* transcript) {
    llm::CompletionRequest req;
    req.system_prompt = render(cfg.system_prompt_template, vars);
    req.user_prompt = render(cfg.user_prompt_template, vars);
    req.decoding = cfg.decoding;
    req.backend_id = cfg.backend_id;
    const auto started = now_us();
    auto result = client.complete(req);
    if (transcript) {
        transcript->entries.push_back(TranscriptEntry{cfg.role, static_cast<std::int64_t>(transcript->entries.size()),
                                                      started, now_us(), req.system_prompt, req.user_prompt,
                                                      result.text});
    }
    return std::move(result.text);
}

void require_role(const AgentConfig& cfg, Role role) {
    if (cfg.role != role) throw ConfigError("expected a " + to_string(role) + " agent, got " + to_string(cfg.role));
}

}  // namespace

Analysis run_analysis(const corpus::CodeSample& sample, const AgentConfig& cfg, llm::Client& client,
                      Transcript* transcript) {
    require_role(cfg, Role::analysis);
    return parse_analysis_response(call_agent(cfg, {{"code", sample.code}}, client, transcript));
}

std::string run_scenario(const corpus::CodeSample& sample, const AgentConfig& cfg, llm::Client& client,
                         Transcript* transcript) {
    require_role(cfg, Role::scenario);
    return parse_scenario_response(call_agent(cfg, {{"code", sample.code}}, client, transcript));
}

std::string run_security(const std::string& rationale, const std::string& label, const std::string& scenario,
                         const AgentConfig& cfg, llm::Client& client, Transcript* transcript) {
    require_role(cfg, Role::security);
    if (trim(rationale).empty() || trim(label).empty() || trim(scenario).empty())
        throw ConfigError("security agent requires non-empty rationale, label and scenario");
    const auto text =
        call_agent(cfg, {{"rationale", rationale}, {"label", label}, {"scenario", scenario}}, client, transcript);
    return extract_code_block(text);
}

// ---------------------------------------------------------------------------
// Snippet validator

namespace {

bool delimiters_balanced(const std::vector<clex::Token>& toks, std::string_view src) {
    std::vector<char> stack;
    for (const auto& t : toks) {
        if (t.kind != clex::TokenKind::punct) continue;
        const auto p = t.text(src);
        if (p.size() != 1) continue;
        const char c = p[0];
        if (c == '(' || c == '[' || c == '{') {
            stack.push_back(c);
        } else if (c == ')' || c == ']' || c == '}') {
            const char open = c == ')' ? '(' : c == ']' ? '[' : '{';
            if (stack.empty() || stack.back() != open) return false;
            stack.pop_back();
        }
    }
    return stack.empty();
}

bool is_punct(const clex::Token& t, std::string_view src, std::string_view p) {
    return t.kind == clex::TokenKind::punct && t.text(src) == p;
}

// Index of the token closing the group opened at `open`, or npos.
std::size_t match_group(const std::vector<clex::Token>& toks, std::string_view src, std::size_t open) {
    const auto o = toks[open].text(src);
    const std::string_view c = o == "(" ? ")" : o == "[" ? "]" : "}";
    int depth = 0;
    for (std::size_t i = open; i < toks.size(); ++i) {
        if (is_punct(toks[i], src, o)) ++depth;
        else if (is_punct(toks[i], src, c) && --depth == 0) return i;
    }
    return std::string::npos;
}

bool is_trailing_qualifier(std::string_view s) {
    static const std::set<std::string_view> kQualifiers = {"const", "volatile", "noexcept", "override", "final",
                                                           "mutable", "throw", "&", "&&", "try"};
    return kQualifiers.contains(s);
}

// After the parameter list closing at `close`, does a function body follow?
bool body_follows(const std::vector<clex::Token>& toks, std::string_view src, std::size_t close) {
    std::size_t k = close + 1;
    while (k < toks.size()) {
        const auto& t = toks[k];
        const auto text = t.text(src);
        if (is_punct(t, src, "{")) return true;
        if (t.kind == clex::TokenKind::identifier && is_trailing_qualifier(text)) {
            ++k;
            if (k < toks.size() && is_punct(toks[k], src, "(")) {
                auto m = match_group(toks, src, k);
                if (m == std::string::npos) return false;
                k = m + 1;
            }
            continue;
        }
        if (t.kind == clex::TokenKind::identifier && k + 1 < toks.size() && is_punct(toks[k + 1], src, "(") &&
            text.starts_with("__")) {
            auto m = match_group(toks, src, k + 1);  // __attribute__((...)) and friends
            if (m == std::string::npos) return false;
            k = m + 1;
            continue;
        }
        if (is_punct(t, src, "&") || is_punct(t, src, "&&")) {
            ++k;
            continue;
        }
        if (is_punct(t, src, "->")) {
            // trailing return type: runs up to the body or a terminator
            ++k;
            while (k < toks.size() && !is_punct(toks[k], src, "{") && !is_punct(toks[k], src, ";") &&
                   !is_punct(toks[k], src, "="))
                ++k;
            continue;
        }
        if (is_punct(t, src, ":")) {
            // constructor initializer list: name(args) or name{args}, comma separated
            ++k;
            for (;;) {
                while (k < toks.size() && (toks[k].kind == clex::TokenKind::identifier || is_punct(toks[k], src, "::") ||
                                           is_punct(toks[k], src, "<") || is_punct(toks[k], src, ">")))
                    ++k;
                if (k >= toks.size()) return false;
                if (!is_punct(toks[k], src, "(") && !is_punct(toks[k], src, "{")) return false;
                auto m = match_group(toks, src, k);
                if (m == std::string::npos) return false;
                k = m + 1;
                if (k < toks.size() && is_punct(toks[k], src, ",")) {
                    ++k;
                    continue;
                }
                break;
            }
            continue;
        }
        return false;
    }
    return false;
}

}  // namespace

std::size_t count_function_definitions(std::string_view code) {
    const auto toks = clex::code_tokens(clex::lex(code));
    std::size_t count = 0;
    for (std::size_t i = 0; i + 1 < toks.size(); ++i) {
        const auto& t = toks[i];
        if (t.kind != clex::TokenKind::identifier || !is_punct(toks[i + 1], code, "(")) continue;
        const auto name = t.text(code);
        if (clex::is_keyword(name) && name != "operator") continue;
        if (i > 0 && (is_punct(toks[i - 1], code, ".") || is_punct(toks[i - 1], code, "->"))) continue;
        const auto close = match_group(toks, code, i + 1);
        if (close == std::string::npos) continue;
        if (body_follows(toks, code, close)) ++count;
    }
    return count;
}

namespace {

bool run_compiler_hook(std::string_view code, const PsiOptions& options) {
    char tmpl[] = "/tmp/finesec-psi-XXXXXX";
    const int fd = mkstemp(tmpl);
    if (fd < 0) throw IoError("cannot create temporary file for compiler hook");
    close(fd);
    const fs::path base(tmpl);
    const fs::path file = base.string() + options.source_extension;
    write_file_atomic(file, code);
    std::string cmd = *options.compiler_command;
    const std::string quoted = "'" + file.string() + "'";
    for (std::size_t pos; (pos = cmd.find("{file}")) != std::string::npos;) cmd.replace(pos, 6, quoted);
    cmd += " >/dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    std::error_code ec;
    fs::remove(file, ec);
    fs::remove(base, ec);
    return rc == 0;
}

}  // namespace

PsiVerdict validate_psi(std::string_view code, const PsiOptions& options) {
    PsiVerdict v;
    const auto lexed = clex::lex(code);
    const auto toks = clex::code_tokens(lexed);
    if (trim(code).empty()) v.reasons.emplace_back(kPsiEmpty);
    if (!lexed.ok()) v.reasons.emplace_back(kPsiLexError);
    if (!delimiters_balanced(toks, code)) v.reasons.emplace_back(kPsiUnbalanced);
    if (count_function_definitions(code) == 0) v.reasons.emplace_back(kPsiNoFunction);
    if (count_lines(code) > options.max_lines) v.reasons.emplace_back(kPsiTooLong);
    if (options.compiler_command && v.reasons.empty() && !run_compiler_hook(code, options))
        v.reasons.emplace_back(kPsiCompileFailed);
    v.passed = v.reasons.empty();
    return v;
}

// ---------------------------------------------------------------------------
// Dataset I/O

namespace {

ordered_json item_to_json(const DistilledItem& item) {
    ordered_json j;
    j["source_sample_id"] = item.source_sample_id;
    j["label"] = item.label;
    j["rationale"] = item.rationale;
    j["scenario"] = item.scenario;
    j["synth_code"] = item.synth_code;
    j["psi_passed"] = item.psi.passed;
    return j;
}

DistilledItem item_from_json(const nlohmann::json& j) {
    DistilledItem item;
    item.source_sample_id = j.at("source_sample_id").get<std::string>();
    item.label = j.at("label").get<std::string>();
    item.rationale = j.at("rationale").get<std::string>();
    item.scenario = j.at("scenario").get<std::string>();
    item.synth_code = j.at("synth_code").get<std::string>();
    item.psi.passed = j.at("psi_passed").get<bool>();
    return item;
}

ordered_json stats_to_json(const DistillStats& s) {
    ordered_json j;
    j["attempted"] = s.attempted;
    j["passed"] = s.passed;
    j["failed_by_reason"] = ordered_json::object();
    for (const auto& [k, v] : s.failed_by_reason) j["failed_by_reason"][k] = v;
    return j;
}

}  // namespace

std::string to_jsonl(const DistilledDataset& dataset) {
    std::string out;
    for (const auto& item : dataset.items) {
        out += item_to_json(item).dump();
        out.push_back('\n');
    }
    return out;
}

void write_dataset(const DistilledDataset& dataset, const fs::path& path) {
    write_file_atomic(path, to_jsonl(dataset));
    auto stats_path = path;
    stats_path += ".stats.json";
    write_file_atomic(stats_path, stats_to_json(dataset.stats).dump(2) + "\n");
}

DistilledDataset parse_dataset_jsonl(std::string_view text) {
    DistilledDataset ds;
    std::size_t lineno = 0;
    for (const auto& line : split_lines(text)) {
        ++lineno;
        if (trim(line).empty()) continue;
        try {
            ds.items.push_back(item_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("distilled dataset line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    ds.stats.attempted = ds.stats.passed = ds.items.size();
    return ds;
}

DistilledDataset read_dataset(const fs::path& path) {
    auto ds = parse_dataset_jsonl(read_file(path));
    auto stats_path = path;
    stats_path += ".stats.json";
    std::error_code ec;
    if (fs::exists(stats_path, ec)) {
        const auto j = nlohmann::json::parse(read_file(stats_path));
        ds.stats.attempted = j.value("attempted", ds.items.size());
        ds.stats.passed = j.value("passed", ds.items.size());
        if (auto it = j.find("failed_by_reason"); it != j.end())
            for (auto& [k, v] : it->items()) ds.stats.failed_by_reason[k] = v.get<std::size_t>();
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Main loop

namespace {

struct SampleOutcome {
    bool done = false;
    bool passed = false;
    std::string reason;
    DistilledItem item;
};

ordered_json outcome_to_json(const SampleOutcome& o) {
    ordered_json j;
    j["source_sample_id"] = o.item.source_sample_id;
    j["status"] = o.passed ? "passed" : "failed";
    if (!o.passed) j["reason"] = o.reason;
    if (o.passed) j["item"] = item_to_json(o.item);
    return j;
}

SampleOutcome outcome_from_json(const nlohmann::json& j) {
    SampleOutcome o;
    o.done = true;
    o.item.source_sample_id = j.at("source_sample_id").get<std::string>();
    o.passed = j.at("status").get<std::string>() == "passed";
    if (o.passed) {
        o.item = item_from_json(j.at("item"));
        o.item.psi.passed = true;
    } else {
        o.reason = j.at("reason").get<std::string>();
    }
    return o;
}

ordered_json transcript_to_json(const Transcript& t) {
    ordered_json j;
    j["sample_id"] = t.sample_id;
    j["entries"] = ordered_json::array();
    for (const auto& e : t.entries) {
        j["entries"].push_back({{"role", to_string(e.role)},
                                {"seq", e.seq},
                                {"started_us", e.started_us},
                                {"finished_us", e.finished_us},
                                {"system_prompt", e.system_prompt},
                                {"user_prompt", e.user_prompt},
                                {"response", e.response}});
    }
    return j;
}

SampleOutcome process_sample(const corpus::CodeSample& sample, const AgentSet& agents, llm::Client& client,
                             const DistillOptions& options) {
    SampleOutcome out;
    out.done = true;
    out.item.source_sample_id = sample.id;
    Transcript transcript{sample.id, {}};
    Transcript* tp = options.transcript_dir ? &transcript : nullptr;
    try {
        auto analysis = run_analysis(sample, agents.analysis, client, tp);
        out.item.label = analysis.label;
        out.item.rationale = analysis.rationale;
        out.item.scenario = run_scenario(sample, agents.scenario, client, tp);
        out.item.synth_code = run_security(out.item.rationale, out.item.label, out.item.scenario, agents.security,
                                           client, tp);
        out.item.psi = validate_psi(out.item.synth_code, options.psi);
        out.passed = out.item.psi.passed;
        if (!out.passed) out.reason = out.item.psi.reasons.front();
    } catch (const ExtractionError& e) {
        out.passed = false;
        out.reason = e.reason();
    } catch (const llm::BackendError& e) {
        switch (e.kind()) {
        case llm::ErrorKind::no_fixture:
        case llm::ErrorKind::malformed_response:
        case llm::ErrorKind::rejected:
            out.passed = false;
            out.reason = "backend-" + llm::to_string(e.kind());
            break;
        default:
            throw;
        }
    }
    if (tp) {
        const auto path = *options.transcript_dir / (sample.id + ".json");
        write_file_atomic(path, transcript_to_json(transcript).dump(2) + "\n");
        out.item.transcript_ref = path.string();
    }
    return out;
}

}  // namespace

DistilledDataset distill_corpus(const corpus::Corpus& corpus, const AgentSet& agents, llm::Client& client,
                                const DistillOptions& options) {
    agents.validate();
    for (const auto* cfg : {&agents.analysis, &agents.scenario, &agents.security}) {
        if (!client.has_backend(cfg->backend_id))
            throw ConfigError("agent " + to_string(cfg->role) + " uses unregistered backend '" + cfg->backend_id + "'");
    }

    const std::size_t n = corpus.samples.size();
    std::vector<SampleOutcome> outcomes(n);

    std::ofstream checkpoint;
    if (options.checkpoint) {
        std::map<std::string, SampleOutcome> previous;
        std::error_code ec;
        if (options.resume && fs::exists(*options.checkpoint, ec)) {
            for (const auto& line : split_lines(read_file(*options.checkpoint))) {
                if (trim(line).empty()) continue;
                try {
                    auto o = outcome_from_json(nlohmann::json::parse(line));
                    previous[o.item.source_sample_id] = std::move(o);
                } catch (const nlohmann::json::exception&) {
                    // a torn final line from an interrupted write; that sample is redone
                }
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            if (auto it = previous.find(corpus.samples[i].id); it != previous.end()) outcomes[i] = it->second;
        }
        if (options.checkpoint->has_parent_path()) fs::create_directories(options.checkpoint->parent_path(), ec);
        // Rewrite the checkpoint with only the entries that still apply.
        checkpoint.open(*options.checkpoint, std::ios::binary | std::ios::trunc);
        if (!checkpoint) throw IoError("cannot write checkpoint " + options.checkpoint->string());
        for (const auto& o : outcomes) {
            if (o.done) checkpoint << outcome_to_json(o).dump() << '\n';
        }
        checkpoint.flush();
    }
    if (options.transcript_dir) fs::create_directories(*options.transcript_dir);

    std::mutex mu;
    std::atomic<std::size_t> next{0};
    std::atomic<bool> abort{false};
    std::exception_ptr failure;

    auto worker = [&] {
        for (;;) {
            if (abort.load()) return;
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            if (outcomes[i].done) continue;
            try {
                auto o = process_sample(corpus.samples[i], agents, client, options);
                std::lock_guard lock(mu);
                if (checkpoint.is_open()) {
                    checkpoint << outcome_to_json(o).dump() << '\n';
                    checkpoint.flush();
                }
                outcomes[i] = std::move(o);
            } catch (...) {
                std::lock_guard lock(mu);
                if (!failure) failure = std::current_exception();
                abort = true;
                return;
            }
        }
    };

    const int workers = std::max(1, std::min<int>(options.workers, static_cast<int>(std::max<std::size_t>(n, 1))));
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    }

    if (failure) {
        try {
            std::rethrow_exception(failure);
        } catch (const llm::BackendError& e) {
            std::string where = options.checkpoint ? "; resume from " + options.checkpoint->string() : "";
            throw DistillAborted("distillation aborted: " + std::string(e.what()) + where);
        }
    }
    if (checkpoint.is_open()) {
        // Entries were appended in completion order; leave a finished run's
        // checkpoint in corpus order so it does not depend on scheduling.
        checkpoint.close();
        std::string text;
        for (const auto& o : outcomes) text += outcome_to_json(o).dump() + '\n';
        write_file_atomic(*options.checkpoint, text);
    }

    DistilledDataset ds;
    ds.stats.attempted = n;
    for (auto& o : outcomes) {
        if (o.passed) {
            ++ds.stats.passed;
            ds.items.push_back(std::move(o.item));
        } else {
            ++ds.stats.failed_by_reason[o.reason];
        }
    }
    return ds;
}

}  // namespace finesec::distill

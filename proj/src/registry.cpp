// SPDX-License-Identifier: Apache-2.0
#include "finesec/registry.hpp"

#include "finesec/distill.hpp"

#include <algorithm>
#include <cmath>
#include <fcntl.h>
#include <set>
#include <sys/file.h>
#include <unistd.h>

namespace finesec::registry {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

const std::vector<std::string>& known_suites() {
    static const std::vector<std::string> suites = {"dataset-purity", "report-parse", "adversarial-robustness"};
    return suites;
}

void GateThresholds::validate() const {
    if (!(min_accuracy > 0 && min_accuracy <= 1)) throw ConfigError("min_accuracy must lie in (0, 1]");
    if (max_latency_ms_per_sample <= 0) throw ConfigError("max_latency_ms_per_sample must be positive");
    if (max_memory_mb <= 0) throw ConfigError("max_memory_mb must be positive");
    const auto& known = known_suites();
    for (const auto& s : required_invariant_suites) {
        if (std::find(known.begin(), known.end(), s) == known.end())
            throw ConfigError("unknown invariant suite '" + s + "'");
    }
}

ordered_json to_json(const GateThresholds& t) {
    return {{"min_accuracy", t.min_accuracy},
            {"max_latency_ms_per_sample", t.max_latency_ms_per_sample},
            {"max_memory_mb", t.max_memory_mb},
            {"required_invariant_suites", t.required_invariant_suites}};
}

GateThresholds thresholds_from_json(const json& j) {
    GateThresholds t;
    try {
        t.min_accuracy = j.value("min_accuracy", t.min_accuracy);
        t.max_latency_ms_per_sample = j.value("max_latency_ms_per_sample", t.max_latency_ms_per_sample);
        t.max_memory_mb = j.value("max_memory_mb", t.max_memory_mb);
        t.required_invariant_suites = j.value("required_invariant_suites", t.required_invariant_suites);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid gate thresholds: ") + e.what());
    }
    t.validate();
    return t;
}

GateResult evaluate_gate(const GateMetrics& m, const GateThresholds& t) {
    GateResult r;
    if (!(m.accuracy >= t.min_accuracy)) r.reasons.emplace_back("accuracy below threshold");
    if (m.latency_ms > t.max_latency_ms_per_sample) r.reasons.emplace_back("latency above threshold");
    if (m.memory_mb > t.max_memory_mb) r.reasons.emplace_back("memory above threshold");
    for (const auto& s : t.required_invariant_suites) {
        if (std::find(m.suites_passed.begin(), m.suites_passed.end(), s) == m.suites_passed.end())
            r.reasons.push_back("missing required suite: " + s);
    }
    r.passed = r.reasons.empty();
    return r;
}

TrainingDataSummary summarize_dataset(const fs::path& dataset) {
    const auto text = read_file(dataset);
    const auto ds = distill::parse_dataset_jsonl(text);
    TrainingDataSummary s;
    s.dataset_hash = sha256_hex(text);
    s.size = ds.items.size();
    for (const auto& item : ds.items) ++s.cwe_distribution[item.label];
    return s;
}

ordered_json to_json(const ModelCard& c) {
    ordered_json j;
    j["model_id"] = c.model_id;
    j["version"] = c.version;
    j["base_model_id"] = c.base_model_id;
    ordered_json dist = ordered_json::object();
    for (const auto& [k, v] : c.training_data_summary.cwe_distribution) dist[k] = v;
    j["training_data_summary"] = {{"dataset_hash", c.training_data_summary.dataset_hash},
                                  {"size", c.training_data_summary.size},
                                  {"cwe_distribution", dist}};
    j["metrics"] = {{"eval_run_ref", c.metrics.eval_run_ref},
                    {"run_id", c.metrics.run_id},
                    {"accuracy", c.metrics.accuracy},
                    {"latency_ms", c.metrics.latency_ms},
                    {"memory_mb", c.metrics.memory_mb}};
    j["gate_result"] = {{"passed", c.gate_result.passed}, {"reasons", c.gate_result.reasons}};
    j["created_at"] = c.created_at;
    j["deployment_notes"] = c.deployment_notes;
    j["artifact_ref"] = c.artifact_ref ? ordered_json(*c.artifact_ref) : ordered_json(nullptr);
    return j;
}

ModelCard card_from_json(const json& j) {
    try {
        ModelCard c;
        c.model_id = j.at("model_id").get<std::string>();
        c.version = j.at("version").get<int>();
        c.base_model_id = j.at("base_model_id").get<std::string>();
        const auto& t = j.at("training_data_summary");
        c.training_data_summary.dataset_hash = t.at("dataset_hash").get<std::string>();
        c.training_data_summary.size = t.at("size").get<std::size_t>();
        for (auto& [k, v] : t.at("cwe_distribution").items())
            c.training_data_summary.cwe_distribution[k] = v.get<std::size_t>();
        const auto& m = j.at("metrics");
        c.metrics.eval_run_ref = m.at("eval_run_ref").get<std::string>();
        c.metrics.run_id = m.at("run_id").get<std::string>();
        c.metrics.accuracy = m.at("accuracy").get<double>();
        c.metrics.latency_ms = m.at("latency_ms").get<std::int64_t>();
        c.metrics.memory_mb = m.at("memory_mb").get<std::int64_t>();
        c.gate_result.passed = j.at("gate_result").at("passed").get<bool>();
        c.gate_result.reasons = j.at("gate_result").at("reasons").get<std::vector<std::string>>();
        c.created_at = j.at("created_at").get<std::string>();
        c.deployment_notes = j.at("deployment_notes").get<std::string>();
        if (!j.at("artifact_ref").is_null()) c.artifact_ref = j.at("artifact_ref").get<std::string>();
        return c;
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed model card: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Registry

namespace {

class FileLock {
public:
    explicit FileLock(const fs::path& path) {
        fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
        if (fd_ < 0) throw IoError("cannot open lock file " + path.string());
        if (::flock(fd_, LOCK_EX) != 0) {
            ::close(fd_);
            throw IoError("cannot lock " + path.string());
        }
    }
    ~FileLock() {
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
    }
    FileLock(const FileLock&) = delete;
    FileLock& operator=(const FileLock&) = delete;

private:
    int fd_ = -1;
};

bool valid_model_id(const std::string& id) {
    if (id.empty() || id == "." || id == "..") return false;
    return std::all_of(id.begin(), id.end(), [](unsigned char c) {
        return std::isalnum(c) || c == '-' || c == '_' || c == '.';
    });
}

std::vector<int> versions_on_disk(const fs::path& model_dir) {
    std::vector<int> out;
    std::error_code ec;
    if (!fs::is_directory(model_dir, ec)) return out;
    for (const auto& e : fs::directory_iterator(model_dir)) {
        const auto name = e.path().filename().string();
        if (!e.is_directory() || name.empty() ||
            !std::all_of(name.begin(), name.end(), [](unsigned char c) { return std::isdigit(c); }))
            continue;
        if (fs::exists(e.path() / "card.json")) out.push_back(std::stoi(name));
    }
    std::sort(out.begin(), out.end());
    return out;
}

// Hash of a file, or of a directory's sorted (relative path, file hash) list.
std::string content_hash(const fs::path& p) {
    if (fs::is_regular_file(p)) return sha256_hex(read_file(p));
    std::vector<std::pair<std::string, std::string>> entries;
    for (const auto& e : fs::recursive_directory_iterator(p)) {
        if (e.is_regular_file())
            entries.emplace_back(fs::relative(e.path(), p).generic_string(), sha256_hex(read_file(e.path())));
    }
    std::sort(entries.begin(), entries.end());
    std::string material;
    for (const auto& [rel, h] : entries) material += rel + '\0' + h + '\n';
    return sha256_hex(material);
}

}  // namespace

Registry::Registry(fs::path root) : root_(std::move(root)) {}

int Registry::register_model(ModelCard card) {
    if (!card.gate_result.passed) {
        std::string why;
        for (const auto& r : card.gate_result.reasons) why += (why.empty() ? "" : "; ") + r;
        throw RegistrationRejected("model " + card.model_id + " did not pass the gate" +
                                   (why.empty() ? "" : ": " + why));
    }
    if (!valid_model_id(card.model_id))
        throw ConfigError("model id '" + card.model_id + "' must use only letters, digits, '-', '_' and '.'");

    std::error_code ec;
    fs::create_directories(root_, ec);
    if (ec) throw IoError("cannot create registry " + root_.string() + ": " + ec.message());
    FileLock lock(root_ / ".lock");

    const auto model_dir = root_ / card.model_id;
    const auto existing = versions_on_disk(model_dir);
    card.version = existing.empty() ? 1 : existing.back() + 1;
    if (card.created_at.empty()) card.created_at = now_iso8601();

    const auto final_dir = model_dir / std::to_string(card.version);
    const auto staging = model_dir / (".staging-" + std::to_string(card.version));
    fs::remove_all(staging, ec);
    fs::create_directories(staging / "artifact");

    ordered_json ref;
    ref["artifact_ref"] = card.artifact_ref ? ordered_json(*card.artifact_ref) : ordered_json(nullptr);
    if (card.artifact_ref && fs::exists(*card.artifact_ref, ec)) {
        const fs::path src = *card.artifact_ref;
        const auto hash = content_hash(src);
        const auto dest = staging / "artifact" / hash;
        if (fs::is_directory(src)) fs::copy(src, dest, fs::copy_options::recursive);
        else fs::copy_file(src, dest);
        ref["sha256"] = hash;
        ref["stored_as"] = "artifact/" + hash;
    } else if (card.artifact_ref) {
        ref["sha256"] = sha256_hex(*card.artifact_ref);
        ref["stored_as"] = nullptr;
    }
    write_file_atomic(staging / "artifact" / "REF.json", ref.dump(2) + "\n");
    write_file_atomic(staging / "card.json", to_json(card).dump(2) + "\n");

    if (fs::exists(final_dir, ec)) throw IoError("registry entry already exists: " + final_dir.string());
    fs::rename(staging, final_dir);

    // The index is derived data; rebuild it from disk under the lock.
    ordered_json index = {{"models", ordered_json::object()}};
    std::vector<std::string> models;
    for (const auto& e : fs::directory_iterator(root_)) {
        if (e.is_directory() && e.path().filename().string().front() != '.')
            models.push_back(e.path().filename().string());
    }
    std::sort(models.begin(), models.end());
    for (const auto& m : models) {
        auto vs = versions_on_disk(root_ / m);
        if (!vs.empty()) index["models"][m] = vs;
    }
    write_file_atomic(root_ / "index.json", index.dump(2) + "\n");
    return card.version;
}

std::vector<ModelCard> Registry::list(const std::optional<std::string>& model_id) const {
    std::vector<ModelCard> out;
    std::error_code ec;
    if (!fs::is_directory(root_, ec)) return out;
    std::map<std::string, std::vector<int>> entries;
    const auto index_path = root_ / "index.json";
    if (fs::exists(index_path, ec)) {
        const auto idx = json::parse(read_file(index_path));
        for (auto& [m, vs] : idx.at("models").items()) entries[m] = vs.get<std::vector<int>>();
    }
    for (const auto& [m, vs] : entries) {
        if (model_id && *model_id != m) continue;
        for (int v : vs) out.push_back(get(m, v));
    }
    return out;
}

ModelCard Registry::get(const std::string& model_id, int version) const {
    if (!valid_model_id(model_id)) throw ConfigError("invalid model id '" + model_id + "'");
    const auto path = root_ / model_id / std::to_string(version) / "card.json";
    std::error_code ec;
    if (!fs::is_regular_file(path, ec))
        throw ConfigError("no registered model " + model_id + " version " + std::to_string(version));
    return card_from_json(json::parse(read_file(path)));
}

// ---------------------------------------------------------------------------
// Knowledge base

std::string to_string(PairSource s) {
    switch (s) {
    case PairSource::distilled: return "distilled";
    case PairSource::deployment_feedback: return "deployment_feedback";
    case PairSource::manual: return "manual";
    }
    return "manual";
}

std::optional<PairSource> parse_pair_source(std::string_view s) {
    for (auto p : {PairSource::distilled, PairSource::deployment_feedback, PairSource::manual}) {
        if (to_string(p) == s) return p;
    }
    return std::nullopt;
}

void KnowledgePair::validate() const {
    if (trim(vulnerable_code).empty()) throw ConfigError("knowledge pair has empty vulnerable_code");
    if (trim(fixed_code).empty()) throw ConfigError("knowledge pair has empty fixed_code");
    if (!is_canonical_cwe(cwe_id)) throw ConfigError("knowledge pair cwe_id '" + cwe_id + "' is not CWE-<n>");
}

std::string pair_hash(const KnowledgePair& p) {
    std::string material = p.cwe_id;
    material.push_back('\0');
    material += p.vulnerable_code;
    material.push_back('\0');
    material += p.fixed_code;
    return sha256_hex(material);
}

namespace {

ordered_json pair_json(const KnowledgePair& p) {
    return {{"cwe_id", p.cwe_id},
            {"vulnerable_code", p.vulnerable_code},
            {"fixed_code", p.fixed_code},
            {"source", to_string(p.source)},
            {"confirmed_by", p.confirmed_by}};
}

KnowledgePair pair_from_json(const json& j) {
    KnowledgePair p;
    p.cwe_id = j.at("cwe_id").get<std::string>();
    p.vulnerable_code = j.at("vulnerable_code").get<std::string>();
    p.fixed_code = j.at("fixed_code").get<std::string>();
    auto src = parse_pair_source(j.at("source").get<std::string>());
    if (!src) throw ParseError("unknown pair source " + j.at("source").dump());
    p.source = *src;
    p.confirmed_by = j.at("confirmed_by").get<std::string>();
    return p;
}

}  // namespace

KnowledgeBase::KnowledgeBase(fs::path root) : root_(std::move(root)) {}

bool KnowledgeBase::ingest_feedback(const KnowledgePair& pair) {
    pair.validate();
    fs::create_directories(root_ / "pairs");
    FileLock lock(root_ / ".lock");
    const auto path = root_ / "pairs" / (pair_hash(pair) + ".json");
    std::error_code ec;
    if (fs::exists(path, ec)) return false;
    write_file_atomic(path, pair_json(pair).dump(2) + "\n");
    return true;
}

std::vector<KnowledgePair> KnowledgeBase::pairs() const {
    std::vector<fs::path> files;
    std::error_code ec;
    if (fs::is_directory(root_ / "pairs", ec)) {
        for (const auto& e : fs::directory_iterator(root_ / "pairs")) {
            if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
        }
    }
    std::sort(files.begin(), files.end());
    std::vector<KnowledgePair> out;
    for (const auto& f : files) {
        try {
            out.push_back(pair_from_json(json::parse(read_file(f))));
        } catch (const json::exception& e) {
            throw ParseError("malformed knowledge pair " + f.string() + ": " + e.what());
        }
    }
    return out;
}

std::size_t KnowledgeBase::size() const { return pairs().size(); }

corpus::Corpus KnowledgeBase::export_corpus(const std::string& name) const {
    corpus::Corpus c;
    c.name = name;
    c.manifest.created_at = now_iso8601();
    c.manifest.source_description = "knowledge base export from " + root_.string();
    for (const auto& p : pairs()) {
        const auto h = pair_hash(p).substr(0, 16);
        c.samples.push_back(corpus::make_sample(p.vulnerable_code, corpus::Language::c, corpus::Label::vulnerable,
                                                p.cwe_id, {name, h + "/vulnerable"}));
        c.samples.push_back(corpus::make_sample(p.fixed_code, corpus::Language::c, corpus::Label::benign, p.cwe_id,
                                                {name, h + "/fixed"}));
    }
    return c;
}

std::size_t KnowledgeBase::add_terms(const std::vector<std::string>& terms) {
    fs::create_directories(root_);
    FileLock lock(root_ / ".lock");
    auto current = this->terms();
    std::set<std::string> set(current.begin(), current.end());
    std::size_t added = 0;
    for (const auto& t : terms) {
        auto s = trim(t);
        if (!s.empty() && set.insert(s).second) ++added;
    }
    std::string text;
    for (const auto& t : set) text += t + "\n";
    write_file_atomic(root_ / "terms.txt", text);
    return added;
}

std::vector<std::string> KnowledgeBase::terms() const {
    std::error_code ec;
    const auto path = root_ / "terms.txt";
    if (!fs::exists(path, ec)) return {};
    std::vector<std::string> out;
    for (const auto& line : split_lines(read_file(path))) {
        auto s = trim(line);
        if (!s.empty()) out.push_back(s);
    }
    return out;
}

}  // namespace finesec::registry

// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include "finesec/common.hpp"

#include <array>
#include <cstdio>
#include <cstdlib>
#include <stdexcept>
#include <sys/wait.h>

namespace fstest {

TempDir::TempDir() {
    std::string tmpl = (fs::temp_directory_path() / "finesec-test-XXXXXX").string();
    if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
}

TempDir::~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
}

fs::path source_dir() { return FINESEC_SOURCE_DIR; }
fs::path cli_path() { return FINESEC_CLI_PATH; }
fs::path fake_adapter_path() { return FINESEC_FAKE_ADAPTER_PATH; }

std::string slurp(const fs::path& p) { return finesec::read_file(p); }

void spit(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    finesec::write_file_atomic(p, text);
}

std::map<std::string, std::string> snapshot_tree(const fs::path& root) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) files[fs::relative(e.path(), root).generic_string()] = slurp(e.path());
    }
    return files;
}

CommandResult run_command(const std::string& command_line) {
    CommandResult r;
    const std::string cmd = command_line + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) throw std::runtime_error("popen failed");
    std::array<char, 4096> buf{};
    std::size_t n;
    while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.output.append(buf.data(), n);
    const int status = pclose(pipe);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string shell_quote(const std::string& s) {
    std::string out = "'";
    for (char c : s) {
        if (c == '\'') out += "'\\''";
        else out.push_back(c);
    }
    return out + "'";
}

finesec::distill::DistilledItem valid_item(const std::string& source_id, const std::string& cwe) {
    finesec::distill::DistilledItem item;
    item.source_sample_id = source_id;
    item.label = cwe;
    item.rationale = "the size computation for " + source_id + " can wrap around";
    item.scenario = "a parser reading untrusted headers";
    item.synth_code = "int f_" + source_id + "(int a, int b)\n{\n    return a * b;\n}\n";
    item.psi.passed = true;
    return item;
}

EnvVar::EnvVar(std::string name, const std::string& value) : name_(std::move(name)) {
    if (const char* old = std::getenv(name_.c_str())) previous_ = old;
    setenv(name_.c_str(), value.c_str(), 1);
}

EnvVar::~EnvVar() {
    if (previous_) setenv(name_.c_str(), previous_->c_str(), 1);
    else unsetenv(name_.c_str());
}

}  // namespace fstest

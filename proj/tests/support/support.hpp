// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "finesec/corpus.hpp"
#include "finesec/distill.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fstest {

namespace fs = std::filesystem;

/// A fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir();
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const fs::path& rel) const { return path_ / rel; }

private:
    fs::path path_;
};

fs::path source_dir();
fs::path cli_path();
fs::path fake_adapter_path();

std::string slurp(const fs::path& p);
void spit(const fs::path& p, const std::string& text);

/// Every regular file below `root`, keyed by relative path.
std::map<std::string, std::string> snapshot_tree(const fs::path& root);

struct CommandResult {
    int exit_code = -1;
    std::string output;  // stdout and stderr interleaved
};

/// Runs a shell command line, capturing its output.
CommandResult run_command(const std::string& command_line);

std::string shell_quote(const std::string& s);

/// A distilled item whose snippet passes the validator.
finesec::distill::DistilledItem valid_item(const std::string& source_id, const std::string& cwe = "CWE-190");

/// Scoped environment variable override.
class EnvVar {
public:
    EnvVar(std::string name, const std::string& value);
    ~EnvVar();
    EnvVar(const EnvVar&) = delete;
    EnvVar& operator=(const EnvVar&) = delete;

private:
    std::string name_;
    std::optional<std::string> previous_;
};

}  // namespace fstest

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace finesec {

/// Base of every domain error raised by the library. The CLI maps these to
/// exit code 1.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad configuration or precondition violation supplied by the caller.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Input that does not conform to an expected format.
class ParseError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Lowercase hex SHA-256 of the given bytes.
std::string sha256_hex(std::string_view data);

/// "190", "cwe-190", "CWE 190", "CWE_190" -> "CWE-190". Returns nullopt for
/// anything that does not carry a decimal CWE number.
std::optional<std::string> canonical_cwe(std::string_view raw);

/// True iff `s` is exactly "CWE-<digits>".
bool is_canonical_cwe(std::string_view s);

/// Newline-delimited line count. A trailing newline terminates the last line
/// rather than opening a new one; the empty string counts as one line.
std::size_t count_lines(std::string_view text);

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);
bool icontains(std::string_view haystack, std::string_view needle);

/// Split on '\n'. A trailing newline does not produce an empty final element.
std::vector<std::string> split_lines(std::string_view text);

std::string read_file(const std::filesystem::path& path);

/// Writes via a temporary sibling and rename, so readers never observe a
/// partially written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

/// Seconds since the Unix epoch. Honors SOURCE_DATE_EPOCH so that runs can be
/// made byte-reproducible.
std::int64_t now_epoch_seconds();

/// ISO-8601 UTC timestamp ("2024-01-02T03:04:05Z") for now_epoch_seconds().
std::string now_iso8601();
std::string format_iso8601(std::int64_t epoch_seconds);

}  // namespace finesec

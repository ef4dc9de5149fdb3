// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "finesec/common.hpp"

#include <optional>
#include <string>
#include <sys/types.h>
#include <vector>

namespace finesec {

/// Child process with its stdout captured line by line. stdin is /dev/null,
/// stderr is inherited.
class Subprocess {
public:
    /// Throws IoError if the program cannot be started (exec failure included).
    static Subprocess spawn(const std::vector<std::string>& argv);

    Subprocess(Subprocess&&) noexcept;
    Subprocess& operator=(Subprocess&&) noexcept;
    Subprocess(const Subprocess&) = delete;
    Subprocess& operator=(const Subprocess&) = delete;
    /// Kills and reaps a child that is still running.
    ~Subprocess();

    /// Next stdout line without its newline; nullopt at EOF. A final
    /// unterminated line is still returned.
    std::optional<std::string> read_line();

    /// Waits for exit. Returns the exit status, or 128 + signal number.
    int wait();

    void kill();

private:
    Subprocess(pid_t pid, int out_fd) : pid_(pid), out_fd_(out_fd) {}

    pid_t pid_ = -1;
    int out_fd_ = -1;
    std::string buffer_;
    bool eof_ = false;
    std::optional<int> status_;
};

}  // namespace finesec

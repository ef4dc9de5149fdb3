// SPDX-License-Identifier: Apache-2.0
#include "finesec/subprocess.hpp"

#include <cerrno>
#include <csignal>
#include <cstring>
#include <fcntl.h>
#include <sys/wait.h>
#include <unistd.h>

namespace finesec {

namespace {

void close_fd(int& fd) {
    if (fd >= 0) ::close(fd);
    fd = -1;
}

}  // namespace

Subprocess Subprocess::spawn(const std::vector<std::string>& argv) {
    if (argv.empty()) throw ConfigError("empty command line");
    int out[2];
    int err[2];
    if (::pipe2(out, O_CLOEXEC) != 0) throw IoError(std::string("pipe: ") + std::strerror(errno));
    if (::pipe2(err, O_CLOEXEC) != 0) {
        ::close(out[0]);
        ::close(out[1]);
        throw IoError(std::string("pipe: ") + std::strerror(errno));
    }

    std::vector<char*> args;
    for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
    args.push_back(nullptr);

    const pid_t pid = ::fork();
    if (pid < 0) {
        for (int fd : {out[0], out[1], err[0], err[1]}) ::close(fd);
        throw IoError(std::string("fork: ") + std::strerror(errno));
    }
    if (pid == 0) {
        const int devnull = ::open("/dev/null", O_RDONLY);
        if (devnull >= 0) ::dup2(devnull, STDIN_FILENO);
        ::dup2(out[1], STDOUT_FILENO);
        ::execvp(args[0], args.data());
        const int e = errno;
        [[maybe_unused]] auto n = ::write(err[1], &e, sizeof e);
        ::_exit(127);
    }
    ::close(out[1]);
    ::close(err[1]);

    // The error pipe closes on a successful exec; otherwise it carries errno.
    int child_errno = 0;
    ssize_t n;
    do {
        n = ::read(err[0], &child_errno, sizeof child_errno);
    } while (n < 0 && errno == EINTR);
    ::close(err[0]);
    if (n == sizeof child_errno) {
        ::close(out[0]);
        int status;
        ::waitpid(pid, &status, 0);
        throw IoError("cannot start '" + argv[0] + "': " + std::strerror(child_errno));
    }
    return Subprocess(pid, out[0]);
}

Subprocess::Subprocess(Subprocess&& o) noexcept
    : pid_(o.pid_), out_fd_(o.out_fd_), buffer_(std::move(o.buffer_)), eof_(o.eof_), status_(o.status_) {
    o.pid_ = -1;
    o.out_fd_ = -1;
}

Subprocess& Subprocess::operator=(Subprocess&& o) noexcept {
    if (this != &o) {
        Subprocess old(std::move(o));  // reaps our previous child on scope exit
        std::swap(pid_, old.pid_);
        std::swap(out_fd_, old.out_fd_);
        std::swap(buffer_, old.buffer_);
        std::swap(eof_, old.eof_);
        std::swap(status_, old.status_);
    }
    return *this;
}

Subprocess::~Subprocess() {
    close_fd(out_fd_);
    if (pid_ > 0 && !status_) {
        kill();
        wait();
    }
}

std::optional<std::string> Subprocess::read_line() {
    for (;;) {
        if (auto nl = buffer_.find('\n'); nl != std::string::npos) {
            std::string line = buffer_.substr(0, nl);
            buffer_.erase(0, nl + 1);
            return line;
        }
        if (eof_ || out_fd_ < 0) {
            if (buffer_.empty()) return std::nullopt;
            std::string line = std::move(buffer_);
            buffer_.clear();
            return line;
        }
        char chunk[4096];
        const ssize_t n = ::read(out_fd_, chunk, sizeof chunk);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw IoError(std::string("read from child: ") + std::strerror(errno));
        }
        if (n == 0) {
            eof_ = true;
            close_fd(out_fd_);
        } else {
            buffer_.append(chunk, static_cast<std::size_t>(n));
        }
    }
}

int Subprocess::wait() {
    if (status_) return *status_;
    if (pid_ <= 0) return -1;
    int status = 0;
    while (::waitpid(pid_, &status, 0) < 0) {
        if (errno != EINTR) throw IoError(std::string("waitpid: ") + std::strerror(errno));
    }
    status_ = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
    return *status_;
}

void Subprocess::kill() {
    if (pid_ > 0 && !status_) ::kill(pid_, SIGKILL);
}

}  // namespace finesec

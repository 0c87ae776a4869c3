#pragma once

// A child process driven over its standard streams, one text line per
// message. POSIX only.

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <optional>
#include <string>
#include <thread>

#include "trailcam/error.hpp"

namespace trailcam {

class LineProcess {
 public:
  // Runs `command` through /bin/sh -c. stderr is inherited.
  explicit LineProcess(const std::string& command) {
    int to_child[2];
    int from_child[2];
    if (::pipe(to_child) != 0) throw IoError(std::string("pipe: ") + std::strerror(errno));
    if (::pipe(from_child) != 0) {
      ::close(to_child[0]);
      ::close(to_child[1]);
      throw IoError(std::string("pipe: ") + std::strerror(errno));
    }
    pid_ = ::fork();
    if (pid_ < 0) {
      for (int fd : {to_child[0], to_child[1], from_child[0], from_child[1]}) ::close(fd);
      throw IoError(std::string("fork: ") + std::strerror(errno));
    }
    if (pid_ == 0) {
      ::dup2(to_child[0], STDIN_FILENO);
      ::dup2(from_child[1], STDOUT_FILENO);
      for (int fd : {to_child[0], to_child[1], from_child[0], from_child[1]}) ::close(fd);
      ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
      ::_exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    in_fd_ = to_child[1];
    out_fd_ = from_child[0];
    ::fcntl(in_fd_, F_SETFD, FD_CLOEXEC);
    ::fcntl(out_fd_, F_SETFD, FD_CLOEXEC);
  }

  LineProcess(const LineProcess&) = delete;
  LineProcess& operator=(const LineProcess&) = delete;

  ~LineProcess() { terminate(std::chrono::milliseconds(500)); }

  // Writes `line` plus a newline. Throws IoError if the child closed its input.
  void write_line(const std::string& line) {
    if (in_fd_ < 0) throw IoError("child input already closed");
    std::string data = line + "\n";
    std::size_t off = 0;
    struct sigaction ignore {}, old {};
    ignore.sa_handler = SIG_IGN;
    ::sigaction(SIGPIPE, &ignore, &old);
    while (off < data.size()) {
      ssize_t n = ::write(in_fd_, data.data() + off, data.size() - off);
      if (n < 0) {
        if (errno == EINTR) continue;
        int err = errno;
        ::sigaction(SIGPIPE, &old, nullptr);
        throw IoError(std::string("write to child: ") + std::strerror(err));
      }
      off += static_cast<std::size_t>(n);
    }
    ::sigaction(SIGPIPE, &old, nullptr);
  }

  // Next line without its newline; nullopt on end of stream. Throws IoError on
  // timeout.
  std::optional<std::string> read_line(std::chrono::milliseconds timeout) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
      auto pos = buffer_.find('\n');
      if (pos != std::string::npos) {
        std::string line = buffer_.substr(0, pos);
        buffer_.erase(0, pos + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
      }
      if (eof_) {
        if (buffer_.empty()) return std::nullopt;
        std::string line;
        line.swap(buffer_);
        return line;
      }
      auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
      if (remaining.count() <= 0) throw IoError("timed out waiting for child output");
      pollfd pfd{out_fd_, POLLIN, 0};
      int rc = ::poll(&pfd, 1, static_cast<int>(remaining.count()));
      if (rc < 0) {
        if (errno == EINTR) continue;
        throw IoError(std::string("poll: ") + std::strerror(errno));
      }
      if (rc == 0) continue;
      char chunk[4096];
      ssize_t n = ::read(out_fd_, chunk, sizeof chunk);
      if (n < 0) {
        if (errno == EINTR || errno == EAGAIN) continue;
        throw IoError(std::string("read from child: ") + std::strerror(errno));
      }
      if (n == 0)
        eof_ = true;
      else
        buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  void close_input() {
    if (in_fd_ >= 0) {
      ::close(in_fd_);
      in_fd_ = -1;
    }
  }

  // Closes the child's input, waits up to `grace`, then kills it.
  // Returns the exit status, or -1 when the child had to be killed.
  int terminate(std::chrono::milliseconds grace) {
    close_input();
    int status = -1;
    if (pid_ > 0) {
      const auto deadline = std::chrono::steady_clock::now() + grace;
      bool reaped = false;
      while (std::chrono::steady_clock::now() < deadline) {
        pid_t r = ::waitpid(pid_, &status, WNOHANG);
        if (r == pid_) {
          reaped = true;
          break;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
      }
      if (!reaped) {
        ::kill(pid_, SIGKILL);
        ::waitpid(pid_, &status, 0);
        status = -1;
      } else if (WIFEXITED(status)) {
        status = WEXITSTATUS(status);
      } else {
        status = -1;
      }
      pid_ = -1;
    }
    if (out_fd_ >= 0) {
      ::close(out_fd_);
      out_fd_ = -1;
    }
    return status;
  }

 private:
  pid_t pid_ = -1;
  int in_fd_ = -1;
  int out_fd_ = -1;
  std::string buffer_;
  bool eof_ = false;
};

}  // namespace trailcam

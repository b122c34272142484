#pragma once

/**
 * Bridge client
 *
 * A ModelSource backed by a child process that speaks a line-delimited JSON
 * protocol on its standard input and output (see "Bridge protocol" in README.md).
 * The client keeps exactly one request in flight, checks that every response
 * echoes the request id, and turns timeouts, malformed responses and child
 * death into ErrorKind::Bridge.
 *
 * POSIX only: the child is started with fork/exec through /bin/sh.
 */

#include "error.hpp"
#include "model.hpp"
#include "prob.hpp"

#include <nlohmann/json.hpp>

#include <cerrno>
#include <chrono>
#include <csignal>
#include <cstring>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <fcntl.h>
#include <poll.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

namespace scout {

struct BridgeOptions {
  std::string command;                           // run with /bin/sh -c
  std::chrono::milliseconds timeout{120000};     // per request
  std::optional<std::size_t> request_top_k;      // ask for truncated logits
};

namespace detail {

/// Child process with its stdin and stdout connected to pipes.
class ChildProcess {
public:
  explicit ChildProcess(const std::string& command) {
    int to_child[2];
    int from_child[2];
    if (::pipe(to_child) != 0) {
      throw Error(ErrorKind::Bridge, std::string("pipe failed: ") + std::strerror(errno));
    }
    if (::pipe(from_child) != 0) {
      ::close(to_child[0]);
      ::close(to_child[1]);
      throw Error(ErrorKind::Bridge, std::string("pipe failed: ") + std::strerror(errno));
    }
    // A dead child must surface as an error from write(), not a signal.
    struct sigaction current {};
    if (::sigaction(SIGPIPE, nullptr, &current) == 0 && current.sa_handler == SIG_DFL) {
      std::signal(SIGPIPE, SIG_IGN);
    }

    pid_ = ::fork();
    if (pid_ < 0) {
      for (int fd : {to_child[0], to_child[1], from_child[0], from_child[1]}) ::close(fd);
      throw Error(ErrorKind::Bridge, std::string("fork failed: ") + std::strerror(errno));
    }
    if (pid_ == 0) {
      // Own process group, so a kill also reaches anything the shell started.
      ::setpgid(0, 0);
      ::dup2(to_child[0], STDIN_FILENO);
      ::dup2(from_child[1], STDOUT_FILENO);
      for (int fd : {to_child[0], to_child[1], from_child[0], from_child[1]}) ::close(fd);
      ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
      ::_exit(127);
    }
    ::setpgid(pid_, pid_);
    ::close(to_child[0]);
    ::close(from_child[1]);
    write_fd_ = to_child[1];
    read_fd_ = from_child[0];
    ::fcntl(write_fd_, F_SETFD, FD_CLOEXEC);
    ::fcntl(read_fd_, F_SETFD, FD_CLOEXEC);
  }

  ChildProcess(const ChildProcess&) = delete;
  ChildProcess& operator=(const ChildProcess&) = delete;

  ~ChildProcess() { terminate(std::chrono::milliseconds(2000)); }

  void write_line(const std::string& line) {
    std::string data = line + "\n";
    std::size_t off = 0;
    while (off < data.size()) {
      const ssize_t n = ::write(write_fd_, data.data() + off, data.size() - off);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw Error(ErrorKind::Bridge, std::string("bridge write failed: ") + std::strerror(errno));
      }
      off += static_cast<std::size_t>(n);
    }
  }

  /// Next complete line, or a Bridge error on timeout or end of stream.
  std::string read_line(std::chrono::milliseconds timeout) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
      const auto nl = buffer_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        return line;
      }
      const auto left =
          std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) {
        throw Error(ErrorKind::Bridge, "timed out waiting for bridge response");
      }
      pollfd pfd{read_fd_, POLLIN, 0};
      const int ready = ::poll(&pfd, 1, static_cast<int>(std::min<long long>(left.count(), 1 << 30)));
      if (ready < 0) {
        if (errno == EINTR) continue;
        throw Error(ErrorKind::Bridge, std::string("poll failed: ") + std::strerror(errno));
      }
      if (ready == 0) continue;
      char chunk[65536];
      const ssize_t n = ::read(read_fd_, chunk, sizeof chunk);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw Error(ErrorKind::Bridge, std::string("bridge read failed: ") + std::strerror(errno));
      }
      if (n == 0) {
        throw Error(ErrorKind::Bridge, "bridge process closed its output");
      }
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  /// Closes the pipes and reaps the child, killing it after the grace period.
  void terminate(std::chrono::milliseconds grace) {
    if (pid_ <= 0) return;
    if (write_fd_ >= 0) ::close(write_fd_);
    write_fd_ = -1;
    const auto deadline = std::chrono::steady_clock::now() + grace;
    int status = 0;
    while (::waitpid(pid_, &status, WNOHANG) == 0) {
      if (std::chrono::steady_clock::now() >= deadline) {
        ::kill(-pid_, SIGKILL);
        ::waitpid(pid_, &status, 0);
        break;
      }
      ::usleep(1000);
    }
    if (read_fd_ >= 0) ::close(read_fd_);
    read_fd_ = -1;
    pid_ = -1;
  }

  void kill_now() {
    if (pid_ > 0) ::kill(-pid_, SIGKILL);
    terminate(std::chrono::milliseconds(0));
  }

  bool running() const noexcept { return pid_ > 0; }

private:
  pid_t pid_ = -1;
  int write_fd_ = -1;
  int read_fd_ = -1;
  std::string buffer_;
};

} // namespace detail

class BridgeSource final : public ModelSource {
public:
  explicit BridgeSource(BridgeOptions options) : options_(std::move(options)), child_(options_.command) {
    const auto reply = request("INFO", nlohmann::json::object());
    try {
      info_.vocab_size = reply.at("vocab_size").get<std::size_t>();
      const auto& eos = reply.at("eos_token_id");
      if (!eos.is_null()) info_.eos_token_id = eos.get<TokenId>();
      info_.name = reply.value("name", std::string("bridge"));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::Bridge, std::string("malformed INFO response: ") + e.what());
    }
    if (info_.vocab_size == 0) throw Error(ErrorKind::Bridge, "bridge reports an empty vocabulary");
    if (info_.eos_token_id && *info_.eos_token_id >= info_.vocab_size) {
      throw Error(ErrorKind::Bridge, "bridge eos_token_id outside vocabulary");
    }
  }

  ~BridgeSource() override {
    if (!child_.running()) return;
    try {
      nlohmann::json msg{{"id", next_id_++}, {"op", "SHUTDOWN"}};
      child_.write_line(msg.dump());
    } catch (const Error&) {
    }
    child_.terminate(std::chrono::milliseconds(2000));
  }

  const ModelInfo& info() const override { return info_; }

  LogitVector next_logits(const StepQuery& query) override {
    auto out = step(query);
    if (out.complete) {
      throw Error(ErrorKind::SequenceTooLong, "bridge reports the prefix as finished");
    }
    return std::move(out.logits);
  }

  bool is_complete(const StepQuery& query) override { return step(query).complete; }

  StepOutcome step(const StepQuery& query) override {
    nlohmann::json payload{{"prompt", ids_json(query.prompt_tokens)}, {"prefix", ids_json(query.generated_prefix)}};
    if (options_.request_top_k) payload["top_k"] = *options_.request_top_k;
    const auto reply = request("LOGITS", payload);

    StepOutcome out;
    out.complete = reply.value("terminal", false);
    if (out.complete) return out;
    try {
      const auto& values = reply.at("logits");
      if (reply.contains("ids")) {
        const auto& ids = reply.at("ids");
        if (!ids.is_array() || !values.is_array() || ids.size() != values.size()) {
          throw Error(ErrorKind::Bridge, "LOGITS ids and logits differ in length");
        }
        out.logits.assign(info_.vocab_size, kOutOfSupport);
        for (std::size_t i = 0; i < ids.size(); ++i) {
          const auto id = ids[i].get<std::size_t>();
          if (id >= info_.vocab_size) throw Error(ErrorKind::Bridge, "LOGITS id outside vocabulary");
          out.logits[id] = logit_value(values[i]);
        }
      } else {
        if (!values.is_array() || values.size() != info_.vocab_size) {
          throw Error(ErrorKind::Bridge, "LOGITS vector length differs from vocab_size");
        }
        out.logits.reserve(values.size());
        for (const auto& v : values) out.logits.push_back(logit_value(v));
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::Bridge, std::string("malformed LOGITS response: ") + e.what());
    }
    return out;
  }

  std::string detokenize(std::span<const TokenId> tokens) const override {
    const auto reply = request("DETOKENIZE", {{"tokens", ids_json(tokens)}});
    if (!reply.contains("text") || !reply.at("text").is_string()) {
      throw Error(ErrorKind::Bridge, "malformed DETOKENIZE response");
    }
    return reply.at("text").get<std::string>();
  }

  TokenSeq tokenize(std::string_view text) override {
    const auto reply = request("TOKENIZE", {{"text", std::string(text)}});
    try {
      return reply.at("tokens").get<TokenSeq>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::Bridge, std::string("malformed TOKENIZE response: ") + e.what());
    }
  }

  std::uint64_t requests_sent() const noexcept { return next_id_; }

private:
  static nlohmann::json ids_json(std::span<const TokenId> ids) { return nlohmann::json(TokenSeq(ids.begin(), ids.end())); }

  static double logit_value(const nlohmann::json& v) {
    if (v.is_null()) return kOutOfSupport;
    if (!v.is_number()) throw Error(ErrorKind::Bridge, "non-numeric logit");
    return v.get<double>();
  }

  nlohmann::json request(std::string_view op, nlohmann::json payload) const {
    const std::uint64_t id = next_id_++;
    payload["id"] = id;
    payload["op"] = std::string(op);
    nlohmann::json reply;
    try {
      child_.write_line(payload.dump());
      const std::string line = child_.read_line(options_.timeout);
      reply = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      child_.kill_now();
      throw Error(ErrorKind::Bridge, std::string("unparseable bridge response: ") + e.what());
    } catch (const Error&) {
      child_.kill_now();
      throw;
    }
    if (!reply.is_object() || !reply.contains("id") || reply.at("id") != id) {
      child_.kill_now();
      throw Error(ErrorKind::Bridge, "bridge response id does not match request " + std::to_string(id));
    }
    if (!reply.value("ok", false)) {
      throw Error(ErrorKind::Bridge,
                  std::string(op) + " failed: " + reply.value("error", std::string("unspecified error")));
    }
    return reply;
  }

  BridgeOptions options_;
  mutable detail::ChildProcess child_;
  mutable std::uint64_t next_id_ = 0;
  ModelInfo info_;
};

} // namespace scout

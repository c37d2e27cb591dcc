#pragma once

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <csignal>
#include <cstring>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "agent.hpp"
#include "errors.hpp"
#include "meeting.hpp"
#include "policies.hpp"

namespace crewsim {

inline constexpr int kProtocolVersion = 1;

class ConnectionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Newline-delimited messages over a pair of file descriptors.
class LineChannel {
 public:
  enum class Status { Ok, Timeout, Closed };

  LineChannel(int read_fd, int write_fd, bool owns = true, pid_t child = -1)
      : rfd_(read_fd), wfd_(write_fd), owns_(owns), child_(child) {
    std::signal(SIGPIPE, SIG_IGN);
  }
  LineChannel(const LineChannel&) = delete;
  LineChannel& operator=(const LineChannel&) = delete;
  ~LineChannel() { close(); }

  // timeout_ms < 0 waits forever.
  Status read_line(std::string& out, int timeout_ms) {
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(std::max(timeout_ms, 0));
    for (;;) {
      if (auto nl = buf_.find('\n'); nl != std::string::npos) {
        out = buf_.substr(0, nl);
        if (!out.empty() && out.back() == '\r') out.pop_back();
        buf_.erase(0, nl + 1);
        return Status::Ok;
      }
      if (closed_ || rfd_ < 0) return Status::Closed;
      int wait = -1;
      if (timeout_ms >= 0) {
        const auto left =
            std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now()).count();
        wait = static_cast<int>(std::max<long long>(left, 0));
      }
      pollfd p{rfd_, POLLIN, 0};
      const int r = ::poll(&p, 1, wait);
      if (r < 0) {
        if (errno == EINTR) continue;
        closed_ = true;
        return Status::Closed;
      }
      if (r == 0) return Status::Timeout;
      char chunk[4096];
      const ssize_t n = ::read(rfd_, chunk, sizeof chunk);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) {
        closed_ = true;
        return Status::Closed;
      }
      buf_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  bool write_line(const std::string& line) {
    if (wfd_ < 0 || write_failed_) return false;
    std::string data = line;
    data += '\n';
    std::size_t off = 0;
    while (off < data.size()) {
      const ssize_t n = ::write(wfd_, data.data() + off, data.size() - off);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) {
        write_failed_ = true;
        return false;
      }
      off += static_cast<std::size_t>(n);
    }
    return true;
  }

  bool send(const nlohmann::json& j) { return write_line(j.dump()); }

  // Throws away anything already buffered or immediately readable.
  void drain() {
    std::string junk;
    while (read_line(junk, 0) == Status::Ok) {
    }
  }

  bool closed() const { return closed_ || write_failed_; }

  void close() {
    if (owns_) {
      if (rfd_ >= 0) ::close(rfd_);
      if (wfd_ >= 0 && wfd_ != rfd_) ::close(wfd_);
    }
    rfd_ = wfd_ = -1;
    closed_ = true;
    if (child_ > 0) {
      int status = 0;
      if (::waitpid(child_, &status, WNOHANG) == 0) {
        ::kill(child_, SIGTERM);
        ::waitpid(child_, &status, 0);
      }
      child_ = -1;
    }
  }

 private:
  int rfd_, wfd_;
  bool owns_;
  pid_t child_;
  std::string buf_;
  bool closed_ = false;
  bool write_failed_ = false;
};

using ChannelPtr = std::shared_ptr<LineChannel>;

inline std::pair<std::string, int> split_address(const std::string& addr) {
  const auto colon = addr.rfind(':');
  if (colon == std::string::npos) throw ConfigError("address \"" + addr + "\" is not HOST:PORT");
  return {addr.substr(0, colon), std::stoi(addr.substr(colon + 1))};
}

inline ChannelPtr tcp_connect(const std::string& host, int port) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0)
    throw ConnectionError("cannot resolve " + host);
  int fd = -1;
  for (addrinfo* a = res; a; a = a->ai_next) {
    fd = ::socket(a->ai_family, a->ai_socktype, a->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, a->ai_addr, a->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0) throw ConnectionError("cannot connect to " + host + ":" + std::to_string(port));
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return std::make_shared<LineChannel>(fd, fd);
}

class TcpListener {
 public:
  TcpListener(const std::string& host, int port) {
    std::signal(SIGPIPE, SIG_IGN);
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw ConnectionError("socket() failed");
    int one = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<uint16_t>(port));
    if (::inet_pton(AF_INET, host == "localhost" ? "127.0.0.1" : host.c_str(), &addr.sin_addr) != 1) {
      ::close(fd_);
      throw ConnectionError("bad bind address " + host);
    }
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(fd_, 64) != 0) {
      ::close(fd_);
      throw ConnectionError("cannot bind " + host + ":" + std::to_string(port) + ": " + std::strerror(errno));
    }
    socklen_t len = sizeof addr;
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
  }
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;
  ~TcpListener() {
    if (fd_ >= 0) ::close(fd_);
  }

  int port() const { return port_; }

  ChannelPtr accept(int timeout_ms) {
    pollfd p{fd_, POLLIN, 0};
    if (::poll(&p, 1, timeout_ms) <= 0) return nullptr;
    const int c = ::accept(fd_, nullptr, nullptr);
    if (c < 0) return nullptr;
    int one = 1;
    ::setsockopt(c, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    return std::make_shared<LineChannel>(c, c);
  }

 private:
  int fd_ = -1;
  int port_ = 0;
};

// Runs `command` under /bin/sh with its stdin/stdout wired to the channel.
inline ChannelPtr spawn_process(const std::string& command) {
  int to_child[2], from_child[2];
  if (::pipe(to_child) != 0) throw ConnectionError("pipe() failed");
  if (::pipe(from_child) != 0) {
    ::close(to_child[0]);
    ::close(to_child[1]);
    throw ConnectionError("pipe() failed");
  }
  const pid_t pid = ::fork();
  if (pid < 0) throw ConnectionError("fork() failed");
  if (pid == 0) {
    ::dup2(to_child[0], 0);
    ::dup2(from_child[1], 1);
    ::close(to_child[0]);
    ::close(to_child[1]);
    ::close(from_child[0]);
    ::close(from_child[1]);
    ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(to_child[0]);
  ::close(from_child[1]);
  return std::make_shared<LineChannel>(from_child[0], to_child[1], true, pid);
}

inline ChannelPtr stdio_channel() { return std::make_shared<LineChannel>(0, 1, false); }

// ---- wire messages --------------------------------------------------------

namespace wire {

inline std::string player_name(const PlayerId& p) { return "Player " + p; }

inline std::vector<std::string> player_names(const std::vector<PlayerId>& ps) {
  std::vector<std::string> out;
  for (const auto& p : ps) out.push_back(player_name(p));
  return out;
}

inline nlohmann::json handshake(const SeatInfo& s) {
  nlohmann::json j = {{"type", "handshake"},
                      {"protocol", kProtocolVersion},
                      {"player", s.player},
                      {"role", std::string(to_string(s.role))}};
  if (s.role == Role::Imposter) j["imposters"] = s.imposters;
  return j;
}

inline nlohmann::json observe(int tick, const std::string& text) {
  return {{"type", "observe"}, {"tick", tick}, {"text", text}};
}
inline nlohmann::json broadcast(const std::string& text) { return {{"type", "broadcast"}, {"text", text}}; }
inline nlohmann::json act_request(int tick, const ActionSet& legal) {
  return {{"type", "act_request"}, {"tick", tick}, {"legal", tokens_of(legal)}};
}
inline nlohmann::json vote_request(const ActionSet& legal) {
  return {{"type", "vote_request"}, {"legal", tokens_of(legal)}};
}
inline nlohmann::json survey_request(const std::vector<PlayerId>& candidates) {
  return {{"type", "survey_request"}, {"candidates", player_names(candidates)}};
}
inline nlohmann::json talk_request(int cap_tokens, int cap_chars) {
  return {{"type", "talk_request"}, {"cap_tokens", cap_tokens}, {"cap_chars", cap_chars}};
}
inline nlohmann::json game_over(const Outcome& o, double reward) {
  return {{"type", "game_over"}, {"winner", std::string(to_string(o.winner))}, {"reward", reward}};
}
inline nlohmann::json error(const std::string& code, const std::string& detail = {}) {
  nlohmann::json j = {{"type", "error"}, {"code", code}};
  if (!detail.empty()) j["detail"] = detail;
  return j;
}

// Parses one agent reply of the expected type; throws ProtocolError when
// the line is not JSON, has the wrong type, or lacks required fields.
inline nlohmann::json parse_reply(const std::string& line, std::string_view expected) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception&) {
    throw ProtocolError("", std::string(expected), "reply is not JSON");
  }
  if (!j.is_object() || !j.contains("type") || !j["type"].is_string() || j["type"] != expected)
    throw ProtocolError("", std::string(expected), "expected a \"" + std::string(expected) + "\" reply");
  auto require = [&](const char* key, bool ok) {
    if (!ok) throw ProtocolError("", std::string(expected), std::string("reply field \"") + key + "\" missing or mistyped");
  };
  if (expected == "act" || expected == "vote") require("token", j.contains("token") && j["token"].is_string());
  if (expected == "talk") {
    require("text", j.contains("text") && j["text"].is_string());
    if (j.contains("tokens")) require("tokens", j["tokens"].is_number_integer());
  }
  if (expected == "survey") {
    require("probs", j.contains("probs") && j["probs"].is_object());
    for (const auto& [k, v] : j["probs"].items()) require("probs", v.is_number());
  }
  return j;
}

}  // namespace wire

// A seat played by a remote process. Degrades to a Random backfill when
// the session drops or misbehaves; every degraded answer is flagged.
class ExternalAgent : public Agent {
 public:
  ExternalAgent(ChannelPtr channel, std::string id, int timeout_ms, std::uint64_t seed)
      : channel_(std::move(channel)), id_(std::move(id)), timeout_ms_(timeout_ms), backup_(seed) {}

  std::string policy_id() const override { return id_; }
  bool wants_text() const override { return true; }

  void begin(const SeatInfo& seat) override {
    seat_ = seat;
    if (!channel_->send(wire::handshake(seat))) drop();
  }

  Choice act(const Aoh& aoh, const ActionSet& legal) override {
    forward(aoh);
    return choose(aoh, legal, wire::act_request(aoh.memory().tick, legal), "act", Action::wait());
  }

  Choice vote(const Aoh& aoh, const ActionSet& legal) override {
    forward(aoh);
    return choose(aoh, legal, wire::vote_request(legal), "vote", Action::abstain());
  }

  TalkChoice talk(const Aoh& aoh, int cap_tokens, int cap_chars) override {
    forward(aoh);
    TalkChoice t;
    if (dropped_) {
      t = backup_.talk(aoh, cap_tokens, cap_chars);
      t.fallback = true;
      return t;
    }
    auto reply = request(wire::talk_request(cap_tokens, cap_chars), "talk");
    if (!reply) {
      t.timed_out = !dropped_;
      t.fallback = dropped_;
      return t;
    }
    t.text = (*reply)["text"].get<std::string>();
    if (reply->contains("tokens")) t.declared_tokens = (*reply)["tokens"].get<int>();
    return t;
  }

  SurveyChoice survey(const Aoh& aoh, const std::vector<PlayerId>& candidates) override {
    forward(aoh);
    SurveyChoice s;
    if (dropped_) {
      s = backup_.survey(aoh, candidates);
      s.fallback = true;
      return s;
    }
    auto reply = request(wire::survey_request(candidates), "survey");
    if (!reply) {
      s.probs = uniform(candidates.size());
      s.timed_out = !dropped_;
      s.fallback = dropped_;
      return s;
    }
    const auto& probs = (*reply)["probs"];
    bool known = true;
    for (const auto& [k, v] : probs.items()) {
      bool found = false;
      for (const auto& c : candidates) found |= k == wire::player_name(c);
      known &= found;
    }
    for (const auto& c : candidates) {
      const auto key = wire::player_name(c);
      s.probs.push_back(probs.contains(key) ? probs[key].get<double>() : 0.0);
    }
    try {
      if (!known) throw SurveyError(id_, "survey names a non-candidate");
      validate_distribution(candidates, s.probs, id_);
    } catch (const SurveyError& e) {
      channel_->send(wire::error("bad_survey", e.what()));
      s.probs = uniform(candidates.size());
      s.rejected = true;
    }
    return s;
  }

  void end(const Outcome& o, double reward) override {
    if (last_) forward(*last_);
    if (!dropped_) channel_->send(wire::game_over(o, reward));
  }

  bool dropped() const { return dropped_; }

 private:
  void drop() {
    dropped_ = true;
    channel_->close();
  }

  // Sends every AOH entry the agent has not seen yet.
  void forward(const Aoh& aoh) {
    last_ = &aoh;
    const auto& entries = aoh.entries();
    for (; sent_ < entries.size(); ++sent_) {
      if (dropped_) continue;
      const AohEntry& e = entries[sent_];
      bool ok = true;
      switch (e.kind) {
        case EntryKind::Observe:
        case EntryKind::Gap: ok = channel_->send(wire::observe(e.tick, e.text)); break;
        case EntryKind::Menu:
        case EntryKind::OwnAction: break;
        default: ok = channel_->send(wire::broadcast(e.text)); break;
      }
      if (!ok) drop();
    }
  }

  // nullopt on timeout or a dropped session.
  std::optional<nlohmann::json> request(const nlohmann::json& msg, std::string_view type) {
    channel_->drain();
    if (!channel_->send(msg)) {
      drop();
      return std::nullopt;
    }
    std::string line;
    switch (channel_->read_line(line, timeout_ms_)) {
      case LineChannel::Status::Timeout: return std::nullopt;
      case LineChannel::Status::Closed: drop(); return std::nullopt;
      case LineChannel::Status::Ok: break;
    }
    try {
      return wire::parse_reply(line, type);
    } catch (const ProtocolError& e) {
      channel_->send(wire::error("malformed", e.what()));
      drop();
      return std::nullopt;
    }
  }

  Choice choose(const Aoh& aoh, const ActionSet& legal, const nlohmann::json& msg, std::string_view type,
                const Action& fallback_action) {
    Choice c;
    if (!dropped_) {
      auto reply = request(msg, type);
      if (reply) {
        const std::string token = (*reply)["token"].get<std::string>();
        for (std::size_t i = 0; i < legal.size(); ++i)
          if (token_of(legal[i]) == token) {
            c.index = i;
            return c;
          }
        channel_->send(wire::error("illegal_action", token));
        c.rejected = token;
        c.index = scripted::index_of(legal, fallback_action);
        return c;
      }
      if (!dropped_) {
        c.timed_out = true;
        c.index = scripted::index_of(legal, fallback_action);
        return c;
      }
    }
    c = type == "act" ? backup_.act(aoh, legal) : backup_.vote(aoh, legal);
    c.fallback = true;
    return c;
  }

  ChannelPtr channel_;
  std::string id_;
  int timeout_ms_;
  RandomAgent backup_;
  SeatInfo seat_;
  std::size_t sent_ = 0;
  const Aoh* last_ = nullptr;
  bool dropped_ = false;
};

// Resolves a policy spec: built-in name, checkpoint path, "tcp:HOST:PORT"
// or "exec:COMMAND".
struct PolicySpec {
  PolicyHandle handle;
  std::string transport;  // "", "tcp", "exec"
  std::string target;
};

inline PolicySpec parse_policy_spec(const std::string& spec) {
  PolicySpec p;
  if (spec == "random") {
    p.handle = PolicyHandle::random();
  } else if (spec == "scripted") {
    p.handle = PolicyHandle::scripted();
  } else if (spec == "scripted-crew") {
    p.handle = {"scripted-crew", PolicyKind::ScriptedCrew, nullptr, nullptr, false, false, {}};
  } else if (spec == "scripted-imposter") {
    p.handle = {"scripted-imposter", PolicyKind::ScriptedImposter, nullptr, nullptr, false, false, {}};
  } else if (spec.rfind("tcp:", 0) == 0 || spec.rfind("exec:", 0) == 0) {
    const auto colon = spec.find(':');
    p.transport = spec.substr(0, colon);
    p.target = spec.substr(colon + 1);
    p.handle = {spec, PolicyKind::External, nullptr, nullptr, false, false, spec};
  } else if (spec.size() > 5 && spec.substr(spec.size() - 5) == ".json") {
    p.handle = load_checkpoint(spec);
  } else {
    throw ConfigError("unknown policy spec \"" + spec + "\"");
  }
  return p;
}

inline ChannelPtr open_endpoint(const PolicySpec& p) {
  if (p.transport == "tcp") {
    auto [host, port] = split_address(p.target);
    return tcp_connect(host, port);
  }
  if (p.transport == "exec") return spawn_process(p.target);
  throw ConfigError("policy " + p.handle.id + " is not external");
}

// ---- agent side -----------------------------------------------------------

// Runs a uniform-random agent over a channel until game_over or EOF.
// Returns the number of messages handled.
inline int run_random_agent(LineChannel& ch, std::uint64_t seed) {
  Rng rng(seed);
  int handled = 0;
  std::string line;
  while (ch.read_line(line, -1) == LineChannel::Status::Ok) {
    ++handled;
    const auto msg = nlohmann::json::parse(line, nullptr, false);
    if (msg.is_discarded() || !msg.contains("type")) continue;
    const std::string type = msg["type"];
    if (type == "act_request" || type == "vote_request") {
      const auto legal = msg["legal"].get<std::vector<std::string>>();
      ch.send({{"type", type == "act_request" ? "act" : "vote"}, {"token", legal[rng.uniform_index(legal.size())]}});
    } else if (type == "talk_request") {
      ch.send({{"type", "talk"}, {"text", ""}});
    } else if (type == "survey_request") {
      const auto cands = msg["candidates"].get<std::vector<std::string>>();
      nlohmann::json probs = nlohmann::json::object();
      for (const auto& c : cands) probs[c] = 1.0 / static_cast<double>(cands.size());
      ch.send({{"type", "survey"}, {"probs", probs}});
    } else if (type == "game_over") {
      break;
    }
  }
  return handled;
}

}  // namespace crewsim

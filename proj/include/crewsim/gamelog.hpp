#pragma once

#include <deque>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "agent.hpp"
#include "config.hpp"
#include "errors.hpp"
#include "game.hpp"
#include "textgen.hpp"

namespace crewsim {

inline constexpr const char* kLogFormat = "crewsim-gamelog";

struct LogHeader {
  GameConfig config;
  std::vector<PlayerId> players;
  std::vector<std::string> policies;
  std::string engine_version = kEngineVersion;
};

struct GameLog {
  LogHeader header;
  std::vector<std::string> events;  // raw JSONL lines, compared byte for byte
};

inline nlohmann::ordered_json header_json(const LogHeader& h) {
  nlohmann::ordered_json j;
  j["format"] = kLogFormat;
  j["engine_version"] = h.engine_version;
  j["seed"] = h.config.seed;
  j["config"] = nlohmann::json(h.config);
  j["players"] = h.players;
  j["policies"] = h.policies;
  return j;
}

inline GameLog make_log(const GameRecord& r) {
  GameLog g;
  g.header.config = r.config;
  g.header.players = r.players;
  g.header.policies = r.policy_ids;
  g.events = r.log;
  return g;
}

inline std::string log_text(const GameLog& g) {
  std::string out = header_json(g.header).dump();
  out += '\n';
  for (const auto& e : g.events) {
    out += e;
    out += '\n';
  }
  return out;
}

inline void write_log(const GameLog& g, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << log_text(g);
}

inline GameLog parse_log(std::istream& in) {
  GameLog g;
  std::string line;
  if (!std::getline(in, line)) throw LogError("empty game log");
  const auto h = nlohmann::json::parse(line);
  if (h.value("format", "") != kLogFormat) throw LogError("not a game log");
  g.header.engine_version = h.value("engine_version", "");
  const auto major = [](const std::string& v) { return v.substr(0, v.find('.')); };
  if (major(g.header.engine_version) != major(kEngineVersion))
    throw VersionError("log written by engine " + g.header.engine_version + ", this is " + kEngineVersion);
  g.header.config = h.at("config").get<GameConfig>();
  g.header.players = h.at("players").get<std::vector<PlayerId>>();
  g.header.policies = h.at("policies").get<std::vector<std::string>>();
  while (std::getline(in, line))
    if (!line.empty()) g.events.push_back(line);
  return g;
}

inline GameLog read_log(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LogError("cannot open " + path);
  return parse_log(in);
}

// Feeds one seat's logged responses back into the runner.
class ReplayAgent : public Agent {
 public:
  ReplayAgent(std::string policy, std::deque<nlohmann::json> responses)
      : policy_(std::move(policy)), responses_(std::move(responses)) {}

  std::string policy_id() const override { return policy_; }
  bool wants_history() const override { return false; }

  Choice act(const Aoh&, const ActionSet& legal) override { return choose("act", legal); }
  Choice vote(const Aoh&, const ActionSet& legal) override { return choose("vote", legal); }

  TalkChoice talk(const Aoh&, int, int) override {
    const auto j = next("talk");
    TalkChoice t;
    t.text = j.value("text", "");
    if (j.contains("declared_tokens")) t.declared_tokens = j.at("declared_tokens").get<int>();
    t.timed_out = j.value("timeout", false);
    t.fallback = j.value("fallback", false);
    return t;
  }

  SurveyChoice survey(const Aoh&, const std::vector<PlayerId>& candidates) override {
    const auto j = next("survey");
    SurveyChoice s;
    const auto& probs = j.at("probs");
    for (const auto& c : candidates) {
      if (!probs.contains(c)) throw ProtocolError(j.value("actor", ""), "survey", "logged survey lacks " + c);
      s.probs.push_back(probs.at(c).get<double>());
    }
    s.timed_out = j.value("timeout", false);
    s.rejected = j.value("rejected", false);
    s.fallback = j.value("fallback", false);
    return s;
  }

 private:
  nlohmann::json next(std::string_view kind) {
    if (responses_.empty() || responses_.front().value("kind", "") != kind)
      throw ProtocolError("", std::string(kind), "log has no further " + std::string(kind) + " response");
    auto j = std::move(responses_.front());
    responses_.pop_front();
    return j;
  }

  Choice choose(std::string_view kind, const ActionSet& legal) {
    const auto j = next(kind);
    const std::string token = j.value("target", "");
    Choice c;
    c.index = legal.size();
    for (std::size_t i = 0; i < legal.size(); ++i)
      if (token_of(legal[i]) == token) c.index = i;
    if (c.index == legal.size()) throw ProtocolError(j.value("actor", ""), token, "logged token is not legal here");
    c.timed_out = j.value("timeout", false);
    c.rejected = j.value("rejected", "");
    c.fallback = j.value("fallback", false);
    return c;
  }

  std::string policy_;
  std::deque<nlohmann::json> responses_;
};

struct ReplayVerdict {
  bool pass = false;
  std::size_t events = 0;
  std::optional<std::size_t> divergence;  // 0-based event index
  std::string expected, actual, error;

  std::string summary() const {
    if (pass) return "PASS (" + std::to_string(events) + " events)";
    std::string s = "FAIL";
    if (divergence) s += " at event " + std::to_string(*divergence + 1);
    if (!error.empty()) s += ": " + error;
    if (!expected.empty() || !actual.empty()) s += "\n  logged:   " + expected + "\n  replayed: " + actual;
    return s;
  }
};

inline ReplayVerdict replay(const GameLog& log) {
  ReplayVerdict v;
  std::map<PlayerId, std::deque<nlohmann::json>> responses;
  for (const auto& line : log.events) {
    auto j = nlohmann::json::parse(line);
    const std::string kind = j.value("kind", "");
    if (kind == "act" || kind == "vote" || kind == "talk" || kind == "survey")
      responses[j.value("actor", "")].push_back(std::move(j));
  }
  std::vector<std::string> replayed;
  auto factory = [&](const SeatInfo& seat, std::size_t i) -> std::unique_ptr<Agent> {
    const std::string policy = i < log.header.policies.size() ? log.header.policies[i] : "replay";
    return std::make_unique<ReplayAgent>(policy, std::move(responses[seat.player]));
  };
  RunOptions opts;
  opts.log = true;
  opts.trajectories = false;
  std::optional<GameRunner> runner;
  try {
    runner.emplace(log.header.config, factory, opts);
    replayed = runner->run().log;
  } catch (const std::exception& ex) {
    v.error = ex.what();
    if (runner) replayed = runner->partial_log();
  }
  v.events = log.events.size();
  const std::size_t n = std::min(replayed.size(), log.events.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (replayed[i] != log.events[i]) {
      v.divergence = i;
      v.expected = log.events[i];
      v.actual = replayed[i];
      return v;
    }
  }
  if (replayed.size() != log.events.size()) {
    v.divergence = n;
    v.expected = n < log.events.size() ? log.events[n] : "<end of log>";
    v.actual = n < replayed.size() ? replayed[n] : "<end of replay>";
    if (v.error.empty()) v.error = "event count differs";
    return v;
  }
  v.pass = v.error.empty();
  return v;
}

// Discussion transcript: discoveries, messages, tallies and the outcome.
inline std::string transcript(const GameLog& log) {
  std::ostringstream out;
  for (const auto& line : log.events) {
    const auto j = nlohmann::json::parse(line);
    const std::string kind = j.value("kind", "");
    if (kind == "meeting_start" || kind == "tally" || kind == "outcome") {
      out << j.value("text", "") << '\n';
    } else if (kind == "message") {
      out << message_line(j.value("actor", ""), j.value("text", ""), false) << '\n';
    }
  }
  return out.str();
}

}  // namespace crewsim

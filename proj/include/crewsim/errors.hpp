#pragma once

#include <stdexcept>
#include <string>

namespace crewsim {

// Invalid GameConfig or TrainConfig; the message names the violated bound.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A query made against a player that cannot answer it (dead, ejected, busy).
class QueryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An agent supplied something the rules do not allow.
class ProtocolError : public std::runtime_error {
 public:
  ProtocolError(std::string player, std::string action, const std::string& what)
      : std::runtime_error(what), player_(std::move(player)), action_(std::move(action)) {}

  const std::string& player() const { return player_; }
  const std::string& action() const { return action_; }

 private:
  std::string player_;
  std::string action_;
};

class ParseError : public std::runtime_error {
 public:
  explicit ParseError(std::string token)
      : std::runtime_error("unrecognized action token: \"" + token + "\""), token_(std::move(token)) {}

  const std::string& token() const { return token_; }

 private:
  std::string token_;
};

class SurveyError : public std::runtime_error {
 public:
  SurveyError(std::string policy, const std::string& what)
      : std::runtime_error(what), policy_(std::move(policy)) {}

  const std::string& policy() const { return policy_; }

 private:
  std::string policy_;
};

class SignalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The policy cannot score tokens (Random / Scripted).
class CapabilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A game log or checkpoint file is unreadable.
class LogError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class VersionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A training update produced a non-finite loss; names the component.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::string component, const std::string& what)
      : std::runtime_error(what), component_(std::move(component)) {}
  const std::string& component() const { return component_; }

 private:
  std::string component_;
};

}  // namespace crewsim

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "aoh.hpp"
#include "engine.hpp"
#include "errors.hpp"
#include "features.hpp"

namespace crewsim {

enum class Head { Action, Vote, Talk };

// What a trainable policy saw when it chose: enough to recompute the
// choice's log-probability under new parameters.
struct Decision {
  Head head = Head::Action;
  std::vector<SparseRow> options;
  std::size_t chosen = 0;
  ValueFeatures value{};
  std::optional<WmInput> wm;  // gameplay actions only
};

struct Choice {
  std::size_t index = 0;
  double logprob = 0.0;
  double base_logprob = 0.0;
  std::optional<Decision> decision;
  bool timed_out = false;
  std::string rejected;   // illegal reply replaced by the default
  bool fallback = false;  // answered by the backfill after the session dropped
};

struct TalkChoice {
  std::string text;
  double logprob = 0.0;
  double base_logprob = 0.0;
  std::optional<Decision> decision;
  std::optional<int> declared_tokens;
  bool timed_out = false;
  bool fallback = false;
};

struct SurveyChoice {
  std::vector<double> probs;
  bool timed_out = false;
  bool rejected = false;  // reply failed validation; uniform used instead
  bool fallback = false;
};

// One seat's policy instance for one game.
class Agent {
 public:
  virtual ~Agent() = default;

  virtual std::string policy_id() const = 0;
  // Whether the agent reads the rendered text (otherwise only structured memory).
  virtual bool wants_text() const { return false; }
  virtual bool wants_history() const { return true; }

  virtual void begin(const SeatInfo&) {}
  virtual Choice act(const Aoh& aoh, const ActionSet& legal) = 0;
  virtual Choice vote(const Aoh& aoh, const ActionSet& legal) = 0;
  virtual TalkChoice talk(const Aoh& aoh, int cap_tokens, int cap_chars) = 0;
  virtual SurveyChoice survey(const Aoh& aoh, const std::vector<PlayerId>& candidates) = 0;

  virtual std::vector<double> token_logprobs(const Aoh&, const std::vector<std::string>&) {
    throw CapabilityError("policy " + policy_id() + " cannot score tokens");
  }

  virtual void end(const Outcome&, double /*reward*/) {}
};

}  // namespace crewsim

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "agent.hpp"
#include "state.hpp"
#include "textgen.hpp"

namespace crewsim {

enum class StepKind { Observe, Act, TalkToken, SurveyPoint, RewardMark };

struct SurveyRecord {
  int meeting = 0;
  int index = 0;  // position in the meeting's survey list
  std::vector<PlayerId> candidates;
  std::vector<double> probs;
  std::vector<SparseRow> rows;  // belief-head features per candidate
};

struct Step {
  StepKind kind = StepKind::Observe;
  int tick = 0;
  std::string text;  // observation text, action token, or message text
  std::optional<Observation> obs;
  double logprob = 0.0;
  double base_logprob = 0.0;
  std::optional<Decision> decision;
  std::optional<SurveyRecord> survey;
  double reward = 0.0;  // RewardMark
  int meeting = -1;     // TalkToken
  int message = -1;     // TalkToken: index in the meeting transcript

  bool is_decision() const { return kind == StepKind::Act || kind == StepKind::TalkToken; }
};

// One player's action-observation history as a training record.
struct Trajectory {
  PlayerId player;
  Role role = Role::Crewmate;
  std::string policy_id;
  bool trainable = false;
  std::vector<Step> steps;
  Outcome outcome;
  int tasks_completed = 0;
};

struct MeetingRecord {
  int index = 0;
  std::vector<PlayerId> speakers;  // transcript order
  std::vector<BeliefSurvey> surveys;
};

}  // namespace crewsim

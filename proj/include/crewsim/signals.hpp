#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "errors.hpp"
#include "features.hpp"
#include "state.hpp"
#include "trajectory.hpp"

namespace crewsim {

struct SignalCoeffs {
  double gamma = 0.99;
  double lambda_nl = 0.05;
  double lambda_l = 0.3;
  double lambda_s = 1.0;
  double lambda_wm = 1.0;
};

// B: summed belief of every surveyed crewmate on the imposter(s).
inline double belief_sum(const BeliefSurvey& survey, const std::vector<PlayerId>& imposters) {
  double b = 0.0;
  for (const auto& [believer, dist] : survey.beliefs) {
    bool found = false;
    for (const auto& imp : imposters) {
      if (auto it = dist.find(imp); it != dist.end()) {
        b += it->second;
        found = true;
      }
    }
    if (!found) throw SignalError("no imposter in the support of " + believer + "'s survey");
  }
  return b;
}

inline double belief_sum(const BeliefSurvey& survey, const PlayerId& imposter) {
  return belief_sum(survey, std::vector<PlayerId>{imposter});
}

inline double speaking_reward(const BeliefSurvey& prev, const BeliefSurvey& cur, const std::vector<PlayerId>& imposters) {
  if (prev.meeting != cur.meeting) throw SignalError("surveys come from different meetings");
  return belief_sum(cur, imposters) - belief_sum(prev, imposters);
}

inline double speaking_reward(const BeliefSurvey& prev, const BeliefSurvey& cur, const PlayerId& imposter) {
  return speaking_reward(prev, cur, std::vector<PlayerId>{imposter});
}

// r^s for each message of a meeting, in transcript order.
inline std::vector<double> meeting_speaking_rewards(const MeetingRecord& m, const std::vector<PlayerId>& imposters) {
  std::vector<double> out;
  for (std::size_t k = 0; k + 1 < m.surveys.size(); ++k)
    out.push_back(speaking_reward(m.surveys[k], m.surveys[k + 1], imposters));
  return out;
}

inline std::string vote_token(const PlayerId& p) { return "vote Player " + p; }

// The supervised label at a survey point: the vote token of the imposter.
inline std::string listening_target(const Trajectory& t, std::size_t step, const std::vector<PlayerId>& imposters) {
  if (step >= t.steps.size() || t.steps[step].kind != StepKind::SurveyPoint || !t.steps[step].survey)
    throw SignalError("step " + std::to_string(step) + " is not a survey point");
  if (t.role != Role::Crewmate) throw SignalError("imposters receive no listening labels");
  const auto& cands = t.steps[step].survey->candidates;
  for (const auto& imp : imposters)
    if (std::find(cands.begin(), cands.end(), imp) != cands.end()) return vote_token(imp);
  throw SignalError("imposter is not a survey candidate");
}

inline std::string listening_target(const Trajectory& t, std::size_t step, const PlayerId& imposter) {
  return listening_target(t, step, std::vector<PlayerId>{imposter});
}

// Index of the imposter among a survey's candidates (the label as a class).
inline std::optional<std::size_t> label_index(const SurveyRecord& s, const std::vector<PlayerId>& imposters) {
  for (const auto& imp : imposters)
    for (std::size_t i = 0; i < s.candidates.size(); ++i)
      if (s.candidates[i] == imp) return i;
  return std::nullopt;
}

struct WmTarget {
  std::size_t observe_step = 0;
  std::string text;
  std::vector<std::string> tokens;  // summary tokens scored by the world-model head
  std::array<int, 2> classes{};
};

// The next observation after a gameplay action. Absent at the end of the
// trajectory and when a meeting intervenes.
inline std::optional<WmTarget> wm_target(const Trajectory& t, std::size_t act) {
  if (act >= t.steps.size() || t.steps[act].kind != StepKind::Act) return std::nullopt;
  std::optional<Observation> prev;
  for (std::size_t i = act; i-- > 0;) {
    if (t.steps[i].kind == StepKind::Observe) {
      prev = t.steps[i].obs;
      break;
    }
  }
  if (!prev) return std::nullopt;
  for (std::size_t i = act + 1; i < t.steps.size(); ++i) {
    const Step& s = t.steps[i];
    if (s.kind == StepKind::Observe) {
      if (!s.obs) return std::nullopt;
      WmTarget w;
      w.observe_step = i;
      w.text = s.text;
      w.tokens = features::wm_tokens(*prev, *s.obs);
      w.classes = features::wm_classes(*prev, *s.obs);
      return w;
    }
    if (s.kind != StepKind::RewardMark) return std::nullopt;
  }
  return std::nullopt;
}

// Per-step signals, aligned index-for-index with Trajectory::steps.
struct SignalBatch {
  std::vector<double> env_reward;
  std::vector<double> task_reward;
  std::vector<double> speak_reward;  // already scaled by λ_S and signed by role
  std::vector<double> kl_term;       // λ_NL·(logprob − base_logprob), subtracted
  std::vector<std::optional<std::string>> listening_target;
  std::vector<std::optional<std::vector<std::string>>> wm_target;
  std::vector<double> discount;  // γ^k, k = index of the owning decision

  std::size_t size() const { return env_reward.size(); }
  double reward(std::size_t i) const { return env_reward[i] + task_reward[i] + speak_reward[i] - kl_term[i]; }

  std::string to_jsonl() const {
    std::string out;
    for (std::size_t i = 0; i < size(); ++i) {
      nlohmann::ordered_json j = {{"step", i},
                                  {"env_reward", env_reward[i]},
                                  {"task_reward", task_reward[i]},
                                  {"speak_reward", speak_reward[i]},
                                  {"kl_term", kl_term[i]},
                                  {"discount", discount[i]}};
      j["listening_target"] = listening_target[i] ? nlohmann::ordered_json(*listening_target[i]) : nullptr;
      j["wm_target"] = wm_target[i] ? nlohmann::ordered_json(*wm_target[i]) : nullptr;
      out += j.dump();
      out += '\n';
    }
    return out;
  }
};

inline SignalBatch assemble(const Trajectory& t, const std::vector<MeetingRecord>& meetings,
                            const std::vector<PlayerId>& imposters, const SignalCoeffs& c, Role role) {
  const std::size_t n = t.steps.size();
  SignalBatch b;
  b.env_reward.assign(n, 0.0);
  b.task_reward.assign(n, 0.0);
  b.speak_reward.assign(n, 0.0);
  b.kl_term.assign(n, 0.0);
  b.listening_target.assign(n, std::nullopt);
  b.wm_target.assign(n, std::nullopt);
  b.discount.assign(n, 1.0);
  if (n == 0) return b;

  const double sign = role == Role::Crewmate ? 1.0 : -1.0;
  int decision = -1;
  for (std::size_t i = 0; i < n; ++i) {
    const Step& s = t.steps[i];
    if (s.is_decision()) ++decision;
    b.discount[i] = std::pow(c.gamma, std::max(decision, 0));
    switch (s.kind) {
      case StepKind::Act:
      case StepKind::TalkToken:
        if (!std::isfinite(s.logprob) || !std::isfinite(s.base_logprob))
          throw SignalError("step " + std::to_string(i) + " lacks a finite logprob/base_logprob");
        b.kl_term[i] = c.lambda_nl * (s.logprob - s.base_logprob);
        if (s.kind == StepKind::Act) {
          if (auto w = wm_target(t, i)) b.wm_target[i] = w->tokens;
        } else if (s.meeting >= 0 && s.message >= 0) {
          const MeetingRecord* m = nullptr;
          for (const auto& rec : meetings)
            if (rec.index == s.meeting) m = &rec;
          if (!m || static_cast<std::size_t>(s.message) + 1 >= m->surveys.size())
            throw SignalError("no surveys bracket message " + std::to_string(s.message) + " of meeting " +
                              std::to_string(s.meeting));
          const auto k = static_cast<std::size_t>(s.message);
          b.speak_reward[i] = sign * c.lambda_s * speaking_reward(m->surveys[k], m->surveys[k + 1], imposters);
        }
        break;
      case StepKind::RewardMark: b.task_reward[i] = s.reward; break;
      case StepKind::SurveyPoint:
        if (t.role == Role::Crewmate) b.listening_target[i] = listening_target(t, i, imposters);
        break;
      case StepKind::Observe: break;
    }
  }
  b.env_reward[n - 1] = t.outcome.reward_for(t.role);
  return b;
}

// Collapses a per-step stream onto decisions: each decision owns every
// step from itself to the next decision; rewards before the first decision
// go to the first.
inline std::vector<double> decision_rewards(const Trajectory& t, const SignalBatch& b) {
  std::vector<double> out;
  double pending = 0.0;
  for (std::size_t i = 0; i < t.steps.size(); ++i) {
    if (t.steps[i].is_decision()) {
      out.push_back(pending);
      pending = 0.0;
    }
    (out.empty() ? pending : out.back()) += b.reward(i);
  }
  return out;
}

}  // namespace crewsim

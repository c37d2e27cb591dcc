#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "engine.hpp"
#include "errors.hpp"
#include "state.hpp"
#include "textgen.hpp"

namespace crewsim {

inline constexpr int kMessageCharCeiling = 160;
inline constexpr double kSurveyTolerance = 1e-6;

// Living players other than `believer`, sorted by name.
inline std::vector<PlayerId> survey_candidates(const GameState& s, const PlayerId& believer) {
  std::vector<PlayerId> out;
  for (const auto& p : s.players)
    if (p.alive() && p.id != believer) out.push_back(p.id);
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<PlayerId> living_crewmates(const GameState& s) {
  std::vector<PlayerId> out;
  for (const auto& p : s.players)
    if (p.alive() && p.role == Role::Crewmate) out.push_back(p.id);
  return out;
}

// Checks a survey reply. Drift within tolerance is renormalized away.
inline Distribution validate_distribution(const std::vector<PlayerId>& candidates, const std::vector<double>& probs,
                                          const std::string& policy) {
  if (probs.size() != candidates.size())
    throw SurveyError(policy, "survey reply from " + policy + " has wrong support size");
  double total = 0.0;
  for (double p : probs) {
    if (!std::isfinite(p) || p < 0.0) throw SurveyError(policy, "survey reply from " + policy + " has invalid mass");
    total += p;
  }
  if (std::abs(total - 1.0) > kSurveyTolerance)
    throw SurveyError(policy, "survey reply from " + policy + " is not normalized (sum=" + std::to_string(total) + ")");
  Distribution d;
  for (std::size_t i = 0; i < candidates.size(); ++i) d[candidates[i]] = probs[i] / total;
  return d;
}

struct SurveyAnswer {
  std::vector<double> probs;  // aligned with the candidate list
  std::string policy;
};

using SurveyFn = std::function<SurveyAnswer(const PlayerId& believer, const std::vector<PlayerId>& candidates)>;

// Queries every living crewmate; touches only the meeting's survey list.
inline BeliefSurvey run_survey(GameState& s, const SurveyFn& ask) {
  if (s.phase != Phase::Meeting || !s.meeting) throw QueryError("run_survey outside a meeting");
  MeetingState& m = *s.meeting;
  if (m.surveys.size() != m.transcript.size()) throw QueryError("survey already taken for this message");
  BeliefSurvey survey;
  survey.at_transcript_len = static_cast<int>(m.transcript.size());
  survey.meeting = m.index;
  for (const auto& believer : living_crewmates(s)) {
    const auto candidates = survey_candidates(s, believer);
    SurveyAnswer answer = ask(believer, candidates);
    survey.beliefs[believer] = validate_distribution(candidates, answer.probs, answer.policy);
  }
  m.surveys.push_back(survey);
  m.stage = m.next_speaker < m.speaker_queue.size() ? MeetingStage::Speaking : MeetingStage::Voting;
  return survey;
}

inline std::optional<PlayerId> current_speaker(const GameState& s) {
  if (!s.meeting || s.meeting->stage != MeetingStage::Speaking) return std::nullopt;
  return s.meeting->speaker_queue[s.meeting->next_speaker];
}

inline int count_words(std::string_view text) {
  int n = 0;
  bool in_word = false;
  for (char c : text) {
    const bool space = c == ' ' || c == '\t' || c == '\r' || c == '\v' || c == '\f';
    if (!space && !in_word) ++n;
    in_word = !space;
  }
  return n;
}

// Cuts a raw generation at the first newline, the token cap, or the
// character ceiling. Tokens are whitespace-delimited words unless the agent
// declared its own count.
inline Message truncate_message(const PlayerId& speaker, std::string raw, int token_cap,
                                std::optional<int> declared_tokens = std::nullopt,
                                int char_ceiling = kMessageCharCeiling) {
  Message m;
  m.speaker = speaker;
  m.terminated_by = Termination::Newline;
  if (auto nl = raw.find('\n'); nl != std::string::npos) raw.resize(nl);
  while (!raw.empty() && raw.back() == '\r') raw.pop_back();
  if (declared_tokens) {
    m.token_count = std::min(*declared_tokens, token_cap);
    if (*declared_tokens > token_cap) m.terminated_by = Termination::Cap;
  } else {
    int words = 0;
    bool in_word = false;
    std::size_t end = raw.size();
    for (std::size_t i = 0; i < raw.size(); ++i) {
      const bool space = raw[i] == ' ' || raw[i] == '\t';
      if (!space && !in_word) {
        if (words == token_cap) {
          end = i;
          m.terminated_by = Termination::Cap;
          break;
        }
        ++words;
      }
      in_word = !space;
    }
    raw.resize(end);
    while (!raw.empty() && (raw.back() == ' ' || raw.back() == '\t')) raw.pop_back();
  }
  if (static_cast<int>(raw.size()) > char_ceiling) {
    raw.resize(static_cast<std::size_t>(char_ceiling));
    m.terminated_by = Termination::Cap;
  }
  if (!declared_tokens) m.token_count = count_words(raw);
  m.text = std::move(raw);
  return m;
}

inline Message collect_message(GameState& s, const PlayerId& speaker, const std::string& raw,
                               std::optional<int> declared_tokens = std::nullopt) {
  auto head = current_speaker(s);
  if (!head || *head != speaker) throw QueryError("player " + speaker + " is not the current speaker");
  MeetingState& m = *s.meeting;
  if (m.surveys.size() != m.transcript.size() + 1) throw QueryError("message collected before survey");
  Message msg = truncate_message(speaker, raw, s.config.message_token_cap, declared_tokens);
  m.transcript.push_back(msg);
  ++m.next_speaker;
  m.stage = MeetingStage::Surveying;
  return msg;
}

// Vote menu: every living player (self included), then abstain.
inline ActionSet vote_actions(const GameState& s) {
  ActionSet out;
  for (const auto& p : s.players)
    if (p.alive()) out.push_back(Action::vote(p.id));
  out.push_back(Action::abstain());
  std::sort(out.begin(), out.end());
  return out;
}

// Plurality rule: ties among the top, or an abstain count at least as large
// as the top candidate's, eject nobody.
inline VoteOutcome tally(const std::map<PlayerId, Action>& votes) {
  VoteOutcome v;
  for (const auto& [voter, a] : votes) {
    if (a.kind == ActionKind::Abstain) ++v.abstain;
    else if (a.kind == ActionKind::Vote) ++v.counts[a.target];
    else throw ProtocolError(voter, token_of(a), "non-vote action cast by " + voter);
  }
  int top = 0;
  int at_top = 0;
  PlayerId leader;
  for (const auto& [name, n] : v.counts) {
    if (n > top) {
      top = n;
      at_top = 1;
      leader = name;
    } else if (n == top) {
      ++at_top;
    }
  }
  if (top > 0 && at_top == 1 && top > v.abstain) v.ejected = leader;
  return v;
}

inline VoteOutcome tally_votes(const GameState& s, const std::map<PlayerId, Action>& votes) {
  for (const auto& [voter, a] : votes) {
    const PlayerState* p = s.find(voter);
    if (p == nullptr || !p->alive()) throw ProtocolError(voter, token_of(a), "vote from non-living player " + voter);
    if (a.kind == ActionKind::Vote) {
      const PlayerState* t = s.find(a.target);
      if (t == nullptr || !t->alive())
        throw ProtocolError(voter, token_of(a), "vote for non-living player " + a.target);
    }
  }
  for (const auto& p : s.players)
    if (p.alive() && !votes.contains(p.id)) throw ProtocolError(p.id, "", "missing vote from " + p.id);
  return tally(votes);
}

// Applies the vote, clears corpses, returns to gameplay (or ends the game).
inline std::vector<Event> close_meeting(GameState& s, const VoteOutcome& v) {
  if (s.phase != Phase::Meeting) throw QueryError("close_meeting outside a meeting");
  std::vector<Event> events;
  if (v.ejected) {
    PlayerState* p = s.find(*v.ejected);
    p->status = Status::Ejected;
    events.push_back({s.clock, EventKind::Eject, p->id, {}, kMeetingRoom, {}});
  }
  s.corpses.clear();
  s.meeting->stage = MeetingStage::Done;
  s.meeting.reset();
  s.phase = Phase::Gameplay;
  if (auto over = settle(s)) events.push_back(*over);
  return events;
}

}  // namespace crewsim

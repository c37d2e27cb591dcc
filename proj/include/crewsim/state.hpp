#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "config.hpp"
#include "rng.hpp"
#include "types.hpp"

namespace crewsim {

inline constexpr int kStateVersion = 1;
inline constexpr Room kMeetingRoom{0, 0};

struct Task {
  int index = 0;  // rendered "Task <index>", 1-based per crewmate
  Room room;
  friend bool operator==(const Task&, const Task&) = default;
};

enum class Activity { None, Task, Travel };

struct PlayerState {
  PlayerId id;
  Role role = Role::Crewmate;
  Room room;
  Status status = Status::Alive;
  Activity activity = Activity::None;
  int busy_until = -1;  // last tick of the current activity
  std::optional<Room> travel_target;
  int kill_available_at = 0;
  std::vector<Task> remaining_tasks;
  int tasks_done = 0;

  bool alive() const { return status == Status::Alive; }
  bool busy(int clock) const { return activity != Activity::None && clock <= busy_until; }
  bool task_blind(int clock) const { return activity == Activity::Task && clock <= busy_until; }
  bool in_transit() const { return activity == Activity::Travel; }

  friend bool operator==(const PlayerState&, const PlayerState&) = default;
};

struct Corpse {
  PlayerId player;
  Room room;
  friend bool operator==(const Corpse&, const Corpse&) = default;
};

enum class EventKind { Kill, Witness, Report, TaskStart, TaskDone, MoveStart, Arrive, Eject, GameOver };

inline std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::Kill: return "kill";
    case EventKind::Witness: return "witness";
    case EventKind::Report: return "report";
    case EventKind::TaskStart: return "task_start";
    case EventKind::TaskDone: return "task_done";
    case EventKind::MoveStart: return "move_start";
    case EventKind::Arrive: return "arrive";
    case EventKind::Eject: return "eject";
    case EventKind::GameOver: return "game_over";
  }
  return "?";
}

// Witness events: actor is the killer, target the victim, observer the witness.
struct Event {
  int tick = 0;
  EventKind kind = EventKind::Kill;
  PlayerId actor;
  PlayerId target;
  std::optional<Room> room;
  PlayerId observer;

  friend bool operator==(const Event&, const Event&) = default;
};

enum class Termination { Newline, Cap };

struct Message {
  PlayerId speaker;
  std::string text;
  int token_count = 0;
  Termination terminated_by = Termination::Newline;
  friend bool operator==(const Message&, const Message&) = default;
};

using Distribution = std::map<PlayerId, double>;

struct BeliefSurvey {
  int at_transcript_len = 0;
  int meeting = 0;
  std::map<PlayerId, Distribution> beliefs;  // living crewmate -> candidates
  friend bool operator==(const BeliefSurvey&, const BeliefSurvey&) = default;
};

struct VoteOutcome {
  std::map<PlayerId, int> counts;  // candidates with at least one vote
  int abstain = 0;
  std::optional<PlayerId> ejected;
  friend bool operator==(const VoteOutcome&, const VoteOutcome&) = default;
};

enum class MeetingStage { Surveying, Speaking, Voting, Done };

struct MeetingState {
  int index = 0;
  PlayerId reporter;
  PlayerId corpse;
  Room corpse_room;
  std::vector<PlayerId> speaker_queue;
  std::size_t next_speaker = 0;
  std::vector<Message> transcript;
  std::vector<BeliefSurvey> surveys;
  MeetingStage stage = MeetingStage::Surveying;
  friend bool operator==(const MeetingState&, const MeetingState&) = default;
};

enum class Winner { Crewmates, Imposters, Draw };
enum class Cause { AllTasksDone, ImposterEjected, ImpostersOutnumber, StepCapReached };

inline std::string_view to_string(Winner w) {
  switch (w) {
    case Winner::Crewmates: return "Crewmates";
    case Winner::Imposters: return "Imposters";
    case Winner::Draw: return "Draw";
  }
  return "?";
}

inline std::string_view to_string(Cause c) {
  switch (c) {
    case Cause::AllTasksDone: return "AllTasksDone";
    case Cause::ImposterEjected: return "ImposterEjected";
    case Cause::ImpostersOutnumber: return "ImpostersOutnumber";
    case Cause::StepCapReached: return "StepCapReached";
  }
  return "?";
}

struct Outcome {
  Winner winner = Winner::Draw;
  Cause cause = Cause::StepCapReached;
  double crew_reward = 0.0;
  double imposter_reward = 0.0;

  static Outcome make(Winner w, Cause c) {
    const double r = w == Winner::Crewmates ? 1.0 : (w == Winner::Imposters ? -1.0 : 0.0);
    return {w, c, r, -r};
  }

  double reward_for(Role role) const { return role == Role::Crewmate ? crew_reward : imposter_reward; }

  friend bool operator==(const Outcome&, const Outcome&) = default;
};

enum class Phase { Gameplay, Meeting, Over };

inline std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::Gameplay: return "Gameplay";
    case Phase::Meeting: return "Meeting";
    case Phase::Over: return "Over";
  }
  return "?";
}

struct GameState {
  GameConfig config;
  int clock = 0;
  std::vector<PlayerState> players;
  std::vector<Corpse> corpses;
  int tasks_completed = 0;
  int tasks_total = 0;
  Phase phase = Phase::Gameplay;
  std::optional<MeetingState> meeting;
  std::optional<Outcome> outcome;
  int meetings_held = 0;
  Rng rng;

  const PlayerState* find(const PlayerId& id) const {
    for (const auto& p : players)
      if (p.id == id) return &p;
    return nullptr;
  }
  PlayerState* find(const PlayerId& id) {
    for (auto& p : players)
      if (p.id == id) return &p;
    return nullptr;
  }

  int living(Role role) const {
    int n = 0;
    for (const auto& p : players) n += (p.alive() && p.role == role) ? 1 : 0;
    return n;
  }

  std::vector<PlayerId> imposters() const {
    std::vector<PlayerId> out;
    for (const auto& p : players)
      if (p.role == Role::Imposter) out.push_back(p.id);
    return out;
  }

  friend bool operator==(const GameState&, const GameState&) = default;
};

// ---- JSON ------------------------------------------------------------------

inline void to_json(nlohmann::json& j, const Room& r) { j = nlohmann::json::array({r.x, r.y}); }
inline void from_json(const nlohmann::json& j, Room& r) {
  r.x = j.at(0).get<int>();
  r.y = j.at(1).get<int>();
}

inline void to_json(nlohmann::json& j, const Task& t) { j = {{"index", t.index}, {"room", t.room}}; }

inline void to_json(nlohmann::json& j, const PlayerState& p) {
  j = {{"id", p.id},
       {"role", to_string(p.role)},
       {"room", p.room},
       {"status", to_string(p.status)},
       {"busy_until", p.busy_until},
       {"travel_target", p.travel_target ? nlohmann::json(*p.travel_target) : nlohmann::json(nullptr)},
       {"kill_available_at", p.kill_available_at},
       {"remaining_tasks", p.remaining_tasks}};
  j["activity"] = p.activity == Activity::None ? "None" : (p.activity == Activity::Task ? "Task" : "Travel");
}

inline void to_json(nlohmann::json& j, const Message& m) {
  j = {{"speaker", m.speaker},
       {"text", m.text},
       {"token_count", m.token_count},
       {"terminated_by", m.terminated_by == Termination::Newline ? "Newline" : "Cap"}};
}

inline void to_json(nlohmann::json& j, const BeliefSurvey& s) {
  j = {{"at_transcript_len", s.at_transcript_len}, {"beliefs", s.beliefs}};
}

inline void to_json(nlohmann::json& j, const MeetingState& m) {
  static constexpr const char* stages[] = {"Surveying", "Speaking", "Voting", "Done"};
  j = {{"reporter", m.reporter},
       {"corpse", m.corpse},
       {"corpse_room", m.corpse_room},
       {"speaker_queue", m.speaker_queue},
       {"transcript", m.transcript},
       {"surveys", m.surveys},
       {"stage", stages[static_cast<int>(m.stage)]}};
}

inline void to_json(nlohmann::json& j, const Outcome& o) {
  j = {{"winner", to_string(o.winner)},
       {"cause", to_string(o.cause)},
       {"crew_reward", o.crew_reward},
       {"imposter_reward", o.imposter_reward}};
}

inline void to_json(nlohmann::json& j, const Event& e) {
  j = nlohmann::json{{"tick", e.tick},
                     {"kind", to_string(e.kind)},
                     {"actor", e.actor.empty() ? nlohmann::json(nullptr) : nlohmann::json(e.actor)},
                     {"target", e.target.empty() ? nlohmann::json(nullptr) : nlohmann::json(e.target)},
                     {"room", e.room ? nlohmann::json(*e.room) : nlohmann::json(nullptr)}};
  if (!e.observer.empty()) j["observer"] = e.observer;
}

inline nlohmann::json state_to_json(const GameState& s) {
  nlohmann::json corpses = nlohmann::json::array();
  for (const auto& c : s.corpses) corpses.push_back({{"player", c.player}, {"room", c.room}});
  nlohmann::json phase = {{"kind", to_string(s.phase)}};
  if (s.meeting) phase["meeting"] = *s.meeting;
  if (s.outcome) phase["outcome"] = *s.outcome;
  return {{"version", kStateVersion},
          {"config", s.config},
          {"clock", s.clock},
          {"players", s.players},
          {"corpses", corpses},
          {"tasks_completed", s.tasks_completed},
          {"tasks_total", s.tasks_total},
          {"phase", phase},
          {"rng", s.rng.state()}};
}

// JSONL event stream.
inline std::string events_to_jsonl(const std::vector<Event>& events) {
  std::string out;
  for (const auto& e : events) {
    out += nlohmann::json(e).dump();
    out += '\n';
  }
  return out;
}

}  // namespace crewsim

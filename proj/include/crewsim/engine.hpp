#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "config.hpp"
#include "errors.hpp"
#include "state.hpp"
#include "tokens.hpp"
#include "types.hpp"

namespace crewsim {

using ActionSet = std::vector<Action>;  // canonical order, no duplicates
using JointAction = std::map<PlayerId, Action>;

inline Room room_at(const GameConfig& c, std::size_t index) {
  return {static_cast<int>(index % static_cast<std::size_t>(c.grid_width)),
          static_cast<int>(index / static_cast<std::size_t>(c.grid_width))};
}

inline GameState new_game(const GameConfig& config) {
  config.validate();
  GameState s;
  s.config = config;
  s.rng = Rng(config.seed);

  std::vector<std::size_t> order(static_cast<std::size_t>(config.n_players));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  s.rng.shuffle(order);
  std::vector<bool> imposter(order.size(), false);
  for (int k = 0; k < config.n_imposters; ++k) imposter[order[static_cast<std::size_t>(k)]] = true;

  for (std::size_t i = 0; i < order.size(); ++i) {
    PlayerState p;
    p.id = PlayerId(kPlayerNames[i]);
    p.room = kMeetingRoom;
    p.role = imposter[i] ? Role::Imposter : Role::Crewmate;
    if (p.role == Role::Imposter) p.kill_available_at = config.n_cooldown;
    s.players.push_back(std::move(p));
  }
  const auto rooms = static_cast<std::size_t>(config.room_count());
  for (auto& p : s.players) {
    if (p.role != Role::Crewmate) continue;
    for (int k = 1; k <= config.tasks_per_crewmate; ++k)
      p.remaining_tasks.push_back({k, room_at(config, s.rng.uniform_index(rooms))});
    s.tasks_total += config.tasks_per_crewmate;
  }
  return s;
}

inline const PlayerState& require_living(const GameState& s, const PlayerId& id) {
  const PlayerState* p = s.find(id);
  if (p == nullptr) throw QueryError("unknown player " + id);
  if (!p->alive()) throw QueryError("player " + id + " is " + std::string(to_string(p->status)));
  return *p;
}

// Players physically in `room` this tick (travellers excluded).
inline std::vector<const PlayerState*> occupants(const GameState& s, Room room) {
  std::vector<const PlayerState*> out;
  for (const auto& p : s.players)
    if (p.alive() && !p.in_transit() && p.room == room) out.push_back(&p);
  return out;
}

inline ActionSet legal_actions(const GameState& s, const PlayerId& id) {
  const PlayerState& me = require_living(s, id);
  if (s.phase != Phase::Gameplay) throw QueryError("legal_actions queried outside gameplay");
  ActionSet out;
  if (me.busy(s.clock)) return out;

  for (Direction d : kDirections)
    if (s.config.contains(neighbor(me.room, d))) out.push_back(Action::go(d));
  out.push_back(Action::wait());
  if (me.role == Role::Crewmate &&
      std::any_of(me.remaining_tasks.begin(), me.remaining_tasks.end(),
                  [&](const Task& t) { return t.room == me.room; }))
    out.push_back(Action::do_task());
  if (me.role == Role::Imposter && s.clock >= me.kill_available_at) {
    for (const PlayerState* other : occupants(s, me.room))
      if (other->role == Role::Crewmate) out.push_back(Action::kill(other->id));
  }
  for (const auto& c : s.corpses)
    if (c.room == me.room) out.push_back(Action::report(c.player));
  std::sort(out.begin(), out.end());
  return out;
}

inline std::optional<Outcome> check_terminal(const GameState& s) {
  int imposters_total = 0;
  int imposters_ejected = 0;
  for (const auto& p : s.players) {
    if (p.role != Role::Imposter) continue;
    ++imposters_total;
    imposters_ejected += p.status == Status::Ejected ? 1 : 0;
  }
  if (s.tasks_total > 0 && s.tasks_completed >= s.tasks_total)
    return Outcome::make(Winner::Crewmates, Cause::AllTasksDone);
  if (imposters_total > 0 && imposters_ejected == imposters_total)
    return Outcome::make(Winner::Crewmates, Cause::ImposterEjected);
  if (s.living(Role::Imposter) >= s.living(Role::Crewmate))
    return Outcome::make(Winner::Imposters, Cause::ImpostersOutnumber);
  if (s.clock >= s.config.max_steps) return Outcome::make(Winner::Draw, Cause::StepCapReached);
  return std::nullopt;
}

// Applies the terminal check; returns the game-over event if the game ended.
inline std::optional<Event> settle(GameState& s) {
  if (s.phase == Phase::Over) return std::nullopt;
  auto outcome = check_terminal(s);
  if (!outcome) return std::nullopt;
  s.phase = Phase::Over;
  s.outcome = outcome;
  s.meeting.reset();
  Event e{s.clock, EventKind::GameOver, {}, {}, std::nullopt, {}};
  e.actor = std::string(to_string(outcome->winner));
  e.target = std::string(to_string(outcome->cause));
  return e;
}

// Moves every living player to the meeting room, cancels activities and
// draws the speaker order: one seeded permutation, traversed cycle-wise.
inline MeetingState open_meeting(GameState& s, const PlayerId& reporter, const PlayerId& corpse) {
  MeetingState m;
  m.index = s.meetings_held++;
  m.reporter = reporter;
  m.corpse = corpse;
  for (const auto& c : s.corpses)
    if (c.player == corpse) m.corpse_room = c.room;
  std::vector<PlayerId> living;
  for (auto& p : s.players) {
    if (!p.alive()) continue;
    p.room = kMeetingRoom;
    p.activity = Activity::None;
    p.busy_until = -1;
    p.travel_target.reset();
    living.push_back(p.id);
  }
  s.rng.shuffle(living);
  for (int cycle = 0; cycle < s.config.discussion_cycles; ++cycle)
    m.speaker_queue.insert(m.speaker_queue.end(), living.begin(), living.end());
  m.stage = MeetingStage::Surveying;
  s.phase = Phase::Meeting;
  s.meeting = m;
  return m;
}

// One simultaneous-move tick. Resolution order: kills, reports, tasks,
// movement, clock advance, terminal check.
inline std::vector<Event> step(GameState& s, const JointAction& joint) {
  if (s.phase != Phase::Gameplay) throw QueryError("step called outside gameplay");

  for (const auto& [id, action] : joint) {
    const PlayerState* p = s.find(id);
    if (p == nullptr || !p->alive())
      throw ProtocolError(id, describe(action), "action supplied for non-living player " + id);
    const ActionSet legal = legal_actions(s, id);
    if (std::find(legal.begin(), legal.end(), action) == legal.end())
      throw ProtocolError(id, describe(action), "illegal action \"" + describe(action) + "\" from player " + id);
  }
  for (const auto& p : s.players)
    if (p.alive() && !p.busy(s.clock) && !joint.contains(p.id))
      throw ProtocolError(p.id, "", "missing action for player " + p.id);

  std::vector<Event> events;
  const int t = s.clock;
  auto action_of = [&](const PlayerState& p) -> const Action* {
    auto it = joint.find(p.id);
    return it == joint.end() ? nullptr : &it->second;
  };

  // (1) kills
  for (auto& killer : s.players) {
    const Action* a = action_of(killer);
    if (a == nullptr || a->kind != ActionKind::Kill || !killer.alive()) continue;
    PlayerState* victim = s.find(a->target);
    if (victim == nullptr || !victim->alive()) continue;
    victim->status = Status::Dead;
    victim->activity = Activity::None;
    victim->travel_target.reset();
    s.corpses.push_back({victim->id, victim->room});
    killer.kill_available_at = t + s.config.n_cooldown;
    events.push_back({t, EventKind::Kill, killer.id, victim->id, victim->room, {}});
    for (const auto& w : s.players) {
      if (!w.alive() || w.id == killer.id || w.in_transit() || w.task_blind(t) || w.room != victim->room) continue;
      events.push_back({t, EventKind::Witness, killer.id, victim->id, victim->room, w.id});
    }
  }

  // (2) reports
  for (const auto& p : s.players) {
    const Action* a = action_of(p);
    if (a == nullptr || a->kind != ActionKind::Report || !p.alive()) continue;
    events.push_back({t, EventKind::Report, p.id, a->target, p.room, {}});
    open_meeting(s, p.id, a->target);
    break;
  }

  if (s.phase == Phase::Gameplay) {
    // (3) tasks: completions, then starts
    for (auto& p : s.players) {
      if (!p.alive() || p.activity != Activity::Task || p.busy_until != t) continue;
      auto it = std::find_if(p.remaining_tasks.begin(), p.remaining_tasks.end(),
                             [&](const Task& task) { return task.room == p.room; });
      if (it != p.remaining_tasks.end()) {
        p.remaining_tasks.erase(it);
        ++s.tasks_completed;
        ++p.tasks_done;
        events.push_back({t, EventKind::TaskDone, p.id, {}, p.room, {}});
      }
      p.activity = Activity::None;
      p.busy_until = -1;
    }
    for (auto& p : s.players) {
      const Action* a = action_of(p);
      if (a == nullptr || a->kind != ActionKind::DoTask || !p.alive()) continue;
      p.activity = Activity::Task;
      p.busy_until = t + s.config.n_task_time;
      events.push_back({t, EventKind::TaskStart, p.id, {}, p.room, {}});
    }

    // (4) movement: arrivals, then departures
    for (auto& p : s.players) {
      if (!p.alive() || p.activity != Activity::Travel || p.busy_until != t) continue;
      p.room = *p.travel_target;
      p.travel_target.reset();
      p.activity = Activity::None;
      p.busy_until = -1;
      events.push_back({t, EventKind::Arrive, p.id, {}, p.room, {}});
    }
    for (auto& p : s.players) {
      const Action* a = action_of(p);
      if (a == nullptr || !a->is_go() || !p.alive()) continue;
      p.activity = Activity::Travel;
      p.travel_target = neighbor(p.room, *a->direction());
      p.busy_until = t + s.config.n_travel;
      events.push_back({t, EventKind::MoveStart, p.id, {}, p.room, {}});
    }
  }

  // (5) clock
  ++s.clock;
  if (auto over = settle(s)) events.push_back(*over);
  return events;
}

// Value-semantics form: returns the successor state and events.
inline std::pair<GameState, std::vector<Event>> stepped(GameState s, const JointAction& joint) {
  auto events = step(s, joint);
  return {std::move(s), std::move(events)};
}

}  // namespace crewsim

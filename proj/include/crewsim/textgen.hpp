#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "engine.hpp"
#include "state.hpp"
#include "tokens.hpp"

namespace crewsim {

struct TransitSighting {
  PlayerId player;
  bool leaving = true;  // leaving to `other`, else arriving from `other`
  Room other;
  friend bool operator==(const TransitSighting&, const TransitSighting&) = default;
};

// Everything a player perceives at one decision point. The rendered text is a
// pure function of this struct, so the struct carries no more information
// than the text does.
struct Observation {
  int tick = 0;
  Room room;
  std::vector<PlayerId> present;  // sorted, self excluded
  std::vector<TransitSighting> transit;
  std::vector<PlayerId> corpses;
  std::vector<int> tasks;            // crewmates only
  std::optional<int> cooldown_left;  // imposters only
  friend bool operator==(const Observation&, const Observation&) = default;
};

struct ObservationText {
  int tick = 0;
  std::string text;
  bool blind = false;
};

inline std::string tick_prefix(int tick) { return "[" + std::to_string(tick) + "]"; }

// Returns nothing for a task-blind player.
inline std::optional<Observation> observe(const GameState& s, const PlayerId& id) {
  const PlayerState& me = require_living(s, id);
  if (me.task_blind(s.clock)) return std::nullopt;
  Observation o;
  o.tick = s.clock;
  o.room = me.room;
  for (const auto& p : s.players) {
    if (!p.alive() || p.id == id) continue;
    if (p.in_transit()) {
      if (p.room == me.room) o.transit.push_back({p.id, true, *p.travel_target});
      else if (p.travel_target && *p.travel_target == me.room) o.transit.push_back({p.id, false, p.room});
    } else if (p.room == me.room) {
      o.present.push_back(p.id);
    }
  }
  std::sort(o.present.begin(), o.present.end());
  std::sort(o.transit.begin(), o.transit.end(),
            [](const TransitSighting& a, const TransitSighting& b) { return a.player < b.player; });
  for (const auto& c : s.corpses)
    if (c.room == me.room) o.corpses.push_back(c.player);
  std::sort(o.corpses.begin(), o.corpses.end());
  if (me.role == Role::Crewmate) {
    for (const auto& t : me.remaining_tasks)
      if (t.room == me.room) o.tasks.push_back(t.index);
    std::sort(o.tasks.begin(), o.tasks.end());
  } else {
    o.cooldown_left = std::max(0, me.kill_available_at - s.clock);
  }
  return o;
}

inline std::string join_names(const std::vector<PlayerId>& names) {
  std::string out;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (i > 0) out += (i + 1 == names.size()) ? " and " : ", ";
    out += "Player " + names[i];
  }
  return out;
}

inline std::string render(const Observation& o) {
  std::string s = tick_prefix(o.tick) + ": You are in room " + room_text(o.room) + ".";
  if (!o.present.empty()) s += " You see " + join_names(o.present) + " in the room.";
  for (const auto& t : o.transit)
    s += " You see Player " + t.player + (t.leaving ? " leaving to room " : " arriving from room ") +
         room_text(t.other) + ".";
  for (const auto& c : o.corpses) s += " You see the dead body of Player " + c + " in room " + room_text(o.room) + ".";
  if (!o.tasks.empty()) {
    s += " You have the following tasks in this room: ";
    for (std::size_t i = 0; i < o.tasks.size(); ++i) s += (i ? ", Task " : "Task ") + std::to_string(o.tasks[i]);
    s += ".";
  }
  if (o.cooldown_left) s += " Your elimination cooldown has " + std::to_string(*o.cooldown_left) + " seconds remaining.";
  return s;
}

inline std::string gap_line(int from, int to) {
  return "[" + std::to_string(from) + "-" + std::to_string(to) + "]: You are doing a task and cannot see the room.";
}

inline ObservationText render_observation(const GameState& s, const PlayerId& id) {
  auto o = observe(s, id);
  if (!o) {
    const PlayerState& me = *s.find(id);
    return {s.clock, gap_line(s.clock, me.busy_until), true};
  }
  return {s.clock, render(*o), false};
}

inline std::vector<std::string> tokens_of(const ActionSet& actions) {
  std::vector<std::string> out;
  out.reserve(actions.size());
  for (const auto& a : actions) out.push_back(token_of(a));
  return out;
}

// Canonical order and deduplication come from sorting the Action values.
inline std::string render_menu(ActionSet actions, int tick) {
  if (actions.empty()) throw QueryError("render_menu called with an empty action set");
  std::sort(actions.begin(), actions.end());
  actions.erase(std::unique(actions.begin(), actions.end()), actions.end());
  std::string s = tick_prefix(tick) + " World: You can perform any of the following actions: ";
  for (std::size_t i = 0; i < actions.size(); ++i) s += (i ? "; " : "") + token_of(actions[i]);
  return s;
}

inline std::string action_line(int tick, const std::string& token) { return tick_prefix(tick) + " You: " + token; }

inline std::string kill_line(int tick, const PlayerId& victim) {
  return tick_prefix(tick) + ": You killed Player " + victim + ".";
}
inline std::string killed_line(int tick, const PlayerId& killer) {
  return tick_prefix(tick) + ": You were killed by Player " + killer + ".";
}
inline std::string witness_line(int tick, const PlayerId& killer, const PlayerId& victim) {
  return tick_prefix(tick) + ": You see Player " + killer + " kill Player " + victim + ".";
}

inline std::string discovery_line(const PlayerId& reporter, const PlayerId& corpse, Room room) {
  return "World (to all): Player " + reporter + " discovered the dead body of Player " + corpse + " in room " +
         room_text(room, false) + ".";
}

inline std::string message_line(const PlayerId& speaker, const std::string& text, bool own) {
  return "Player " + speaker + (own ? " (you) saying: \"" : " (to all): \"") + text + "\"";
}

// Candidates ordered by count descending, then name descending.
inline std::string tally_line(const VoteOutcome& v) {
  std::vector<std::pair<PlayerId, int>> rows(v.counts.begin(), v.counts.end());
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first > b.first;
  });
  std::string s = "World (to all): ";
  bool first = true;
  for (const auto& [name, n] : rows) {
    s += (first ? "" : ", ") + std::string("Player ") + name + " received " + std::to_string(n) + " votes";
    first = false;
  }
  if (v.abstain > 0) s += (first ? "" : ", ") + std::to_string(v.abstain) + " players abstained";
  s += ". Therefore, ";
  s += v.ejected ? "Player " + *v.ejected + " is ejected this round." : "nobody is ejected this round.";
  return s;
}

inline std::string game_over_line(const Outcome& o, const std::optional<PlayerId>& ejected) {
  switch (o.cause) {
    case Cause::ImposterEjected: return "Player " + ejected.value_or("?") + " was voted out. Crewmates win!";
    case Cause::AllTasksDone: return "World (to all): All tasks have been completed. Crewmates win!";
    case Cause::ImpostersOutnumber:
      return "World (to all): There are currently more imposters than crewmates. Imposters win!";
    case Cause::StepCapReached: return "World (to all): The time limit was reached. Nobody wins.";
  }
  return {};
}

}  // namespace crewsim

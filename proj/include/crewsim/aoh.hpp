#pragma once

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "state.hpp"
#include "textgen.hpp"

namespace crewsim {

// Public facts a seat learns when it joins a game.
struct SeatInfo {
  PlayerId player;
  Role role = Role::Crewmate;
  std::vector<PlayerId> players;
  std::vector<PlayerId> imposters;  // only filled for imposters
  int grid_width = 1;
  int grid_height = 1;
  int tasks_per_crewmate = 1;
  std::uint64_t seed = 0;
};

enum class EntryKind { Observe, Gap, Menu, OwnAction, Witness, KilledOther, KilledSelf, Discovery, Message, Tally, GameOver };

struct AohEntry {
  EntryKind kind = EntryKind::Observe;
  int tick = 0;
  std::string text;
  std::optional<Observation> obs;      // Observe
  PlayerId actor;                      // Witness killer, Message speaker, Discovery reporter
  PlayerId target;                     // victim / corpse
  std::optional<Room> room;            // Discovery room
  std::optional<VoteOutcome> votes;    // Tally
  std::string token;                   // OwnAction
};

struct Sighting {
  int tick = 0;
  Room room;
  bool leaving = false;
  bool arriving = false;
};

struct Claim {
  PlayerId speaker;
  PlayerId about;
  std::optional<Room> room;  // "I saw Player X in room (x,y)."
  bool accusation = false;
};

// Pulls "Player <Name>" mentions and "I saw Player X in room (a,b)" claims
// out of free text.
inline std::vector<Claim> parse_claims(const PlayerId& speaker, const std::string& text) {
  std::vector<Claim> out;
  const bool accusatory = text.find("mposter") != std::string::npos || text.find("vote") != std::string::npos ||
                          text.find("suspicious") != std::string::npos || text.find("kill") != std::string::npos;
  std::size_t pos = 0;
  while ((pos = text.find("Player ", pos)) != std::string::npos) {
    std::size_t start = pos + 7;
    std::size_t end = start;
    while (end < text.size() && std::isalpha(static_cast<unsigned char>(text[end]))) ++end;
    std::string name = text.substr(start, end - start);
    pos = end;
    if (std::find(kPlayerNames.begin(), kPlayerNames.end(), name) == kPlayerNames.end()) continue;
    Claim c;
    c.speaker = speaker;
    c.about = name;
    const bool saw = start >= 13 && text.compare(start - 13, 6, "I saw ") == 0;
    if (saw && text.compare(end, 10, " in room (") == 0) {
      int x = 0, y = 0;
      if (std::sscanf(text.c_str() + end + 10, "%d,%d", &x, &y) == 2 ||
          std::sscanf(text.c_str() + end + 10, "%d, %d", &x, &y) == 2)
        c.room = Room{x, y};
    }
    c.accusation = !c.room && accusatory;
    out.push_back(c);
    if (c.accusation) break;  // first named player is the accused
  }
  return out;
}

// Everything a built-in policy derives from its own history.
struct Memory {
  SeatInfo seat;
  int tick = 0;
  std::optional<Observation> last_obs;
  std::set<PlayerId> gone;  // known dead or ejected
  std::map<Room, int> known_tasks;
  std::map<Room, int> last_visit;
  std::map<PlayerId, std::vector<Sighting>> sightings;  // since the last meeting
  std::vector<std::pair<PlayerId, PlayerId>> witnessed;  // (killer, victim)
  int kill_ready_streak = 0;

  bool in_meeting = false;
  PlayerId reporter;
  PlayerId corpse;
  Room corpse_room;
  std::vector<Claim> claims;  // current meeting

  std::vector<PlayerId> living_others() const {
    std::vector<PlayerId> out;
    for (const auto& p : seat.players)
      if (p != seat.player && !gone.contains(p)) out.push_back(p);
    std::sort(out.begin(), out.end());
    return out;
  }

  bool is_teammate(const PlayerId& p) const {
    return std::find(seat.imposters.begin(), seat.imposters.end(), p) != seat.imposters.end();
  }

  void observe(const Observation& o) {
    tick = o.tick;
    last_obs = o;
    last_visit[o.room] = o.tick;
    if (seat.role == Role::Crewmate) known_tasks[o.room] = static_cast<int>(o.tasks.size());
    for (const auto& p : o.present) sightings[p].push_back({o.tick, o.room, false, false});
    for (const auto& t : o.transit) sightings[t.player].push_back({o.tick, o.room, t.leaving, !t.leaving});
    for (const auto& c : o.corpses) gone.insert(c);
    if (o.cooldown_left && *o.cooldown_left == 0) ++kill_ready_streak;
    else kill_ready_streak = 0;
  }

  void apply(const AohEntry& e) {
    switch (e.kind) {
      case EntryKind::Observe: observe(*e.obs); break;
      case EntryKind::Witness:
        witnessed.emplace_back(e.actor, e.target);
        gone.insert(e.target);
        break;
      case EntryKind::KilledOther:
        gone.insert(e.target);
        kill_ready_streak = 0;
        break;
      case EntryKind::Discovery:
        in_meeting = true;
        reporter = e.actor;
        corpse = e.target;
        corpse_room = e.room.value_or(Room{});
        gone.insert(e.target);
        claims.clear();
        break;
      case EntryKind::Message: {
        auto parsed = parse_claims(e.actor, e.text);
        claims.insert(claims.end(), parsed.begin(), parsed.end());
        break;
      }
      case EntryKind::Tally:
        if (e.votes && e.votes->ejected) gone.insert(*e.votes->ejected);
        in_meeting = false;
        sightings.clear();
        last_obs.reset();
        break;
      default: break;
    }
  }
};

class Aoh {
 public:
  Aoh() = default;
  explicit Aoh(SeatInfo seat, bool keep_text = true) : keep_text_(keep_text) { memory_.seat = std::move(seat); }

  void append(AohEntry e) {
    memory_.apply(e);
    if (!keep_text_) e.text.clear();
    entries_.push_back(std::move(e));
  }

  const std::vector<AohEntry>& entries() const { return entries_; }
  const Memory& memory() const { return memory_; }
  const SeatInfo& seat() const { return memory_.seat; }

  std::string text() const {
    std::string out;
    for (const auto& e : entries_) {
      out += e.text;
      out += '\n';
    }
    return out;
  }

 private:
  Memory memory_;
  std::vector<AohEntry> entries_;
  bool keep_text_ = true;
};

}  // namespace crewsim

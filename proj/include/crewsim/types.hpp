#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace crewsim {

using PlayerId = std::string;  // a color name, e.g. "Red"

inline constexpr std::array<std::string_view, 12> kPlayerNames = {
    "Red", "Green", "Blue", "Yellow", "Purple", "Orange",
    "Pink", "Cyan", "Brown", "White", "Black", "Lime"};

struct Room {
  int x = 0;
  int y = 0;

  friend constexpr auto operator<=>(const Room&, const Room&) = default;
};

inline int manhattan(Room a, Room b) {
  return (a.x > b.x ? a.x - b.x : b.x - a.x) + (a.y > b.y ? a.y - b.y : b.y - a.y);
}

// "(x, y)" in observations, "(x,y)" in meeting broadcasts.
inline std::string room_text(Room r, bool spaced = true) {
  return "(" + std::to_string(r.x) + (spaced ? ", " : ",") + std::to_string(r.y) + ")";
}

enum class Role { Crewmate, Imposter };
enum class Status { Alive, Dead, Ejected };

inline std::string_view to_string(Role r) { return r == Role::Crewmate ? "Crewmate" : "Imposter"; }

inline std::string_view to_string(Status s) {
  switch (s) {
    case Status::Alive: return "Alive";
    case Status::Dead: return "Dead";
    case Status::Ejected: return "Ejected";
  }
  return "?";
}

// North decreases y, south increases y, east increases x, west decreases x.
enum class Direction { North, South, East, West };

inline constexpr std::array<Direction, 4> kDirections = {Direction::North, Direction::South,
                                                         Direction::East, Direction::West};

inline Room neighbor(Room r, Direction d) {
  switch (d) {
    case Direction::North: return {r.x, r.y - 1};
    case Direction::South: return {r.x, r.y + 1};
    case Direction::East: return {r.x + 1, r.y};
    case Direction::West: return {r.x - 1, r.y};
  }
  return r;
}

inline std::string_view to_string(Direction d) {
  switch (d) {
    case Direction::North: return "north";
    case Direction::South: return "south";
    case Direction::East: return "east";
    case Direction::West: return "west";
  }
  return "?";
}

// Declaration order is the canonical menu order.
enum class ActionKind { GoNorth, GoSouth, GoEast, GoWest, Wait, DoTask, Kill, Report, Talk, Vote, Abstain };

struct Action {
  ActionKind kind = ActionKind::Wait;
  PlayerId target;  // Kill / Report / Vote only

  static Action go(Direction d) {
    switch (d) {
      case Direction::North: return {ActionKind::GoNorth, {}};
      case Direction::South: return {ActionKind::GoSouth, {}};
      case Direction::East: return {ActionKind::GoEast, {}};
      case Direction::West: return {ActionKind::GoWest, {}};
    }
    return {};
  }
  static Action wait() { return {ActionKind::Wait, {}}; }
  static Action do_task() { return {ActionKind::DoTask, {}}; }
  static Action kill(PlayerId p) { return {ActionKind::Kill, std::move(p)}; }
  static Action report(PlayerId p) { return {ActionKind::Report, std::move(p)}; }
  static Action talk() { return {ActionKind::Talk, {}}; }
  static Action vote(PlayerId p) { return {ActionKind::Vote, std::move(p)}; }
  static Action abstain() { return {ActionKind::Abstain, {}}; }

  bool is_go() const { return kind <= ActionKind::GoWest; }

  std::optional<Direction> direction() const {
    switch (kind) {
      case ActionKind::GoNorth: return Direction::North;
      case ActionKind::GoSouth: return Direction::South;
      case ActionKind::GoEast: return Direction::East;
      case ActionKind::GoWest: return Direction::West;
      default: return std::nullopt;
    }
  }

  friend bool operator==(const Action&, const Action&) = default;
  friend bool operator<(const Action& a, const Action& b) {
    if (a.kind != b.kind) return a.kind < b.kind;
    return a.target < b.target;
  }
};

}  // namespace crewsim

#pragma once

#include <algorithm>
#include <span>
#include <string>
#include <string_view>

#include "errors.hpp"
#include "types.hpp"

namespace crewsim {

// Action <-> action-token bijection.
inline std::string token_of(const Action& a) {
  switch (a.kind) {
    case ActionKind::GoNorth: return "go north";
    case ActionKind::GoSouth: return "go south";
    case ActionKind::GoEast: return "go east";
    case ActionKind::GoWest: return "go west";
    case ActionKind::Wait: return "wait";
    case ActionKind::DoTask: return "do task";
    case ActionKind::Kill: return "kill player " + a.target;
    case ActionKind::Report: return "report body of Player " + a.target;
    case ActionKind::Talk: return "talk";
    case ActionKind::Vote: return "vote Player " + a.target;
    case ActionKind::Abstain: return "abstain";
  }
  return {};
}

inline std::string describe(const Action& a) { return token_of(a); }

namespace detail {

inline bool is_player_name(std::string_view s) {
  return std::find(kPlayerNames.begin(), kPlayerNames.end(), s) != kPlayerNames.end();
}

inline bool strip_prefix(std::string_view& s, std::string_view prefix) {
  if (s.substr(0, prefix.size()) != prefix) return false;
  s.remove_prefix(prefix.size());
  return true;
}

}  // namespace detail

// Vocabulary-level parse: any well-formed token, legal or not.
inline Action parse_token(std::string_view token) {
  if (token == "go north") return Action::go(Direction::North);
  if (token == "go south") return Action::go(Direction::South);
  if (token == "go east") return Action::go(Direction::East);
  if (token == "go west") return Action::go(Direction::West);
  if (token == "wait") return Action::wait();
  if (token == "do task") return Action::do_task();
  if (token == "talk") return Action::talk();
  if (token == "abstain") return Action::abstain();
  std::string_view rest = token;
  if (detail::strip_prefix(rest, "kill player ") && detail::is_player_name(rest))
    return Action::kill(std::string(rest));
  rest = token;
  if (detail::strip_prefix(rest, "report body of Player ") && detail::is_player_name(rest))
    return Action::report(std::string(rest));
  rest = token;
  if (detail::strip_prefix(rest, "vote Player ") && detail::is_player_name(rest))
    return Action::vote(std::string(rest));
  throw ParseError(std::string(token));
}

// Context-level parse: the token must name an action in `legal`.
inline Action parse_token(std::string_view token, std::span<const Action> legal) {
  for (const auto& a : legal)
    if (token_of(a) == token) return a;
  throw ParseError(std::string(token));
}

}  // namespace crewsim

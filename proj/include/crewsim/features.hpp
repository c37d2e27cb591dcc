#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "aoh.hpp"
#include "engine.hpp"
#include "tokens.hpp"

namespace crewsim {

// Hand-crafted AOH features shared by the scripted and trainable policies.
namespace features {

inline constexpr int kBelief = 7;
inline constexpr int kVote = 2;
inline constexpr int kAction = 12;
inline constexpr int kTalk = 3 + 2 * kBelief;
inline constexpr int kWmInput = 6;
inline constexpr std::array<int, 2> kWmClasses = {2, 4};  // moved?, others visible (0..3+)
inline constexpr int kWm = (2 + 4) * kWmInput;
inline constexpr int kValue = 6;

// Offsets into the flat parameter vector.
inline constexpr int kBeliefOff = 0;
inline constexpr int kVoteOff = kBeliefOff + kBelief;
inline constexpr int kActionOff = kVoteOff + kVote;
inline constexpr int kTalkOff = kActionOff + kAction;
inline constexpr int kWmOff = kTalkOff + kTalk;
inline constexpr int kValueOff = kWmOff + kWm;
inline constexpr int kParamCount = kValueOff + kValue;

struct Block {
  const char* name;
  int offset;
  int size;
};

inline constexpr std::array<Block, 6> kLayout = {{{"belief", kBeliefOff, kBelief},
                                                  {"vote", kVoteOff, kVote},
                                                  {"action", kActionOff, kAction},
                                                  {"talk", kTalkOff, kTalk},
                                                  {"world_model", kWmOff, kWm},
                                                  {"value", kValueOff, kValue}}};

inline constexpr int kImposterPatience = 15;

}  // namespace features

// Sparse feature row over the flat parameter vector.
using SparseRow = std::vector<std::pair<int, double>>;
using ValueFeatures = std::array<double, features::kValue>;
using WmInput = std::array<double, features::kWmInput>;

inline double dot(const SparseRow& row, const std::vector<double>& theta) {
  double s = 0.0;
  for (const auto& [i, v] : row) s += theta[static_cast<std::size_t>(i)] * v;
  return s;
}

namespace features {

using BeliefVec = std::array<double, kBelief>;

// Evidence about `c` from the believer's point of view.
inline BeliefVec belief_features(const Memory& m, const PlayerId& c) {
  BeliefVec f{};
  for (const auto& [killer, victim] : m.witnessed)
    if (killer == c) f[0] = 1.0;
  if (m.in_meeting) {
    if (auto it = m.sightings.find(c); it != m.sightings.end()) {
      for (const auto& s : it->second) {
        if (s.room == m.corpse_room && !s.arriving) f[1] = 1.0;
        if (s.room == m.corpse_room && s.leaving) f[2] = 1.0;
      }
    }
    int accusations = 0;
    int sightings_claimed = 0;
    for (const auto& cl : m.claims) {
      if (cl.speaker == m.seat.player || cl.about != c) continue;
      if (cl.accusation) ++accusations;
      if (cl.room && *cl.room == m.corpse_room) ++sightings_claimed;
    }
    f[3] = std::min(accusations, 4) / 2.0;
    f[4] = std::min(sightings_claimed, 4) / 2.0;
    f[5] = c == m.reporter ? 1.0 : 0.0;
    for (const auto& cl : m.claims)
      if (cl.speaker == c && cl.about == m.seat.player && cl.accusation) f[6] = 1.0;
  }
  return f;
}

inline SparseRow belief_row(const Memory& m, const PlayerId& c, int offset = kBeliefOff) {
  SparseRow row;
  const auto f = belief_features(m, c);
  for (int k = 0; k < kBelief; ++k)
    if (f[static_cast<std::size_t>(k)] != 0.0) row.emplace_back(offset + k, f[static_cast<std::size_t>(k)]);
  return row;
}

inline int others_present(const Memory& m) {
  return m.last_obs ? static_cast<int>(m.last_obs->present.size()) : 0;
}

// Rooms a crewmate still wants to reach: unexplored, or holding known tasks.
inline std::vector<Room> crew_goals(const Memory& m) {
  std::vector<Room> goals;
  for (int y = 0; y < m.seat.grid_height; ++y)
    for (int x = 0; x < m.seat.grid_width; ++x) {
      Room r{x, y};
      auto it = m.known_tasks.find(r);
      if (it == m.known_tasks.end() || it->second > 0) goals.push_back(r);
    }
  return goals;
}

inline int distance_to(const std::vector<Room>& goals, Room from) {
  int best = 1 << 20;
  for (Room g : goals) best = std::min(best, manhattan(g, from));
  return best;
}

// Imposter patrol target: the least recently visited room (ties: row-major).
inline std::optional<Room> patrol_goal(const Memory& m) {
  std::optional<Room> best;
  int best_tick = 1 << 30;
  for (int y = 0; y < m.seat.grid_height; ++y)
    for (int x = 0; x < m.seat.grid_width; ++x) {
      Room r{x, y};
      auto it = m.last_visit.find(r);
      const int t = it == m.last_visit.end() ? -1 : it->second;
      if (m.last_obs && r == m.last_obs->room) continue;
      if (t < best_tick) {
        best_tick = t;
        best = r;
      }
    }
  return best;
}

// +1 if the move approaches the goal set, -1 if it moves away, 0 otherwise.
inline double progress(const Memory& m, const Action& a) {
  if (!a.is_go() || !m.last_obs) return 0.0;
  std::vector<Room> goals;
  if (m.seat.role == Role::Crewmate) {
    goals = crew_goals(m);
  } else if (auto g = patrol_goal(m)) {
    goals.push_back(*g);
  }
  if (goals.empty()) return 0.0;
  const Room here = m.last_obs->room;
  const Room there = neighbor(here, *a.direction());
  const int d0 = distance_to(goals, here);
  const int d1 = distance_to(goals, there);
  return d1 < d0 ? 1.0 : (d1 > d0 ? -1.0 : 0.0);
}

// Deterministic rule-table choice for the seat's role.
inline std::size_t heuristic_choice(const Memory& m, const ActionSet& legal) {
  auto find_kind = [&](ActionKind k) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < legal.size(); ++i)
      if (legal[i].kind == k) return i;
    return std::nullopt;
  };
  auto best_move = [&]() -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < legal.size(); ++i)
      if (legal[i].is_go() && progress(m, legal[i]) > 0.0) return i;
    return std::nullopt;
  };
  const std::size_t wait = find_kind(ActionKind::Wait).value_or(0);
  if (m.seat.role == Role::Crewmate) {
    if (auto r = find_kind(ActionKind::Report)) return *r;
    if (auto t = find_kind(ActionKind::DoTask)) return *t;
    if (auto g = best_move()) return *g;
    return wait;
  }
  std::vector<std::size_t> kills;
  for (std::size_t i = 0; i < legal.size(); ++i)
    if (legal[i].kind == ActionKind::Kill && !m.is_teammate(legal[i].target)) kills.push_back(i);
  if (!kills.empty() && others_present(m) == 1) return kills.front();
  if (!kills.empty() && m.kill_ready_streak >= kImposterPatience) return kills.front();
  const bool corpse_here = m.last_obs && !m.last_obs->corpses.empty();
  if (corpse_here) {
    if (auto g = best_move()) return *g;
    for (std::size_t i = 0; i < legal.size(); ++i)
      if (legal[i].is_go()) return i;
  }
  if (auto g = best_move()) return *g;
  return wait;
}

inline SparseRow action_row(const Memory& m, const ActionSet& legal, std::size_t index, std::size_t heuristic) {
  const Action& a = legal[index];
  const int o = kActionOff;
  const double company = std::min(others_present(m), 3) / 3.0;
  SparseRow row;
  switch (a.kind) {
    case ActionKind::GoNorth:
    case ActionKind::GoSouth:
    case ActionKind::GoEast:
    case ActionKind::GoWest: {
      row.emplace_back(o + 0, 1.0);
      if (double p = progress(m, a); p != 0.0) row.emplace_back(o + 5, p);
      if (m.last_obs && !m.last_obs->corpses.empty()) row.emplace_back(o + 8, 1.0);
      break;
    }
    case ActionKind::Wait:
      row.emplace_back(o + 1, 1.0);
      if (company != 0.0) row.emplace_back(o + 9, company);
      break;
    case ActionKind::DoTask:
      row.emplace_back(o + 2, 1.0);
      if (company != 0.0) row.emplace_back(o + 10, company);
      break;
    case ActionKind::Kill: {
      row.emplace_back(o + 3, 1.0);
      const int witnesses = std::max(0, others_present(m) - 1);
      if (witnesses > 0) row.emplace_back(o + 6, witnesses / 2.0);
      if (witnesses == 0) row.emplace_back(o + 7, 1.0);
      break;
    }
    case ActionKind::Report: row.emplace_back(o + 4, 1.0); break;
    default: break;
  }
  if (index == heuristic) row.emplace_back(o + 11, 1.0);
  return row;
}

inline std::vector<SparseRow> action_rows(const Memory& m, const ActionSet& legal) {
  const std::size_t h = heuristic_choice(m, legal);
  std::vector<SparseRow> rows;
  rows.reserve(legal.size());
  for (std::size_t i = 0; i < legal.size(); ++i) rows.push_back(action_row(m, legal, i, h));
  return rows;
}

inline std::vector<SparseRow> vote_rows(const Memory& m, const ActionSet& legal) {
  std::vector<SparseRow> rows;
  for (const auto& a : legal) {
    if (a.kind == ActionKind::Abstain) rows.push_back({{kVoteOff + 1, 1.0}});
    else if (a.target == m.seat.player) rows.push_back({{kVoteOff + 0, 1.0}});
    else rows.push_back(belief_row(m, a.target));
  }
  return rows;
}

struct TalkOption {
  std::string text;
  SparseRow row;
};

inline std::string accusation_text(const PlayerId& c) { return "I believe Player " + c + " is the Imposter."; }
inline std::string sighting_text(const PlayerId& c, Room r) {
  return "I saw Player " + c + " in room " + room_text(r, false) + ".";
}

// Silence, one accusation per candidate, and one sighting report per
// candidate seen since the last meeting.
inline std::vector<TalkOption> talk_options(const Memory& m) {
  std::vector<TalkOption> out;
  out.push_back({"", {{kTalkOff + 0, 1.0}}});
  for (const auto& c : m.living_others()) {
    if (m.is_teammate(c)) continue;
    SparseRow row{{kTalkOff + 1, 1.0}};
    const auto f = belief_features(m, c);
    for (int k = 0; k < kBelief; ++k)
      if (f[static_cast<std::size_t>(k)] != 0.0) row.emplace_back(kTalkOff + 3 + k, f[static_cast<std::size_t>(k)]);
    out.push_back({accusation_text(c), std::move(row)});
  }
  for (const auto& c : m.living_others()) {
    auto it = m.sightings.find(c);
    if (it == m.sightings.end() || it->second.empty() || m.is_teammate(c)) continue;
    SparseRow row{{kTalkOff + 2, 1.0}};
    const auto f = belief_features(m, c);
    for (int k = 0; k < kBelief; ++k)
      if (f[static_cast<std::size_t>(k)] != 0.0)
        row.emplace_back(kTalkOff + 3 + kBelief + k, f[static_cast<std::size_t>(k)]);
    out.push_back({sighting_text(c, it->second.back().room), std::move(row)});
  }
  return out;
}

inline WmInput wm_input(const Memory& m, const Action& a) {
  return {1.0, a.is_go() ? 1.0 : 0.0, a.kind == ActionKind::DoTask ? 1.0 : 0.0, a.kind == ActionKind::Wait ? 1.0 : 0.0,
          std::min(others_present(m), 3) / 3.0, a.kind == ActionKind::Kill ? 1.0 : 0.0};
}

// Summary tokens of an observation relative to the previous one.
inline std::array<int, 2> wm_classes(const Observation& prev, const Observation& next) {
  return {next.room == prev.room ? 0 : 1, std::min(static_cast<int>(next.present.size()), 3)};
}

inline std::vector<std::string> wm_tokens(const Observation& prev, const Observation& next) {
  const auto c = wm_classes(prev, next);
  return {c[0] ? "moved" : "stayed", "company:" + std::to_string(c[1])};
}

inline std::vector<SparseRow> wm_rows(const WmInput& input, std::size_t slot) {
  std::vector<SparseRow> rows;
  int base = kWmOff;
  for (std::size_t s = 0; s < slot; ++s) base += kWmClasses[s] * kWmInput;
  for (int c = 0; c < kWmClasses[slot]; ++c) {
    SparseRow row;
    for (int k = 0; k < kWmInput; ++k)
      if (input[static_cast<std::size_t>(k)] != 0.0)
        row.emplace_back(base + c * kWmInput + k, input[static_cast<std::size_t>(k)]);
    rows.push_back(std::move(row));
  }
  return rows;
}

inline ValueFeatures value_features(const Memory& m) {
  int tasks = 0;
  for (const auto& [room, n] : m.known_tasks) tasks += n;
  const int cooldown = (m.last_obs && m.last_obs->cooldown_left) ? *m.last_obs->cooldown_left : 0;
  return {1.0, std::min(m.tick / 500.0, 1.0), std::min(tasks / 5.0, 2.0), std::min(cooldown / 10.0, 1.0),
          std::min(others_present(m), 4) / 4.0, m.in_meeting ? 1.0 : 0.0};
}

}  // namespace features

inline std::vector<double> softmax(const std::vector<double>& logits) {
  std::vector<double> p(logits.size());
  if (logits.empty()) return p;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += (p[i] = std::exp(logits[i] - mx));
  for (auto& x : p) x /= z;
  return p;
}

inline std::vector<double> log_softmax(const std::vector<double>& logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  const double lz = mx + std::log(z);
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lz;
  return out;
}

inline std::vector<double> logits_of(const std::vector<SparseRow>& rows, const std::vector<double>& theta) {
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(dot(r, theta));
  return out;
}

}  // namespace crewsim

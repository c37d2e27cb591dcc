#pragma once

// Engine invariants checked tick by tick through RunOptions::on_step.

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "crewsim.hpp"

namespace crewsim::testing {

struct InvariantViolation : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class InvariantChecker {
 public:
  void operator()(const GameState& before, const GameState& after, const std::vector<Event>& events) {
    ++ticks_;
    require(after.clock == before.clock + 1, "clock must advance by one per tick");
    require(after.tasks_completed >= before.tasks_completed, "tasks_completed decreased");
    require(after.tasks_completed <= after.tasks_total, "tasks_completed exceeds tasks_total");
    conservation(before);
    conservation(after);
    for (const auto& c : after.corpses) {
      const PlayerState* p = after.find(c.player);
      require(p != nullptr && p->status == Status::Dead, "corpse of a non-dead player " + c.player);
    }
    for (const auto& e : events) {
      if (e.kind == EventKind::Kill) {
        auto [it, fresh] = last_kill_.try_emplace(e.actor, e.tick);
        if (!fresh) {
          require(e.tick - it->second >= before.config.n_cooldown, "kills by " + e.actor + " closer than cooldown");
          it->second = e.tick;
        }
        require(e.tick >= before.config.n_cooldown, "kill before the initial cooldown");
        ++kills_;
      } else if (e.kind == EventKind::Report) {
        const PlayerState* reporter = before.find(e.actor);
        require(reporter && reporter->alive() && e.room && reporter->room == *e.room, "report from outside the room");
        bool sound = false;
        for (const auto& c : after.corpses) sound = sound || (c.player == e.target && c.room == *e.room);
        require(sound, "report of " + e.target + " without a co-located corpse");
        ++reports_;
      }
    }
    require((after.phase == Phase::Over) == check_terminal(after).has_value() || after.phase == Phase::Meeting,
            "phase=Over must coincide with a terminal condition");
  }

  void finish(const GameRecord& rec) const {
    require(rec.outcome.crew_reward + rec.outcome.imposter_reward == 0.0, "rewards are not zero-sum");
    require(rec.ticks <= rec.config.max_steps, "game exceeded max_steps");
    const double expect = rec.outcome.winner == Winner::Crewmates ? 1.0 : rec.outcome.winner == Winner::Imposters ? -1.0 : 0.0;
    require(rec.outcome.crew_reward == expect, "crew reward does not match the winner");
  }

  int ticks() const { return ticks_; }
  int kills() const { return kills_; }
  int reports() const { return reports_; }

 private:
  static void require(bool ok, const std::string& what) {
    if (!ok) throw InvariantViolation(what);
  }
  static void conservation(const GameState& s) {
    int alive = 0, dead = 0, ejected = 0;
    for (const auto& p : s.players) {
      alive += p.status == Status::Alive;
      dead += p.status == Status::Dead;
      ejected += p.status == Status::Ejected;
    }
    require(alive + dead + ejected == s.config.n_players, "player conservation violated");
  }

  std::map<PlayerId, int> last_kill_;
  int ticks_ = 0, kills_ = 0, reports_ = 0;
};

inline SeatFactory random_seats() {
  return [](const SeatInfo& s, std::size_t) -> std::unique_ptr<Agent> { return std::make_unique<RandomAgent>(s.seed); };
}

inline SeatFactory scripted_seats() {
  return [](const SeatInfo& s, std::size_t) { return make_builtin_agent(PolicyHandle::scripted(), s); };
}

// Plays one game with every invariant asserted; throws InvariantViolation.
inline GameRecord checked_game(const GameConfig& config, const SeatFactory& seats, bool log = false) {
  InvariantChecker check;
  RunOptions opts;
  opts.log = log;
  opts.trajectories = false;
  opts.on_step = [&](const GameState& b, const GameState& a, const std::vector<Event>& e) { check(b, a, e); };
  GameRecord rec = play_game(config, seats, opts);
  check.finish(rec);
  return rec;
}

}  // namespace crewsim::testing

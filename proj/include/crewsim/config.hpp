#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"

#include "errors.hpp"
#include "types.hpp"

namespace crewsim {

// Immutable rules of one game.
struct GameConfig {
  int grid_width = 2;
  int grid_height = 2;
  int n_players = 5;
  int n_imposters = 1;
  int tasks_per_crewmate = 4;
  int n_travel = 1;
  int n_task_time = 3;
  int n_cooldown = 10;
  int discussion_cycles = 2;
  int message_token_cap = 20;
  int max_steps = 500;
  double task_reward = 0.1;
  std::uint64_t seed = 0;

  int room_count() const { return grid_width * grid_height; }

  bool contains(Room r) const { return r.x >= 0 && r.y >= 0 && r.x < grid_width && r.y < grid_height; }

  void validate() const {
    auto fail = [](const std::string& what) { throw ConfigError("invalid game config: " + what); };
    if (grid_width < 1 || grid_height < 1) fail("grid dimensions must be >= 1");
    if (grid_width * grid_height < 2) fail("grid_width*grid_height must be >= 2");
    if (n_players < 2) fail("n_players must be >= 2");
    if (n_players > static_cast<int>(kPlayerNames.size()))
      fail("n_players must be <= " + std::to_string(kPlayerNames.size()));
    if (n_imposters < 1) fail("n_imposters must be >= 1");
    if (n_imposters >= n_players) fail("n_imposters must be < n_players");
    if (tasks_per_crewmate < 1) fail("tasks_per_crewmate must be >= 1");
    if (n_travel < 1) fail("n_travel must be >= 1");
    if (n_task_time < 1) fail("n_task_time must be >= 1");
    if (n_cooldown < 1) fail("n_cooldown must be >= 1");
    if (discussion_cycles < 1) fail("discussion_cycles must be >= 1");
    if (message_token_cap < 1) fail("message_token_cap must be >= 1");
    if (max_steps <= 0) fail("max_steps must be > 0");
    if (!(task_reward >= 0.0)) fail("task_reward must be >= 0");
  }

  friend bool operator==(const GameConfig&, const GameConfig&) = default;
};

inline void to_json(nlohmann::json& j, const GameConfig& c) {
  j = nlohmann::json{{"grid_width", c.grid_width},
                     {"grid_height", c.grid_height},
                     {"n_players", c.n_players},
                     {"n_imposters", c.n_imposters},
                     {"tasks_per_crewmate", c.tasks_per_crewmate},
                     {"n_travel", c.n_travel},
                     {"n_task_time", c.n_task_time},
                     {"n_cooldown", c.n_cooldown},
                     {"discussion_cycles", c.discussion_cycles},
                     {"message_token_cap", c.message_token_cap},
                     {"max_steps", c.max_steps},
                     {"task_reward", c.task_reward},
                     {"seed", c.seed}};
}

// Missing keys keep their defaults so partial config files work.
inline void from_json(const nlohmann::json& j, GameConfig& c) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("grid_width", c.grid_width);
  get("grid_height", c.grid_height);
  get("n_players", c.n_players);
  get("n_imposters", c.n_imposters);
  get("tasks_per_crewmate", c.tasks_per_crewmate);
  get("n_travel", c.n_travel);
  get("n_task_time", c.n_task_time);
  get("n_cooldown", c.n_cooldown);
  get("discussion_cycles", c.discussion_cycles);
  get("message_token_cap", c.message_token_cap);
  get("max_steps", c.max_steps);
  get("task_reward", c.task_reward);
  get("seed", c.seed);
}

}  // namespace crewsim

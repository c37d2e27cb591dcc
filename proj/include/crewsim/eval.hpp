#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"

#include "gamelog.hpp"
#include "trainer.hpp"

namespace crewsim {

struct Grid {
  int rows = 2;  // grid_height
  int cols = 2;  // grid_width
  auto operator<=>(const Grid&) const = default;
  std::string text() const { return std::to_string(rows) + "x" + std::to_string(cols); }
};

inline const std::vector<Grid>& default_grids() {
  static const std::vector<Grid> g = {{1, 3}, {2, 2}, {2, 3}};
  return g;
}

struct EvalKey {
  Grid grid;
  int tasks_per_crewmate = 0;
  int n_players = 0;
  std::string crew_policy;
  std::string imposter_policy;
  auto operator<=>(const EvalKey&) const = default;
};

struct EvalCell {
  double win_rate = 0.0;  // mean over seeds
  int games = 0;          // games per seed
  double min = 0.0, max = 0.0;
  std::vector<int> wins_by_seed;
};

struct EvalTable {
  std::map<EvalKey, EvalCell> rows;

  std::string to_csv() const {
    std::ostringstream out;
    out << "grid,tasks_per_crewmate,n_players,crew_policy,imposter_policy,win_rate,games,min,max\n";
    for (const auto& [k, c] : rows)
      out << k.grid.text() << ',' << k.tasks_per_crewmate << ',' << k.n_players << ',' << k.crew_policy << ','
          << k.imposter_policy << ',' << c.win_rate << ',' << c.games << ',' << c.min << ',' << c.max << '\n';
    return out.str();
  }

  nlohmann::json to_json() const {
    nlohmann::json rows_json = nlohmann::json::array();
    for (const auto& [k, c] : rows)
      rows_json.push_back({{"grid", k.grid.text()},
                           {"tasks_per_crewmate", k.tasks_per_crewmate},
                           {"n_players", k.n_players},
                           {"crew_policy", k.crew_policy},
                           {"imposter_policy", k.imposter_policy},
                           {"win_rate", c.win_rate},
                           {"games", c.games},
                           {"min", c.min},
                           {"max", c.max},
                           {"wins_by_seed", c.wins_by_seed}});
    return {{"rows", rows_json}};
  }
};

struct EvalSweep {
  std::vector<Grid> grids = default_grids();
  std::vector<int> tasks = {3, 4, 5};
  std::vector<int> players = {3, 4, 5, 6, 7};
  int games = 100;  // per cell and seed
  std::vector<std::uint64_t> seeds = {0};
  std::string log_dir;  // write every game's log here when set
};

inline GameConfig cell_config(const Grid& g, int tasks, int players, std::uint64_t seed) {
  GameConfig c;
  c.grid_height = g.rows;
  c.grid_width = g.cols;
  c.tasks_per_crewmate = tasks;
  c.n_players = players;
  c.n_imposters = 1;
  c.seed = seed;
  c.validate();
  return c;
}

inline void finish_cell(EvalCell& c) {
  if (c.wins_by_seed.empty() || c.games <= 0) return;
  std::vector<double> rates;
  for (int w : c.wins_by_seed) rates.push_back(static_cast<double>(w) / c.games);
  double s = 0.0;
  for (double r : rates) s += r;
  c.win_rate = s / static_cast<double>(rates.size());
  c.min = *std::min_element(rates.begin(), rates.end());
  c.max = *std::max_element(rates.begin(), rates.end());
}

// One frozen-listener crewmate and the evaluation imposter in every game.
inline EvalTable run_eval(const Matchup& m, const EvalSweep& sweep) {
  if (sweep.grids.empty() || sweep.tasks.empty() || sweep.players.empty() || sweep.games < 1 || sweep.seeds.empty())
    throw ConfigError("empty evaluation sweep");
  if (!sweep.log_dir.empty()) std::filesystem::create_directories(sweep.log_dir);
  std::vector<std::uint64_t> seeds = sweep.seeds;
  std::sort(seeds.begin(), seeds.end());
  seeds.erase(std::unique(seeds.begin(), seeds.end()), seeds.end());
  EvalTable table;
  for (const auto& g : sweep.grids)
    for (int tasks : sweep.tasks)
      for (int players : sweep.players) {
        EvalKey key{g, tasks, players, m.crew.id, m.imposter.id};
        EvalCell cell;
        cell.games = sweep.games;
        for (std::uint64_t seed : seeds) {
          int wins = 0;
          for (int i = 0; i < sweep.games; ++i) {
            const std::uint64_t game_seed =
                derive_seed(seed, (static_cast<std::uint64_t>(g.rows * 10 + g.cols) << 32) ^
                                      (static_cast<std::uint64_t>(tasks * 100 + players) << 16) ^
                                      static_cast<std::uint64_t>(i));
            RunOptions opts;
            opts.trajectories = false;
            opts.log = !sweep.log_dir.empty();
            const GameRecord rec = play_matchup(cell_config(g, tasks, players, game_seed), m, opts);
            wins += rec.outcome.winner == Winner::Crewmates;
            if (opts.log) {
              std::ostringstream name;
              name << "eval_" << g.text() << "_t" << tasks << "_p" << players << "_s" << seed << "_g" << i
                   << ".jsonl";
              write_log(make_log(rec), (std::filesystem::path(sweep.log_dir) / name.str()).string());
            }
          }
          cell.wins_by_seed.push_back(wins);
        }
        finish_cell(cell);
        table.rows[key] = cell;
      }
  return table;
}

// Rebuilds a table from eval_* logs; the seed index comes from the file name.
inline EvalTable table_from_logs(const std::string& dir, const std::string& crew_policy,
                                 const std::string& imposter_policy) {
  std::map<EvalKey, std::map<std::uint64_t, std::pair<int, int>>> tallies;  // seed → (wins, games)
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("eval_", 0) != 0) continue;
    const GameLog log = read_log(entry.path().string());
    const auto& c = log.header.config;
    EvalKey key{{c.grid_height, c.grid_width}, c.tasks_per_crewmate, c.n_players, crew_policy, imposter_policy};
    const auto spos = name.find("_s", name.find("_p"));
    const std::uint64_t seed = std::stoull(name.substr(spos + 2, name.find("_g", spos) - spos - 2));
    const auto last = nlohmann::json::parse(log.events.back());
    auto& t = tallies[key][seed];
    t.first += last.value("actor", "") == "Crewmates";
    t.second += 1;
  }
  EvalTable table;
  for (const auto& [key, seeds] : tallies) {
    EvalCell cell;
    for (const auto& [seed, wg] : seeds) {
      cell.wins_by_seed.push_back(wg.first);
      cell.games = wg.second;
    }
    finish_cell(cell);
    table.rows[key] = cell;
  }
  return table;
}

}  // namespace crewsim

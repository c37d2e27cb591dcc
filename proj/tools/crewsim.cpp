// crewsim command-line entry points: play, eval, replay, serve, train, agent.

#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "crewsim.hpp"

using namespace crewsim;
namespace fs = std::filesystem;

namespace {

std::atomic<bool> g_stop{false};

GameConfig load_config(const std::string& path) {
  GameConfig c;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path);
    c = nlohmann::json::parse(in).get<GameConfig>();
  }
  c.validate();
  return c;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep))
    if (!item.empty()) out.push_back(item);
  return out;
}

// SLOT is "crew", "imposter", "all" or a seat index.
struct SeatPolicies {
  std::map<std::string, PolicySpec> by_slot;

  void add(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("--policy expects SLOT=SPEC, got \"" + assignment + "\"");
    by_slot[assignment.substr(0, eq)] = parse_policy_spec(assignment.substr(eq + 1));
  }

  const PolicySpec& pick(const SeatInfo& seat, std::size_t index) const {
    static const PolicySpec fallback{PolicyHandle::scripted(), {}, {}};
    for (const std::string& key : {std::to_string(index), std::string(seat.role == Role::Imposter ? "imposter" : "crew"),
                                   std::string("all")})
      if (auto it = by_slot.find(key); it != by_slot.end()) return it->second;
    return fallback;
  }
};

std::unique_ptr<Agent> make_agent(const PolicySpec& spec, const SeatInfo& seat, int timeout_ms) {
  if (spec.handle.kind != PolicyKind::External) return make_builtin_agent(spec.handle, seat);
  return std::make_unique<ExternalAgent>(open_endpoint(spec), spec.handle.id, timeout_ms, seat.seed);
}

int cmd_play(const std::string& config_path, std::uint64_t seed, int games, const std::vector<std::string>& policies,
             const std::string& out, int timeout_ms) {
  GameConfig config = load_config(config_path);
  SeatPolicies seats;
  for (const auto& p : policies) seats.add(p);
  if (!out.empty()) fs::create_directories(out);
  WinStats stats;
  for (int g = 0; g < games; ++g) {
    config.seed = derive_seed(seed, static_cast<std::uint64_t>(g));
    RunOptions opts;
    opts.log = !out.empty();
    opts.trajectories = false;
    const GameRecord rec = play_game(
        config, [&](const SeatInfo& s, std::size_t i) { return make_agent(seats.pick(s, i), s, timeout_ms); }, opts);
    stats.add(rec.outcome);
    if (!out.empty()) write_log(make_log(rec), (fs::path(out) / ("game_" + std::to_string(g) + ".jsonl")).string());
  }
  std::cout << "games " << stats.games << "  crewmates " << stats.crew_wins << "  imposters " << stats.imposter_wins
            << "  draws " << stats.draws << "  crew_win_rate " << stats.win_rate() << '\n';
  return 0;
}

int cmd_replay(const std::vector<std::string>& paths, bool dump) {
  int failures = 0;
  for (const auto& path : paths) {
    const GameLog log = read_log(path);
    const ReplayVerdict v = replay(log);
    std::cout << path << ": " << v.summary() << '\n';
    if (dump) std::cout << transcript(log);
    failures += !v.pass;
  }
  return failures ? 1 : 0;
}

int to_int(const std::string& s) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("\"" + s + "\" is not an integer");
}

std::vector<Grid> parse_grids(const std::string& s) {
  std::vector<Grid> out;
  for (const auto& g : split(s, ',')) {
    const auto x = g.find('x');
    if (x == std::string::npos) throw ConfigError("grid \"" + g + "\" is not RxC");
    out.push_back({to_int(g.substr(0, x)), to_int(g.substr(x + 1))});
  }
  return out;
}

std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  for (const auto& v : split(s, ',')) out.push_back(to_int(v));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"crewsim: hidden-role game engine, training harness and agent server"};
  app.require_subcommand(1);

  std::string config_path, out_dir, backfill, bind = "127.0.0.1:7777", train_config, connect;
  std::uint64_t seed = 0;
  int games = 1, timeout_ms = 5000;
  std::vector<std::string> policies, logs;
  bool dump = false;

  auto* play = app.add_subcommand("play", "Run games and write one GameLog per game");
  play->add_option("--config", config_path, "GameConfig JSON");
  play->add_option("--seed", seed, "Base seed");
  play->add_option("--games", games, "Number of games")->check(CLI::PositiveNumber);
  play->add_option("--policy", policies, "SLOT=SPEC; SLOT is crew, imposter, all or a seat index");
  play->add_option("--out", out_dir, "Directory for GameLogs");
  play->add_option("--timeout-ms", timeout_ms, "Per-request timeout for external agents");

  std::string crew_spec = "scripted", imposter_spec = "scripted", listener_spec, grids = "1x3,2x2,2x3",
              tasks = "3,4,5", players = "3,4,5,6,7", seeds = "0", log_dir;
  auto* eval = app.add_subcommand("eval", "Sweep configurations and emit an EvalTable");
  eval->add_option("--crew", crew_spec, "Crew policy (built-in name or checkpoint)");
  eval->add_option("--imposter", imposter_spec, "Evaluation imposter");
  eval->add_option("--listener", listener_spec, "Frozen-listener checkpoint for one crew seat");
  eval->add_option("--grids", grids, "Comma-separated RxC grids");
  eval->add_option("--tasks", tasks, "Comma-separated tasks per crewmate");
  eval->add_option("--players", players, "Comma-separated player counts");
  eval->add_option("--games", games, "Games per cell and seed")->check(CLI::PositiveNumber);
  eval->add_option("--seeds", seeds, "Comma-separated seeds");
  eval->add_option("--out", out_dir, "Directory for table.csv / table.json");
  eval->add_option("--logs", log_dir, "Also write every game's log here");

  auto* rep = app.add_subcommand("replay", "Verify GameLogs by re-simulation");
  rep->add_option("logs", logs, "GameLog files")->required();
  rep->add_flag("--transcript", dump, "Print the discussion transcript");

  auto* srv = app.add_subcommand("serve", "Host games for external agents");
  srv->add_option("--bind", bind, "HOST:PORT");
  srv->add_option("--config", config_path, "GameConfig JSON");
  srv->add_option("--seed", seed, "Base seed");
  srv->add_option("--games", games, "Games to host (0 = until interrupted)");
  srv->add_option("--backfill", backfill, "Built-in policy for empty seats");
  srv->add_option("--timeout-ms", timeout_ms, "Per-request timeout");
  srv->add_option("--out", out_dir, "Directory for GameLogs");

  auto* train = app.add_subcommand("train", "Listener pretraining plus iterated self-play");
  train->add_option("--train-config", train_config, "TrainConfig JSON");
  train->add_option("--seed", seed, "Run seed");
  train->add_option("--out", out_dir, "Directory for stats, checkpoints and the curve")->required();

  auto* agent = app.add_subcommand("agent", "Uniform-random external agent (stdio or TCP)");
  agent->add_option("--connect", connect, "HOST:PORT of a server; stdio when omitted");
  agent->add_option("--seed", seed, "Agent seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*play) return cmd_play(config_path, seed, games, policies, out_dir, timeout_ms);

    if (*rep) return cmd_replay(logs, dump);

    if (*eval) {
      Matchup m{parse_policy_spec(crew_spec).handle, std::nullopt, parse_policy_spec(imposter_spec).handle};
      if (!listener_spec.empty()) m.frozen_listener = load_checkpoint(listener_spec).frozen("pi_L");
      EvalSweep sweep;
      sweep.grids = parse_grids(grids);
      sweep.tasks = parse_ints(tasks);
      sweep.players = parse_ints(players);
      sweep.games = games;
      sweep.seeds.clear();
      for (int s : parse_ints(seeds)) sweep.seeds.push_back(static_cast<std::uint64_t>(s));
      sweep.log_dir = log_dir;
      const EvalTable table = run_eval(m, sweep);
      std::cout << table.to_csv();
      if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        std::ofstream(fs::path(out_dir) / "table.csv") << table.to_csv();
        std::ofstream(fs::path(out_dir) / "table.json") << table.to_json().dump(2) << '\n';
      }
      return 0;
    }

    if (*srv) {
      ServeOptions opt;
      std::tie(opt.host, opt.port) = split_address(bind);
      opt.config = load_config(config_path);
      opt.config.seed = seed;
      opt.games = games;
      if (!backfill.empty()) opt.backfill = parse_policy_spec(backfill).handle;
      opt.timeout_ms = timeout_ms;
      opt.out_dir = out_dir;
      opt.stop = &g_stop;
      std::signal(SIGINT, [](int) { g_stop = true; });
      opt.on_listening = [](int port) { std::cerr << "listening on port " << port << std::endl; };
      opt.on_game = [](int index, const GameRecord& r) {
        std::cerr << "game " << index << ": " << to_string(r.outcome.winner) << std::endl;
      };
      const ServeSummary s = serve(opt);
      std::cout << "games " << s.games << "  crewmates " << s.crew_wins << "  imposters " << s.imposter_wins
                << "  draws " << s.draws << "  aborted " << s.aborted << '\n';
      return 0;
    }

    if (*train) {
      TrainConfig cfg;
      if (!train_config.empty()) cfg = load_train_config(train_config);
      fs::create_directories(out_dir);
      std::ofstream stats(fs::path(out_dir) / "stats.jsonl");
      auto sink = [&](const TrainStats& s) { stats << s.to_json().dump() << '\n' << std::flush; };
      Population pop = initial_population(cfg, seed, sink);
      save_checkpoint(pop.frozen_listener, (fs::path(out_dir) / "pi_L.json").string());
      std::ofstream curve(fs::path(out_dir) / "curve.jsonl");
      for (int k = 0; k < cfg.iterations; ++k) {
        const int before = pop.iteration;
        pop = self_play_iteration(pop, cfg, seed, sink);
        if (pop.iteration == before) {
          std::cerr << "iteration " << before + 1 << " rejected (divergence)\n";
          return 1;
        }
        save_checkpoint(pop.crew, (fs::path(out_dir) / ("crew-" + std::to_string(pop.iteration) + ".json")).string());
        save_checkpoint(pop.imposter,
                        (fs::path(out_dir) / ("imposter-" + std::to_string(pop.iteration) + ".json")).string());
        const CurvePoint c = exploitability_eval(pop, cfg.eval_games, cfg.seeds);
        curve << nlohmann::json{{"iteration", c.iteration},     {"upper", c.upper},
                                {"lower", c.lower},             {"upper_by_seed", c.upper_by_seed},
                                {"lower_by_seed", c.lower_by_seed}}
                     .dump()
              << '\n';
        std::cout << "iteration " << c.iteration << "  upper " << c.upper << "  lower " << c.lower << '\n';
      }
      return 0;
    }

    if (*agent) {
      ChannelPtr ch;
      if (connect.empty()) {
        ch = stdio_channel();
      } else {
        auto [host, port] = split_address(connect);
        ch = tcp_connect(host, port);
      }
      run_random_agent(*ch, seed);
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

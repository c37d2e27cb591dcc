#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "gamelog.hpp"
#include "protocol.hpp"

namespace crewsim {

struct ServeOptions {
  std::string host = "127.0.0.1";
  int port = 0;  // 0 picks a free port
  GameConfig config;
  int games = 1;  // games to host before returning; 0 = until stopped
  std::optional<PolicyHandle> backfill;
  int backfill_wait_ms = 2000;  // how long a partial table waits before backfilling
  int timeout_ms = 5000;        // per request
  std::string out_dir;          // GameLogs land here when set
  std::function<void(int port)> on_listening;
  std::function<void(int index, const GameRecord&)> on_game;
  const std::atomic<bool>* stop = nullptr;
};

struct ServeSummary {
  int games = 0;
  int crew_wins = 0;
  int imposter_wins = 0;
  int draws = 0;
  int aborted = 0;
};

// Hosts games for external sessions. Sessions fill seats in join order;
// games run concurrently, one thread each.
inline ServeSummary serve(const ServeOptions& opt) {
  opt.config.validate();
  TcpListener listener(opt.host, opt.port);
  if (opt.on_listening) opt.on_listening(listener.port());
  if (!opt.out_dir.empty()) std::filesystem::create_directories(opt.out_dir);

  ServeSummary summary;
  std::mutex mu;
  std::vector<std::thread> threads;
  std::vector<ChannelPtr> pending;
  auto first_wait = std::chrono::steady_clock::now();
  int started = 0;
  const auto need = static_cast<std::size_t>(opt.config.n_players);

  auto launch = [&](std::vector<ChannelPtr> sessions) {
    const int index = started++;
    GameConfig config = opt.config;
    config.seed = derive_seed(opt.config.seed, static_cast<std::uint64_t>(index));
    threads.emplace_back([&, index, config, sessions = std::move(sessions)]() mutable {
      auto factory = [&](const SeatInfo& seat, std::size_t i) -> std::unique_ptr<Agent> {
        if (i < sessions.size())
          return std::make_unique<ExternalAgent>(sessions[i], "external", opt.timeout_ms, seat.seed);
        return make_builtin_agent(*opt.backfill, seat);
      };
      RunOptions ro;
      ro.log = true;
      ro.trajectories = false;
      try {
        GameRecord rec = play_game(config, factory, ro);
        if (!opt.out_dir.empty())
          write_log(make_log(rec),
                    (std::filesystem::path(opt.out_dir) / ("game_" + std::to_string(index) + ".jsonl")).string());
        std::lock_guard lock(mu);
        ++summary.games;
        summary.crew_wins += rec.outcome.winner == Winner::Crewmates;
        summary.imposter_wins += rec.outcome.winner == Winner::Imposters;
        summary.draws += rec.outcome.winner == Winner::Draw;
        if (opt.on_game) opt.on_game(index, rec);
      } catch (const std::exception&) {
        std::lock_guard lock(mu);
        ++summary.aborted;
      }
      for (auto& s : sessions) s->close();
    });
  };

  while (!(opt.stop && opt.stop->load()) && (opt.games == 0 || started < opt.games)) {
    if (auto ch = listener.accept(50)) {
      if (pending.empty()) first_wait = std::chrono::steady_clock::now();
      pending.push_back(std::move(ch));
    }
    if (pending.size() >= need) {
      std::vector<ChannelPtr> seats(pending.begin(), pending.begin() + static_cast<std::ptrdiff_t>(need));
      pending.erase(pending.begin(), pending.begin() + static_cast<std::ptrdiff_t>(need));
      first_wait = std::chrono::steady_clock::now();
      launch(std::move(seats));
    } else if (opt.backfill && !pending.empty() &&
               std::chrono::steady_clock::now() - first_wait >= std::chrono::milliseconds(opt.backfill_wait_ms)) {
      launch(std::move(pending));
      pending.clear();
    }
  }
  for (auto& t : threads) t.join();
  return summary;
}

}  // namespace crewsim

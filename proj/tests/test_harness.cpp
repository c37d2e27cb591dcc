#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <sstream>
#include <thread>

#include "crewsim.hpp"

using namespace crewsim;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("crewsim_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

SeatFactory mixed_seats() {
  return [](const SeatInfo& s, std::size_t i) {
    return make_builtin_agent(i % 2 ? PolicyHandle::random() : PolicyHandle::scripted(), s);
  };
}

GameLog logged_game(const GameConfig& c, const SeatFactory& seats) {
  RunOptions o;
  o.log = true;
  o.trajectories = false;
  return make_log(play_game(c, seats, o));
}

GameLog game_with_votes(std::uint64_t first_seed) {
  for (std::uint64_t seed = first_seed;; ++seed) {
    GameConfig c;
    c.seed = seed;
    auto log = logged_game(c, mixed_seats());
    for (const auto& line : log.events)
      if (nlohmann::json::parse(line)["kind"] == "vote") return log;
  }
}

struct Wire {
  ChannelPtr server, client;
};

Wire connected() {
  TcpListener l("127.0.0.1", 0);
  auto client = tcp_connect("127.0.0.1", l.port());
  auto server = l.accept(2000);
  if (!server) throw ConnectionError("accept timed out");
  return {server, client};
}

// Reads until a message of the given type arrives; null json on EOF.
nlohmann::json await(LineChannel& ch, const std::string& type) {
  std::string line;
  while (ch.read_line(line, 5000) == LineChannel::Status::Ok) {
    auto j = nlohmann::json::parse(line);
    if (j.value("type", "") == type) return j;
  }
  return nullptr;
}

struct Table {
  GameState state = new_game(GameConfig{});
  PlayerId me;
  SeatInfo seat;
  Aoh aoh;
  Table() {
    for (const auto& p : state.players)
      if (p.role == Role::Crewmate) {
        me = p.id;
        break;
      }
    seat.player = me;
    seat.role = Role::Crewmate;
    for (const auto& p : state.players) seat.players.push_back(p.id);
    aoh = Aoh(seat);
    auto obs = observe(state, me);
    aoh.append({EntryKind::Observe, state.clock, render(*obs), obs});
  }
  std::vector<PlayerId> others() const {
    std::vector<PlayerId> out;
    for (const auto& p : seat.players)
      if (p != me) out.push_back(p);
    return out;
  }
};

}  // namespace

// ---- game logs -------------------------------------------------------------

TEST(GameLogFile, RoundTripAndReplay) {
  TempDir dir("roundtrip");
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    GameConfig c;
    c.seed = seed;
    const GameLog log = logged_game(c, mixed_seats());
    ASSERT_EQ(log.header.players.size(), 5u);
    ASSERT_EQ(log.header.policies.size(), 5u);
    const auto path = (dir.path / ("g" + std::to_string(seed) + ".jsonl")).string();
    write_log(log, path);
    const GameLog back = read_log(path);
    EXPECT_EQ(log_text(back), log_text(log));
    EXPECT_EQ(back.header.config.seed, seed);
    const auto v = replay(back);
    EXPECT_TRUE(v.pass) << v.summary();
    EXPECT_EQ(v.events, log.events.size());
  }
}

TEST(GameLogFile, HeaderCarriesFormatVersionAndSlots) {
  GameConfig c;
  c.seed = 2;
  const GameLog log = logged_game(c, mixed_seats());
  std::istringstream in(log_text(log));
  std::string first;
  std::getline(in, first);
  const auto h = nlohmann::json::parse(first);
  EXPECT_EQ(h["format"], "crewsim-gamelog");
  EXPECT_EQ(h["engine_version"], kEngineVersion);
  EXPECT_EQ(h["seed"], 2u);
  EXPECT_EQ(h["players"].size(), 5u);
  ASSERT_EQ(h["policies"].size(), 5u);
  EXPECT_EQ(h["policies"][1], "random");
  EXPECT_EQ(h["policies"][3], "random");
  EXPECT_EQ(h["policies"][0].get<std::string>().rfind("scripted", 0), 0u);
  for (const auto& e : log.events) {
    const auto j = nlohmann::json::parse(e);
    for (const char* key : {"tick", "kind", "actor", "target", "room"}) EXPECT_TRUE(j.contains(key)) << e;
  }
}

TEST(GameLogFile, VersionAndFormatMismatchesAreRejected) {
  GameConfig c;
  const GameLog log = logged_game(c, mixed_seats());
  auto text_with = [&](const std::string& key, const std::string& value) {
    auto h = header_json(log.header);
    h[key] = value;
    std::string out = h.dump() + "\n";
    for (const auto& e : log.events) out += e + "\n";
    return out;
  };
  {
    std::istringstream in(text_with("engine_version", "99.0.0"));
    EXPECT_THROW(parse_log(in), VersionError);
  }
  {
    const std::string major = std::string(kEngineVersion).substr(0, std::string(kEngineVersion).find('.'));
    std::istringstream in(text_with("engine_version", major + ".999.0"));
    EXPECT_NO_THROW(parse_log(in));
  }
  {
    std::istringstream in(text_with("format", "something-else"));
    EXPECT_THROW(parse_log(in), LogError);
  }
  std::istringstream empty("");
  EXPECT_THROW(parse_log(empty), LogError);
  EXPECT_THROW(read_log("/nonexistent/crewsim.jsonl"), LogError);
}

TEST(Replay, TamperedVoteFailsAtTheTally) {
  int tampered = 0;
  for (std::uint64_t seed = 0; tampered < 5; seed += 100) {
    GameLog log = game_with_votes(seed);
    std::size_t vote_at = 0;
    std::vector<std::string> legal;
    for (std::size_t i = 0; i < log.events.size(); ++i) {
      const auto j = nlohmann::json::parse(log.events[i]);
      if (j["kind"] == "menu" && j.contains("legal")) legal = j["legal"].get<std::vector<std::string>>();
      if (j["kind"] == "vote") {
        vote_at = i;
        break;
      }
    }
    auto vote = nlohmann::ordered_json::parse(log.events[vote_at]);
    const std::string old = vote["target"];
    std::string replacement;
    for (const auto& t : legal)
      if (t != old) replacement = t;
    ASSERT_FALSE(replacement.empty());
    vote["target"] = replacement;
    log.events[vote_at] = vote.dump();

    const auto v = replay(log);
    EXPECT_FALSE(v.pass);
    ASSERT_TRUE(v.divergence);
    EXPECT_GT(*v.divergence, vote_at);
    EXPECT_EQ(nlohmann::json::parse(log.events[*v.divergence])["kind"], "tally") << v.summary();
    EXPECT_NE(v.summary().find("FAIL at event " + std::to_string(*v.divergence + 1)), std::string::npos);
    ++tampered;
  }
}

TEST(Replay, TruncatedAndIllegalLogsFail) {
  GameLog log = game_with_votes(0);
  GameLog cut = log;
  cut.events.resize(cut.events.size() / 2);
  EXPECT_FALSE(replay(cut).pass);

  GameLog bad = log;
  for (auto& line : bad.events) {
    auto j = nlohmann::ordered_json::parse(line);
    if (j["kind"] == "act") {
      j["target"] = "fly to the moon";
      line = j.dump();
      break;
    }
  }
  const auto v = replay(bad);
  EXPECT_FALSE(v.pass);
  EXPECT_FALSE(v.error.empty());
}

TEST(Replay, TranscriptListsDiscussionOnly) {
  const GameLog log = game_with_votes(0);
  const std::string t = transcript(log);
  std::istringstream in(t);
  std::string line, last;
  int tallies = 0, lines = 0;
  while (std::getline(in, line)) {
    ++lines;
    last = line;
    tallies += line.rfind("World (to all): Player", 0) == 0 && line.find(" votes") != std::string::npos;
    EXPECT_EQ(line.find("You are in room"), std::string::npos) << "observation leaked into transcript";
  }
  EXPECT_GT(tallies, 0);
  EXPECT_GT(lines, tallies);
  EXPECT_EQ(last, nlohmann::json::parse(log.events.back())["text"].get<std::string>());
}

// ---- evaluation tables -------------------------------------------------------

TEST(EvalTableTest, LogsRebuildTheSameTable) {
  TempDir dir("eval");
  EvalSweep sweep;
  sweep.grids = {{1, 3}, {2, 2}};
  sweep.tasks = {3};
  sweep.players = {4, 5};
  sweep.games = 6;
  sweep.seeds = {0, 7};
  sweep.log_dir = dir.path.string();
  const Matchup m{PolicyHandle::scripted(), std::nullopt, PolicyHandle::scripted()};
  const EvalTable t = run_eval(m, sweep);
  ASSERT_EQ(t.rows.size(), 4u);
  for (const auto& [k, c] : t.rows) {
    EXPECT_EQ(c.games, 6);
    EXPECT_EQ(c.wins_by_seed.size(), 2u);
    EXPECT_LE(c.min, c.win_rate);
    EXPECT_GE(c.max, c.win_rate);
  }
  const EvalTable back = table_from_logs(dir.path.string(), "scripted", "scripted");
  EXPECT_EQ(back.to_csv(), t.to_csv());
  EXPECT_EQ(back.to_json(), t.to_json());

  sweep.log_dir.clear();
  EXPECT_EQ(run_eval(m, sweep).to_csv(), t.to_csv());
}

TEST(EvalTableTest, EmptySweepIsAUsageError) {
  const Matchup m{PolicyHandle::scripted(), std::nullopt, PolicyHandle::scripted()};
  EvalSweep s;
  s.games = 1;
  for (int which = 0; which < 5; ++which) {
    EvalSweep e = s;
    if (which == 0) e.grids.clear();
    if (which == 1) e.tasks.clear();
    if (which == 2) e.players.clear();
    if (which == 3) e.seeds.clear();
    if (which == 4) e.games = 0;
    EXPECT_THROW(run_eval(m, e), ConfigError) << which;
  }
}

TEST(EvalTableTest, CsvHeaderAndDefaults) {
  EXPECT_EQ(default_grids(), (std::vector<Grid>{{1, 3}, {2, 2}, {2, 3}}));
  EXPECT_EQ(Grid({2, 3}).text(), "2x3");
  const auto c = cell_config({1, 3}, 4, 6, 9);
  EXPECT_EQ(c.grid_height, 1);
  EXPECT_EQ(c.grid_width, 3);
  EXPECT_EQ(c.n_players, 6);
  EXPECT_EQ(c.n_imposters, 1);
  EXPECT_EQ(EvalTable{}.to_csv(),
            "grid,tasks_per_crewmate,n_players,crew_policy,imposter_policy,win_rate,games,min,max\n");
}

// ---- wire protocol ---------------------------------------------------------

TEST(Wire, ParseReplyValidatesShape) {
  EXPECT_EQ(wire::parse_reply(R"({"type":"act","token":"wait"})", "act")["token"], "wait");
  EXPECT_NO_THROW(wire::parse_reply(R"({"type":"talk","text":"hi","tokens":1})", "talk"));
  EXPECT_NO_THROW(wire::parse_reply(R"({"type":"survey","probs":{"Player Red":1.0}})", "survey"));
  for (const auto& [line, type] : std::vector<std::pair<std::string, std::string>>{
           {"not json", "act"},
           {R"({"type":"vote","token":"abstain"})", "act"},
           {R"({"type":"act"})", "act"},
           {R"({"type":"act","token":3})", "act"},
           {R"({"type":"talk"})", "talk"},
           {R"({"type":"talk","text":"x","tokens":"many"})", "talk"},
           {R"({"type":"survey","probs":[0.5,0.5]})", "survey"},
           {R"({"type":"survey","probs":{"Player Red":"half"}})", "survey"},
           {R"([1,2])", "vote"}})
    EXPECT_THROW(wire::parse_reply(line, type), ProtocolError) << line;
}

TEST(Wire, MessagesAndAddresses) {
  SeatInfo s;
  s.player = "Red";
  s.role = Role::Imposter;
  s.imposters = {"Red"};
  const auto h = wire::handshake(s);
  EXPECT_EQ(h["type"], "handshake");
  EXPECT_EQ(h["protocol"], kProtocolVersion);
  EXPECT_EQ(h["imposters"], nlohmann::json::array({"Red"}));
  s.role = Role::Crewmate;
  EXPECT_FALSE(wire::handshake(s).contains("imposters"));
  EXPECT_EQ(wire::error("illegal_action", "x"), (nlohmann::json{{"type", "error"}, {"code", "illegal_action"}, {"detail", "x"}}));
  EXPECT_EQ(wire::survey_request({"Red", "Blue"})["candidates"], (nlohmann::json{"Player Red", "Player Blue"}));
  EXPECT_EQ(split_address("127.0.0.1:7777"), (std::pair<std::string, int>{"127.0.0.1", 7777}));
  EXPECT_THROW(split_address("nohost"), ConfigError);
  EXPECT_EQ(parse_policy_spec("tcp:localhost:9").transport, "tcp");
  EXPECT_EQ(parse_policy_spec("exec:./agent --x").target, "./agent --x");
  EXPECT_THROW(parse_policy_spec("telepathy"), ConfigError);
}

TEST(ExternalSeat, IllegalTokenGetsAnErrorReplyAndTheDefault) {
  Wire w = connected();
  Table t;
  ExternalAgent agent(w.server, "ext", 2000, 1);
  std::promise<nlohmann::json> error_seen;
  std::thread client([&] {
    await(*w.client, "act_request");
    w.client->send({{"type", "act"}, {"token", "teleport"}});
    error_seen.set_value(await(*w.client, "error"));
  });
  agent.begin(t.seat);
  const ActionSet legal = legal_actions(t.state, t.me);
  const Choice c = agent.act(t.aoh, legal);
  client.join();
  EXPECT_EQ(legal[c.index], Action::wait());
  EXPECT_EQ(c.rejected, "teleport");
  EXPECT_FALSE(c.timed_out);
  const auto err = error_seen.get_future().get();
  EXPECT_EQ(err["code"], "illegal_action");
  EXPECT_FALSE(agent.dropped());
}

TEST(ExternalSeat, TimeoutsFallBackToDefaultsWithAFlag) {
  Wire w = connected();
  Table t;
  ExternalAgent agent(w.server, "ext", 30, 1);
  agent.begin(t.seat);
  const ActionSet legal = legal_actions(t.state, t.me);
  const Choice a = agent.act(t.aoh, legal);
  EXPECT_TRUE(a.timed_out);
  EXPECT_EQ(legal[a.index], Action::wait());

  const ActionSet votes = vote_actions(t.state);
  const Choice v = agent.vote(t.aoh, votes);
  EXPECT_TRUE(v.timed_out);
  EXPECT_EQ(votes[v.index], Action::abstain());

  const TalkChoice talk = agent.talk(t.aoh, 20, 200);
  EXPECT_TRUE(talk.timed_out);
  EXPECT_TRUE(talk.text.empty());

  const SurveyChoice s = agent.survey(t.aoh, t.others());
  EXPECT_TRUE(s.timed_out);
  for (double p : s.probs) EXPECT_DOUBLE_EQ(p, 1.0 / static_cast<double>(s.probs.size()));
  EXPECT_FALSE(agent.dropped());
}

TEST(ExternalSeat, DisconnectHandsTheSeatToRandom) {
  Wire w = connected();
  Table t;
  ExternalAgent agent(w.server, "ext", 2000, 1);
  agent.begin(t.seat);
  w.client->close();
  const ActionSet legal = legal_actions(t.state, t.me);
  const Choice c = agent.act(t.aoh, legal);
  EXPECT_TRUE(agent.dropped());
  EXPECT_TRUE(c.fallback);
  EXPECT_LT(c.index, legal.size());
  EXPECT_TRUE(agent.survey(t.aoh, t.others()).fallback);
}

TEST(ExternalSeat, MalformedReplyDropsTheSession) {
  Wire w = connected();
  Table t;
  ExternalAgent agent(w.server, "ext", 2000, 1);
  std::thread client([&] {
    await(*w.client, "act_request");
    w.client->write_line("{\"type\":\"act\"");
  });
  agent.begin(t.seat);
  const Choice c = agent.act(t.aoh, legal_actions(t.state, t.me));
  client.join();
  EXPECT_TRUE(c.fallback);
  EXPECT_TRUE(agent.dropped());
}

TEST(ExternalSeat, BadSurveyIsRejectedAsUniform) {
  Wire w = connected();
  Table t;
  ExternalAgent agent(w.server, "ext", 2000, 1);
  std::thread client([&] {
    const auto req = await(*w.client, "survey_request");
    nlohmann::json probs = nlohmann::json::object();
    for (const auto& c : req["candidates"]) probs[c.get<std::string>()] = 0.9;
    w.client->send({{"type", "survey"}, {"probs", probs}});
    await(*w.client, "error");
  });
  agent.begin(t.seat);
  const SurveyChoice s = agent.survey(t.aoh, t.others());
  client.join();
  EXPECT_TRUE(s.rejected);
  for (double p : s.probs) EXPECT_DOUBLE_EQ(p, 1.0 / static_cast<double>(s.probs.size()));
}

TEST(ExternalSeat, WholeGameOverTcpReplays) {
  TcpListener l("127.0.0.1", 0);
  GameConfig c;
  c.seed = 21;
  std::vector<std::thread> clients;
  std::vector<ChannelPtr> seats;
  for (int i = 0; i < c.n_players; ++i) {
    auto ch = tcp_connect("127.0.0.1", l.port());
    clients.emplace_back([ch, i] { run_random_agent(*ch, 100 + i); });
    seats.push_back(l.accept(2000));
    ASSERT_TRUE(seats.back());
  }
  RunOptions o;
  o.log = true;
  o.trajectories = false;
  std::vector<ExternalAgent*> agents;
  const auto rec = play_game(
      c,
      [&](const SeatInfo& s, std::size_t i) {
        auto a = std::make_unique<ExternalAgent>(seats[i], "external", 5000, s.seed);
        agents.push_back(a.get());
        return a;
      },
      o);
  for (auto& s : seats) s->close();
  for (auto& th : clients) th.join();
  const GameLog log = make_log(rec);
  EXPECT_EQ(log.header.policies, std::vector<std::string>(5, "external"));
  for (const auto& e : log.events) EXPECT_EQ(e.find("\"fallback\""), std::string::npos) << e;
  const auto v = replay(log);
  EXPECT_TRUE(v.pass) << v.summary();
}

// ---- serve -----------------------------------------------------------------

TEST(Serve, HostsGamesForTcpAgentsAndBackfills) {
  TempDir dir("serve");
  ServeOptions opt;
  opt.config.seed = 3;
  opt.games = 2;
  opt.backfill = PolicyHandle::random();
  opt.backfill_wait_ms = 300;
  opt.out_dir = dir.path.string();
  std::promise<int> port;
  opt.on_listening = [&](int p) { port.set_value(p); };
  ServeSummary summary;
  std::thread server([&] { summary = serve(opt); });
  const int p = port.get_future().get();

  std::vector<std::thread> clients;
  for (int i = 0; i < 5; ++i)
    clients.emplace_back([p, i] {
      auto ch = tcp_connect("127.0.0.1", p);
      run_random_agent(*ch, 7 + i);
    });
  for (auto& th : clients) th.join();
  clients.clear();
  // Second table: two agents, three backfilled seats.
  for (int i = 0; i < 2; ++i)
    clients.emplace_back([p, i] {
      auto ch = tcp_connect("127.0.0.1", p);
      run_random_agent(*ch, 70 + i);
    });
  server.join();
  for (auto& th : clients) th.join();

  EXPECT_EQ(summary.games, 2);
  EXPECT_EQ(summary.aborted, 0);
  EXPECT_EQ(summary.crew_wins + summary.imposter_wins + summary.draws, 2);
  const GameLog full = read_log((dir.path / "game_0.jsonl").string());
  EXPECT_EQ(full.header.policies, std::vector<std::string>(5, "external"));
  const GameLog partial = read_log((dir.path / "game_1.jsonl").string());
  EXPECT_EQ(partial.header.policies,
            (std::vector<std::string>{"external", "external", "random", "random", "random"}));
  for (const auto* log : {&full, &partial}) {
    EXPECT_EQ(log->header.players.size(), 5u);
    const auto v = replay(*log);
    EXPECT_TRUE(v.pass) << v.summary();
  }
}

// ---- command line ----------------------------------------------------------

#ifdef CREWSIM_CLI
TEST(Cli, PlayReplayAndUsageErrors) {
  TempDir dir("cli");
  const std::string exe = CREWSIM_CLI;
  const std::string out = (dir.path / "logs").string();
  auto run = [](const std::string& cmd) {
    const int st = std::system((cmd + " > /dev/null 2>&1").c_str());
    return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  };
  ASSERT_EQ(run(exe + " play --games 3 --seed 4 --policy crew=random --out " + out), 0);
  int files = 0;
  std::string all;
  for (const auto& e : fs::directory_iterator(out)) {
    ++files;
    all += " " + e.path().string();
  }
  EXPECT_EQ(files, 3);
  EXPECT_EQ(run(exe + " replay" + all), 0);

  const std::string bad = (dir.path / "bad.jsonl").string();
  {
    GameLog log = game_with_votes(0);
    log.events.pop_back();
    write_log(log, bad);
  }
  EXPECT_NE(run(exe + " replay " + bad), 0);

  EXPECT_EQ(run(exe + " eval --grids '' --games 1"), 2);
  EXPECT_EQ(run(exe + " eval --grids 9 --games 1"), 2);
  EXPECT_EQ(run(exe + " play --policy crew=telepathy"), 2);
  EXPECT_EQ(run(exe + " play --policy 'all=exec:" + exe + " agent' --games 1 --out " + (dir.path / "ext").string()), 0);
  for (const auto& e : fs::directory_iterator(dir.path / "ext")) EXPECT_EQ(run(exe + " replay " + e.path().string()), 0);
}
#endif

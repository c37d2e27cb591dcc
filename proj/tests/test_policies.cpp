#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "crewsim.hpp"
#include "invariants.hpp"

using namespace crewsim;

namespace {

SeatInfo seat_for(const GameState& s, const PlayerId& id) {
  SeatInfo seat;
  seat.player = id;
  seat.role = s.find(id)->role;
  for (const auto& p : s.players) seat.players.push_back(p.id);
  if (seat.role == Role::Imposter) seat.imposters = s.imposters();
  seat.grid_width = s.config.grid_width;
  seat.grid_height = s.config.grid_height;
  seat.tasks_per_crewmate = s.config.tasks_per_crewmate;
  return seat;
}

Aoh observed(const GameState& s, const PlayerId& id) {
  Aoh a(seat_for(s, id));
  auto obs = observe(s, id);
  a.append({EntryKind::Observe, s.clock, render(*obs), obs});
  return a;
}

// 1x2 grid, Red imposter plus Blue and Green, all rooms given.
GameState tiny(Room red, Room blue, Room green, int clock) {
  GameConfig c;
  c.grid_width = 2;
  c.grid_height = 1;
  c.n_players = 3;
  c.tasks_per_crewmate = 1;
  GameState s = new_game(c);
  const char* names[] = {"Red", "Blue", "Green"};
  const Room rooms[] = {red, blue, green};
  for (std::size_t i = 0; i < 3; ++i) {
    s.players[i].id = names[i];
    s.players[i].role = i == 0 ? Role::Imposter : Role::Crewmate;
    s.players[i].room = rooms[i];
    s.players[i].remaining_tasks = i == 0 ? std::vector<Task>{} : std::vector<Task>{{1, {1, 0}}};
    s.players[i].kill_available_at = i == 0 ? c.n_cooldown : 0;
  }
  s.clock = clock;
  return s;
}

Params random_params(std::uint64_t seed, double scale = 0.5) {
  Rng rng(seed);
  Params p;
  for (auto& v : p.theta) v = scale * (2.0 * rng.uniform01() - 1.0);
  return p;
}

// Checks every choice of the wrapped agent against the legal set.
class Checked : public Agent {
 public:
  explicit Checked(std::unique_ptr<Agent> inner) : inner_(std::move(inner)) {}
  std::string policy_id() const override { return inner_->policy_id(); }
  bool wants_history() const override { return inner_->wants_history(); }
  void begin(const SeatInfo& s) override { inner_->begin(s); }
  Choice act(const Aoh& a, const ActionSet& l) override { return check(inner_->act(a, l), l); }
  Choice vote(const Aoh& a, const ActionSet& l) override { return check(inner_->vote(a, l), l); }
  TalkChoice talk(const Aoh& a, int c, int ch) override {
    auto t = inner_->talk(a, c, ch);
    EXPECT_EQ(truncate_message("x", t.text, c).text, t.text) << "talk exceeds the cap: " << t.text;
    return t;
  }
  SurveyChoice survey(const Aoh& a, const std::vector<PlayerId>& c) override {
    auto s = inner_->survey(a, c);
    EXPECT_EQ(s.probs.size(), c.size());
    double sum = 0.0;
    for (double p : s.probs) sum += p;
    EXPECT_NEAR(sum, 1.0, 1e-9);
    return s;
  }
  static inline long checks = 0;

 private:
  Choice check(Choice c, const ActionSet& legal) {
    ++checks;
    EXPECT_LT(c.index, legal.size());
    if (c.decision) { EXPECT_EQ(c.decision->options.size(), legal.size()); }
    return c;
  }
  std::unique_ptr<Agent> inner_;
};

}  // namespace

TEST(RandomPolicy, UniformOverLegal) {
  RandomAgent a(3);
  const ActionSet legal = {Action::go(Direction::East), Action::wait(), Action::do_task(), Action::kill("Blue")};
  std::vector<int> hits(4, 0);
  const int n = 40000;
  for (int i = 0; i < n; ++i) {
    const auto c = a.act(Aoh{}, legal);
    EXPECT_DOUBLE_EQ(c.logprob, std::log(0.25));
    ++hits[c.index];
  }
  // Four-bin chi-square, 3 dof, p = 0.001 critical value 16.27.
  double chi = 0.0;
  for (int h : hits) chi += (h - n / 4.0) * (h - n / 4.0) / (n / 4.0);
  EXPECT_LT(chi, 16.27);
  EXPECT_EQ(a.talk(Aoh{}, 20, 160).text, "");
}

TEST(TrainablePolicy, ZeroWeightsAreUniform) {
  const GameState s = tiny({0, 0}, {0, 0}, {1, 0}, 3);
  const Aoh aoh = observed(s, "Blue");
  TrainableAgent agent("t", std::make_shared<const Params>(), nullptr, 1);
  const ActionSet legal = legal_actions(s, "Blue");
  const auto c = agent.act(aoh, legal);
  EXPECT_NEAR(c.logprob, -std::log(static_cast<double>(legal.size())), 1e-12);
  const auto sv = agent.survey(aoh, {"Red", "Green"});
  EXPECT_NEAR(sv.probs[0], 0.5, 1e-12);
  EXPECT_NEAR(sv.probs[1], 0.5, 1e-12);
  EXPECT_NEAR(agent.token_logprobs(aoh, {"vote Player Red"})[0], std::log(0.5), 1e-12);
}

TEST(TrainablePolicy, TokenScoresMatchTheSurvey) {
  GameConfig c;
  c.n_players = 5;
  GameState s = new_game(c);
  const PlayerId me = s.players[1].role == Role::Crewmate ? s.players[1].id : s.players[2].id;
  const Aoh aoh = observed(s, me);
  TrainableAgent agent("t", std::make_shared<const Params>(random_params(4)), nullptr, 1);
  const auto cands = aoh.memory().living_others();
  ASSERT_EQ(cands.size(), 4u);
  const auto sv = agent.survey(aoh, cands);
  for (std::size_t i = 0; i < cands.size(); ++i)
    EXPECT_NEAR(agent.token_logprobs(aoh, {"vote Player " + cands[i]})[0], std::log(sv.probs[i]), 1e-12);
  TrainableAgent zero("z", std::make_shared<const Params>(), nullptr, 1);
  EXPECT_NEAR(zero.token_logprobs(aoh, {"vote Player " + cands[0]})[0], std::log(0.25), 1e-12);
  EXPECT_THROW(agent.token_logprobs(aoh, {"vote Player " + me}), SignalError);
  EXPECT_THROW(agent.token_logprobs(aoh, {"sing"}), CapabilityError);
}

TEST(ScriptedPolicies, CannotScoreTokens) {
  ScriptedCrewAgent crew;
  ScriptedImposterAgent imp(1);
  RandomAgent rnd(1);
  EXPECT_THROW(crew.token_logprobs(Aoh{}, {"vote Player Red"}), CapabilityError);
  EXPECT_THROW(imp.token_logprobs(Aoh{}, {"vote Player Red"}), CapabilityError);
  EXPECT_THROW(rnd.token_logprobs(Aoh{}, {"vote Player Red"}), CapabilityError);
}

TEST(ScriptedImposter, KillsWhenAloneWithOneCrewmate) {
  const std::vector<Room> rooms = {{0, 0}, {1, 0}};
  int lone = 0;
  for (const Room& r : rooms)
    for (const Room& b : rooms)
      for (const Room& g : rooms) {
        const GameState s = tiny(r, b, g, 10);
        const int company = (b == r) + (g == r);
        const ActionSet legal = legal_actions(s, "Red");
        for (std::uint64_t seed = 0; seed < 50; ++seed) {
          ScriptedImposterAgent agent(seed);
          const Aoh aoh = observed(s, "Red");
          const Action chosen = legal[agent.act(aoh, legal).index];
          if (company == 1) { EXPECT_EQ(chosen.kind, ActionKind::Kill); }
          if (company == 0) { EXPECT_NE(chosen.kind, ActionKind::Kill); }
        }
        lone += company == 1;
      }
  EXPECT_EQ(lone, 4);
}

TEST(ScriptedImposter, NoKillBeforeCooldown) {
  const GameState s = tiny({0, 0}, {0, 0}, {1, 0}, 4);
  for (const auto& a : legal_actions(s, "Red")) EXPECT_NE(a.kind, ActionKind::Kill);
}

TEST(ScriptedCrew, WitnessConcentratesBeliefAndSpeech) {
  GameConfig c;
  c.n_players = 5;
  GameState s = new_game(c);
  const auto imps = s.imposters();
  std::vector<PlayerId> crew;
  for (const auto& p : s.players)
    if (p.role == Role::Crewmate) crew.push_back(p.id);
  const PlayerId me = crew[0], victim = crew[1];
  Aoh aoh = observed(s, me);
  ScriptedCrewAgent agent;
  const auto cands = aoh.memory().living_others();
  const auto before = agent.survey(aoh, cands).probs;
  for (double p : before) EXPECT_NEAR(p, 1.0 / static_cast<double>(cands.size()), 1e-12);

  aoh.append({EntryKind::Witness, 11, witness_line(11, imps[0], victim), {}, imps[0], victim});
  const auto after_cands = aoh.memory().living_others();
  const auto p = agent.survey(aoh, after_cands).probs;
  const auto at = std::find(after_cands.begin(), after_cands.end(), imps[0]) - after_cands.begin();
  EXPECT_GE(p[static_cast<std::size_t>(at)], 0.9);
  aoh.append({EntryKind::Discovery, 12, discovery_line(me, victim, {0, 0}), {}, me, victim, Room{0, 0}});
  EXPECT_EQ(agent.talk(aoh, 20, 160).text, "I believe Player " + imps[0] + " is the Imposter.");
}

TEST(ScriptedCrew, SightingTemplate) {
  EXPECT_EQ(features::sighting_text("Green", {0, 1}), "I saw Player Green in room (0,1).");
  EXPECT_EQ(features::accusation_text("Green"), "I believe Player Green is the Imposter.");
}

TEST(PolicyHandles, FrozenCopiesAreIsolated) {
  auto h = PolicyHandle::trainable_from("crew", random_params(1));
  const auto frozen = h.frozen("pi_L");
  EXPECT_EQ(frozen.kind, PolicyKind::Frozen);
  EXPECT_FALSE(frozen.trainable());
  EXPECT_NE(frozen.params.get(), h.params.get());
  EXPECT_EQ(frozen.params->hash(), h.params->hash());
  Params other = random_params(2);
  EXPECT_NE(other.hash(), h.params->hash());
}

TEST(PolicyHandles, CheckpointRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "crewsim_policy_test";
  std::filesystem::create_directories(dir);
  const auto base = std::make_shared<const Params>(random_params(8));
  const auto h = PolicyHandle::trainable_from("crew-3", random_params(9), base);
  save_checkpoint(h, (dir / "a.json").string());
  const auto back = load_checkpoint((dir / "a.json").string());
  EXPECT_EQ(back.id, "crew-3");
  EXPECT_EQ(*back.params, *h.params);
  EXPECT_EQ(*back.base, *base);
  const auto f = h.frozen("pi_L");
  save_checkpoint(f, (dir / "f.json").string());
  EXPECT_EQ(load_checkpoint((dir / "f.json").string()).kind, PolicyKind::Frozen);

  auto j = checkpoint_json(h);
  j["version"] = 99;
  EXPECT_THROW(handle_from_checkpoint(j), VersionError);
  j = checkpoint_json(h);
  j["weights"][j["weights"].begin().key()].push_back(0.0);
  EXPECT_THROW(handle_from_checkpoint(j), VersionError);
  std::filesystem::remove_all(dir);
}

TEST(PolicyProperties, LegalClosureAndNormalization) {
  const auto trained = PolicyHandle::trainable_from("t", random_params(5, 1.0), std::make_shared<const Params>());
  const std::vector<PolicyHandle> kinds = {PolicyHandle::random(), PolicyHandle::scripted(), trained,
                                           trained.frozen("f")};
  Checked::checks = 0;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    GameConfig c;
    c.seed = seed;
    c.grid_width = 2 + static_cast<int>(seed % 2);
    play_game(c, [&](const SeatInfo& s, std::size_t i) -> std::unique_ptr<Agent> {
      return std::make_unique<Checked>(make_builtin_agent(kinds[(i + seed) % kinds.size()], s));
    });
  }
  EXPECT_GT(Checked::checks, 2000);
}

TEST(PolicyProperties, TrainableChoicesCarryConsistentLogprobs) {
  const Params p = random_params(6, 1.0);
  const Params base = random_params(7, 1.0);
  const auto h = PolicyHandle::trainable_from("t", p, std::make_shared<const Params>(base));
  GameConfig c;
  c.seed = 2;
  const auto rec = play_game(c, [&](const SeatInfo& s, std::size_t) { return make_builtin_agent(h, s); });
  int n = 0;
  for (const auto& t : rec.trajectories)
    for (const auto& s : t.steps) {
      if (!s.is_decision() || !s.decision) continue;
      const auto lp = log_softmax(logits_of(s.decision->options, p.theta));
      const auto lb = log_softmax(logits_of(s.decision->options, base.theta));
      double sum = 0.0;
      for (double x : lp) sum += std::exp(x);
      ASSERT_NEAR(sum, 1.0, 1e-9);
      ASSERT_NEAR(s.logprob, lp[s.decision->chosen], 1e-12);
      ASSERT_NEAR(s.base_logprob, lb[s.decision->chosen], 1e-12);
      ++n;
    }
  EXPECT_GT(n, 50);
}

TEST(PolicyProperties, SeededPoliciesAreDeterministic) {
  const auto h = PolicyHandle::trainable_from("t", random_params(3, 1.0));
  for (const auto& handle : {PolicyHandle::random(), h}) {
    GameConfig c;
    c.seed = 17;
    RunOptions o;
    o.log = true;
    auto run = [&] { return play_game(c, [&](const SeatInfo& s, std::size_t) { return make_builtin_agent(handle, s); }, o).log; };
    EXPECT_EQ(run(), run());
  }
}

TEST(PolicyProperties, TalkTemplatesFitTheCap) {
  GameConfig c;
  c.n_players = 7;
  GameState s = new_game(c);
  for (const auto& p : s.players) {
    Aoh aoh = observed(s, p.id);
    for (const auto& o : features::talk_options(aoh.memory())) {
      const auto m = truncate_message(p.id, o.text, c.message_token_cap);
      EXPECT_EQ(m.text, o.text);
    }
  }
}

TEST(PolicyHandles, ExternalNeedsATransport) {
  PolicyHandle h;
  h.id = "ext";
  h.kind = PolicyKind::External;
  EXPECT_THROW(make_builtin_agent(h, SeatInfo{}), ConfigError);
}

// Unreported kills leave stale memory; votes must still come from the menu.
TEST(ScriptedPolicies, VotesStayOnTheMenuWhenMemoryLags) {
  const std::vector<PolicyHandle> pool = {PolicyHandle::random(), PolicyHandle::scripted()};
  Rng rng(1004);
  int meetings = 0;
  for (int g = 0; g < 300; ++g) {
    GameConfig c = sample_config(rng);
    std::vector<std::size_t> pick(static_cast<std::size_t>(c.n_players));
    for (auto& p : pick) p = rng.uniform_index(pool.size());
    RunOptions o;
    o.trajectories = false;
    GameRecord rec;
    ASSERT_NO_THROW(rec = play_game(
                        c, [&](const SeatInfo& s, std::size_t i) { return make_builtin_agent(pool[pick[i]], s); }, o))
        << "game " << g;
    meetings += static_cast<int>(rec.meetings.size());
  }
  EXPECT_GT(meetings, 100);
}

#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "agent.hpp"
#include "aoh.hpp"
#include "engine.hpp"
#include "meeting.hpp"
#include "textgen.hpp"
#include "trajectory.hpp"

namespace crewsim {

inline constexpr const char* kEngineVersion = "1.0.0";

struct RunOptions {
  bool log = false;               // produce the JSONL event stream
  bool trajectories = true;       // produce per-player training records
  bool trajectory_text = true;    // keep rendered text inside trajectories
  std::function<void(const GameState& before, const GameState& after, const std::vector<Event>&)> on_step;
};

using SeatFactory = std::function<std::unique_ptr<Agent>(const SeatInfo& seat, std::size_t index)>;

struct GameRecord {
  GameConfig config;
  std::vector<PlayerId> players;
  std::vector<Role> roles;
  std::vector<std::string> policy_ids;
  Outcome outcome;
  int ticks = 0;
  int tasks_completed = 0;
  int tasks_total = 0;
  std::vector<Trajectory> trajectories;
  std::vector<MeetingRecord> meetings;
  std::vector<std::string> log;

  std::vector<PlayerId> imposters() const {
    std::vector<PlayerId> out;
    for (std::size_t i = 0; i < players.size(); ++i)
      if (roles[i] == Role::Imposter) out.push_back(players[i]);
    return out;
  }
};

using LogLine = nlohmann::ordered_json;

inline LogLine log_line(int tick, std::string_view kind, const std::string& actor = {}, const std::string& target = {},
                        std::optional<Room> room = std::nullopt) {
  LogLine j;
  j["tick"] = tick;
  j["kind"] = kind;
  j["actor"] = actor.empty() ? LogLine(nullptr) : LogLine(actor);
  j["target"] = target.empty() ? LogLine(nullptr) : LogLine(target);
  j["room"] = room ? LogLine::array({room->x, room->y}) : LogLine(nullptr);
  return j;
}

inline LogLine log_line(const Event& e) {
  LogLine j = log_line(e.tick, to_string(e.kind), e.actor, e.target, e.room);
  if (!e.observer.empty()) j["observer"] = e.observer;
  return j;
}

// Drives one game from new_game to game over.
class GameRunner {
 public:
  GameRunner(const GameConfig& config, const SeatFactory& factory, RunOptions options)
      : state_(new_game(config)), options_(std::move(options)) {
    const auto n = state_.players.size();
    std::vector<PlayerId> names;
    for (const auto& p : state_.players) names.push_back(p.id);
    for (std::size_t i = 0; i < n; ++i) {
      const PlayerState& p = state_.players[i];
      SeatInfo seat;
      seat.player = p.id;
      seat.role = p.role;
      seat.players = names;
      if (p.role == Role::Imposter) seat.imposters = state_.imposters();
      seat.grid_width = config.grid_width;
      seat.grid_height = config.grid_height;
      seat.tasks_per_crewmate = config.tasks_per_crewmate;
      seat.seed = derive_seed(config.seed, 1000 + i);
      agents_.push_back(factory(seat, i));
      agents_.back()->begin(seat);
      const bool text = options_.log || agents_.back()->wants_text();
      aohs_.emplace_back(seat, text);
      Trajectory t;
      t.player = p.id;
      t.role = p.role;
      t.policy_id = agents_.back()->policy_id();
      trajectories_.push_back(std::move(t));
      record_.players.push_back(p.id);
      record_.roles.push_back(p.role);
      record_.policy_ids.push_back(agents_.back()->policy_id());
    }
    record_.config = config;
  }

  GameRecord run() {
    while (state_.phase != Phase::Over) {
      if (state_.phase == Phase::Gameplay) gameplay_tick();
      if (state_.phase == Phase::Meeting) meeting();
    }
    finish();
    return std::move(record_);
  }

  const GameState& state() const { return state_; }
  // Log lines emitted so far (useful when run() throws).
  const std::vector<std::string>& partial_log() const { return record_.log; }

 private:
  std::size_t seat_of(const PlayerId& id) const {
    for (std::size_t i = 0; i < state_.players.size(); ++i)
      if (state_.players[i].id == id) return i;
    throw QueryError("unknown player " + id);
  }

  bool tracks(std::size_t i) const { return agents_[i]->wants_history() || options_.log || options_.trajectories; }
  bool renders(std::size_t i) const {
    return options_.log || agents_[i]->wants_text() || (options_.trajectories && options_.trajectory_text);
  }

  void emit(const LogLine& j) {
    if (options_.log) record_.log.push_back(j.dump());
  }

  void append(std::size_t i, AohEntry e) {
    if (tracks(i)) aohs_[i].append(std::move(e));
  }

  void append_living(const AohEntry& e) {
    for (std::size_t i = 0; i < state_.players.size(); ++i)
      if (state_.players[i].alive()) append(i, e);
  }

  void push(std::size_t i, Step s) {
    if (options_.trajectories) trajectories_[i].steps.push_back(std::move(s));
  }

  void gameplay_tick() {
    const int t = state_.clock;
    JointAction joint;
    for (std::size_t i = 0; i < state_.players.size(); ++i) {
      const PlayerState& p = state_.players[i];
      if (!p.alive() || p.busy(t)) continue;
      ActionSet legal = legal_actions(state_, p.id);
      if (tracks(i)) {
        auto obs = observe(state_, p.id);
        AohEntry e{EntryKind::Observe, t, renders(i) ? render(*obs) : std::string{}, obs, {}, {}, {}, {}, {}};
        if (options_.log) {
          LogLine j = log_line(t, "observe", p.id);
          j["text"] = e.text;
          emit(j);
        }
        push(i, Step{StepKind::Observe, t, options_.trajectory_text ? e.text : std::string{}, obs});
        append(i, std::move(e));
        AohEntry menu{EntryKind::Menu, t, renders(i) ? render_menu(legal, t) : std::string{}};
        append(i, std::move(menu));
      }
      if (options_.log) {
        LogLine j = log_line(t, "menu", p.id);
        j["legal"] = tokens_of(legal);
        emit(j);
      }
      Choice c = agents_[i]->act(aohs_[i], legal);
      if (c.index >= legal.size()) throw ProtocolError(p.id, "", "action index out of range from " + p.id);
      const std::string token = token_of(legal[c.index]);
      record_choice(i, t, "act", token, c);
      joint.emplace(p.id, legal[c.index]);
    }

    std::optional<GameState> before;
    if (options_.on_step) before = state_;
    const auto events = step(state_, joint);
    if (options_.on_step) options_.on_step(*before, state_, events);

    for (const auto& e : events) {
      emit(log_line(e));
      switch (e.kind) {
        case EventKind::Kill:
          append(seat_of(e.actor), {EntryKind::KilledOther, e.tick, kill_line(e.tick, e.target), {}, e.actor, e.target});
          append(seat_of(e.target), {EntryKind::KilledSelf, e.tick, killed_line(e.tick, e.actor), {}, e.actor, e.target});
          break;
        case EventKind::Witness:
          append(seat_of(e.observer),
                 {EntryKind::Witness, e.tick, witness_line(e.tick, e.actor, e.target), {}, e.actor, e.target});
          break;
        case EventKind::TaskStart: {
          const std::size_t i = seat_of(e.actor);
          append(i, {EntryKind::Gap, e.tick, gap_line(e.tick + 1, e.tick + state_.config.n_task_time)});
          break;
        }
        case EventKind::TaskDone: {
          Step s{StepKind::RewardMark, e.tick};
          s.reward = state_.config.task_reward;
          push(seat_of(e.actor), std::move(s));
          break;
        }
        default: break;
      }
    }
  }

  void record_choice(std::size_t i, int tick, std::string_view kind, const std::string& token, Choice& c) {
    const PlayerId& id = state_.players[i].id;
    if (options_.log) {
      LogLine j = log_line(tick, kind, id, token);
      if (c.timed_out) j["timeout"] = true;
      if (!c.rejected.empty()) j["rejected"] = c.rejected;
      if (c.fallback) j["fallback"] = true;
      emit(j);
    }
    AohEntry own{EntryKind::OwnAction, tick, renders(i) ? action_line(tick, token) : std::string{}};
    own.token = token;
    append(i, std::move(own));
    Step s{StepKind::Act, tick, token};
    s.logprob = c.logprob;
    s.base_logprob = c.base_logprob;
    s.decision = std::move(c.decision);
    push(i, std::move(s));
  }

  void survey_round(MeetingRecord& rec) {
    std::vector<std::pair<std::size_t, SurveyRecord>> pending;
    const int t = state_.clock;
    auto survey = run_survey(state_, [&](const PlayerId& believer, const std::vector<PlayerId>& candidates) {
      const std::size_t i = seat_of(believer);
      SurveyChoice sc = agents_[i]->survey(aohs_[i], candidates);
      if (options_.log) {
        LogLine j = log_line(t, "survey", believer);
        LogLine probs = LogLine::object();
        for (std::size_t k = 0; k < candidates.size() && k < sc.probs.size(); ++k) probs[candidates[k]] = sc.probs[k];
        j["probs"] = probs;
        if (sc.timed_out) j["timeout"] = true;
        if (sc.rejected) j["rejected"] = true;
        if (sc.fallback) j["fallback"] = true;
        emit(j);
      }
      if (options_.trajectories) {
        SurveyRecord r;
        r.meeting = rec.index;
        r.index = static_cast<int>(rec.surveys.size());
        r.candidates = candidates;
        for (const auto& c : candidates) r.rows.push_back(features::belief_row(aohs_[i].memory(), c));
        pending.emplace_back(i, std::move(r));
      }
      return SurveyAnswer{sc.probs, agents_[i]->policy_id()};
    });
    for (auto& [i, r] : pending) {
      const auto& dist = survey.beliefs.at(state_.players[i].id);
      for (const auto& c : r.candidates) r.probs.push_back(dist.at(c));
      Step s{StepKind::SurveyPoint, t};
      s.survey = std::move(r);
      push(i, std::move(s));
    }
    rec.surveys.push_back(std::move(survey));
  }

  void meeting() {
    const MeetingState& m = *state_.meeting;
    const int t = state_.clock;
    MeetingRecord rec;
    rec.index = m.index;
    const std::string line = discovery_line(m.reporter, m.corpse, m.corpse_room);
    {
      LogLine j = log_line(t, "meeting_start", m.reporter, m.corpse, m.corpse_room);
      j["text"] = line;
      emit(j);
    }
    AohEntry disc{EntryKind::Discovery, t, line, {}, m.reporter, m.corpse, m.corpse_room};
    append_living(disc);

    survey_round(rec);
    while (auto speaker = current_speaker(state_)) {
      const std::size_t i = seat_of(*speaker);
      TalkChoice tc = agents_[i]->talk(aohs_[i], state_.config.message_token_cap, kMessageCharCeiling);
      if (options_.log) {
        LogLine j = log_line(t, "talk", *speaker);
        j["text"] = tc.text;
        if (tc.declared_tokens) j["declared_tokens"] = *tc.declared_tokens;
        if (tc.timed_out) j["timeout"] = true;
        if (tc.fallback) j["fallback"] = true;
        emit(j);
      }
      const Message msg = collect_message(state_, *speaker, tc.text, tc.declared_tokens);
      if (options_.log) {
        LogLine j = log_line(t, "message", msg.speaker);
        j["text"] = msg.text;
        j["token_count"] = msg.token_count;
        j["terminated_by"] = msg.terminated_by == Termination::Newline ? "Newline" : "Cap";
        emit(j);
      }
      rec.speakers.push_back(msg.speaker);
      Step s{StepKind::TalkToken, t, msg.text};
      s.logprob = tc.logprob;
      s.base_logprob = tc.base_logprob;
      s.decision = std::move(tc.decision);
      s.meeting = rec.index;
      s.message = static_cast<int>(rec.speakers.size()) - 1;
      push(i, std::move(s));
      for (std::size_t k = 0; k < state_.players.size(); ++k) {
        if (!state_.players[k].alive()) continue;
        append(k, {EntryKind::Message, t, message_line(msg.speaker, msg.text, k == i), {}, msg.speaker, {}, {}, {}, {}});
      }
      survey_round(rec);
    }

    std::map<PlayerId, Action> votes;
    const ActionSet legal = vote_actions(state_);
    for (std::size_t i = 0; i < state_.players.size(); ++i) {
      const PlayerState& p = state_.players[i];
      if (!p.alive()) continue;
      AohEntry menu{EntryKind::Menu, t, renders(i) ? render_menu(legal, t) : std::string{}};
      if (options_.log) {
        LogLine j = log_line(t, "menu", p.id);
        j["legal"] = tokens_of(legal);
        emit(j);
      }
      push(i, Step{StepKind::Observe, t, options_.trajectory_text ? menu.text : std::string{}});
      append(i, std::move(menu));
      Choice c = agents_[i]->vote(aohs_[i], legal);
      if (c.index >= legal.size()) throw ProtocolError(p.id, "", "vote index out of range from " + p.id);
      record_choice(i, t, "vote", token_of(legal[c.index]), c);
      votes.emplace(p.id, legal[c.index]);
    }
    const VoteOutcome v = tally_votes(state_, votes);
    const std::string tline = tally_line(v);
    {
      LogLine j = log_line(t, "tally", {}, v.ejected.value_or(""));
      j["text"] = tline;
      emit(j);
    }
    AohEntry tally_entry{EntryKind::Tally, t, tline};
    tally_entry.votes = v;
    append_living(tally_entry);
    last_ejected_ = v.ejected;
    for (const auto& e : close_meeting(state_, v)) emit(log_line(e));
    record_.meetings.push_back(std::move(rec));
  }

  void finish() {
    const Outcome o = *state_.outcome;
    const std::optional<PlayerId> ejected = o.cause == Cause::ImposterEjected ? last_ejected_ : std::nullopt;
    const std::string line = game_over_line(o, ejected);
    LogLine j = log_line(state_.clock, "outcome", std::string(to_string(o.winner)), std::string(to_string(o.cause)));
    j["crew_reward"] = o.crew_reward;
    j["imposter_reward"] = o.imposter_reward;
    j["text"] = line;
    emit(j);
    append_living({EntryKind::GameOver, state_.clock, line});
    for (std::size_t i = 0; i < state_.players.size(); ++i) {
      trajectories_[i].outcome = o;
      trajectories_[i].tasks_completed = state_.players[i].tasks_done;
      agents_[i]->end(o, o.reward_for(state_.players[i].role));
    }
    record_.outcome = o;
    record_.ticks = state_.clock;
    record_.tasks_completed = state_.tasks_completed;
    record_.tasks_total = state_.tasks_total;
    if (options_.trajectories) record_.trajectories = std::move(trajectories_);
  }

  GameState state_;
  RunOptions options_;
  std::vector<std::unique_ptr<Agent>> agents_;
  std::vector<Aoh> aohs_;
  std::vector<Trajectory> trajectories_;
  GameRecord record_;
  std::optional<PlayerId> last_ejected_;
};

inline GameRecord play_game(const GameConfig& config, const SeatFactory& factory, RunOptions options = {}) {
  return GameRunner(config, factory, std::move(options)).run();
}

}  // namespace crewsim

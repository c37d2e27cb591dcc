#pragma once

#include <array>
#include <cmath>
#include <cstring>
#include <cstdint>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "agent.hpp"
#include "features.hpp"
#include "meeting.hpp"
#include "rng.hpp"

namespace crewsim {

inline constexpr int kCheckpointVersion = 1;

// Flat weights of the featurized policy; see features::kLayout.
struct Params {
  std::vector<double> theta = std::vector<double>(features::kParamCount, 0.0);

  std::uint64_t hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (double v : theta) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof(double));
      for (unsigned char b : bytes) h = (h ^ b) * 0x100000001b3ull;
    }
    return h;
  }

  friend bool operator==(const Params&, const Params&) = default;
};

inline nlohmann::json weights_to_json(const Params& p) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& b : features::kLayout)
    j[b.name] = std::vector<double>(p.theta.begin() + b.offset, p.theta.begin() + b.offset + b.size);
  return j;
}

inline Params weights_from_json(const nlohmann::json& j) {
  Params p;
  for (const auto& b : features::kLayout) {
    const auto w = j.at(b.name).get<std::vector<double>>();
    if (static_cast<int>(w.size()) != b.size)
      throw VersionError(std::string("checkpoint block ") + b.name + " has wrong size");
    std::copy(w.begin(), w.end(), p.theta.begin() + b.offset);
  }
  return p;
}

enum class PolicyKind { Random, Scripted, ScriptedCrew, ScriptedImposter, Trainable, Frozen, External };

// A named policy: built-in rule set, parameter set, or external endpoint.
struct PolicyHandle {
  std::string id;
  PolicyKind kind = PolicyKind::Random;
  std::shared_ptr<const Params> params;
  std::shared_ptr<const Params> base;  // reference policy for the KL term
  bool random_gameplay = false;        // template talk + uniform gameplay
  bool greedy = false;
  std::string endpoint;

  bool trainable() const { return kind == PolicyKind::Trainable; }

  static PolicyHandle random() { return {"random", PolicyKind::Random, nullptr, nullptr, false, false, {}}; }
  static PolicyHandle scripted() { return {"scripted", PolicyKind::Scripted, nullptr, nullptr, false, false, {}}; }
  static PolicyHandle trainable_from(std::string id, Params p, std::shared_ptr<const Params> base = nullptr) {
    auto ptr = std::make_shared<const Params>(std::move(p));
    return {std::move(id), PolicyKind::Trainable, ptr, base ? base : ptr, false, false, {}};
  }
  // Frozen handles own a private copy that nothing can write to.
  PolicyHandle frozen(std::string new_id) const {
    PolicyHandle h = *this;
    h.id = std::move(new_id);
    h.kind = PolicyKind::Frozen;
    h.params = std::make_shared<const Params>(*params);
    h.base = h.params;
    return h;
  }
};

inline nlohmann::json checkpoint_json(const PolicyHandle& h) {
  nlohmann::json j = {{"format", "crewsim-policy"}, {"version", kCheckpointVersion}, {"id", h.id},
                      {"random_gameplay", h.random_gameplay}};
  j["kind"] = h.kind == PolicyKind::Frozen ? "frozen" : "trainable";
  j["weights"] = weights_to_json(*h.params);
  if (h.base && h.base != h.params) j["base_weights"] = weights_to_json(*h.base);
  return j;
}

inline PolicyHandle handle_from_checkpoint(const nlohmann::json& j) {
  if (j.value("format", "") != "crewsim-policy") throw VersionError("not a crewsim policy checkpoint");
  if (j.value("version", 0) != kCheckpointVersion)
    throw VersionError("unsupported checkpoint version " + std::to_string(j.value("version", 0)));
  PolicyHandle h = PolicyHandle::trainable_from(j.value("id", "checkpoint"), weights_from_json(j.at("weights")));
  if (j.contains("base_weights")) h.base = std::make_shared<const Params>(weights_from_json(j.at("base_weights")));
  h.random_gameplay = j.value("random_gameplay", false);
  if (j.value("kind", "trainable") == "frozen") h = h.frozen(h.id);
  return h;
}

inline void save_checkpoint(const PolicyHandle& h, const std::string& path) {
  std::ofstream out(path);
  out << checkpoint_json(h).dump(2) << '\n';
}

inline PolicyHandle load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  return handle_from_checkpoint(nlohmann::json::parse(in));
}

// ---- built-in agents -------------------------------------------------------

inline std::vector<double> uniform(std::size_t n) { return std::vector<double>(n, n ? 1.0 / static_cast<double>(n) : 0.0); }

class RandomAgent : public Agent {
 public:
  explicit RandomAgent(std::uint64_t seed) : rng_(seed) {}

  std::string policy_id() const override { return "random"; }
  bool wants_history() const override { return false; }

  Choice act(const Aoh&, const ActionSet& legal) override { return pick(legal.size()); }
  Choice vote(const Aoh&, const ActionSet& legal) override { return pick(legal.size()); }
  TalkChoice talk(const Aoh&, int, int) override { return {}; }
  SurveyChoice survey(const Aoh&, const std::vector<PlayerId>& candidates) override {
    return {uniform(candidates.size()), false};
  }

 private:
  Choice pick(std::size_t n) {
    Choice c;
    c.index = rng_.uniform_index(n);
    c.logprob = c.base_logprob = -std::log(static_cast<double>(n));
    return c;
  }
  Rng rng_;
};

namespace scripted {

// Fixed evidence weights over features::belief_features.
inline constexpr std::array<double, features::kBelief> kEvidence = {5.0, 0.8, 1.2, 1.0, 0.6, -0.3, 1.5};

inline std::vector<double> beliefs(const Memory& m, const std::vector<PlayerId>& candidates) {
  std::vector<double> logits;
  for (const auto& c : candidates) {
    const auto f = features::belief_features(m, c);
    double l = 0.0;
    for (std::size_t k = 0; k < f.size(); ++k) l += kEvidence[k] * f[k];
    logits.push_back(l);
  }
  return softmax(logits);
}

inline std::optional<std::size_t> unique_argmax(const std::vector<double>& p) {
  if (p.empty()) return std::nullopt;
  std::size_t best = 0;
  bool unique = true;
  for (std::size_t i = 1; i < p.size(); ++i) {
    if (p[i] > p[best] + 1e-12) {
      best = i;
      unique = true;
    } else if (std::abs(p[i] - p[best]) <= 1e-12) {
      unique = false;
    }
  }
  return unique ? std::optional(best) : std::nullopt;
}

inline std::size_t index_of(const ActionSet& legal, const Action& a) {
  for (std::size_t i = 0; i < legal.size(); ++i)
    if (legal[i] == a) return i;
  return legal.size();
}

inline std::size_t abstain_index(const ActionSet& legal) { return index_of(legal, Action::abstain()); }

// Players on the vote menu. Memory can lag behind it: a kill nobody has
// reported yet still counts the victim as alive.
inline std::vector<PlayerId> votable(const ActionSet& legal, const PlayerId& self) {
  std::vector<PlayerId> out;
  for (const auto& a : legal)
    if (a.kind == ActionKind::Vote && a.target != self) out.push_back(a.target);
  return out;
}

}  // namespace scripted

// Nearest-task routing, reports on sight, evidence-weighted beliefs.
class ScriptedCrewAgent : public Agent {
 public:
  std::string policy_id() const override { return "scripted-crew"; }

  Choice act(const Aoh& aoh, const ActionSet& legal) override {
    Choice c;
    c.index = features::heuristic_choice(aoh.memory(), legal);
    return c;
  }

  SurveyChoice survey(const Aoh& aoh, const std::vector<PlayerId>& candidates) override {
    return {scripted::beliefs(aoh.memory(), candidates), false};
  }

  TalkChoice talk(const Aoh& aoh, int, int) override {
    const Memory& m = aoh.memory();
    const auto candidates = m.living_others();
    const auto p = scripted::beliefs(m, candidates);
    TalkChoice t;
    if (auto best = scripted::unique_argmax(p); best && p[*best] >= kAccuseThreshold) {
      t.text = features::accusation_text(candidates[*best]);
      return t;
    }
    for (const auto& c : candidates) {
      auto it = m.sightings.find(c);
      if (it == m.sightings.end()) continue;
      for (const auto& s : it->second)
        if (s.room == m.corpse_room) {
          t.text = features::sighting_text(c, s.room);
          return t;
        }
    }
    return t;
  }

  Choice vote(const Aoh& aoh, const ActionSet& legal) override {
    const Memory& m = aoh.memory();
    const auto candidates = scripted::votable(legal, m.seat.player);
    const auto p = scripted::beliefs(m, candidates);
    Choice c;
    c.index = scripted::abstain_index(legal);
    if (auto best = scripted::unique_argmax(p); best && p[*best] >= kVoteThreshold)
      c.index = scripted::index_of(legal, Action::vote(candidates[*best]));
    return c;
  }

  static constexpr double kAccuseThreshold = 0.5;
  static constexpr double kVoteThreshold = 0.4;
};

// Hunts isolated crewmates, flees corpses, deflects blame in meetings.
class ScriptedImposterAgent : public Agent {
 public:
  explicit ScriptedImposterAgent(std::uint64_t seed) : rng_(seed) {}

  std::string policy_id() const override { return "scripted-imposter"; }

  Choice act(const Aoh& aoh, const ActionSet& legal) override {
    Choice c;
    c.index = features::heuristic_choice(aoh.memory(), legal);
    // Loiter now and then, which reads exactly like doing a task.
    if (legal[c.index].is_go() && aoh.memory().last_obs && aoh.memory().last_obs->corpses.empty() &&
        rng_.uniform01() < kLoiter) {
      c.index = scripted::index_of(legal, Action::wait());
      c.logprob = std::log(kLoiter);
    } else if (legal[c.index].is_go()) {
      c.logprob = std::log(1.0 - kLoiter);
    }
    c.base_logprob = c.logprob;
    return c;
  }

  SurveyChoice survey(const Aoh&, const std::vector<PlayerId>& candidates) override {
    return {uniform(candidates.size()), false};
  }

  TalkChoice talk(const Aoh& aoh, int, int) override {
    TalkChoice t;
    if (auto target = scapegoat(aoh.memory())) t.text = features::accusation_text(*target);
    return t;
  }

  Choice vote(const Aoh& aoh, const ActionSet& legal) override {
    Choice c;
    c.index = scripted::abstain_index(legal);
    if (auto target = scapegoat(aoh.memory())) {
      const auto i = scripted::index_of(legal, Action::vote(*target));
      if (i < legal.size()) c.index = i;
    }
    return c;
  }

  static constexpr double kLoiter = 0.25;

 private:
  // Whoever accused me, else the most-accused crewmate, else the reporter.
  static std::optional<PlayerId> scapegoat(const Memory& m) {
    std::map<PlayerId, int> heat;
    for (const auto& cl : m.claims) {
      if (!cl.accusation || m.gone.contains(cl.about)) continue;
      if (cl.about == m.seat.player && !m.is_teammate(cl.speaker) && cl.speaker != m.seat.player)
        heat[cl.speaker] += 10;
      else if (cl.about != m.seat.player && !m.is_teammate(cl.about))
        heat[cl.about] += 1;
    }
    std::optional<PlayerId> best;
    int best_heat = 0;
    for (const auto& [p, h] : heat)
      if (h > best_heat && !m.gone.contains(p)) {
        best = p;
        best_heat = h;
      }
    if (!best && !m.reporter.empty() && m.reporter != m.seat.player && !m.gone.contains(m.reporter) &&
        !m.is_teammate(m.reporter))
      best = m.reporter;
    return best;
  }

  Rng rng_;
};

// Linear-softmax heads over features::* with sampled choices.
class TrainableAgent : public Agent {
 public:
  TrainableAgent(std::string id, std::shared_ptr<const Params> params, std::shared_ptr<const Params> base,
                 std::uint64_t seed, bool random_gameplay = false, bool greedy = false)
      : id_(std::move(id)),
        params_(std::move(params)),
        base_(base ? std::move(base) : params_),
        rng_(seed),
        random_gameplay_(random_gameplay),
        greedy_(greedy) {}

  std::string policy_id() const override { return id_; }

  Choice act(const Aoh& aoh, const ActionSet& legal) override {
    const Memory& m = aoh.memory();
    if (random_gameplay_) {
      Choice c;
      c.index = rng_.uniform_index(legal.size());
      c.logprob = c.base_logprob = -std::log(static_cast<double>(legal.size()));
      return c;
    }
    Choice c = pick(Head::Action, features::action_rows(m, legal), m);
    c.decision->wm = features::wm_input(m, legal[c.index]);
    return c;
  }

  Choice vote(const Aoh& aoh, const ActionSet& legal) override {
    return pick(Head::Vote, features::vote_rows(aoh.memory(), legal), aoh.memory());
  }

  TalkChoice talk(const Aoh& aoh, int, int) override {
    auto options = features::talk_options(aoh.memory());
    std::vector<SparseRow> rows;
    for (const auto& o : options) rows.push_back(o.row);
    Choice c = pick(Head::Talk, std::move(rows), aoh.memory());
    TalkChoice t;
    t.text = options[c.index].text;
    t.logprob = c.logprob;
    t.base_logprob = c.base_logprob;
    t.decision = std::move(c.decision);
    return t;
  }

  SurveyChoice survey(const Aoh& aoh, const std::vector<PlayerId>& candidates) override {
    return {softmax(logits_of(belief_rows(aoh.memory(), candidates), params_->theta)), false};
  }

  // Scores vote tokens with the belief head and world-model summary tokens
  // ("stayed"/"moved", "company:k") with the world-model head.
  std::vector<double> token_logprobs(const Aoh& aoh, const std::vector<std::string>& targets) override {
    const Memory& m = aoh.memory();
    std::vector<double> out;
    for (const auto& token : targets) {
      if (token.rfind("vote Player ", 0) == 0) {
        const auto candidates = m.living_others();
        const PlayerId who = token.substr(12);
        auto it = std::find(candidates.begin(), candidates.end(), who);
        if (it == candidates.end()) throw SignalError("vote target " + who + " is not a candidate");
        const auto lp = log_softmax(logits_of(belief_rows(m, candidates), params_->theta));
        out.push_back(lp[static_cast<std::size_t>(it - candidates.begin())]);
        continue;
      }
      const auto input = last_wm_input(aoh);
      std::size_t slot = 0;
      int cls = 0;
      if (token == "stayed" || token == "moved") {
        cls = token == "moved" ? 1 : 0;
      } else if (token.rfind("company:", 0) == 0) {
        slot = 1;
        cls = std::stoi(token.substr(8));
      } else {
        throw CapabilityError("cannot score token \"" + token + "\"");
      }
      const auto lp = log_softmax(logits_of(features::wm_rows(input, slot), params_->theta));
      out.push_back(lp.at(static_cast<std::size_t>(cls)));
    }
    return out;
  }

  static std::vector<SparseRow> belief_rows(const Memory& m, const std::vector<PlayerId>& candidates) {
    std::vector<SparseRow> rows;
    for (const auto& c : candidates) rows.push_back(features::belief_row(m, c));
    return rows;
  }

 private:
  Choice pick(Head head, std::vector<SparseRow> rows, const Memory& m) {
    const auto lp = log_softmax(logits_of(rows, params_->theta));
    Choice c;
    if (greedy_) {
      c.index = static_cast<std::size_t>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    } else {
      std::vector<double> p(lp.size());
      for (std::size_t i = 0; i < lp.size(); ++i) p[i] = std::exp(lp[i]);
      c.index = rng_.sample(p);
    }
    c.logprob = lp[c.index];
    c.base_logprob = base_ == params_ ? c.logprob : log_softmax(logits_of(rows, base_->theta))[c.index];
    Decision d;
    d.head = head;
    d.options = std::move(rows);
    d.chosen = c.index;
    d.value = features::value_features(m);
    c.decision = std::move(d);
    return c;
  }

  static WmInput last_wm_input(const Aoh& aoh) {
    const auto& entries = aoh.entries();
    for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
      if (it->kind != EntryKind::OwnAction) continue;
      Action a = Action::wait();
      try {
        a = parse_token(it->token);
      } catch (const ParseError&) {
      }
      return features::wm_input(aoh.memory(), a);
    }
    return features::wm_input(aoh.memory(), Action::wait());
  }

  std::string id_;
  std::shared_ptr<const Params> params_;
  std::shared_ptr<const Params> base_;
  Rng rng_;
  bool random_gameplay_;
  bool greedy_;
};

// Builds a seat agent for any non-external handle.
inline std::unique_ptr<Agent> make_builtin_agent(const PolicyHandle& h, const SeatInfo& seat) {
  switch (h.kind) {
    case PolicyKind::Random: return std::make_unique<RandomAgent>(seat.seed);
    case PolicyKind::ScriptedCrew: return std::make_unique<ScriptedCrewAgent>();
    case PolicyKind::ScriptedImposter: return std::make_unique<ScriptedImposterAgent>(seat.seed);
    case PolicyKind::Scripted:
      if (seat.role == Role::Crewmate) return std::make_unique<ScriptedCrewAgent>();
      return std::make_unique<ScriptedImposterAgent>(seat.seed);
    case PolicyKind::Trainable:
    case PolicyKind::Frozen:
      return std::make_unique<TrainableAgent>(h.id, h.params, h.base, seat.seed, h.random_gameplay, h.greedy);
    case PolicyKind::External: break;
  }
  throw ConfigError("policy " + h.id + " needs an external transport");
}

}  // namespace crewsim

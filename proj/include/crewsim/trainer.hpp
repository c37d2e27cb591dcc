#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "config.hpp"
#include "errors.hpp"
#include "features.hpp"
#include "game.hpp"
#include "policies.hpp"
#include "rng.hpp"
#include "signals.hpp"

namespace crewsim {

enum class Variant { RL, RL_L, RL_L_S, L_only, Imposter };

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::RL: return "RL";
    case Variant::RL_L: return "RL+L";
    case Variant::RL_L_S: return "RL+L+S";
    case Variant::L_only: return "L_only";
    case Variant::Imposter: return "Imposter";
  }
  return "?";
}

inline Variant variant_from_string(std::string_view s) {
  for (Variant v : {Variant::RL, Variant::RL_L, Variant::RL_L_S, Variant::L_only, Variant::Imposter})
    if (to_string(v) == s) return v;
  throw ConfigError("unknown variant \"" + std::string(s) + "\"");
}

struct PpoConfig {
  double clip = 0.2;
  int epochs = 4;
  int minibatch = 6;  // trajectories per minibatch
  double gae_lambda = 0.95;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
};

struct TrainConfig {
  double gamma = 0.99;
  double lambda_nl = 0.05;
  double lambda_l = 0.3;          // common weight (L_only)
  double lambda_l_rl_l = 0.1;     // RL+L
  double lambda_l_rl_l_s = 3.0;   // RL+L+S
  double lambda_s = 1.0;
  double lambda_wm = 1.0;
  double lr = 3e-4;
  int batch_envs = 30;
  PpoConfig ppo;
  Variant variant = Variant::RL_L_S;
  int iterations = 3;
  int updates_per_phase = 20;  // PPO updates per side per self-play iteration
  int listen_updates = 20;     // π_L pretraining updates
  int eval_games = 1000;
  std::vector<std::uint64_t> seeds{0};
  double imposter_warm_start = 3.0;  // weight on the heuristic-choice action feature

  void validate() const {
    for (auto [name, w] : {std::pair{"lambda_nl", lambda_nl}, {"lambda_l", lambda_l}, {"lambda_l_rl_l", lambda_l_rl_l},
                           {"lambda_l_rl_l_s", lambda_l_rl_l_s}, {"lambda_s", lambda_s}, {"lambda_wm", lambda_wm}})
      if (!(w >= 0.0)) throw ConfigError(std::string(name) + " must be >= 0");
    if (batch_envs < 1) throw ConfigError("batch_envs must be >= 1");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in [0,1]");
    if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
    if (ppo.epochs < 1) throw ConfigError("ppo.epochs must be >= 1");
    if (ppo.minibatch < 1) throw ConfigError("ppo.minibatch must be >= 1");
    if (!(ppo.clip > 0.0)) throw ConfigError("ppo.clip must be > 0");
    if (iterations < 0) throw ConfigError("iterations must be >= 0");
    if (eval_games < 1) throw ConfigError("eval_games must be >= 1");
    if (seeds.empty()) throw ConfigError("seeds must not be empty");
  }
};

inline void to_json(nlohmann::json& j, const PpoConfig& p) {
  j = {{"clip", p.clip},           {"epochs", p.epochs},         {"minibatch", p.minibatch},
       {"gae_lambda", p.gae_lambda}, {"value_coef", p.value_coef}, {"entropy_coef", p.entropy_coef}};
}

inline void from_json(const nlohmann::json& j, PpoConfig& p) {
  const PpoConfig d;
  p.clip = j.value("clip", d.clip);
  p.epochs = j.value("epochs", d.epochs);
  p.minibatch = j.value("minibatch", d.minibatch);
  p.gae_lambda = j.value("gae_lambda", d.gae_lambda);
  p.value_coef = j.value("value_coef", d.value_coef);
  p.entropy_coef = j.value("entropy_coef", d.entropy_coef);
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"gamma", c.gamma},
       {"lambda_nl", c.lambda_nl},
       {"lambda_l", c.lambda_l},
       {"lambda_l_rl_l", c.lambda_l_rl_l},
       {"lambda_l_rl_l_s", c.lambda_l_rl_l_s},
       {"lambda_s", c.lambda_s},
       {"lambda_wm", c.lambda_wm},
       {"lr", c.lr},
       {"batch_envs", c.batch_envs},
       {"ppo", c.ppo},
       {"variant", std::string(to_string(c.variant))},
       {"iterations", c.iterations},
       {"updates_per_phase", c.updates_per_phase},
       {"listen_updates", c.listen_updates},
       {"eval_games", c.eval_games},
       {"seeds", c.seeds},
       {"imposter_warm_start", c.imposter_warm_start}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  const TrainConfig d;
  c.gamma = j.value("gamma", d.gamma);
  c.lambda_nl = j.value("lambda_nl", d.lambda_nl);
  c.lambda_l = j.value("lambda_l", d.lambda_l);
  c.lambda_l_rl_l = j.value("lambda_l_rl_l", d.lambda_l_rl_l);
  c.lambda_l_rl_l_s = j.value("lambda_l_rl_l_s", d.lambda_l_rl_l_s);
  c.lambda_s = j.value("lambda_s", d.lambda_s);
  c.lambda_wm = j.value("lambda_wm", d.lambda_wm);
  c.lr = j.value("lr", d.lr);
  c.batch_envs = j.value("batch_envs", d.batch_envs);
  c.ppo = j.contains("ppo") ? j.at("ppo").get<PpoConfig>() : d.ppo;
  c.variant = variant_from_string(j.value("variant", std::string(to_string(d.variant))));
  c.iterations = j.value("iterations", d.iterations);
  c.updates_per_phase = j.value("updates_per_phase", d.updates_per_phase);
  c.listen_updates = j.value("listen_updates", d.listen_updates);
  c.eval_games = j.value("eval_games", d.eval_games);
  c.seeds = j.value("seeds", d.seeds);
  c.imposter_warm_start = j.value("imposter_warm_start", d.imposter_warm_start);
}

inline TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open train config " + path);
  TrainConfig c = nlohmann::json::parse(in).get<TrainConfig>();
  c.validate();
  return c;
}

// Which loss terms a variant switches on, and with what weight.
struct LossWeights {
  SignalCoeffs coeffs;
  bool policy_gradient = true;  // PPO surrogate, value and entropy terms
  Role role = Role::Crewmate;   // sign of the speaking reward
};

inline LossWeights loss_weights(const TrainConfig& c, Variant v) {
  LossWeights w;
  w.coeffs = {c.gamma, c.lambda_nl, 0.0, 0.0, c.lambda_wm};
  switch (v) {
    case Variant::RL: break;
    case Variant::RL_L: w.coeffs.lambda_l = c.lambda_l_rl_l; break;
    case Variant::RL_L_S:
      w.coeffs.lambda_l = c.lambda_l_rl_l_s;
      w.coeffs.lambda_s = c.lambda_s;
      break;
    case Variant::L_only:
      w.coeffs = {c.gamma, 0.0, c.lambda_l, 0.0, 0.0};
      w.policy_gradient = false;
      break;
    case Variant::Imposter:
      w.coeffs.lambda_s = c.lambda_s;
      w.role = Role::Imposter;
      break;
  }
  return w;
}

// ---- optimizers ---------------------------------------------------------

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(std::vector<double>& theta, const std::vector<double>& grad) = 0;
};

class Adam : public Optimizer {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(std::vector<double>& theta, const std::vector<double>& grad) override {
    if (m_.size() != theta.size()) {
      m_.assign(theta.size(), 0.0);
      v_.assign(theta.size(), 0.0);
    }
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, t_);
    const double c2 = 1.0 - std::pow(b2_, t_);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m_[i] = b1_ * m_[i] + (1.0 - b1_) * grad[i];
      v_[i] = b2_ * v_[i] + (1.0 - b2_) * grad[i] * grad[i];
      theta[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
  }

 private:
  double lr_, b1_, b2_, eps_;
  std::vector<double> m_, v_;
  int t_ = 0;
};

class Sgd : public Optimizer {
 public:
  explicit Sgd(double lr) : lr_(lr) {}
  void step(std::vector<double>& theta, const std::vector<double>& grad) override {
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= lr_ * grad[i];
  }

 private:
  double lr_;
};

// ---- training samples ---------------------------------------------------

struct DecisionSample {
  Decision decision;
  double old_logprob = 0.0;
  double advantage = 0.0;
  double speak_advantage = 0.0;  // advantage of the speaking reward alone
  double ret = 0.0;
};

struct SurveySample {
  std::vector<SparseRow> rows;
  std::size_t label = 0;
  bool witnessed = false;  // believer saw the kill (label is feature-determined)
};

struct WmSample {
  WmInput input{};
  std::array<int, 2> classes{};
};

struct TrajectorySamples {
  std::vector<DecisionSample> decisions;
  std::vector<SurveySample> surveys;
  std::vector<WmSample> wm;
};

inline SparseRow value_row(const ValueFeatures& v) {
  SparseRow row;
  for (int k = 0; k < features::kValue; ++k)
    if (v[static_cast<std::size_t>(k)] != 0.0) row.emplace_back(features::kValueOff + k, v[static_cast<std::size_t>(k)]);
  return row;
}

inline double value_of(const ValueFeatures& v, const std::vector<double>& theta) { return dot(value_row(v), theta); }

// Generalized advantage estimation over one episode (terminal value 0).
inline std::vector<double> gae(const std::vector<double>& rewards, const std::vector<double>& values, double gamma,
                               double lambda) {
  std::vector<double> adv(rewards.size(), 0.0);
  double next_value = 0.0;
  double running = 0.0;
  for (std::size_t k = rewards.size(); k-- > 0;) {
    const double delta = rewards[k] + gamma * next_value - values[k];
    running = delta + gamma * lambda * running;
    adv[k] = running;
    next_value = values[k];
  }
  return adv;
}

inline std::vector<SurveySample> survey_samples(const Trajectory& t, const std::vector<PlayerId>& imposters) {
  std::vector<SurveySample> out;
  if (t.role != Role::Crewmate) return out;
  for (const auto& s : t.steps) {
    if (s.kind != StepKind::SurveyPoint || !s.survey) continue;
    auto label = label_index(*s.survey, imposters);
    if (!label) continue;
    SurveySample ss;
    ss.rows = s.survey->rows;
    ss.label = *label;
    for (const auto& [k, v] : ss.rows[*label])
      if (k == features::kBeliefOff + 0 && v != 0.0) ss.witnessed = true;
    out.push_back(std::move(ss));
  }
  return out;
}

inline TrajectorySamples make_samples(const Trajectory& t, const std::vector<MeetingRecord>& meetings,
                                      const std::vector<PlayerId>& imposters, const LossWeights& w,
                                      const PpoConfig& ppo, const std::vector<double>& theta) {
  TrajectorySamples out;
  const SignalBatch batch = assemble(t, meetings, imposters, w.coeffs, w.role);
  const auto rewards = decision_rewards(t, batch);

  SignalBatch speak_only = batch;
  for (std::size_t i = 0; i < speak_only.size(); ++i) {
    speak_only.env_reward[i] = speak_only.task_reward[i] = speak_only.kl_term[i] = 0.0;
  }
  const auto speak_rewards = decision_rewards(t, speak_only);

  std::vector<const Step*> decisions;
  for (const auto& s : t.steps)
    if (s.is_decision()) decisions.push_back(&s);
  std::vector<double> values(decisions.size(), 0.0);
  for (std::size_t k = 0; k < decisions.size(); ++k)
    if (decisions[k]->decision) values[k] = value_of(decisions[k]->decision->value, theta);
  const auto adv = gae(rewards, values, w.coeffs.gamma, ppo.gae_lambda);
  const auto speak_adv = gae(speak_rewards, std::vector<double>(decisions.size(), 0.0), w.coeffs.gamma, ppo.gae_lambda);

  for (std::size_t k = 0; k < decisions.size(); ++k) {
    if (!decisions[k]->decision) continue;
    DecisionSample d;
    d.decision = *decisions[k]->decision;
    d.old_logprob = decisions[k]->logprob;
    d.advantage = adv[k];
    d.speak_advantage = speak_adv[k];
    d.ret = adv[k] + values[k];
    out.decisions.push_back(std::move(d));
  }

  out.surveys = survey_samples(t, imposters);

  for (std::size_t i = 0; i < t.steps.size(); ++i) {
    const Step& s = t.steps[i];
    if (s.kind != StepKind::Act || !s.decision || !s.decision->wm) continue;
    if (auto target = wm_target(t, i)) out.wm.push_back({*s.decision->wm, target->classes});
  }
  return out;
}

// ---- loss -----------------------------------------------------------------

struct LossParts {
  double total = 0.0;
  double policy = 0.0;     // −mean clipped surrogate
  double value = 0.0;      // mean squared error
  double entropy = 0.0;    // mean entropy
  double listening = 0.0;  // mean cross-entropy at survey points
  double world_model = 0.0;
  double speaking = 0.0;   // −mean surrogate on speaking advantages (diagnostic)
  std::size_t decisions = 0, surveys = 0, wm = 0;
};

struct LossEval {
  LossParts parts;
  std::vector<double> grad;
  std::map<std::string, std::vector<double>> component_grad;  // weighted as in the total

  double grad_norm(const std::string& c) const {
    double s = 0.0;
    for (double g : component_grad.at(c)) s += g * g;
    return std::sqrt(s);
  }
};

inline const std::vector<std::string>& loss_components() {
  static const std::vector<std::string> names = {"policy", "value", "entropy", "listening", "world_model", "speaking"};
  return names;
}

namespace detail {

inline void add_row(std::vector<double>& g, const SparseRow& row, double scale) {
  for (const auto& [i, v] : row) g[static_cast<std::size_t>(i)] += scale * v;
}

// d(log p_a)/dθ = row_a − Σ p_j row_j, accumulated with `scale`.
inline void add_logprob_grad(std::vector<double>& g, const std::vector<SparseRow>& rows, const std::vector<double>& p,
                             std::size_t a, double scale) {
  add_row(g, rows[a], scale);
  for (std::size_t j = 0; j < rows.size(); ++j) add_row(g, rows[j], -scale * p[j]);
}

inline double surrogate(double ratio, double adv, double clip, bool& unclipped) {
  const double s1 = ratio * adv;
  const double s2 = std::clamp(ratio, 1.0 - clip, 1.0 + clip) * adv;
  unclipped = s1 <= s2;
  return std::min(s1, s2);
}

}  // namespace detail

inline LossEval evaluate_loss(const std::vector<double>& theta, const std::vector<const TrajectorySamples*>& batch,
                              const LossWeights& w, const PpoConfig& ppo) {
  const std::size_t n = theta.size();
  LossEval out;
  for (const auto& c : loss_components()) out.component_grad[c].assign(n, 0.0);
  LossParts& lp = out.parts;
  for (const auto* t : batch) {
    lp.decisions += t->decisions.size();
    lp.surveys += t->surveys.size();
    lp.wm += t->wm.size();
  }

  if (w.policy_gradient && lp.decisions > 0) {
    const double inv = 1.0 / static_cast<double>(lp.decisions);
    auto& gp = out.component_grad["policy"];
    auto& gv = out.component_grad["value"];
    auto& ge = out.component_grad["entropy"];
    auto& gs = out.component_grad["speaking"];
    for (const auto* t : batch) {
      for (const auto& d : t->decisions) {
        const auto& rows = d.decision.options;
        const auto logp = log_softmax(logits_of(rows, theta));
        std::vector<double> p(logp.size());
        for (std::size_t j = 0; j < p.size(); ++j) p[j] = std::exp(logp[j]);
        const std::size_t a = d.decision.chosen;
        const double ratio = std::exp(logp[a] - d.old_logprob);

        bool unclipped = false;
        lp.policy -= inv * detail::surrogate(ratio, d.advantage, ppo.clip, unclipped);
        if (unclipped) detail::add_logprob_grad(gp, rows, p, a, -inv * ratio * d.advantage);

        lp.speaking -= inv * detail::surrogate(ratio, d.speak_advantage, ppo.clip, unclipped);
        if (unclipped) detail::add_logprob_grad(gs, rows, p, a, -inv * ratio * d.speak_advantage);

        const SparseRow vrow = value_row(d.decision.value);
        const double err = dot(vrow, theta) - d.ret;
        lp.value += inv * err * err;
        detail::add_row(gv, vrow, ppo.value_coef * inv * 2.0 * err);

        double h = 0.0;
        for (std::size_t j = 0; j < p.size(); ++j) h -= p[j] * logp[j];
        lp.entropy += inv * h;
        // dH/dz_j = −p_j (log p_j + H); the loss carries −c_e·H.
        for (std::size_t j = 0; j < rows.size(); ++j)
          detail::add_row(ge, rows[j], ppo.entropy_coef * inv * p[j] * (logp[j] + h));
      }
    }
  }

  if (w.coeffs.lambda_l != 0.0 && lp.surveys > 0) {
    const double inv = 1.0 / static_cast<double>(lp.surveys);
    auto& gl = out.component_grad["listening"];
    for (const auto* t : batch) {
      for (const auto& s : t->surveys) {
        const auto logp = log_softmax(logits_of(s.rows, theta));
        std::vector<double> p(logp.size());
        for (std::size_t j = 0; j < p.size(); ++j) p[j] = std::exp(logp[j]);
        lp.listening -= inv * logp[s.label];
        detail::add_logprob_grad(gl, s.rows, p, s.label, -w.coeffs.lambda_l * inv);
      }
    }
  }

  if (w.policy_gradient && w.coeffs.lambda_wm != 0.0 && lp.wm > 0) {
    const double inv = 1.0 / static_cast<double>(lp.wm);
    auto& gw = out.component_grad["world_model"];
    for (const auto* t : batch) {
      for (const auto& s : t->wm) {
        for (std::size_t slot = 0; slot < 2; ++slot) {
          const auto rows = features::wm_rows(s.input, slot);
          const auto logp = log_softmax(logits_of(rows, theta));
          std::vector<double> p(logp.size());
          for (std::size_t j = 0; j < p.size(); ++j) p[j] = std::exp(logp[j]);
          const auto cls = static_cast<std::size_t>(s.classes[slot]);
          lp.world_model -= inv * logp[cls];
          detail::add_logprob_grad(gw, rows, p, cls, -w.coeffs.lambda_wm * inv);
        }
      }
    }
  }

  const double pg = w.policy_gradient ? 1.0 : 0.0;
  lp.total = pg * (lp.policy + ppo.value_coef * lp.value - ppo.entropy_coef * lp.entropy) +
             w.coeffs.lambda_l * lp.listening + pg * w.coeffs.lambda_wm * lp.world_model;
  out.grad.assign(n, 0.0);
  for (const auto& c : {"policy", "value", "entropy", "listening", "world_model"})
    for (std::size_t i = 0; i < n; ++i) out.grad[i] += out.component_grad[c][i];
  return out;
}

// ---- stats ----------------------------------------------------------------

struct TrainStats {
  int iteration = 0;
  int step = 0;
  std::string phase;  // "listen", "crew", "imposter"
  Variant variant = Variant::RL;
  LossParts loss;
  std::map<std::string, double> grad_norm;
  double kl = 0.0;            // mean λ_NL·(logprob − base_logprob) over trainee decisions
  double speak_reward = 0.0;  // summed λ_S·r^s over trainee trajectories
  double win_rate = 0.0;      // crew win rate of the batch
  int games = 0;
  int aborted_games = 0;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j = {{"iteration", iteration}, {"step", step}, {"phase", phase},
                                {"variant", std::string(to_string(variant))}};
    j["loss"] = {{"total", loss.total},         {"policy", loss.policy},       {"value", loss.value},
                 {"entropy", loss.entropy},     {"listening", loss.listening}, {"world_model", loss.world_model},
                 {"speaking", loss.speaking}};
    j["grad_norm"] = grad_norm;
    j["kl"] = kl;
    j["speak_reward"] = speak_reward;
    j["win_rate"] = win_rate;
    j["games"] = games;
    j["aborted_games"] = aborted_games;
    return j;
  }
};

// ---- rollouts -------------------------------------------------------------

// Training layouts: grid in {1×3, 2×2, 2×3} (rows × columns), tasks in {3,4,5}, 4 crew + 1 imposter.
inline GameConfig sample_config(Rng& rng) {
  static constexpr std::array<std::pair<int, int>, 3> kGrids = {{{1, 3}, {2, 2}, {2, 3}}};
  GameConfig c;
  const auto [rows, cols] = kGrids[rng.uniform_index(kGrids.size())];
  c.grid_height = rows;
  c.grid_width = cols;
  c.tasks_per_crewmate = 3 + static_cast<int>(rng.uniform_index(3));
  c.n_players = 5;
  c.n_imposters = 1;
  c.seed = rng.next();
  return c;
}

struct Matchup {
  PolicyHandle crew;
  std::optional<PolicyHandle> frozen_listener;  // takes exactly one crew seat when set
  PolicyHandle imposter;
};

// Plays one game; the frozen-listener seat is drawn from the game seed.
inline GameRecord play_matchup(const GameConfig& config, const Matchup& m, RunOptions options = {}) {
  const int crew = config.n_players - config.n_imposters;
  const int frozen_slot =
      m.frozen_listener ? static_cast<int>(Rng(derive_seed(config.seed, 77)).uniform_index(static_cast<std::size_t>(crew)))
                        : -1;
  int crew_seen = 0;
  auto factory = [&](const SeatInfo& seat, std::size_t) -> std::unique_ptr<Agent> {
    if (seat.role == Role::Imposter) return make_builtin_agent(m.imposter, seat);
    const bool frozen = crew_seen++ == frozen_slot;
    return make_builtin_agent(frozen ? *m.frozen_listener : m.crew, seat);
  };
  return play_game(config, factory, std::move(options));
}

struct RolloutBatch {
  std::vector<GameRecord> games;
  int aborted = 0;
  std::vector<std::string> errors;

  double crew_win_rate() const {
    if (games.empty()) return 0.0;
    int wins = 0;
    for (const auto& g : games) wins += g.outcome.winner == Winner::Crewmates;
    return static_cast<double>(wins) / static_cast<double>(games.size());
  }
};

inline RolloutBatch collect_rollouts(const Matchup& m, int batch_envs, Rng& rng, const std::string& trainee = {}) {
  RolloutBatch out;
  RunOptions opts;
  opts.trajectory_text = false;
  for (int e = 0; e < batch_envs; ++e) {
    const GameConfig config = sample_config(rng);
    try {
      GameRecord g = play_matchup(config, m, opts);
      for (auto& t : g.trajectories) t.trainable = !trainee.empty() && t.policy_id == trainee;
      out.games.push_back(std::move(g));
    } catch (const std::exception& ex) {
      ++out.aborted;
      out.errors.push_back(ex.what());
    }
  }
  return out;
}

// ---- updates --------------------------------------------------------------

inline std::vector<TrajectorySamples> batch_samples(const RolloutBatch& batch, const LossWeights& w,
                                                    const PpoConfig& ppo, const std::vector<double>& theta,
                                                    double* kl = nullptr, double* speak = nullptr) {
  std::vector<TrajectorySamples> out;
  double kl_sum = 0.0, speak_sum = 0.0;
  std::size_t n_dec = 0;
  for (const auto& g : batch.games) {
    const auto imps = g.imposters();
    for (const auto& t : g.trajectories) {
      if (!t.trainable) continue;
      out.push_back(make_samples(t, g.meetings, imps, w, ppo, theta));
      const SignalBatch sb = assemble(t, g.meetings, imps, w.coeffs, w.role);
      for (std::size_t i = 0; i < sb.size(); ++i) {
        speak_sum += sb.speak_reward[i];
        if (t.steps[i].is_decision()) {
          kl_sum += sb.kl_term[i];
          ++n_dec;
        }
      }
    }
  }
  if (kl) *kl = n_dec ? kl_sum / static_cast<double>(n_dec) : 0.0;
  if (speak) *speak = speak_sum;
  return out;
}

inline void check_finite(const LossEval& e) {
  const std::pair<const char*, double> parts[] = {{"policy", e.parts.policy},       {"value", e.parts.value},
                                                  {"entropy", e.parts.entropy},     {"listening", e.parts.listening},
                                                  {"world_model", e.parts.world_model}};
  for (const auto& [name, v] : parts)
    if (!std::isfinite(v)) throw DivergenceError(name, std::string("non-finite ") + name + " loss");
  for (double g : e.grad)
    if (!std::isfinite(g)) throw DivergenceError("gradient", "non-finite gradient");
}

// Clipped-surrogate PPO on the trainee's trajectories. Throws
// DivergenceError (leaving `params` untouched) on a non-finite loss.
inline TrainStats ppo_update(Params& params, Optimizer& opt, const RolloutBatch& batch, const TrainConfig& cfg,
                             Variant variant, Rng& rng) {
  const LossWeights w = loss_weights(cfg, variant);
  TrainStats stats;
  stats.variant = variant;
  stats.games = static_cast<int>(batch.games.size());
  stats.aborted_games = batch.aborted;
  stats.win_rate = batch.crew_win_rate();

  const auto samples = batch_samples(batch, w, cfg.ppo, params.theta, &stats.kl, &stats.speak_reward);
  std::vector<const TrajectorySamples*> all;
  for (const auto& s : samples) all.push_back(&s);
  const LossEval before = evaluate_loss(params.theta, all, w, cfg.ppo);
  check_finite(before);
  stats.loss = before.parts;
  for (const auto& c : loss_components()) stats.grad_norm[c] = before.grad_norm(c);
  if (all.empty()) return stats;

  std::vector<double> theta = params.theta;
  std::vector<std::size_t> order(all.size());
  for (int epoch = 0; epoch < cfg.ppo.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.ppo.minibatch)) {
      std::vector<const TrajectorySamples*> mb;
      for (std::size_t k = start; k < std::min(order.size(), start + static_cast<std::size_t>(cfg.ppo.minibatch)); ++k)
        mb.push_back(all[order[k]]);
      const LossEval e = evaluate_loss(theta, mb, w, cfg.ppo);
      check_finite(e);
      opt.step(theta, e.grad);
    }
  }
  for (double v : theta)
    if (!std::isfinite(v)) throw DivergenceError("parameters", "non-finite parameters after update");
  params.theta = std::move(theta);
  return stats;
}

// Full-batch listening-only fit on fixed survey samples.
inline LossParts train_listening(Params& params, const std::vector<TrajectorySamples>& data, const TrainConfig& cfg,
                                 int epochs, Optimizer& opt) {
  const LossWeights w = loss_weights(cfg, Variant::L_only);
  std::vector<const TrajectorySamples*> all;
  for (const auto& s : data) all.push_back(&s);
  LossParts last;
  for (int e = 0; e < epochs; ++e) {
    const LossEval ev = evaluate_loss(params.theta, all, w, cfg.ppo);
    check_finite(ev);
    last = ev.parts;
    opt.step(params.theta, ev.grad);
  }
  return last;
}

inline double listening_accuracy(const Params& params, const std::vector<SurveySample>& data,
                                 bool witnessed_only = false) {
  int n = 0, hit = 0;
  for (const auto& s : data) {
    if (witnessed_only && !s.witnessed) continue;
    ++n;
    const auto z = logits_of(s.rows, params.theta);
    std::size_t best = 0;
    bool tie = false;
    for (std::size_t j = 1; j < z.size(); ++j) {
      if (z[j] > z[best]) {
        best = j;
        tie = false;
      } else if (z[j] == z[best]) {
        tie = true;
      }
    }
    hit += !tie && best == s.label;
  }
  return n ? static_cast<double>(hit) / n : 0.0;
}

// ---- self-play ------------------------------------------------------------

struct Population {
  int iteration = 0;
  PolicyHandle crew;
  PolicyHandle frozen_listener;
  PolicyHandle imposter;
  std::vector<PolicyHandle> history;  // (crew, imposter) per iteration, append-only
};

using StatsSink = std::function<void(const TrainStats&)>;

inline Params imposter_warm_start(double weight) {
  Params p;
  p.theta[features::kActionOff + 11] = weight;
  return p;
}

// π_L: listening-only training on random-gameplay rollouts against the
// scripted imposter, then frozen.
inline PolicyHandle pretrain_listener(const TrainConfig& cfg, std::uint64_t seed, const StatsSink& sink = {}) {
  Params params;
  Adam opt(cfg.lr);
  Rng rng(derive_seed(seed, 1));
  for (int u = 0; u < cfg.listen_updates; ++u) {
    PolicyHandle h = PolicyHandle::trainable_from("pi_L-train", params);
    h.random_gameplay = true;
    const RolloutBatch batch = collect_rollouts({h, std::nullopt, PolicyHandle::scripted()}, cfg.batch_envs, rng, h.id);
    TrainStats s = ppo_update(params, opt, batch, cfg, Variant::L_only, rng);
    s.step = u;
    s.phase = "listen";
    if (sink) sink(s);
  }
  PolicyHandle h = PolicyHandle::trainable_from("pi_L", params);
  h.random_gameplay = true;
  return h.frozen("pi_L");
}

inline Population initial_population(const TrainConfig& cfg, std::uint64_t seed, const StatsSink& sink = {}) {
  Population pop;
  pop.frozen_listener = pretrain_listener(cfg, seed, sink);
  PolicyHandle crew = PolicyHandle::trainable_from("crew-0", *pop.frozen_listener.params);
  crew.random_gameplay = true;
  pop.crew = crew.frozen("crew-0");
  pop.imposter = PolicyHandle::scripted();
  pop.imposter.id = "imposter-0";
  pop.history = {pop.crew, pop.imposter};
  return pop;
}

inline Params train_side(const Params& init, std::shared_ptr<const Params> base, const std::string& id,
                         const Matchup& opponents, bool train_crew, const TrainConfig& cfg, Variant variant,
                         Rng& rng, int iteration, const StatsSink& sink) {
  Params params = init;
  Adam opt(cfg.lr);
  for (int u = 0; u < cfg.updates_per_phase; ++u) {
    PolicyHandle h = PolicyHandle::trainable_from(id, params, base);
    Matchup m = opponents;
    (train_crew ? m.crew : m.imposter) = h;
    const RolloutBatch batch = collect_rollouts(m, cfg.batch_envs, rng, id);
    TrainStats s = ppo_update(params, opt, batch, cfg, variant, rng);
    s.iteration = iteration;
    s.step = u;
    s.phase = train_crew ? "crew" : "imposter";
    if (sink) sink(s);
  }
  return params;
}

// New crew vs the current imposter, then a new imposter vs the new crew.
// A diverging update rejects the whole iteration.
inline Population self_play_iteration(const Population& pop, const TrainConfig& cfg, std::uint64_t seed,
                                      const StatsSink& sink = {}) {
  try {
    const int k = pop.iteration + 1;
    Rng rng(derive_seed(seed, 100 + static_cast<std::uint64_t>(k)));
    const auto crew_base = pop.frozen_listener.params;
    const std::string crew_id = "crew-" + std::to_string(k);
    const Params crew_params = train_side(*pop.crew.params, crew_base, crew_id,
                                          {pop.crew, pop.frozen_listener, pop.imposter}, true, cfg,
                                          cfg.variant == Variant::Imposter ? Variant::RL_L_S : cfg.variant, rng, k, sink);
    const PolicyHandle new_crew = PolicyHandle::trainable_from(crew_id, crew_params, crew_base).frozen(crew_id);

    const Params imp_init = pop.imposter.params ? *pop.imposter.params : imposter_warm_start(cfg.imposter_warm_start);
    const auto imp_base = std::make_shared<const Params>(imposter_warm_start(cfg.imposter_warm_start));
    const std::string imp_id = "imposter-" + std::to_string(k);
    const Params imp_params = train_side(imp_init, imp_base, imp_id, {new_crew, pop.frozen_listener, pop.imposter},
                                         false, cfg, Variant::Imposter, rng, k, sink);
    const PolicyHandle new_imp = PolicyHandle::trainable_from(imp_id, imp_params, imp_base).frozen(imp_id);

    Population next = pop;
    next.iteration = k;
    next.crew = new_crew;
    next.imposter = new_imp;
    next.history.push_back(new_crew);
    next.history.push_back(new_imp);
    return next;
  } catch (const DivergenceError&) {
    return pop;
  }
}

// ---- evaluation -----------------------------------------------------------

struct WinStats {
  int games = 0;
  int crew_wins = 0;
  int imposter_wins = 0;
  int draws = 0;

  double win_rate() const { return games ? static_cast<double>(crew_wins) / games : 0.0; }
  // 95% normal-approximation half-width.
  double half_width() const {
    if (!games) return 1.0;
    const double p = win_rate();
    return 1.96 * std::sqrt(p * (1.0 - p) / games);
  }
  void add(const Outcome& o) {
    ++games;
    crew_wins += o.winner == Winner::Crewmates;
    imposter_wins += o.winner == Winner::Imposters;
    draws += o.winner == Winner::Draw;
  }
};

inline WinStats evaluate_matchup(const Matchup& m, int games, std::uint64_t seed,
                                 const std::function<GameConfig(Rng&)>& configs = sample_config) {
  WinStats w;
  Rng rng(seed);
  RunOptions opts;
  opts.trajectories = false;
  for (int g = 0; g < games; ++g) w.add(play_matchup(configs(rng), m, opts).outcome);
  return w;
}

struct CurvePoint {
  int iteration = 0;
  double upper = 0.0;  // crew_k vs the imposter it trained against (imposter_{k−1})
  double lower = 0.0;  // crew_k vs the imposter trained against it (imposter_k)
  std::vector<double> upper_by_seed, lower_by_seed;

  double gap() const { return upper - lower; }
};

inline CurvePoint exploitability_eval(const Population& pop, int eval_games, const std::vector<std::uint64_t>& seeds) {
  if (eval_games < 1) throw ConfigError("eval_games must be >= 1");
  if (pop.history.size() < 2) throw QueryError("population has no history");
  const PolicyHandle& prev_imp =
      pop.history.size() >= 4 ? pop.history[pop.history.size() - 3] : pop.history[pop.history.size() - 1];
  CurvePoint c;
  c.iteration = pop.iteration;
  for (std::uint64_t s : seeds) {
    c.upper_by_seed.push_back(evaluate_matchup({pop.crew, pop.frozen_listener, prev_imp}, eval_games, s).win_rate());
    c.lower_by_seed.push_back(evaluate_matchup({pop.crew, pop.frozen_listener, pop.imposter}, eval_games, s).win_rate());
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  };
  c.upper = mean(c.upper_by_seed);
  c.lower = mean(c.lower_by_seed);
  return c;
}

}  // namespace crewsim

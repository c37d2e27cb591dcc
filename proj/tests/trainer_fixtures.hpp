#pragma once

// Small fixed batches and a finite-difference checker for the loss.

#include <algorithm>
#include <cmath>
#include <vector>

#include "crewsim.hpp"

namespace crewsim::testing {

inline Params random_params(std::uint64_t seed, double scale = 0.5) {
  Rng rng(seed);
  Params p;
  for (auto& v : p.theta) v = scale * (2.0 * rng.uniform01() - 1.0);
  return p;
}

// Trainable crew (with a distinct base) against the scripted imposter.
inline RolloutBatch mini_batch(std::uint64_t seed, int envs, const Params& crew, const Params& base) {
  const auto h = PolicyHandle::trainable_from("trainee", crew, std::make_shared<const Params>(base));
  Rng rng(seed);
  return collect_rollouts({h, std::nullopt, PolicyHandle::scripted()}, envs, rng, "trainee");
}

struct GradCheck {
  double max_rel = 0.0;
  std::size_t checked = 0;
};

// Central differences of the total loss on every coordinate the batch touches.
inline GradCheck finite_difference_check(const std::vector<double>& theta,
                                         const std::vector<const TrajectorySamples*>& batch, const LossWeights& w,
                                         const PpoConfig& ppo, double h = 1e-5) {
  const LossEval at = evaluate_loss(theta, batch, w, ppo);
  GradCheck out;
  std::vector<double> t = theta;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    t[i] = theta[i] + h;
    const double up = evaluate_loss(t, batch, w, ppo).parts.total;
    t[i] = theta[i] - h;
    const double down = evaluate_loss(t, batch, w, ppo).parts.total;
    t[i] = theta[i];
    const double fd = (up - down) / (2.0 * h);
    const double an = at.grad[i];
    const double scale = std::max(std::abs(fd), std::abs(an));
    if (scale < 1e-6) continue;  // coordinate unused by this batch
    out.max_rel = std::max(out.max_rel, std::abs(fd - an) / scale);
    ++out.checked;
  }
  return out;
}

}  // namespace crewsim::testing

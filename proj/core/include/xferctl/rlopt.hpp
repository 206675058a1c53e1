#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "xferctl/dynamics.hpp"
#include "xferctl/policies.hpp"
#include "xferctl/reward.hpp"

namespace xferctl::rlopt {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Which parameters receive gradients when fine-tuning a transformed policy.
enum class TrainableSet { source_params_only, source_plus_transform, all };

struct TrainConfig {
  double discount = 0.99;
  int steps_per_iteration = 2000;
  int iterations = 50;
  double clip_ratio = 0.2;
  double learning_rate = 3e-4;
  int minibatch_size = 64;
  double entropy_coefficient = 0.0;
  std::uint64_t seed = 0;
  TrainableSet trainable_set = TrainableSet::all;
  // PPO-style reuse of each on-policy batch; with a single pass the
  // likelihood ratio never leaves 1 and the clip would be inert.
  int update_epochs = 10;
  int horizon = 500;

  void validate() const;
};

struct CurvePoint {
  long env_steps = 0;
  double mean_reward = 0.0;
  double reward_std = 0.0;
  double entropy = 0.0;
  int episodes = 0;
};
using LearningCurve = std::vector<CurvePoint>;

struct TrainResult {
  policies::Policy policy;
  LearningCurve curve;
};

// On-policy minibatch for the surrogate objective.
struct SurrogateBatch {
  MatrixXd states;      // N x n
  MatrixXd actions;     // N x m, pre-clip samples
  VectorXd log_probs;   // under the policy that produced them
  VectorXd advantages;  // normalized
};

// Flat view of the trainable parameters for (policy, set).
VectorXd get_trainable_params(const policies::Policy& policy, TrainableSet set);
void set_trainable_params(policies::Policy& policy, TrainableSet set,
                          const VectorXd& values);

// Clipped-surrogate objective L = E[min(rho*adv, clip(rho, 1-eps, 1+eps)*adv)]
// plus the entropy bonus. `surrogate_gradient` is the analytic gradient of
// `surrogate_loss` with respect to the trainable parameter vector.
double surrogate_loss(const policies::Policy& policy, TrainableSet set,
                      const SurrogateBatch& batch, const TrainConfig& cfg);
VectorXd surrogate_gradient(const policies::Policy& policy, TrainableSet set,
                            const SurrogateBatch& batch, const TrainConfig& cfg);

// One plain gradient-ascent step on the surrogate (params + lr * grad).
policies::Policy surrogate_update(const policies::Policy& policy, TrainableSet set,
                                  const SurrogateBatch& batch,
                                  const TrainConfig& cfg);

// On-policy training loop: collect whole episodes until the step budget is
// met, compute discounted reward-to-go returns with a batch-mean baseline,
// normalize advantages, then run `update_epochs` passes of minibatch updates.
// Updates use Adam on the surrogate gradient. Deterministic given cfg.seed.
TrainResult train(const policies::Policy& policy, const dynamics::SystemSpec& spec,
                  const RewardFunction& reward, const TrainConfig& cfg);

struct EvalResult {
  double mean = 0.0;
  double stddev = 0.0;
  std::vector<double> per_episode;
};

// Deploys the deterministic (head-mean, clipped) policy for n_episodes from
// seeded initial states; undiscounted episodic rewards.
EvalResult evaluate_policy(const policies::Policy& policy,
                           const dynamics::SystemSpec& spec,
                           const RewardFunction& reward, int n_episodes,
                           std::uint64_t seed, int horizon = 500);

}  // namespace xferctl::rlopt

#include <doctest.h>

#include <cmath>

#include "xferctl/dynamics.hpp"
#include "xferctl/harness.hpp"
#include "xferctl/rlopt.hpp"

using namespace xferctl;
using namespace xferctl::rlopt;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

SurrogateBatch random_batch(const policies::Policy& policy, int count,
                            std::uint64_t seed, double logp_shift = 0.0) {
  Rng rng(seed);
  const int n = policy.kind() == policies::Policy::Kind::parametric
                    ? policy.as_parametric().state_dim
                    : policy.as_transformed().source.as_parametric().state_dim;
  SurrogateBatch batch;
  batch.states = MatrixXd::NullaryExpr(
      count, n, [&](Eigen::Index, Eigen::Index) { return rng.uniform(-1, 1); });
  batch.actions = MatrixXd(count, 1);
  batch.log_probs = VectorXd(count);
  batch.advantages = VectorXd(count);
  for (int i = 0; i < count; ++i) {
    const VectorXd x = batch.states.row(i).transpose();
    Rng sampler(rng.next_u64());
    const auto sample = policies::sample_action(policy, x, sampler);
    batch.actions(i, 0) = sample.action(0);
    batch.log_probs(i) = sample.log_prob + logp_shift;
    batch.advantages(i) = rng.normal();
  }
  return batch;
}

double fd_gradient(const policies::Policy& policy, TrainableSet set,
                   const SurrogateBatch& batch, const TrainConfig& cfg, int index,
                   double h = 1e-6) {
  policies::Policy plus = policy;
  policies::Policy minus = policy;
  VectorXd params = get_trainable_params(policy, set);
  VectorXd p = params;
  p(index) += h;
  set_trainable_params(plus, set, p);
  p = params;
  p(index) -= h;
  set_trainable_params(minus, set, p);
  return (surrogate_loss(plus, set, batch, cfg) -
          surrogate_loss(minus, set, batch, cfg)) /
         (2 * h);
}

void check_gradient(const policies::Policy& policy, TrainableSet set,
                    const SurrogateBatch& batch, const TrainConfig& cfg,
                    double tol = 1e-4) {
  const VectorXd grad = surrogate_gradient(policy, set, batch, cfg);
  const double scale = std::max(1.0, grad.cwiseAbs().maxCoeff());
  for (int i = 0; i < grad.size(); ++i) {
    const double fd = fd_gradient(policy, set, batch, cfg, i);
    CHECK(std::abs(grad(i) - fd) / scale < tol);
  }
}

}  // namespace

TEST_CASE("surrogate gradient matches central finite differences") {
  TrainConfig cfg;
  cfg.entropy_coefficient = 0.01;

  SUBCASE("five-parameter toy policy, 20 random batches") {
    for (int trial = 0; trial < 20; ++trial) {
      auto net = policies::ParametricPolicy::random_init(1, 1, 1, 100 + trial);
      const policies::Policy pi{net};
      const auto batch = random_batch(pi, 16, 500 + trial, 0.05);
      check_gradient(pi, TrainableSet::all, batch, cfg);
    }
  }

  SUBCASE("wider network") {
    auto net = policies::ParametricPolicy::random_init(2, 1, 8, 7);
    const policies::Policy pi{net};
    const auto batch = random_batch(pi, 32, 11, -0.05);
    check_gradient(pi, TrainableSet::all, batch, cfg);
  }

  SUBCASE("transformed policy with trainable transform") {
    const policies::Policy source{
        policies::ParametricPolicy::random_init(2, 1, 4, 8)};
    policies::TransformedPolicy t{source, MatrixXd::Constant(1, 1, -1.2),
                                  MatrixXd::Constant(1, 2, 0.3), 0.0};
    const policies::Policy pi{t};
    const auto batch = random_batch(pi, 24, 13, 0.03);
    check_gradient(pi, TrainableSet::source_plus_transform, batch, cfg);
    check_gradient(pi, TrainableSet::source_params_only, batch, cfg);
  }
}

TEST_CASE("zero advantages give a zero gradient and unchanged parameters") {
  TrainConfig cfg;
  auto net = policies::ParametricPolicy::random_init(2, 1, 8, 3);
  const policies::Policy pi{net};
  auto batch = random_batch(pi, 16, 4);
  batch.advantages.setZero();
  const VectorXd grad = surrogate_gradient(pi, TrainableSet::all, batch, cfg);
  CHECK(grad.norm() == 0.0);
  const auto updated = surrogate_update(pi, TrainableSet::all, batch, cfg);
  CHECK(get_trainable_params(updated, TrainableSet::all) ==
        get_trainable_params(pi, TrainableSet::all));
}

TEST_CASE("fully clipped batch kills the gradient") {
  TrainConfig cfg;  // entropy coefficient 0
  auto net = policies::ParametricPolicy::random_init(1, 1, 4, 5);
  const policies::Policy pi{net};
  // old log-probs far below current: ratio = e^1.0 > 1 + eps on every sample
  auto batch = random_batch(pi, 16, 6, /*logp_shift=*/-1.0);
  batch.advantages = VectorXd::Ones(16);
  const VectorXd grad = surrogate_gradient(pi, TrainableSet::all, batch, cfg);
  CHECK(grad.norm() == 0.0);
}

TEST_CASE("zero learning rate leaves parameters bit-identical through train") {
  const auto spec = dynamics::make_system("temperature");
  const auto reward =
      RewardFunction::quadratic(harness::default_cost(spec));
  const policies::Policy pi{policies::ParametricPolicy::random_init(1, 1, 8, 2)};
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.iterations = 2;
  cfg.steps_per_iteration = 200;
  cfg.horizon = 50;
  cfg.seed = 12;
  const auto result = train(pi, spec, reward, cfg);
  CHECK(get_trainable_params(result.policy, TrainableSet::all) ==
        get_trainable_params(pi, TrainableSet::all));
  CHECK(result.curve.size() == 2);
}

TEST_CASE("training is deterministic given the seed") {
  const auto spec = dynamics::make_system("temperature");
  const auto reward = RewardFunction::quadratic(harness::default_cost(spec));
  const policies::Policy pi{policies::ParametricPolicy::random_init(1, 1, 8, 2)};
  TrainConfig cfg;
  cfg.iterations = 3;
  cfg.steps_per_iteration = 200;
  cfg.horizon = 50;
  cfg.seed = 99;
  const auto a = train(pi, spec, reward, cfg);
  const auto b = train(pi, spec, reward, cfg);
  REQUIRE(a.curve.size() == b.curve.size());
  for (std::size_t i = 0; i < a.curve.size(); ++i) {
    CHECK(a.curve[i].mean_reward == b.curve[i].mean_reward);
    CHECK(a.curve[i].env_steps == b.curve[i].env_steps);
  }
  CHECK(get_trainable_params(a.policy, TrainableSet::all) ==
        get_trainable_params(b.policy, TrainableSet::all));
}

TEST_CASE("source_params_only freezes the transformation bit-exactly") {
  const auto spec = dynamics::make_system("temperature");
  const auto reward = RewardFunction::quadratic(harness::default_cost(spec));
  const policies::Policy source{
      policies::ParametricPolicy::random_init(1, 1, 8, 20)};
  policies::TransformedPolicy t{source, MatrixXd::Constant(1, 1, -1.0),
                                MatrixXd::Constant(1, 1, -0.05), 0.0};
  TrainConfig cfg;
  cfg.iterations = 3;
  cfg.steps_per_iteration = 200;
  cfg.horizon = 50;
  cfg.seed = 1;
  cfg.trainable_set = TrainableSet::source_params_only;
  const auto result = train(policies::Policy{t}, spec, reward, cfg);
  const auto& trained = result.policy.as_transformed();
  CHECK(trained.mult(0, 0) == -1.0);
  CHECK(trained.gain_add(0, 0) == -0.05);
  // and the source network did move
  CHECK(trained.source.as_parametric().params !=
        source.as_parametric().params);
}

TEST_CASE("trainable-set / variant pairing is validated") {
  const auto spec = dynamics::make_system("temperature");
  const auto reward = RewardFunction::quadratic(harness::default_cost(spec));
  const policies::Policy plain{
      policies::ParametricPolicy::random_init(1, 1, 4, 3)};
  TrainConfig cfg;
  cfg.trainable_set = TrainableSet::source_plus_transform;
  cfg.iterations = 1;
  cfg.steps_per_iteration = 50;
  cfg.horizon = 10;
  CHECK_THROWS(train(plain, spec, reward, cfg));

  const policies::Policy gain{policies::LinearGainPolicy{
      MatrixXd::Zero(1, 1), VectorXd::Zero(1)}};
  cfg.trainable_set = TrainableSet::all;
  CHECK_THROWS(train(gain, spec, reward, cfg));
}

TEST_CASE("log-std never drops below the exploration floor") {
  policies::Policy pi{policies::ParametricPolicy::random_init(1, 1, 4, 3)};
  VectorXd params = get_trainable_params(pi, TrainableSet::all);
  params(params.size() - 1) = -20.0;  // way below the floor
  set_trainable_params(pi, TrainableSet::all, params);
  const auto& net = pi.as_parametric();
  CHECK(net.log_std()(0) == policies::kLogStdFloor);
  const auto head = policies::gaussian_head(pi, VectorXd::Zero(1));
  CHECK(head.stddev(0) >= 1e-3 * (1.0 - 1e-12));
}

TEST_CASE("evaluate_policy equals a hand-rolled closed-loop simulation") {
  const auto spec = dynamics::make_system("temperature");
  const auto cost = harness::default_cost(spec);
  const auto reward = RewardFunction::quadratic(cost);
  const auto lin = dynamics::linearize_at_origin(spec);
  const policies::Policy pi{policies::lqr_gain(lin, cost)};

  const auto result = evaluate_policy(pi, spec, reward, 20, 31, 500);

  // independent oracle: same seeded initial states, explicit loop
  Rng rng(Rng::derive(31, "eval"));
  std::vector<double> oracle;
  for (int ep = 0; ep < 20; ++ep) {
    VectorXd x = dynamics::sample_initial_state(spec, rng);
    double total = 0.0;
    for (int i = 0; i < 500; ++i) {
      VectorXd u = policies::raw_action(pi, x);
      u = policies::clip(u, spec.action_lower, spec.action_upper);
      x = x + spec.dt * dynamics::derivative(spec, x, u);
      total += -(x.dot(cost.q * x) + u.dot(cost.r * u));
    }
    oracle.push_back(total);
  }
  double mean = 0.0;
  for (const double v : oracle) mean += v;
  mean /= oracle.size();
  CHECK(result.mean == doctest::Approx(mean).epsilon(1e-2));
  CHECK(result.per_episode.size() == 20);
}

TEST_CASE("training on temperature improves a poorly initialized policy") {
  const auto spec = dynamics::make_system("temperature");
  const auto reward = RewardFunction::quadratic(harness::default_cost(spec));
  // seed 41 initializes to a policy that heats constantly (mean reward
  // around -1700); the improvement threshold is frozen from a pilot run
  const policies::Policy init{
      policies::ParametricPolicy::random_init(1, 1, 32, 41)};
  TrainConfig cfg;
  cfg.iterations = 50;
  cfg.seed = 41;
  const auto result = train(init, spec, reward, cfg);

  const auto before = evaluate_policy(init, spec, reward, 20, 7, 500);
  const auto after = evaluate_policy(result.policy, spec, reward, 20, 7, 500);
  REQUIRE(before.mean < -1000.0);
  CHECK(std::abs(after.mean) < 0.25 * std::abs(before.mean));
}

TEST_CASE("statistical trend: temperature moving average mostly non-decreasing") {
  // Non-decreasing is checked up to the sampling error of the per-iteration
  // estimate (1.65 standard errors, one-sided 95%): once converged the curve
  // is flat plus noise, so a strict comparison would reject half the steps
  // for any stochastic learner.
  const auto spec = dynamics::make_system("temperature");
  const auto reward = RewardFunction::quadratic(harness::default_cost(spec));
  int checks = 0;
  int ok = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const policies::Policy init{
        policies::ParametricPolicy::random_init(1, 1, 32, seed)};
    TrainConfig cfg;
    cfg.iterations = 50;
    cfg.seed = seed;
    const auto result = train(init, spec, reward, cfg);
    const auto ma = [&](std::size_t i) {
      double acc = 0.0;
      for (std::size_t j = i + 1 - 5; j <= i; ++j) {
        acc += result.curve[j].mean_reward;
      }
      return acc / 5.0;
    };
    for (std::size_t i = 5; i < result.curve.size(); ++i) {
      const auto& now = result.curve[i];
      const auto& then = result.curve[i - 5];
      const double se =
          std::sqrt(now.reward_std * now.reward_std / std::max(1, now.episodes) +
                    then.reward_std * then.reward_std /
                        std::max(1, then.episodes)) /
          5.0;
      ++checks;
      if (ma(i) >= ma(i - 1) - 1.65 * se) ++ok;
    }
  }
  CHECK(static_cast<double>(ok) / checks >= 0.9);
}

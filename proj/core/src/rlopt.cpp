#include "xferctl/rlopt.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "xferctl/numeric.hpp"
#include "xferctl/rng.hpp"

namespace xferctl::rlopt {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

using RowMajorMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic,
                                                   Eigen::Dynamic, Eigen::RowMajor>>;

// The trainable structure behind a policy: a parametric network, optionally
// wrapped by one transformation layer whose (mult, gain_add) may themselves
// be trainable.
struct ModelView {
  const policies::ParametricPolicy* net = nullptr;
  const policies::TransformedPolicy* wrapper = nullptr;  // null if bare net
  bool train_transform = false;

  int net_params() const { return net->param_count(); }
  int total_params() const {
    if (wrapper == nullptr || !train_transform) return net_params();
    const int m = static_cast<int>(wrapper->mult.rows());
    const int n = static_cast<int>(wrapper->gain_add.cols());
    return net_params() + m * m + m * n;
  }
};

ModelView model_view(const policies::Policy& policy, TrainableSet set) {
  ModelView view;
  if (policy.kind() == policies::Policy::Kind::parametric) {
    require(set != TrainableSet::source_plus_transform,
            "trainable set source_plus_transform requires a transformed policy");
    view.net = &policy.as_parametric();
    return view;
  }
  if (policy.kind() == policies::Policy::Kind::transformed) {
    const auto& t = policy.as_transformed();
    require(t.source.kind() == policies::Policy::Kind::parametric,
            "training requires a parametric policy at the bottom of the chain");
    require(t.mult.rows() == 1 && t.mult.cols() == 1,
            "training through a transformation supports scalar actions only");
    view.net = &t.source.as_parametric();
    view.wrapper = &t;
    view.train_transform = set != TrainableSet::source_params_only;
    return view;
  }
  throw std::invalid_argument(
      "train: policy variant is not parametric or transformed(parametric)");
}

struct Forward {
  MatrixXd hidden;       // N x h, post-tanh
  MatrixXd net_mean;     // N x m
  MatrixXd mean;         // N x m, after the wrapper if any
  VectorXd sigma;        // m, effective (after wrapper)
};

Forward forward_pass(const ModelView& view, const MatrixXd& states) {
  const auto& p = *view.net;
  const int m = p.action_dim;
  const int h = p.hidden;
  const RowMajorMap w1(p.params.data() + p.w1_offset(), h, p.state_dim);
  const RowMajorMap w2(p.params.data() + p.w2_offset(), m, h);
  const VectorXd b1 = p.params.segment(p.b1_offset(), h);
  const VectorXd b2 = p.params.segment(p.b2_offset(), m);
  const VectorXd net_log_std =
      p.log_std().cwiseMax(policies::kLogStdFloor);

  Forward f;
  f.hidden = ((states * w1.transpose()).rowwise() + b1.transpose())
                 .array()
                 .tanh()
                 .matrix();
  f.net_mean = (f.hidden * w2.transpose()).rowwise() + b2.transpose();
  if (view.wrapper != nullptr) {
    const double c = view.wrapper->mult(0, 0);
    f.mean = c * f.net_mean + states * view.wrapper->gain_add.transpose();
    f.sigma = std::abs(c) * net_log_std.array().exp().matrix();
  } else {
    f.mean = f.net_mean;
    f.sigma = net_log_std.array().exp().matrix();
  }
  return f;
}

struct LossGrad {
  double loss = 0.0;
  VectorXd grad;
};

LossGrad surrogate_loss_grad(const ModelView& view, const SurrogateBatch& batch,
                             const TrainConfig& cfg, bool want_grad) {
  const auto& p = *view.net;
  const int n = p.state_dim;
  const int m = p.action_dim;
  const int h = p.hidden;
  const int count = static_cast<int>(batch.states.rows());
  require(count > 0, "surrogate: empty batch");
  require(batch.states.cols() == n && batch.actions.cols() == m,
          "surrogate: batch dimension mismatch");
  require(batch.log_probs.size() == count && batch.advantages.size() == count,
          "surrogate: batch column length mismatch");

  const Forward f = forward_pass(view, batch.states);
  const MatrixXd z =
      (batch.actions - f.mean) * f.sigma.cwiseInverse().asDiagonal();
  const VectorXd log_sigma = f.sigma.array().log().matrix();
  const VectorXd logp_new =
      ((-0.5 * z.array().square()).rowwise().sum() -
       (log_sigma.sum() + m * kHalfLog2Pi))
          .matrix();
  const VectorXd ratio = (logp_new - batch.log_probs).array().exp().matrix();

  double loss = 0.0;
  VectorXd weight = VectorXd::Zero(count);  // d(loss)/d(logp_new_i)
  const double lo = 1.0 - cfg.clip_ratio;
  const double hi = 1.0 + cfg.clip_ratio;
  for (int i = 0; i < count; ++i) {
    const double adv = batch.advantages(i);
    const double unclipped = ratio(i) * adv;
    const double clipped = std::clamp(ratio(i), lo, hi) * adv;
    if (unclipped <= clipped) {
      loss += unclipped;
      weight(i) = ratio(i) * adv;
    } else {
      loss += clipped;  // clip saturates: no gradient through the ratio
    }
  }
  loss /= count;
  weight /= count;

  double entropy = 0.0;
  for (int j = 0; j < m; ++j) {
    entropy += log_sigma(j) + 0.5 + kHalfLog2Pi;
  }
  loss += cfg.entropy_coefficient * entropy;

  LossGrad out;
  out.loss = loss;
  if (!want_grad) return out;

  // d(loss)/d(mean_ij) = w_i z_ij / sigma_j
  // d(loss)/d(log sigma_j) = sum_i w_i (z_ij^2 - 1) + entropy coefficient
  const MatrixXd d_mean =
      weight.asDiagonal() * z * f.sigma.cwiseInverse().asDiagonal();
  VectorXd d_log_sigma =
      (z.array().square().colwise() * weight.array()).colwise().sum().matrix()
          .transpose();
  d_log_sigma.array() += -weight.sum() + cfg.entropy_coefficient;

  MatrixXd d_net_mean;
  double d_mult = 0.0;
  Eigen::RowVectorXd d_gain_add;
  if (view.wrapper != nullptr) {
    const double c = view.wrapper->mult(0, 0);
    d_net_mean = c * d_mean;
    if (view.train_transform) {
      // mean path plus the log|c| path through the effective sigma
      d_mult = (d_mean.array() * f.net_mean.array()).sum() +
               d_log_sigma.sum() / c;
      d_gain_add = d_mean.transpose() * batch.states;
    }
  } else {
    d_net_mean = d_mean;
  }

  const RowMajorMap w2(p.params.data() + p.w2_offset(), m, h);
  const MatrixXd d_w2 = d_net_mean.transpose() * f.hidden;  // m x h
  const VectorXd d_b2 = d_net_mean.colwise().sum().transpose();
  const MatrixXd d_hidden = d_net_mean * w2;                // N x h
  const MatrixXd d_z1 =
      (d_hidden.array() * (1.0 - f.hidden.array().square())).matrix();
  const MatrixXd d_w1 = d_z1.transpose() * batch.states;    // h x n
  const VectorXd d_b1 = d_z1.colwise().sum().transpose();

  VectorXd grad = VectorXd::Zero(view.total_params());
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < n; ++j) grad(p.w1_offset() + i * n + j) = d_w1(i, j);
  }
  grad.segment(p.b1_offset(), h) = d_b1;
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < h; ++j) grad(p.w2_offset() + i * h + j) = d_w2(i, j);
  }
  grad.segment(p.b2_offset(), m) = d_b2;
  grad.segment(p.log_std_offset(), m) = d_log_sigma;
  if (view.wrapper != nullptr && view.train_transform) {
    const int mm = static_cast<int>(view.wrapper->mult.rows());
    grad(p.param_count()) = d_mult;
    for (int j = 0; j < d_gain_add.size(); ++j) {
      grad(p.param_count() + mm * mm + j) = d_gain_add(j);
    }
  }
  if (!grad.allFinite()) {
    throw std::runtime_error("surrogate gradient is non-finite");
  }
  out.grad = std::move(grad);
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  require(discount > 0.0 && discount <= 1.0, "discount must be in (0, 1]");
  require(clip_ratio > 0.0 && clip_ratio < 1.0, "clip_ratio must be in (0, 1)");
  require(learning_rate >= 0.0, "learning_rate must be >= 0");
  require(steps_per_iteration > 0, "steps_per_iteration must be positive");
  require(iterations >= 0, "iterations must be >= 0");
  require(minibatch_size > 0, "minibatch_size must be positive");
  require(update_epochs > 0, "update_epochs must be positive");
  require(horizon >= 1, "horizon must be >= 1");
}

VectorXd get_trainable_params(const policies::Policy& policy, TrainableSet set) {
  const ModelView view = model_view(policy, set);
  VectorXd out(view.total_params());
  out.head(view.net_params()) = view.net->params;
  if (view.wrapper != nullptr && view.train_transform) {
    const auto& t = *view.wrapper;
    const int mm = static_cast<int>(t.mult.rows());
    int k = view.net_params();
    for (int i = 0; i < mm; ++i) {
      for (int j = 0; j < mm; ++j) out(k++) = t.mult(i, j);
    }
    for (int i = 0; i < t.gain_add.rows(); ++i) {
      for (int j = 0; j < t.gain_add.cols(); ++j) out(k++) = t.gain_add(i, j);
    }
  }
  return out;
}

void set_trainable_params(policies::Policy& policy, TrainableSet set,
                          const VectorXd& values) {
  const ModelView view = model_view(policy, set);
  require(values.size() == view.total_params(),
          "set_trainable_params: size mismatch");
  policies::ParametricPolicy* net =
      policy.kind() == policies::Policy::Kind::parametric
          ? &policy.as_parametric()
          : &policy.as_transformed().source.as_parametric();
  net->params = values.head(view.net_params());
  // exploration floor
  const int ls = net->log_std_offset();
  for (int j = 0; j < net->action_dim; ++j) {
    net->params(ls + j) = std::max(net->params(ls + j), policies::kLogStdFloor);
  }
  if (view.wrapper != nullptr && view.train_transform) {
    auto& t = policy.as_transformed();
    const int mm = static_cast<int>(t.mult.rows());
    int k = view.net_params();
    for (int i = 0; i < mm; ++i) {
      for (int j = 0; j < mm; ++j) t.mult(i, j) = values(k++);
    }
    for (int i = 0; i < t.gain_add.rows(); ++i) {
      for (int j = 0; j < t.gain_add.cols(); ++j) t.gain_add(i, j) = values(k++);
    }
  }
}

double surrogate_loss(const policies::Policy& policy, TrainableSet set,
                      const SurrogateBatch& batch, const TrainConfig& cfg) {
  return surrogate_loss_grad(model_view(policy, set), batch, cfg, false).loss;
}

VectorXd surrogate_gradient(const policies::Policy& policy, TrainableSet set,
                            const SurrogateBatch& batch, const TrainConfig& cfg) {
  return surrogate_loss_grad(model_view(policy, set), batch, cfg, true).grad;
}

policies::Policy surrogate_update(const policies::Policy& policy, TrainableSet set,
                                  const SurrogateBatch& batch,
                                  const TrainConfig& cfg) {
  policies::Policy out = policy;
  const VectorXd grad = surrogate_gradient(policy, set, batch, cfg);
  const VectorXd updated =
      get_trainable_params(policy, set) + cfg.learning_rate * grad;
  set_trainable_params(out, set, updated);
  return out;
}

namespace {

struct Rollout {
  std::vector<VectorXd> states;
  std::vector<VectorXd> actions;
  std::vector<double> log_probs;
  std::vector<double> rewards;
  std::vector<int> episode_lengths;
  std::vector<double> episodic_rewards;
};

Rollout collect_on_policy(const policies::Policy& policy,
                          const dynamics::SystemSpec& spec,
                          const RewardFunction& reward, const TrainConfig& cfg,
                          Rng& rng) {
  Rollout roll;
  while (static_cast<int>(roll.states.size()) < cfg.steps_per_iteration) {
    VectorXd x = dynamics::sample_initial_state(spec, rng);
    int length = 0;
    double episodic = 0.0;
    for (int i = 0; i < cfg.horizon; ++i) {
      const auto sample = policies::sample_action(policy, x, rng);
      const VectorXd u =
          policies::clip(sample.action, spec.action_lower, spec.action_upper);
      const VectorXd x_next = x + spec.dt * dynamics::derivative(spec, x, u);
      if (!x_next.allFinite()) break;
      const double r = reward(x_next, u);
      roll.states.push_back(x);
      roll.actions.push_back(sample.action);
      roll.log_probs.push_back(sample.log_prob);
      roll.rewards.push_back(r);
      episodic += r;
      ++length;
      x = x_next;
      if (reward.terminal(x)) break;
    }
    roll.episode_lengths.push_back(length);
    roll.episodic_rewards.push_back(episodic);
  }
  return roll;
}

struct Adam {
  VectorXd m;
  VectorXd v;
  long t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  explicit Adam(int size) : m(VectorXd::Zero(size)), v(VectorXd::Zero(size)) {}

  VectorXd step(const VectorXd& grad, double lr) {
    ++t;
    m = beta1 * m + (1.0 - beta1) * grad;
    v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad).eval();
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    return (lr * (m / c1).array() / ((v / c2).array().sqrt() + eps)).matrix();
  }
};

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double stddev_of(const std::vector<double>& v, double mean) {
  if (v.empty()) return 0.0;
  double acc = 0.0;
  for (const double x : v) acc += (x - mean) * (x - mean);
  return std::sqrt(acc / static_cast<double>(v.size()));
}

}  // namespace

TrainResult train(const policies::Policy& policy, const dynamics::SystemSpec& spec,
                  const RewardFunction& reward, const TrainConfig& cfg) {
  cfg.validate();
  (void)model_view(policy, cfg.trainable_set);  // validate variant/set pairing
  require(policy.action_dim() == spec.action_dim(),
          "train: policy/system action dimension mismatch");

  TrainResult result{policy, {}};
  Rng rng(Rng::derive(cfg.seed, "train"));
  Adam adam(static_cast<int>(
      get_trainable_params(result.policy, cfg.trainable_set).size()));
  long env_steps = 0;

  for (int iteration = 0; iteration < cfg.iterations; ++iteration) {
    const Rollout roll = collect_on_policy(result.policy, spec, reward, cfg, rng);
    const int count = static_cast<int>(roll.states.size());
    env_steps += count;

    // discounted reward-to-go, then batch-mean baseline + normalization
    VectorXd returns(count);
    int offset = 0;
    for (const int len : roll.episode_lengths) {
      double acc = 0.0;
      for (int i = len - 1; i >= 0; --i) {
        acc = roll.rewards[offset + i] + cfg.discount * acc;
        returns(offset + i) = acc;
      }
      offset += len;
    }
    VectorXd advantages = (returns.array() - returns.mean()).matrix();
    const double adv_std =
        std::sqrt(advantages.squaredNorm() / static_cast<double>(count));
    advantages /= (adv_std + 1e-8);

    const int n = spec.state_dim();
    const int m = spec.action_dim();
    MatrixXd states(count, n);
    MatrixXd actions(count, m);
    VectorXd log_probs(count);
    for (int i = 0; i < count; ++i) {
      states.row(i) = roll.states[i].transpose();
      actions.row(i) = roll.actions[i].transpose();
      log_probs(i) = roll.log_probs[i];
    }

    std::vector<int> order(count);
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < cfg.update_epochs; ++epoch) {
      for (int i = count - 1; i > 0; --i) {
        const int j = static_cast<int>(rng.uniform_index(i + 1));
        std::swap(order[i], order[j]);
      }
      for (int start = 0; start < count; start += cfg.minibatch_size) {
        const int batch_n = std::min(cfg.minibatch_size, count - start);
        SurrogateBatch batch;
        batch.states = MatrixXd(batch_n, n);
        batch.actions = MatrixXd(batch_n, m);
        batch.log_probs = VectorXd(batch_n);
        batch.advantages = VectorXd(batch_n);
        for (int k = 0; k < batch_n; ++k) {
          const int idx = order[start + k];
          batch.states.row(k) = states.row(idx);
          batch.actions.row(k) = actions.row(idx);
          batch.log_probs(k) = log_probs(idx);
          batch.advantages(k) = advantages(idx);
        }
        const VectorXd grad =
            surrogate_gradient(result.policy, cfg.trainable_set, batch, cfg);
        const VectorXd updated =
            get_trainable_params(result.policy, cfg.trainable_set) +
            adam.step(grad, cfg.learning_rate);
        if (!updated.allFinite()) {
          throw std::runtime_error(
              "train: parameters became non-finite at iteration " +
              std::to_string(iteration));
        }
        set_trainable_params(result.policy, cfg.trainable_set, updated);
      }
    }

    CurvePoint point;
    point.env_steps = env_steps;
    point.mean_reward = mean_of(roll.episodic_rewards);
    point.reward_std = stddev_of(roll.episodic_rewards, point.mean_reward);
    point.entropy = policies::policy_entropy(result.policy,
                                             VectorXd::Zero(spec.state_dim()));
    point.episodes = static_cast<int>(roll.episodic_rewards.size());
    result.curve.push_back(point);
  }
  return result;
}

EvalResult evaluate_policy(const policies::Policy& policy,
                           const dynamics::SystemSpec& spec,
                           const RewardFunction& reward, int n_episodes,
                           std::uint64_t seed, int horizon) {
  require(n_episodes >= 1, "evaluate_policy: n_episodes must be >= 1");
  require(policy.action_dim() == spec.action_dim(),
          "evaluate_policy: action dimension mismatch");
  Rng rng(Rng::derive(seed, "eval"));
  EvalResult result;
  result.per_episode.reserve(n_episodes);
  for (int ep = 0; ep < n_episodes; ++ep) {
    VectorXd x = dynamics::sample_initial_state(spec, rng);
    double episodic = 0.0;
    for (int i = 0; i < horizon; ++i) {
      const VectorXd u =
          policies::act(policy, x, spec.action_lower, spec.action_upper);
      const VectorXd x_next = x + spec.dt * dynamics::derivative(spec, x, u);
      if (!x_next.allFinite()) break;
      episodic += reward(x_next, u);
      x = x_next;
      if (reward.terminal(x)) break;
    }
    result.per_episode.push_back(episodic);
  }
  result.mean = mean_of(result.per_episode);
  result.stddev = stddev_of(result.per_episode, result.mean);
  return result;
}

}  // namespace xferctl::rlopt

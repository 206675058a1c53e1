#include "xferctl/harness.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "xferctl/numeric.hpp"

namespace xferctl::harness {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double stddev_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const double m = mean_of(v);
  double acc = 0.0;
  for (const double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(v.size()));
}

}  // namespace

std::string to_string(ControllerFamily f) {
  switch (f) {
    case ControllerFamily::lqr: return "lqr";
    case ControllerFamily::mpc: return "mpc";
    case ControllerFamily::rl: return "rl";
  }
  throw std::logic_error("unreachable");
}

ControllerFamily family_from_string(const std::string& s) {
  if (s == "lqr") return ControllerFamily::lqr;
  if (s == "mpc") return ControllerFamily::mpc;
  if (s == "rl") return ControllerFamily::rl;
  throw std::invalid_argument("unknown controller family: '" + s + "'");
}

std::string to_string(FaultMode m) {
  switch (m) {
    case FaultMode::none: return "none";
    case FaultMode::known: return "known";
    case FaultMode::identify: return "identify";
  }
  throw std::logic_error("unreachable");
}

FaultMode fault_mode_from_string(const std::string& s) {
  if (s == "none") return FaultMode::none;
  if (s == "known") return FaultMode::known;
  if (s == "identify") return FaultMode::identify;
  throw std::invalid_argument("unknown fault mode: '" + s + "'");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::pi_s: return "pi_s";
    case Variant::pi_s_star: return "pi_s_star";
    case Variant::pi_t: return "pi_t";
    case Variant::pi_t_minus: return "pi_t_minus";
    case Variant::pi_t_plus: return "pi_t_plus";
    case Variant::pi_direct: return "pi_direct";
  }
  throw std::logic_error("unreachable");
}

Variant variant_from_string(const std::string& s) {
  if (s == "pi_s") return Variant::pi_s;
  if (s == "pi_s_star") return Variant::pi_s_star;
  if (s == "pi_t") return Variant::pi_t;
  if (s == "pi_t_minus") return Variant::pi_t_minus;
  if (s == "pi_t_plus") return Variant::pi_t_plus;
  if (s == "pi_direct") return Variant::pi_direct;
  throw std::invalid_argument("unknown variant: '" + s + "'");
}

void ExperimentConfig::validate() const {
  rl.validate();
  require(!seeds.empty(), "at least one seed is required");
  require(eval_episodes >= 1, "eval_episodes must be >= 1");
  require(horizon >= 1, "horizon must be >= 1");
  require(mpc_horizon >= 1, "mpc_horizon must be >= 1");
  require(id_episodes >= 0, "id_episodes must be >= 0");
  require(id_max_interactions >= 0, "id_max_interactions must be >= 0");
  require(exploration_noise_std >= 0.0, "exploration noise must be >= 0");
  require(finetune_iterations >= 0, "finetune_iterations must be >= 0");
  require(!variants.empty(), "variant set must not be empty");
  if (family != ControllerFamily::rl) {
    for (const Variant v : variants) {
      require(v == Variant::pi_s || v == Variant::pi_t || v == Variant::pi_direct,
              "variant " + to_string(v) + " requires the rl controller family");
    }
  }
  const auto spec = dynamics::make_system(system, param_overrides, dt);
  cost.validate(spec.state_dim(), spec.action_dim());
  const int n = spec.state_dim();
  require(fault.f_a.rows() == n && fault.f_a.cols() == n &&
              fault.f_b.rows() == n && fault.f_b.cols() == n,
          "fault transform shape does not match the system");
  if (reward.kind == RewardFunction::Kind::bonus) {
    require(system == "cartpole", "the bonus reward is defined for cartpole only");
  }
}

policies::QuadraticCost default_cost(const dynamics::SystemSpec& spec) {
  const int n = spec.state_dim();
  Eigen::VectorXd q = Eigen::VectorXd::Ones(n);
  if (spec.name == dynamics::SystemName::cartpole) {
    q << 1.0, 0.1, 1e-5, 0.1;
  }
  return policies::QuadraticCost::make(q, Eigen::VectorXd::Constant(1, 1e-5));
}

RewardFunction default_reward(const std::string& system, ControllerFamily family,
                              const policies::QuadraticCost& cost) {
  if (family == ControllerFamily::rl && system == "cartpole") {
    return RewardFunction::bonus();
  }
  return RewardFunction::quadratic(cost);
}

ExperimentConfig default_experiment(const std::string& system,
                                    ControllerFamily family) {
  ExperimentConfig cfg;
  cfg.system = system;
  cfg.family = family;
  const auto spec = dynamics::make_system(system);
  const int n = spec.state_dim();
  cfg.fault = dynamics::FaultTransform{
      1.5 * Eigen::MatrixXd::Identity(n, n), -Eigen::MatrixXd::Identity(n, n)};
  cfg.cost = default_cost(spec);
  cfg.reward = default_reward(system, family, cfg.cost);
  if (family == ControllerFamily::rl) {
    cfg.variants = {Variant::pi_s, Variant::pi_s_star, Variant::pi_t,
                    Variant::pi_t_minus, Variant::pi_t_plus};
  } else {
    cfg.variants = {Variant::pi_s, Variant::pi_direct, Variant::pi_t};
  }
  cfg.rl.horizon = cfg.horizon;
  if (system == "temperature") {
    cfg.rl.iterations = 50;
  } else if (system == "cartpole") {
    cfg.rl.iterations = 300;
    cfg.rl.steps_per_iteration = 4000;
  } else {
    cfg.rl.iterations = 150;
  }
  cfg.finetune_iterations = cfg.rl.iterations;
  return cfg;
}

EpisodeResult run_episode(const dynamics::SystemSpec& spec,
                          const policies::Policy& policy,
                          const RewardFunction& reward, int horizon,
                          const VectorXd& x0) {
  require(horizon >= 1, "run_episode: horizon must be >= 1");
  require(x0.size() == spec.state_dim(), "run_episode: x0 dimension mismatch");
  EpisodeResult result;
  VectorXd x = x0;
  for (int i = 0; i < horizon; ++i) {
    const VectorXd u =
        policies::act(policy, x, spec.action_lower, spec.action_upper);
    const VectorXd x_next = x + spec.dt * dynamics::derivative(spec, x, u);
    if (!x_next.allFinite()) {
      result.truncated_nonfinite = true;
      break;
    }
    const double r = reward(x_next, u);
    result.trace.push_back({x, u, x_next, r});
    result.episodic_reward += r;
    ++result.steps;
    x = x_next;
    if (reward.terminal(x)) break;
  }
  return result;
}

TransferMetrics compute_metrics(const MetricSeries& variant,
                                const MetricSeries& baseline, double threshold,
                                int k) {
  require(!variant.values.empty(), "compute_metrics: empty variant series");
  require(!baseline.values.empty(), "compute_metrics: empty baseline series");
  const auto head_mean = [k](const std::vector<double>& v) {
    const int count = std::min<int>(k, static_cast<int>(v.size()));
    return std::accumulate(v.begin(), v.begin() + count, 0.0) / count;
  };
  const auto tail_mean = [k](const std::vector<double>& v) {
    const int count = std::min<int>(k, static_cast<int>(v.size()));
    return std::accumulate(v.end() - count, v.end(), 0.0) / count;
  };
  TransferMetrics m;
  m.jumpstart = head_mean(variant.values) - head_mean(baseline.values);
  m.asymptotic = tail_mean(variant.values);
  for (std::size_t i = 0; i < variant.values.size(); ++i) {
    const std::size_t lo = i + 1 >= static_cast<std::size_t>(k) ? i + 1 - k : 0;
    double acc = 0.0;
    for (std::size_t j = lo; j <= i; ++j) acc += variant.values[j];
    if (acc / static_cast<double>(i - lo + 1) >= threshold) {
      m.time_to_threshold = static_cast<int>(i);
      break;
    }
  }
  return m;
}

namespace {

struct SeedOutcome {
  std::map<Variant, rlopt::EvalResult> evals;
  std::optional<IdentificationRecord> identification;
  double match_residual = 0.0;
  std::vector<CurveRecord> curves;
  long fault_env_step = 0;
};

policies::Policy synthesize_source(const ExperimentConfig& cfg,
                                   const dynamics::SystemSpec& source,
                                   std::uint64_t seed, SeedOutcome& outcome) {
  switch (cfg.family) {
    case ControllerFamily::lqr:
      return policies::Policy(
          policies::lqr_gain(dynamics::linearize_at_origin(source), cfg.cost));
    case ControllerFamily::mpc:
      return policies::Policy(policies::MpcPolicy{
          dynamics::linearize_at_origin(source), cfg.cost, cfg.mpc_horizon});
    case ControllerFamily::rl: {
      auto init = policies::ParametricPolicy::random_init(
          source.state_dim(), source.action_dim(), 32,
          Rng::derive(seed, "source-init"));
      rlopt::TrainConfig train_cfg = cfg.rl;
      train_cfg.seed = Rng::derive(seed, "source-train");
      train_cfg.trainable_set = rlopt::TrainableSet::all;
      train_cfg.horizon = cfg.horizon;
      auto result =
          rlopt::train(policies::Policy(std::move(init)), source, cfg.reward,
                       train_cfg);
      outcome.fault_env_step =
          result.curve.empty() ? 0 : result.curve.back().env_steps;
      outcome.curves.push_back({Variant::pi_s, seed, result.curve, 0});
      return std::move(result.policy);
    }
  }
  throw std::logic_error("unreachable");
}

bool wants(const ExperimentConfig& cfg, Variant v) {
  return std::find(cfg.variants.begin(), cfg.variants.end(), v) !=
         cfg.variants.end();
}

SeedOutcome run_seed(const ExperimentConfig& cfg,
                     const dynamics::SystemSpec& source,
                     const dynamics::SystemSpec& target, std::uint64_t seed) {
  SeedOutcome outcome;
  policies::Policy pi_s = synthesize_source(cfg, source, seed, outcome);

  // Transformation inputs: the true fault with the origin linearization, or
  // everything identified from data within the interaction budget.
  Eigen::MatrixXd a_s;
  Eigen::MatrixXd b_s;
  dynamics::FaultTransform fault_est = cfg.fault;
  if (cfg.fault_mode == FaultMode::identify) {
    sysid::CollectOptions opts;
    opts.exploration_noise_std = cfg.exploration_noise_std;
    opts.max_interactions = static_cast<std::size_t>(cfg.id_max_interactions);
    opts.terminate = [&cfg](const VectorXd& x) { return cfg.reward.terminal(x); };
    const int per_episode =
        std::min(cfg.horizon, cfg.id_episodes > 0
                                  ? cfg.id_max_interactions / cfg.id_episodes
                                  : cfg.horizon);
    opts.tag = "source";
    const auto buf_s =
        sysid::collect_buffer(source, pi_s, cfg.id_episodes, per_episode,
                              Rng::derive(seed, "collect-source"), opts);
    opts.tag = "target";
    const auto buf_t =
        sysid::collect_buffer(target, pi_s, cfg.id_episodes, per_episode,
                              Rng::derive(seed, "collect-target"), opts);
    const auto fit_s = sysid::fit_linear(buf_s);
    const auto fit_t = sysid::fit_linear(buf_t);
    const auto est = sysid::estimate_transforms(fit_s.dynamics, fit_t.dynamics);
    a_s = fit_s.dynamics.a;
    b_s = fit_s.dynamics.b;
    fault_est = est.transform;

    IdentificationRecord rec;
    rec.seed = seed;
    rec.source = fit_s;
    rec.target = fit_t;
    rec.a_rank_deficient = est.a_rank_deficient;
    const LinearDynamics true_target = dynamics::linearize_at_origin(target);
    rec.composed_a_error =
        (est.composed_a - true_target.a).norm() /
        std::max(1e-12, true_target.a.norm());
    rec.composed_b_error =
        (est.composed_b - true_target.b).norm() /
        std::max(1e-12, true_target.b.norm());
    outcome.identification = std::move(rec);
  } else {
    const LinearDynamics lin_s = dynamics::linearize_at_origin(source);
    a_s = lin_s.a;
    b_s = lin_s.b;
  }

  const bool needs_pi_t = wants(cfg, Variant::pi_t) ||
                          wants(cfg, Variant::pi_t_minus) ||
                          wants(cfg, Variant::pi_t_plus);
  std::optional<policies::Policy> pi_t;
  if (needs_pi_t) {
    pi_t = policies::transform_policy(pi_s, a_s, b_s, fault_est);
    outcome.match_residual = pi_t->as_transformed().match_residual;
    if (outcome.identification.has_value()) {
      outcome.identification->match_residual = outcome.match_residual;
    }
  }

  std::optional<policies::Policy> pi_direct;
  if (wants(cfg, Variant::pi_direct)) {
    const LinearDynamics lin_t = dynamics::linearize_at_origin(target);
    if (cfg.family == ControllerFamily::mpc) {
      pi_direct =
          policies::Policy(policies::MpcPolicy{lin_t, cfg.cost, cfg.mpc_horizon});
    } else {
      pi_direct = policies::Policy(policies::lqr_gain(lin_t, cfg.cost));
    }
  }

  // RL fine-tuned variants, each on its own derived stream.
  std::optional<policies::Policy> pi_s_star;
  std::optional<policies::Policy> pi_t_minus;
  std::optional<policies::Policy> pi_t_plus;
  if (cfg.family == ControllerFamily::rl) {
    rlopt::TrainConfig ft = cfg.rl;
    ft.iterations = cfg.finetune_iterations;
    ft.horizon = cfg.horizon;
    if (wants(cfg, Variant::pi_s_star)) {
      ft.seed = Rng::derive(seed, "finetune-pi_s_star");
      ft.trainable_set = rlopt::TrainableSet::all;
      auto r = rlopt::train(pi_s, target, cfg.reward, ft);
      outcome.curves.push_back(
          {Variant::pi_s_star, seed, r.curve, outcome.fault_env_step});
      pi_s_star = std::move(r.policy);
    }
    if (wants(cfg, Variant::pi_t_minus)) {
      ft.seed = Rng::derive(seed, "finetune-pi_t_minus");
      ft.trainable_set = rlopt::TrainableSet::source_params_only;
      auto r = rlopt::train(*pi_t, target, cfg.reward, ft);
      outcome.curves.push_back(
          {Variant::pi_t_minus, seed, r.curve, outcome.fault_env_step});
      pi_t_minus = std::move(r.policy);
    }
    if (wants(cfg, Variant::pi_t_plus)) {
      ft.seed = Rng::derive(seed, "finetune-pi_t_plus");
      ft.trainable_set = rlopt::TrainableSet::source_plus_transform;
      auto r = rlopt::train(*pi_t, target, cfg.reward, ft);
      outcome.curves.push_back(
          {Variant::pi_t_plus, seed, r.curve, outcome.fault_env_step});
      pi_t_plus = std::move(r.policy);
    }
  }

  // Paired evaluation: every variant sees the same initial states.
  const std::uint64_t eval_seed = Rng::derive(seed, "eval-episodes");
  const auto evaluate = [&](const policies::Policy& pol) {
    return rlopt::evaluate_policy(pol, target, cfg.reward, cfg.eval_episodes,
                                  eval_seed, cfg.horizon);
  };
  for (const Variant v : cfg.variants) {
    switch (v) {
      case Variant::pi_s:
        outcome.evals[v] = evaluate(pi_s);
        break;
      case Variant::pi_t:
        outcome.evals[v] = evaluate(*pi_t);
        break;
      case Variant::pi_direct:
        outcome.evals[v] = evaluate(*pi_direct);
        break;
      case Variant::pi_s_star:
        outcome.evals[v] = evaluate(*pi_s_star);
        break;
      case Variant::pi_t_minus:
        outcome.evals[v] = evaluate(*pi_t_minus);
        break;
      case Variant::pi_t_plus:
        outcome.evals[v] = evaluate(*pi_t_plus);
        break;
    }
  }
  return outcome;
}

}  // namespace

TransferReport run_transfer_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto source = dynamics::make_system(cfg.system, cfg.param_overrides, cfg.dt);
  const auto target = cfg.fault_mode == FaultMode::none
                          ? source
                          : dynamics::apply_fault(source, cfg.fault);

  TransferReport report;
  report.system = cfg.system;
  report.family = cfg.family;
  report.fault_mode = cfg.fault_mode;
  report.seeds = cfg.seeds;
  report.eval_episodes = cfg.eval_episodes;
  report.horizon = cfg.horizon;

  std::map<Variant, std::vector<double>> all_episodes;
  std::map<Variant, std::vector<double>> first_episodes;
  int failures = 0;
  for (const std::uint64_t seed : cfg.seeds) {
    SeedOutcome outcome;
    try {
      outcome = run_seed(cfg, source, target, seed);
    } catch (const std::exception& e) {
      ++failures;
      report.notes.push_back("seed " + std::to_string(seed) +
                             " failed: " + e.what());
      continue;
    }
    for (const auto& [variant, eval] : outcome.evals) {
      auto& stats = report.variants[variant];
      stats.per_seed_mean.push_back(eval.mean);
      auto& pool = all_episodes[variant];
      pool.insert(pool.end(), eval.per_episode.begin(), eval.per_episode.end());
      auto& first = first_episodes[variant];
      const int k = std::min<std::size_t>(5, eval.per_episode.size());
      first.insert(first.end(), eval.per_episode.begin(),
                   eval.per_episode.begin() + k);
    }
    if (outcome.identification.has_value()) {
      report.identification.push_back(*outcome.identification);
    }
    report.match_residuals.push_back(outcome.match_residual);
    for (auto& c : outcome.curves) report.curves.push_back(std::move(c));
    if (cfg.family == ControllerFamily::rl) {
      report.fault_env_step.push_back(outcome.fault_env_step);
    }
  }
  if (failures == static_cast<int>(cfg.seeds.size())) {
    throw std::runtime_error("run_transfer_experiment: every seed failed (" +
                             (report.notes.empty() ? std::string("no diagnostics")
                                                   : report.notes.front()) +
                             ")");
  }

  for (auto& [variant, stats] : report.variants) {
    const auto& pool = all_episodes[variant];
    stats.mean = mean_of(pool);
    stats.stddev = stddev_of(pool);
    stats.n_episodes = static_cast<int>(pool.size());
    stats.first_episodes = first_episodes[variant];
  }

  // jumpstart vs pi_s on the target (paired first-5 episodes)
  if (report.variants.count(Variant::pi_s) > 0) {
    const double base_first = mean_of(first_episodes[Variant::pi_s]);
    for (const auto& [variant, stats] : report.variants) {
      report.jumpstart[variant] = mean_of(stats.first_episodes) - base_first;
    }
  }

  // asymptotic: trailing mean of the fine-tuning curve where one exists,
  // otherwise the stationary evaluation mean
  for (const auto& [variant, stats] : report.variants) {
    std::vector<double> tails;
    for (const auto& rec : report.curves) {
      if (rec.variant != variant || rec.curve.empty()) continue;
      const int k = std::min<std::size_t>(5, rec.curve.size());
      double acc = 0.0;
      for (int i = 0; i < k; ++i) {
        acc += rec.curve[rec.curve.size() - 1 - i].mean_reward;
      }
      tails.push_back(acc / k);
    }
    report.asymptotic[variant] = tails.empty() ? stats.mean : mean_of(tails);
  }

  // threshold: 90% of the direct baseline (lqr/mpc) or of pi_s_star (rl)
  const Variant threshold_ref = cfg.family == ControllerFamily::rl
                                    ? Variant::pi_s_star
                                    : Variant::pi_direct;
  if (report.variants.count(threshold_ref) > 0) {
    report.threshold = 0.9 * report.variants.at(threshold_ref).mean;
    for (const auto& [variant, stats] : report.variants) {
      std::vector<int> reached;
      int curve_count = 0;
      for (const auto& rec : report.curves) {
        if (rec.variant != variant || rec.curve.empty()) continue;
        ++curve_count;
        MetricSeries series;
        for (const auto& pt : rec.curve) series.values.push_back(pt.mean_reward);
        const auto m = compute_metrics(series, series, report.threshold);
        if (m.time_to_threshold.has_value()) {
          reached.push_back(*m.time_to_threshold);
        }
      }
      if (curve_count == 0) continue;
      if (static_cast<int>(reached.size()) * 2 > curve_count) {
        std::sort(reached.begin(), reached.end());
        report.time_to_threshold[variant] = reached[reached.size() / 2];
      } else {
        report.time_to_threshold[variant] = std::nullopt;
      }
    }
  }
  return report;
}

}  // namespace xferctl::harness

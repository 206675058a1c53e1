#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "xferctl/dynamics.hpp"
#include "xferctl/policies.hpp"
#include "xferctl/reward.hpp"
#include "xferctl/rlopt.hpp"
#include "xferctl/sysid.hpp"

namespace xferctl::harness {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class ControllerFamily { lqr, mpc, rl };
enum class FaultMode { none, known, identify };
enum class Variant { pi_s, pi_s_star, pi_t, pi_t_minus, pi_t_plus, pi_direct };

std::string to_string(ControllerFamily f);
ControllerFamily family_from_string(const std::string& s);
std::string to_string(FaultMode m);
FaultMode fault_mode_from_string(const std::string& s);
std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

struct ExperimentConfig {
  std::string system = "temperature";
  std::map<std::string, double> param_overrides;
  double dt = 0.01;
  int horizon = 500;

  FaultMode fault_mode = FaultMode::known;
  // The fault that realizes the target system. In identify mode it still
  // drives the simulation; the pipeline just pretends not to know it.
  dynamics::FaultTransform fault;

  // Synthesis cost and the evaluation reward built from it.
  policies::QuadraticCost cost;
  RewardFunction reward;

  ControllerFamily family = ControllerFamily::lqr;
  std::vector<Variant> variants;
  int mpc_horizon = 5;

  rlopt::TrainConfig rl;        // source-training defaults
  int finetune_iterations = 50; // post-fault budget per fine-tuned variant

  int id_episodes = 5;
  int id_max_interactions = 2500;
  double exploration_noise_std = 0.1;

  int eval_episodes = 20;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};

  void validate() const;
};

// Defaults matching the benchmark definitions (Q per system, R = 1e-5,
// variants per family, RL budgets per system).
ExperimentConfig default_experiment(const std::string& system,
                                    ControllerFamily family);
policies::QuadraticCost default_cost(const dynamics::SystemSpec& spec);
RewardFunction default_reward(const std::string& system, ControllerFamily family,
                              const policies::QuadraticCost& cost);

struct EpisodeResult {
  std::vector<sysid::Transition> trace;
  double episodic_reward = 0.0;
  bool truncated_nonfinite = false;
  int steps = 0;
};

// Rolls the deployed (clipped) policy from x0. Early termination on the
// reward's terminal predicate or a non-finite state.
EpisodeResult run_episode(const dynamics::SystemSpec& spec,
                          const policies::Policy& policy,
                          const RewardFunction& reward, int horizon,
                          const VectorXd& x0);

// quadratic-cost reward, r = -(x-x0)^T Q (x-x0) - u^T R u
inline RewardFunction quadratic_reward(policies::QuadraticCost cost) {
  return RewardFunction::quadratic(std::move(cost));
}

struct MetricSeries {
  std::vector<double> values;
  std::vector<long> env_steps;  // optional, parallel to values
};

struct TransferMetrics {
  double jumpstart = 0.0;
  double asymptotic = 0.0;
  std::optional<int> time_to_threshold;  // index into the series
};

// jumpstart: mean of the first k values (variant - baseline)
// asymptotic: mean of the last k variant values
// time_to_threshold: first index whose k-point moving average >= threshold
TransferMetrics compute_metrics(const MetricSeries& variant,
                                const MetricSeries& baseline, double threshold,
                                int k = 5);

struct VariantStats {
  double mean = 0.0;
  double stddev = 0.0;
  int n_episodes = 0;
  std::vector<double> per_seed_mean;
  std::vector<double> first_episodes;  // first-5 eval episodes, all seeds
};

struct IdentificationRecord {
  std::uint64_t seed = 0;
  sysid::IdentificationReport source;
  sysid::IdentificationReport target;
  double match_residual = 0.0;   // rho of the transformed policy
  double composed_a_error = 0.0; // ||F_hat A_s - F_A A_s|| vs the true fault
  double composed_b_error = 0.0;
  bool a_rank_deficient = false;
};

struct CurveRecord {
  Variant variant = Variant::pi_s;
  std::uint64_t seed = 0;
  rlopt::LearningCurve curve;
  long start_env_step = 0;  // offset on the fault timeline
};

struct TransferReport {
  std::string system;
  ControllerFamily family = ControllerFamily::lqr;
  FaultMode fault_mode = FaultMode::known;
  std::vector<std::uint64_t> seeds;
  int eval_episodes = 0;
  int horizon = 0;

  std::map<Variant, VariantStats> variants;
  std::map<Variant, double> jumpstart;  // vs pi_s on the target
  std::map<Variant, double> asymptotic;
  std::map<Variant, std::optional<int>> time_to_threshold;
  double threshold = 0.0;

  std::vector<IdentificationRecord> identification;  // one per seed (identify)
  std::vector<double> match_residuals;               // rho per seed
  std::vector<CurveRecord> curves;                   // rl family
  std::vector<long> fault_env_step;                  // per seed (rl family)
  std::vector<std::string> notes;
};

// The full per-seed pipeline: obtain pi_s on the source, apply the fault,
// identify transforms when asked, build pi_t, evaluate every requested
// variant (paired initial states across variants), fine-tune the RL variants
// and record curves, then aggregate across seeds.
TransferReport run_transfer_experiment(const ExperimentConfig& cfg);

}  // namespace xferctl::harness

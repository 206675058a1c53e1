#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "xferctl/dynamics.hpp"
#include "xferctl/linear_dynamics.hpp"
#include "xferctl/policies.hpp"

namespace xferctl::sysid {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// One interaction record (x_i, u_{i+1}, x_{i+1}, r_{i+1}).
struct Transition {
  VectorXd x;
  VectorXd u;
  VectorXd x_next;
  double reward = 0.0;
};

// Append-only store of transitions with episode structure. Within an episode
// consecutive records chain exactly: record k's x_next is record k+1's x.
class TrajectoryBuffer {
 public:
  TrajectoryBuffer() = default;
  TrajectoryBuffer(double dt, std::size_t capacity, std::string tag)
      : dt_(dt), capacity_(capacity), tag_(std::move(tag)) {}

  void begin_episode();
  void append(Transition t);  // throws on chain break or capacity overflow

  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  std::size_t capacity() const { return capacity_; }
  double dt() const { return dt_; }
  const std::string& tag() const { return tag_; }
  int episode_count() const { return static_cast<int>(episode_starts_.size()); }

  const Transition& operator[](std::size_t i) const { return records_[i]; }
  const std::vector<Transition>& records() const { return records_; }
  // index of the episode a record belongs to, and the step within it
  int episode_of(std::size_t i) const;
  int step_of(std::size_t i) const;

  // Columnar plain-text round trip: one transition per row
  // (episode, step, x..., u..., x'..., reward).
  void write_text(std::ostream& out) const;
  static TrajectoryBuffer read_text(std::istream& in);
  void write_text_file(const std::string& path) const;
  static TrajectoryBuffer read_text_file(const std::string& path);

 private:
  std::vector<Transition> records_;
  std::vector<std::size_t> episode_starts_;
  double dt_ = 0.01;
  std::size_t capacity_ = 2500;
  std::string tag_ = "source";
};

struct IdentificationReport {
  LinearDynamics dynamics;
  double residual_rms = 0.0;      // one-step prediction error, RMS over rows
  double condition_number = 1.0;  // of the regression Gram matrix
  int sample_count = 0;
  bool rank_deficient = false;
};

// Rolls `policy` on `spec` with additive zero-mean Gaussian exploration noise
// (then clipping) and records every transition. Deterministic given the seed.
// Episodes draw initial states from the per-system box and stop early on
// non-finite states or, when `terminate` is set, when it fires on the state
// just reached.
struct CollectOptions {
  double exploration_noise_std = 0.1;
  std::string tag = "source";
  std::size_t max_interactions = 2500;
  std::function<bool(const VectorXd&)> terminate;       // optional
  std::function<double(const VectorXd&, const VectorXd&)> reward;  // optional
};
TrajectoryBuffer collect_buffer(const dynamics::SystemSpec& spec,
                                const policies::Policy& policy, int n_episodes,
                                int horizon, std::uint64_t seed,
                                const CollectOptions& options = {});

// Least squares on the discretized map x' = P [x; u]: solves for P row by row
// through an SVD (minimum-norm solution when the regressors are
// rank-deficient), then decomposes A = (P_left - I)/dt, B = P_right/dt.
IdentificationReport fit_linear(const TrajectoryBuffer& buffer);

struct TransformEstimate {
  dynamics::FaultTransform transform;
  MatrixXd composed_a;  // F_A_hat * A_s — the product that matters downstream
  MatrixXd composed_b;  // F_B_hat * B_s
  bool a_rank_deficient = false;  // pinv fallback engaged for A_s
};

// F_A_hat = A_t pinv(A_s); F_B_hat = (B_t B_s^T) pinv(B_s B_s^T).
TransformEstimate estimate_transforms(const LinearDynamics& source,
                                      const LinearDynamics& target);

// Rank of [B, AB, ..., A^{n-1}B] with the project-wide singular value cutoff.
int controllability_rank(const LinearDynamics& model);

// Plain-text model files used by the identify/transfer CLI pipeline.
void save_model(const LinearDynamics& model, std::ostream& out);
LinearDynamics load_model(std::istream& in);
void save_model_file(const LinearDynamics& model, const std::string& path);
LinearDynamics load_model_file(const std::string& path);

}  // namespace xferctl::sysid

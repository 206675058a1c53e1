#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <memory>
#include <stdexcept>
#include <variant>

#include "xferctl/dynamics.hpp"
#include "xferctl/linear_dynamics.hpp"
#include "xferctl/rng.hpp"

namespace xferctl::policies {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Per-step cost c = (x - setpoint)^T Q (x - setpoint) + u^T R u.
// Q diagonal PSD, R diagonal PD.
struct QuadraticCost {
  MatrixXd q;
  MatrixXd r;
  VectorXd setpoint;

  static QuadraticCost make(const VectorXd& q_diag, const VectorXd& r_diag,
                            VectorXd setpoint = VectorXd());
  void validate(int state_dim, int action_dim) const;
  double operator()(const VectorXd& x, const VectorXd& u) const;
};

// u = -K (x - setpoint)
struct LinearGainPolicy {
  MatrixXd gain;  // m x n
  VectorXd setpoint;

  VectorXd action(const VectorXd& x) const {
    if (setpoint.size() > 0) return -gain * (x - setpoint);
    return -gain * x;
  }
};

// Two-layer tanh network with a Gaussian action head. Parameters are packed
// into one flat vector so the optimizer and the finite-difference checks can
// treat the policy as a plain function of params:
//   [W1 (hidden x n, row-major) | b1 | W2 (m x hidden, row-major) | b2 | log_std]
struct ParametricPolicy {
  int state_dim = 0;
  int action_dim = 0;
  int hidden = 32;
  VectorXd params;

  static ParametricPolicy random_init(int state_dim, int action_dim, int hidden,
                                      std::uint64_t seed);

  int param_count() const {
    return hidden * state_dim + hidden + action_dim * hidden + 2 * action_dim;
  }
  int w1_offset() const { return 0; }
  int b1_offset() const { return hidden * state_dim; }
  int w2_offset() const { return b1_offset() + hidden; }
  int b2_offset() const { return w2_offset() + action_dim * hidden; }
  int log_std_offset() const { return b2_offset() + action_dim; }

  VectorXd mean(const VectorXd& x) const;
  VectorXd log_std() const {
    return params.segment(log_std_offset(), action_dim);
  }
};

// Exploration floor: learned log-std never drops below this.
inline constexpr double kLogStdFloor = -6.907755278982137;  // log(1e-3)
inline constexpr double kLogStdInit = -0.6931471805599453;  // log(0.5)

struct MpcPolicy {
  LinearDynamics model;
  QuadraticCost cost;
  int horizon = 5;
};

struct TransformedPolicy;

class Policy {
 public:
  enum class Kind { linear_gain, parametric, mpc, transformed };

  Policy(LinearGainPolicy p);
  Policy(ParametricPolicy p);
  Policy(MpcPolicy p);
  Policy(TransformedPolicy p);
  Policy(const Policy& other);
  Policy& operator=(const Policy& other);
  Policy(Policy&&) noexcept = default;
  Policy& operator=(Policy&&) noexcept = default;
  ~Policy();

  Kind kind() const;
  int action_dim() const;

  const LinearGainPolicy& as_linear_gain() const;
  const ParametricPolicy& as_parametric() const;
  ParametricPolicy& as_parametric();
  const MpcPolicy& as_mpc() const;
  const TransformedPolicy& as_transformed() const;
  TransformedPolicy& as_transformed();

 private:
  std::variant<LinearGainPolicy, ParametricPolicy, MpcPolicy,
               std::unique_ptr<TransformedPolicy>>
      v_;
};

// Composite u_t(x) = mult * pi_source(x) + gain_add * x. `match_residual` is
// ||(F_B B_s) pinv(F_B B_s) - I||_F, the least-squares matching quality of
// the transformation that produced this policy (0 when the inversion is
// exact).
struct TransformedPolicy {
  Policy source;
  MatrixXd mult;      // m x m
  MatrixXd gain_add;  // m x n
  double match_residual = 0.0;
};

struct DareSolution {
  MatrixXd p;     // value matrix
  MatrixXd gain;  // u = -gain x
  int iterations = 0;
};

// Fixed-point iteration on the discrete-time algebraic Riccati equation,
// relative tolerance `tol` on P, hard cap on iterations. Throws if R is not
// positive definite or if the iteration diverges (non-stabilizable pair).
DareSolution solve_dare(const MatrixXd& a_d, const MatrixXd& b_d,
                        const MatrixXd& q, const MatrixXd& r,
                        double tol = 1e-10, int max_iterations = 1000000);

// Infinite-horizon LQR on the Euler-discretized pair (I + dt*A, dt*B).
// Verifies the closed loop is strictly stable before returning.
LinearGainPolicy lqr_gain(const LinearDynamics& model, const QuadraticCost& cost);

// First action of the exact unconstrained finite-horizon LQ solution
// (backward Riccati recursion over `horizon` steps). Unclipped.
VectorXd mpc_action(const LinearDynamics& model, const QuadraticCost& cost,
                    int horizon, const VectorXd& x);

// The closed-form policy transformation. Given the source model (A_s, B_s)
// and the fault (F_A, F_B), builds the composite
//   u_t(x) = pinv(F_B B_s) B_s * pi_s(x) + pinv(F_B B_s) (I - F_A) A_s * x
// which reproduces the source state derivative on the target system whenever
// the required correction lies in the range of F_B B_s. Throws if F_B B_s is
// identically zero (no input authority).
Policy transform_policy(const Policy& source, const MatrixXd& a_s,
                        const MatrixXd& b_s, const dynamics::FaultTransform& fault);

// Deterministic policy output, no clipping (the composite transformation and
// the training machinery both need raw values).
VectorXd raw_action(const Policy& policy, const VectorXd& x);

// Deployed-mode action: raw output clipped componentwise to [lower, upper].
VectorXd act(const Policy& policy, const VectorXd& x, const VectorXd& lower,
             const VectorXd& upper);

inline VectorXd clip(const VectorXd& u, const VectorXd& lower, const VectorXd& upper) {
  return u.cwiseMax(lower).cwiseMin(upper);
}

// Gaussian head of a Parametric policy, or of a Transformed chain bottoming
// out in one (scalar actions only for transformed chains).
struct GaussianHead {
  VectorXd mean;
  VectorXd stddev;
};
GaussianHead gaussian_head(const Policy& policy, const VectorXd& x);

struct ActionSample {
  VectorXd action;  // pre-clip sample
  double log_prob;
};
// Training-mode action: sample from the Gaussian head.
ActionSample sample_action(const Policy& policy, const VectorXd& x, Rng& rng);

double gaussian_log_prob(const VectorXd& u, const GaussianHead& head);

// Differential entropy of the Gaussian head (summed over action dims).
double policy_entropy(const Policy& policy, const VectorXd& x);

// Self-describing text serialization (round-trips exactly).
void save_policy(const Policy& policy, std::ostream& out);
Policy load_policy(std::istream& in);
void save_policy_file(const Policy& policy, const std::string& path);
Policy load_policy_file(const std::string& path);

}  // namespace xferctl::policies

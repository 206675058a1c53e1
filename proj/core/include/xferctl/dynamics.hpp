#pragma once

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <string>

#include "xferctl/linear_dynamics.hpp"
#include "xferctl/rng.hpp"

namespace xferctl::dynamics {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class SystemName { temperature, spring, pendulum, cartpole };

std::string to_string(SystemName name);
SystemName system_from_string(const std::string& s);

// Multiplicative disturbance of the factored dynamics: the state term f_A(x)
// is replaced by F_A * f_A(x) and the input term g_B(x) u by F_B * g_B(x) u.
struct FaultTransform {
  MatrixXd f_a;  // n x n
  MatrixXd f_b;  // n x n

  static FaultTransform identity(int n) {
    return {MatrixXd::Identity(n, n), MatrixXd::Identity(n, n)};
  }
  bool is_identity() const {
    return f_a.isIdentity(0.0) && f_b.isIdentity(0.0);
  }
};

enum class Definiteness {
  positive_definite,
  positive_semidefinite,
  negative_definite,
  negative_semidefinite,
  indefinite,
};

// Classified from the eigenvalues of the symmetric part.
Definiteness classify_definiteness(const MatrixXd& m, double tol = 1e-12);
std::string to_string(Definiteness d);

struct SystemSpec {
  SystemName name = SystemName::temperature;
  std::map<std::string, double> params;
  double dt = 0.01;
  std::optional<FaultTransform> fault;
  VectorXd action_lower;  // per action dimension
  VectorXd action_upper;

  int state_dim() const;
  int action_dim() const;
  double param(const std::string& key) const;
};

// Paper-default parameters are filled in for anything not overridden:
//   temperature: a=-0.1, b=1
//   spring:      m=1, k=10, k_f=0.2 (+ stable_friction flag, default 0)
//   pendulum:    m=0.1, l=1, g=10, k_f=0.02
//   cartpole:    m_c=0.5, m_p=0.1, l=1, g=10, k_f=0.01
// Throws on unknown parameter keys, non-positive dt, or non-positive
// masses/lengths.
SystemSpec make_system(SystemName name,
                       const std::map<std::string, double>& overrides = {},
                       double dt = 0.01,
                       std::optional<FaultTransform> fault = std::nullopt);
SystemSpec make_system(const std::string& name,
                       const std::map<std::string, double>& overrides = {},
                       double dt = 0.01,
                       std::optional<FaultTransform> fault = std::nullopt);

// The factored right-hand side, before any fault is applied:
// xdot = f_a(x) + g_b(x) * u.
struct FactoredTerms {
  VectorXd f_a;   // n
  MatrixXd g_b;   // n x m
};
FactoredTerms factored_terms(const SystemSpec& spec, const VectorXd& x);

// Continuous-time derivative with the spec's fault (if any) applied to the
// factored terms. Throws on non-finite input.
VectorXd derivative(const SystemSpec& spec, const VectorXd& x, const VectorXd& u);

// One explicit-Euler step x + dt * derivative(spec, x, u). Throws if the
// result is non-finite (integration blow-up).
VectorXd step(const SystemSpec& spec, const VectorXd& x, const VectorXd& u);

// Returns a copy with (F_A, F_B) applied. If the spec already carries a
// fault, the new transform is composed on top (left-multiplied).
SystemSpec apply_fault(const SystemSpec& spec, const FaultTransform& fault);

// Jacobians of the (faulted) derivative at (x0, u0). Exact for the linear
// systems; central finite differences (h = 1e-5) for pendulum and cartpole.
LinearDynamics linearize(const SystemSpec& spec, const VectorXd& x0,
                         const VectorXd& u0);
LinearDynamics linearize_at_origin(const SystemSpec& spec);

// Seeded draw from the per-system initial-state box:
//   temperature: x in [-2, 2]
//   spring/pendulum: each coordinate in [-1, 1]
//   cartpole: angle in [-0.1, 0.1] rad, other coordinates in [-0.05, 0.05]
VectorXd sample_initial_state(const SystemSpec& spec, Rng& rng);

}  // namespace xferctl::dynamics

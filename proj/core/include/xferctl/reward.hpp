#pragma once

#include <Eigen/Dense>

#include "xferctl/policies.hpp"

namespace xferctl {

// Reward assigned to a transition: a function of the state reached and the
// action that reached it. Two forms are used by the benchmarks:
//   quadratic: r = -(x-x0)^T Q (x-x0) - u^T R u, episodes run the full horizon
//   bonus:     r = +1 while the pole angle and cart position stay inside
//              bounds; the episode terminates on the first violation
struct RewardFunction {
  enum class Kind { quadratic, bonus };

  Kind kind = Kind::quadratic;
  policies::QuadraticCost cost;
  double angle_limit = 0.2;
  double position_limit = 2.4;

  double operator()(const Eigen::VectorXd& x_next, const Eigen::VectorXd& u) const {
    if (kind == Kind::quadratic) return -cost(x_next, u);
    return within_bounds(x_next) ? 1.0 : 0.0;
  }

  // Early-termination predicate on the state just reached.
  bool terminal(const Eigen::VectorXd& x_next) const {
    if (kind == Kind::quadratic) return false;
    return !within_bounds(x_next);
  }

  static RewardFunction quadratic(policies::QuadraticCost cost) {
    RewardFunction r;
    r.kind = Kind::quadratic;
    r.cost = std::move(cost);
    return r;
  }

  static RewardFunction bonus(double angle_limit = 0.2, double position_limit = 2.4) {
    RewardFunction r;
    r.kind = Kind::bonus;
    r.angle_limit = angle_limit;
    r.position_limit = position_limit;
    return r;
  }

 private:
  bool within_bounds(const Eigen::VectorXd& x) const {
    if (std::abs(x(0)) >= angle_limit) return false;
    if (x.size() > 2 && std::abs(x(2)) >= position_limit) return false;
    return true;
  }
};

}  // namespace xferctl

#pragma once

#include <Eigen/Dense>

namespace xferctl {

// A continuous-time linear(ized) system xdot = A x + B u together with the
// sampling interval. The matching discrete-time one-step map is
//   x' = (I + dt*A) x + (dt*B) u
// which is exact for the explicit-Euler integrator used throughout.
struct LinearDynamics {
  Eigen::MatrixXd a;  // n x n
  Eigen::MatrixXd b;  // n x m
  double dt = 0.01;

  int state_dim() const { return static_cast<int>(a.rows()); }
  int input_dim() const { return static_cast<int>(b.cols()); }

  Eigen::MatrixXd discrete_a() const {
    return Eigen::MatrixXd::Identity(a.rows(), a.cols()) + dt * a;
  }
  Eigen::MatrixXd discrete_b() const { return dt * b; }
};

}  // namespace xferctl

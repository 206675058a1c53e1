#include "xferctl/dynamics.hpp"

#include <cmath>
#include <stdexcept>

namespace xferctl::dynamics {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

const std::map<std::string, double>& default_params(SystemName name) {
  static const std::map<std::string, double> temperature{{"a", -0.1}, {"b", 1.0}};
  static const std::map<std::string, double> spring{
      {"m", 1.0}, {"k", 10.0}, {"k_f", 0.2}, {"stable_friction", 0.0}};
  static const std::map<std::string, double> pendulum{
      {"m", 0.1}, {"l", 1.0}, {"g", 10.0}, {"k_f", 0.02}};
  static const std::map<std::string, double> cartpole{
      {"m_c", 0.5}, {"m_p", 0.1}, {"l", 1.0}, {"g", 10.0}, {"k_f", 0.01}};
  switch (name) {
    case SystemName::temperature: return temperature;
    case SystemName::spring: return spring;
    case SystemName::pendulum: return pendulum;
    case SystemName::cartpole: return cartpole;
  }
  throw std::logic_error("unreachable");
}

bool must_be_positive(const std::string& key) {
  return key == "m" || key == "l" || key == "m_c" || key == "m_p";
}

}  // namespace

std::string to_string(SystemName name) {
  switch (name) {
    case SystemName::temperature: return "temperature";
    case SystemName::spring: return "spring";
    case SystemName::pendulum: return "pendulum";
    case SystemName::cartpole: return "cartpole";
  }
  throw std::logic_error("unreachable");
}

SystemName system_from_string(const std::string& s) {
  if (s == "temperature") return SystemName::temperature;
  if (s == "spring") return SystemName::spring;
  if (s == "pendulum") return SystemName::pendulum;
  if (s == "cartpole") return SystemName::cartpole;
  throw std::invalid_argument("unknown system name: '" + s +
                              "' (expected temperature, spring, pendulum or cartpole)");
}

Definiteness classify_definiteness(const MatrixXd& m, double tol) {
  require(m.rows() == m.cols(), "definiteness: matrix must be square");
  const MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(sym);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  if (lo > tol) return Definiteness::positive_definite;
  if (hi < -tol) return Definiteness::negative_definite;
  if (lo >= -tol) return Definiteness::positive_semidefinite;
  if (hi <= tol) return Definiteness::negative_semidefinite;
  return Definiteness::indefinite;
}

std::string to_string(Definiteness d) {
  switch (d) {
    case Definiteness::positive_definite: return "positive_definite";
    case Definiteness::positive_semidefinite: return "positive_semidefinite";
    case Definiteness::negative_definite: return "negative_definite";
    case Definiteness::negative_semidefinite: return "negative_semidefinite";
    case Definiteness::indefinite: return "indefinite";
  }
  throw std::logic_error("unreachable");
}

int SystemSpec::state_dim() const {
  switch (name) {
    case SystemName::temperature: return 1;
    case SystemName::spring:
    case SystemName::pendulum: return 2;
    case SystemName::cartpole: return 4;
  }
  throw std::logic_error("unreachable");
}

int SystemSpec::action_dim() const { return 1; }

double SystemSpec::param(const std::string& key) const {
  auto it = params.find(key);
  if (it == params.end()) {
    throw std::invalid_argument("system '" + to_string(name) +
                                "' has no parameter '" + key + "'");
  }
  return it->second;
}

SystemSpec make_system(SystemName name,
                       const std::map<std::string, double>& overrides, double dt,
                       std::optional<FaultTransform> fault) {
  require(dt > 0.0, "dt must be positive");
  SystemSpec spec;
  spec.name = name;
  spec.params = default_params(name);
  for (const auto& [key, value] : overrides) {
    auto it = spec.params.find(key);
    if (it == spec.params.end()) {
      throw std::invalid_argument("unknown parameter '" + key + "' for system '" +
                                  to_string(name) + "'");
    }
    if (must_be_positive(key)) {
      require(value > 0.0, "parameter '" + key + "' must be positive");
    }
    it->second = value;
  }
  spec.dt = dt;
  const int n = spec.state_dim();
  if (fault.has_value()) {
    require(fault->f_a.rows() == n && fault->f_a.cols() == n &&
                fault->f_b.rows() == n && fault->f_b.cols() == n,
            "fault transform shape does not match state dimension");
    spec.fault = std::move(fault);
  }
  spec.action_lower = VectorXd::Constant(spec.action_dim(), -1.0);
  spec.action_upper = VectorXd::Constant(spec.action_dim(), 1.0);
  return spec;
}

SystemSpec make_system(const std::string& name,
                       const std::map<std::string, double>& overrides, double dt,
                       std::optional<FaultTransform> fault) {
  return make_system(system_from_string(name), overrides, dt, std::move(fault));
}

FactoredTerms factored_terms(const SystemSpec& spec, const VectorXd& x) {
  FactoredTerms t;
  switch (spec.name) {
    case SystemName::temperature: {
      t.f_a = VectorXd::Constant(1, spec.param("a") * x(0));
      t.g_b = MatrixXd::Constant(1, 1, spec.param("b"));
      break;
    }
    case SystemName::spring: {
      const double m = spec.param("m");
      const double k = spec.param("k");
      const double friction = spec.param("stable_friction") != 0.0
                                  ? -spec.param("k_f")
                                  : spec.param("k_f");
      t.f_a = VectorXd(2);
      t.f_a << x(1), -(k / m) * x(0) + (friction / m) * x(1);
      t.g_b = MatrixXd(2, 1);
      t.g_b << 0.0, 1.0 / m;
      break;
    }
    case SystemName::pendulum: {
      const double m = spec.param("m");
      const double l = spec.param("l");
      const double g = spec.param("g");
      const double k_f = spec.param("k_f");
      t.f_a = VectorXd(2);
      t.f_a << x(1), -(g / l) * std::sin(x(0)) - (k_f / (m * l * l)) * x(1);
      t.g_b = MatrixXd(2, 1);
      t.g_b << 0.0, 1.0 / (m * l * l);
      break;
    }
    case SystemName::cartpole: {
      const double m_c = spec.param("m_c");
      const double m_p = spec.param("m_p");
      const double l = spec.param("l");
      const double g = spec.param("g");
      const double k_f = spec.param("k_f");
      const double sin1 = std::sin(x(0));
      const double cos1 = std::cos(x(0));
      const double denom = m_c + m_p - m_p * cos1 * cos1;
      // xdot4 depends on u, so it is kept factored; xdot2 then reuses both of
      // its pieces (the cart acceleration feeds back into the pole).
      const double fa4 = m_p * sin1 * (g * cos1 - l * x(1) * x(1)) / denom;
      const double gb4 = 1.0 / denom;
      const double fa2 =
          (g / l) * sin1 - k_f * x(1) / (m_p * l * l) + fa4 * cos1 / l;
      const double gb2 = gb4 * cos1 / l;
      t.f_a = VectorXd(4);
      t.f_a << x(1), fa2, x(3), fa4;
      t.g_b = MatrixXd(4, 1);
      t.g_b << 0.0, gb2, 0.0, gb4;
      break;
    }
  }
  return t;
}

VectorXd derivative(const SystemSpec& spec, const VectorXd& x, const VectorXd& u) {
  require(x.size() == spec.state_dim(), "state dimension mismatch");
  require(u.size() == spec.action_dim(), "action dimension mismatch");
  require(x.allFinite() && u.allFinite(), "non-finite state or action");
  FactoredTerms t = factored_terms(spec, x);
  if (spec.fault.has_value()) {
    return spec.fault->f_a * t.f_a + spec.fault->f_b * (t.g_b * u);
  }
  return t.f_a + t.g_b * u;
}

VectorXd step(const SystemSpec& spec, const VectorXd& x, const VectorXd& u) {
  VectorXd next = x + spec.dt * derivative(spec, x, u);
  if (!next.allFinite()) {
    throw std::runtime_error("integration produced a non-finite state");
  }
  return next;
}

SystemSpec apply_fault(const SystemSpec& spec, const FaultTransform& fault) {
  const int n = spec.state_dim();
  require(fault.f_a.rows() == n && fault.f_a.cols() == n && fault.f_b.rows() == n &&
              fault.f_b.cols() == n,
          "fault transform shape does not match state dimension");
  SystemSpec out = spec;
  if (spec.fault.has_value()) {
    out.fault = FaultTransform{fault.f_a * spec.fault->f_a,
                               fault.f_b * spec.fault->f_b};
  } else {
    out.fault = fault;
  }
  return out;
}

namespace {

// Closed-form (A, B) of the two linear benchmarks, before the fault.
LinearDynamics nominal_linear(const SystemSpec& spec) {
  LinearDynamics out;
  out.dt = spec.dt;
  if (spec.name == SystemName::temperature) {
    out.a = MatrixXd::Constant(1, 1, spec.param("a"));
    out.b = MatrixXd::Constant(1, 1, spec.param("b"));
    return out;
  }
  const double m = spec.param("m");
  const double k = spec.param("k");
  const double friction = spec.param("stable_friction") != 0.0 ? -spec.param("k_f")
                                                               : spec.param("k_f");
  out.a = MatrixXd(2, 2);
  out.a << 0.0, 1.0, -(k / m), friction / m;
  out.b = MatrixXd(2, 1);
  out.b << 0.0, 1.0 / m;
  return out;
}

}  // namespace

LinearDynamics linearize(const SystemSpec& spec, const VectorXd& x0,
                         const VectorXd& u0) {
  require(x0.allFinite() && u0.allFinite(), "non-finite linearization point");
  const int n = spec.state_dim();
  const int m = spec.action_dim();
  if (spec.name == SystemName::temperature || spec.name == SystemName::spring) {
    LinearDynamics lin = nominal_linear(spec);
    if (spec.fault.has_value()) {
      lin.a = spec.fault->f_a * lin.a;
      lin.b = spec.fault->f_b * lin.b;
    }
    return lin;
  }
  const double h = 1e-5;
  LinearDynamics lin;
  lin.dt = spec.dt;
  lin.a = MatrixXd(n, n);
  lin.b = MatrixXd(n, m);
  for (int j = 0; j < n; ++j) {
    VectorXd xp = x0, xm = x0;
    xp(j) += h;
    xm(j) -= h;
    lin.a.col(j) = (derivative(spec, xp, u0) - derivative(spec, xm, u0)) / (2 * h);
  }
  for (int j = 0; j < m; ++j) {
    VectorXd up = u0, um = u0;
    up(j) += h;
    um(j) -= h;
    lin.b.col(j) = (derivative(spec, x0, up) - derivative(spec, x0, um)) / (2 * h);
  }
  if (!lin.a.allFinite() || !lin.b.allFinite()) {
    throw std::runtime_error("linearize: non-finite Jacobian entries");
  }
  return lin;
}

LinearDynamics linearize_at_origin(const SystemSpec& spec) {
  return linearize(spec, VectorXd::Zero(spec.state_dim()),
                   VectorXd::Zero(spec.action_dim()));
}

VectorXd sample_initial_state(const SystemSpec& spec, Rng& rng) {
  switch (spec.name) {
    case SystemName::temperature: {
      VectorXd x(1);
      x << rng.uniform(-2.0, 2.0);
      return x;
    }
    case SystemName::spring:
    case SystemName::pendulum: {
      VectorXd x(2);
      x << rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0);
      return x;
    }
    case SystemName::cartpole: {
      VectorXd x(4);
      x << rng.uniform(-0.1, 0.1), rng.uniform(-0.05, 0.05),
          rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05);
      return x;
    }
  }
  throw std::logic_error("unreachable");
}

}  // namespace xferctl::dynamics

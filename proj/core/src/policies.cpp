#include "xferctl/policies.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "xferctl/numeric.hpp"

namespace xferctl::policies {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5*log(2*pi)

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

QuadraticCost QuadraticCost::make(const VectorXd& q_diag, const VectorXd& r_diag,
                                  VectorXd setpoint) {
  QuadraticCost c;
  c.q = q_diag.asDiagonal();
  c.r = r_diag.asDiagonal();
  c.setpoint = setpoint.size() > 0 ? std::move(setpoint)
                                   : VectorXd::Zero(q_diag.size());
  return c;
}

void QuadraticCost::validate(int state_dim, int action_dim) const {
  require(q.rows() == state_dim && q.cols() == state_dim,
          "cost Q shape does not match state dimension");
  require(r.rows() == action_dim && r.cols() == action_dim,
          "cost R shape does not match action dimension");
  require(setpoint.size() == state_dim, "cost setpoint dimension mismatch");
  for (int i = 0; i < state_dim; ++i) {
    require(q(i, i) >= 0.0, "cost Q diagonal entries must be >= 0");
  }
  for (int i = 0; i < action_dim; ++i) {
    require(r(i, i) > 0.0, "cost R diagonal entries must be > 0");
  }
}

double QuadraticCost::operator()(const VectorXd& x, const VectorXd& u) const {
  const VectorXd e = setpoint.size() > 0 ? VectorXd(x - setpoint) : x;
  return e.dot(q * e) + u.dot(r * u);
}

ParametricPolicy ParametricPolicy::random_init(int state_dim, int action_dim,
                                               int hidden, std::uint64_t seed) {
  require(state_dim > 0 && action_dim > 0 && hidden > 0,
          "parametric policy dimensions must be positive");
  ParametricPolicy p;
  p.state_dim = state_dim;
  p.action_dim = action_dim;
  p.hidden = hidden;
  p.params = VectorXd::Zero(p.param_count());
  Rng rng(Rng::derive(seed, "policy-init"));
  const double w1_scale = 1.0 / std::sqrt(static_cast<double>(state_dim));
  const double w2_scale = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (int i = 0; i < hidden * state_dim; ++i) {
    p.params(p.w1_offset() + i) = w1_scale * rng.normal();
  }
  for (int i = 0; i < action_dim * hidden; ++i) {
    p.params(p.w2_offset() + i) = w2_scale * rng.normal();
  }
  for (int i = 0; i < action_dim; ++i) {
    p.params(p.log_std_offset() + i) = kLogStdInit;
  }
  return p;
}

VectorXd ParametricPolicy::mean(const VectorXd& x) const {
  require(x.size() == state_dim, "parametric policy: state dimension mismatch");
  VectorXd z1(hidden);
  for (int i = 0; i < hidden; ++i) {
    double acc = params(b1_offset() + i);
    for (int j = 0; j < state_dim; ++j) {
      acc += params(w1_offset() + i * state_dim + j) * x(j);
    }
    z1(i) = std::tanh(acc);
  }
  VectorXd out(action_dim);
  for (int i = 0; i < action_dim; ++i) {
    double acc = params(b2_offset() + i);
    for (int j = 0; j < hidden; ++j) {
      acc += params(w2_offset() + i * hidden + j) * z1(j);
    }
    out(i) = acc;
  }
  return out;
}

Policy::Policy(LinearGainPolicy p) : v_(std::move(p)) {}
Policy::Policy(ParametricPolicy p) : v_(std::move(p)) {}
Policy::Policy(MpcPolicy p) : v_(std::move(p)) {}
Policy::Policy(TransformedPolicy p)
    : v_(std::make_unique<TransformedPolicy>(std::move(p))) {}
Policy::~Policy() = default;

Policy::Policy(const Policy& other) : v_(LinearGainPolicy{}) { *this = other; }

Policy& Policy::operator=(const Policy& other) {
  if (this == &other) return *this;
  if (auto* t = std::get_if<std::unique_ptr<TransformedPolicy>>(&other.v_)) {
    v_ = std::make_unique<TransformedPolicy>(**t);
  } else if (auto* g = std::get_if<LinearGainPolicy>(&other.v_)) {
    v_ = *g;
  } else if (auto* p = std::get_if<ParametricPolicy>(&other.v_)) {
    v_ = *p;
  } else {
    v_ = std::get<MpcPolicy>(other.v_);
  }
  return *this;
}

Policy::Kind Policy::kind() const {
  if (std::holds_alternative<LinearGainPolicy>(v_)) return Kind::linear_gain;
  if (std::holds_alternative<ParametricPolicy>(v_)) return Kind::parametric;
  if (std::holds_alternative<MpcPolicy>(v_)) return Kind::mpc;
  return Kind::transformed;
}

int Policy::action_dim() const {
  switch (kind()) {
    case Kind::linear_gain: return static_cast<int>(as_linear_gain().gain.rows());
    case Kind::parametric: return as_parametric().action_dim;
    case Kind::mpc: return as_mpc().model.input_dim();
    case Kind::transformed: return static_cast<int>(as_transformed().mult.rows());
  }
  throw std::logic_error("unreachable");
}

const LinearGainPolicy& Policy::as_linear_gain() const {
  return std::get<LinearGainPolicy>(v_);
}
const ParametricPolicy& Policy::as_parametric() const {
  return std::get<ParametricPolicy>(v_);
}
ParametricPolicy& Policy::as_parametric() {
  return std::get<ParametricPolicy>(v_);
}
const MpcPolicy& Policy::as_mpc() const { return std::get<MpcPolicy>(v_); }
const TransformedPolicy& Policy::as_transformed() const {
  return *std::get<std::unique_ptr<TransformedPolicy>>(v_);
}
TransformedPolicy& Policy::as_transformed() {
  return *std::get<std::unique_ptr<TransformedPolicy>>(v_);
}

DareSolution solve_dare(const MatrixXd& a_d, const MatrixXd& b_d, const MatrixXd& q,
                        const MatrixXd& r, double tol, int max_iterations) {
  const int n = static_cast<int>(a_d.rows());
  require(a_d.cols() == n && b_d.rows() == n, "solve_dare: shape mismatch");
  require(q.rows() == n && q.cols() == n, "solve_dare: Q shape mismatch");
  require(r.rows() == b_d.cols() && r.cols() == b_d.cols(),
          "solve_dare: R shape mismatch");
  Eigen::LLT<MatrixXd> r_llt(r);
  if (r_llt.info() != Eigen::Success) {
    throw std::invalid_argument("solve_dare: R must be positive definite");
  }

  DareSolution sol;
  MatrixXd p = q;
  for (int it = 1; it <= max_iterations; ++it) {
    const MatrixXd btp = b_d.transpose() * p;
    const MatrixXd gain = (r + btp * b_d).ldlt().solve(btp * a_d);
    const MatrixXd p_next = a_d.transpose() * p * (a_d - b_d * gain) + q;
    const double scale = std::max(1.0, p_next.cwiseAbs().maxCoeff());
    if (!p_next.allFinite() || scale > 1e100) {
      throw std::runtime_error(
          "solve_dare: iteration diverged; (A, B) pair appears non-stabilizable");
    }
    const double delta = (p_next - p).cwiseAbs().maxCoeff();
    p = p_next;
    // relative tolerance, tightened to an absolute floor so the fixed-point
    // residual stays below 1e-8 even when ||P|| is large
    if (delta <= std::min(tol * scale, 1e-9)) {
      sol.iterations = it;
      break;
    }
    if (it == max_iterations) {
      throw std::runtime_error("solve_dare: no convergence within iteration cap");
    }
  }
  sol.p = p;
  const MatrixXd btp = b_d.transpose() * sol.p;
  sol.gain = (r + btp * b_d).ldlt().solve(btp * a_d);
  return sol;
}

LinearGainPolicy lqr_gain(const LinearDynamics& model, const QuadraticCost& cost) {
  cost.validate(model.state_dim(), model.input_dim());
  const MatrixXd a_d = model.discrete_a();
  const MatrixXd b_d = model.discrete_b();
  DareSolution sol = solve_dare(a_d, b_d, cost.q, cost.r);
  // With Q = 0 the optimal gain is legitimately zero and the open loop may
  // be unstable; the stability guarantee only applies when the state is
  // actually penalized.
  if (!cost.q.isZero(0.0)) {
    const double radius = spectral_radius(a_d - b_d * sol.gain);
    if (radius >= 1.0) {
      throw std::runtime_error(
          "lqr_gain: closed loop not strictly stable (radius " +
          format_double(radius) + ")");
    }
  }
  return LinearGainPolicy{sol.gain, cost.setpoint};
}

VectorXd mpc_action(const LinearDynamics& model, const QuadraticCost& cost,
                    int horizon, const VectorXd& x) {
  require(horizon >= 1, "mpc_action: horizon must be >= 1");
  cost.validate(model.state_dim(), model.input_dim());
  const MatrixXd a_d = model.discrete_a();
  const MatrixXd b_d = model.discrete_b();
  Eigen::LLT<MatrixXd> r_llt(cost.r);
  if (r_llt.info() != Eigen::Success) {
    throw std::invalid_argument("mpc_action: R must be positive definite");
  }
  // Backward recursion: stage cost on x_1..x_H and u_1..u_H, no extra
  // terminal term beyond the last stage cost.
  MatrixXd p = MatrixXd::Zero(model.state_dim(), model.state_dim());
  MatrixXd first_gain;
  for (int j = 0; j < horizon; ++j) {
    const MatrixXd s = cost.q + p;
    const MatrixXd bts = b_d.transpose() * s;
    first_gain = (cost.r + bts * b_d).ldlt().solve(bts * a_d);
    p = a_d.transpose() * s * (a_d - b_d * first_gain);
  }
  const VectorXd z = cost.setpoint.size() > 0 ? VectorXd(x - cost.setpoint) : x;
  return -first_gain * z;
}

Policy transform_policy(const Policy& source, const MatrixXd& a_s,
                        const MatrixXd& b_s, const dynamics::FaultTransform& fault) {
  const int n = static_cast<int>(a_s.rows());
  require(a_s.cols() == n, "transform_policy: A_s must be square");
  require(b_s.rows() == n, "transform_policy: B_s row count mismatch");
  require(fault.f_a.rows() == n && fault.f_a.cols() == n,
          "transform_policy: F_A shape mismatch");
  require(fault.f_b.rows() == n && fault.f_b.cols() == n,
          "transform_policy: F_B shape mismatch");
  require(source.action_dim() == b_s.cols(),
          "transform_policy: source policy action dimension mismatch");

  const MatrixXd fbb = fault.f_b * b_s;  // n x m
  if (fbb.isZero(0.0)) {
    throw std::invalid_argument(
        "transform_policy: F_B * B_s is identically zero (no input authority)");
  }
  const MatrixXd pin = pseudo_inverse(fbb);  // m x n
  TransformedPolicy t{source,
                      pin * b_s,
                      pin * (MatrixXd::Identity(n, n) - fault.f_a) * a_s,
                      (fbb * pin - MatrixXd::Identity(n, n)).norm()};
  return Policy(std::move(t));
}

VectorXd raw_action(const Policy& policy, const VectorXd& x) {
  switch (policy.kind()) {
    case Policy::Kind::linear_gain:
      return policy.as_linear_gain().action(x);
    case Policy::Kind::parametric:
      return policy.as_parametric().mean(x);
    case Policy::Kind::mpc: {
      const auto& m = policy.as_mpc();
      return mpc_action(m.model, m.cost, m.horizon, x);
    }
    case Policy::Kind::transformed: {
      const auto& t = policy.as_transformed();
      return t.mult * raw_action(t.source, x) + t.gain_add * x;
    }
  }
  throw std::logic_error("unreachable");
}

VectorXd act(const Policy& policy, const VectorXd& x, const VectorXd& lower,
             const VectorXd& upper) {
  VectorXd u = raw_action(policy, x);
  if (!u.allFinite()) {
    throw std::runtime_error("policy produced a non-finite action");
  }
  return clip(u, lower, upper);
}

GaussianHead gaussian_head(const Policy& policy, const VectorXd& x) {
  switch (policy.kind()) {
    case Policy::Kind::parametric: {
      const auto& p = policy.as_parametric();
      GaussianHead head;
      head.mean = p.mean(x);
      head.stddev = p.log_std().cwiseMax(kLogStdFloor).array().exp();
      return head;
    }
    case Policy::Kind::transformed: {
      const auto& t = policy.as_transformed();
      if (t.mult.rows() != 1 || t.mult.cols() != 1) {
        throw std::invalid_argument(
            "gaussian_head: transformed policies support scalar actions only");
      }
      GaussianHead inner = gaussian_head(t.source, x);
      GaussianHead head;
      head.mean = t.mult * inner.mean + t.gain_add * x;
      head.stddev = std::abs(t.mult(0, 0)) * inner.stddev;
      return head;
    }
    default:
      throw std::invalid_argument("policy has no stochastic head");
  }
}

double gaussian_log_prob(const VectorXd& u, const GaussianHead& head) {
  double log_prob = 0.0;
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    const double z = (u(i) - head.mean(i)) / head.stddev(i);
    log_prob += -0.5 * z * z - std::log(head.stddev(i)) - kHalfLog2Pi;
  }
  return log_prob;
}

ActionSample sample_action(const Policy& policy, const VectorXd& x, Rng& rng) {
  const GaussianHead head = gaussian_head(policy, x);
  VectorXd u(head.mean.size());
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    u(i) = head.mean(i) + head.stddev(i) * rng.normal();
  }
  return {u, gaussian_log_prob(u, head)};
}

double policy_entropy(const Policy& policy, const VectorXd& x) {
  const GaussianHead head = gaussian_head(policy, x);
  double h = 0.0;
  for (Eigen::Index i = 0; i < head.stddev.size(); ++i) {
    h += std::log(head.stddev(i)) + 0.5 + kHalfLog2Pi;
  }
  return h;
}

namespace {

void write_matrix(std::ostream& out, const char* tag, const MatrixXd& m) {
  out << tag << ' ' << m.rows() << ' ' << m.cols() << '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      out << (j == 0 ? "" : " ") << format_double(m(i, j));
    }
    out << '\n';
  }
}

MatrixXd read_matrix(std::istream& in, const std::string& expected_tag) {
  std::string tag;
  Eigen::Index rows = 0, cols = 0;
  if (!(in >> tag >> rows >> cols) || tag != expected_tag) {
    throw std::runtime_error("policy file: expected matrix '" + expected_tag + "'");
  }
  MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      std::string token;
      if (!(in >> token)) throw std::runtime_error("policy file: truncated matrix");
      m(i, j) = parse_double(token);
    }
  }
  return m;
}

void write_vector(std::ostream& out, const char* tag, const VectorXd& v) {
  out << tag << ' ' << v.size() << '\n';
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    out << (i == 0 ? "" : " ") << format_double(v(i));
  }
  out << '\n';
}

VectorXd read_vector(std::istream& in, const std::string& expected_tag) {
  std::string tag;
  Eigen::Index size = 0;
  if (!(in >> tag >> size) || tag != expected_tag) {
    throw std::runtime_error("policy file: expected vector '" + expected_tag + "'");
  }
  VectorXd v(size);
  for (Eigen::Index i = 0; i < size; ++i) {
    std::string token;
    if (!(in >> token)) throw std::runtime_error("policy file: truncated vector");
    v(i) = parse_double(token);
  }
  return v;
}

void save_variant(const Policy& policy, std::ostream& out) {
  switch (policy.kind()) {
    case Policy::Kind::linear_gain: {
      const auto& g = policy.as_linear_gain();
      out << "linear_gain\n";
      write_matrix(out, "gain", g.gain);
      write_vector(out, "setpoint", g.setpoint);
      return;
    }
    case Policy::Kind::parametric: {
      const auto& p = policy.as_parametric();
      out << "parametric\n";
      out << "dims " << p.state_dim << ' ' << p.action_dim << ' ' << p.hidden
          << '\n';
      write_vector(out, "params", p.params);
      return;
    }
    case Policy::Kind::mpc: {
      const auto& m = policy.as_mpc();
      out << "mpc\n";
      out << "dt " << format_double(m.model.dt) << '\n';
      out << "horizon " << m.horizon << '\n';
      write_matrix(out, "a", m.model.a);
      write_matrix(out, "b", m.model.b);
      write_matrix(out, "q", m.cost.q);
      write_matrix(out, "r", m.cost.r);
      write_vector(out, "setpoint", m.cost.setpoint);
      return;
    }
    case Policy::Kind::transformed: {
      const auto& t = policy.as_transformed();
      out << "transformed\n";
      write_matrix(out, "mult", t.mult);
      write_matrix(out, "gain_add", t.gain_add);
      out << "residual " << format_double(t.match_residual) << '\n';
      out << "source\n";
      save_variant(t.source, out);
      return;
    }
  }
  throw std::logic_error("unreachable");
}

Policy load_variant(std::istream& in) {
  std::string kind;
  if (!(in >> kind)) throw std::runtime_error("policy file: missing variant tag");
  if (kind == "linear_gain") {
    LinearGainPolicy g;
    g.gain = read_matrix(in, "gain");
    g.setpoint = read_vector(in, "setpoint");
    return Policy(std::move(g));
  }
  if (kind == "parametric") {
    std::string tag;
    ParametricPolicy p;
    if (!(in >> tag >> p.state_dim >> p.action_dim >> p.hidden) || tag != "dims") {
      throw std::runtime_error("policy file: bad parametric dims");
    }
    p.params = read_vector(in, "params");
    if (p.params.size() != p.param_count()) {
      throw std::runtime_error("policy file: parametric parameter count mismatch");
    }
    return Policy(std::move(p));
  }
  if (kind == "mpc") {
    std::string tag, value;
    MpcPolicy m;
    if (!(in >> tag >> value) || tag != "dt") {
      throw std::runtime_error("policy file: bad mpc dt");
    }
    m.model.dt = parse_double(value);
    if (!(in >> tag >> m.horizon) || tag != "horizon") {
      throw std::runtime_error("policy file: bad mpc horizon");
    }
    m.model.a = read_matrix(in, "a");
    m.model.b = read_matrix(in, "b");
    m.cost.q = read_matrix(in, "q");
    m.cost.r = read_matrix(in, "r");
    m.cost.setpoint = read_vector(in, "setpoint");
    return Policy(std::move(m));
  }
  if (kind == "transformed") {
    MatrixXd mult = read_matrix(in, "mult");
    MatrixXd gain_add = read_matrix(in, "gain_add");
    std::string tag, value;
    if (!(in >> tag >> value) || tag != "residual") {
      throw std::runtime_error("policy file: bad transformed residual");
    }
    if (!(in >> tag) || tag != "source") {
      throw std::runtime_error("policy file: missing transformed source");
    }
    Policy source = load_variant(in);
    TransformedPolicy t{std::move(source), std::move(mult), std::move(gain_add),
                        parse_double(value)};
    return Policy(std::move(t));
  }
  throw std::runtime_error("policy file: unknown variant '" + kind + "'");
}

}  // namespace

void save_policy(const Policy& policy, std::ostream& out) {
  out << "xferctl-policy v1\n";
  save_variant(policy, out);
}

Policy load_policy(std::istream& in) {
  std::string magic, version;
  if (!(in >> magic >> version) || magic != "xferctl-policy" || version != "v1") {
    throw std::runtime_error("not a policy file (bad header)");
  }
  return load_variant(in);
}

void save_policy_file(const Policy& policy, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  save_policy(policy, out);
}

Policy load_policy_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  return load_policy(in);
}

}  // namespace xferctl::policies

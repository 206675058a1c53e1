#include "xferctl/sysid.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "xferctl/numeric.hpp"

namespace xferctl::sysid {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

}  // namespace

void TrajectoryBuffer::begin_episode() { episode_starts_.push_back(records_.size()); }

void TrajectoryBuffer::append(Transition t) {
  if (records_.size() >= capacity_) {
    throw std::runtime_error("trajectory buffer over capacity (" +
                             std::to_string(capacity_) + ")");
  }
  require(!episode_starts_.empty(), "append before begin_episode");
  if (records_.size() > episode_starts_.back()) {
    const Transition& prev = records_.back();
    if (prev.x_next != t.x) {
      throw std::invalid_argument(
          "trajectory buffer: transition does not chain from the previous record");
    }
  }
  records_.push_back(std::move(t));
}

int TrajectoryBuffer::episode_of(std::size_t i) const {
  int ep = 0;
  for (std::size_t k = 1; k < episode_starts_.size(); ++k) {
    if (i >= episode_starts_[k]) ep = static_cast<int>(k);
  }
  return ep;
}

int TrajectoryBuffer::step_of(std::size_t i) const {
  return static_cast<int>(i - episode_starts_[episode_of(i)]);
}

void TrajectoryBuffer::write_text(std::ostream& out) const {
  const int n = records_.empty() ? 0 : static_cast<int>(records_[0].x.size());
  const int m = records_.empty() ? 0 : static_cast<int>(records_[0].u.size());
  out << "# xferctl-trajectory v1\n";
  out << "# dt=" << format_double(dt_) << " tag=" << tag_
      << " capacity=" << capacity_ << " state_dim=" << n << " action_dim=" << m
      << '\n';
  out << "episode,step";
  for (int j = 0; j < n; ++j) out << ",x" << j;
  for (int j = 0; j < m; ++j) out << ",u" << j;
  for (int j = 0; j < n; ++j) out << ",xp" << j;
  out << ",reward\n";
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const Transition& t = records_[i];
    out << episode_of(i) << ',' << step_of(i);
    for (int j = 0; j < n; ++j) out << ',' << format_double(t.x(j));
    for (int j = 0; j < m; ++j) out << ',' << format_double(t.u(j));
    for (int j = 0; j < n; ++j) out << ',' << format_double(t.x_next(j));
    out << ',' << format_double(t.reward) << '\n';
  }
}

TrajectoryBuffer TrajectoryBuffer::read_text(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "# xferctl-trajectory v1") {
    throw std::runtime_error("not a trajectory file (bad header)");
  }
  if (!std::getline(in, line) || line.rfind("# ", 0) != 0) {
    throw std::runtime_error("trajectory file: missing metadata line");
  }
  double dt = 0.01;
  std::size_t capacity = 2500;
  std::string tag = "source";
  int n = 0, m = 0;
  {
    std::istringstream meta(line.substr(2));
    std::string kv;
    while (meta >> kv) {
      const auto pos = kv.find('=');
      if (pos == std::string::npos) continue;
      const std::string key = kv.substr(0, pos);
      const std::string value = kv.substr(pos + 1);
      if (key == "dt") dt = parse_double(value);
      else if (key == "tag") tag = value;
      else if (key == "capacity") capacity = std::stoull(value);
      else if (key == "state_dim") n = std::stoi(value);
      else if (key == "action_dim") m = std::stoi(value);
    }
  }
  if (!std::getline(in, line)) {
    throw std::runtime_error("trajectory file: missing column header");
  }
  TrajectoryBuffer buf(dt, capacity, tag);
  int current_episode = -1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cols = split(line, ',');
    if (static_cast<int>(cols.size()) != 2 + 2 * n + m + 1) {
      throw std::runtime_error("trajectory file: bad column count in row");
    }
    const int episode = std::stoi(cols[0]);
    if (episode != current_episode) {
      buf.begin_episode();
      current_episode = episode;
    }
    Transition t;
    t.x = VectorXd(n);
    t.u = VectorXd(m);
    t.x_next = VectorXd(n);
    int c = 2;
    for (int j = 0; j < n; ++j) t.x(j) = parse_double(cols[c++]);
    for (int j = 0; j < m; ++j) t.u(j) = parse_double(cols[c++]);
    for (int j = 0; j < n; ++j) t.x_next(j) = parse_double(cols[c++]);
    t.reward = parse_double(cols[c]);
    buf.append(std::move(t));
  }
  return buf;
}

void TrajectoryBuffer::write_text_file(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  write_text(out);
}

TrajectoryBuffer TrajectoryBuffer::read_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  return read_text(in);
}

TrajectoryBuffer collect_buffer(const dynamics::SystemSpec& spec,
                                const policies::Policy& policy, int n_episodes,
                                int horizon, std::uint64_t seed,
                                const CollectOptions& options) {
  require(options.exploration_noise_std >= 0.0, "exploration noise must be >= 0");
  require(n_episodes >= 0 && horizon >= 0, "episode counts must be >= 0");
  require(static_cast<std::size_t>(n_episodes) * static_cast<std::size_t>(horizon) <=
              options.max_interactions,
          "collection budget exceeds the interaction cap");
  require(policy.action_dim() == spec.action_dim(),
          "policy/system action dimension mismatch");

  TrajectoryBuffer buf(spec.dt, options.max_interactions, options.tag);
  Rng rng(Rng::derive(seed, "collect"));
  const int m = spec.action_dim();
  for (int ep = 0; ep < n_episodes; ++ep) {
    buf.begin_episode();
    VectorXd x = dynamics::sample_initial_state(spec, rng);
    for (int i = 0; i < horizon; ++i) {
      VectorXd u = policies::raw_action(policy, x);
      if (options.exploration_noise_std > 0.0) {
        for (int j = 0; j < m; ++j) {
          u(j) += options.exploration_noise_std * rng.normal();
        }
      }
      u = policies::clip(u, spec.action_lower, spec.action_upper);
      const VectorXd x_next = x + spec.dt * dynamics::derivative(spec, x, u);
      Transition t;
      t.x = x;
      t.u = u;
      t.x_next = x_next;
      t.reward = options.reward ? options.reward(x_next, u) : 0.0;
      if (!x_next.allFinite()) break;  // blow-up: drop the bad step, end episode
      buf.append(std::move(t));
      x = x_next;
      if (options.terminate && options.terminate(x)) break;
    }
  }
  return buf;
}

IdentificationReport fit_linear(const TrajectoryBuffer& buffer) {
  require(!buffer.empty(), "fit_linear: empty buffer");
  const int n = static_cast<int>(buffer[0].x.size());
  const int m = static_cast<int>(buffer[0].u.size());
  const int samples = static_cast<int>(buffer.size());

  MatrixXd regressors(samples, n + m);  // rows are [x_i, u_{i+1}]
  MatrixXd targets(samples, n);         // rows are x_{i+1}
  for (int i = 0; i < samples; ++i) {
    regressors.row(i).head(n) = buffer[i].x.transpose();
    regressors.row(i).tail(m) = buffer[i].u.transpose();
    targets.row(i) = buffer[i].x_next.transpose();
  }

  Eigen::JacobiSVD<MatrixXd> svd(regressors,
                                 Eigen::ComputeThinU | Eigen::ComputeThinV);
  svd.setThreshold(kRankTolerance);
  const MatrixXd p_t = svd.solve(targets);  // (n+m) x n, minimum-norm LS
  const MatrixXd p = p_t.transpose();       // n x (n+m)

  IdentificationReport report;
  report.sample_count = samples;
  report.rank_deficient = svd.rank() < n + m;
  const auto& sv = svd.singularValues();
  const double sv_min = sv(sv.size() - 1);
  report.condition_number = sv_min > 0.0
                                ? (sv(0) / sv_min) * (sv(0) / sv_min)
                                : std::numeric_limits<double>::infinity();
  report.residual_rms =
      std::sqrt((regressors * p_t - targets).squaredNorm() / samples);
  report.dynamics.dt = buffer.dt();
  report.dynamics.a =
      (p.leftCols(n) - MatrixXd::Identity(n, n)) / buffer.dt();
  report.dynamics.b = p.rightCols(m) / buffer.dt();
  return report;
}

TransformEstimate estimate_transforms(const LinearDynamics& source,
                                      const LinearDynamics& target) {
  const int n = source.state_dim();
  require(target.state_dim() == n && target.input_dim() == source.input_dim(),
          "estimate_transforms: dimension mismatch");
  require(std::abs(source.dt - target.dt) <= 1e-12 * std::max(source.dt, target.dt),
          "estimate_transforms: dt mismatch between source and target");

  TransformEstimate est;
  est.a_rank_deficient = matrix_rank(source.a) < n;
  est.transform.f_a = target.a * pseudo_inverse(source.a);
  const MatrixXd bbt = source.b * source.b.transpose();
  est.transform.f_b = (target.b * source.b.transpose()) * pseudo_inverse(bbt);
  est.composed_a = est.transform.f_a * source.a;
  est.composed_b = est.transform.f_b * source.b;
  return est;
}

int controllability_rank(const LinearDynamics& model) {
  const int n = model.state_dim();
  const int m = model.input_dim();
  MatrixXd ctrb(n, n * m);
  MatrixXd block = model.b;
  for (int k = 0; k < n; ++k) {
    ctrb.middleCols(k * m, m) = block;
    block = model.a * block;
  }
  return matrix_rank(ctrb);
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
    throw std::runtime_error("model file: expected matrix '" + expected_tag + "'");
  }
  MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      std::string token;
      if (!(in >> token)) throw std::runtime_error("model file: truncated matrix");
      m(i, j) = parse_double(token);
    }
  }
  return m;
}

}  // namespace

void save_model(const LinearDynamics& model, std::ostream& out) {
  out << "xferctl-model v1\n";
  out << "dt " << format_double(model.dt) << '\n';
  write_matrix(out, "a", model.a);
  write_matrix(out, "b", model.b);
}

LinearDynamics load_model(std::istream& in) {
  std::string magic, version, tag, value;
  if (!(in >> magic >> version) || magic != "xferctl-model" || version != "v1") {
    throw std::runtime_error("not a model file (bad header)");
  }
  if (!(in >> tag >> value) || tag != "dt") {
    throw std::runtime_error("model file: missing dt");
  }
  LinearDynamics model;
  model.dt = parse_double(value);
  model.a = read_matrix(in, "a");
  model.b = read_matrix(in, "b");
  return model;
}

void save_model_file(const LinearDynamics& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  save_model(model, out);
}

LinearDynamics load_model_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  return load_model(in);
}

}  // namespace xferctl::sysid

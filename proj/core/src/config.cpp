#include "xferctl/config.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "xferctl/numeric.hpp"

namespace xferctl::cfg {

namespace {

using harness::ControllerFamily;
using harness::ExperimentConfig;
using harness::FaultMode;
using harness::Variant;

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> tokens(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  std::string t;
  while (in >> t) out.push_back(t);
  return out;
}

int levenshtein(const std::string& a, const std::string& b) {
  std::vector<int> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::string nearest(const std::string& word,
                    const std::vector<std::string>& candidates) {
  std::string best;
  int best_dist = 1 << 20;
  for (const auto& c : candidates) {
    const int d = levenshtein(word, c);
    if (d < best_dist) {
      best_dist = d;
      best = c;
    }
  }
  return best;
}

const std::vector<std::string> kSections = {"system", "fault",  "cost", "controller",
                                            "rl",     "budget", "eval", "seeds"};

const std::map<std::string, std::vector<std::string>> kKeys = {
    {"system", {"name", "dt", "horizon"}},  // plus param.* overrides
    {"fault", {"mode", "f_a", "f_b"}},
    {"cost", {"reward", "q", "r", "setpoint"}},
    {"controller", {"family", "mpc_horizon", "variants"}},
    {"rl",
     {"discount", "steps_per_iteration", "iterations", "finetune_iterations",
      "clip_ratio", "learning_rate", "minibatch_size", "entropy_coefficient",
      "update_epochs"}},
    {"budget", {"id_episodes", "id_max_interactions", "exploration_noise_std"}},
    {"eval", {"episodes"}},
    {"seeds", {"list"}},
};

struct RawConfig {
  // section -> key -> value, insertion order irrelevant (canonical emit fixes it)
  std::map<std::string, std::map<std::string, std::string>> entries;

  const std::string* find(const std::string& section, const std::string& key) const {
    auto s = entries.find(section);
    if (s == entries.end()) return nullptr;
    auto k = s->second.find(key);
    if (k == s->second.end()) return nullptr;
    return &k->second;
  }
};

RawConfig parse_raw(const std::string& text) {
  RawConfig raw;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.front() == '[') {
      if (t.back() != ']') {
        throw std::invalid_argument("config line " + std::to_string(line_no) +
                                    ": malformed section header");
      }
      section = trim(t.substr(1, t.size() - 2));
      if (std::find(kSections.begin(), kSections.end(), section) ==
          kSections.end()) {
        throw std::invalid_argument("config: unknown section '" + section +
                                    "' (did you mean '" +
                                    nearest(section, kSections) + "'?)");
      }
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": expected 'key = value'");
    }
    if (section.empty()) {
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": key outside of any [section]");
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    const auto& known = kKeys.at(section);
    const bool is_param = section == "system" && key.rfind("param.", 0) == 0;
    if (!is_param &&
        std::find(known.begin(), known.end(), key) == known.end()) {
      std::vector<std::string> candidates = known;
      if (section == "system") candidates.push_back("param.<name>");
      throw std::invalid_argument("config: unknown key '" + key +
                                  "' in section [" + section +
                                  "] (did you mean '" + nearest(key, candidates) +
                                  "'?)");
    }
    if (!raw.entries[section].emplace(key, value).second) {
      throw std::invalid_argument("config: duplicate key '" + key +
                                  "' in section [" + section + "]");
    }
  }
  return raw;
}

long parse_long(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const long v = std::stol(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw std::invalid_argument("config: " + what + " must be an integer, got '" +
                                s + "'");
  }
}

double parse_num(const std::string& s, const std::string& what) {
  try {
    return parse_double(s);
  } catch (...) {
    throw std::invalid_argument("config: " + what + " must be a number, got '" +
                                s + "'");
  }
}

}  // namespace

Eigen::MatrixXd parse_matrix_spec(const std::string& spec, int n) {
  const auto toks = tokens(spec);
  if (toks.empty()) throw std::invalid_argument("empty matrix value");
  if (toks[0] == "diag") {
    if (toks.size() == 2) {
      return parse_double(toks[1]) * Eigen::MatrixXd::Identity(n, n);
    }
    if (static_cast<int>(toks.size()) != n + 1) {
      throw std::invalid_argument("diag expects 1 or " + std::to_string(n) +
                                  " values");
    }
    Eigen::VectorXd d(n);
    for (int i = 0; i < n; ++i) d(i) = parse_double(toks[i + 1]);
    return Eigen::MatrixXd(d.asDiagonal());
  }
  if (toks[0] == "rows") {
    std::vector<std::vector<double>> rows(1);
    for (std::size_t i = 1; i < toks.size(); ++i) {
      if (toks[i] == ";") {
        rows.emplace_back();
      } else {
        rows.back().push_back(parse_double(toks[i]));
      }
    }
    if (static_cast<int>(rows.size()) != n) {
      throw std::invalid_argument("rows expects " + std::to_string(n) + " rows");
    }
    Eigen::MatrixXd m(n, n);
    for (int i = 0; i < n; ++i) {
      if (static_cast<int>(rows[i].size()) != n) {
        throw std::invalid_argument("rows expects " + std::to_string(n) +
                                    " values per row");
      }
      for (int j = 0; j < n; ++j) m(i, j) = rows[i][j];
    }
    return m;
  }
  throw std::invalid_argument("matrix value must start with 'diag' or 'rows'");
}

std::string emit_matrix_spec(const Eigen::MatrixXd& m) {
  const int n = static_cast<int>(m.rows());
  const bool diagonal = m.isDiagonal(0.0);
  if (diagonal) {
    bool uniform = true;
    for (int i = 1; i < n; ++i) {
      if (m(i, i) != m(0, 0)) uniform = false;
    }
    std::string out = "diag";
    if (uniform) return out + " " + format_double(m(0, 0));
    for (int i = 0; i < n; ++i) out += " " + format_double(m(i, i));
    return out;
  }
  std::string out = "rows";
  for (int i = 0; i < n; ++i) {
    if (i > 0) out += " ;";
    for (int j = 0; j < static_cast<int>(m.cols()); ++j) {
      out += " " + format_double(m(i, j));
    }
  }
  return out;
}

Eigen::VectorXd parse_vector_spec(const std::string& spec, int n) {
  const auto toks = tokens(spec);
  if (toks.empty()) throw std::invalid_argument("empty vector value");
  if (toks[0] == "const") {
    if (toks.size() != 2) throw std::invalid_argument("const expects one value");
    return Eigen::VectorXd::Constant(n, parse_double(toks[1]));
  }
  if (toks[0] == "vec") {
    if (static_cast<int>(toks.size()) != n + 1) {
      throw std::invalid_argument("vec expects " + std::to_string(n) + " values");
    }
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v(i) = parse_double(toks[i + 1]);
    return v;
  }
  throw std::invalid_argument("vector value must start with 'const' or 'vec'");
}

std::string emit_vector_spec(const Eigen::VectorXd& v) {
  bool uniform = true;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v(i) != v(0)) uniform = false;
  }
  if (uniform) return "const " + format_double(v.size() > 0 ? v(0) : 0.0);
  std::string out = "vec";
  for (Eigen::Index i = 0; i < v.size(); ++i) out += " " + format_double(v(i));
  return out;
}

harness::ExperimentConfig parse_config_text(const std::string& text) {
  const RawConfig raw = parse_raw(text);

  const std::string system =
      raw.find("system", "name") ? *raw.find("system", "name") : "temperature";
  const ControllerFamily family =
      raw.find("controller", "family")
          ? harness::family_from_string(*raw.find("controller", "family"))
          : ControllerFamily::lqr;

  ExperimentConfig cfg = harness::default_experiment(system, family);
  const auto spec = dynamics::make_system(system);
  const int n = spec.state_dim();

  if (const auto* v = raw.find("system", "dt")) cfg.dt = parse_num(*v, "system.dt");
  if (const auto* v = raw.find("system", "horizon")) {
    cfg.horizon = static_cast<int>(parse_long(*v, "system.horizon"));
    cfg.rl.horizon = cfg.horizon;
  }
  if (raw.entries.count("system") > 0) {
    for (const auto& [key, value] : raw.entries.at("system")) {
      if (key.rfind("param.", 0) == 0) {
        cfg.param_overrides[key.substr(6)] =
            parse_num(value, "system." + key);
      }
    }
  }

  if (const auto* v = raw.find("fault", "mode")) {
    cfg.fault_mode = harness::fault_mode_from_string(*v);
  }
  if (const auto* v = raw.find("fault", "f_a")) {
    cfg.fault.f_a = parse_matrix_spec(*v, n);
  }
  if (const auto* v = raw.find("fault", "f_b")) {
    cfg.fault.f_b = parse_matrix_spec(*v, n);
  }

  if (const auto* v = raw.find("cost", "q")) {
    const Eigen::MatrixXd q = parse_matrix_spec(*v, n);
    cfg.cost.q = q;
  }
  if (const auto* v = raw.find("cost", "r")) {
    cfg.cost.r = parse_matrix_spec(*v, spec.action_dim());
  }
  if (const auto* v = raw.find("cost", "setpoint")) {
    cfg.cost.setpoint = parse_vector_spec(*v, n);
  }
  if (const auto* v = raw.find("cost", "reward")) {
    if (*v == "quadratic") {
      cfg.reward = RewardFunction::quadratic(cfg.cost);
    } else if (*v == "bonus") {
      cfg.reward = RewardFunction::bonus();
    } else {
      throw std::invalid_argument(
          "config: cost.reward must be 'quadratic' or 'bonus'");
    }
  } else if (cfg.reward.kind == RewardFunction::Kind::quadratic) {
    cfg.reward = RewardFunction::quadratic(cfg.cost);  // pick up Q/R overrides
  }

  if (const auto* v = raw.find("controller", "mpc_horizon")) {
    cfg.mpc_horizon = static_cast<int>(parse_long(*v, "controller.mpc_horizon"));
  }
  if (const auto* v = raw.find("controller", "variants")) {
    cfg.variants.clear();
    for (const auto& name : tokens(*v)) {
      cfg.variants.push_back(harness::variant_from_string(name));
    }
  }

  if (const auto* v = raw.find("rl", "discount")) {
    cfg.rl.discount = parse_num(*v, "rl.discount");
  }
  if (const auto* v = raw.find("rl", "steps_per_iteration")) {
    cfg.rl.steps_per_iteration =
        static_cast<int>(parse_long(*v, "rl.steps_per_iteration"));
  }
  if (const auto* v = raw.find("rl", "iterations")) {
    cfg.rl.iterations = static_cast<int>(parse_long(*v, "rl.iterations"));
  }
  if (const auto* v = raw.find("rl", "finetune_iterations")) {
    cfg.finetune_iterations =
        static_cast<int>(parse_long(*v, "rl.finetune_iterations"));
  }
  if (const auto* v = raw.find("rl", "clip_ratio")) {
    cfg.rl.clip_ratio = parse_num(*v, "rl.clip_ratio");
  }
  if (const auto* v = raw.find("rl", "learning_rate")) {
    cfg.rl.learning_rate = parse_num(*v, "rl.learning_rate");
  }
  if (const auto* v = raw.find("rl", "minibatch_size")) {
    cfg.rl.minibatch_size =
        static_cast<int>(parse_long(*v, "rl.minibatch_size"));
  }
  if (const auto* v = raw.find("rl", "entropy_coefficient")) {
    cfg.rl.entropy_coefficient = parse_num(*v, "rl.entropy_coefficient");
  }
  if (const auto* v = raw.find("rl", "update_epochs")) {
    cfg.rl.update_epochs = static_cast<int>(parse_long(*v, "rl.update_epochs"));
  }

  if (const auto* v = raw.find("budget", "id_episodes")) {
    cfg.id_episodes = static_cast<int>(parse_long(*v, "budget.id_episodes"));
  }
  if (const auto* v = raw.find("budget", "id_max_interactions")) {
    cfg.id_max_interactions =
        static_cast<int>(parse_long(*v, "budget.id_max_interactions"));
  }
  if (const auto* v = raw.find("budget", "exploration_noise_std")) {
    cfg.exploration_noise_std = parse_num(*v, "budget.exploration_noise_std");
  }

  if (const auto* v = raw.find("eval", "episodes")) {
    cfg.eval_episodes = static_cast<int>(parse_long(*v, "eval.episodes"));
  }

  if (const auto* v = raw.find("seeds", "list")) {
    cfg.seeds.clear();
    for (const auto& t : tokens(*v)) {
      cfg.seeds.push_back(
          static_cast<std::uint64_t>(parse_long(t, "seeds.list")));
    }
  }

  cfg.validate();
  return cfg;
}

harness::ExperimentConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

std::string emit_config(const harness::ExperimentConfig& cfg) {
  std::ostringstream out;
  out << "# xferctl experiment config v1\n";
  out << "[system]\n";
  out << "name = " << cfg.system << '\n';
  out << "dt = " << format_double(cfg.dt) << '\n';
  out << "horizon = " << cfg.horizon << '\n';
  const auto spec = dynamics::make_system(cfg.system, cfg.param_overrides, cfg.dt);
  for (const auto& [key, value] : spec.params) {
    out << "param." << key << " = " << format_double(value) << '\n';
  }
  out << "\n[fault]\n";
  out << "mode = " << harness::to_string(cfg.fault_mode) << '\n';
  out << "f_a = " << emit_matrix_spec(cfg.fault.f_a) << '\n';
  out << "f_b = " << emit_matrix_spec(cfg.fault.f_b) << '\n';
  out << "\n[cost]\n";
  out << "reward = "
      << (cfg.reward.kind == RewardFunction::Kind::quadratic ? "quadratic"
                                                             : "bonus")
      << '\n';
  out << "q = " << emit_matrix_spec(cfg.cost.q) << '\n';
  out << "r = " << emit_matrix_spec(cfg.cost.r) << '\n';
  out << "setpoint = " << emit_vector_spec(cfg.cost.setpoint) << '\n';
  out << "\n[controller]\n";
  out << "family = " << harness::to_string(cfg.family) << '\n';
  out << "mpc_horizon = " << cfg.mpc_horizon << '\n';
  out << "variants =";
  for (const auto v : cfg.variants) out << ' ' << harness::to_string(v);
  out << '\n';
  out << "\n[rl]\n";
  out << "discount = " << format_double(cfg.rl.discount) << '\n';
  out << "steps_per_iteration = " << cfg.rl.steps_per_iteration << '\n';
  out << "iterations = " << cfg.rl.iterations << '\n';
  out << "finetune_iterations = " << cfg.finetune_iterations << '\n';
  out << "clip_ratio = " << format_double(cfg.rl.clip_ratio) << '\n';
  out << "learning_rate = " << format_double(cfg.rl.learning_rate) << '\n';
  out << "minibatch_size = " << cfg.rl.minibatch_size << '\n';
  out << "entropy_coefficient = " << format_double(cfg.rl.entropy_coefficient)
      << '\n';
  out << "update_epochs = " << cfg.rl.update_epochs << '\n';
  out << "\n[budget]\n";
  out << "id_episodes = " << cfg.id_episodes << '\n';
  out << "id_max_interactions = " << cfg.id_max_interactions << '\n';
  out << "exploration_noise_std = " << format_double(cfg.exploration_noise_std)
      << '\n';
  out << "\n[eval]\n";
  out << "episodes = " << cfg.eval_episodes << '\n';
  out << "\n[seeds]\n";
  out << "list =";
  for (const auto s : cfg.seeds) out << ' ' << s;
  out << '\n';
  return out.str();
}

std::string config_hash(const harness::ExperimentConfig& cfg) {
  const std::uint64_t h = fnv1a64(emit_config(cfg));
  std::ostringstream out;
  out << std::hex;
  out.width(16);
  out.fill('0');
  out << h;
  return out.str();
}

}  // namespace xferctl::cfg

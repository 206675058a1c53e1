#include "xferctl/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "xferctl/config.hpp"
#include "xferctl/harness.hpp"
#include "xferctl/numeric.hpp"
#include "xferctl/report.hpp"
#include "xferctl/version.hpp"

namespace xferctl::cli {

namespace {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

// Staged artifact writing: content is assembled in memory, written through a
// temp file and renamed; a failure anywhere rolls back everything already
// written so a failed run leaves no partial table files.
class ArtifactSink {
 public:
  explicit ArtifactSink(fs::path dir) : dir_(std::move(dir)) {
    fs::create_directories(dir_);
  }
  ~ArtifactSink() {
    if (!committed_) {
      for (const auto& p : written_) {
        std::error_code ec;
        fs::remove(p, ec);
      }
    }
  }

  void write(const std::string& name, const std::string& content) {
    const fs::path final_path = dir_ / name;
    const fs::path tmp_path = dir_ / (name + ".tmp");
    {
      std::ofstream out(tmp_path, std::ios::binary);
      if (!out) {
        throw std::runtime_error("cannot open for writing: " + tmp_path.string());
      }
      out << content;
    }
    fs::rename(tmp_path, final_path);
    written_.push_back(final_path);
  }

  void commit() { committed_ = true; }
  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& p : written_) out.push_back(p.filename().string());
    return out;
  }
  const fs::path& dir() const { return dir_; }

 private:
  fs::path dir_;
  std::vector<fs::path> written_;
  bool committed_ = false;
};

std::string timestamp_utc() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string manifest_json(const std::string& command, const std::string& hash,
                          const std::vector<std::uint64_t>& seeds,
                          const std::vector<std::string>& artifacts) {
  ordered_json j;
  j["tool"] = "xferctl";
  j["version"] = kVersion;
  j["command"] = command;
  j["config_hash"] = hash;
  j["timestamp_utc"] = timestamp_utc();
  j["seeds"] = seeds;
  j["artifacts"] = artifacts;
  return j.dump(2) + "\n";
}

harness::ExperimentConfig load_experiment(const std::string& config_path,
                                          const std::string& system_override,
                                          const std::vector<std::uint64_t>& seeds) {
  harness::ExperimentConfig cfg =
      config_path.empty()
          ? harness::default_experiment(
                system_override.empty() ? "temperature" : system_override,
                harness::ControllerFamily::lqr)
          : cfg::parse_config(config_path);
  if (!system_override.empty() && cfg.system != system_override) {
    harness::ExperimentConfig fresh =
        harness::default_experiment(system_override, cfg.family);
    fresh.fault_mode = cfg.fault_mode;
    fresh.seeds = cfg.seeds;
    fresh.eval_episodes = cfg.eval_episodes;
    cfg = fresh;
  }
  if (!seeds.empty()) cfg.seeds = seeds;
  cfg.validate();
  return cfg;
}

policies::Policy policy_for(const harness::ExperimentConfig& cfg,
                            const dynamics::SystemSpec& spec,
                            const std::string& policy_path) {
  if (policy_path == "zero") {
    return policies::Policy(policies::LinearGainPolicy{
        Eigen::MatrixXd::Zero(spec.action_dim(), spec.state_dim()),
        Eigen::VectorXd::Zero(spec.state_dim())});
  }
  if (!policy_path.empty()) return policies::load_policy_file(policy_path);
  const LinearDynamics lin = dynamics::linearize_at_origin(spec);
  if (cfg.family == harness::ControllerFamily::mpc) {
    return policies::Policy(policies::MpcPolicy{lin, cfg.cost, cfg.mpc_horizon});
  }
  if (cfg.family == harness::ControllerFamily::lqr) {
    return policies::Policy(policies::lqr_gain(lin, cfg.cost));
  }
  throw std::runtime_error(
      "the rl family needs an explicit --policy file (train one first)");
}

std::string identification_text(const sysid::IdentificationReport& rep) {
  std::ostringstream out;
  out << "A_hat:\n" << rep.dynamics.a << "\nB_hat:\n" << rep.dynamics.b << '\n';
  out << "residual_rms = " << format_double(rep.residual_rms) << '\n';
  out << "condition_number = " << format_double(rep.condition_number) << '\n';
  out << "sample_count = " << rep.sample_count << '\n';
  out << "rank_deficient = " << (rep.rank_deficient ? "true" : "false") << '\n';
  out << "controllability_rank = "
      << sysid::controllability_rank(rep.dynamics) << '\n';
  return out.str();
}

struct PresetSpec {
  harness::ControllerFamily family;
  harness::FaultMode fault_mode;
};

std::optional<PresetSpec> preset_spec(const std::string& name) {
  if (name == "lqr-table") {
    return PresetSpec{harness::ControllerFamily::lqr, harness::FaultMode::known};
  }
  if (name == "mpc-table") {
    return PresetSpec{harness::ControllerFamily::mpc, harness::FaultMode::known};
  }
  if (name == "rl-known-table") {
    return PresetSpec{harness::ControllerFamily::rl, harness::FaultMode::known};
  }
  if (name == "rl-identified-table") {
    return PresetSpec{harness::ControllerFamily::rl, harness::FaultMode::identify};
  }
  if (name == "learning-curves") {
    return PresetSpec{harness::ControllerFamily::rl, harness::FaultMode::known};
  }
  return std::nullopt;
}

harness::ExperimentConfig preset_config(const std::string& preset,
                                        const std::string& system) {
  const auto spec = preset_spec(preset);
  if (!spec.has_value()) {
    throw std::runtime_error(
        "unknown preset '" + preset +
        "' (expected lqr-table, mpc-table, rl-known-table, rl-identified-table "
        "or learning-curves)");
  }
  harness::ExperimentConfig cfg = harness::default_experiment(system, spec->family);
  cfg.fault_mode = spec->fault_mode;
  return cfg;
}

int cmd_simulate(const harness::ExperimentConfig& cfg, const std::string& policy_path,
                 int episodes, bool nominal, const std::string& out_dir,
                 std::ostream& out) {
  const auto source = dynamics::make_system(cfg.system, cfg.param_overrides, cfg.dt);
  const auto system = (nominal || cfg.fault_mode == harness::FaultMode::none)
                          ? source
                          : dynamics::apply_fault(source, cfg.fault);
  const auto policy = policy_for(cfg, source, policy_path);

  sysid::TrajectoryBuffer buffer(
      system.dt, static_cast<std::size_t>(episodes) * cfg.horizon + 1,
      nominal ? "source" : "target");
  Rng rng(Rng::derive(cfg.seeds.front(), "simulate"));
  for (int ep = 0; ep < episodes; ++ep) {
    const Eigen::VectorXd x0 = dynamics::sample_initial_state(system, rng);
    const auto result =
        harness::run_episode(system, policy, cfg.reward, cfg.horizon, x0);
    buffer.begin_episode();
    for (const auto& t : result.trace) buffer.append(t);
    out << "episode " << ep << ": reward " << format_double(result.episodic_reward)
        << " over " << result.steps << " steps"
        << (result.truncated_nonfinite ? " (truncated: non-finite state)" : "")
        << '\n';
  }
  ArtifactSink sink(out_dir);
  std::ostringstream csv;
  buffer.write_text(csv);
  sink.write("trajectory.csv", csv.str());
  sink.write("manifest.json",
             manifest_json("simulate", cfg::config_hash(cfg), cfg.seeds,
                           {"trajectory.csv"}));
  sink.commit();
  out << "wrote " << (sink.dir() / "trajectory.csv").string() << '\n';
  return 0;
}

int cmd_identify(const std::string& buffer_path, const std::string& target_path,
                 const std::string& out_dir, std::ostream& out) {
  const auto buffer = sysid::TrajectoryBuffer::read_text_file(buffer_path);
  const auto report = sysid::fit_linear(buffer);
  out << "identified from " << buffer_path << " (" << buffer.size()
      << " transitions, tag " << buffer.tag() << ")\n";
  out << identification_text(report);

  std::optional<sysid::IdentificationReport> target_report;
  std::optional<sysid::TransformEstimate> estimate;
  if (!target_path.empty()) {
    const auto target_buffer = sysid::TrajectoryBuffer::read_text_file(target_path);
    target_report = sysid::fit_linear(target_buffer);
    out << "identified from " << target_path << " (" << target_buffer.size()
        << " transitions, tag " << target_buffer.tag() << ")\n";
    out << identification_text(*target_report);
    estimate = sysid::estimate_transforms(report.dynamics, target_report->dynamics);
    out << "F_A_hat:\n" << estimate->transform.f_a << '\n';
    out << "F_B_hat:\n" << estimate->transform.f_b << '\n';
    out << "F_A definiteness: "
        << dynamics::to_string(
               dynamics::classify_definiteness(estimate->transform.f_a))
        << '\n';
    out << "F_B definiteness: "
        << dynamics::to_string(
               dynamics::classify_definiteness(estimate->transform.f_b))
        << '\n';
    if (estimate->a_rank_deficient) {
      out << "warning: A_s is rank deficient; F_A_hat is the minimum-norm "
             "solution\n";
    }
  }

  if (!out_dir.empty()) {
    ArtifactSink sink(out_dir);
    std::vector<std::string> artifacts;
    {
      std::ostringstream model;
      sysid::save_model(report.dynamics, model);
      sink.write("model-source.txt", model.str());
      artifacts.push_back("model-source.txt");
    }
    if (target_report.has_value()) {
      std::ostringstream model;
      sysid::save_model(target_report->dynamics, model);
      sink.write("model-target.txt", model.str());
      artifacts.push_back("model-target.txt");
    }
    sink.write("manifest.json", manifest_json("identify", "-", {}, artifacts));
    sink.commit();
    out << "wrote models under " << sink.dir().string() << '\n';
  }
  return 0;
}

int cmd_transfer(const std::string& policy_path, const std::string& source_model,
                 const std::string& target_model, const std::string& fa_spec,
                 const std::string& fb_spec, const std::string& out_dir,
                 std::ostream& out) {
  const auto pi_s = policies::load_policy_file(policy_path);
  const auto model = sysid::load_model_file(source_model);
  const int n = model.state_dim();

  dynamics::FaultTransform fault;
  if (!target_model.empty()) {
    const auto target = sysid::load_model_file(target_model);
    fault = sysid::estimate_transforms(model, target).transform;
  } else if (!fa_spec.empty() && !fb_spec.empty()) {
    fault.f_a = cfg::parse_matrix_spec(fa_spec, n);
    fault.f_b = cfg::parse_matrix_spec(fb_spec, n);
  } else {
    throw std::runtime_error(
        "transfer needs either --target-model or both --fa and --fb");
  }

  const auto pi_t = policies::transform_policy(pi_s, model.a, model.b, fault);
  const auto& t = pi_t.as_transformed();
  out << "mult:\n" << t.mult << "\ngain_add:\n" << t.gain_add << '\n';
  out << "matching residual rho = " << format_double(t.match_residual) << '\n';

  ArtifactSink sink(out_dir);
  std::ostringstream doc;
  policies::save_policy(pi_t, doc);
  sink.write("pi_t.txt", doc.str());
  sink.write("manifest.json", manifest_json("transfer", "-", {}, {"pi_t.txt"}));
  sink.commit();
  out << "wrote " << (sink.dir() / "pi_t.txt").string() << '\n';
  return 0;
}

int cmd_train(const harness::ExperimentConfig& cfg, const std::string& policy_path,
              bool on_target, const std::string& trainable,
              const std::string& out_dir, std::ostream& out) {
  const auto source = dynamics::make_system(cfg.system, cfg.param_overrides, cfg.dt);
  const auto system = on_target && cfg.fault_mode != harness::FaultMode::none
                          ? dynamics::apply_fault(source, cfg.fault)
                          : source;

  policies::Policy policy =
      policy_path.empty()
          ? policies::Policy(policies::ParametricPolicy::random_init(
                system.state_dim(), system.action_dim(), 32,
                Rng::derive(cfg.seeds.front(), "source-init")))
          : policies::load_policy_file(policy_path);

  rlopt::TrainConfig train_cfg = cfg.rl;
  train_cfg.horizon = cfg.horizon;
  train_cfg.seed = Rng::derive(cfg.seeds.front(), "source-train");
  if (trainable == "source") {
    train_cfg.trainable_set = rlopt::TrainableSet::source_params_only;
  } else if (trainable == "source+transform") {
    train_cfg.trainable_set = rlopt::TrainableSet::source_plus_transform;
  } else if (trainable == "all") {
    train_cfg.trainable_set = rlopt::TrainableSet::all;
  } else {
    throw std::runtime_error("unknown --trainable value '" + trainable + "'");
  }

  const auto result = rlopt::train(policy, system, cfg.reward, train_cfg);
  if (!result.curve.empty()) {
    out << "trained " << result.curve.size() << " iterations; final mean reward "
        << format_double(result.curve.back().mean_reward) << '\n';
  }

  ArtifactSink sink(out_dir);
  std::ostringstream doc;
  policies::save_policy(result.policy, doc);
  sink.write("policy.txt", doc.str());
  std::ostringstream csv;
  csv << "# xferctl-curves v1\n";
  csv << "variant,seed,iteration,env_steps,timeline_steps,mean_reward,reward_std,"
         "entropy,episodes\n";
  for (std::size_t i = 0; i < result.curve.size(); ++i) {
    const auto& pt = result.curve[i];
    csv << "trained," << cfg.seeds.front() << ',' << i << ',' << pt.env_steps
        << ',' << pt.env_steps << ',' << format_double(pt.mean_reward) << ','
        << format_double(pt.reward_std) << ',' << format_double(pt.entropy)
        << ',' << pt.episodes << '\n';
  }
  sink.write("curve.csv", csv.str());
  sink.write("manifest.json",
             manifest_json("train", cfg::config_hash(cfg), cfg.seeds,
                           {"policy.txt", "curve.csv"}));
  sink.commit();
  out << "wrote " << (sink.dir() / "policy.txt").string() << '\n';
  return 0;
}

int cmd_evaluate(const harness::ExperimentConfig& cfg, const std::string& policy_path,
                 bool on_target, const std::string& x0_spec,
                 const std::string& out_dir, std::ostream& out) {
  const auto source = dynamics::make_system(cfg.system, cfg.param_overrides, cfg.dt);
  const auto system = on_target && cfg.fault_mode != harness::FaultMode::none
                          ? dynamics::apply_fault(source, cfg.fault)
                          : source;
  const auto policy = policy_for(cfg, source, policy_path);

  double mean = 0.0;
  double stddev = 0.0;
  int n_episodes = cfg.eval_episodes;
  if (!x0_spec.empty()) {
    const Eigen::VectorXd x0 = cfg::parse_vector_spec(x0_spec, system.state_dim());
    std::vector<double> vals;
    for (int ep = 0; ep < n_episodes; ++ep) {
      vals.push_back(
          harness::run_episode(system, policy, cfg.reward, cfg.horizon, x0)
              .episodic_reward);
    }
    for (const double v : vals) mean += v;
    mean /= vals.size();
    for (const double v : vals) stddev += (v - mean) * (v - mean);
    stddev = std::sqrt(stddev / vals.size());
  } else {
    const auto result =
        rlopt::evaluate_policy(policy, system, cfg.reward, cfg.eval_episodes,
                               Rng::derive(cfg.seeds.front(), "evaluate"),
                               cfg.horizon);
    mean = result.mean;
    stddev = result.stddev;
  }
  out << "mean " << format_double(mean) << " +/- " << format_double(stddev)
      << " over " << n_episodes << " episodes\n";

  if (!out_dir.empty()) {
    ArtifactSink sink(out_dir);
    ordered_json j;
    j["system"] = cfg.system;
    j["on_target"] = on_target;
    j["mean"] = mean;
    j["stddev"] = stddev;
    j["n_episodes"] = n_episodes;
    sink.write("evaluation.json", j.dump(2) + "\n");
    sink.write("manifest.json",
               manifest_json("evaluate", cfg::config_hash(cfg), cfg.seeds,
                             {"evaluation.json"}));
    sink.commit();
  }
  return 0;
}

int cmd_reproduce(const std::string& preset, const std::string& system_filter,
                  const std::vector<std::uint64_t>& seed_override,
                  const std::string& out_dir, std::ostream& out) {
  const std::vector<std::string> all_systems = {"temperature", "spring",
                                                "pendulum", "cartpole"};
  std::vector<std::string> systems;
  if (system_filter.empty()) {
    systems = all_systems;
  } else {
    systems = {system_filter};
  }

  ArtifactSink sink(out_dir);
  std::vector<harness::TransferReport> reports;
  std::vector<std::string> artifacts;
  std::string hash_acc;
  std::vector<std::uint64_t> seeds_used;
  for (const auto& system : systems) {
    harness::ExperimentConfig cfg = preset_config(preset, system);
    if (!seed_override.empty()) cfg.seeds = seed_override;
    seeds_used = cfg.seeds;
    hash_acc += cfg::config_hash(cfg);
    out << "running " << preset << " on " << system << " ("
        << cfg.seeds.size() << " seeds)...\n";
    const auto report = harness::run_transfer_experiment(cfg);
    out << harness::report_to_text(report);

    const std::string stem = preset + "-" + system;
    sink.write(stem + "-config.cfg", cfg::emit_config(cfg));
    artifacts.push_back(stem + "-config.cfg");
    sink.write(stem + "-report.json", harness::report_to_json(report));
    artifacts.push_back(stem + "-report.json");
    if (!report.curves.empty()) {
      sink.write(stem + "-curves.csv", harness::curves_to_csv(report));
      artifacts.push_back(stem + "-curves.csv");
    }
    reports.push_back(report);
  }
  sink.write(preset + "-table.csv", harness::table_to_csv(preset, reports));
  artifacts.push_back(preset + "-table.csv");
  sink.write(preset + "-table.json", harness::table_to_json(preset, reports));
  artifacts.push_back(preset + "-table.json");

  std::ostringstream hash;
  hash << std::hex << fnv1a64(hash_acc);
  sink.write(preset + "-manifest.json",
             manifest_json("reproduce " + preset, hash.str(), seeds_used,
                           artifacts));
  sink.commit();
  out << "wrote " << artifacts.size() + 1 << " artifacts under "
      << sink.dir().string() << '\n';
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err) {
  CLI::App app{"control-policy transfer workbench"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  std::string config_path;
  std::string system_override;
  std::vector<std::uint64_t> seeds;
  std::string out_dir = ".";
  if (const char* env = std::getenv("XFERCTL_OUT")) out_dir = env;

  app.add_option("--config", config_path, "experiment config file")
      ->envname("XFERCTL_CONFIG");
  app.add_option("--system", system_override,
                 "system name (temperature, spring, pendulum, cartpole)");
  app.add_option("--seed", seeds, "seed list override")->delimiter(',');
  app.add_option("--out", out_dir, "output directory (default $XFERCTL_OUT or .)");

  auto* simulate = app.add_subcommand("simulate", "roll a policy, dump trajectory CSV");
  simulate->fallthrough();
  std::string policy_path;
  int episodes = 1;
  bool nominal = false;
  simulate->add_option("--policy", policy_path,
                       "policy file; 'zero' for the zero policy; default: "
                       "synthesized per the config family");
  simulate->add_option("--episodes", episodes, "episode count")
      ->check(CLI::PositiveNumber);
  simulate->add_flag("--nominal", nominal, "roll on the nominal (unfaulted) system");

  auto* identify = app.add_subcommand("identify", "fit a linear model from a buffer");
  identify->fallthrough();
  std::string buffer_path;
  std::string target_buffer_path;
  identify->add_option("--buffer", buffer_path, "trajectory file")->required();
  identify->add_option("--target", target_buffer_path,
                       "second trajectory file; also estimate F_A, F_B");

  auto* transfer = app.add_subcommand("transfer", "build and save pi_t");
  transfer->fallthrough();
  std::string source_model;
  std::string target_model;
  std::string fa_spec;
  std::string fb_spec;
  transfer->add_option("--policy", policy_path, "saved source policy")->required();
  transfer->add_option("--source-model", source_model, "source model file")
      ->required();
  transfer->add_option("--target-model", target_model,
                       "target model file (estimates the fault)");
  transfer->add_option("--fa", fa_spec, "known F_A (matrix spec, e.g. 'diag 1.5')");
  transfer->add_option("--fb", fb_spec, "known F_B (matrix spec, e.g. 'diag -1')");

  auto* train = app.add_subcommand("train", "policy-gradient training");
  train->fallthrough();
  bool on_target = false;
  std::string trainable = "all";
  train->add_option("--policy", policy_path, "initial policy (default: fresh)");
  train->add_flag("--on-target", on_target, "train on the faulted system");
  train->add_option("--trainable", trainable,
                    "trainable set: source, source+transform, all");

  auto* evaluate = app.add_subcommand("evaluate", "mean +/- std of a policy");
  evaluate->fallthrough();
  std::string x0_spec;
  bool eval_out = false;
  evaluate->add_option("--policy", policy_path,
                       "policy file or 'zero' (default: synthesized)");
  evaluate->add_flag("--on-target", on_target, "evaluate on the faulted system");
  evaluate->add_option("--x0", x0_spec, "fixed initial state ('const 0' or 'vec ...')");
  evaluate->add_flag("--write", eval_out, "write evaluation.json to --out");

  auto* reproduce = app.add_subcommand("reproduce", "run a named preset");
  reproduce->fallthrough();
  std::string preset;
  reproduce
      ->add_option("--preset", preset,
                   "lqr-table, mpc-table, rl-known-table, rl-identified-table, "
                   "learning-curves")
      ->required();

  std::vector<std::string> argv_storage = args;
  std::vector<char*> argv;
  argv.push_back(const_cast<char*>("xferctl"));
  for (auto& a : argv_storage) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (simulate->parsed()) {
      const auto cfg = load_experiment(config_path, system_override, seeds);
      return cmd_simulate(cfg, policy_path, episodes, nominal, out_dir, out);
    }
    if (identify->parsed()) {
      return cmd_identify(buffer_path, target_buffer_path, out_dir, out);
    }
    if (transfer->parsed()) {
      return cmd_transfer(policy_path, source_model, target_model, fa_spec,
                          fb_spec, out_dir, out);
    }
    if (train->parsed()) {
      const auto cfg = load_experiment(config_path, system_override, seeds);
      return cmd_train(cfg, policy_path, on_target, trainable, out_dir, out);
    }
    if (evaluate->parsed()) {
      const auto cfg = load_experiment(config_path, system_override, seeds);
      return cmd_evaluate(cfg, policy_path, on_target, x0_spec,
                          eval_out ? out_dir : "", out);
    }
    if (reproduce->parsed()) {
      return cmd_reproduce(preset, system_override, seeds, out_dir, out);
    }
    err << "error: no subcommand given\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace xferctl::cli

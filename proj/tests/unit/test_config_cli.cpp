#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "xferctl/cli.hpp"
#include "xferctl/config.hpp"
#include "xferctl/harness.hpp"

using namespace xferctl;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) {
    path = fs::temp_directory_path() / ("xferctl-test-" + name);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

int run_tool(const std::vector<std::string>& args, std::string* out_text = nullptr,
        std::string* err_text = nullptr) {
  std::ostringstream out;
  std::ostringstream err;
  const int status = cli::run_cli(args, out, err);
  if (out_text) *out_text = out.str();
  if (err_text) *err_text = err.str();
  return status;
}

}  // namespace

TEST_CASE("minimal config gets the documented defaults") {
  const auto cfg = cfg::parse_config_text(
      "[system]\nname = temperature\n[controller]\nfamily = lqr\n");
  CHECK(cfg.system == "temperature");
  CHECK(cfg.family == harness::ControllerFamily::lqr);
  CHECK(cfg.dt == 0.01);
  CHECK(cfg.horizon == 500);
  CHECK(cfg.eval_episodes == 20);
  CHECK(cfg.seeds == std::vector<std::uint64_t>{1, 2, 3, 4, 5});
  CHECK(cfg.fault.f_a(0, 0) == 1.5);
  CHECK(cfg.fault.f_b(0, 0) == -1.0);
  CHECK(cfg.id_episodes == 5);
  CHECK(cfg.id_max_interactions == 2500);
  CHECK(cfg.variants.size() == 3);
}

TEST_CASE("unknown sections and keys are rejected with suggestions") {
  try {
    cfg::parse_config_text("[systm]\nname = temperature\n");
    FAIL("expected an exception");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("systm") != std::string::npos);
    CHECK(msg.find("system") != std::string::npos);
  }
  try {
    cfg::parse_config_text("[system]\nnmae = temperature\n");
    FAIL("expected an exception");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("nmae") != std::string::npos);
    CHECK(msg.find("name") != std::string::npos);
  }
  CHECK_THROWS(cfg::parse_config_text("[system]\nname = temperature\nname = x\n"));
}

TEST_CASE("range validation at parse time") {
  CHECK_THROWS(cfg::parse_config_text("[rl]\ndiscount = 1.5\n"));
  CHECK_THROWS(cfg::parse_config_text("[rl]\nclip_ratio = 0\n"));
  CHECK_THROWS(cfg::parse_config_text("[system]\ndt = -0.01\n"));
  CHECK_THROWS(cfg::parse_config_text("[eval]\nepisodes = abc\n"));
}

TEST_CASE("emit -> parse -> emit is a byte-identical fixpoint") {
  for (const char* system : {"temperature", "spring", "pendulum", "cartpole"}) {
    for (const auto family :
         {harness::ControllerFamily::lqr, harness::ControllerFamily::mpc,
          harness::ControllerFamily::rl}) {
      const auto cfg = harness::default_experiment(system, family);
      const std::string once = cfg::emit_config(cfg);
      const auto parsed = cfg::parse_config_text(once);
      CHECK(cfg::emit_config(parsed) == once);
    }
  }
}

TEST_CASE("config hash is stable under key reordering") {
  const std::string a =
      "[system]\nname = spring\ndt = 0.01\n[controller]\nfamily = lqr\n";
  const std::string b =
      "[controller]\nfamily = lqr\n[system]\ndt = 0.01\nname = spring\n";
  CHECK(cfg::config_hash(cfg::parse_config_text(a)) ==
        cfg::config_hash(cfg::parse_config_text(b)));
  const std::string c =
      "[system]\nname = spring\ndt = 0.02\n[controller]\nfamily = lqr\n";
  CHECK(cfg::config_hash(cfg::parse_config_text(a)) !=
        cfg::config_hash(cfg::parse_config_text(c)));
}

TEST_CASE("matrix and vector value syntax") {
  const auto diag = cfg::parse_matrix_spec("diag 1.5", 2);
  CHECK(diag(0, 0) == 1.5);
  CHECK(diag(1, 1) == 1.5);
  CHECK(diag(0, 1) == 0.0);
  const auto full = cfg::parse_matrix_spec("rows 1 2 ; 3 4", 2);
  CHECK(full(1, 0) == 3.0);
  CHECK(cfg::emit_matrix_spec(full) == "rows 1 2 ; 3 4");
  CHECK(cfg::emit_matrix_spec(diag) == "diag 1.5");
  CHECK_THROWS(cfg::parse_matrix_spec("diag 1 2 3", 2));
  CHECK_THROWS(cfg::parse_matrix_spec("banana", 2));

  const auto v = cfg::parse_vector_spec("vec 1 -2", 2);
  CHECK(v(1) == -2.0);
  CHECK(cfg::emit_vector_spec(v) == "vec 1 -2");
  CHECK(cfg::emit_vector_spec(Eigen::VectorXd::Zero(3)) == "const 0");
}

TEST_CASE("cli: evaluate the zero policy at the origin prints zero") {
  std::string out;
  const int status = run_tool({"evaluate", "--system", "temperature", "--policy",
                          "zero", "--x0", "const 0"},
                         &out);
  CHECK(status == 0);
  CHECK(out.find("mean 0 ") != std::string::npos);
}

TEST_CASE("cli: errors exit nonzero with a one-line cause and no artifacts") {
  TempDir dir("ErrorCase");
  std::string err;
  int status = run_tool({"evaluate", "--config", "/nonexistent.cfg"}, nullptr, &err);
  CHECK(status != 0);
  CHECK(err.find("error:") != std::string::npos);

  status = run_tool({"reproduce", "--preset", "bogus-table", "--out",
                dir.path.string()},
               nullptr, &err);
  CHECK(status != 0);
  CHECK(err.find("bogus-table") != std::string::npos);
  CHECK(fs::is_empty(dir.path));

  status = run_tool({"frobnicate"}, nullptr, &err);
  CHECK(status != 0);
}

TEST_CASE("cli: simulate + identify round trip recovers the system") {
  TempDir dir("SimulateIdentify");
  std::string out;
  // noise in the buffer comes from collect; simulate writes a clean rollout,
  // so build the buffer through the library and the CLI identifies it
  const auto spec = dynamics::make_system("temperature");
  sysid::CollectOptions opts;
  opts.exploration_noise_std = 0.5;
  const auto buf = sysid::collect_buffer(
      spec,
      policies::Policy(policies::LinearGainPolicy{Eigen::MatrixXd::Zero(1, 1),
                                                  Eigen::VectorXd::Zero(1)}),
      2, 200, 5, opts);
  const auto buffer_path = dir.path / "buffer.csv";
  buf.write_text_file(buffer_path.string());

  const int status = run_tool({"identify", "--buffer", buffer_path.string(), "--out",
                          (dir.path / "models").string()},
                         &out);
  CHECK(status == 0);
  CHECK(out.find("rank_deficient = false") != std::string::npos);
  const auto model =
      sysid::load_model_file((dir.path / "models" / "model-source.txt").string());
  CHECK(model.a(0, 0) == doctest::Approx(-0.1).epsilon(1e-6));
  CHECK(model.b(0, 0) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("cli: transfer builds pi_t from saved artifacts") {
  TempDir dir("Transfer");
  const auto lin = dynamics::linearize_at_origin(dynamics::make_system("temperature"));
  sysid::save_model_file(lin, (dir.path / "model.txt").string());
  const policies::Policy pi_s{policies::LinearGainPolicy{
      Eigen::MatrixXd::Constant(1, 1, 91.5), Eigen::VectorXd::Zero(1)}};
  policies::save_policy_file(pi_s, (dir.path / "pi_s.txt").string());

  std::string out;
  const int status = run_tool({"transfer", "--policy", (dir.path / "pi_s.txt").string(),
                          "--source-model", (dir.path / "model.txt").string(),
                          "--fa", "diag 2", "--fb", "diag -1", "--out",
                          dir.path.string()},
                         &out);
  CHECK(status == 0);
  const auto pi_t =
      policies::load_policy_file((dir.path / "pi_t.txt").string());
  CHECK(pi_t.as_transformed().mult(0, 0) == doctest::Approx(-1.0));
  CHECK(pi_t.as_transformed().gain_add(0, 0) == doctest::Approx(-0.1));
}

TEST_CASE("cli: reproduce emits byte-identical bodies on re-run") {
  TempDir dir_a("ReproA");
  TempDir dir_b("ReproB");
  for (const auto& dir : {dir_a.path, dir_b.path}) {
    std::string out;
    const int status = run_tool({"reproduce", "--preset", "lqr-table", "--system",
                            "temperature", "--out", dir.string()},
                           &out);
    REQUIRE(status == 0);
  }
  for (const char* name :
       {"lqr-table-table.csv", "lqr-table-table.json",
        "lqr-table-temperature-report.json", "lqr-table-temperature-config.cfg"}) {
    CHECK(slurp(dir_a.path / name) == slurp(dir_b.path / name));
  }
  // the manifest carries a timestamp and is excluded from byte-identity
  CHECK(fs::exists(dir_a.path / "lqr-table-manifest.json"));
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#ifndef HMR_CLI_PATH
#define HMR_CLI_PATH "hmr"
#endif

namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args) {
  const std::string cmd = std::string(HMR_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path scratch() {
  fs::path dir = fs::temp_directory_path() / "hmr_cli_test";
  fs::create_directories(dir);
  return dir;
}

// Desk-scale configuration so the whole pipeline runs in seconds.
fs::path tiny_config() {
  fs::path p = scratch() / "tiny.cfg";
  std::ofstream os(p);
  os << "[env]\nn = 2\nm = 1\nr_full = 2\nseed = 3\n"
     << "[loop]\nplan_horizon = 3\nrollout_horizon = 5\nrollouts_per_iter = 2\n"
     << "buffer_capacity = 6\niterations = 2\n"
     << "[learner]\nepochs = 10\nbatch_size = 8\n"
     << "[experiment]\ncase = custom\ndim_lambda = 1\ntrials = 2\neval_rollouts = 4\n"
     << "mode_count_rollouts = 8\nlemma_rollouts = 2\ndeterministic = true\n";
  return p;
}

}  // namespace

TEST_CASE("help exits cleanly") { CHECK(run_cli("--help") == 0); }

TEST_CASE("config errors exit with code 2") {
  fs::path bad = scratch() / "bad.cfg";
  std::ofstream(bad) << "[env]\nnot_a_key = 1\n";
  CHECK(run_cli("train --config " + bad.string()) == 2);
  CHECK(run_cli("train --config /nonexistent/nope.cfg") == 2);
}

TEST_CASE("generate-env is byte-identical per seed and rejects bad dims") {
  fs::path cfg = tiny_config();
  fs::path e1 = scratch() / "env1.env";
  fs::path e2 = scratch() / "env2.env";
  CHECK(run_cli("generate-env --config " + cfg.string() + " --out-file " + e1.string()) == 0);
  CHECK(run_cli("generate-env --config " + cfg.string() + " --out-file " + e2.string()) == 0);
  CHECK(slurp(e1) == slurp(e2));
  CHECK(!slurp(e1).empty());

  fs::path bad = scratch() / "bad_dims.cfg";
  std::ofstream(bad) << "[env]\nn = 0\n";
  CHECK(run_cli("generate-env --config " + bad.string()) == 2);
}

TEST_CASE("train, evaluate and determinism of artifacts") {
  fs::path cfg = tiny_config();
  fs::path out1 = scratch() / "run1";
  fs::path out2 = scratch() / "run2";
  fs::remove_all(out1);
  fs::remove_all(out2);

  REQUIRE(run_cli("train --config " + cfg.string() + " --out " + out1.string()) == 0);
  CHECK(fs::exists(out1 / "curves.csv"));
  CHECK(fs::exists(out1 / "theta_final.lcs"));
  CHECK(fs::exists(out1 / "theta_iter_0.lcs"));
  CHECK(fs::exists(out1 / "loss_history_iter_0.csv"));
  CHECK(fs::exists(out1 / "summary.json"));
  CHECK(fs::exists(out1 / "trust_region.txt"));
  CHECK(fs::exists(out1 / "environment.env"));
  CHECK(slurp(out1 / "summary.json").find("schema_version") != std::string::npos);

  REQUIRE(run_cli("train --config " + cfg.string() + " --out " + out2.string()) == 0);
  CHECK(slurp(out1 / "summary.json") == slurp(out2 / "summary.json"));
  CHECK(slurp(out1 / "curves.csv") == slurp(out2 / "curves.csv"));
  CHECK(slurp(out1 / "theta_final.lcs") == slurp(out2 / "theta_final.lcs"));

  // evaluate on the stored artifacts
  fs::path eval_out = scratch() / "eval";
  const std::string eval_cmd = "evaluate --config " + cfg.string() + " --env " +
                               (out1 / "environment.env").string() + " --theta " +
                               (out1 / "theta_final.lcs").string() + " --trust-region " +
                               (out1 / "trust_region.txt").string() + " --out " +
                               eval_out.string();
  REQUIRE(run_cli(eval_cmd) == 0);
  CHECK(fs::exists(eval_out / "eval_report.json"));
  CHECK(fs::exists(eval_out / "table.csv"));

  // corrupted theta file -> structured error, not a crash
  fs::path broken = scratch() / "broken.lcs";
  std::ofstream(broken) << "hmr-lcs v1\ndims 2 1 1\nA 2 2\n0.1 0.2\n";
  CHECK(run_cli("evaluate --config " + cfg.string() + " --env " +
                (out1 / "environment.env").string() + " --theta " + broken.string()) == 2);

  // dimension mismatch between theta and environment
  fs::path mismatch_cfg = scratch() / "mismatch.cfg";
  {
    std::ofstream os(mismatch_cfg);
    os << "[env]\nn = 3\nm = 1\nr_full = 2\nseed = 4\n"
       << "[experiment]\ncase = custom\ndim_lambda = 1\n";
  }
  fs::path env3 = scratch() / "env3.env";
  REQUIRE(run_cli("generate-env --config " + mismatch_cfg.string() + " --out-file " +
                  env3.string()) == 0);
  CHECK(run_cli("evaluate --config " + cfg.string() + " --env " + env3.string() + " --theta " +
                (out1 / "theta_final.lcs").string()) != 0);
}

TEST_CASE("table2 aggregates trials and ablation degenerates to train per seed") {
  fs::path cfg = tiny_config();
  fs::path out = scratch() / "table";
  fs::remove_all(out);
  REQUIRE(run_cli("table2 --config " + cfg.string() + " --cases custom --out " + out.string()) ==
          0);
  const std::string table = slurp(out / "table2.csv");
  CHECK(table.find("custom,2,1,2,1,2,") != std::string::npos);  // case,dims...,trials
  CHECK(fs::exists(out / "custom_trial0.json"));
  CHECK(fs::exists(out / "custom_trial1.json"));

  fs::path abl_out = scratch() / "ablation";
  fs::remove_all(abl_out);
  REQUIRE(run_cli("ablation --config " + cfg.string() + " --axis eta --grid 20 --out " +
                  abl_out.string()) == 0);
  const std::string abl = slurp(abl_out / "ablation.csv");
  CHECK(abl.find("eta,20,") != std::string::npos);

  CHECK(run_cli("ablation --config " + cfg.string() + " --axis bogus --grid 1 --out " +
                abl_out.string()) == 2);
}

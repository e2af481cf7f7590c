#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "hmr/config.hpp"
#include "hmr/loop.hpp"
#include "hmr/metrics.hpp"
#include "hmr/parallel.hpp"

namespace fs = std::filesystem;
using namespace hmr;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitPartial = 4;

struct GlobalFlags {
  std::string config_path;
  std::string out_dir = "out";
  std::vector<std::uint64_t> seeds;
  bool deterministic = false;
  int parallel = 0;
};

void add_common(CLI::App* cmd, GlobalFlags& flags, bool with_config = true) {
  if (with_config)
    cmd->add_option("--config", flags.config_path, "config document")->envname("HMR_CONFIG");
  cmd->add_option("--out", flags.out_dir, "output directory")->envname("HMR_OUT");
  cmd->add_option("--seed,--seeds", flags.seeds, "seed or seed list")
      ->delimiter(',')
      ->envname("HMR_SEEDS");
  cmd->add_flag("--deterministic", flags.deterministic, "single-threaded, byte-stable outputs")
      ->envname("HMR_DETERMINISTIC");
  cmd->add_option("--parallel", flags.parallel, "worker thread cap")->envname("HMR_PARALLEL");
}

FullConfig load_config(const GlobalFlags& flags) {
  FullConfig cfg;
  if (!flags.config_path.empty()) cfg = parse_config_file(flags.config_path);
  if (!flags.seeds.empty()) {
    cfg.experiment.seeds = flags.seeds;
    cfg.env.seed = flags.seeds.front();
  }
  if (flags.deterministic) cfg.experiment.deterministic = true;
  if (flags.parallel > 0) cfg.experiment.parallel = flags.parallel;
  return cfg;
}

// Timestamps and wall times stay out of the deterministic outputs.
struct Sidecar {
  std::string dir;
  std::stringstream log;

  void note(const std::string& msg) {
    const auto now = std::chrono::system_clock::now().time_since_epoch();
    log << std::chrono::duration_cast<std::chrono::milliseconds>(now).count() << " " << msg
        << "\n";
  }
  void flush() {
    if (dir.empty()) return;
    std::ofstream os(dir + "/run.log", std::ios::app);
    os << log.str();
    log.str("");
  }
};

void write_timing(const std::string& dir, double wall_seconds, long plans, double plan_seconds,
                  std::vector<double> plan_times = {}) {
  std::ofstream os(dir + "/timing.json");
  os << "{\n  \"wall_seconds\": " << wall_seconds << ",\n  \"plan_count\": " << plans
     << ",\n  \"plans_per_second\": "
     << (plan_seconds > 0.0 ? static_cast<double>(plans) / plan_seconds : 0.0);
  if (!plan_times.empty()) {
    std::sort(plan_times.begin(), plan_times.end());
    auto pct = [&](double q) {
      const std::size_t idx = static_cast<std::size_t>(q * (plan_times.size() - 1));
      return plan_times[idx];
    };
    os << ",\n  \"plan_seconds_p50\": " << pct(0.50) << ",\n  \"plan_seconds_p90\": " << pct(0.90)
       << ",\n  \"plan_seconds_p99\": " << pct(0.99);
  }
  os << "\n}\n";
}

struct TrialResult {
  bool ok = false;
  std::string error;
  EvalReport report;
  double wall_seconds = 0.0;
  long plan_count = 0;
  double plan_seconds = 0.0;
};

// One full study trial: fresh environment, training loop, held-out evaluation.
TrialResult run_trial(FullConfig cfg, std::uint64_t trial_seed, int threads,
                      const std::string& emit_dir) {
  TrialResult out;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    cfg.env.seed = trial_seed;
    Environment env = generate_full_lcs(cfg.env);
    cfg.loop.threads = threads;
    cfg.learner.threads = threads;
    cfg.mpc.lcp_tol = cfg.solvers.lcp_tol;

    QuadCost cost = QuadCost::identity(cfg.env.n, cfg.env.m);
    Rng rng(trial_seed ^ 0x700BAD5EEDULL);
    Rng init_rng = rng.substream(0xEE);
    LcsParams theta0 =
        init_params(cfg.env.n, cfg.env.m, cfg.experiment.dim_lambda, init_rng);

    RunResult res =
        run_loop(env, theta0, cfg.loop, cfg.learner, cost, cfg.mpc, rng, emit_dir);
    if (!emit_dir.empty()) save_lcs(res.state.theta, emit_dir + "/theta_final.lcs");

    EvalConfig ec = cfg.eval_config();
    ec.threads = threads;
    Rng eval_rng = rng.substream(0xE7A1);
    out.report = evaluate(env, res.state.theta, cost, res.final_trust_region, ec, eval_rng,
                          cfg.mpc);
    out.plan_count = res.plan_count;
    out.plan_seconds = res.plan_seconds_total;
    out.ok = true;
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  out.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

void write_summary(const std::string& dir, const EvalReport& rep,
                   const std::vector<IterationRecord>& curves) {
  std::ofstream os(dir + "/summary.json");
  os << "{\n  \"schema_version\": 1,\n  \"iterations\": " << curves.size() << ",\n";
  os << "  \"final_onpolicy_me_pct\": "
     << (curves.empty() ? 0.0 : curves.back().onpolicy_me_pct) << ",\n";
  os << "  \"final_mean_rollout_cost\": "
     << (curves.empty() ? 0.0 : curves.back().mean_rollout_cost) << ",\n";
  os << "  \"eval\": ";
  std::stringstream rep_ss;
  write_eval_report_json(rep, rep_ss);
  std::string rep_str = rep_ss.str();
  // indent the nested object
  std::string indented;
  for (char ch : rep_str) {
    indented += ch;
    if (ch == '\n') indented += "  ";
  }
  while (!indented.empty() && (indented.back() == ' ' || indented.back() == '\n'))
    indented.pop_back();
  os << indented << "\n}\n";
}

int cmd_generate_env(const GlobalFlags& flags, const std::string& out_path) {
  FullConfig cfg = load_config(flags);
  Environment env = generate_full_lcs(cfg.env);
  if (!out_path.empty()) {
    fs::path p(out_path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    save_env(env, out_path);
  }
  // screening census for the printed summary
  Environment census = env.clone_fresh();
  Rng rng(cfg.env.seed ^ 0xCE9505ULL);
  for (int ro = 0; ro < 20; ++ro) {
    Vec x = sample_x0(cfg.env, rng);
    for (int t = 0; t < cfg.loop.rollout_horizon; ++t) {
      StepResult s;
      try {
        s = census.step(x, random_policy(cfg.env, rng));
      } catch (const std::exception&) {
        break;
      }
      if (s.x_next.norm() > cfg.loop.explosion_bound) break;
      x = s.x_next;
    }
  }
  Eigen::EigenSolver<Mat> es(env.theta().A(), false);
  std::cout << "environment: n=" << env.theta().n() << " m=" << env.theta().m()
            << " dim_Lambda=" << env.theta().r() << "\n"
            << "spectral radius of A: " << es.eigenvalues().cwiseAbs().maxCoeff() << "\n"
            << "lambda coupling rescale: " << env.c_rescale() << "\n"
            << "attempts used: " << env.attempts_used() << "\n"
            << "distinct modes in 20 screening rollouts: " << census.distinct_modes_logged()
            << "\n";
  if (!out_path.empty()) std::cout << "written: " << out_path << "\n";
  return kExitOk;
}

int cmd_train(const GlobalFlags& flags, const std::string& env_path) {
  FullConfig cfg = load_config(flags);
  fs::create_directories(flags.out_dir);
  Sidecar sidecar{flags.out_dir, {}};
  sidecar.note("train start");

  const int threads = cfg.threads();
  const auto t0 = std::chrono::steady_clock::now();

  Environment env = env_path.empty() ? generate_full_lcs(cfg.env) : load_env(env_path);
  if (!env_path.empty()) {
    // config dims must agree with the environment on disk
    cfg.env = env.config();
  }
  cfg.loop.threads = threads;
  cfg.learner.threads = threads;
  cfg.mpc.lcp_tol = cfg.solvers.lcp_tol;

  QuadCost cost = QuadCost::identity(cfg.env.n, cfg.env.m);
  const std::uint64_t seed = cfg.trial_seeds().front();
  Rng rng(seed ^ 0x700BAD5EEDULL);
  Rng init_rng = rng.substream(0xEE);
  LcsParams theta0 = init_params(cfg.env.n, cfg.env.m, cfg.experiment.dim_lambda, init_rng);

  RunResult res = run_loop(env, theta0, cfg.loop, cfg.learner, cost, cfg.mpc, rng, flags.out_dir);
  save_lcs(res.state.theta, flags.out_dir + "/theta_final.lcs");
  save_env(env, flags.out_dir + "/environment.env");
  save_trust_region(res.final_trust_region, flags.out_dir + "/trust_region.txt");

  EvalConfig ec = cfg.eval_config();
  ec.threads = threads;
  Rng eval_rng = rng.substream(0xE7A1);
  EvalReport rep =
      evaluate(env, res.state.theta, cost, res.final_trust_region, ec, eval_rng, cfg.mpc);
  write_summary(flags.out_dir, rep, res.state.curves);

  // per-run exports: mode-signature log, an example closed-loop trajectory
  // and its per-step planning log
  {
    std::ofstream os(flags.out_dir + "/signature_log.csv");
    write_signature_log_csv(env, os);
  }
  if (res.state.buffer.size() > 0) {
    const Rollout& last = res.state.buffer.rollouts().back();
    std::ofstream traj(flags.out_dir + "/example_rollout.csv");
    write_trajectory_csv(last.traj, traj);
    std::ofstream plog(flags.out_dir + "/plan_log.csv");
    write_plan_log_csv(last, plog);
  }

  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::vector<double> plan_times;
  for (const Rollout& r : res.state.buffer.rollouts())
    for (const PlanStepLog& l : r.plan_log) plan_times.push_back(l.seconds);
  write_timing(flags.out_dir, wall, res.plan_count, res.plan_seconds_total,
               std::move(plan_times));
  const double rate =
      res.plan_seconds_total > 0.0 ? res.plan_count / res.plan_seconds_total : 0.0;
  std::cout << "iterations: " << res.state.curves.size() << "\n"
            << "final on-policy model error: " << rep.onpolicy_me_pct << " %\n"
            << "performance gap: " << rep.gap_pct << " %\n"
            << "modes in reduced model: " << rep.modes_in_g << "\n"
            << "planning rate: " << rate << " plans/s\n"
            << "outputs in " << flags.out_dir << "\n";
  sidecar.note("train done");
  sidecar.flush();
  return kExitOk;
}

int cmd_evaluate(const GlobalFlags& flags, const std::string& env_path,
                 const std::string& theta_path, const std::string& tr_path) {
  FullConfig cfg = load_config(flags);
  Environment env = load_env(env_path);
  LcsParams theta = load_lcs(theta_path);
  if (theta.n() != env.theta().n() || theta.m() != env.theta().m())
    throw DimensionError("evaluate: theta dims disagree with environment");
  cfg.env = env.config();
  cfg.mpc.lcp_tol = cfg.solvers.lcp_tol;
  fs::create_directories(flags.out_dir);

  // Use the trained trust region when supplied; fall back to the wide
  // random-policy box otherwise.
  TrustRegion tr = tr_path.empty()
                       ? TrustRegion::from_box(env.theta().m(), cfg.experiment.fmpc_box_lo,
                                               cfg.experiment.fmpc_box_hi)
                       : load_trust_region(tr_path);
  EvalConfig ec = cfg.eval_config();
  const std::uint64_t seed = cfg.trial_seeds().front();
  Rng eval_rng = Rng(seed ^ 0x700BAD5EEDULL).substream(0xE7A1);
  EvalReport rep = evaluate(env, theta, QuadCost::identity(env.theta().n(), env.theta().m()),
                            tr, ec, eval_rng, cfg.mpc);
  {
    std::ofstream os(flags.out_dir + "/eval_report.json");
    write_eval_report_json(rep, os);
  }
  {
    std::ofstream os(flags.out_dir + "/table.csv");
    write_table_csv_header(os);
    write_table_csv_row(cfg.experiment.case_name, env.theta().n(), env.theta().m(),
                        env.theta().r(), theta.r(), {rep}, os);
  }
  std::cout << "on-policy model error: " << rep.onpolicy_me_pct << " %\n"
            << "performance gap: " << rep.gap_pct << " %\n"
            << "outputs in " << flags.out_dir << "\n";
  return kExitOk;
}

struct CaseOutcome {
  std::string name;
  std::vector<EvalReport> reports;
  int failed_trials = 0;
  int total_trials = 0;
};

int run_cases(const GlobalFlags& flags, const std::vector<std::string>& case_names,
              const char* table_name) {
  FullConfig base = load_config(flags);
  fs::create_directories(flags.out_dir);
  Sidecar sidecar{flags.out_dir, {}};

  const int threads = base.threads();
  std::vector<CaseOutcome> outcomes;
  double wall_total = 0.0;

  for (const std::string& name : case_names) {
    FullConfig cfg = base;
    apply_case_preset(cfg, name);
    const std::vector<std::uint64_t> seeds = cfg.trial_seeds();

    CaseOutcome outcome;
    outcome.name = name;
    outcome.total_trials = static_cast<int>(seeds.size());
    std::vector<TrialResult> trials(seeds.size());

    // Fan trials out across workers; each trial then runs single-threaded.
    const bool fan_out = threads > 1 && seeds.size() > 1;
    const int inner_threads = fan_out ? 1 : threads;
    parallel_chunks(seeds.size(), fan_out ? threads : 1,
                    [&](std::size_t lo, std::size_t hi, std::size_t) {
                      for (std::size_t i = lo; i < hi; ++i)
                        trials[i] = run_trial(cfg, seeds[i], inner_threads, "");
                    });

    for (std::size_t i = 0; i < trials.size(); ++i) {
      wall_total += trials[i].wall_seconds;
      if (trials[i].ok) {
        outcome.reports.push_back(trials[i].report);
        std::ofstream os(flags.out_dir + "/" + name + "_trial" + std::to_string(i) + ".json");
        write_eval_report_json(trials[i].report, os);
      } else {
        ++outcome.failed_trials;
        sidecar.note(name + " trial " + std::to_string(i) + " failed: " + trials[i].error);
        std::cerr << name << " trial " << i << " failed: " << trials[i].error << "\n";
      }
    }
    outcomes.push_back(std::move(outcome));
  }

  std::ofstream os(flags.out_dir + "/" + table_name);
  write_table_csv_header(os);
  bool partial = false, fatal = false;
  for (const CaseOutcome& outcome : outcomes) {
    FullConfig cfg = base;
    apply_case_preset(cfg, outcome.name);
    if (outcome.reports.empty() ||
        outcome.reports.size() * 10 < static_cast<std::size_t>(outcome.total_trials) * 7) {
      fatal = true;
      continue;
    }
    if (outcome.failed_trials > 0) partial = true;
    write_table_csv_row(outcome.name, cfg.env.n, cfg.env.m, cfg.env.r_full,
                        cfg.experiment.dim_lambda, outcome.reports, os);
  }
  sidecar.flush();
  write_timing(flags.out_dir, wall_total, 0, 0.0);
  std::cout << "aggregate written to " << flags.out_dir << "/" << table_name << "\n";
  if (fatal) return kExitNumerical;
  return partial ? kExitPartial : kExitOk;
}

int cmd_ablation(const GlobalFlags& flags, const std::string& axis,
                 const std::vector<double>& grid) {
  FullConfig base = load_config(flags);
  fs::create_directories(flags.out_dir);
  const int threads = base.threads();

  std::ofstream os(flags.out_dir + "/ablation.csv");
  os << "axis,value,trials,onpolicy_me_pct_mean,onpolicy_me_pct_std,gap_pct_mean,gap_pct_std\n";
  bool partial = false, fatal = false;

  for (double value : grid) {
    FullConfig cfg = base;
    if (axis == "T")
      cfg.loop.plan_horizon = static_cast<int>(value);
    else if (axis == "r_new")
      cfg.loop.rollouts_per_iter = static_cast<int>(value);
    else if (axis == "r_buffer")
      cfg.loop.buffer_capacity = static_cast<int>(value);
    else if (axis == "eta")
      cfg.loop.eta = value;
    else
      throw ConfigError("ablation: unknown axis '" + axis + "' (T, r_new, r_buffer, eta)");
    cfg.loop.validate();

    const std::vector<std::uint64_t> seeds = cfg.trial_seeds();
    std::vector<TrialResult> trials(seeds.size());
    const bool fan_out = threads > 1 && seeds.size() > 1;
    const int inner_threads = fan_out ? 1 : threads;
    parallel_chunks(seeds.size(), fan_out ? threads : 1,
                    [&](std::size_t lo, std::size_t hi, std::size_t) {
                      for (std::size_t i = lo; i < hi; ++i)
                        trials[i] = run_trial(cfg, seeds[i], inner_threads, "");
                    });

    std::vector<double> me, gap;
    int failed = 0;
    for (const TrialResult& t : trials) {
      if (!t.ok) {
        ++failed;
        std::cerr << "ablation " << axis << "=" << value << " trial failed: " << t.error << "\n";
        continue;
      }
      me.push_back(t.report.onpolicy_me_pct);
      gap.push_back(t.report.gap_pct);
    }
    if (me.empty() || me.size() * 10 < seeds.size() * 7) {
      fatal = true;
      continue;
    }
    if (failed > 0) partial = true;
    const Aggregate am = aggregate(me), ag = aggregate(gap);
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%s,%.10g,%zu,%.10g,%.10g,%.10g,%.10g\n", axis.c_str(), value,
                  me.size(), am.mean, am.stddev, ag.mean, ag.stddev);
    os << buf;
  }
  std::cout << "ablation written to " << flags.out_dir << "/ablation.csv\n";
  if (fatal) return kExitNumerical;
  return partial ? kExitPartial : kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"task-driven reduction of linear complementarity systems"};
  app.require_subcommand(1);

  GlobalFlags gen_flags, train_flags, eval_flags, table_flags, abl_flags;
  std::string gen_out = "environment.env";
  std::string train_env_path;
  std::string eval_env_path, eval_theta_path, eval_tr_path;
  std::vector<std::string> table_cases = {"case1"};
  std::string abl_axis;
  std::vector<double> abl_grid;

  CLI::App* gen = app.add_subcommand("generate-env", "draw and store a full-order system");
  add_common(gen, gen_flags);
  gen->add_option("--out-file", gen_out, "environment file path");

  CLI::App* train = app.add_subcommand("train", "run the reduction loop end to end");
  add_common(train, train_flags);
  train->add_option("--env", train_env_path, "pre-generated environment file");

  CLI::App* eval = app.add_subcommand("evaluate", "held-out evaluation of a stored model");
  add_common(eval, eval_flags);
  eval->add_option("--env", eval_env_path, "environment file")->required();
  eval->add_option("--theta", eval_theta_path, "model checkpoint")->required();
  eval->add_option("--trust-region", eval_tr_path, "trained trust region file");

  CLI::App* table = app.add_subcommand("table2", "multi-trial study across case presets");
  add_common(table, table_flags);
  table->add_option("--cases", table_cases, "case presets, e.g. case1,case3")->delimiter(',');

  CLI::App* abl = app.add_subcommand("ablation", "hyperparameter sweep on one axis");
  add_common(abl, abl_flags);
  abl->add_option("--axis", abl_axis, "one of: T, r_new, r_buffer, eta")->required();
  abl->add_option("--grid", abl_grid, "axis values")->delimiter(',')->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_generate_env(gen_flags, gen_out);
    if (train->parsed()) return cmd_train(train_flags, train_env_path);
    if (eval->parsed()) return cmd_evaluate(eval_flags, eval_env_path, eval_theta_path, eval_tr_path);
    if (table->parsed()) return run_cases(table_flags, table_cases, "table2.csv");
    if (abl->parsed()) return cmd_ablation(abl_flags, abl_axis, abl_grid);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
  return kExitOk;
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "hmr/metrics.hpp"
#include "test_util.hpp"

using namespace hmr;

namespace {

Environment small_env(std::uint64_t seed) {
  EnvConfig cfg;
  cfg.n = 2;
  cfg.m = 1;
  cfg.r_full = 2;
  cfg.seed = seed;
  return generate_full_lcs(cfg);
}

Rollout make_rollout(const LcsParams& theta, const Vec& x0, const std::vector<Vec>& u_seq) {
  Rollout r;
  r.traj = lcs_rollout(theta, x0, u_seq, 1e-10);
  for (std::size_t t = 0; t < u_seq.size(); ++t)
    r.model_lambdas.push_back(r.traj.lambdas[t]);
  return r;
}

}  // namespace

TEST_CASE("relative model error zero for the true model") {
  Environment env = small_env(3);
  Rng rng(5);
  std::vector<DataPoint> data;
  Vec x = sample_x0(env.config(), rng);
  for (int t = 0; t < 10; ++t) {
    Vec u = random_policy(env.config(), rng);
    StepResult s = env.step(x, u);
    data.push_back({x, u, s.x_next});
    x = s.x_next;
  }
  CHECK(relative_model_error(env.theta(), data) == doctest::Approx(0.0).epsilon(1e-10));
}

TEST_CASE("relative model error ratio arithmetic") {
  // g predicts 2 f: error ||f||^2 / (||f||^2 + 1e-6) -> ~100 percent.
  Mat A = Mat::Zero(1, 1);
  LcsParams theta(A, Mat::Zero(1, 1), Mat::Zero(1, 1), Vec::Constant(1, 6.0), Mat::Zero(1, 1),
                  Mat::Zero(1, 1), Mat::Identity(1, 1), Mat::Zero(1, 1), Vec::Ones(1));
  // theta predicts x_next = 6; the recorded truth is 3; error = 9, ||f||^2 = 9
  std::vector<DataPoint> data = {{Vec::Zero(1), Vec::Zero(1), Vec::Constant(1, 3.0)}};
  CHECK(relative_model_error(theta, data) == doctest::Approx(100.0).epsilon(1e-6));
}

TEST_CASE("relative model error invariant to order and duplication") {
  Environment env = small_env(7);
  Rng rng(9);
  std::vector<DataPoint> data;
  Vec x = sample_x0(env.config(), rng);
  for (int t = 0; t < 6; ++t) {
    Vec u = random_policy(env.config(), rng);
    StepResult s = env.step(x, u);
    Vec noisy = s.x_next + rng.uniform_vec(2, -0.1, 0.1);
    data.push_back({x, u, noisy});
    x = s.x_next;
  }
  Rng init(1);
  LcsParams theta = init_params(2, 1, 2, init);
  const double base = relative_model_error(theta, data);
  std::vector<DataPoint> reversed(data.rbegin(), data.rend());
  CHECK(relative_model_error(theta, reversed) == doctest::Approx(base));
  std::vector<DataPoint> doubled = data;
  doubled.insert(doubled.end(), data.begin(), data.end());
  CHECK(relative_model_error(theta, doubled) == doctest::Approx(base));
}

TEST_CASE("rollout cost conventions") {
  // all-zero trajectory costs zero
  Rollout zero;
  zero.traj.states.assign(4, Vec::Zero(1));
  zero.traj.inputs.assign(3, Vec::Zero(1));
  QuadCost cost = QuadCost::identity(1, 1);
  CHECK(rollout_cost(zero, cost) == 0.0);

  // x_t = 1 for t=0..H, u = 0: running sum H+1 plus terminal 1 -> H+2
  const int H = 5;
  Rollout ones;
  ones.traj.states.assign(H + 1, Vec::Ones(1));
  ones.traj.inputs.assign(H, Vec::Zero(1));
  CHECK(rollout_cost(ones, cost) == doctest::Approx(H + 2.0));
  CHECK(rollout_cost_stage_only(ones, cost) == doctest::Approx(H + 1.0));
}

TEST_CASE("rollout cost equals independent recomputation from csv export") {
  Environment env = small_env(11);
  Rng rng(13);
  Vec x0 = sample_x0(env.config(), rng);
  std::vector<Vec> u;
  for (int t = 0; t < 8; ++t) u.push_back(random_policy(env.config(), rng));
  Rollout r = make_rollout(env.theta(), x0, u);
  QuadCost cost = QuadCost::identity(2, 1);
  const double direct = rollout_cost(r, cost);

  std::stringstream csv;
  write_trajectory_csv(r.traj, csv);
  std::string line;
  std::getline(csv, line);  // header
  double resum = 0.0;
  std::vector<std::vector<double>> rows;
  while (std::getline(csv, line)) {
    std::vector<double> vals;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
      if (!cell.empty() && cell.find_first_not_of("0123456789.eE+-") == std::string::npos) {
        try {
          vals.push_back(std::stod(cell));
        } catch (...) {
          vals.push_back(0.0);
        }
      } else {
        vals.push_back(std::numeric_limits<double>::quiet_NaN());
      }
    }
    rows.push_back(vals);
  }
  // columns: t, x0, x1, u0, lambda0, lambda1, signature
  for (std::size_t k = 0; k < rows.size(); ++k) {
    resum += rows[k][1] * rows[k][1] + rows[k][2] * rows[k][2];
    if (k + 1 < rows.size()) resum += rows[k][3] * rows[k][3];
  }
  resum += rows.back()[1] * rows.back()[1] + rows.back()[2] * rows.back()[2];
  CHECK(resum == doctest::Approx(direct).epsilon(1e-9));
}

TEST_CASE("performance gap formula and degenerate baseline") {
  CHECK(performance_gap(5.0, 5.0) == 0.0);
  CHECK(performance_gap(1.05 * 7.0, 7.0) == doctest::Approx(5.0));
  CHECK(performance_gap(3.0, 4.0) < 0.0);
  CHECK_THROWS_AS(performance_gap(1.0, 0.0), DegenerateBaselineError);
}

TEST_CASE("f-mpc baseline on a single affine mode matches riccati receding oracle") {
  // c = 1 keeps lambda at zero: the environment is plain affine.
  Mat A(2, 2);
  A << 0.85, 0.1, -0.05, 0.9;
  Mat B(2, 1);
  B << 0.4, 0.8;
  Vec d(2);
  d << 0.05, -0.1;
  LcsParams affine(A, B, Mat::Zero(2, 1), d, Mat::Zero(1, 2), Mat::Zero(1, 1),
                   Mat::Identity(1, 1), Mat::Zero(1, 1), Vec::Ones(1));
  EnvConfig cfg;
  cfg.n = 2;
  cfg.m = 1;
  cfg.r_full = 1;
  Environment env(affine, cfg, 1.0, 1);
  QuadCost cost = QuadCost::identity(2, 1);

  Rng rng(17);
  std::vector<Vec> x0s = {sample_x0(cfg, rng), sample_x0(cfg, rng)};
  const int T = 4, H = 6;
  PlannerOptions opts;
  opts.nlp_tol = 1e-6;
  BaselineResult base = f_mpc_baseline(env, cost, x0s, T, H, opts, -50.0, 50.0);

  // receding Riccati oracle: plan affine LQR from the true state, apply u0
  double oracle_mean = 0.0;
  for (const Vec& x0 : x0s) {
    Vec x = x0;
    std::vector<Vec> applied;
    for (int k = 0; k < H; ++k) {
      auto sol = testing::riccati_affine(A, B, d, cost.Q, cost.R, cost.Q_T, x, T);
      applied.push_back(sol.inputs[0]);
      x = A * x + B * sol.inputs[0] + d;
    }
    Rollout r = make_rollout(affine, x0, applied);
    oracle_mean += rollout_cost(r, cost);
  }
  oracle_mean /= 2.0;
  CHECK(base.mean_cost == doctest::Approx(oracle_mean).epsilon(1e-3));
}

TEST_CASE("lemma diagnostics vanish when the models coincide") {
  Environment env = small_env(19);
  Rng rng(21);
  std::vector<Rollout> rollouts;
  for (int k = 0; k < 3; ++k) {
    Vec x0 = sample_x0(env.config(), rng);
    std::vector<Vec> u;
    for (int t = 0; t < 6; ++t) u.push_back(random_policy(env.config(), rng));
    rollouts.push_back(make_rollout(env.theta(), x0, u));
  }
  LemmaDiagnostics d = lemma_diagnostics(env.theta(), env, rollouts, 1e-4);
  CHECK(d.zeroth < 1e-6);
  CHECK(d.first < 1e-6);
  CHECK(d.rollouts_used == 3);
}

TEST_CASE("lemma zeroth order matches the analytic affine difference") {
  // Scale A by 1.1 in a single-mode region: the trajectory difference is the
  // closed-form affine rollout difference.
  Mat A(2, 2);
  A << 0.7, 0.05, -0.1, 0.8;
  Mat B(2, 1);
  B << 0.5, 0.2;
  Vec d(2);
  d << 0.1, 0.0;
  LcsParams truth(A, B, Mat::Zero(2, 1), d, Mat::Zero(1, 2), Mat::Zero(1, 1), Mat::Identity(1, 1),
                  Mat::Zero(1, 1), Vec::Ones(1));
  LcsParams scaled(1.1 * A, B, Mat::Zero(2, 1), d, Mat::Zero(1, 2), Mat::Zero(1, 1),
                   Mat::Identity(1, 1), Mat::Zero(1, 1), Vec::Ones(1));
  EnvConfig cfg;
  cfg.n = 2;
  cfg.m = 1;
  cfg.r_full = 1;
  Environment env(truth, cfg, 1.0, 1);

  Rng rng(23);
  Vec x0 = sample_x0(cfg, rng);
  std::vector<Vec> u;
  for (int t = 0; t < 5; ++t) u.push_back(random_policy(cfg, rng));
  std::vector<Rollout> rollouts = {make_rollout(truth, x0, u)};
  LemmaDiagnostics diag = lemma_diagnostics(scaled, env, rollouts, 1e-4);

  // closed form: stack the difference of the two affine rollouts
  Vec xt = x0, xs = x0;
  double acc = 0.0;
  for (int t = 0; t < 5; ++t) {
    xt = A * xt + B * u[static_cast<size_t>(t)] + d;
    xs = 1.1 * A * xs + B * u[static_cast<size_t>(t)] + d;
    acc += (xt - xs).squaredNorm();
  }
  CHECK(diag.zeroth == doctest::Approx(std::sqrt(acc)).epsilon(1e-8));
}

TEST_CASE("aggregate mean and population std") {
  Aggregate a = aggregate({1.0, 3.0});
  CHECK(a.mean == doctest::Approx(2.0));
  CHECK(a.stddev == doctest::Approx(1.0));
  CHECK(a.count == 2);
}

TEST_CASE("eval report json and table csv") {
  EvalReport r;
  r.random_modes_in_f = 150;
  r.gap_pct = 1.25;
  std::stringstream js;
  write_eval_report_json(r, js);
  CHECK(js.str().find("\"schema_version\": 1") != std::string::npos);
  CHECK(js.str().find("\"random_modes_in_f\": 150") != std::string::npos);

  std::stringstream tab;
  write_table_csv_header(tab);
  write_table_csv_row("case1", 6, 2, 8, 3, {r, r}, tab);
  std::string header;
  std::getline(tab, header);
  CHECK(header.find("gap_pct_mean") != std::string::npos);
  std::string row;
  std::getline(tab, row);
  CHECK(row.substr(0, 6) == "case1,");
}

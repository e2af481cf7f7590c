#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "hmr/metrics.hpp"
#include "hmr/mpc.hpp"
#include "test_util.hpp"

using namespace hmr;

namespace {

// Scalar LCS with a genuine kink: lambda = max(0, -(Dx + Eu + c))/F feeds
// back into the state.
LcsParams scalar_lcs() {
  Mat A(1, 1), B(1, 1), C(1, 1), D(1, 1), E(1, 1), G(1, 1), H(1, 1);
  A << 1.1;
  B << 1.0;
  C << 0.8;
  D << 1.0;
  E << 0.3;
  G << 1.0;  // F = 1
  H << 0.0;
  Vec d = Vec::Constant(1, 0.2), c = Vec::Constant(1, -0.5);
  return LcsParams(A, B, C, d, D, E, G, H, c);
}

LcsParams linear_lcs(Index n, Index m, Rng& rng) {
  // C = 0 and c = 1 so the complementarity never couples into the dynamics.
  Mat A = rng.uniform_mat(n, n, -0.4, 0.4);
  Mat B = rng.uniform_mat(n, m, -1.0, 1.0);
  Vec d = rng.uniform_vec(n, -0.3, 0.3);
  return LcsParams(A, B, Mat::Zero(n, 1), d, Mat::Zero(1, n), Mat::Zero(1, m),
                   Mat::Identity(1, 1), Mat::Zero(1, 1), Vec::Ones(1));
}

}  // namespace

TEST_CASE("zero-width trust region pins every input to the center") {
  LcsParams theta = scalar_lcs();
  Vec center = Vec::Constant(1, 0.7);
  TrustRegion tr(center, Vec::Zero(1));
  QuadCost cost = QuadCost::identity(1, 1);
  MpcPlan p = plan(theta, Vec::Constant(1, 2.0), cost, tr, 4);
  for (const Vec& u : p.inputs) CHECK(u(0) == 0.7);

  // predicted states equal the open-loop rollout under the constant input,
  // within the transcription's dynamics tolerance
  std::vector<Vec> useq(4, center);
  Trajectory traj = lcs_rollout(theta, Vec::Constant(1, 2.0), useq, 1e-10);
  for (int t = 0; t <= 4; ++t)
    CHECK(p.states[static_cast<size_t>(t)](0) ==
          doctest::Approx(traj.states[static_cast<size_t>(t)](0)).epsilon(1e-3));
}

TEST_CASE("linear case matches the Riccati recursion") {
  Rng rng(3);
  LcsParams theta = linear_lcs(2, 1, rng);
  Vec x0(2);
  x0 << 1.5, -0.5;
  QuadCost cost = QuadCost::identity(2, 1);
  const int T = 2;
  auto oracle =
      testing::riccati_affine(theta.A(), theta.B(), theta.d(), cost.Q, cost.R, cost.Q_T, x0, T);

  TrustRegion wide = TrustRegion::from_box(1, -50.0, 50.0);
  PlannerOptions opts;
  opts.nlp_tol = 1e-6;
  MpcPlan p = plan(theta, x0, cost, wide, T, opts);
  CHECK(p.objective == doctest::Approx(oracle.objective).epsilon(1e-4));
  CHECK(std::abs(p.inputs[0](0) - oracle.inputs[0](0)) < 1e-3);
  CHECK_FALSE(p.degraded);
}

TEST_CASE("scalar plan within 1 percent of the exhaustive grid optimum") {
  LcsParams theta = scalar_lcs();
  QuadCost cost = QuadCost::identity(1, 1);
  Vec x0 = Vec::Constant(1, 2.0);
  const int T = 3;
  TrustRegion tr = TrustRegion::from_box(1, -4.0, 4.0);
  const double grid = testing::grid_plan_optimum(theta, x0, cost, -4.0, 4.0, T, 1e-3);
  MpcPlan p = plan(theta, x0, cost, tr, T);
  CHECK(p.objective <= grid + 0.01 * std::abs(grid) + 1e-9);
  // re-simulating the planned inputs reproduces the predicted objective
  Trajectory sim = lcs_rollout(theta, x0, p.inputs, 1e-10);
  double j = 0.0;
  for (int t = 0; t < T; ++t) j += cost.stage(sim.states[static_cast<size_t>(t)], p.inputs[static_cast<size_t>(t)]);
  j += cost.terminal(sim.states.back());
  CHECK(j == doctest::Approx(p.objective).epsilon(1e-3));
}

TEST_CASE("plan-vs-simulate consistency at tight relaxation") {
  Rng rng(7);
  LcsParams theta = testing::random_lcs(3, 2, 2, rng, 0.5);
  Vec x0 = rng.uniform_vec(3, -2.0, 2.0);
  QuadCost cost = QuadCost::identity(3, 2);
  TrustRegion tr = TrustRegion::from_box(2, -5.0, 5.0);
  PlannerOptions opts;
  MpcPlan p = plan(theta, x0, cost, tr, 5, opts);
  REQUIRE(p.sigma_final <= 1e-6);
  Trajectory sim = lcs_rollout(theta, x0, p.inputs, 1e-10);
  for (std::size_t t = 0; t < p.states.size(); ++t)
    CHECK((p.states[t] - sim.states[t]).lpNorm<Eigen::Infinity>() < 10.0 * 10.0 * opts.nlp_tol);
}

TEST_CASE("receding rollout with horizon 1 applies exactly the plan's first input") {
  EnvConfig cfg;
  cfg.n = 2;
  cfg.m = 1;
  cfg.r_full = 2;
  cfg.seed = 5;
  Environment env = generate_full_lcs(cfg);
  QuadCost cost = QuadCost::identity(2, 1);
  TrustRegion tr = TrustRegion::from_box(1, -3.0, 3.0);
  Vec x0(2);
  x0 << 1.0, -1.0;
  Rollout r = receding_rollout(env, env.theta(), cost, tr, 1, 3, x0);
  REQUIRE(r.traj.inputs.size() == 1);
  MpcPlan p = plan(env.theta(), x0, cost, tr, 3);
  CHECK(r.traj.inputs[0](0) == p.inputs[0](0));
}

TEST_CASE("perfect model: realized cost tracks predicted cost") {
  EnvConfig cfg;
  cfg.n = 2;
  cfg.m = 1;
  cfg.r_full = 2;
  cfg.seed = 9;
  Environment env = generate_full_lcs(cfg);
  QuadCost cost = QuadCost::identity(2, 1);
  TrustRegion tr = TrustRegion::from_box(1, -8.0, 8.0);
  Vec x0(2);
  x0 << 2.0, 1.0;
  const int H = 6, T = 6;
  Rollout r = receding_rollout(env, env.theta(), cost, tr, H, T, x0);
  REQUIRE_FALSE(r.aborted);
  // With theta_g == theta_f and the plan horizon covering the episode, the
  // first plan's predicted cost matches the realized cost of the executed
  // closed loop, measured in the plan's own convention.
  double realized = 0.0;
  for (int t = 0; t < H; ++t)
    realized += cost.stage(r.traj.states[static_cast<size_t>(t)],
                           r.traj.inputs[static_cast<size_t>(t)]);
  realized += cost.terminal(r.traj.states.back());
  CHECK(realized == doctest::Approx(r.plan_log.front().objective).epsilon(1e-2));
}

TEST_CASE("scalar receding rollout within 2 percent of grid receding oracle") {
  LcsParams theta = scalar_lcs();
  EnvConfig cfg;
  cfg.n = 1;
  cfg.m = 1;
  cfg.r_full = 1;
  Environment env(theta, cfg, 1.0, 1);
  QuadCost cost = QuadCost::identity(1, 1);
  TrustRegion tr = TrustRegion::from_box(1, -4.0, 4.0);
  const int H = 5, T = 3;
  Vec x0 = Vec::Constant(1, 2.0);
  Rollout r = receding_rollout(env, theta, cost, tr, H, T, x0);
  REQUIRE_FALSE(r.aborted);
  const double realized = rollout_cost(r, cost);

  // grid oracle applied at every receding step
  Vec x = x0;
  std::vector<Vec> applied;
  for (int k = 0; k < H; ++k) {
    double best_u = 0.0, best_j = std::numeric_limits<double>::infinity();
    for (int pass = 0; pass < 2; ++pass) {
      const double lo = pass == 0 ? -4.0 : best_u - 0.2;
      const double hi = pass == 0 ? 4.0 : best_u + 0.2;
      const int N = 81;
      for (int i = 0; i < N; ++i) {
        const double u0 = lo + (hi - lo) * i / (N - 1);
        // refine the remaining inputs by the library planner from the
        // successor state to keep the oracle exhaustive only in u0
        Vec xs = x;
        double j = 0.0;
        Vec uv = Vec::Constant(1, std::clamp(u0, -4.0, 4.0));
        j += cost.stage(xs, uv);
        StepResult s = lcs_step(theta, xs, uv, 1e-10);
        xs = s.x_next;
        const double tail =
            testing::grid_plan_optimum(theta, xs, cost, -4.0, 4.0, T - 1, 1e-3);
        // tail includes stage at xs onward plus terminal
        j += tail;
        if (j < best_j) {
          best_j = j;
          best_u = uv(0);
        }
      }
    }
    Vec uv = Vec::Constant(1, best_u);
    applied.push_back(uv);
    x = lcs_step(theta, x, uv, 1e-10).x_next;
  }
  Trajectory oracle_traj = lcs_rollout(theta, x0, applied, 1e-10);
  Rollout oracle_rollout;
  oracle_rollout.traj = oracle_traj;
  const double oracle_cost = rollout_cost(oracle_rollout, cost);
  CHECK(realized <= oracle_cost * 1.02 + 1e-9);
}

TEST_CASE("trust region statistics") {
  std::vector<Vec> same(5, Vec::Constant(2, 3.0));
  TrustRegion tr1 = trust_region_from_inputs(same, 20.0);
  CHECK((tr1.center - Vec::Constant(2, 3.0)).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK(tr1.half_width.lpNorm<Eigen::Infinity>() == 0.0);

  std::vector<Vec> pm = {Vec::Constant(1, -1.0), Vec::Constant(1, 1.0)};
  TrustRegion tr2 = trust_region_from_inputs(pm, 20.0);
  CHECK(tr2.center(0) == 0.0);
  CHECK(tr2.half_width(0) == doctest::Approx(20.0));  // population std = 1

  Rng rng(13);
  std::vector<Vec> uni;
  for (int i = 0; i < 10000; ++i) uni.push_back(rng.uniform_vec(2, -10.0, 10.0));
  TrustRegion tr3 = trust_region_from_inputs(uni, 1.0);
  for (Index j = 0; j < 2; ++j)
    CHECK(tr3.half_width(j) == doctest::Approx(10.0 / std::sqrt(3.0)).epsilon(0.02));

  CHECK_THROWS_AS(trust_region_from_inputs({Vec::Zero(1)}, 20.0), DegenerateBufferError);
}

TEST_CASE("receding-horizon causality via truncation") {
  EnvConfig cfg;
  cfg.n = 2;
  cfg.m = 1;
  cfg.r_full = 2;
  cfg.seed = 21;
  Environment env = generate_full_lcs(cfg);
  QuadCost cost = QuadCost::identity(2, 1);
  TrustRegion tr = TrustRegion::from_box(1, -3.0, 3.0);
  Vec x0(2);
  x0 << 1.0, 0.5;
  Environment e1 = env.clone_fresh(), e2 = env.clone_fresh();
  Rollout r5 = receding_rollout(e1, env.theta(), cost, tr, 5, 3, x0);
  Rollout r3 = receding_rollout(e2, env.theta(), cost, tr, 3, 3, x0);
  for (int k = 0; k < 3; ++k)
    CHECK(r5.traj.inputs[static_cast<size_t>(k)](0) == r3.traj.inputs[static_cast<size_t>(k)](0));
}

TEST_CASE("warm and cold starts reach comparable objectives") {
  Rng rng(17);
  LcsParams theta = testing::random_lcs(2, 1, 2, rng, 0.5);
  QuadCost cost = QuadCost::identity(2, 1);
  TrustRegion tr = TrustRegion::from_box(1, -5.0, 5.0);
  Vec x0(2);
  x0 << 1.0, -0.5;
  MpcPlan cold = plan(theta, x0, cost, tr, 4);
  MpcPlan warm_src = cold;
  MpcPlan warm = plan(theta, x0, cost, tr, 4, {}, &warm_src);
  CHECK(std::abs(warm.objective - cold.objective) <=
        1e-3 * std::max(1.0, std::abs(cold.objective)));
}

TEST_CASE("plan log csv") {
  Rollout r;
  r.plan_log.push_back({0, 1.5, 1e-6, 42, false, 0.01});
  std::stringstream ss;
  write_plan_log_csv(r, ss);
  std::string header;
  std::getline(ss, header);
  CHECK(header == "step,objective,sigma_final,iterations,degraded");
}

#pragma once

#include <iosfwd>

#include "hmr/learner.hpp"
#include "hmr/mpc.hpp"

namespace hmr {

// Mean over the dataset of
//   100 * ||g(x, u) - x_next||^2 / (||x_next||^2 + 1e-6)
// where g(x, u) is the reduced model's one-step prediction and x_next the
// recorded true next state.
double relative_model_error(const LcsParams& theta_g, const std::vector<DataPoint>& dataset,
                            double lcp_tol = 1e-8);

// Realized closed-loop cost. Running state cost at every recorded state,
// input cost at every applied input, terminal weight at the final state.
double rollout_cost(const Rollout& rollout, const QuadCost& cost);
// Paper-literal stage-only sum (no terminal weight), exported alongside.
double rollout_cost_stage_only(const Rollout& rollout, const QuadCost& cost);

// 100 * (J_g - J_f) / J_f. J_f must be positive.
double performance_gap(double j_gmpc, double j_fmpc);

struct BaselineResult {
  double mean_cost = 0.0;             // terminal-inclusive convention
  double mean_cost_stage_only = 0.0;
  double degraded_plan_rate = 0.0;
  int aborted_rollouts = 0;
  std::vector<Rollout> rollouts;
};

// Receding-horizon planner run on the full-order system itself over a fixed
// wide input box (the random-policy range); the reference cost for the gap.
BaselineResult f_mpc_baseline(const Environment& env, const QuadCost& cost,
                              const std::vector<Vec>& x0_batch, int plan_horizon,
                              int rollout_horizon, const PlannerOptions& opts,
                              double box_lo = -10.0, double box_hi = 10.0, int threads = 1);

struct LemmaDiagnostics {
  double zeroth = 0.0;   // mean || F(u, x0) - G(u, x0) || over rollouts
  double first = 0.0;    // mean Frobenius gap of the input Jacobians (central FD)
  int excluded_coords = 0;  // input coordinates whose FD probe crossed a mode boundary
  int total_coords = 0;
  int rollouts_used = 0;
};

// Zeroth- and first-order trajectory prediction gaps between the true system
// and the reduced model along recorded input sequences. Both systems are
// re-simulated and perturbed identically so FD bias cancels; coordinates whose
// perturbation flips a mode signature in either system are excluded from the
// Jacobian estimate and counted.
LemmaDiagnostics lemma_diagnostics(const LcsParams& theta_g, const Environment& env,
                                   const std::vector<Rollout>& rollouts, double fd_step = 1e-4,
                                   double lcp_tol = 1e-8);

struct EvalConfig {
  int eval_rollouts = 20;
  // The visited-mode census is sample-size dependent; it gets a larger
  // random-policy sweep than the 20-rollout metric batch.
  int mode_count_rollouts = 400;
  int rollout_horizon = 16;
  int plan_horizon = 5;
  int lemma_rollouts = 5;
  double fd_step = 1e-4;
  double lcp_tol = 1e-8;
  double fmpc_box_lo = -10.0;
  double fmpc_box_hi = 10.0;
  double explosion_bound = 1e6;
  int threads = 1;
  bool with_lemma = true;
  bool with_baseline = true;
};

// One trial's worth of the quantitative study: random-policy and on-policy
// model error, mode counts in both systems, closed-loop costs and the gap.
struct EvalReport {
  std::size_t random_modes_in_f = 0;
  double random_me_pct = 0.0;
  std::size_t gmpc_modes_in_f = 0;
  double onpolicy_me_pct = 0.0;
  std::size_t modes_in_g = 0;
  double j_gmpc = 0.0;
  double j_fmpc = 0.0;
  double gap_pct = 0.0;
  double j_gmpc_stage_only = 0.0;
  double j_fmpc_stage_only = 0.0;
  double gmpc_degraded_rate = 0.0;
  double fmpc_degraded_rate = 0.0;
  int aborted_gmpc_rollouts = 0;
  LemmaDiagnostics lemma;
};

// Held-out evaluation: a fresh x0 batch never used in training, shared by the
// random-policy sweep, the g-MPC rollouts and the f-MPC baseline.
EvalReport evaluate(const Environment& env, const LcsParams& theta_g, const QuadCost& cost,
                    const TrustRegion& tr, const EvalConfig& cfg, const Rng& eval_rng,
                    const PlannerOptions& popts);

void write_eval_report_json(const EvalReport& report, std::ostream& os);

struct Aggregate {
  double mean = 0.0;
  double stddev = 0.0;  // population convention
  int count = 0;
};

Aggregate aggregate(const std::vector<double>& values);

// One row per case: mean +/- std cells across trials, shaped like the
// synthetic-study summary table.
void write_table_csv_header(std::ostream& os);
void write_table_csv_row(const std::string& case_name, Index dim_x, Index dim_u, Index dim_big,
                         Index dim_small, const std::vector<EvalReport>& trials,
                         std::ostream& os);

}  // namespace hmr

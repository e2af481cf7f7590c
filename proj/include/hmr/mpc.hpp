#pragma once

#include <iosfwd>
#include <optional>
#include <vector>

#include "hmr/env.hpp"
#include "hmr/lcs.hpp"
#include "hmr/nlp.hpp"

namespace hmr {

// Per-dimension input box [center - half_width, center + half_width].
struct TrustRegion {
  Vec center;
  Vec half_width;

  TrustRegion(Vec center_in, Vec half_width_in);
  static TrustRegion from_box(Index m, double lo, double hi);

  Vec lower() const { return center - half_width; }
  Vec upper() const { return center + half_width; }
};

// Quadratic task cost  sum_t (x'Qx + u'Ru) + x_T' Q_T x_T  about an optional
// state target (origin by default).
struct QuadCost {
  Mat Q;
  Mat R;
  Mat Q_T;
  Vec target;

  QuadCost(Mat Q_in, Mat R_in, Mat QT_in, std::optional<Vec> target_in = std::nullopt);
  static QuadCost identity(Index n, Index m);

  double stage(const Vec& x, const Vec& u) const;
  double terminal(const Vec& x) const;
};

struct MpcPlan {
  std::vector<Vec> inputs;   // u_0 .. u_{T-1}, inside the trust region exactly
  std::vector<Vec> states;   // predicted x_0 .. x_T
  std::vector<Vec> lambdas;  // predicted lambda_0 .. lambda_{T-1}
  double objective = 0.0;    // task cost of the predicted trajectory
  double sigma_final = 0.0;  // tightest complementarity relaxation reached
  double dynamics_violation = 0.0;
  double projection_shift = 0.0;  // largest input move made by the final box projection
  int nlp_iterations = 0;
  bool degraded = false;
};

struct PlannerOptions {
  double nlp_tol = 1e-4;
  int max_inner = 400;
  int max_outer = 6;
  std::vector<double> sigma_stages = {1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6};
  std::vector<double> warm_sigma_stages = {1e-4, 1e-6};
  double lcp_tol = 1e-8;
  double state_bound = 1e9;  // box half-width on predicted states
  int multi_start = 1;
};

// Direct transcription of the trust-region LCS MPC: decision variables are
// the stacked (x_{1:T}, u_{0:T-1}, lambda_{0:T-1}) plus slacks for the
// complementarity function and the per-step relaxation lambda_t' w_t <= sigma,
// solved through the sigma schedule with warm starts between stages.
MpcPlan plan(const LcsParams& theta, const Vec& x0, const QuadCost& cost, const TrustRegion& tr,
             int horizon, const PlannerOptions& opts = {}, const MpcPlan* warm_start = nullptr);

struct PlanStepLog {
  int step = 0;
  double objective = 0.0;
  double sigma_final = 0.0;
  int iterations = 0;
  bool degraded = false;
  double seconds = 0.0;  // timing sidecar only, never in deterministic outputs
};

// One closed-loop episode on the true system.
struct Rollout {
  Trajectory traj;                 // realized full-order trajectory (states H+1, inputs H)
  std::vector<Vec> model_lambdas;  // reduced-model lambda at each realized (x, u)
  std::vector<PlanStepLog> plan_log;
  bool aborted = false;
};

// Receding-horizon execution: plan from the true state, apply only the first
// input, warm-start the next plan from the current one shifted by one step.
// On an environment explosion the partial rollout is returned with `aborted`.
Rollout receding_rollout(Environment& env, const LcsParams& theta_g, const QuadCost& cost,
                         const TrustRegion& tr, int rollout_horizon, int plan_horizon,
                         const Vec& x0, const PlannerOptions& opts = {},
                         double explosion_bound = 1e6);

// Dimension-wise mean and eta * population standard deviation of the inputs.
TrustRegion trust_region_from_inputs(const std::vector<Vec>& inputs, double eta);

void save_trust_region(const TrustRegion& tr, const std::string& path);
TrustRegion load_trust_region(const std::string& path);

// CSV: step, objective, sigma_final, iterations, degraded.
void write_plan_log_csv(const Rollout& rollout, std::ostream& os);

}  // namespace hmr

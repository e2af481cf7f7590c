#pragma once

#include <functional>

#include "hmr/types.hpp"

namespace hmr {

// Smooth equality-constrained problem with box bounds:
//   min f(x)  s.t.  h(x) = 0,  lower <= x <= upper.
// Evaluators must be deterministic for fixed inputs. Gradient / Jacobian
// output pointers are null when the caller only needs values (line search).
// The Jacobian buffer is zero-initialized by the solver and persists across
// calls within one solve, so evaluators may write structural nonzeros only.
struct NlpProblem {
  Index dim = 0;
  Index eq_dim = 0;
  std::function<double(const Vec& x, Vec* grad)> objective;
  std::function<void(const Vec& x, Vec& h, Mat* jac)> equality;  // unused if eq_dim == 0
  Vec lower;
  Vec upper;
  Vec x0;
};

struct NlpOptions {
  double tol = 1e-4;
  int max_inner = 500;
  int max_outer = 8;
  double initial_penalty = 10.0;
  double penalty_growth = 10.0;
};

struct NlpResult {
  Vec x;
  double objective = 0.0;
  double constraint_violation = 0.0;  // ||h(x)||_inf
  double stationarity = 0.0;          // projected-gradient norm of the augmented objective
  bool degraded = false;              // true when tolerances were not met within caps
  int inner_iterations = 0;
  Vec multipliers;                    // final equality multipliers, reusable as warm start
  double penalty = 0.0;
};

// Augmented Lagrangian on the equalities, inner box-constrained minimization
// by projected L-BFGS with backtracking line search. The returned point is
// inside the box bit-exactly. Never throws on slow convergence: the best
// iterate comes back with `degraded` set.
NlpResult solve_nlp(const NlpProblem& p, const NlpOptions& opts = {},
                    const Vec* warm_multipliers = nullptr);

}  // namespace hmr

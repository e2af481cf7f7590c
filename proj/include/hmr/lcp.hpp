#pragma once

#include "hmr/types.hpp"

namespace hmr {

// Linear complementarity problem: find lambda >= 0 with
//   w = M lambda + q >= 0  and  lambda' w = 0.
// M is restricted to the monotone class (M + M' positive definite), which
// guarantees a unique solution.
struct LcpProblem {
  Mat M;
  Vec q;

  LcpProblem(Mat M_in, Vec q_in);
};

// Reusable solver for a fixed M and many q vectors. Validates monotonicity
// once and caches the matrix 2-norm used for the fixed-point step size.
class LcpSolver {
 public:
  explicit LcpSolver(Mat M);

  // Projected extragradient iteration, optional warm start.
  // Contract on return: lambda >= 0, w >= -tol elementwise,
  // |lambda' w| <= tol * (1 + ||q||).
  Vec solve(const Vec& q, double tol, const Vec* warm_start = nullptr) const;

  const Mat& M() const { return M_; }
  double sym_min_eig() const { return sym_min_eig_; }

 private:
  bool try_polish(const Vec& q, Vec& lambda) const;

  Mat M_;
  double step_;          // 1 / ||M||_2
  double sym_min_eig_;   // smallest eigenvalue of M + M'
  int max_iter_ = 10000;
};

// One-shot solves.
Vec solve_lcp(const LcpProblem& p, double tol = 1e-8);

// Brute-force oracle: enumerate all 2^r active sets, return the exact
// complementarity solution. r <= 12. Throws NoSolutionError if no active set
// is feasible and AmbiguousSolutionError if two distinct feasible active sets
// disagree on lambda (both indicate non-monotone input).
Vec solve_lcp_enum(const LcpProblem& p);

}  // namespace hmr

#pragma once

#include <memory>
#include <mutex>
#include <vector>

#include "hmr/types.hpp"

namespace hmr {

// Non-negativity-constrained strongly convex QP:
//   min over z >= 0 of  0.5 z' P z + b' z,  P symmetric positive definite.
struct QpNonneg {
  Mat P;
  Vec b;

  QpNonneg(Mat P_in, Vec b_in);
};

double qp_objective(const Mat& P, const Vec& b, const Vec& z);

// Operator-splitting solver with over-relaxed projection onto the
// non-negative orthant. The (P + rho I) factorization and the per-active-set
// polish factorizations are cached, so one instance solves many problems that
// share P (the learner's inner QPs) at low cost.
class QpNonnegSolver {
 public:
  explicit QpNonnegSolver(Mat P);

  // KKT contract on return: z >= 0 and ||min(z, Pz + b)||_inf <= tol.
  Vec solve(const Vec& b, double tol, const Vec* warm_start = nullptr) const;

  const Mat& P() const { return P_; }

 private:
  bool try_polish(const Vec& b, double tol, Vec& z) const;
  const Eigen::LLT<Mat>* free_set_factor(std::uint32_t mask,
                                         const std::vector<Index>& free) const;

  Mat P_;
  double rho_;
  Eigen::LLT<Mat> shifted_llt_;  // P + rho I
  int max_iter_ = 20000;

  // Lazily filled per-free-set Cholesky factors, keyed by bitmask. Only used
  // when the dimension is small enough for the table to stay tiny. Guarded by
  // a mutex so batch solves may share one solver across threads; entries are
  // never removed, so a returned pointer stays valid without the lock.
  mutable std::vector<std::unique_ptr<Eigen::LLT<Mat>>> polish_cache_;
  mutable std::mutex cache_mutex_;
  bool cache_enabled_ = false;
};

Vec solve_qp_nonneg(const QpNonneg& p, double tol = 1e-6);

}  // namespace hmr

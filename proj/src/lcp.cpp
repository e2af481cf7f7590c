#include "hmr/lcp.hpp"

#include <cmath>
#include <vector>

namespace hmr {

namespace {

double sym_part_min_eig(const Mat& M) {
  Mat S = M + M.transpose();
  Eigen::SelfAdjointEigenSolver<Mat> eig(S);
  return eig.eigenvalues().minCoeff();
}

}  // namespace

LcpProblem::LcpProblem(Mat M_in, Vec q_in) : M(std::move(M_in)), q(std::move(q_in)) {
  if (M.rows() != M.cols()) throw DimensionError("LcpProblem: M must be square");
  if (q.size() != M.rows()) throw DimensionError("LcpProblem: q dimension mismatch");
  if (sym_part_min_eig(M) <= 0.0)
    throw NonMonotoneError("LcpProblem: M + M' is not positive definite");
}

LcpSolver::LcpSolver(Mat M) : M_(std::move(M)) {
  if (M_.rows() != M_.cols()) throw DimensionError("LcpSolver: M must be square");
  sym_min_eig_ = sym_part_min_eig(M_);
  if (sym_min_eig_ <= 0.0)
    throw NonMonotoneError("LcpSolver: M + M' is not positive definite");
  const double norm2 = M_.jacobiSvd().singularValues()(0);
  step_ = norm2 > 0.0 ? 1.0 / norm2 : 1.0;
}

// Primal-dual active-set refinement: iterate the min-map split (active where
// lambda_i > w_i), solving the implied subsystem exactly, until the split is
// self-consistent and the complementarity KKT holds to roundoff.
bool LcpSolver::try_polish(const Vec& q, Vec& lambda) const {
  const Index r = q.size();
  if (r > 63) return false;
  const double slack = 1e-12 * (1.0 + q.lpNorm<Eigen::Infinity>());

  Vec w = M_ * lambda + q;
  std::uint64_t mask = 0;
  for (Index i = 0; i < r; ++i)
    if (lambda(i) > w(i)) mask |= (std::uint64_t{1} << i);

  const int max_refine = static_cast<int>(2 * r + 4);
  std::uint64_t prev_mask = ~mask;
  for (int step = 0; step < max_refine && mask != prev_mask; ++step) {
    prev_mask = mask;
    std::vector<Index> active;
    active.reserve(static_cast<size_t>(r));
    for (Index i = 0; i < r; ++i)
      if (mask & (std::uint64_t{1} << i)) active.push_back(i);

    Vec cand = Vec::Zero(r);
    if (!active.empty()) {
      const Index na = static_cast<Index>(active.size());
      Mat Maa(na, na);
      Vec qa(na);
      for (Index a = 0; a < na; ++a) {
        qa(a) = q(active[static_cast<size_t>(a)]);
        for (Index b = 0; b < na; ++b)
          Maa(a, b) = M_(active[static_cast<size_t>(a)], active[static_cast<size_t>(b)]);
      }
      Vec la = Maa.partialPivLu().solve(-qa);
      for (Index a = 0; a < na; ++a) cand(active[static_cast<size_t>(a)]) = la(a);
    }

    Vec wc = M_ * cand.cwiseMax(0.0) + q;
    if ((cand.array() >= -slack).all() && wc.minCoeff() >= -slack) {
      lambda = cand.cwiseMax(0.0);
      return true;
    }
    mask = 0;
    for (Index i = 0; i < r; ++i)
      if (cand(i) > wc(i)) mask |= (std::uint64_t{1} << i);
  }
  return false;
}

Vec LcpSolver::solve(const Vec& q, double tol, const Vec* warm_start) const {
  if (q.size() != M_.rows()) throw DimensionError("LcpSolver::solve: q dimension mismatch");
  if (!(tol > 0.0 && tol <= 1e-3))
    throw std::invalid_argument("LcpSolver::solve: tol must lie in (0, 1e-3]");

  const Index r = q.size();
  const double qnorm = q.norm();
  Vec lambda = (warm_start != nullptr && warm_start->size() == r)
                   ? warm_start->cwiseMax(0.0)
                   : Vec(Vec::Zero(r));

  auto contract_ok = [&](const Vec& lam, const Vec& w) {
    if (w.minCoeff() < -tol) return false;
    return std::abs(lam.dot(w)) <= tol * (1.0 + qnorm);
  };

  Vec w = M_ * lambda + q;
  if (contract_ok(lambda, w)) return lambda;
  if (try_polish(q, lambda)) return lambda;

  Vec half(r), next(r);
  for (int it = 0; it < max_iter_; ++it) {
    half = (lambda - step_ * (M_ * lambda + q)).cwiseMax(0.0);
    next = (lambda - step_ * (M_ * half + q)).cwiseMax(0.0);
    lambda.swap(next);

    if ((it & 7) == 7 || it < 4) {
      w.noalias() = M_ * lambda + q;
      if (contract_ok(lambda, w)) return lambda;
      if (try_polish(q, lambda)) return lambda;
    }
  }
  w.noalias() = M_ * lambda + q;
  if (contract_ok(lambda, w)) return lambda;
  throw NoConvergenceError("solve_lcp: iteration cap reached, residual " +
                           std::to_string(std::abs(lambda.dot(w))));
}

Vec solve_lcp(const LcpProblem& p, double tol) {
  LcpSolver solver(p.M);
  return solver.solve(p.q, tol);
}

Vec solve_lcp_enum(const LcpProblem& p) {
  const Index r = p.q.size();
  if (r > 12) throw std::invalid_argument("solve_lcp_enum: r must be <= 12");

  const double scale = 1.0 + p.q.lpNorm<Eigen::Infinity>();
  const double feas_slack = 1e-11 * scale;

  std::vector<Vec> solutions;
  for (std::uint32_t mask = 0; mask < (1u << r); ++mask) {
    std::vector<Index> active;
    for (Index i = 0; i < r; ++i)
      if (mask & (1u << i)) active.push_back(i);

    Vec lambda = Vec::Zero(r);
    if (!active.empty()) {
      const Index na = static_cast<Index>(active.size());
      Mat Maa(na, na);
      Vec qa(na);
      for (Index a = 0; a < na; ++a) {
        qa(a) = p.q(active[static_cast<size_t>(a)]);
        for (Index b = 0; b < na; ++b)
          Maa(a, b) = p.M(active[static_cast<size_t>(a)], active[static_cast<size_t>(b)]);
      }
      Eigen::PartialPivLU<Mat> lu(Maa);
      Vec la = lu.solve(-qa);
      if ((Maa * la + qa).lpNorm<Eigen::Infinity>() > 1e-8 * scale) continue;  // singular block
      if ((la.array() < -feas_slack).any()) continue;
      for (Index a = 0; a < na; ++a)
        lambda(active[static_cast<size_t>(a)]) = std::max(la(a), 0.0);
    }

    Vec w = p.M * lambda + p.q;
    bool feasible = true;
    for (Index i = 0; i < r; ++i) {
      if (!(mask & (1u << i)) && w(i) < -feas_slack) {
        feasible = false;
        break;
      }
    }
    if (!feasible) continue;

    bool duplicate = false;
    for (const Vec& s : solutions) {
      if ((s - lambda).lpNorm<Eigen::Infinity>() <= 1e-9 * scale) {
        duplicate = true;
        break;
      }
    }
    if (!duplicate) solutions.push_back(lambda);
  }

  if (solutions.empty())
    throw NoSolutionError("solve_lcp_enum: no feasible active set (non-monotone input?)");
  if (solutions.size() > 1)
    throw AmbiguousSolutionError("solve_lcp_enum: multiple distinct solutions (non-monotone input?)");
  return solutions.front();
}

}  // namespace hmr

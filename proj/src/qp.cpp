#include "hmr/qp.hpp"

#include <cmath>

namespace hmr {

namespace {

void check_spd(const Mat& P, const char* who) {
  if (P.rows() != P.cols()) throw DimensionError(std::string(who) + ": P must be square");
  const double asym = (P - P.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-10 * (1.0 + P.cwiseAbs().maxCoeff()))
    throw std::invalid_argument(std::string(who) + ": P not symmetric");
  Eigen::SelfAdjointEigenSolver<Mat> eig(P);
  if (eig.eigenvalues().minCoeff() <= 0.0)
    throw std::invalid_argument(std::string(who) + ": P not positive definite");
}

double kkt_residual(const Mat& P, const Vec& b, const Vec& z) {
  Vec w = P * z + b;
  return z.cwiseMin(w).lpNorm<Eigen::Infinity>();
}

}  // namespace

QpNonneg::QpNonneg(Mat P_in, Vec b_in) : P(std::move(P_in)), b(std::move(b_in)) {
  if (b.size() != P.rows()) throw DimensionError("QpNonneg: b dimension mismatch");
  check_spd(P, "QpNonneg");
}

double qp_objective(const Mat& P, const Vec& b, const Vec& z) {
  return 0.5 * z.dot(P * z) + b.dot(z);
}

QpNonnegSolver::QpNonnegSolver(Mat P) : P_(std::move(P)) {
  check_spd(P_, "QpNonnegSolver");
  const Index n = P_.rows();
  rho_ = P_.trace() / static_cast<double>(n);
  shifted_llt_.compute(P_ + rho_ * Mat::Identity(n, n));
  if (n <= 14) {
    cache_enabled_ = true;
    polish_cache_.resize(static_cast<size_t>(1) << n);
  }
}

const Eigen::LLT<Mat>* QpNonnegSolver::free_set_factor(std::uint32_t mask,
                                                       const std::vector<Index>& free) const {
  if (!cache_enabled_) return nullptr;
  std::lock_guard<std::mutex> lock(cache_mutex_);
  auto& slot = polish_cache_[mask];
  if (!slot) {
    const Index nf = static_cast<Index>(free.size());
    Mat Pff(nf, nf);
    for (Index a = 0; a < nf; ++a)
      for (Index c = 0; c < nf; ++c)
        Pff(a, c) = P_(free[static_cast<size_t>(a)], free[static_cast<size_t>(c)]);
    slot = std::make_unique<Eigen::LLT<Mat>>(Pff);
  }
  return slot.get();
}

// Primal-dual active-set refinement seeded by the min-map split of the
// current iterate; accepts once the split is self-consistent and the KKT
// residual meets tol.
bool QpNonnegSolver::try_polish(const Vec& b, double tol, Vec& z) const {
  const Index n = b.size();
  if (n > 31) return false;

  Vec w = P_ * z + b;
  std::uint32_t mask = 0;
  for (Index i = 0; i < n; ++i)
    if (z(i) > w(i)) mask |= (1u << i);

  const int max_refine = static_cast<int>(2 * n + 4);
  std::uint32_t prev_mask = ~mask;
  for (int step = 0; step < max_refine && mask != prev_mask; ++step) {
    prev_mask = mask;
    std::vector<Index> free;
    free.reserve(static_cast<size_t>(n));
    for (Index i = 0; i < n; ++i)
      if (mask & (1u << i)) free.push_back(i);

    Vec cand = Vec::Zero(n);
    if (!free.empty()) {
      const Index nf = static_cast<Index>(free.size());
      Vec bf(nf);
      for (Index a = 0; a < nf; ++a) bf(a) = b(free[static_cast<size_t>(a)]);
      Vec zf;
      if (const Eigen::LLT<Mat>* llt = free_set_factor(mask, free)) {
        zf = llt->solve(-bf);
      } else {
        Mat Pff(nf, nf);
        for (Index a = 0; a < nf; ++a)
          for (Index c = 0; c < nf; ++c)
            Pff(a, c) = P_(free[static_cast<size_t>(a)], free[static_cast<size_t>(c)]);
        zf = Pff.llt().solve(-bf);
      }
      for (Index a = 0; a < nf; ++a) cand(free[static_cast<size_t>(a)]) = zf(a);
    }

    Vec wc = P_ * cand.cwiseMax(0.0) + b;
    if ((cand.array() >= 0.0).all()) {
      Vec clamped = cand.cwiseMax(0.0);
      if (kkt_residual(P_, b, clamped) <= tol) {
        z = std::move(clamped);
        return true;
      }
    }
    mask = 0;
    for (Index i = 0; i < n; ++i)
      if (cand(i) > wc(i)) mask |= (1u << i);
  }
  return false;
}

Vec QpNonnegSolver::solve(const Vec& b, double tol, const Vec* warm_start) const {
  if (b.size() != P_.rows()) throw DimensionError("QpNonnegSolver::solve: b dimension mismatch");
  if (!(tol > 0.0)) throw std::invalid_argument("QpNonnegSolver::solve: tol must be positive");

  const Index n = b.size();
  Vec z = (warm_start != nullptr && warm_start->size() == n) ? warm_start->cwiseMax(0.0)
                                                             : Vec(Vec::Zero(n));
  if (kkt_residual(P_, b, z) <= tol) return z;
  if (try_polish(b, tol, z)) return z;

  constexpr double kRelax = 1.6;  // over-relaxation
  Vec y = Vec::Zero(n);
  Vec x(n), x_hat(n), z_prev(n);
  for (int it = 0; it < max_iter_; ++it) {
    x = shifted_llt_.solve(rho_ * z - y - b);
    x_hat = kRelax * x + (1.0 - kRelax) * z;
    z_prev = z;
    z = (x_hat + y / rho_).cwiseMax(0.0);
    y += rho_ * (x_hat - z);

    if ((it & 7) == 7) {
      const double primal = (x - z).lpNorm<Eigen::Infinity>();
      const double dual = rho_ * (z - z_prev).lpNorm<Eigen::Infinity>();
      if (primal <= tol && dual <= tol && kkt_residual(P_, b, z) <= tol) return z;
      if (try_polish(b, tol, z)) return z;
    }
  }
  if (kkt_residual(P_, b, z) <= tol) return z;
  throw NoConvergenceError("solve_qp_nonneg: iteration cap reached");
}

Vec solve_qp_nonneg(const QpNonneg& p, double tol) {
  QpNonnegSolver solver(p.P);
  return solver.solve(p.b, tol);
}

}  // namespace hmr

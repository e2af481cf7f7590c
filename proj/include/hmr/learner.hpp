#pragma once

#include <iosfwd>
#include <vector>

#include "hmr/lcs.hpp"
#include "hmr/qp.hpp"
#include "hmr/rng.hpp"

namespace hmr {

// One observed environment transition.
struct DataPoint {
  Vec x;
  Vec u;
  Vec x_next;
};

struct ViolationHyper {
  double epsilon = 0.1;  // violation balance, valid range (1e-3, 1)
  double step_size = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int batch_size = 64;
  int epochs = 300;
  double qp_tol = 1e-8;
  double max_skip_fraction = 0.10;
  int threads = 1;

  void validate() const;
};

struct InnerSolution {
  Vec lambda;
  Vec phi;
  double loss = 0.0;
};

// Gradient of the violation loss w.r.t. every parameter block.
struct ThetaGrad {
  Mat A, B, C;
  Vec d;
  Mat D, E, G, H;
  Vec c;

  ThetaGrad(Index n, Index m, Index r);
  void setZero();
  ThetaGrad& operator+=(const ThetaGrad& o);
  ThetaGrad& operator*=(double s);
};

// Per-datapoint violation loss
//   min over lambda >= 0, phi >= 0 of
//     0.5 ||A x + B u + C lambda + d - x'||^2
//     + (1/eps) ( lambda' phi + (1/(2 gamma)) ||D x + E u + F lambda + c - phi||^2 )
// with gamma = lambda_min(F + F'). The inner problem is a strongly convex QP
// in (lambda, phi); this evaluator assembles its Hessian once per theta and
// reuses it across datapoints.
class ViolationLossEvaluator {
 public:
  ViolationLossEvaluator(const LcsParams& theta, double epsilon);

  double gamma() const { return gamma_; }
  const Mat& qp_hessian() const { return qp_.P(); }

  InnerSolution solve(const DataPoint& dp, double tol, const Vec* warm_start = nullptr) const;

  // Envelope-theorem gradient: partials of the loss expression at the fixed
  // inner optimum, chained through F = G G' + H - H'. gamma and epsilon are
  // hyperparameters of the loss, held constant.
  void accumulate_grad(const DataPoint& dp, const InnerSolution& sol, ThetaGrad& grad) const;

 private:
  const LcsParams& theta_;
  double epsilon_;
  double gamma_;
  QpNonnegSolver qp_;
};

InnerSolution inner_violation_qp(const LcsParams& theta, const DataPoint& dp,
                                 const ViolationHyper& hyper);
ThetaGrad violation_grad(const LcsParams& theta, const DataPoint& dp, const InnerSolution& sol,
                         const ViolationHyper& hyper);

// Every entry of every block i.i.d. U[-0.5, 0.5], resampled until the
// parameter invariants hold.
LcsParams init_params(Index n, Index m, Index r, Rng& rng, int max_attempts = 100);

struct EpochRecord {
  double mean_loss = 0.0;
  double min_loss = 0.0;
};

struct TrainResult {
  LcsParams theta;
  std::vector<EpochRecord> history;
  double initial_loss = 0.0;  // exact mean buffer loss at theta_in
  double final_loss = 0.0;    // exact mean buffer loss at returned theta
  int skipped_points = 0;
  bool aborted = false;  // an epoch exceeded the skip budget
};

// Stochastic first-order fit of theta to the buffer: adaptive-moment updates
// on (A,B,C,d,D,E,G,H,c) with the envelope gradient, best-iterate
// checkpointing on the epoch mean loss. The returned theta never scores worse
// than theta_in on the buffer.
TrainResult train(const LcsParams& theta_in, const std::vector<DataPoint>& buffer,
                  const ViolationHyper& hyper, Rng& rng);

// CSV: epoch, mean_loss, min_loss.
void write_loss_history_csv(const TrainResult& result, std::ostream& os);

}  // namespace hmr

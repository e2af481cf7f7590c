#include "hmr/learner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "hmr/parallel.hpp"

namespace hmr {

void ViolationHyper::validate() const {
  if (!(epsilon > 1e-3 && epsilon < 1.0))
    throw ConfigError("ViolationHyper: epsilon must lie in (1e-3, 1)");
  if (!(step_size > 0.0)) throw ConfigError("ViolationHyper: step_size must be > 0");
  if (batch_size < 1 || epochs < 0) throw ConfigError("ViolationHyper: bad batch/epoch counts");
  if (!(qp_tol > 0.0 && qp_tol <= 1e-4))
    throw ConfigError("ViolationHyper: qp_tol must lie in (0, 1e-4]");
  if (!(max_skip_fraction >= 0.0 && max_skip_fraction <= 1.0))
    throw ConfigError("ViolationHyper: max_skip_fraction must lie in [0, 1]");
}

ThetaGrad::ThetaGrad(Index n, Index m, Index r)
    : A(Mat::Zero(n, n)),
      B(Mat::Zero(n, m)),
      C(Mat::Zero(n, r)),
      d(Vec::Zero(n)),
      D(Mat::Zero(r, n)),
      E(Mat::Zero(r, m)),
      G(Mat::Zero(r, r)),
      H(Mat::Zero(r, r)),
      c(Vec::Zero(r)) {}

void ThetaGrad::setZero() {
  A.setZero();
  B.setZero();
  C.setZero();
  d.setZero();
  D.setZero();
  E.setZero();
  G.setZero();
  H.setZero();
  c.setZero();
}

ThetaGrad& ThetaGrad::operator+=(const ThetaGrad& o) {
  A += o.A;
  B += o.B;
  C += o.C;
  d += o.d;
  D += o.D;
  E += o.E;
  G += o.G;
  H += o.H;
  c += o.c;
  return *this;
}

ThetaGrad& ThetaGrad::operator*=(double s) {
  A *= s;
  B *= s;
  C *= s;
  d *= s;
  D *= s;
  E *= s;
  G *= s;
  H *= s;
  c *= s;
  return *this;
}

namespace {

// Hessian of the inner QP in z = (lambda, phi):
//   [ C'C + F'F/(eps*gamma)      I/eps - F'/(eps*gamma) ]
//   [ I/eps - F/(eps*gamma)      I/(eps*gamma)          ]
Mat assemble_inner_hessian(const LcsParams& theta, double epsilon, double gamma) {
  const Index r = theta.r();
  const double ig = 1.0 / (epsilon * gamma);
  Mat P(2 * r, 2 * r);
  P.topLeftCorner(r, r) = theta.C().transpose() * theta.C() + ig * theta.F().transpose() * theta.F();
  Mat cross = Mat::Identity(r, r) / epsilon - ig * theta.F().transpose();
  P.topRightCorner(r, r) = cross;
  P.bottomLeftCorner(r, r) = cross.transpose();
  P.bottomRightCorner(r, r) = ig * Mat::Identity(r, r);
  return P;
}

}  // namespace

ViolationLossEvaluator::ViolationLossEvaluator(const LcsParams& theta, double epsilon)
    : theta_(theta),
      epsilon_(epsilon),
      gamma_(theta.f_sym_min_eig()),
      qp_(assemble_inner_hessian(theta, epsilon, theta.f_sym_min_eig())) {
  if (!(gamma_ > 0.0)) throw NonMonotoneError("ViolationLossEvaluator: gamma must be > 0");
}

InnerSolution ViolationLossEvaluator::solve(const DataPoint& dp, double tol,
                                            const Vec* warm_start) const {
  const Index r = theta_.r();
  const double ig = 1.0 / (epsilon_ * gamma_);
  Vec a = theta_.A() * dp.x + theta_.B() * dp.u + theta_.d() - dp.x_next;
  Vec b = theta_.D() * dp.x + theta_.E() * dp.u + theta_.c();

  Vec lin(2 * r);
  lin.head(r) = theta_.C().transpose() * a + ig * theta_.F().transpose() * b;
  lin.tail(r) = -ig * b;

  Vec z = qp_.solve(lin, tol, warm_start);
  const double constant = 0.5 * a.squaredNorm() + 0.5 * ig * b.squaredNorm();

  InnerSolution sol;
  sol.lambda = z.head(r);
  sol.phi = z.tail(r);
  sol.loss = std::max(qp_objective(qp_.P(), lin, z) + constant, 0.0);
  return sol;
}

void ViolationLossEvaluator::accumulate_grad(const DataPoint& dp, const InnerSolution& sol,
                                             ThetaGrad& grad) const {
  const double ig = 1.0 / (epsilon_ * gamma_);
  Vec e_dyn = theta_.A() * dp.x + theta_.B() * dp.u + theta_.C() * sol.lambda + theta_.d() - dp.x_next;
  Vec e_cmp = theta_.D() * dp.x + theta_.E() * dp.u + theta_.F() * sol.lambda + theta_.c() - sol.phi;

  grad.A.noalias() += e_dyn * dp.x.transpose();
  grad.B.noalias() += e_dyn * dp.u.transpose();
  grad.C.noalias() += e_dyn * sol.lambda.transpose();
  grad.d += e_dyn;

  Vec ec = ig * e_cmp;
  grad.D.noalias() += ec * dp.x.transpose();
  grad.E.noalias() += ec * dp.u.transpose();
  grad.c += ec;

  // dF = W, chained through F = G G' + H - H'.
  Mat W = ec * sol.lambda.transpose();
  grad.G.noalias() += (W + W.transpose()) * theta_.G();
  grad.H += W - W.transpose();
}

InnerSolution inner_violation_qp(const LcsParams& theta, const DataPoint& dp,
                                 const ViolationHyper& hyper) {
  hyper.validate();
  ViolationLossEvaluator eval(theta, hyper.epsilon);
  return eval.solve(dp, hyper.qp_tol);
}

ThetaGrad violation_grad(const LcsParams& theta, const DataPoint& dp, const InnerSolution& sol,
                         const ViolationHyper& hyper) {
  ThetaGrad grad(theta.n(), theta.m(), theta.r());
  ViolationLossEvaluator eval(theta, hyper.epsilon);
  eval.accumulate_grad(dp, sol, grad);
  return grad;
}

LcsParams init_params(Index n, Index m, Index r, Rng& rng, int max_attempts) {
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    Mat A = rng.uniform_mat(n, n, -0.5, 0.5);
    Mat B = rng.uniform_mat(n, m, -0.5, 0.5);
    Mat C = rng.uniform_mat(n, r, -0.5, 0.5);
    Vec d = rng.uniform_vec(n, -0.5, 0.5);
    Mat D = rng.uniform_mat(r, n, -0.5, 0.5);
    Mat E = rng.uniform_mat(r, m, -0.5, 0.5);
    Mat G = rng.uniform_mat(r, r, -0.5, 0.5);
    Mat H = rng.uniform_mat(r, r, -0.5, 0.5);
    Vec c = rng.uniform_vec(r, -0.5, 0.5);
    try {
      return LcsParams(std::move(A), std::move(B), std::move(C), std::move(d), std::move(D),
                       std::move(E), std::move(G), std::move(H), std::move(c));
    } catch (const NonMonotoneError&) {
      continue;
    }
  }
  throw GenerationExhaustedError("init_params: no valid draw in " + std::to_string(max_attempts) +
                                 " attempts");
}

namespace {

struct RawTheta {
  Mat A, B, C;
  Vec d;
  Mat D, E, G, H;
  Vec c;

  static RawTheta from(const LcsParams& p) {
    return {p.A(), p.B(), p.C(), p.d(), p.D(), p.E(), p.G(), p.H(), p.c()};
  }
  LcsParams to_params() const { return LcsParams(A, B, C, d, D, E, G, H, c); }
};

struct AdamState {
  ThetaGrad m1, m2;
  long t = 0;

  AdamState(Index n, Index m, Index r) : m1(n, m, r), m2(n, m, r) {}
};

void adam_block(Mat& param, Mat& m1, Mat& m2, const Mat& g, const ViolationHyper& h, double bc1,
                double bc2) {
  m1 = h.beta1 * m1 + (1.0 - h.beta1) * g;
  m2 = h.beta2 * m2.array().matrix() + (1.0 - h.beta2) * g.array().square().matrix();
  param.array() -= h.step_size * (m1.array() / bc1) / ((m2.array() / bc2).sqrt() + 1e-8);
}

void adam_vec(Vec& param, Vec& m1, Vec& m2, const Vec& g, const ViolationHyper& h, double bc1,
              double bc2) {
  m1 = h.beta1 * m1 + (1.0 - h.beta1) * g;
  m2 = h.beta2 * m2.array().matrix() + (1.0 - h.beta2) * g.array().square().matrix();
  param.array() -= h.step_size * (m1.array() / bc1) / ((m2.array() / bc2).sqrt() + 1e-8);
}

struct PassResult {
  double mean = 0.0;
  double min = 0.0;
  int skipped = 0;
};

// Mean and min buffer loss at a fixed theta; refreshes the warm cache.
PassResult exact_pass(const ViolationLossEvaluator& eval, const std::vector<DataPoint>& buffer,
                      const ViolationHyper& hyper, std::vector<Vec>& warm) {
  std::vector<double> losses(buffer.size(), 0.0);
  std::vector<char> ok(buffer.size(), 1);
  parallel_chunks(buffer.size(), hyper.threads, [&](std::size_t lo, std::size_t hi, std::size_t) {
    for (std::size_t i = lo; i < hi; ++i) {
      try {
        const Vec* w = warm[i].size() > 0 ? &warm[i] : nullptr;
        InnerSolution sol = eval.solve(buffer[i], hyper.qp_tol, w);
        Vec z(sol.lambda.size() + sol.phi.size());
        z << sol.lambda, sol.phi;
        warm[i] = std::move(z);
        losses[i] = sol.loss;
      } catch (const std::exception&) {
        ok[i] = 0;
      }
    }
  });
  PassResult res;
  res.min = std::numeric_limits<double>::infinity();
  double sum = 0.0;
  std::size_t n_ok = 0;
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    if (ok[i]) {
      sum += losses[i];
      res.min = std::min(res.min, losses[i]);
      ++n_ok;
    } else {
      ++res.skipped;
    }
  }
  if (n_ok == 0) throw NoConvergenceError("train: every inner QP failed on the buffer");
  res.mean = sum / static_cast<double>(n_ok);
  return res;
}

}  // namespace

TrainResult train(const LcsParams& theta_in, const std::vector<DataPoint>& buffer,
                  const ViolationHyper& hyper, Rng& rng) {
  hyper.validate();
  if (buffer.empty()) throw std::invalid_argument("train: empty buffer");
  const Index n = theta_in.n(), m = theta_in.m(), r = theta_in.r();
  for (const DataPoint& dp : buffer)
    if (dp.x.size() != n || dp.u.size() != m || dp.x_next.size() != n)
      throw DimensionError("train: datapoint dims disagree with theta");

  RawTheta raw = RawTheta::from(theta_in);
  AdamState adam(n, m, r);
  std::vector<Vec> warm(buffer.size());

  TrainResult out{theta_in, {}, 0.0, 0.0, 0, false};

  // Keep the LcsParams alive next to the evaluator referencing it.
  struct EvalHolder {
    std::unique_ptr<LcsParams> params;
    std::unique_ptr<ViolationLossEvaluator> eval;
  };
  auto make_holder = [&](const RawTheta& rt) {
    EvalHolder h;
    h.params = std::make_unique<LcsParams>(rt.to_params());
    h.eval = std::make_unique<ViolationLossEvaluator>(*h.params, hyper.epsilon);
    return h;
  };

  EvalHolder holder = make_holder(raw);
  out.initial_loss = exact_pass(*holder.eval, buffer, hyper, warm).mean;

  double best_loss = out.initial_loss;
  RawTheta best_raw = raw;

  std::vector<std::size_t> order(buffer.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t skip_budget =
      static_cast<std::size_t>(hyper.max_skip_fraction * static_cast<double>(buffer.size()));

  ThetaGrad batch_grad(n, m, r);
  const int n_threads = std::max(1, hyper.threads);

  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    // Fisher-Yates with the portable generator.
    for (std::size_t i = order.size() - 1; i > 0; --i)
      std::swap(order[i], order[rng.next_below(i + 1)]);

    std::size_t epoch_skips = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(hyper.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(hyper.batch_size));
      const std::size_t count = stop - start;

      std::vector<ThetaGrad> chunk_grads;
      std::vector<std::size_t> chunk_ok(static_cast<std::size_t>(n_threads), 0);
      std::vector<std::size_t> chunk_skip(static_cast<std::size_t>(n_threads), 0);
      for (int t = 0; t < n_threads; ++t) chunk_grads.emplace_back(n, m, r);

      parallel_chunks(count, n_threads, [&](std::size_t lo, std::size_t hi, std::size_t chunk) {
        for (std::size_t k = lo; k < hi; ++k) {
          const std::size_t idx = order[start + k];
          try {
            const Vec* w = warm[idx].size() > 0 ? &warm[idx] : nullptr;
            InnerSolution sol = holder.eval->solve(buffer[idx], hyper.qp_tol, w);
            Vec z(2 * r);
            z << sol.lambda, sol.phi;
            warm[idx] = std::move(z);
            holder.eval->accumulate_grad(buffer[idx], sol, chunk_grads[chunk]);
            ++chunk_ok[chunk];
          } catch (const std::exception&) {
            ++chunk_skip[chunk];
          }
        }
      });

      std::size_t n_ok = 0;
      batch_grad.setZero();
      for (int t = 0; t < n_threads; ++t) {
        batch_grad += chunk_grads[static_cast<std::size_t>(t)];
        n_ok += chunk_ok[static_cast<std::size_t>(t)];
        epoch_skips += chunk_skip[static_cast<std::size_t>(t)];
      }
      if (n_ok == 0) continue;
      batch_grad *= 1.0 / static_cast<double>(n_ok);

      ++adam.t;
      const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(adam.t));
      const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(adam.t));
      RawTheta prev = raw;
      adam_block(raw.A, adam.m1.A, adam.m2.A, batch_grad.A, hyper, bc1, bc2);
      adam_block(raw.B, adam.m1.B, adam.m2.B, batch_grad.B, hyper, bc1, bc2);
      adam_block(raw.C, adam.m1.C, adam.m2.C, batch_grad.C, hyper, bc1, bc2);
      adam_vec(raw.d, adam.m1.d, adam.m2.d, batch_grad.d, hyper, bc1, bc2);
      adam_block(raw.D, adam.m1.D, adam.m2.D, batch_grad.D, hyper, bc1, bc2);
      adam_block(raw.E, adam.m1.E, adam.m2.E, batch_grad.E, hyper, bc1, bc2);
      adam_block(raw.G, adam.m1.G, adam.m2.G, batch_grad.G, hyper, bc1, bc2);
      adam_block(raw.H, adam.m1.H, adam.m2.H, batch_grad.H, hyper, bc1, bc2);
      adam_vec(raw.c, adam.m1.c, adam.m2.c, batch_grad.c, hyper, bc1, bc2);

      // Updates act on (G, H), so F keeps a PSD symmetric part; a step can
      // still land within the rank-deficiency guard band. Halve it until valid.
      bool valid = false;
      for (int back = 0; back < 12 && !valid; ++back) {
        try {
          holder = make_holder(raw);
          valid = true;
        } catch (const NonMonotoneError&) {
          raw.G = 0.5 * (raw.G + prev.G);
          raw.H = 0.5 * (raw.H + prev.H);
        }
      }
      if (!valid) {
        raw = prev;
        holder = make_holder(raw);
      }
    }

    if (epoch_skips > skip_budget && skip_budget + 1 <= buffer.size()) {
      out.skipped_points += static_cast<int>(epoch_skips);
      out.aborted = true;
      break;
    }
    out.skipped_points += static_cast<int>(epoch_skips);

    const PassResult pass = exact_pass(*holder.eval, buffer, hyper, warm);
    out.history.push_back({pass.mean, pass.min});

    // Material improvement only, so a converged theta stays a fixed point.
    if (pass.mean < best_loss - 1e-14 * (1.0 + std::abs(best_loss))) {
      best_loss = pass.mean;
      best_raw = raw;
    }
  }

  // The returned theta must not score worse than theta_in.
  EvalHolder best_holder = make_holder(best_raw);
  const double final_loss = exact_pass(*best_holder.eval, buffer, hyper, warm).mean;
  if (final_loss <= out.initial_loss) {
    out.theta = *best_holder.params;
    out.final_loss = final_loss;
  } else {
    out.theta = theta_in;
    out.final_loss = out.initial_loss;
  }
  return out;
}

void write_loss_history_csv(const TrainResult& result, std::ostream& os) {
  os << "epoch,mean_loss,min_loss\n";
  char buf[32];
  for (std::size_t e = 0; e < result.history.size(); ++e) {
    std::snprintf(buf, sizeof(buf), "%.17g", result.history[e].mean_loss);
    os << e << ',' << buf;
    std::snprintf(buf, sizeof(buf), "%.17g", result.history[e].min_loss);
    os << ',' << buf << '\n';
  }
}

}  // namespace hmr

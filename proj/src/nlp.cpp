#include "hmr/nlp.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

namespace hmr {

namespace {

struct AlWorkspace {
  Vec h;       // equality values
  Mat jac;     // equality Jacobian
  Vec grad_f;  // objective gradient
};

// Augmented Lagrangian value; gradient optional.
double al_eval(const NlpProblem& p, const Vec& x, const Vec& nu, double mu, AlWorkspace& ws,
               Vec* grad) {
  double f;
  if (grad != nullptr) {
    f = p.objective(x, &ws.grad_f);
    *grad = ws.grad_f;
  } else {
    f = p.objective(x, nullptr);
  }
  if (p.eq_dim == 0) return f;

  if (grad != nullptr) {
    p.equality(x, ws.h, &ws.jac);
    grad->noalias() += ws.jac.transpose() * (nu + mu * ws.h);
  } else {
    p.equality(x, ws.h, nullptr);
  }
  return f + nu.dot(ws.h) + 0.5 * mu * ws.h.squaredNorm();
}

Vec clamp_box(const Vec& x, const Vec& lo, const Vec& hi) {
  return x.cwiseMax(lo).cwiseMin(hi);
}

struct InnerResult {
  double pg_norm = 0.0;
  int iterations = 0;
};

// Projected L-BFGS with Armijo backtracking along the projected arc.
InnerResult minimize_box(const NlpProblem& p, const Vec& nu, double mu, double tol_inner,
                         int max_iter, Vec& x, AlWorkspace& ws) {
  const Index n = p.dim;
  constexpr int kMemory = 10;
  constexpr double kArmijo = 1e-4;

  std::deque<Vec> s_hist, y_hist;
  std::deque<double> rho_hist;

  Vec grad(n), grad_new(n);
  double val = al_eval(p, x, nu, mu, ws, &grad);

  InnerResult res;
  for (int it = 0; it < max_iter; ++it) {
    res.iterations = it + 1;
    const double pg = (x - clamp_box(x - grad, p.lower, p.upper)).lpNorm<Eigen::Infinity>();
    res.pg_norm = pg;
    if (pg <= tol_inner) return res;

    // Two-loop recursion.
    Vec d = -grad;
    if (!s_hist.empty()) {
      std::vector<double> alpha(s_hist.size());
      for (int i = static_cast<int>(s_hist.size()) - 1; i >= 0; --i) {
        alpha[static_cast<size_t>(i)] =
            rho_hist[static_cast<size_t>(i)] * s_hist[static_cast<size_t>(i)].dot(d);
        d -= alpha[static_cast<size_t>(i)] * y_hist[static_cast<size_t>(i)];
      }
      const Vec& s_last = s_hist.back();
      const Vec& y_last = y_hist.back();
      d *= s_last.dot(y_last) / y_last.squaredNorm();
      for (size_t i = 0; i < s_hist.size(); ++i) {
        const double beta = rho_hist[i] * y_hist[i].dot(d);
        d += (alpha[i] - beta) * s_hist[i];
      }
    }

    auto backtrack = [&](const Vec& dir, double& step_val, Vec& x_trial) -> bool {
      double t = 1.0;
      for (int ls = 0; ls < 40; ++ls) {
        x_trial = clamp_box(x + t * dir, p.lower, p.upper);
        const double pred = grad.dot(x_trial - x);
        if (pred < 0.0) {
          step_val = al_eval(p, x_trial, nu, mu, ws, nullptr);
          if (step_val <= val + kArmijo * pred) return true;
        }
        t *= 0.5;
      }
      return false;
    };

    Vec x_new(n);
    double val_new = 0.0;
    if (!backtrack(d, val_new, x_new)) {
      // Quasi-Newton direction failed; retry along steepest descent.
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      d = -grad;
      if (!backtrack(d, val_new, x_new)) return res;  // stalled
    }

    val_new = al_eval(p, x_new, nu, mu, ws, &grad_new);
    Vec s = x_new - x;
    Vec yv = grad_new - grad;
    const double sy = s.dot(yv);
    if (sy > 1e-12 * s.norm() * yv.norm()) {
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(yv));
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > kMemory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    x = std::move(x_new);
    grad = grad_new;
    val = val_new;
  }
  res.pg_norm = (x - clamp_box(x - grad, p.lower, p.upper)).lpNorm<Eigen::Infinity>();
  return res;
}

}  // namespace

NlpResult solve_nlp(const NlpProblem& p, const NlpOptions& opts, const Vec* warm_multipliers) {
  if (p.dim <= 0) throw DimensionError("solve_nlp: empty decision vector");
  if (p.lower.size() != p.dim || p.upper.size() != p.dim || p.x0.size() != p.dim)
    throw DimensionError("solve_nlp: bound/start dimension mismatch");
  if (p.eq_dim > 0 && !p.equality) throw std::invalid_argument("solve_nlp: missing equality evaluator");

  AlWorkspace ws;
  ws.h = Vec::Zero(p.eq_dim);
  // Pre-zeroed and persistent across calls: equality evaluators are allowed
  // to write only their structural nonzeros.
  ws.jac = Mat::Zero(p.eq_dim, p.dim);
  ws.grad_f.resize(p.dim);

  NlpResult out;
  out.x = clamp_box(p.x0, p.lower, p.upper);
  out.multipliers = (warm_multipliers != nullptr && warm_multipliers->size() == p.eq_dim)
                        ? *warm_multipliers
                        : Vec(Vec::Zero(p.eq_dim));

  double mu = opts.initial_penalty;
  double prev_viol = std::numeric_limits<double>::infinity();
  const int outer_rounds = (p.eq_dim == 0) ? 1 : opts.max_outer;

  for (int round = 0; round < outer_rounds; ++round) {
    // Loose early stationarity, full accuracy on late rounds.
    const double tol_inner =
        (round + 2 >= outer_rounds || p.eq_dim == 0)
            ? opts.tol
            : std::max(opts.tol, 1e-2 * std::pow(0.1, round));
    InnerResult inner =
        minimize_box(p, out.multipliers, mu, tol_inner, opts.max_inner, out.x, ws);
    out.inner_iterations += inner.iterations;
    out.stationarity = inner.pg_norm;

    if (p.eq_dim == 0) break;
    p.equality(out.x, ws.h, nullptr);
    const double viol = ws.h.lpNorm<Eigen::Infinity>();
    out.multipliers += mu * ws.h;
    if (viol <= 10.0 * opts.tol && inner.pg_norm <= opts.tol) break;
    if (viol > 0.25 * prev_viol) mu *= opts.penalty_growth;
    prev_viol = viol;
  }

  out.objective = p.objective(out.x, nullptr);
  if (p.eq_dim > 0) {
    p.equality(out.x, ws.h, nullptr);
    out.constraint_violation = ws.h.lpNorm<Eigen::Infinity>();
  }
  out.penalty = mu;
  out.degraded = out.constraint_violation > 10.0 * opts.tol || out.stationarity > opts.tol;
  return out;
}

}  // namespace hmr

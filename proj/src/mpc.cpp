#include "hmr/mpc.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace hmr {

TrustRegion::TrustRegion(Vec center_in, Vec half_width_in)
    : center(std::move(center_in)), half_width(std::move(half_width_in)) {
  if (center.size() != half_width.size())
    throw DimensionError("TrustRegion: center/half_width dimension mismatch");
  if ((half_width.array() < 0.0).any())
    throw std::invalid_argument("TrustRegion: half_width must be >= 0");
}

TrustRegion TrustRegion::from_box(Index m, double lo, double hi) {
  if (!(lo <= hi)) throw std::invalid_argument("TrustRegion::from_box: empty box");
  return TrustRegion(Vec::Constant(m, 0.5 * (lo + hi)), Vec::Constant(m, 0.5 * (hi - lo)));
}

namespace {

void check_sym_psd(const Mat& M, bool strict, const char* who) {
  if (M.rows() != M.cols()) throw DimensionError(std::string(who) + ": must be square");
  if ((M - M.transpose()).cwiseAbs().maxCoeff() > 1e-10 * (1.0 + M.cwiseAbs().maxCoeff()))
    throw std::invalid_argument(std::string(who) + ": not symmetric");
  Eigen::SelfAdjointEigenSolver<Mat> eig(M);
  const double mn = eig.eigenvalues().minCoeff();
  if (strict ? (mn <= 0.0) : (mn < -1e-12 * (1.0 + std::abs(eig.eigenvalues().maxCoeff()))))
    throw std::invalid_argument(std::string(who) + (strict ? ": not positive definite"
                                                           : ": not positive semidefinite"));
}

}  // namespace

QuadCost::QuadCost(Mat Q_in, Mat R_in, Mat QT_in, std::optional<Vec> target_in)
    : Q(std::move(Q_in)), R(std::move(R_in)), Q_T(std::move(QT_in)) {
  check_sym_psd(Q, false, "QuadCost.Q");
  check_sym_psd(R, true, "QuadCost.R");
  check_sym_psd(Q_T, false, "QuadCost.Q_T");
  if (Q_T.rows() != Q.rows()) throw DimensionError("QuadCost: Q_T/Q dimension mismatch");
  target = target_in.has_value() ? std::move(*target_in) : Vec(Vec::Zero(Q.rows()));
  if (target.size() != Q.rows()) throw DimensionError("QuadCost: target dimension mismatch");
}

QuadCost QuadCost::identity(Index n, Index m) {
  return QuadCost(Mat::Identity(n, n), Mat::Identity(m, m), Mat::Identity(n, n));
}

double QuadCost::stage(const Vec& x, const Vec& u) const {
  Vec xt = x - target;
  return xt.dot(Q * xt) + u.dot(R * u);
}

double QuadCost::terminal(const Vec& x) const {
  Vec xt = x - target;
  return xt.dot(Q_T * xt);
}

namespace {

// Offsets into the stacked decision vector [x_{1:T} | u | lambda | s | xi].
struct Layout {
  Index n, m, r;
  int T;
  Index x0_off = 0, u_off = 0, lam_off = 0, s_off = 0, xi_off = 0, dim = 0, eq = 0;

  Layout(Index n_in, Index m_in, Index r_in, int T_in) : n(n_in), m(m_in), r(r_in), T(T_in) {
    const Index Ti = static_cast<Index>(T);
    u_off = Ti * n;
    lam_off = u_off + Ti * m;
    s_off = lam_off + Ti * r;
    xi_off = s_off + Ti * r;
    dim = xi_off + Ti;
    eq = Ti * (n + r + 1);
  }
  Index x(int t) const { return static_cast<Index>(t - 1) * n; }  // valid for t >= 1
  Index u(int t) const { return u_off + static_cast<Index>(t) * m; }
  Index lam(int t) const { return lam_off + static_cast<Index>(t) * r; }
  Index s(int t) const { return s_off + static_cast<Index>(t) * r; }
  Index xi(int t) const { return xi_off + static_cast<Index>(t); }
  Index row(int t) const { return static_cast<Index>(t) * (n + r + 1); }
};

struct Transcription {
  const LcsParams& theta;
  const QuadCost& cost;
  Layout lay;
  Vec x0;
  double sigma = 0.1;  // updated per relaxation stage

  Transcription(const LcsParams& th, const QuadCost& co, Vec x0_in, int T)
      : theta(th), cost(co), lay(th.n(), th.m(), th.r(), T), x0(std::move(x0_in)) {}

  double objective(const Vec& z, Vec* grad) const {
    const Index n = lay.n, m = lay.m;
    double f = cost.stage(x0, z.segment(lay.u(0), m));
    if (grad != nullptr) grad->setZero();
    for (int t = 0; t < lay.T; ++t) {
      if (t >= 1) {
        Vec xt = z.segment(lay.x(t), n) - cost.target;
        f += xt.dot(cost.Q * xt) + z.segment(lay.u(t), m).dot(cost.R * z.segment(lay.u(t), m));
        if (grad != nullptr) grad->segment(lay.x(t), n) = 2.0 * (cost.Q * xt);
      }
      if (grad != nullptr)
        grad->segment(lay.u(t), m) = 2.0 * (cost.R * z.segment(lay.u(t), m));
    }
    Vec xT = z.segment(lay.x(lay.T), n) - cost.target;
    f += xT.dot(cost.Q_T * xT);
    if (grad != nullptr) grad->segment(lay.x(lay.T), n) += 2.0 * (cost.Q_T * xT);
    return f;
  }

  // The solver pre-zeroes the Jacobian buffer, so only structural nonzeros
  // are written here (and rewritten on every call).
  void equality(const Vec& z, Vec& h, Mat* jac) const {
    const Index n = lay.n, m = lay.m, r = lay.r;
    for (int t = 0; t < lay.T; ++t) {
      const Index row_dyn = lay.row(t);
      const Index row_cmp = row_dyn + n;
      const Index row_prod = row_cmp + r;
      const bool x_is_var = t >= 1;
      const auto xt = x_is_var ? z.segment(lay.x(t), n) : x0.segment(0, n);
      const auto ut = z.segment(lay.u(t), m);
      const auto lt = z.segment(lay.lam(t), r);
      const auto st = z.segment(lay.s(t), r);

      h.segment(row_dyn, n) = z.segment(lay.x(t + 1), n) - theta.A() * xt - theta.B() * ut -
                              theta.C() * lt - theta.d();
      h.segment(row_cmp, r) = theta.D() * xt + theta.E() * ut + theta.F() * lt + theta.c() - st;
      h(row_prod) = lt.dot(st) + z(lay.xi(t)) - sigma;

      if (jac != nullptr) {
        jac->block(row_dyn, lay.x(t + 1), n, n) = Mat::Identity(n, n);
        if (x_is_var) {
          jac->block(row_dyn, lay.x(t), n, n) = -theta.A();
          jac->block(row_cmp, lay.x(t), r, n) = theta.D();
        }
        jac->block(row_dyn, lay.u(t), n, m) = -theta.B();
        jac->block(row_dyn, lay.lam(t), n, r) = -theta.C();
        jac->block(row_cmp, lay.u(t), r, m) = theta.E();
        jac->block(row_cmp, lay.lam(t), r, r) = theta.F();
        jac->block(row_cmp, lay.s(t), r, r) = -Mat::Identity(r, r);
        jac->block(row_prod, lay.lam(t), 1, r) = st.transpose();
        jac->block(row_prod, lay.s(t), 1, r) = lt.transpose();
        (*jac)(row_prod, lay.xi(t)) = 1.0;
      }
    }
  }
};

// Feasible seed: inputs pinned, states from the exact open-loop rollout,
// slacks matched to the complementarity function.
Vec seed_from_inputs(const Transcription& tr, const std::vector<Vec>& inputs, double lcp_tol,
                     double state_bound, double sigma0) {
  const Layout& lay = tr.lay;
  Vec z = Vec::Zero(lay.dim);
  Vec x = tr.x0;
  for (int t = 0; t < lay.T; ++t) {
    const Vec& u = inputs[static_cast<size_t>(t)];
    z.segment(lay.u(t), lay.m) = u;
    Vec q = tr.theta.D() * x + tr.theta.E() * u + tr.theta.c();
    Vec lam = Vec::Zero(lay.r);
    try {
      lam = tr.theta.lcp().solve(q, lcp_tol);
    } catch (const std::exception&) {
      // leave lambda at zero; the solver recovers feasibility
    }
    Vec w = tr.theta.F() * lam + q;
    z.segment(lay.lam(t), lay.r) = lam;
    z.segment(lay.s(t), lay.r) = w.cwiseMax(0.0);
    z(lay.xi(t)) = std::clamp(sigma0 - lam.dot(w), 0.0, sigma0);
    x = tr.theta.A() * x + tr.theta.B() * u + tr.theta.C() * lam + tr.theta.d();
    x = x.cwiseMax(-state_bound).cwiseMin(state_bound);
    z.segment(lay.x(t + 1), lay.n) = x;
  }
  return z;
}

struct StageResult {
  Vec z;
  Vec multipliers;
  double objective = 0.0;
  double sigma_final = 0.0;
  double dyn_violation = 0.0;
  int iterations = 0;
  bool degraded = false;
};

StageResult run_schedule(Transcription& tr, const TrustRegion& box,
                         const std::vector<double>& stages, Vec z0,
                         const PlannerOptions& opts) {
  const Layout& lay = tr.lay;

  NlpProblem p;
  p.dim = lay.dim;
  p.eq_dim = lay.eq;
  p.objective = [&tr](const Vec& z, Vec* grad) { return tr.objective(z, grad); };
  p.equality = [&tr](const Vec& z, Vec& h, Mat* jac) { tr.equality(z, h, jac); };

  p.lower = Vec::Constant(lay.dim, 0.0);
  p.upper = Vec::Constant(lay.dim, opts.state_bound);
  p.lower.head(lay.u_off).setConstant(-opts.state_bound);
  for (int t = 0; t < lay.T; ++t) {
    p.lower.segment(lay.u(t), lay.m) = box.lower();
    p.upper.segment(lay.u(t), lay.m) = box.upper();
  }

  StageResult out;
  out.z = std::move(z0);
  Vec nu;
  for (std::size_t k = 0; k < stages.size(); ++k) {
    tr.sigma = stages[k];
    const bool last = (k + 1 == stages.size());
    for (int t = 0; t < lay.T; ++t) {
      p.upper(lay.xi(t)) = tr.sigma;
      out.z(lay.xi(t)) = std::clamp(out.z(lay.xi(t)), 0.0, tr.sigma);
    }

    NlpOptions nopts;
    nopts.tol = last ? opts.nlp_tol : std::max(1e-3, opts.nlp_tol);
    nopts.max_inner = last ? opts.max_inner : std::max(60, opts.max_inner / 4);
    nopts.max_outer = last ? opts.max_outer : 3;
    p.x0 = out.z;
    NlpResult res = solve_nlp(p, nopts, nu.size() > 0 ? &nu : nullptr);
    out.z = res.x;
    nu = res.multipliers;
    out.iterations += res.inner_iterations;
    if (res.constraint_violation <= 10.0 * nopts.tol) out.sigma_final = tr.sigma;
    if (last) {
      out.degraded = res.degraded;
      // Dynamics rows only; the relaxation rows are allowed slack sigma.
      Vec h(lay.eq);
      tr.equality(out.z, h, nullptr);
      double dv = 0.0;
      for (int t = 0; t < lay.T; ++t)
        dv = std::max(dv, h.segment(lay.row(t), lay.n).lpNorm<Eigen::Infinity>());
      out.dyn_violation = dv;
    }
  }
  out.objective = tr.objective(out.z, nullptr);
  return out;
}

}  // namespace

MpcPlan plan(const LcsParams& theta, const Vec& x0, const QuadCost& cost, const TrustRegion& tr,
             int horizon, const PlannerOptions& opts, const MpcPlan* warm_start) {
  if (horizon < 1) throw std::invalid_argument("plan: horizon must be >= 1");
  if (x0.size() != theta.n()) throw DimensionError("plan: x0 dimension mismatch");
  if (tr.center.size() != theta.m()) throw DimensionError("plan: trust region dimension mismatch");
  if (cost.Q.rows() != theta.n() || cost.R.rows() != theta.m())
    throw DimensionError("plan: cost dimension mismatch");

  Transcription trans(theta, cost, x0, horizon);
  const Layout& lay = trans.lay;

  const bool warm = warm_start != nullptr &&
                    warm_start->inputs.size() == static_cast<size_t>(horizon) &&
                    warm_start->inputs.front().size() == theta.m();
  const std::vector<double>& stages = warm ? opts.warm_sigma_stages : opts.sigma_stages;
  const double sigma0 = stages.front();

  const Vec lo = tr.lower(), hi = tr.upper();
  auto clamp_u = [&](const Vec& u) { return u.cwiseMax(lo).cwiseMin(hi); };

  std::vector<StageResult> results;
  if (warm) {
    std::vector<Vec> inputs;
    inputs.reserve(static_cast<size_t>(horizon));
    for (const Vec& u : warm_start->inputs) inputs.push_back(clamp_u(u));
    results.push_back(run_schedule(trans, tr, stages,
                                   seed_from_inputs(trans, inputs, opts.lcp_tol,
                                                    opts.state_bound, sigma0),
                                   opts));
  }
  const int cold_starts = warm ? (opts.multi_start - 1) : std::max(1, opts.multi_start);
  for (int k = 0; k < cold_starts; ++k) {
    Vec u_const = tr.center;
    if (k > 0) {
      const double frac = static_cast<double>(k) / static_cast<double>(std::max(1, opts.multi_start - 1));
      u_const = lo + frac * (hi - lo);
    }
    std::vector<Vec> inputs(static_cast<size_t>(horizon), u_const);
    results.push_back(run_schedule(trans, tr, opts.sigma_stages,
                                   seed_from_inputs(trans, inputs, opts.lcp_tol,
                                                    opts.state_bound, opts.sigma_stages.front()),
                                   opts));
  }

  const StageResult* best = &results.front();
  for (const StageResult& r : results)
    if (std::isfinite(r.objective) && r.objective < best->objective) best = &r;

  MpcPlan out;
  out.states.reserve(static_cast<size_t>(horizon) + 1);
  out.states.push_back(x0);
  out.inputs.reserve(static_cast<size_t>(horizon));
  out.lambdas.reserve(static_cast<size_t>(horizon));
  double shift = 0.0;
  for (int t = 0; t < horizon; ++t) {
    Vec u = best->z.segment(lay.u(t), lay.m);
    Vec uc = clamp_u(u);
    shift = std::max(shift, (u - uc).lpNorm<Eigen::Infinity>());
    out.inputs.push_back(std::move(uc));
    out.lambdas.push_back(best->z.segment(lay.lam(t), lay.r));
    out.states.push_back(best->z.segment(lay.x(t + 1), lay.n));
  }
  out.projection_shift = shift;
  out.sigma_final = best->sigma_final;
  out.dynamics_violation = best->dyn_violation;
  out.nlp_iterations = best->iterations;
  out.degraded = best->degraded || best->dyn_violation > 10.0 * opts.nlp_tol;

  double obj = 0.0;
  for (int t = 0; t < horizon; ++t)
    obj += cost.stage(out.states[static_cast<size_t>(t)], out.inputs[static_cast<size_t>(t)]);
  obj += cost.terminal(out.states.back());
  out.objective = obj;
  return out;
}

Rollout receding_rollout(Environment& env, const LcsParams& theta_g, const QuadCost& cost,
                         const TrustRegion& tr, int rollout_horizon, int plan_horizon,
                         const Vec& x0, const PlannerOptions& opts, double explosion_bound) {
  if (rollout_horizon < 1) throw std::invalid_argument("receding_rollout: horizon must be >= 1");

  Rollout out;
  out.traj.states.push_back(x0);
  Vec x = x0;
  MpcPlan prev;
  bool have_prev = false;

  for (int k = 0; k < rollout_horizon; ++k) {
    MpcPlan shifted;
    if (have_prev) {
      shifted.inputs.assign(prev.inputs.begin() + 1, prev.inputs.end());
      shifted.inputs.push_back(prev.inputs.back());
    }
    const auto t_start = std::chrono::steady_clock::now();
    MpcPlan p = plan(theta_g, x, cost, tr, plan_horizon, opts, have_prev ? &shifted : nullptr);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    out.plan_log.push_back({k, p.objective, p.sigma_final, p.nlp_iterations, p.degraded, secs});

    const Vec& u = p.inputs.front();
    Vec model_lambda = lcs_step(theta_g, x, u, opts.lcp_tol).lambda;

    StepResult res = env.step(x, u, opts.lcp_tol);
    if (res.x_next.norm() > explosion_bound) {
      out.aborted = true;
      break;
    }
    out.traj.inputs.push_back(u);
    out.traj.signatures.push_back(mode_signature(res.lambda));
    out.traj.lambdas.push_back(std::move(res.lambda));
    out.traj.states.push_back(res.x_next);
    out.model_lambdas.push_back(std::move(model_lambda));
    x = std::move(res.x_next);
    prev = std::move(p);
    have_prev = true;
  }
  return out;
}

TrustRegion trust_region_from_inputs(const std::vector<Vec>& inputs, double eta) {
  if (inputs.size() < 2)
    throw DegenerateBufferError("trust_region_from_inputs: need at least 2 inputs");
  if (!(eta > 0.0)) throw std::invalid_argument("trust_region_from_inputs: eta must be > 0");
  const Index m = inputs.front().size();
  Vec mean = Vec::Zero(m);
  for (const Vec& u : inputs) {
    if (u.size() != m) throw DimensionError("trust_region_from_inputs: mixed input dims");
    mean += u;
  }
  mean /= static_cast<double>(inputs.size());
  Vec var = Vec::Zero(m);
  for (const Vec& u : inputs) var += (u - mean).array().square().matrix();
  var /= static_cast<double>(inputs.size());  // population convention
  return TrustRegion(std::move(mean), eta * var.cwiseSqrt());
}

namespace {
constexpr const char* kTrSchema = "hmr-tr v1";
}

void save_trust_region(const TrustRegion& tr, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("save_trust_region: cannot open " + path);
  os << kTrSchema << '\n' << tr.center.size() << '\n';
  char buf[32];
  for (Index i = 0; i < tr.center.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", tr.center(i));
    os << buf << (i + 1 < tr.center.size() ? " " : "\n");
  }
  if (tr.center.size() == 0) os << '\n';
  for (Index i = 0; i < tr.half_width.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", tr.half_width(i));
    os << buf << (i + 1 < tr.half_width.size() ? " " : "\n");
  }
  if (tr.half_width.size() == 0) os << '\n';
}

TrustRegion load_trust_region(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("load_trust_region: cannot open " + path);
  std::string line;
  if (!std::getline(is, line) || line != kTrSchema)
    throw IoError("load_trust_region: schema mismatch in " + path);
  Index m = 0;
  if (!(is >> m) || m < 0) throw IoError("load_trust_region: bad dimension in " + path);
  Vec center(m), half(m);
  for (Index i = 0; i < m; ++i)
    if (!(is >> center(i))) throw IoError("load_trust_region: truncated center in " + path);
  for (Index i = 0; i < m; ++i)
    if (!(is >> half(i))) throw IoError("load_trust_region: truncated width in " + path);
  return TrustRegion(std::move(center), std::move(half));
}

void write_plan_log_csv(const Rollout& rollout, std::ostream& os) {
  os << "step,objective,sigma_final,iterations,degraded\n";
  char buf[32];
  for (const PlanStepLog& l : rollout.plan_log) {
    std::snprintf(buf, sizeof(buf), "%.17g", l.objective);
    os << l.step << ',' << buf;
    std::snprintf(buf, sizeof(buf), "%.17g", l.sigma_final);
    os << ',' << buf << ',' << l.iterations << ',' << (l.degraded ? 1 : 0) << '\n';
  }
}

}  // namespace hmr

#include "hmr/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "hmr/parallel.hpp"

namespace hmr {

double relative_model_error(const LcsParams& theta_g, const std::vector<DataPoint>& dataset,
                            double lcp_tol) {
  if (dataset.empty()) throw std::invalid_argument("relative_model_error: empty dataset");
  double sum = 0.0;
  for (const DataPoint& dp : dataset) {
    Vec pred = lcs_step(theta_g, dp.x, dp.u, lcp_tol).x_next;
    sum += (pred - dp.x_next).squaredNorm() / (dp.x_next.squaredNorm() + 1e-6);
  }
  return 100.0 * sum / static_cast<double>(dataset.size());
}

double rollout_cost(const Rollout& rollout, const QuadCost& cost) {
  const Trajectory& traj = rollout.traj;
  if (traj.states.empty()) throw std::invalid_argument("rollout_cost: empty rollout");
  double j = 0.0;
  for (const Vec& x : traj.states) {
    Vec xt = x - cost.target;
    j += xt.dot(cost.Q * xt);
  }
  for (const Vec& u : traj.inputs) j += u.dot(cost.R * u);
  j += cost.terminal(traj.states.back());
  return j;
}

double rollout_cost_stage_only(const Rollout& rollout, const QuadCost& cost) {
  const Trajectory& traj = rollout.traj;
  if (traj.states.empty()) throw std::invalid_argument("rollout_cost: empty rollout");
  double j = 0.0;
  for (const Vec& x : traj.states) {
    Vec xt = x - cost.target;
    j += xt.dot(cost.Q * xt);
  }
  for (const Vec& u : traj.inputs) j += u.dot(cost.R * u);
  return j;
}

double performance_gap(double j_gmpc, double j_fmpc) {
  if (!(j_fmpc > 0.0))
    throw DegenerateBaselineError("performance_gap: baseline cost must be positive");
  return 100.0 * (j_gmpc - j_fmpc) / j_fmpc;
}

BaselineResult f_mpc_baseline(const Environment& env, const QuadCost& cost,
                              const std::vector<Vec>& x0_batch, int plan_horizon,
                              int rollout_horizon, const PlannerOptions& opts, double box_lo,
                              double box_hi, int threads) {
  if (x0_batch.empty()) throw std::invalid_argument("f_mpc_baseline: empty x0 batch");
  TrustRegion box = TrustRegion::from_box(env.theta().m(), box_lo, box_hi);

  BaselineResult out;
  out.rollouts.resize(x0_batch.size());
  parallel_chunks(x0_batch.size(), threads, [&](std::size_t lo, std::size_t hi, std::size_t) {
    for (std::size_t i = lo; i < hi; ++i) {
      Environment clone = env.clone_fresh();
      out.rollouts[i] = receding_rollout(clone, env.theta(), cost, box, rollout_horizon,
                                         plan_horizon, x0_batch[i], opts);
    }
  });

  double cost_sum = 0.0, stage_sum = 0.0;
  std::size_t completed = 0, degraded = 0, plans = 0;
  for (const Rollout& r : out.rollouts) {
    if (r.aborted) {
      ++out.aborted_rollouts;
      continue;
    }
    cost_sum += rollout_cost(r, cost);
    stage_sum += rollout_cost_stage_only(r, cost);
    ++completed;
    for (const PlanStepLog& l : r.plan_log) {
      ++plans;
      if (l.degraded) ++degraded;
    }
  }
  if (completed == 0) throw DegenerateBaselineError("f_mpc_baseline: all rollouts aborted");
  out.mean_cost = cost_sum / static_cast<double>(completed);
  out.mean_cost_stage_only = stage_sum / static_cast<double>(completed);
  out.degraded_plan_rate = plans == 0 ? 0.0 : static_cast<double>(degraded) / static_cast<double>(plans);
  return out;
}

namespace {

// Stacked states x_1..x_H and the per-step signatures of one simulation.
struct SimResult {
  Vec stacked;
  std::vector<ModeSignature> signatures;
};

SimResult simulate_stacked(const LcsParams& theta, const Vec& x0, const std::vector<Vec>& u_seq,
                           double lcp_tol) {
  Trajectory traj = lcs_rollout(theta, x0, u_seq, lcp_tol, 1e12);
  const Index n = theta.n();
  SimResult res;
  res.stacked.resize(static_cast<Index>(u_seq.size()) * n);
  for (std::size_t t = 0; t < u_seq.size(); ++t)
    res.stacked.segment(static_cast<Index>(t) * n, n) = traj.states[t + 1];
  res.signatures = std::move(traj.signatures);
  return res;
}

}  // namespace

LemmaDiagnostics lemma_diagnostics(const LcsParams& theta_g, const Environment& env,
                                   const std::vector<Rollout>& rollouts, double fd_step,
                                   double lcp_tol) {
  if (!(fd_step > 0.0)) throw std::invalid_argument("lemma_diagnostics: fd_step must be > 0");
  LemmaDiagnostics out;
  double zeroth_sum = 0.0, first_sum = 0.0;
  int used = 0;

  for (const Rollout& rollout : rollouts) {
    const std::vector<Vec>& u_seq = rollout.traj.inputs;
    if (u_seq.empty()) continue;
    const Vec& x0 = rollout.traj.states.front();
    const Index m = u_seq.front().size();
    const int H = static_cast<int>(u_seq.size());

    SimResult f_base, g_base;
    try {
      f_base = simulate_stacked(env.theta(), x0, u_seq, lcp_tol);
      g_base = simulate_stacked(theta_g, x0, u_seq, lcp_tol);
    } catch (const std::exception&) {
      continue;
    }
    zeroth_sum += (f_base.stacked - g_base.stacked).norm();

    double fro_sq = 0.0;
    for (int t = 0; t < H; ++t) {
      for (Index j = 0; j < m; ++j) {
        const double delta = fd_step * (1.0 + std::abs(u_seq[static_cast<size_t>(t)](j)));
        std::vector<Vec> up = u_seq, dn = u_seq;
        up[static_cast<size_t>(t)](j) += delta;
        dn[static_cast<size_t>(t)](j) -= delta;
        ++out.total_coords;
        SimResult fu, fd, gu, gd;
        try {
          fu = simulate_stacked(env.theta(), x0, up, lcp_tol);
          fd = simulate_stacked(env.theta(), x0, dn, lcp_tol);
          gu = simulate_stacked(theta_g, x0, up, lcp_tol);
          gd = simulate_stacked(theta_g, x0, dn, lcp_tol);
        } catch (const std::exception&) {
          ++out.excluded_coords;
          continue;
        }
        // A signature flip under the probe means the FD estimate straddles a
        // mode boundary; skip the coordinate and report it.
        if (fu.signatures != f_base.signatures || fd.signatures != f_base.signatures ||
            gu.signatures != g_base.signatures || gd.signatures != g_base.signatures) {
          ++out.excluded_coords;
          continue;
        }
        Vec col_f = (fu.stacked - fd.stacked) / (2.0 * delta);
        Vec col_g = (gu.stacked - gd.stacked) / (2.0 * delta);
        fro_sq += (col_f - col_g).squaredNorm();
      }
    }
    first_sum += std::sqrt(fro_sq);
    ++used;
  }

  if (used > 0) {
    out.zeroth = zeroth_sum / static_cast<double>(used);
    out.first = first_sum / static_cast<double>(used);
  }
  out.rollouts_used = used;
  return out;
}

EvalReport evaluate(const Environment& env, const LcsParams& theta_g, const QuadCost& cost,
                    const TrustRegion& tr, const EvalConfig& cfg, const Rng& eval_rng,
                    const PlannerOptions& popts) {
  if (theta_g.n() != env.theta().n() || theta_g.m() != env.theta().m())
    throw DimensionError("evaluate: reduced model dims disagree with environment");

  // Held-out batch, shared by every policy under evaluation.
  Rng x0_rng = eval_rng.substream(1);
  std::vector<Vec> x0_batch;
  x0_batch.reserve(static_cast<size_t>(cfg.eval_rollouts));
  for (int i = 0; i < cfg.eval_rollouts; ++i)
    x0_batch.push_back(sample_x0(env.config(), x0_rng));

  EvalReport rep;

  // Random-policy sweep: modes visited in f over the census batch, model
  // error over the first eval_rollouts episodes only.
  {
    const std::size_t census = static_cast<std::size_t>(
        std::max(cfg.mode_count_rollouts, cfg.eval_rollouts));
    std::vector<Vec> starts = x0_batch;
    Rng extra_rng = eval_rng.substream(2);
    while (starts.size() < census) starts.push_back(sample_x0(env.config(), extra_rng));

    std::vector<std::set<ModeSignature>> sigs(census);
    std::vector<std::vector<DataPoint>> triplets(census);
    parallel_chunks(census, cfg.threads, [&](std::size_t lo, std::size_t hi, std::size_t) {
      for (std::size_t i = lo; i < hi; ++i) {
        Environment clone = env.clone_fresh();
        Rng u_rng = eval_rng.substream(1000 + i);
        Vec x = starts[i];
        const bool keep_triplets = i < x0_batch.size();
        for (int t = 0; t < cfg.rollout_horizon; ++t) {
          Vec u = random_policy(env.config(), u_rng);
          StepResult res;
          try {
            res = clone.step(x, u, cfg.lcp_tol);
          } catch (const std::exception&) {
            break;
          }
          if (res.x_next.norm() > cfg.explosion_bound) break;
          sigs[i].insert(mode_signature(res.lambda));
          if (keep_triplets) triplets[i].push_back({x, u, res.x_next});
          x = res.x_next;
        }
      }
    });
    std::set<ModeSignature> all;
    std::vector<DataPoint> data;
    for (std::size_t i = 0; i < census; ++i) {
      all.insert(sigs[i].begin(), sigs[i].end());
      data.insert(data.end(), triplets[i].begin(), triplets[i].end());
    }
    rep.random_modes_in_f = all.size();
    if (!data.empty()) rep.random_me_pct = relative_model_error(theta_g, data, cfg.lcp_tol);
  }

  // On-policy g-MPC rollouts.
  std::vector<Rollout> g_rollouts(x0_batch.size());
  parallel_chunks(x0_batch.size(), cfg.threads, [&](std::size_t lo, std::size_t hi, std::size_t) {
    for (std::size_t i = lo; i < hi; ++i) {
      Environment clone = env.clone_fresh();
      g_rollouts[i] = receding_rollout(clone, theta_g, cost, tr, cfg.rollout_horizon,
                                       cfg.plan_horizon, x0_batch[i], popts, cfg.explosion_bound);
    }
  });

  {
    std::set<ModeSignature> f_sigs, g_sigs;
    std::vector<DataPoint> data;
    double cost_sum = 0.0, stage_sum = 0.0;
    std::size_t completed = 0, degraded = 0, plans = 0;
    for (const Rollout& r : g_rollouts) {
      if (r.aborted) {
        ++rep.aborted_gmpc_rollouts;
        continue;
      }
      ++completed;
      cost_sum += rollout_cost(r, cost);
      stage_sum += rollout_cost_stage_only(r, cost);
      for (std::size_t t = 0; t < r.traj.inputs.size(); ++t) {
        f_sigs.insert(r.traj.signatures[t]);
        g_sigs.insert(mode_signature(r.model_lambdas[t]));
        data.push_back({r.traj.states[t], r.traj.inputs[t], r.traj.states[t + 1]});
      }
      for (const PlanStepLog& l : r.plan_log) {
        ++plans;
        if (l.degraded) ++degraded;
      }
    }
    if (completed == 0) throw NoConvergenceError("evaluate: every g-MPC rollout aborted");
    rep.gmpc_modes_in_f = f_sigs.size();
    rep.modes_in_g = g_sigs.size();
    rep.j_gmpc = cost_sum / static_cast<double>(completed);
    rep.j_gmpc_stage_only = stage_sum / static_cast<double>(completed);
    rep.gmpc_degraded_rate =
        plans == 0 ? 0.0 : static_cast<double>(degraded) / static_cast<double>(plans);
    if (!data.empty()) rep.onpolicy_me_pct = relative_model_error(theta_g, data, cfg.lcp_tol);
  }

  if (cfg.with_baseline) {
    BaselineResult base = f_mpc_baseline(env, cost, x0_batch, cfg.plan_horizon,
                                         cfg.rollout_horizon, popts, cfg.fmpc_box_lo,
                                         cfg.fmpc_box_hi, cfg.threads);
    rep.j_fmpc = base.mean_cost;
    rep.j_fmpc_stage_only = base.mean_cost_stage_only;
    rep.fmpc_degraded_rate = base.degraded_plan_rate;
    rep.gap_pct = performance_gap(rep.j_gmpc, rep.j_fmpc);
  }

  if (cfg.with_lemma) {
    std::vector<Rollout> subset;
    for (const Rollout& r : g_rollouts) {
      if (r.aborted) continue;
      subset.push_back(r);
      if (static_cast<int>(subset.size()) >= cfg.lemma_rollouts) break;
    }
    rep.lemma = lemma_diagnostics(theta_g, env, subset, cfg.fd_step, cfg.lcp_tol);
  }
  return rep;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

void write_eval_report_json(const EvalReport& r, std::ostream& os) {
  os << "{\n"
     << "  \"schema_version\": 1,\n"
     << "  \"random_modes_in_f\": " << r.random_modes_in_f << ",\n"
     << "  \"random_me_pct\": " << fmt(r.random_me_pct) << ",\n"
     << "  \"gmpc_modes_in_f\": " << r.gmpc_modes_in_f << ",\n"
     << "  \"onpolicy_me_pct\": " << fmt(r.onpolicy_me_pct) << ",\n"
     << "  \"modes_in_g\": " << r.modes_in_g << ",\n"
     << "  \"j_gmpc\": " << fmt(r.j_gmpc) << ",\n"
     << "  \"j_fmpc\": " << fmt(r.j_fmpc) << ",\n"
     << "  \"gap_pct\": " << fmt(r.gap_pct) << ",\n"
     << "  \"j_gmpc_stage_only\": " << fmt(r.j_gmpc_stage_only) << ",\n"
     << "  \"j_fmpc_stage_only\": " << fmt(r.j_fmpc_stage_only) << ",\n"
     << "  \"gmpc_degraded_rate\": " << fmt(r.gmpc_degraded_rate) << ",\n"
     << "  \"fmpc_degraded_rate\": " << fmt(r.fmpc_degraded_rate) << ",\n"
     << "  \"aborted_gmpc_rollouts\": " << r.aborted_gmpc_rollouts << ",\n"
     << "  \"lemma_zeroth\": " << fmt(r.lemma.zeroth) << ",\n"
     << "  \"lemma_first\": " << fmt(r.lemma.first) << ",\n"
     << "  \"lemma_excluded_coords\": " << r.lemma.excluded_coords << ",\n"
     << "  \"lemma_total_coords\": " << r.lemma.total_coords << "\n"
     << "}\n";
}

Aggregate aggregate(const std::vector<double>& values) {
  Aggregate a;
  a.count = static_cast<int>(values.size());
  if (values.empty()) return a;
  double sum = 0.0;
  for (double v : values) sum += v;
  a.mean = sum / static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - a.mean) * (v - a.mean);
  a.stddev = std::sqrt(var / static_cast<double>(values.size()));
  return a;
}

void write_table_csv_header(std::ostream& os) {
  os << "case,dim_x,dim_u,dim_Lambda,dim_lambda,trials,"
        "random_modes_in_f_mean,random_modes_in_f_std,"
        "random_me_pct_mean,random_me_pct_std,"
        "gmpc_modes_in_f_mean,gmpc_modes_in_f_std,"
        "onpolicy_me_pct_mean,onpolicy_me_pct_std,"
        "modes_in_g_mean,modes_in_g_std,"
        "gap_pct_mean,gap_pct_std\n";
}

void write_table_csv_row(const std::string& case_name, Index dim_x, Index dim_u, Index dim_big,
                         Index dim_small, const std::vector<EvalReport>& trials,
                         std::ostream& os) {
  auto col = [&](auto getter) {
    std::vector<double> vals;
    vals.reserve(trials.size());
    for (const EvalReport& r : trials) vals.push_back(getter(r));
    return aggregate(vals);
  };
  const Aggregate rmf = col([](const EvalReport& r) { return static_cast<double>(r.random_modes_in_f); });
  const Aggregate rme = col([](const EvalReport& r) { return r.random_me_pct; });
  const Aggregate gmf = col([](const EvalReport& r) { return static_cast<double>(r.gmpc_modes_in_f); });
  const Aggregate ome = col([](const EvalReport& r) { return r.onpolicy_me_pct; });
  const Aggregate mg = col([](const EvalReport& r) { return static_cast<double>(r.modes_in_g); });
  const Aggregate gap = col([](const EvalReport& r) { return r.gap_pct; });
  os << case_name << ',' << dim_x << ',' << dim_u << ',' << dim_big << ',' << dim_small << ','
     << trials.size() << ',' << fmt(rmf.mean) << ',' << fmt(rmf.stddev) << ',' << fmt(rme.mean)
     << ',' << fmt(rme.stddev) << ',' << fmt(gmf.mean) << ',' << fmt(gmf.stddev) << ','
     << fmt(ome.mean) << ',' << fmt(ome.stddev) << ',' << fmt(mg.mean) << ',' << fmt(mg.stddev)
     << ',' << fmt(gap.mean) << ',' << fmt(gap.stddev) << '\n';
}

}  // namespace hmr

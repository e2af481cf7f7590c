#include "hmr/loop.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "hmr/parallel.hpp"

namespace hmr {

void LoopConfig::validate() const {
  if (plan_horizon < 1 || rollout_horizon < 1 || rollouts_per_iter < 1 || buffer_capacity < 1 ||
      iterations < 0)
    throw ConfigError("LoopConfig: horizons and counts must be positive");
  if (rollouts_per_iter > buffer_capacity)
    throw ConfigError("LoopConfig: rollouts_per_iter must not exceed buffer_capacity");
  if (!(eta > 0.0)) throw ConfigError("LoopConfig: eta must be > 0");
}

RolloutBuffer::RolloutBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ == 0) throw ConfigError("RolloutBuffer: capacity must be >= 1");
}

void RolloutBuffer::push(Rollout rollout) {
  rollouts_.push_back(std::move(rollout));
  while (rollouts_.size() > capacity_) rollouts_.pop_front();
}

std::vector<DataPoint> RolloutBuffer::datapoints() const {
  std::vector<DataPoint> out;
  out.reserve(total_steps());
  for (const Rollout& r : rollouts_)
    for (std::size_t t = 0; t < r.traj.inputs.size(); ++t)
      out.push_back({r.traj.states[t], r.traj.inputs[t], r.traj.states[t + 1]});
  return out;
}

std::vector<Vec> RolloutBuffer::inputs() const {
  std::vector<Vec> out;
  out.reserve(total_steps());
  for (const Rollout& r : rollouts_)
    for (const Vec& u : r.traj.inputs) out.push_back(u);
  return out;
}

std::size_t RolloutBuffer::total_steps() const {
  std::size_t n = 0;
  for (const Rollout& r : rollouts_) n += r.traj.inputs.size();
  return n;
}

TrustRegion trust_region_from_buffer(const RolloutBuffer& buffer, double eta) {
  return trust_region_from_inputs(buffer.inputs(), eta);
}

RolloutBuffer init_buffer(Environment& env, const LoopConfig& cfg, Rng& rng) {
  cfg.validate();
  RolloutBuffer buffer(static_cast<std::size_t>(cfg.buffer_capacity));
  for (int i = 0; i < cfg.rollouts_per_iter; ++i) {
    Rollout rollout;
    Vec x = sample_x0(env.config(), rng);
    rollout.traj.states.push_back(x);
    for (int t = 0; t < cfg.rollout_horizon; ++t) {
      Vec u = random_policy(env.config(), rng);
      StepResult res = env.step(x, u);
      if (res.x_next.norm() > cfg.explosion_bound) {
        rollout.aborted = true;
        break;
      }
      rollout.traj.inputs.push_back(u);
      rollout.traj.signatures.push_back(mode_signature(res.lambda));
      rollout.traj.lambdas.push_back(std::move(res.lambda));
      rollout.traj.states.push_back(res.x_next);
      x = res.x_next;
    }
    buffer.push(std::move(rollout));
  }
  return buffer;
}

namespace {

struct RolloutSlot {
  Rollout rollout;
  bool ok = false;
  int attempts = 0;
};

}  // namespace

IterationOutcome run_iteration(LoopState& state, Environment& env, const LoopConfig& cfg,
                               const ViolationHyper& hyper, const QuadCost& cost,
                               const PlannerOptions& popts, Rng& rng) {
  cfg.validate();
  if (state.buffer.size() == 0)
    throw std::invalid_argument("run_iteration: buffer must be nonempty");

  // 1) Train on the current buffer.
  std::vector<DataPoint> data = state.buffer.datapoints();
  ViolationHyper h = hyper;
  h.threads = cfg.threads;
  Rng train_rng = rng.substream(0xA11);
  TrainResult trained = train(state.theta, data, h, train_rng);

  // 2) Trust region from the buffer as it stands, before any new rollout.
  TrustRegion tr = trust_region_from_buffer(state.buffer, cfg.eta);

  // 3) Closed-loop episodes with the freshly trained model.
  const std::size_t n_new = static_cast<std::size_t>(cfg.rollouts_per_iter);
  std::vector<RolloutSlot> slots(n_new);
  std::vector<Environment> clones;
  clones.reserve(n_new);
  for (std::size_t i = 0; i < n_new; ++i) clones.push_back(env.clone_fresh());

  parallel_chunks(n_new, cfg.threads, [&](std::size_t lo, std::size_t hi, std::size_t) {
    for (std::size_t i = lo; i < hi; ++i) {
      Rng slot_rng = rng.substream(0xB000 + i);
      // One resample on failure, then give up on the slot.
      for (int attempt = 0; attempt < 2 && !slots[i].ok; ++attempt) {
        ++slots[i].attempts;
        Vec x0 = sample_x0(env.config(), slot_rng);
        try {
          Rollout r = receding_rollout(clones[i], trained.theta, cost, tr, cfg.rollout_horizon,
                                       cfg.plan_horizon, x0, popts, cfg.explosion_bound);
          if (!r.aborted && r.traj.length() == cfg.rollout_horizon) {
            slots[i].rollout = std::move(r);
            slots[i].ok = true;
          }
        } catch (const std::exception&) {
          // treat as a failed attempt
        }
      }
    }
  });

  int failed = 0;
  for (const RolloutSlot& s : slots)
    if (!s.ok) ++failed;
  if (failed * 2 > cfg.rollouts_per_iter) {
    return {true, "run_iteration: " + std::to_string(failed) + " of " +
                      std::to_string(cfg.rollouts_per_iter) + " rollouts failed"};
  }

  // Merge environment logs in slot order.
  for (const Environment& c : clones) env.merge_log(c);

  // 4) Book-keeping and curves.
  IterationRecord rec;
  rec.iteration = state.completed_iterations;
  rec.tr_center = tr.center;
  rec.tr_half_width = tr.half_width;
  rec.train_initial_loss = trained.initial_loss;
  rec.train_final_loss = trained.final_loss;
  rec.train_history = std::move(trained.history);
  rec.failed_rollouts = failed;

  std::vector<DataPoint> new_points;
  std::vector<Rollout> new_rollouts;
  std::set<ModeSignature> f_sigs, g_sigs;
  double cost_sum = 0.0;
  std::size_t plans = 0, degraded = 0;
  for (RolloutSlot& s : slots) {
    if (!s.ok) continue;
    const Rollout& r = s.rollout;
    cost_sum += rollout_cost(r, cost);
    for (std::size_t t = 0; t < r.traj.inputs.size(); ++t) {
      f_sigs.insert(r.traj.signatures[t]);
      g_sigs.insert(mode_signature(r.model_lambdas[t]));
      new_points.push_back({r.traj.states[t], r.traj.inputs[t], r.traj.states[t + 1]});
    }
    for (const PlanStepLog& l : r.plan_log) {
      ++plans;
      if (l.degraded) ++degraded;
    }
    new_rollouts.push_back(r);
  }
  const std::size_t ok_count = n_new - static_cast<std::size_t>(failed);
  rec.mean_rollout_cost = cost_sum / static_cast<double>(ok_count);
  rec.modes_in_f = f_sigs.size();
  rec.modes_in_g = g_sigs.size();
  rec.degraded_plan_rate =
      plans == 0 ? 0.0 : static_cast<double>(degraded) / static_cast<double>(plans);
  if (!new_points.empty())
    rec.onpolicy_me_pct = relative_model_error(trained.theta, new_points, popts.lcp_tol);

  LemmaDiagnostics lemma = lemma_diagnostics(trained.theta, env, new_rollouts, 1e-4, popts.lcp_tol);
  rec.lemma_zeroth = lemma.zeroth;
  rec.lemma_first = lemma.first;

  // 5) Commit: new model, appended buffer, one curve record.
  state.theta = trained.theta;
  for (Rollout& r : new_rollouts) state.buffer.push(std::move(r));
  rec.buffer_rollouts = state.buffer.size();
  rec.buffer_points = state.buffer.total_steps();
  state.curves.push_back(std::move(rec));
  ++state.completed_iterations;
  return {};
}

RunResult run_loop(Environment& env, const LcsParams& theta0, const LoopConfig& cfg,
                   const ViolationHyper& hyper, const QuadCost& cost,
                   const PlannerOptions& popts, Rng& rng, const std::string& out_dir) {
  cfg.validate();
  Rng init_rng = rng.substream(0x1B);
  RolloutBuffer buffer = init_buffer(env, cfg, init_rng);
  RunResult out{LoopState{theta0, std::move(buffer), {}, 0},
                TrustRegion(Vec::Zero(theta0.m()), Vec::Zero(theta0.m())), 0, 0.0, 0};

  const bool emit = !out_dir.empty();
  if (emit) std::filesystem::create_directories(out_dir);

  for (int i = 0; i < cfg.iterations; ++i) {
    Rng iter_rng = rng.substream(0xC0000 + static_cast<std::uint64_t>(i));
    IterationOutcome outcome =
        run_iteration(out.state, env, cfg, hyper, cost, popts, iter_rng);
    if (outcome.aborted) {
      ++out.aborted_iterations;
      continue;
    }
    if (emit) {
      const std::string tag = std::to_string(out.state.completed_iterations - 1);
      save_lcs(out.state.theta, out_dir + "/theta_iter_" + tag + ".lcs");
      std::ofstream hist(out_dir + "/loss_history_iter_" + tag + ".csv");
      hist << "epoch,mean_loss,min_loss\n";
      char buf[32];
      const auto& recs = out.state.curves.back().train_history;
      for (std::size_t e = 0; e < recs.size(); ++e) {
        std::snprintf(buf, sizeof(buf), "%.17g", recs[e].mean_loss);
        hist << e << ',' << buf;
        std::snprintf(buf, sizeof(buf), "%.17g", recs[e].min_loss);
        hist << ',' << buf << '\n';
      }
    }
  }

  // Planning statistics for the timing sidecar.
  for (const Rollout& r : out.state.buffer.rollouts())
    for (const PlanStepLog& l : r.plan_log) {
      out.plan_seconds_total += l.seconds;
      ++out.plan_count;
    }

  if (out.state.buffer.total_steps() >= 2)
    out.final_trust_region = trust_region_from_buffer(out.state.buffer, cfg.eta);

  if (emit) {
    std::ofstream os(out_dir + "/curves.csv");
    if (!os) throw IoError("run_loop: cannot write curves.csv in " + out_dir);
    write_curves_csv(out.state.curves, os);
  }
  return out;
}

void write_curves_csv(const std::vector<IterationRecord>& curves, std::ostream& os) {
  os << "iteration,onpolicy_me_pct,mean_rollout_cost,buffer_rollouts,buffer_points,"
        "modes_in_g,modes_in_f,train_initial_loss,train_final_loss,lemma_zeroth,lemma_first,"
        "failed_rollouts,degraded_plan_rate";
  const Index m = curves.empty() ? 0 : curves.front().tr_center.size();
  for (Index j = 0; j < m; ++j) os << ",tr_center" << j;
  for (Index j = 0; j < m; ++j) os << ",tr_half_width" << j;
  os << '\n';

  char buf[32];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    os << ',' << buf;
  };
  for (const IterationRecord& r : curves) {
    os << r.iteration;
    put(r.onpolicy_me_pct);
    put(r.mean_rollout_cost);
    os << ',' << r.buffer_rollouts << ',' << r.buffer_points << ',' << r.modes_in_g << ','
       << r.modes_in_f;
    put(r.train_initial_loss);
    put(r.train_final_loss);
    put(r.lemma_zeroth);
    put(r.lemma_first);
    os << ',' << r.failed_rollouts;
    put(r.degraded_plan_rate);
    for (Index j = 0; j < m; ++j) put(r.tr_center(j));
    for (Index j = 0; j < m; ++j) put(r.tr_half_width(j));
    os << '\n';
  }
}

}  // namespace hmr

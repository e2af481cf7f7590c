#pragma once

#include <deque>
#include <iosfwd>
#include <optional>

#include "hmr/learner.hpp"
#include "hmr/metrics.hpp"
#include "hmr/mpc.hpp"

namespace hmr {

struct LoopConfig {
  int plan_horizon = 5;       // MPC horizon T
  int rollout_horizon = 16;   // episode length H
  int rollouts_per_iter = 5;  // new rollouts added per iteration
  int buffer_capacity = 50;   // rollouts kept, FIFO
  double eta = 20.0;          // trust-region width multiplier
  int iterations = 25;
  double explosion_bound = 1e6;
  int threads = 1;

  void validate() const;
};

// Bounded FIFO of whole rollouts; eviction drops the oldest first.
class RolloutBuffer {
 public:
  explicit RolloutBuffer(std::size_t capacity);

  void push(Rollout rollout);
  std::size_t size() const { return rollouts_.size(); }
  std::size_t capacity() const { return capacity_; }
  const std::deque<Rollout>& rollouts() const { return rollouts_; }

  std::vector<DataPoint> datapoints() const;
  std::vector<Vec> inputs() const;
  std::size_t total_steps() const;

 private:
  std::size_t capacity_;
  std::deque<Rollout> rollouts_;
};

TrustRegion trust_region_from_buffer(const RolloutBuffer& buffer, double eta);

struct IterationRecord {
  int iteration = 0;
  double onpolicy_me_pct = 0.0;     // over this iteration's new rollouts
  double mean_rollout_cost = 0.0;   // terminal-inclusive convention
  Vec tr_center;
  Vec tr_half_width;
  std::size_t buffer_rollouts = 0;  // after append + eviction
  std::size_t buffer_points = 0;
  std::size_t modes_in_g = 0;       // distinct reduced-model signatures in new rollouts
  std::size_t modes_in_f = 0;       // distinct full-order signatures in new rollouts
  double train_initial_loss = 0.0;
  double train_final_loss = 0.0;
  double lemma_zeroth = 0.0;
  double lemma_first = 0.0;
  int failed_rollouts = 0;
  double degraded_plan_rate = 0.0;
  std::vector<EpochRecord> train_history;
};

struct LoopState {
  LcsParams theta;
  RolloutBuffer buffer;
  std::vector<IterationRecord> curves;
  int completed_iterations = 0;
};

// Initial buffer: `rollouts_per_iter` random-policy episodes.
RolloutBuffer init_buffer(Environment& env, const LoopConfig& cfg, Rng& rng);

struct IterationOutcome {
  bool aborted = false;       // more than half of the rollouts failed
  std::string error;
};

// One iteration in the published order: train on the current buffer, set the
// trust region from that same buffer, roll out the freshly trained model
// inside it, then append and evict. On abort the state is left unchanged.
IterationOutcome run_iteration(LoopState& state, Environment& env, const LoopConfig& cfg,
                               const ViolationHyper& hyper, const QuadCost& cost,
                               const PlannerOptions& popts, Rng& rng);

struct RunResult {
  LoopState state;
  TrustRegion final_trust_region;  // from the final buffer, used for evaluation
  int aborted_iterations = 0;
  double plan_seconds_total = 0.0;
  long plan_count = 0;
};

// Full training run. When out_dir is nonempty, emits curves.csv and a
// theta_iter_<i>.lcs checkpoint per iteration into it.
RunResult run_loop(Environment& env, const LcsParams& theta0, const LoopConfig& cfg,
                   const ViolationHyper& hyper, const QuadCost& cost,
                   const PlannerOptions& popts, Rng& rng, const std::string& out_dir = "");

void write_curves_csv(const std::vector<IterationRecord>& curves, std::ostream& os);

}  // namespace hmr

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "hmr/env.hpp"
#include "hmr/learner.hpp"
#include "hmr/loop.hpp"
#include "hmr/mpc.hpp"

namespace hmr {

struct SolverConfig {
  double lcp_tol = 1e-8;
};

struct ExperimentConfig {
  std::string case_name = "case1";
  Index dim_lambda = 3;  // complementarity dimension of the reduced model
  int trials = 5;
  std::vector<std::uint64_t> seeds;  // explicit trial seeds; else base_seed + index
  std::uint64_t base_seed = 0;
  int eval_rollouts = 20;
  int mode_count_rollouts = 400;
  int lemma_rollouts = 5;
  double fd_step = 1e-4;
  double fmpc_box_lo = -10.0;
  double fmpc_box_hi = 10.0;
  bool deterministic = false;
  int parallel = 0;  // 0 = auto
};

// One structured text document with named blocks. Unknown blocks or keys are
// hard errors with a line diagnostic.
struct FullConfig {
  EnvConfig env;
  LoopConfig loop;
  ViolationHyper learner;
  PlannerOptions mpc;
  SolverConfig solvers;
  ExperimentConfig experiment;

  std::vector<std::uint64_t> trial_seeds() const;
  int threads() const;
  EvalConfig eval_config() const;
};

// Preset dimensions of the studied cases:
//   case1  x:6  u:2  Lambda:8  -> lambda 3
//   case2  x:10 u:3  Lambda:12 -> lambda 3
//   case3..6  x:20 u:3  Lambda:15 -> lambda 1/2/3/5
//   case7  x:30 u:3  Lambda:15 -> lambda 3
void apply_case_preset(FullConfig& cfg, const std::string& name);
bool is_known_case(const std::string& name);

FullConfig parse_config(std::istream& is, const std::string& where);
FullConfig parse_config_file(const std::string& path);
void write_config(const FullConfig& cfg, std::ostream& os);

}  // namespace hmr

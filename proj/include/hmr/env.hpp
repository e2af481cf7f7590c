#pragma once

#include <optional>

#include "hmr/lcs.hpp"
#include "hmr/rng.hpp"

namespace hmr {

// Generation recipe for a random full-order LCS used as the ground-truth
// world. Matrix entries are i.i.d. uniform; A is drawn at `scale_a` and then
// rescaled to `spectral_radius_cap` when its spectral radius exceeds it,
// which keeps random-policy rollouts bounded at the studied dimensions.
struct EnvConfig {
  Index n = 6;
  Index m = 2;
  Index r_full = 8;
  double scale_a = 0.5;
  double scale_b = 0.25;
  double scale_e = 0.4;
  double scale = 1.0;
  double spectral_radius_cap = 0.6;
  double x0_lo = -4.0;
  double x0_hi = 4.0;
  double u_lo = -10.0;
  double u_hi = 10.0;
  std::uint64_t seed = 0;
  int screen_horizon = 20;
  double screen_bound = 1e4;
  int screen_rollouts = 5;
  int max_attempts = 100;
  // Per-mode stabilization: shrink C until every active-set closed-loop
  // matrix A - C_a (F_aa)^-1 D_a has spectral radius within mode_radius_target.
  // Active sets are enumerated exhaustively up to mode_sample_cap, sampled
  // beyond. The target is looser than the cap on A: mildly expansive modes
  // keep the lambda coupling strong enough to matter while the screening
  // rollouts reject systems whose excursions actually run away.
  bool stabilize_modes = true;
  double mode_radius_target = 1.6;
  int mode_sample_cap = 4096;

  void validate() const;
};

// Ground-truth hybrid system with step counting and an append-only log of
// the full-order mode signatures it has visited. The parameter tuple is
// immutable; parallel rollouts use independent clones and merge logs.
class Environment {
 public:
  Environment(LcsParams theta_f, EnvConfig cfg, double spectral_rescale, int attempts_used,
              double c_rescale = 1.0);

  const LcsParams& theta() const { return theta_f_; }
  const EnvConfig& config() const { return cfg_; }
  double spectral_rescale() const { return spectral_rescale_; }
  double c_rescale() const { return c_rescale_; }
  int attempts_used() const { return attempts_used_; }

  StepResult step(const Vec& x, const Vec& u, double lcp_tol = 1e-8);

  std::size_t step_count() const { return signature_log_.size(); }
  const std::vector<ModeSignature>& signature_log() const { return signature_log_; }
  std::size_t distinct_modes_logged() const;
  void merge_log(const Environment& other);

  // Same system, empty log.
  Environment clone_fresh() const {
    return Environment(theta_f_, cfg_, spectral_rescale_, attempts_used_, c_rescale_);
  }

 private:
  LcsParams theta_f_;
  EnvConfig cfg_;
  double spectral_rescale_;
  int attempts_used_;
  double c_rescale_;
  std::vector<ModeSignature> signature_log_;
};

// Largest spectral radius over the sampled per-mode closed-loop matrices.
double worst_mode_radius(const LcsParams& theta, int sample_cap, std::uint64_t sample_seed);

// Draws a stable full-order system; retries with the next sub-seed when the
// draw is rank-deficient or a screening rollout under random inputs blows up.
Environment generate_full_lcs(const EnvConfig& cfg);

Vec sample_x0(const EnvConfig& cfg, Rng& rng);
Vec random_policy(const EnvConfig& cfg, Rng& rng);

void save_env(const Environment& env, const std::string& path);
Environment load_env(const std::string& path);

void write_signature_log_csv(const Environment& env, std::ostream& os);

}  // namespace hmr

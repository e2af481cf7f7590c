#include "hmr/env.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace hmr {

void EnvConfig::validate() const {
  if (n < 1 || m < 1 || r_full < 1)
    throw ConfigError("EnvConfig: dims must be >= 1");
  if (!(scale_a >= 0.0) || !(scale > 0.0))
    throw ConfigError("EnvConfig: matrix scales must be positive");
  if (!(x0_lo < x0_hi) || !(u_lo < u_hi))
    throw ConfigError("EnvConfig: empty sampling ranges");
  if (screen_horizon < 1 || screen_rollouts < 1 || max_attempts < 1)
    throw ConfigError("EnvConfig: screening settings must be >= 1");
  if (mode_sample_cap < 1) throw ConfigError("EnvConfig: mode_sample_cap must be >= 1");
}

Environment::Environment(LcsParams theta_f, EnvConfig cfg, double spectral_rescale,
                         int attempts_used, double c_rescale)
    : theta_f_(std::move(theta_f)),
      cfg_(std::move(cfg)),
      spectral_rescale_(spectral_rescale),
      attempts_used_(attempts_used),
      c_rescale_(c_rescale) {}

StepResult Environment::step(const Vec& x, const Vec& u, double lcp_tol) {
  StepResult res = lcs_step(theta_f_, x, u, lcp_tol);
  signature_log_.push_back(mode_signature(res.lambda));
  return res;
}

std::size_t Environment::distinct_modes_logged() const {
  return std::set<ModeSignature>(signature_log_.begin(), signature_log_.end()).size();
}

void Environment::merge_log(const Environment& other) {
  signature_log_.insert(signature_log_.end(), other.signature_log_.begin(),
                        other.signature_log_.end());
}

Vec sample_x0(const EnvConfig& cfg, Rng& rng) {
  return rng.uniform_vec(cfg.n, cfg.x0_lo, cfg.x0_hi);
}

Vec random_policy(const EnvConfig& cfg, Rng& rng) {
  return rng.uniform_vec(cfg.m, cfg.u_lo, cfg.u_hi);
}

namespace {

double spectral_radius(const Mat& A) {
  Eigen::EigenSolver<Mat> es(A, /*computeEigenvectors=*/false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

}  // namespace

double worst_mode_radius(const LcsParams& theta, int sample_cap, std::uint64_t sample_seed) {
  const Index r = theta.r(), n = theta.n();
  const bool exhaustive = r <= 20 && (1LL << r) <= sample_cap;
  const std::int64_t count = exhaustive ? (1LL << r) : sample_cap;
  Rng rng(sample_seed);

  double worst = spectral_radius(theta.A());  // empty active set
  std::vector<Index> active;
  for (std::int64_t k = 1; k < count; ++k) {
    std::uint64_t mask;
    if (exhaustive) {
      mask = static_cast<std::uint64_t>(k);
    } else {
      mask = rng.next_u64() & ((std::uint64_t{1} << r) - 1);
      if (mask == 0) continue;
    }
    active.clear();
    for (Index i = 0; i < r; ++i)
      if (mask & (std::uint64_t{1} << i)) active.push_back(i);
    const Index na = static_cast<Index>(active.size());
    Mat Faa(na, na), Ca(n, na), Da(na, n);
    for (Index a = 0; a < na; ++a) {
      Ca.col(a) = theta.C().col(active[static_cast<size_t>(a)]);
      Da.row(a) = theta.D().row(active[static_cast<size_t>(a)]);
      for (Index b = 0; b < na; ++b)
        Faa(a, b) = theta.F()(active[static_cast<size_t>(a)], active[static_cast<size_t>(b)]);
    }
    Eigen::PartialPivLU<Mat> lu(Faa);
    Mat Aeff = theta.A() - Ca * lu.solve(Da);
    worst = std::max(worst, spectral_radius(Aeff));
  }
  return worst;
}

Environment generate_full_lcs(const EnvConfig& cfg) {
  cfg.validate();
  const Rng master(cfg.seed);

  for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
    // One substream per attempt: a rejected draw never perturbs the next one.
    Rng rng = master.substream(static_cast<std::uint64_t>(attempt));

    Mat A = rng.uniform_mat(cfg.n, cfg.n, -cfg.scale_a, cfg.scale_a);
    double a_rescale = 1.0;
    const double rho = spectral_radius(A);
    const double a_target = cfg.spectral_radius_cap * (1.0 - 1e-6);
    if (rho > a_target && rho > 0.0) {
      a_rescale = a_target / rho;
      A *= a_rescale;
    }
    Mat B = rng.uniform_mat(cfg.n, cfg.m, -cfg.scale_b, cfg.scale_b);
    Mat C = rng.uniform_mat(cfg.n, cfg.r_full, -cfg.scale, cfg.scale);
    Vec d = rng.uniform_vec(cfg.n, -cfg.scale, cfg.scale);
    Mat D = rng.uniform_mat(cfg.r_full, cfg.n, -cfg.scale, cfg.scale);
    Mat E = rng.uniform_mat(cfg.r_full, cfg.m, -cfg.scale_e, cfg.scale_e);
    Mat G = rng.uniform_mat(cfg.r_full, cfg.r_full, -cfg.scale, cfg.scale);
    Mat H = rng.uniform_mat(cfg.r_full, cfg.r_full, -cfg.scale, cfg.scale);
    Vec c = rng.uniform_vec(cfg.r_full, -cfg.scale, cfg.scale);

    std::optional<LcsParams> theta;
    try {
      theta.emplace(A, B, C, d, D, E, G, H, c);
    } catch (const NonMonotoneError&) {
      continue;
    }

    // The lambda feedback makes individual modes expansive even when A is
    // contractive. Shrink C until the worst sampled mode respects the same
    // spectral cap as A (bisection; s = 0 reduces every mode to A itself).
    double c_rescale = 1.0;
    if (cfg.stabilize_modes) {
      const std::uint64_t sample_seed = cfg.seed ^ 0x5AB1E5ULL;
      if (worst_mode_radius(*theta, cfg.mode_sample_cap, sample_seed) >
          cfg.mode_radius_target) {
        double lo = 0.0, hi = 1.0;
        for (int it = 0; it < 20; ++it) {
          const double mid = 0.5 * (lo + hi);
          LcsParams cand(A, B, mid * C, d, D, E, G, H, c);
          if (worst_mode_radius(cand, cfg.mode_sample_cap, sample_seed) <=
              cfg.mode_radius_target)
            lo = mid;
          else
            hi = mid;
        }
        c_rescale = lo;
        theta.emplace(A, B, c_rescale * C, d, D, E, G, H, c);
      }
    }

    // Screening rollouts under a random policy; draws come from a separate
    // substream so theta stays a pure function of (seed, attempt).
    Rng screen = master.substream(0x5C4EE0ULL + static_cast<std::uint64_t>(attempt));
    bool stable = true;
    for (int ro = 0; ro < cfg.screen_rollouts && stable; ++ro) {
      Vec x = sample_x0(cfg, screen);
      std::vector<Vec> u_seq;
      u_seq.reserve(static_cast<size_t>(cfg.screen_horizon));
      for (int t = 0; t < cfg.screen_horizon; ++t) u_seq.push_back(random_policy(cfg, screen));
      try {
        lcs_rollout(*theta, x, u_seq, 1e-8, cfg.screen_bound);
      } catch (const StateExplosionError&) {
        stable = false;
      } catch (const NoConvergenceError&) {
        stable = false;
      }
    }
    if (!stable) continue;
    return Environment(std::move(*theta), cfg, a_rescale, attempt + 1, c_rescale);
  }
  throw GenerationExhaustedError("generate_full_lcs: no stable system in " +
                                 std::to_string(cfg.max_attempts) +
                                 " attempts (check matrix scale)");
}

// --- serialization -------------------------------------------------------

namespace {
constexpr const char* kEnvSchema = "hmr-env v1";
}

void save_env(const Environment& env, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("save_env: cannot open " + path);
  const EnvConfig& c = env.config();
  os << kEnvSchema << '\n';
  char buf[64];
  auto putd = [&](const char* key, double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    os << key << ' ' << buf << '\n';
  };
  os << "n " << c.n << "\nm " << c.m << "\nr_full " << c.r_full << '\n';
  putd("scale_a", c.scale_a);
  putd("scale_b", c.scale_b);
  putd("scale_e", c.scale_e);
  putd("scale", c.scale);
  putd("spectral_radius_cap", c.spectral_radius_cap);
  putd("x0_lo", c.x0_lo);
  putd("x0_hi", c.x0_hi);
  putd("u_lo", c.u_lo);
  putd("u_hi", c.u_hi);
  os << "seed " << c.seed << '\n';
  os << "screen_horizon " << c.screen_horizon << '\n';
  putd("screen_bound", c.screen_bound);
  os << "screen_rollouts " << c.screen_rollouts << '\n';
  os << "max_attempts " << c.max_attempts << '\n';
  os << "stabilize_modes " << (c.stabilize_modes ? 1 : 0) << '\n';
  putd("mode_radius_target", c.mode_radius_target);
  os << "mode_sample_cap " << c.mode_sample_cap << '\n';
  putd("spectral_rescale", env.spectral_rescale());
  putd("c_rescale", env.c_rescale());
  os << "attempts_used " << env.attempts_used() << '\n';
  write_lcs(env.theta(), os);
  if (!os) throw IoError("save_env: write failed for " + path);
}

Environment load_env(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("load_env: cannot open " + path);
  std::string line;
  if (!std::getline(is, line) || line != kEnvSchema)
    throw IoError("load_env: schema mismatch in " + path);

  EnvConfig cfg;
  double a_rescale = 1.0, c_rescale = 1.0;
  int attempts = 0, stabilize = 1;
  auto expect = [&](const char* key, auto& field) {
    std::string k;
    if (!(is >> k >> field) || k != key)
      throw IoError("load_env: expected key '" + std::string(key) + "' in " + path);
  };
  expect("n", cfg.n);
  expect("m", cfg.m);
  expect("r_full", cfg.r_full);
  expect("scale_a", cfg.scale_a);
  expect("scale_b", cfg.scale_b);
  expect("scale_e", cfg.scale_e);
  expect("scale", cfg.scale);
  expect("spectral_radius_cap", cfg.spectral_radius_cap);
  expect("x0_lo", cfg.x0_lo);
  expect("x0_hi", cfg.x0_hi);
  expect("u_lo", cfg.u_lo);
  expect("u_hi", cfg.u_hi);
  expect("seed", cfg.seed);
  expect("screen_horizon", cfg.screen_horizon);
  expect("screen_bound", cfg.screen_bound);
  expect("screen_rollouts", cfg.screen_rollouts);
  expect("max_attempts", cfg.max_attempts);
  expect("stabilize_modes", stabilize);
  expect("mode_radius_target", cfg.mode_radius_target);
  expect("mode_sample_cap", cfg.mode_sample_cap);
  expect("spectral_rescale", a_rescale);
  expect("c_rescale", c_rescale);
  expect("attempts_used", attempts);
  cfg.stabilize_modes = stabilize != 0;
  std::getline(is, line);  // consume end of the attempts_used line
  LcsParams theta = read_lcs(is, path);
  if (theta.n() != cfg.n || theta.m() != cfg.m || theta.r() != cfg.r_full)
    throw IoError("load_env: embedded system disagrees with header dims in " + path);
  return Environment(std::move(theta), cfg, a_rescale, attempts, c_rescale);
}

void write_signature_log_csv(const Environment& env, std::ostream& os) {
  os << "step,signature\n";
  const auto& log = env.signature_log();
  for (std::size_t k = 0; k < log.size(); ++k)
    os << k << ',' << signature_hex(log[k]) << '\n';
}

}  // namespace hmr

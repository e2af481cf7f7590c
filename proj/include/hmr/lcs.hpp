#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "hmr/lcp.hpp"
#include "hmr/types.hpp"

namespace hmr {

struct StateExplosionError : std::runtime_error {
  explicit StateExplosionError(const std::string& msg) : std::runtime_error(msg) {}
};

// F := G G' + H - H'. The symmetric part 2 G G' is PSD by construction and
// positive definite whenever G has full rank.
Mat make_f(const Mat& G, const Mat& H);

// Parameter tuple of a linear complementarity system
//   x+ = A x + B u + C lambda + d
//   0 <= lambda  perp  D x + E u + F lambda + c >= 0
// Immutable after construction; shareable across threads. F is derived from
// (G, H) and a solver for it is cached.
class LcsParams {
 public:
  LcsParams(Mat A, Mat B, Mat C, Vec d, Mat D, Mat E, Mat G, Mat H, Vec c);

  Index n() const { return A_.rows(); }
  Index m() const { return B_.cols(); }
  Index r() const { return G_.rows(); }

  const Mat& A() const { return A_; }
  const Mat& B() const { return B_; }
  const Mat& C() const { return C_; }
  const Vec& d() const { return d_; }
  const Mat& D() const { return D_; }
  const Mat& E() const { return E_; }
  const Mat& G() const { return G_; }
  const Mat& H() const { return H_; }
  const Vec& c() const { return c_; }
  const Mat& F() const { return F_; }

  // Smallest eigenvalue of F + F' (= 2 lambda_min(G G')); > 1e-10 by invariant.
  double f_sym_min_eig() const { return lcp_.sym_min_eig(); }
  const LcpSolver& lcp() const { return lcp_; }

 private:
  Mat A_, B_, C_;
  Vec d_;
  Mat D_, E_, G_, H_;
  Vec c_;
  Mat F_;
  LcpSolver lcp_;
};

// Bitmask of the strictly active complementarity components.
using ModeSignature = std::uint64_t;

constexpr double kModeThreshold = 1e-6;

ModeSignature mode_signature(const Vec& lambda, double threshold = kModeThreshold);

std::string signature_hex(ModeSignature sig);

struct StepResult {
  Vec x_next;
  Vec lambda;
};

struct Trajectory {
  std::vector<Vec> states;                // length T+1
  std::vector<Vec> inputs;                // length T
  std::vector<Vec> lambdas;               // length T
  std::vector<ModeSignature> signatures;  // length T

  Index length() const { return static_cast<Index>(inputs.size()); }
};

StepResult lcs_step(const LcsParams& theta, const Vec& x, const Vec& u, double lcp_tol = 1e-8,
                    const Vec* warm_lambda = nullptr);

// Open-loop rollout. Aborts with StateExplosionError (failing index in the
// message) once ||x|| exceeds `explosion_bound`.
Trajectory lcs_rollout(const LcsParams& theta, const Vec& x0, const std::vector<Vec>& u_seq,
                       double lcp_tol = 1e-8, double explosion_bound = 1e6);

std::size_t count_distinct_modes(const std::vector<Trajectory>& trajectories,
                                 double threshold = kModeThreshold);

// --- serialization -------------------------------------------------------

// Named matrix blocks with explicit dims, row-major %.17g entries. Round
// trips bit-exactly. Schema line "hmr-lcs v1" is checked on load.
void save_lcs(const LcsParams& theta, const std::string& path);
LcsParams load_lcs(const std::string& path);
void write_lcs(const LcsParams& theta, std::ostream& os);
LcsParams read_lcs(std::istream& is, const std::string& where);

// CSV with columns t, x[0..n), u[0..m), lambda[0..r), signature (hex).
void write_trajectory_csv(const Trajectory& traj, std::ostream& os);

}  // namespace hmr

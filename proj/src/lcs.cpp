#include "hmr/lcs.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace hmr {

Mat make_f(const Mat& G, const Mat& H) {
  if (G.rows() != G.cols() || H.rows() != H.cols() || G.rows() != H.rows())
    throw DimensionError("make_f: G and H must be square with equal dims");
  return G * G.transpose() + H - H.transpose();
}

LcsParams::LcsParams(Mat A, Mat B, Mat C, Vec d, Mat D, Mat E, Mat G, Mat H, Vec c)
    : A_(std::move(A)),
      B_(std::move(B)),
      C_(std::move(C)),
      d_(std::move(d)),
      D_(std::move(D)),
      E_(std::move(E)),
      G_(std::move(G)),
      H_(std::move(H)),
      c_(std::move(c)),
      F_(make_f(G_, H_)),
      lcp_(F_) {
  const Index n = A_.rows(), m = B_.cols(), r = G_.rows();
  if (A_.cols() != n) throw DimensionError("LcsParams: A must be n x n");
  if (B_.rows() != n) throw DimensionError("LcsParams: B must be n x m");
  if (C_.rows() != n || C_.cols() != r) throw DimensionError("LcsParams: C must be n x r");
  if (d_.size() != n) throw DimensionError("LcsParams: d must be length n");
  if (D_.rows() != r || D_.cols() != n) throw DimensionError("LcsParams: D must be r x n");
  if (E_.rows() != r || E_.cols() != m) throw DimensionError("LcsParams: E must be r x m");
  if (c_.size() != r) throw DimensionError("LcsParams: c must be length r");
  if (lcp_.sym_min_eig() <= 1e-10)
    throw NonMonotoneError("LcsParams: F + F' nearly singular (G rank-deficient?)");
}

ModeSignature mode_signature(const Vec& lambda, double threshold) {
  if (!(threshold > 0.0)) throw std::invalid_argument("mode_signature: threshold must be > 0");
  if (lambda.size() > 64) throw DimensionError("mode_signature: r > 64 unsupported");
  ModeSignature sig = 0;
  for (Index i = 0; i < lambda.size(); ++i)
    if (lambda(i) > threshold) sig |= (ModeSignature{1} << i);
  return sig;
}

std::string signature_hex(ModeSignature sig) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%" PRIx64, sig);
  return buf;
}

StepResult lcs_step(const LcsParams& theta, const Vec& x, const Vec& u, double lcp_tol,
                    const Vec* warm_lambda) {
  if (x.size() != theta.n() || u.size() != theta.m())
    throw DimensionError("lcs_step: state/input dimension mismatch");
  Vec q = theta.D() * x + theta.E() * u + theta.c();
  Vec lambda = theta.lcp().solve(q, lcp_tol, warm_lambda);
  Vec x_next = theta.A() * x + theta.B() * u + theta.C() * lambda + theta.d();
  return {std::move(x_next), std::move(lambda)};
}

Trajectory lcs_rollout(const LcsParams& theta, const Vec& x0, const std::vector<Vec>& u_seq,
                       double lcp_tol, double explosion_bound) {
  if (u_seq.empty()) throw std::invalid_argument("lcs_rollout: empty input sequence");
  Trajectory traj;
  traj.states.reserve(u_seq.size() + 1);
  traj.inputs.reserve(u_seq.size());
  traj.lambdas.reserve(u_seq.size());
  traj.signatures.reserve(u_seq.size());
  traj.states.push_back(x0);

  const Vec* warm = nullptr;
  for (std::size_t k = 0; k < u_seq.size(); ++k) {
    StepResult step;
    try {
      step = lcs_step(theta, traj.states.back(), u_seq[k], lcp_tol, warm);
    } catch (const std::exception& e) {
      throw NoConvergenceError("lcs_rollout: step " + std::to_string(k) + " failed: " + e.what());
    }
    if (step.x_next.norm() > explosion_bound)
      throw StateExplosionError("lcs_rollout: state norm exceeded " +
                                std::to_string(explosion_bound) + " at step " + std::to_string(k));
    traj.inputs.push_back(u_seq[k]);
    traj.signatures.push_back(mode_signature(step.lambda));
    traj.lambdas.push_back(std::move(step.lambda));
    traj.states.push_back(std::move(step.x_next));
    warm = &traj.lambdas.back();
  }
  return traj;
}

std::size_t count_distinct_modes(const std::vector<Trajectory>& trajectories, double threshold) {
  std::set<ModeSignature> seen;
  for (const Trajectory& traj : trajectories)
    for (const Vec& lam : traj.lambdas) seen.insert(mode_signature(lam, threshold));
  return seen.size();
}

// --- serialization -------------------------------------------------------

namespace {

constexpr const char* kLcsSchema = "hmr-lcs v1";

void write_block(std::ostream& os, const char* name, const Mat& m) {
  os << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
  char buf[32];
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", m(i, j));
      os << buf << (j + 1 < m.cols() ? " " : "");
    }
    os << '\n';
  }
}

Mat read_block(std::istream& is, const std::string& expect, const std::string& where) {
  std::string name;
  Index rows = 0, cols = 0;
  if (!(is >> name >> rows >> cols))
    throw IoError(where + ": truncated file, expected block '" + expect + "'");
  if (name != expect)
    throw IoError(where + ": expected block '" + expect + "', found '" + name + "'");
  if (rows < 0 || cols < 0) throw IoError(where + ": bad dims for block '" + name + "'");
  Mat m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j)
      if (!(is >> m(i, j)))
        throw IoError(where + ": truncated numeric data in block '" + name + "'");
  return m;
}

}  // namespace

void write_lcs(const LcsParams& theta, std::ostream& os) {
  os << kLcsSchema << '\n';
  os << "dims " << theta.n() << ' ' << theta.m() << ' ' << theta.r() << '\n';
  write_block(os, "A", theta.A());
  write_block(os, "B", theta.B());
  write_block(os, "C", theta.C());
  write_block(os, "d", theta.d());
  write_block(os, "D", theta.D());
  write_block(os, "E", theta.E());
  write_block(os, "G", theta.G());
  write_block(os, "H", theta.H());
  write_block(os, "c", theta.c());
}

LcsParams read_lcs(std::istream& is, const std::string& where) {
  std::string line;
  if (!std::getline(is, line)) throw IoError(where + ": empty file");
  if (line != kLcsSchema)
    throw IoError(where + ": schema mismatch, expected '" + kLcsSchema + "', found '" + line + "'");
  std::string tag;
  Index n = 0, m = 0, r = 0;
  if (!(is >> tag >> n >> m >> r) || tag != "dims") throw IoError(where + ": missing dims line");
  Mat A = read_block(is, "A", where);
  Mat B = read_block(is, "B", where);
  Mat C = read_block(is, "C", where);
  Vec d = read_block(is, "d", where);
  Mat D = read_block(is, "D", where);
  Mat E = read_block(is, "E", where);
  Mat G = read_block(is, "G", where);
  Mat H = read_block(is, "H", where);
  Vec c = read_block(is, "c", where);
  if (A.rows() != n || B.cols() != m || G.rows() != r)
    throw IoError(where + ": dims line disagrees with block shapes");
  return LcsParams(std::move(A), std::move(B), std::move(C), std::move(d), std::move(D),
                   std::move(E), std::move(G), std::move(H), std::move(c));
}

void save_lcs(const LcsParams& theta, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("save_lcs: cannot open " + path);
  write_lcs(theta, os);
  if (!os) throw IoError("save_lcs: write failed for " + path);
}

LcsParams load_lcs(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("load_lcs: cannot open " + path);
  return read_lcs(is, path);
}

void write_trajectory_csv(const Trajectory& traj, std::ostream& os) {
  const Index n = traj.states.empty() ? 0 : traj.states.front().size();
  const Index m = traj.inputs.empty() ? 0 : traj.inputs.front().size();
  const Index r = traj.lambdas.empty() ? 0 : traj.lambdas.front().size();

  os << "t";
  for (Index i = 0; i < n; ++i) os << ",x" << i;
  for (Index i = 0; i < m; ++i) os << ",u" << i;
  for (Index i = 0; i < r; ++i) os << ",lambda" << i;
  os << ",signature\n";

  char buf[32];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    os << ',' << buf;
  };
  for (std::size_t t = 0; t < traj.states.size(); ++t) {
    os << t;
    for (Index i = 0; i < n; ++i) put(traj.states[t](i));
    const bool has_step = t < traj.inputs.size();
    for (Index i = 0; i < m; ++i) {
      if (has_step)
        put(traj.inputs[t](i));
      else
        os << ',';
    }
    for (Index i = 0; i < r; ++i) {
      if (has_step)
        put(traj.lambdas[t](i));
      else
        os << ',';
    }
    if (has_step)
      os << ',' << signature_hex(traj.signatures[t]);
    else
      os << ',';
    os << '\n';
  }
}

}  // namespace hmr

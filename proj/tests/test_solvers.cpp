#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "hmr/lcp.hpp"
#include "hmr/nlp.hpp"
#include "hmr/qp.hpp"
#include "test_util.hpp"

using namespace hmr;

TEST_CASE("lcp scalar analytic solves") {
  LcpProblem p1(Mat::Constant(1, 1, 1.0), Vec::Constant(1, -2.0));
  Vec lam = solve_lcp(p1, 1e-10);
  CHECK(lam(0) == doctest::Approx(2.0).epsilon(1e-10));

  LcpProblem p2(Mat::Constant(1, 1, 1.0), Vec::Constant(1, 3.0));
  CHECK(solve_lcp(p2, 1e-10)(0) == doctest::Approx(0.0));
}

TEST_CASE("lcp enum decoupled case") {
  Vec q(2);
  q << -1.0, 1.0;
  Vec lam = solve_lcp_enum(LcpProblem(Mat::Identity(2, 2), q));
  CHECK(lam(0) == doctest::Approx(1.0));
  CHECK(lam(1) == doctest::Approx(0.0));
}

TEST_CASE("lcp rejects non-monotone matrices") {
  Mat M(1, 1);
  M << -1.0;
  CHECK_THROWS_AS(LcpProblem(M, Vec::Zero(1)), NonMonotoneError);
}

TEST_CASE("lcp iterative matches enumeration on random monotone instances") {
  Rng rng(7);
  double worst_residual = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Index r = 1 + static_cast<Index>(rng.next_below(4));
    Mat M = testing::random_monotone_matrix(r, rng);
    Vec q = rng.uniform_vec(r, -2.0, 2.0);
    LcpProblem p(M, q);
    Vec it = solve_lcp(p, 1e-10);
    Vec en = solve_lcp_enum(p);
    CHECK((it - en).lpNorm<Eigen::Infinity>() < 1e-8);
    Vec w = M * it + q;
    worst_residual = std::max(worst_residual, std::abs(it.dot(w)));
    CHECK(w.minCoeff() > -1e-10);
  }
  CHECK(worst_residual < 1e-8);
}

TEST_CASE("lcp uniqueness across warm starts") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const Index r = 3;
    Mat M = testing::random_monotone_matrix(r, rng);
    Vec q = rng.uniform_vec(r, -2.0, 2.0);
    LcpSolver solver(M);
    Vec w1 = rng.uniform_vec(r, 0.0, 5.0);
    Vec w2 = rng.uniform_vec(r, 0.0, 5.0);
    Vec a = solver.solve(q, 1e-9, &w1);
    Vec b = solver.solve(q, 1e-9, &w2);
    CHECK((a - b).lpNorm<Eigen::Infinity>() < 1e-6);
  }
}

TEST_CASE("qp separable projection") {
  Vec b(2);
  b << -1.0, 2.0;
  Vec z = solve_qp_nonneg(QpNonneg(Mat::Identity(2, 2), b), 1e-8);
  CHECK(z(0) == doctest::Approx(1.0).epsilon(1e-7));
  CHECK(z(1) == doctest::Approx(0.0));

  Vec z2 = solve_qp_nonneg(QpNonneg(2.0 * Mat::Identity(1, 1), Vec::Zero(1)), 1e-8);
  CHECK(z2(0) == doctest::Approx(0.0));
}

TEST_CASE("qp objective matches active-set enumeration") {
  Rng rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    const Index n = 2 + static_cast<Index>(rng.next_below(5));
    Mat G = rng.uniform_mat(n, n, -1.0, 1.0);
    Mat P = G * G.transpose() + 0.05 * Mat::Identity(n, n);
    Vec b = rng.uniform_vec(n, -2.0, 2.0);
    Vec z = solve_qp_nonneg(QpNonneg(P, b), 1e-8);
    const double obj = qp_objective(P, b, z);
    const double oracle = testing::qp_enum_optimum(P, b);
    CHECK(obj <= oracle + 1e-7);
    CHECK(obj >= oracle - 1e-7);
    CHECK(obj <= 0.0 + 1e-12);  // z = 0 is feasible, so the optimum is never above 0
    CHECK(z.minCoeff() >= 0.0);
  }
}

TEST_CASE("qp rejects asymmetric or indefinite input") {
  Mat P(2, 2);
  P << 1.0, 0.5, -0.5, 1.0;
  CHECK_THROWS(QpNonneg(P, Vec::Zero(2)));
  Mat N = -Mat::Identity(2, 2);
  CHECK_THROWS(QpNonneg(N, Vec::Zero(2)));
}

TEST_CASE("nlp clipped unconstrained optimum") {
  NlpProblem p;
  p.dim = 1;
  p.objective = [](const Vec& x, Vec* g) {
    if (g != nullptr) (*g)(0) = 2.0 * (x(0) - 3.0);
    return (x(0) - 3.0) * (x(0) - 3.0);
  };
  p.lower = Vec::Constant(1, 0.0);
  p.upper = Vec::Constant(1, 1.0);
  p.x0 = Vec::Constant(1, 0.5);
  NlpResult res = solve_nlp(p, {});
  CHECK(res.x(0) == doctest::Approx(1.0));
  CHECK(res.x(0) <= 1.0);  // box holds bit-exactly
  CHECK_FALSE(res.degraded);
}

TEST_CASE("nlp symmetric projection onto hyperplane") {
  NlpProblem p;
  p.dim = 2;
  p.eq_dim = 1;
  p.objective = [](const Vec& x, Vec* g) {
    if (g != nullptr) *g = 2.0 * x;
    return x.squaredNorm();
  };
  p.equality = [](const Vec& x, Vec& h, Mat* jac) {
    h(0) = x(0) + x(1) - 1.0;
    if (jac != nullptr) {
      (*jac)(0, 0) = 1.0;
      (*jac)(0, 1) = 1.0;
    }
  };
  p.lower = Vec::Constant(2, -10.0);
  p.upper = Vec::Constant(2, 10.0);
  p.x0 = Vec::Zero(2);
  NlpResult res = solve_nlp(p, {});
  CHECK(res.x(0) == doctest::Approx(0.5).epsilon(1e-3));
  CHECK(res.x(1) == doctest::Approx(0.5).epsilon(1e-3));
  CHECK(res.constraint_violation < 1e-3);
}

TEST_CASE("nlp LQR transcription matches Riccati recursion") {
  // Two-step linear-quadratic problem transcribed with states and inputs as
  // decision variables and dynamics as equality constraints.
  const Index n = 2, m = 1;
  const int T = 2;
  Mat A(2, 2), B(2, 1);
  A << 0.9, 0.2, -0.1, 0.8;
  B << 0.5, 1.0;
  Vec d(2);
  d << 0.1, -0.05;
  Mat Q = Mat::Identity(n, n), R = Mat::Identity(m, m), QT = Mat::Identity(n, n);
  Vec x0(2);
  x0 << 1.0, -2.0;

  auto oracle = testing::riccati_affine(A, B, d, Q, R, QT, x0, T);

  // Layout: [x1 x2 | u0 u1]
  NlpProblem p;
  p.dim = T * n + T * m;
  p.eq_dim = T * n;
  p.objective = [&](const Vec& z, Vec* g) {
    double f = x0.dot(Q * x0);
    if (g != nullptr) g->setZero();
    Vec x1 = z.segment(0, n), x2 = z.segment(n, n);
    Vec u0 = z.segment(2 * n, m), u1 = z.segment(2 * n + m, m);
    f += x1.dot(Q * x1) + x2.dot(QT * x2) + u0.dot(R * u0) + u1.dot(R * u1);
    if (g != nullptr) {
      g->segment(0, n) = 2.0 * (Q * x1);
      g->segment(n, n) = 2.0 * (QT * x2);
      g->segment(2 * n, m) = 2.0 * (R * u0);
      g->segment(2 * n + m, m) = 2.0 * (R * u1);
    }
    return f;
  };
  p.equality = [&](const Vec& z, Vec& h, Mat* jac) {
    Vec x1 = z.segment(0, n), x2 = z.segment(n, n);
    Vec u0 = z.segment(2 * n, m), u1 = z.segment(2 * n + m, m);
    h.segment(0, n) = x1 - A * x0 - B * u0 - d;
    h.segment(n, n) = x2 - A * x1 - B * u1 - d;
    if (jac != nullptr) {
      jac->setZero();
      jac->block(0, 0, n, n) = Mat::Identity(n, n);
      jac->block(0, 2 * n, n, m) = -B;
      jac->block(n, 0, n, n) = -A;
      jac->block(n, n, n, n) = Mat::Identity(n, n);
      jac->block(n, 2 * n + m, n, m) = -B;
    }
  };
  p.lower = Vec::Constant(p.dim, -1e6);
  p.upper = Vec::Constant(p.dim, 1e6);
  p.x0 = Vec::Zero(p.dim);

  NlpOptions opts;
  opts.tol = 1e-7;
  NlpResult res = solve_nlp(p, opts);
  CHECK_FALSE(res.degraded);
  CHECK(res.objective == doctest::Approx(oracle.objective).epsilon(1e-5));
  CHECK(std::abs(res.x(2 * n) - oracle.inputs[0](0)) < 1e-4);
}

TEST_CASE("nlp returns degraded best iterate instead of failing") {
  // Infeasible equalities: h has no root, the solver must still return.
  NlpProblem p;
  p.dim = 1;
  p.eq_dim = 2;
  p.objective = [](const Vec& x, Vec* g) {
    if (g != nullptr) (*g)(0) = 2.0 * x(0);
    return x(0) * x(0);
  };
  p.equality = [](const Vec& x, Vec& h, Mat* jac) {
    h(0) = x(0);
    h(1) = x(0) - 1.0;
    if (jac != nullptr) {
      (*jac)(0, 0) = 1.0;
      (*jac)(1, 0) = 1.0;
    }
  };
  p.lower = Vec::Constant(1, -5.0);
  p.upper = Vec::Constant(1, 5.0);
  p.x0 = Vec::Zero(1);
  NlpResult res = solve_nlp(p, {});
  CHECK(res.degraded);
  CHECK(res.x(0) >= -5.0);
  CHECK(res.x(0) <= 5.0);
}

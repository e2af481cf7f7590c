#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "hmr/env.hpp"
#include "hmr/learner.hpp"
#include "hmr/lcs.hpp"
#include "hmr/loop.hpp"
#include "hmr/metrics.hpp"
#include "hmr/mpc.hpp"

namespace py = pybind11;
using namespace hmr;

PYBIND11_MODULE(hmrpy, m) {
  m.doc() = "task-driven reduction of linear complementarity systems";

  py::register_exception<NonMonotoneError>(m, "NonMonotoneError");
  py::register_exception<NoConvergenceError>(m, "NoConvergenceError");
  py::register_exception<GenerationExhaustedError>(m, "GenerationExhaustedError");

  m.def("solve_lcp",
        [](const Mat& M, const Vec& q, double tol) { return solve_lcp(LcpProblem(M, q), tol); },
        py::arg("M"), py::arg("q"), py::arg("tol") = 1e-8);
  m.def("solve_lcp_enum",
        [](const Mat& M, const Vec& q) { return solve_lcp_enum(LcpProblem(M, q)); },
        py::arg("M"), py::arg("q"));
  m.def("solve_qp_nonneg",
        [](const Mat& P, const Vec& b, double tol) {
          return solve_qp_nonneg(QpNonneg(P, b), tol);
        },
        py::arg("P"), py::arg("b"), py::arg("tol") = 1e-6);
  m.def("make_f", &make_f, py::arg("G"), py::arg("H"));

  py::class_<LcsParams>(m, "LcsParams")
      .def(py::init<Mat, Mat, Mat, Vec, Mat, Mat, Mat, Mat, Vec>(), py::arg("A"), py::arg("B"),
           py::arg("C"), py::arg("d"), py::arg("D"), py::arg("E"), py::arg("G"), py::arg("H"),
           py::arg("c"))
      .def_property_readonly("n", &LcsParams::n)
      .def_property_readonly("m", &LcsParams::m)
      .def_property_readonly("r", &LcsParams::r)
      .def_property_readonly("A", &LcsParams::A)
      .def_property_readonly("B", &LcsParams::B)
      .def_property_readonly("C", &LcsParams::C)
      .def_property_readonly("d", &LcsParams::d)
      .def_property_readonly("D", &LcsParams::D)
      .def_property_readonly("E", &LcsParams::E)
      .def_property_readonly("F", &LcsParams::F)
      .def_property_readonly("G", &LcsParams::G)
      .def_property_readonly("H", &LcsParams::H)
      .def_property_readonly("c", &LcsParams::c)
      .def("f_sym_min_eig", &LcsParams::f_sym_min_eig)
      .def("save", &save_lcs, py::arg("path"))
      .def_static("load", &load_lcs, py::arg("path"));

  m.def("lcs_step",
        [](const LcsParams& theta, const Vec& x, const Vec& u, double tol) {
          StepResult s = lcs_step(theta, x, u, tol);
          return py::make_tuple(s.x_next, s.lambda);
        },
        py::arg("theta"), py::arg("x"), py::arg("u"), py::arg("lcp_tol") = 1e-8);
  m.def("lcs_rollout",
        [](const LcsParams& theta, const Vec& x0, const std::vector<Vec>& u_seq, double tol) {
          Trajectory traj = lcs_rollout(theta, x0, u_seq, tol);
          return py::make_tuple(traj.states, traj.lambdas, traj.signatures);
        },
        py::arg("theta"), py::arg("x0"), py::arg("u_seq"), py::arg("lcp_tol") = 1e-8);
  m.def("mode_signature", &mode_signature, py::arg("lam"), py::arg("threshold") = kModeThreshold);

  py::class_<EnvConfig>(m, "EnvConfig")
      .def(py::init<>())
      .def_readwrite("n", &EnvConfig::n)
      .def_readwrite("m", &EnvConfig::m)
      .def_readwrite("r_full", &EnvConfig::r_full)
      .def_readwrite("seed", &EnvConfig::seed)
      .def_readwrite("scale_a", &EnvConfig::scale_a)
      .def_readwrite("scale_b", &EnvConfig::scale_b)
      .def_readwrite("scale_e", &EnvConfig::scale_e)
      .def_readwrite("scale", &EnvConfig::scale)
      .def_readwrite("spectral_radius_cap", &EnvConfig::spectral_radius_cap)
      .def_readwrite("mode_radius_target", &EnvConfig::mode_radius_target);

  py::class_<Environment>(m, "Environment")
      .def_property_readonly("theta", &Environment::theta,
                             py::return_value_policy::reference_internal)
      .def("step",
           [](Environment& env, const Vec& x, const Vec& u) {
             StepResult s = env.step(x, u);
             return py::make_tuple(s.x_next, s.lambda);
           })
      .def("distinct_modes_logged", &Environment::distinct_modes_logged)
      .def("save", &save_env, py::arg("path"))
      .def_static("load", &load_env, py::arg("path"));

  m.def("generate_full_lcs", &generate_full_lcs, py::arg("config"));

  py::class_<TrustRegion>(m, "TrustRegion")
      .def(py::init<Vec, Vec>(), py::arg("center"), py::arg("half_width"))
      .def_static("from_box", &TrustRegion::from_box, py::arg("m"), py::arg("lo"), py::arg("hi"))
      .def_readonly("center", &TrustRegion::center)
      .def_readonly("half_width", &TrustRegion::half_width);

  m.def("trust_region_from_inputs", &trust_region_from_inputs, py::arg("inputs"),
        py::arg("eta"));

  py::class_<QuadCost>(m, "QuadCost")
      .def(py::init<Mat, Mat, Mat, std::optional<Vec>>(), py::arg("Q"), py::arg("R"),
           py::arg("Q_T"), py::arg("target") = std::nullopt)
      .def_static("identity", &QuadCost::identity, py::arg("n"), py::arg("m"));

  py::class_<MpcPlan>(m, "MpcPlan")
      .def_readonly("inputs", &MpcPlan::inputs)
      .def_readonly("states", &MpcPlan::states)
      .def_readonly("lambdas", &MpcPlan::lambdas)
      .def_readonly("objective", &MpcPlan::objective)
      .def_readonly("sigma_final", &MpcPlan::sigma_final)
      .def_readonly("degraded", &MpcPlan::degraded);

  m.def("plan",
        [](const LcsParams& theta, const Vec& x0, const QuadCost& cost, const TrustRegion& tr,
           int horizon) { return plan(theta, x0, cost, tr, horizon); },
        py::arg("theta"), py::arg("x0"), py::arg("cost"), py::arg("trust_region"),
        py::arg("horizon"));

  py::class_<DataPoint>(m, "DataPoint")
      .def(py::init([](Vec x, Vec u, Vec x_next) {
             return DataPoint{std::move(x), std::move(u), std::move(x_next)};
           }),
           py::arg("x"), py::arg("u"), py::arg("x_next"));

  m.def("violation_loss",
        [](const LcsParams& theta, const DataPoint& dp, double epsilon) {
          ViolationHyper h;
          h.epsilon = epsilon;
          InnerSolution sol = inner_violation_qp(theta, dp, h);
          return py::make_tuple(sol.loss, sol.lambda, sol.phi);
        },
        py::arg("theta"), py::arg("dp"), py::arg("epsilon") = 0.1);

  m.def("relative_model_error", &relative_model_error, py::arg("theta"), py::arg("dataset"),
        py::arg("lcp_tol") = 1e-8);
  m.def("performance_gap", &performance_gap, py::arg("j_gmpc"), py::arg("j_fmpc"));
}

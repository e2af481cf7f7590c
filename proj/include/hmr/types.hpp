#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace hmr {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Index = Eigen::Index;

// Solver and generation failures. All carry a human-readable message; callers
// that can continue (e.g. the receding-horizon loop) catch and degrade,
// everything else propagates to the CLI which maps them to exit codes.

struct NonMonotoneError : std::runtime_error {
  explicit NonMonotoneError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NoConvergenceError : std::runtime_error {
  explicit NoConvergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NoSolutionError : std::runtime_error {
  explicit NoSolutionError(const std::string& msg) : std::runtime_error(msg) {}
};

struct AmbiguousSolutionError : std::runtime_error {
  explicit AmbiguousSolutionError(const std::string& msg) : std::runtime_error(msg) {}
};

struct GenerationExhaustedError : std::runtime_error {
  explicit GenerationExhaustedError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DegenerateBufferError : std::runtime_error {
  explicit DegenerateBufferError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DegenerateBaselineError : std::runtime_error {
  explicit DegenerateBaselineError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DimensionError : std::invalid_argument {
  explicit DimensionError(const std::string& msg) : std::invalid_argument(msg) {}
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace hmr

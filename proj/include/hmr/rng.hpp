#pragma once

#include <cstdint>

#include "hmr/types.hpp"

namespace hmr {

// Counter-based generator (splitmix64). The state advances by the fixed
// increment 0x9e3779b97f4a7c15 and each output is a finalizer hash of the
// counter, so a (seed, draw index) pair maps to the same value on every
// platform and compiler. All randomness in the project flows through this
// type; std::random distributions are never used because their output is
// implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n) {
    return static_cast<std::uint64_t>(next_double() * static_cast<double>(n)) % n;
  }

  Vec uniform_vec(Index dim, double lo, double hi) {
    Vec v(dim);
    for (Index i = 0; i < dim; ++i) v(i) = uniform(lo, hi);
    return v;
  }

  Mat uniform_mat(Index rows, Index cols, double lo, double hi) {
    Mat m(rows, cols);
    // Row-major fill order, part of the serialized-reproducibility contract.
    for (Index i = 0; i < rows; ++i)
      for (Index j = 0; j < cols; ++j) m(i, j) = uniform(lo, hi);
    return m;
  }

  // Derive an independent stream, e.g. per trial or per rollout. Mixing the
  // tag through the same finalizer keeps substreams decorrelated while the
  // (seed, tag) -> stream mapping stays portable.
  Rng substream(std::uint64_t tag) const {
    Rng mix(state_ ^ (0x632be59bd9b4e019ULL * (tag + 1)));
    return Rng(mix.next_u64());
  }

 private:
  std::uint64_t state_;
};

}  // namespace hmr

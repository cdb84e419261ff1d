// Copyright 2026 The ITS-Desk Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef ITS_RNG_HPP
#define ITS_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>

#include "its/common.hpp"

namespace its {

// Deterministic RNG. All distribution transforms are implemented here so a
// checkpoint reproduces bit-for-bit on any toolchain with the same build.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(mix64(seed)) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1): 53-bit mantissa.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi] inclusive via rejection-free modulo on 64 bits
  // (bias < 2^-50 for the ranges used here).
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo + 1);
    return lo + static_cast<std::int64_t>(gen_() % span);
  }

  // Box-Muller without state carry-over.
  double normal(double mu = 0.0, double sigma = 1.0) {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mu + sigma * r * std::cos(2.0 * M_PI * u2);
  }

  // Normal truncated to +/- 2 sigma by rejection.
  double trunc_normal(double sigma) {
    for (;;) {
      const double v = normal(0.0, sigma);
      if (std::abs(v) <= 2.0 * sigma) return v;
    }
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Child stream; independent of further draws from this generator.
  Rng fork(std::uint64_t stream) const {
    return Rng(hash_combine(state_hash_, stream));
  }

  // Fisher-Yates over [0, n).
  std::vector<std::int64_t> permutation(std::int64_t n) {
    std::vector<std::int64_t> p(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = i;
    for (std::int64_t i = n - 1; i > 0; --i) {
      const auto j = uniform_int(0, i);
      std::swap(p[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(j)]);
    }
    return p;
  }

 private:
  std::mt19937_64 gen_;
  std::uint64_t state_hash_ = gen_();  // one draw reserved for fork identity

 public:
  // Seed for a sample within a globally seeded corpus.
  static std::uint64_t sample_seed(std::uint64_t global_seed, std::uint64_t sample_id) {
    return hash_combine(global_seed, sample_id);
  }
};

}  // namespace its

#endif  // ITS_RNG_HPP

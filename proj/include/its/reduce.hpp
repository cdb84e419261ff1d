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

#ifndef ITS_REDUCE_HPP
#define ITS_REDUCE_HPP

#include "its/common.hpp"

namespace its {

// Fixed-order scalar reductions. Eigen's vectorized kernels choose their
// lane split from the buffer address, so the same bytes can reduce to
// different last-ulp results depending on where the allocator placed them,
// which breaks the bitwise-reproducibility contract. Every float reduction
// in the project (losses, gradient norms, filterbank sums, statistics) goes
// through these loops; compiled without -ffast-math they keep one
// left-to-right evaluation order regardless of alignment.

inline double fixed_sum(const double* p, Index n) {
  double acc = 0.0;
  for (Index i = 0; i < n; ++i) acc += p[i];
  return acc;
}

inline double fixed_dot(const double* a, const double* b, Index n) {
  double acc = 0.0;
  for (Index i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

inline double fixed_max(const double* p, Index n) {
  double m = p[0];
  for (Index i = 1; i < n; ++i)
    if (p[i] > m) m = p[i];
  return m;
}

}  // namespace its

#endif  // ITS_REDUCE_HPP

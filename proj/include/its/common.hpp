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

#ifndef ITS_COMMON_HPP
#define ITS_COMMON_HPP

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace its {

using Index = std::int64_t;
using Shape = std::vector<Index>;

// Error taxonomy, mapped to CLI exit codes by the driver:
//   ConfigError -> 2, PrereqError -> 3, NumericError -> 4.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct PrereqError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};

[[noreturn]] inline void throw_config(const std::string& msg) { throw ConfigError(msg); }

#define ITS_CHECK(cond, msg)                                    \
  do {                                                          \
    if (!(cond)) throw ::its::ConfigError(std::string(msg));    \
  } while (0)

#define ITS_CHECK_IO(cond, msg)                                 \
  do {                                                          \
    if (!(cond)) throw ::its::IoError(std::string(msg));        \
  } while (0)

// splitmix64; used for deriving per-purpose sub-seeds from a root seed.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t v) {
  return mix64(seed ^ (0x9e3779b97f4a7c15ull + v + (seed << 6) + (seed >> 2)));
}

// FNV-1a over bytes; content hashes for manifests and run records.
inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

std::string hex64(std::uint64_t v);

// Whole-file helpers (binary-safe).
std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);
bool file_exists(const std::string& path);

// Monotonic and wall-clock milliseconds.
double steady_ms();
std::int64_t wall_ms();

}  // namespace its

#endif  // ITS_COMMON_HPP

/*
 * Copyright 2026 The saekit authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace saekit {

/// Shape mismatch between tensors or between a tensor and an operation.
class ShapeError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A caller broke an operation precondition (non-scalar loss, label out of
/// range, batch too small for batch norm, ...).
class ContractError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid user-facing configuration (unknown architecture, zero std, ...).
class ConfigError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed file content (bad magic, truncated record, ...).
class FormatError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<int64_t>;

inline int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t e : shape) n *= e;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Deterministic 64-bit generator (splitmix64). The standard library
/// distributions are implementation-defined, so uniform/normal draws are
/// produced here directly to keep seeded runs bit-reproducible.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    double mag = std::sqrt(-2.0 * std::log(u1));
    spare_ = mag * std::sin(6.283185307179586 * u2);
    has_spare_ = true;
    return mag * std::cos(6.283185307179586 * u2);
  }

 private:
  uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Stable 64-bit hash of (seed, name); used to derive one RNG stream per
/// named parameter so initial values depend only on the seed and the name.
inline uint64_t seed_for(uint64_t seed, std::string_view name) {
  uint64_t h = 0xcbf29ce484222325ULL ^ seed;
  for (char c : name) {
    h ^= static_cast<uint64_t>(static_cast<unsigned char>(c));
    h *= 0x100000001b3ULL;
  }
  // one splitmix round to spread low-entropy names
  h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ULL;
  return h ^ (h >> 27);
}

/// Kernel-internal thread cap from SAEKIT_THREADS; 0 or 1 means serial.
inline int kernel_threads() {
  const char* env = std::getenv("SAEKIT_THREADS");
  if (!env) return 1;
  int v = std::atoi(env);
  return v > 1 ? v : 1;
}

/// Runs fn(i) for i in [0, n). With SAEKIT_THREADS > 1 the index range is
/// split into contiguous chunks, one thread each; every index is still
/// processed exactly once and writes must be disjoint per index, so results
/// are identical to the serial order.
template <typename F>
void parallel_for(int64_t n, F&& fn) {
  int threads = kernel_threads();
  if (threads <= 1 || n < 2) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  if (threads > n) threads = static_cast<int>(n);
  std::vector<std::thread> pool;
  pool.reserve(threads);
  int64_t chunk = (n + threads - 1) / threads;
  for (int t = 0; t < threads; ++t) {
    int64_t lo = t * chunk;
    int64_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      for (int64_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace saekit

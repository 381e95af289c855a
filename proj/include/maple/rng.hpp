// Copyright 2026 The Maple Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>

#include "maple/error.hpp"

namespace maple {

// splitmix64 finalizer. Used to derive well-separated child seeds so that
// forked streams are independent of draw order on the parent.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Deterministic random source. All distribution transforms are written out
// explicitly because the std::*_distribution classes are
// implementation-defined; a given (seed, call sequence) must reproduce the
// same values on every toolchain.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(mix64(seed)) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller. No spare caching: one call consumes
  // exactly two engine draws, which keeps interleaved call sites
  // reproducible.
  double gaussian() {
    // u1 in (0, 1] so the log is finite.
    double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  double gaussian(double sigma) { return sigma == 0.0 ? 0.0 : sigma * gaussian(); }

  // Unbiased integer in [0, n) via rejection.
  std::size_t uniform_index(std::size_t n) {
    if (n == 0) throw InvalidArgument("uniform_index: n must be positive");
    std::uint64_t span = static_cast<std::uint64_t>(n);
    std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                          std::numeric_limits<std::uint64_t>::max() % span;
    std::uint64_t draw;
    do {
      draw = next_u64();
    } while (draw >= limit);
    return static_cast<std::size_t>(draw % span);
  }

  // Index draw proportional to non-negative weights (CDF inversion).
  std::size_t categorical(std::span<const double> weights) {
    double total = 0.0;
    for (double w : weights) {
      if (!(w >= 0.0)) throw InvalidArgument("categorical: negative or NaN weight");
      total += w;
    }
    if (!(total > 0.0) || !std::isfinite(total)) {
      throw InvalidArgument("categorical: weights must have a positive finite sum");
    }
    double target = uniform() * total;
    double acc = 0.0;
    std::size_t last_positive = weights.size();
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (weights[i] <= 0.0) continue;
      acc += weights[i];
      last_positive = i;
      if (target < acc) return i;
    }
    return last_positive;  // fp slack on the final partial sum
  }

  // Child stream keyed by (seed, stream). Independent of how many draws
  // have been taken from the parent.
  Rng fork(std::uint64_t stream) const { return Rng(mix64(seed_ ^ mix64(stream))); }

  std::uint64_t seed() const noexcept { return seed_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace maple

// Copyright 2026 The flsim Authors
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

#ifndef FLSIM_RNG_HPP_
#define FLSIM_RNG_HPP_

#include <cmath>
#include <cstdint>

namespace flsim {

// SplitMix64 output function. Used both as the simulation PRNG step and as a
// mixing function for deriving independent seed streams; std::* distributions
// are avoided because their output is implementation-defined and runs must be
// reproducible bit for bit.
inline std::uint64_t Mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Derives a child seed from a parent seed and one or more stream labels.
inline std::uint64_t DeriveSeed(std::uint64_t parent, std::uint64_t label) {
  return Mix64(parent ^ Mix64(label ^ 0xa5a5a5a5a5a5a5a5ULL));
}
inline std::uint64_t DeriveSeed(std::uint64_t parent, std::uint64_t a,
                                std::uint64_t b) {
  return DeriveSeed(DeriveSeed(parent, a), b);
}
inline std::uint64_t DeriveSeed(std::uint64_t parent, std::uint64_t a,
                                std::uint64_t b, std::uint64_t c) {
  return DeriveSeed(DeriveSeed(parent, a, b), c);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t NextU64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double NextDouble() {
    return static_cast<double>(NextU64() >> 11) * 0x1.0p-53;
  }

  // Uniform in [lo, hi).
  double Uniform(double lo, double hi) { return lo + (hi - lo) * NextDouble(); }

  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t NextBelow(std::uint64_t n) { return NextU64() % n; }

  bool Bernoulli(double p) { return NextDouble() < p; }

  // Box-Muller; one draw per call, the pair's second value is discarded so
  // the stream position is a pure function of the call count.
  double Normal(double mean, double stddev) {
    double u1 = NextDouble();
    double u2 = NextDouble();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(6.283185307179586476925286766559 * u2);
  }

  double LogNormal(double mu, double sigma) {
    return std::exp(Normal(mu, sigma));
  }

  // Waiting time (ms) for the first arrival of a Poisson process with the
  // given per-millisecond rate.
  double ExponentialWait(double rate_per_ms) {
    double u = NextDouble();
    if (u <= 0.0) u = 0x1.0p-53;
    return -std::log(u) / rate_per_ms;
  }

 private:
  std::uint64_t state_;
};

}  // namespace flsim

#endif  // FLSIM_RNG_HPP_

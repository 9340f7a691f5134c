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

#include "flsim/secure_agg.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "flsim/errors.hpp"
#include "flsim/rng.hpp"

namespace flsim {
namespace {

// Uniform field element; only the all-ones 61-bit pattern is rejected.
std::uint64_t NextFieldElement(Rng& rng) {
  for (;;) {
    std::uint64_t v = rng.NextU64() & kFieldPrime;  // low 61 bits
    if (v < kFieldPrime) return v;
  }
}

// Nonzero field element, so seeds never collide with the null-mask sentinel.
std::uint64_t NextNonzeroFieldElement(Rng& rng) {
  for (;;) {
    std::uint64_t v = NextFieldElement(rng);
    if (v != 0) return v;
  }
}

std::uint64_t MemberKey(std::uint64_t nonce, std::uint32_t member) {
  Rng rng(DeriveSeed(nonce, 0x6b657973ULL, member));
  return NextNonzeroFieldElement(rng);
}

// Pairwise seed for the unordered pair {i, j}, i < j, derived from the lower
// index member's key so one reconstructed key unlocks the pair.
std::uint64_t PairSeed(std::uint64_t lower_key, std::uint64_t nonce,
                       std::uint32_t i, std::uint32_t j) {
  Rng rng(DeriveSeed(lower_key ^ nonce, (static_cast<std::uint64_t>(i) << 32) |
                                            static_cast<std::uint64_t>(j)));
  return NextNonzeroFieldElement(rng);
}

std::uint64_t CommitmentOf(std::uint64_t seed) {
  return Mix64(seed ^ 0xc0117e3dULL);
}

std::size_t PairIndex(std::size_t n, std::size_t i, std::size_t j) {
  // Row-major upper triangle: (i, j) with i < j.
  return i * n - i * (i + 1) / 2 + (j - i - 1);
}

}  // namespace

std::uint64_t AddMod(std::uint64_t a, std::uint64_t b) {
  std::uint64_t s = a + b;  // < 2^62, no overflow
  if (s >= kFieldPrime) s -= kFieldPrime;
  return s;
}

std::uint64_t SubMod(std::uint64_t a, std::uint64_t b) {
  return a >= b ? a - b : a + kFieldPrime - b;
}

std::uint64_t MulMod(std::uint64_t a, std::uint64_t b) {
  unsigned __int128 p = static_cast<unsigned __int128>(a) * b;
  return static_cast<std::uint64_t>(p % kFieldPrime);
}

std::uint64_t PowMod(std::uint64_t base, std::uint64_t exp) {
  std::uint64_t result = 1;
  std::uint64_t acc = base % kFieldPrime;
  while (exp > 0) {
    if (exp & 1) result = MulMod(result, acc);
    acc = MulMod(acc, acc);
    exp >>= 1;
  }
  return result;
}

std::uint64_t InvMod(std::uint64_t a) {
  if (a % kFieldPrime == 0) throw Error("InvMod: zero has no inverse");
  return PowMod(a, kFieldPrime - 2);
}

FixedVector EncodeFixed(const ModelUpdate& update, std::uint64_t scale,
                        std::size_t group_size) {
  if (group_size == 0) group_size = 1;
  const double limit =
      static_cast<double>(kFieldPrime) / (2.0 * static_cast<double>(group_size));
  FixedVector out;
  out.scale = scale;
  out.dim = update.delta.size();
  out.entries.reserve(out.dim + 1);
  auto encode_one = [&](double value) {
    double scaled = value * static_cast<double>(scale);
    if (!std::isfinite(scaled) || std::fabs(scaled) >= limit) {
      throw OverflowRiskError("EncodeFixed: |" + std::to_string(value) +
                              "| * scale exceeds field headroom for group of " +
                              std::to_string(group_size));
    }
    long long rounded = std::llround(scaled);
    if (rounded >= 0) return static_cast<std::uint64_t>(rounded) % kFieldPrime;
    return kFieldPrime - (static_cast<std::uint64_t>(-rounded) % kFieldPrime);
  };
  for (double v : update.delta) out.entries.push_back(encode_one(v));
  out.entries.push_back(encode_one(static_cast<double>(update.weight)));
  return out;
}

ModelUpdate DecodeFixed(const FixedVector& fixed) {
  if (fixed.entries.size() != fixed.dim + 1) {
    throw DimensionMismatchError("DecodeFixed: entry count != dim + 1");
  }
  ModelUpdate out;
  out.delta.reserve(fixed.dim);
  auto lift = [&](std::uint64_t e) -> double {
    // Centered lift: values above the midpoint decode as negatives.
    if (e > kFieldPrime / 2) {
      return -static_cast<double>(kFieldPrime - e) /
             static_cast<double>(fixed.scale);
    }
    return static_cast<double>(e) / static_cast<double>(fixed.scale);
  };
  for (std::size_t i = 0; i < fixed.dim; ++i) {
    out.delta.push_back(lift(fixed.entries[i]));
  }
  double w = lift(fixed.entries[fixed.dim]);
  if (w < 0) throw DecodeError("DecodeFixed: negative weight slot");
  out.weight = static_cast<std::uint64_t>(std::llround(w));
  return out;
}

void AddInto(FixedVector& acc, const FixedVector& v) {
  if (acc.entries.empty()) {
    acc = v;
    return;
  }
  if (acc.entries.size() != v.entries.size() || acc.scale != v.scale) {
    throw DimensionMismatchError("AddInto: fixed vector layout mismatch");
  }
  for (std::size_t i = 0; i < acc.entries.size(); ++i) {
    acc.entries[i] = AddMod(acc.entries[i], v.entries[i]);
  }
}

std::uint32_t DefaultThreshold(std::size_t group_size) {
  return static_cast<std::uint32_t>((2 * group_size + 2) / 3);
}

std::vector<std::uint64_t> MaskVector(std::uint64_t seed, std::size_t entries) {
  std::vector<std::uint64_t> out(entries, 0);
  if (seed == 0) return out;
  Rng rng(seed);
  for (std::size_t i = 0; i < entries; ++i) out[i] = NextFieldElement(rng);
  return out;
}

std::vector<std::uint64_t> ShamirShares(std::uint64_t secret, std::size_t n,
                                        std::uint32_t t, std::uint64_t seed) {
  if (t == 0 || t > n) throw InvalidConfigError("ShamirShares: bad threshold");
  // Degree t-1 polynomial with constant term = secret.
  std::vector<std::uint64_t> coeffs(t);
  coeffs[0] = secret % kFieldPrime;
  Rng rng(DeriveSeed(seed, 0x706f6c79ULL));
  for (std::uint32_t c = 1; c < t; ++c) coeffs[c] = NextFieldElement(rng);

  std::vector<std::uint64_t> shares(n);
  for (std::size_t m = 0; m < n; ++m) {
    std::uint64_t x = static_cast<std::uint64_t>(m + 1);
    std::uint64_t y = 0;
    // Horner, highest coefficient first.
    for (std::size_t c = t; c-- > 0;) {
      y = AddMod(MulMod(y, x), coeffs[c]);
    }
    shares[m] = y;
  }
  return shares;
}

std::uint64_t ShamirReconstruct(
    std::span<const std::pair<std::uint64_t, std::uint64_t>> points,
    std::uint32_t t) {
  if (points.size() < t) {
    throw BelowThresholdError("ShamirReconstruct: " +
                              std::to_string(points.size()) + " shares < t=" +
                              std::to_string(t));
  }
  // Lagrange interpolation at x = 0 over exactly t points.
  std::uint64_t secret = 0;
  for (std::uint32_t i = 0; i < t; ++i) {
    std::uint64_t num = 1;
    std::uint64_t den = 1;
    for (std::uint32_t j = 0; j < t; ++j) {
      if (i == j) continue;
      num = MulMod(num, points[j].first % kFieldPrime);
      den = MulMod(den, SubMod(points[j].first % kFieldPrime,
                               points[i].first % kFieldPrime));
    }
    std::uint64_t term = MulMod(points[i].second, MulMod(num, InvMod(den)));
    secret = AddMod(secret, term);
  }
  return secret;
}

PrepareResult Prepare(const SecAggGroup& group) {
  const std::size_t n = group.size();
  if (n < 2) throw InvalidConfigError("Prepare: group needs >= 2 members");
  if (group.threshold == 0 || group.threshold > n) {
    throw InvalidConfigError("Prepare: threshold must be in [1, n]");
  }

  PrepareResult result;
  result.bundles.resize(n);
  result.pairwise_seed_count = n * (n - 1) / 2;
  result.seed_commitments.assign(result.pairwise_seed_count, 0);

  std::vector<std::uint64_t> keys(n);
  for (std::size_t m = 0; m < n; ++m) {
    keys[m] = MemberKey(group.session_nonce, static_cast<std::uint32_t>(m));
    result.bundles[m].member_index = static_cast<std::uint32_t>(m);
    result.bundles[m].session_nonce = group.session_nonce;
    result.bundles[m].pair_seeds.assign(n, 0);
    result.bundles[m].incoming_shares.resize(n);
  }

  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      std::uint64_t s =
          PairSeed(keys[i], group.session_nonce, static_cast<std::uint32_t>(i),
                   static_cast<std::uint32_t>(j));
      result.bundles[i].pair_seeds[j] = s;
      result.bundles[j].pair_seeds[i] = s;
      result.seed_commitments[PairIndex(n, i, j)] = CommitmentOf(s);
    }
  }

  // Each member's key material is threshold-shared with the whole group.
  for (std::size_t owner = 0; owner < n; ++owner) {
    std::vector<std::uint64_t> shares =
        ShamirShares(keys[owner], n, group.threshold,
                     DeriveSeed(group.session_nonce, 0x7368617265ULL, owner));
    for (std::size_t holder = 0; holder < n; ++holder) {
      result.bundles[holder].incoming_shares[owner] =
          KeyShare{static_cast<std::uint32_t>(owner),
                   static_cast<std::uint64_t>(holder + 1), shares[holder]};
    }
  }
  return result;
}

FixedVector MaskCommit(const FixedVector& fixed, const MaskShareBundle& bundle,
                       std::size_t group_size) {
  if (bundle.pair_seeds.size() != group_size) {
    throw DimensionMismatchError("MaskCommit: bundle does not match group");
  }
  FixedVector masked = fixed;
  const std::size_t m = bundle.member_index;
  for (std::size_t j = 0; j < group_size; ++j) {
    if (j == m) continue;
    std::vector<std::uint64_t> mask =
        MaskVector(bundle.pair_seeds[j], masked.entries.size());
    for (std::size_t e = 0; e < masked.entries.size(); ++e) {
      masked.entries[e] = j > m ? AddMod(masked.entries[e], mask[e])
                                : SubMod(masked.entries[e], mask[e]);
    }
  }
  return masked;
}

FixedVector FinalizeSum(const SecAggGroup& group,
                        const std::vector<std::uint8_t>& committed,
                        const FixedVector& masked_sum,
                        const std::vector<RevealedShares>& reveals,
                        const std::vector<std::uint64_t>& seed_commitments) {
  const std::size_t n = group.size();
  if (committed.size() != n) {
    throw DimensionMismatchError("FinalizeSum: committed flags != group size");
  }

  std::size_t distinct = 0;
  std::vector<std::uint8_t> seen(n, 0);
  for (const RevealedShares& r : reveals) {
    if (r.from_member < n && !seen[r.from_member]) {
      seen[r.from_member] = 1;
      ++distinct;
    }
  }
  if (distinct < group.threshold) {
    throw BelowThresholdError("FinalizeSum: " + std::to_string(distinct) +
                              " survivors < threshold " +
                              std::to_string(group.threshold));
  }

  // Reconstruct the lower-index key of every pair with exactly one committed
  // endpoint; those pair masks did not cancel in the sum.
  FixedVector result = masked_sum;
  std::vector<std::uint64_t> recovered_keys(n, 0);
  std::vector<std::uint8_t> have_key(n, 0);
  auto key_of = [&](std::size_t owner) -> std::uint64_t {
    if (have_key[owner]) return recovered_keys[owner];
    std::vector<std::pair<std::uint64_t, std::uint64_t>> points;
    for (const RevealedShares& r : reveals) {
      for (const KeyShare& s : r.shares) {
        if (s.owner == owner) points.emplace_back(s.x, s.y);
      }
    }
    std::sort(points.begin(), points.end());
    points.erase(std::unique(points.begin(), points.end()), points.end());
    std::uint64_t key = ShamirReconstruct(points, group.threshold);
    recovered_keys[owner] = key;
    have_key[owner] = 1;
    return key;
  };

  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      bool ci = committed[i] != 0;
      bool cj = committed[j] != 0;
      if (ci == cj) continue;  // both in (cancelled) or both out (absent)
      std::uint64_t seed =
          PairSeed(key_of(i), group.session_nonce, static_cast<std::uint32_t>(i),
                   static_cast<std::uint32_t>(j));
      if (CommitmentOf(seed) != seed_commitments[PairIndex(n, i, j)]) {
        throw Error("FinalizeSum: reconstructed seed fails its commitment");
      }
      std::vector<std::uint64_t> mask = MaskVector(seed, result.entries.size());
      for (std::size_t e = 0; e < result.entries.size(); ++e) {
        // Committed member i contributed +mask; committed member j, -mask.
        result.entries[e] = ci ? SubMod(result.entries[e], mask[e])
                               : AddMod(result.entries[e], mask[e]);
      }
    }
  }
  return result;
}

ModelUpdate ComposeHierarchical(std::span<const FixedVector> group_sums,
                                std::span<const std::size_t> group_member_counts,
                                std::size_t min_group_size_k) {
  if (group_sums.empty()) {
    throw InvalidConfigError("ComposeHierarchical: no group sums");
  }
  if (group_member_counts.size() != group_sums.size()) {
    throw DimensionMismatchError(
        "ComposeHierarchical: counts do not match sums");
  }
  for (std::size_t g = 0; g < group_member_counts.size(); ++g) {
    if (group_member_counts[g] < min_group_size_k) {
      throw GroupTooSmallError("ComposeHierarchical: group " +
                               std::to_string(g) + " has " +
                               std::to_string(group_member_counts[g]) +
                               " members < k=" +
                               std::to_string(min_group_size_k));
    }
  }
  FixedVector total;
  for (const FixedVector& gs : group_sums) AddInto(total, gs);
  return DecodeFixed(total);
}

}  // namespace flsim

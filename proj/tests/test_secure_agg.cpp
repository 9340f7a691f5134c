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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "flsim/errors.hpp"
#include "flsim/rng.hpp"
#include "flsim/secure_agg.hpp"
#include "test_support.hpp"

using namespace flsim;
using namespace flsim::testing;

namespace {

SecAggGroup MakeGroup(std::size_t n, std::uint32_t t, std::uint64_t nonce) {
  SecAggGroup g;
  for (std::size_t i = 0; i < n; ++i) g.members.push_back(100 + i);
  g.threshold = t;
  g.session_nonce = nonce;
  return g;
}

ModelUpdate RandomUpdate(Rng& rng, std::size_t dim, double scale = 5.0) {
  ModelUpdate u;
  u.delta.resize(dim);
  for (double& d : u.delta) d = rng.Normal(0.0, scale);
  u.weight = 1 + rng.NextBelow(20);
  return u;
}

// Field sum of the given members' fixed vectors: the independent oracle.
FixedVector OracleSum(const std::vector<FixedVector>& fixed,
                      const std::vector<std::size_t>& members) {
  FixedVector acc;
  for (std::size_t m : members) AddInto(acc, fixed[m]);
  return acc;
}

}  // namespace

TEST_CASE("fixed-point encoding") {
  ModelUpdate zero{{0.0, 0.0}, 0};
  FixedVector fz = EncodeFixed(zero, kDefaultFixedScale, 10);
  CHECK(fz.entries == std::vector<std::uint64_t>{0, 0, 0});

  ModelUpdate v{{1.5}, 0};
  FixedVector fv = EncodeFixed(v, 1u << 20, 10);
  CHECK(fv.entries[0] == 1572864);  // 1.5 * 2^20

  // decode(encode(x)) within 1/(2*scale) per entry, brute-force comparison.
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    ModelUpdate u = RandomUpdate(rng, 8, 100.0);
    FixedVector f = EncodeFixed(u, kDefaultFixedScale, 100);
    ModelUpdate back = DecodeFixed(f);
    double tol = 1.0 / (2.0 * static_cast<double>(kDefaultFixedScale));
    for (std::size_t i = 0; i < u.delta.size(); ++i) {
      CHECK(std::fabs(back.delta[i] - u.delta[i]) <= tol * 1.0000001);
    }
    CHECK(back.weight == u.weight);
  }

  ModelUpdate huge{{1e18}, 1};
  CHECK_THROWS_AS(EncodeFixed(huge, kDefaultFixedScale, 100),
                  OverflowRiskError);
}

TEST_CASE("two-member masks are antisymmetric") {
  SecAggGroup g = MakeGroup(2, 2, 777);
  PrepareResult prep = Prepare(g);
  CHECK(prep.pairwise_seed_count == 1);
  CHECK(prep.bundles[0].pair_seeds[1] == prep.bundles[1].pair_seeds[0]);

  ModelUpdate zero{{0.0, 0.0, 0.0}, 0};
  FixedVector fz = EncodeFixed(zero, kDefaultFixedScale, 2);
  FixedVector m0 = MaskCommit(fz, prep.bundles[0], 2);
  FixedVector m1 = MaskCommit(fz, prep.bundles[1], 2);
  // Device 0 adds +m, device 1 adds -m: the sum cancels to zero.
  for (std::size_t i = 0; i < m0.entries.size(); ++i) {
    CHECK(AddMod(m0.entries[i], m1.entries[i]) == 0);
    CHECK(m0.entries[i] != 0);  // the mask itself is not degenerate
  }
}

TEST_CASE("prepare is deterministic under a fixed nonce") {
  SecAggGroup g = MakeGroup(5, 4, 4242);
  PrepareResult a = Prepare(g);
  PrepareResult b = Prepare(g);
  for (std::size_t m = 0; m < 5; ++m) {
    CHECK(a.bundles[m].pair_seeds == b.bundles[m].pair_seeds);
  }
  CHECK(a.seed_commitments == b.seed_commitments);
}

TEST_CASE("all-zero seeds degenerate to the identity mask") {
  MaskShareBundle bundle;
  bundle.member_index = 0;
  bundle.pair_seeds.assign(4, 0);  // null-mask sentinel
  ModelUpdate u{{1.0, -2.0}, 3};
  FixedVector fixed = EncodeFixed(u, kDefaultFixedScale, 4);
  FixedVector masked = MaskCommit(fixed, bundle, 4);
  CHECK(masked.entries == fixed.entries);
}

TEST_CASE("pairwise cancellation: full group sums masked == sums fixed") {
  Rng rng(17);
  SecAggGroup g = MakeGroup(6, 4, 99);
  PrepareResult prep = Prepare(g);
  std::vector<FixedVector> fixed;
  FixedVector masked_sum;
  FixedVector fixed_sum;
  for (std::size_t m = 0; m < 6; ++m) {
    ModelUpdate u = RandomUpdate(rng, 5);
    fixed.push_back(EncodeFixed(u, kDefaultFixedScale, 6));
    AddInto(fixed_sum, fixed.back());
    AddInto(masked_sum, MaskCommit(fixed.back(), prep.bundles[m], 6));
  }
  CHECK(masked_sum.entries == fixed_sum.entries);
}

TEST_CASE("a masked vector differs from its plain vector") {
  Rng rng(23);
  SecAggGroup g = MakeGroup(3, 2, 1);
  PrepareResult prep = Prepare(g);
  ModelUpdate u = RandomUpdate(rng, 16);
  FixedVector fixed = EncodeFixed(u, kDefaultFixedScale, 3);
  FixedVector masked = MaskCommit(fixed, prep.bundles[0], 3);
  CHECK(masked.entries != fixed.entries);
}

TEST_CASE("finalize recovers the exact sum despite a post-commit dropout") {
  // n=5, t=3: all five commit, one vanishes before revealing shares.
  Rng rng(31);
  SecAggGroup g = MakeGroup(5, 3, 2718);
  PrepareResult prep = Prepare(g);

  std::vector<FixedVector> fixed;
  FixedVector masked_sum;
  for (std::size_t m = 0; m < 5; ++m) {
    fixed.push_back(EncodeFixed(RandomUpdate(rng, 4), kDefaultFixedScale, 5));
    AddInto(masked_sum, MaskCommit(fixed[m], prep.bundles[m], 5));
  }
  std::vector<std::uint8_t> committed(5, 1);
  std::vector<RevealedShares> reveals;
  for (std::size_t m = 0; m < 4; ++m) {  // member 4 dropped after commit
    reveals.push_back(RevealedShares{static_cast<std::uint32_t>(m),
                                     prep.bundles[m].incoming_shares});
  }
  FixedVector sum = FinalizeSum(g, committed, masked_sum, reveals,
                                prep.seed_commitments);
  CHECK(sum.entries == OracleSum(fixed, {0, 1, 2, 3, 4}).entries);
}

TEST_CASE("finalize fails below the survivor threshold, with no output") {
  Rng rng(37);
  SecAggGroup g = MakeGroup(5, 3, 5);
  PrepareResult prep = Prepare(g);
  FixedVector masked_sum;
  std::vector<std::uint8_t> committed(5, 1);
  for (std::size_t m = 0; m < 5; ++m) {
    AddInto(masked_sum,
            MaskCommit(EncodeFixed(RandomUpdate(rng, 4), kDefaultFixedScale, 5),
                       prep.bundles[m], 5));
  }
  std::vector<RevealedShares> reveals;
  for (std::size_t m = 0; m < 2; ++m) {  // t-1 survivors
    reveals.push_back(RevealedShares{static_cast<std::uint32_t>(m),
                                     prep.bundles[m].incoming_shares});
  }
  CHECK_THROWS_AS(
      FinalizeSum(g, committed, masked_sum, reveals, prep.seed_commitments),
      BelowThresholdError);
}

TEST_CASE("no dropouts: exact modular sum, decoded near the float sum") {
  Rng rng(41);
  SecAggGroup g = MakeGroup(8, 6, 808);
  PrepareResult prep = Prepare(g);
  std::vector<FixedVector> fixed;
  std::vector<std::vector<double>> deltas;
  FixedVector masked_sum;
  for (std::size_t m = 0; m < 8; ++m) {
    ModelUpdate u = RandomUpdate(rng, 6);
    deltas.push_back(u.delta);
    fixed.push_back(EncodeFixed(u, kDefaultFixedScale, 8));
    AddInto(masked_sum, MaskCommit(fixed[m], prep.bundles[m], 8));
  }
  std::vector<std::uint8_t> committed(8, 1);
  std::vector<RevealedShares> reveals;
  for (std::size_t m = 0; m < 8; ++m) {
    reveals.push_back(RevealedShares{static_cast<std::uint32_t>(m),
                                     prep.bundles[m].incoming_shares});
  }
  FixedVector sum = FinalizeSum(g, committed, masked_sum, reveals,
                                prep.seed_commitments);
  CHECK(sum.entries ==
        OracleSum(fixed, {0, 1, 2, 3, 4, 5, 6, 7}).entries);

  ModelUpdate decoded = DecodeFixed(sum);
  std::vector<double> float_sum = SumOracle(deltas);
  double tol = 8.0 / static_cast<double>(kDefaultFixedScale);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(std::fabs(decoded.delta[i] - float_sum[i]) <= tol);
  }
}

TEST_CASE("pre-commit dropouts are stripped via reconstructed seeds") {
  // Member 2 completes Prepare but never commits: its pairwise masks stay
  // unmatched in the committed sum and must be stripped.
  Rng rng(47);
  SecAggGroup g = MakeGroup(5, 3, 1234);
  PrepareResult prep = Prepare(g);
  std::vector<FixedVector> fixed;
  for (std::size_t m = 0; m < 5; ++m) {
    fixed.push_back(EncodeFixed(RandomUpdate(rng, 3), kDefaultFixedScale, 5));
  }
  FixedVector masked_sum;
  std::vector<std::uint8_t> committed(5, 0);
  for (std::size_t m : {0ul, 1ul, 3ul, 4ul}) {
    AddInto(masked_sum, MaskCommit(fixed[m], prep.bundles[m], 5));
    committed[m] = 1;
  }
  std::vector<RevealedShares> reveals;
  for (std::size_t m : {0ul, 1ul, 3ul}) {
    reveals.push_back(RevealedShares{static_cast<std::uint32_t>(m),
                                     prep.bundles[m].incoming_shares});
  }
  FixedVector sum = FinalizeSum(g, committed, masked_sum, reveals,
                                prep.seed_commitments);
  CHECK(sum.entries == OracleSum(fixed, {0, 1, 3, 4}).entries);
}

TEST_CASE("hierarchical composition equals flat summation") {
  Rng rng(53);
  std::vector<FixedVector> group_sums;
  std::vector<std::size_t> counts;
  FixedVector flat;
  std::vector<std::vector<double>> all_deltas;
  std::uint64_t weight_total = 0;
  for (int gidx = 0; gidx < 4; ++gidx) {
    FixedVector gsum;
    for (int m = 0; m < 10; ++m) {
      ModelUpdate u = RandomUpdate(rng, 5);
      weight_total += u.weight;
      all_deltas.push_back(u.delta);
      FixedVector f = EncodeFixed(u, kDefaultFixedScale, 40);
      AddInto(gsum, f);
      AddInto(flat, f);
    }
    group_sums.push_back(gsum);
    counts.push_back(10);
  }
  ModelUpdate composed = ComposeHierarchical(group_sums, counts, 10);
  ModelUpdate flat_decoded = DecodeFixed(flat);
  CHECK(composed.delta == flat_decoded.delta);
  CHECK(composed.weight == weight_total);

  counts[1] = 9;  // one undersized group
  CHECK_THROWS_AS(ComposeHierarchical(group_sums, counts, 10),
                  GroupTooSmallError);

  // k=1 is the degenerate parameter: any group size passes.
  counts[1] = 9;
  CHECK_NOTHROW(ComposeHierarchical(group_sums, counts, 1));
}

TEST_CASE("pairwise seed count grows quadratically") {
  for (std::size_t n : {2ul, 5ul, 16ul, 31ul}) {
    PrepareResult prep = Prepare(MakeGroup(n, DefaultThreshold(n), n));
    CHECK(prep.pairwise_seed_count == n * (n - 1) / 2);
  }
}

TEST_CASE("shamir: exactly t shares reconstruct, t-1 do not") {
  std::uint64_t secret = 0x123456789abcdefULL % kFieldPrime;
  std::vector<std::uint64_t> shares = ShamirShares(secret, 7, 4, 99);
  std::vector<std::pair<std::uint64_t, std::uint64_t>> points;
  for (std::size_t i = 0; i < 4; ++i) points.emplace_back(i + 1, shares[i]);
  CHECK(ShamirReconstruct(points, 4) == secret);

  points.pop_back();
  CHECK_THROWS_AS(ShamirReconstruct(points, 4), BelowThresholdError);
  // With only t-1 points even a forced degree-(t-2) fit misses the secret.
  CHECK(ShamirReconstruct(points, 3) != secret);
}

TEST_CASE("randomized dropout schedules stay exact or fail atomically") {
  Rng rng(61);
  for (int trial = 0; trial < 100; ++trial) {
    std::size_t n = 2 + rng.NextBelow(15);
    std::uint32_t t = DefaultThreshold(n);
    SecAggGroup g = MakeGroup(n, t, rng.NextU64());
    PrepareResult prep = Prepare(g);

    std::vector<FixedVector> fixed;
    std::vector<std::uint8_t> committed(n, 0);
    std::vector<std::size_t> committed_members;
    FixedVector masked_sum;
    for (std::size_t m = 0; m < n; ++m) {
      fixed.push_back(
          EncodeFixed(RandomUpdate(rng, 4), kDefaultFixedScale, n));
      if (rng.NextDouble() < 0.8) {
        committed[m] = 1;
        committed_members.push_back(m);
        AddInto(masked_sum, MaskCommit(fixed[m], prep.bundles[m], n));
      }
    }
    if (committed_members.empty()) continue;

    std::vector<RevealedShares> reveals;
    for (std::size_t m : committed_members) {
      if (rng.NextDouble() < 0.85) {
        reveals.push_back(RevealedShares{static_cast<std::uint32_t>(m),
                                         prep.bundles[m].incoming_shares});
      }
    }
    if (reveals.size() >= t) {
      FixedVector sum = FinalizeSum(g, committed, masked_sum, reveals,
                                    prep.seed_commitments);
      CHECK(sum.entries == OracleSum(fixed, committed_members).entries);
    } else {
      CHECK_THROWS_AS(FinalizeSum(g, committed, masked_sum, reveals,
                                  prep.seed_commitments),
                      BelowThresholdError);
    }
  }
}

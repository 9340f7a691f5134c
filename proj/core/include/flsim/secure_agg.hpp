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
//
// Masked-sum aggregation over a prime field: pairwise PRG masks cancel in the
// group sum, threshold secret sharing recovers the masks of members that drop
// out between Prepare and Commit. The key agreement of a production secure
// aggregation protocol is replaced by seeds derived from a session nonce, so
// this is a protocol-shape simulation, not a cryptographic implementation.

#ifndef FLSIM_SECURE_AGG_HPP_
#define FLSIM_SECURE_AGG_HPP_

#include <cstdint>
#include <span>
#include <vector>

#include "flsim/common.hpp"
#include "flsim/fedavg.hpp"

namespace flsim {

// Field modulus: the Mersenne prime 2^61 - 1. Leaves headroom for masked
// sums over groups up to ~1000 members with update magnitudes up to ~1000 at
// the default scale.
inline constexpr std::uint64_t kFieldPrime = (1ULL << 61) - 1;
inline constexpr std::uint64_t kDefaultFixedScale = 1ULL << 20;

std::uint64_t AddMod(std::uint64_t a, std::uint64_t b);
std::uint64_t SubMod(std::uint64_t a, std::uint64_t b);
std::uint64_t MulMod(std::uint64_t a, std::uint64_t b);
std::uint64_t PowMod(std::uint64_t base, std::uint64_t exp);
std::uint64_t InvMod(std::uint64_t a);

// Fixed-point vector over the field. Layout: `dim` delta entries followed by
// one entry carrying the update weight, all at the same power-of-two scale,
// so that both sums an FL round needs are recovered from the same masked sum.
struct FixedVector {
  std::vector<std::uint64_t> entries;
  std::uint64_t scale = kDefaultFixedScale;
  std::size_t dim = 0;
};

// Rounds each delta entry to the nearest multiple of 1/scale and lifts it
// into the field; appends the weight slot. Throws OverflowRiskError unless
// |entry| * scale < kFieldPrime / (2 * group_size) for every entry, which
// guarantees the group's masked sum cannot wrap.
FixedVector EncodeFixed(const ModelUpdate& update, std::uint64_t scale,
                        std::size_t group_size);

// Inverse of EncodeFixed up to fixed-point rounding (1/(2*scale) per entry).
ModelUpdate DecodeFixed(const FixedVector& fixed);

// Entrywise sum mod kFieldPrime. Dimensions must match.
void AddInto(FixedVector& acc, const FixedVector& v);

// Group of devices whose updates are summed under one protocol session.
struct SecAggGroup {
  std::vector<DeviceId> members;  // ordered; member index = position
  std::uint32_t threshold = 0;    // minimum survivors for Finalization
  std::uint64_t session_nonce = 0;

  std::size_t size() const { return members.size(); }
};

// ceil(2n/3): the default "sufficient number" of finalization survivors.
std::uint32_t DefaultThreshold(std::size_t group_size);

// Shamir share of one member's key material, evaluated at point x.
struct KeyShare {
  std::uint32_t owner = 0;  // member index whose key this is a share of
  std::uint64_t x = 0;
  std::uint64_t y = 0;
};

// Everything one member takes away from the Prepare phase: the seeds shared
// with each partner (zero seed means "no mask" and is never produced by
// Prepare) and one threshold share of every member's key material.
struct MaskShareBundle {
  std::uint32_t member_index = 0;
  std::uint64_t session_nonce = 0;
  std::vector<std::uint64_t> pair_seeds;  // indexed by partner; self slot 0
  std::vector<KeyShare> incoming_shares;  // share of member j's key, per j
};

struct PrepareResult {
  std::vector<MaskShareBundle> bundles;          // index-aligned with members
  std::vector<std::uint64_t> seed_commitments;   // upper triangle, row-major
  std::size_t pairwise_seed_count = 0;           // n*(n-1)/2
};

// Establishes pairwise seeds and distributes threshold shares. Members that
// drop before Commit contribute nothing; their unmatched masks are stripped
// during finalization via the shares handed out here.
PrepareResult Prepare(const SecAggGroup& group);

// Device side of the Commit phase: fixed + sum of masks toward higher-index
// partners - sum of masks toward lower-index partners (mod field).
FixedVector MaskCommit(const FixedVector& fixed, const MaskShareBundle& bundle,
                       std::size_t group_size);

// Shares revealed by one finalization survivor.
struct RevealedShares {
  std::uint32_t from_member = 0;
  std::vector<KeyShare> shares;
};

// Unmasks the accumulated sum of committed inputs. `committed[i]` says whether
// member i's masked input is in `masked_sum`. Requires reveals from at least
// group.threshold distinct members or throws BelowThresholdError; on success
// the result equals the field sum of the committed fixed vectors, bit-exactly.
FixedVector FinalizeSum(const SecAggGroup& group,
                        const std::vector<std::uint8_t>& committed,
                        const FixedVector& masked_sum,
                        const std::vector<RevealedShares>& reveals,
                        const std::vector<std::uint64_t>& seed_commitments);

// Master-side composition: verifies every group met the minimum size k,
// sums the per-group clear sums in the field, and decodes to a ModelUpdate
// ready for AbsorbUpdate. Throws GroupTooSmallError.
ModelUpdate ComposeHierarchical(std::span<const FixedVector> group_sums,
                                std::span<const std::size_t> group_member_counts,
                                std::size_t min_group_size_k);

// Shamir helpers over the field (exposed for tests).
std::vector<std::uint64_t> ShamirShares(std::uint64_t secret, std::size_t n,
                                        std::uint32_t t, std::uint64_t seed);
std::uint64_t ShamirReconstruct(std::span<const std::pair<std::uint64_t, std::uint64_t>> points,
                                std::uint32_t t);

// Keyed PRG expansion of a seed into mask entries; seed 0 is the null mask.
std::vector<std::uint64_t> MaskVector(std::uint64_t seed, std::size_t entries);

}  // namespace flsim

#endif  // FLSIM_SECURE_AGG_HPP_

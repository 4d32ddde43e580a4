#include <set>
#include <utility>

#include "claver/masks.hpp"
#include "claver/numerics/rng.hpp"
#include "doctest.h"

using namespace claver;

namespace {

using Cells = std::set<std::pair<std::size_t, std::size_t>>;

Cells masked_cells(const AttentionMask& m) {
  Cells out;
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m.size(); ++j)
      if (m.masked(i, j)) out.insert({i, j});
  return out;
}

constexpr MaskKind kMaskedKinds[] = {MaskKind::Joint, MaskKind::Spatial, MaskKind::PipelineTemporal, MaskKind::KMT,
                                     MaskKind::KMCT};

}  // namespace

TEST_CASE("small masks expand as expected") {
  CHECK(masked_cells(build_mask(MaskKind::KMT, 2, 2)) == Cells{{0, 1}, {1, 0}, {2, 3}, {3, 2}});
  CHECK(masked_cells(build_mask(MaskKind::KMCT, 2, 2)) ==
        Cells{{0, 1}, {1, 0}, {2, 3}, {3, 2}, {0, 2}, {0, 3}, {1, 2}, {1, 3}});
  CHECK(masked_cells(build_mask(MaskKind::Spatial, 2, 2)) ==
        Cells{{0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 0}, {2, 1}, {3, 0}, {3, 1}});
  CHECK(masked_cells(build_mask(MaskKind::Joint, 2, 2)).empty());
}

TEST_CASE("build_mask rejects bad arguments") {
  CHECK_THROWS_AS(build_mask(MaskKind::KMT, 0, 3), std::invalid_argument);
  CHECK_THROWS_AS(build_mask(MaskKind::KMT, 3, 0), std::invalid_argument);
  CHECK_THROWS_AS(build_mask(MaskKind::ClassTokenOnlyTemporal, 2, 2), std::invalid_argument);
  CHECK_THROWS_AS(build_mask(MaskKind::KMT, std::size_t{1} << 40, std::size_t{1} << 40), std::overflow_error);
}

TEST_CASE("allowed counts follow the closed forms") {
  for (std::size_t t = 1; t <= 5; ++t)
    for (std::size_t s = 1; s <= 5; ++s) {
      const auto kmt = build_mask(MaskKind::KMT, t, s);
      const auto kmct = build_mask(MaskKind::KMCT, t, s);
      const auto spatial = build_mask(MaskKind::Spatial, t, s);
      const auto pipe = build_mask(MaskKind::PipelineTemporal, t, s);
      const auto joint = build_mask(MaskKind::Joint, t, s);
      for (std::size_t row = 0; row < t * s; ++row) {
        CHECK(allowed_count(kmt, row) == s * (t - 1) + 1);
        CHECK(allowed_count(kmct, row) == (row / s) * s + 1);
        CHECK(allowed_count(spatial, row) == s);
        CHECK(allowed_count(pipe, row) == t);
        CHECK(allowed_count(joint, row) == t * s);
      }
    }
  CHECK(allowed_count(build_mask(MaskKind::KMT, 2, 2), 3) == 3);
  const auto kmct = build_mask(MaskKind::KMCT, 3, 4);
  CHECK(allowed_count(kmct, 8) == 9);
  CHECK(allowed_count(kmct, 0) == 1);
  CHECK_THROWS_AS(allowed_count(kmct, 12), std::out_of_range);
}

TEST_CASE("kind names round-trip") {
  for (MaskKind k : {MaskKind::Joint, MaskKind::Spatial, MaskKind::PipelineTemporal, MaskKind::ClassTokenOnlyTemporal,
                     MaskKind::KMT, MaskKind::KMCT}) {
    CHECK(parse_mask_kind(to_string(k)) == k);
  }
  CHECK_FALSE(parse_mask_kind("kmtx").has_value());
}

TEST_CASE("Kronecker construction agrees with the per-entry rule") {
  for (MaskKind kind : kMaskedKinds)
    for (std::size_t t = 1; t <= 8; ++t)
      for (std::size_t s = 1; s <= 8; ++s) {
        const auto m = build_mask(kind, t, s);
        REQUIRE(equivalent_via_kron(m));
      }
  CHECK(equivalent_via_kron(build_mask(MaskKind::KMCT, 4, 3)));
}

TEST_CASE("a flipped entry breaks equivalence") {
  const auto m = build_mask(MaskKind::KMT, 3, 3);
  CHECK_FALSE(equivalent_via_kron(with_flipped_entry(m, 0, 1)));
  CHECK_FALSE(equivalent_via_kron(with_flipped_entry(m, 0, 5)));
  // the diagonal can never be masked
  CHECK_THROWS_AS(with_flipped_entry(m, 2, 2), std::invalid_argument);
}

TEST_CASE("KMT and Spatial partition the off-diagonal pairs") {
  for (std::size_t t = 1; t <= 6; ++t)
    for (std::size_t s = 1; s <= 6; ++s) {
      const auto kmt = build_mask(MaskKind::KMT, t, s);
      const auto spatial = build_mask(MaskKind::Spatial, t, s);
      for (std::size_t i = 0; i < t * s; ++i)
        for (std::size_t j = 0; j < t * s; ++j) {
          if (i == j) continue;
          CHECK(kmt.masked(i, j) != spatial.masked(i, j));
        }
    }
}

TEST_CASE("KMCT unmasked set lies in KMT's plus the lower-frame block") {
  const auto kmct = build_mask(MaskKind::KMCT, 4, 3);
  const auto kmt = build_mask(MaskKind::KMT, 4, 3);
  for (std::size_t i = 0; i < 12; ++i)
    for (std::size_t j = 0; j < 12; ++j) {
      if (kmct.masked(i, j)) continue;
      CHECK((!kmt.masked(i, j) || kmct.frame_of(j) < kmct.frame_of(i) || i == j));
      // nothing above the diagonal survives: the mask is lower triangular
      CHECK(j <= i);
    }
}

namespace {

bool conjugation_invariant(const AttentionMask& m, const std::vector<std::size_t>& p) {
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m.size(); ++j)
      if (m.masked(p[i], p[j]) != m.masked(i, j)) return false;
  return true;
}

}  // namespace

TEST_CASE("frame-preserving permutations leave frame-based masks unchanged") {
  SeededRng rng(17);
  const std::size_t t = 4, s = 5, n = t * s;
  for (int trial = 0; trial < 20; ++trial) {
    // Same slot permutation in every frame: every kind is invariant, pipeline
    // included, since slot equality is preserved.
    const auto shared = rng.permutation(s);
    std::vector<std::size_t> same(n);
    for (std::size_t i = 0; i < n; ++i) same[i] = (i / s) * s + shared[i % s];
    for (MaskKind kind : kMaskedKinds) CHECK(conjugation_invariant(build_mask(kind, t, s), same));

    // Independent slot permutations per frame: frame-only kinds stay
    // invariant; pipeline changes unless all frames happen to agree.
    std::vector<std::vector<std::size_t>> per_frame;
    for (std::size_t f = 0; f < t; ++f) per_frame.push_back(rng.permutation(s));
    bool all_agree = true;
    for (std::size_t f = 1; f < t; ++f) all_agree = all_agree && per_frame[f] == per_frame[0];
    std::vector<std::size_t> mixed(n);
    for (std::size_t i = 0; i < n; ++i) mixed[i] = (i / s) * s + per_frame[i / s][i % s];
    for (MaskKind kind : kMaskedKinds) {
      const bool invariant = conjugation_invariant(build_mask(kind, t, s), mixed);
      if (kind == MaskKind::PipelineTemporal) {
        CHECK(invariant == all_agree);
      } else {
        CHECK(invariant);
      }
    }
  }
}

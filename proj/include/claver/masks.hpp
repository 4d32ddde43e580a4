#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

#include "claver/numerics/matrix.hpp"

namespace claver {

/// Attention regimes over a T-frame, S-tokens-per-frame sequence (n = T*S).
/// Every one of them is joint attention plus a Kronecker-structured mask,
/// except ClassTokenOnlyTemporal, which selects slot 0 of each frame and runs
/// unmasked attention over those T tokens.
enum class MaskKind { Joint, Spatial, PipelineTemporal, ClassTokenOnlyTemporal, KMT, KMCT };

std::string_view to_string(MaskKind kind);
/// Accepts the CLI spellings: joint, spatial, pipeline, cls, kmt, kmct.
std::optional<MaskKind> parse_mask_kind(std::string_view text);

/// Additive n x n mask with entries in {0, -inf}. Diagonal entries are 0.
class AttentionMask {
 public:
  AttentionMask(MaskKind kind, std::size_t frames, std::size_t slots, Matrix entries);

  MaskKind kind() const noexcept { return kind_; }
  std::size_t frames() const noexcept { return frames_; }
  std::size_t slots() const noexcept { return slots_; }
  std::size_t size() const noexcept { return frames_ * slots_; }
  const Matrix& entries() const noexcept { return entries_; }
  bool masked(std::size_t i, std::size_t j) const { return entries_(i, j) == kNegInf; }

  std::size_t frame_of(std::size_t token) const noexcept { return token / slots_; }
  std::size_t slot_of(std::size_t token) const noexcept { return token % slots_; }

 private:
  MaskKind kind_;
  std::size_t frames_;
  std::size_t slots_;
  Matrix entries_;
};

/// Builds the mask from Kronecker products of I, J and U blocks:
///   KMT       [I_T (x) (J_S - I_S)]
///   KMCT      [I_T (x) (J_S - I_S) + (U_T - I_T) (x) J_S]
///   Spatial   [(J_T - I_T) (x) J_S]
///   Pipeline  [J_T (x) (J_S - I_S)]
///   Joint     all zeros
/// with every 1 replaced by -inf.
AttentionMask build_mask(MaskKind kind, std::size_t frames, std::size_t slots);

/// The 0/1 block pattern (1 = masked) from the Kronecker construction.
Matrix kronecker_pattern(MaskKind kind, std::size_t frames, std::size_t slots);

/// Direct per-entry rule: whether (i, j) is masked for the given kind.
bool predicate_masked(MaskKind kind, std::size_t slots, std::size_t i, std::size_t j);

/// Number of unmasked entries in a row.
std::size_t allowed_count(const AttentionMask& mask, std::size_t row);

/// Whether the stored entries equal a fresh Kronecker-product construction.
bool equivalent_via_kron(const AttentionMask& mask);

/// Returns a copy with entry (i, j) toggled between 0 and -inf. Test hook.
AttentionMask with_flipped_entry(const AttentionMask& mask, std::size_t i, std::size_t j);

}  // namespace claver

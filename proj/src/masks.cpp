#include "claver/masks.hpp"

#include <limits>
#include <stdexcept>

#include "claver/numerics/linalg.hpp"

namespace claver {

std::string_view to_string(MaskKind kind) {
  switch (kind) {
    case MaskKind::Joint: return "joint";
    case MaskKind::Spatial: return "spatial";
    case MaskKind::PipelineTemporal: return "pipeline";
    case MaskKind::ClassTokenOnlyTemporal: return "cls";
    case MaskKind::KMT: return "kmt";
    case MaskKind::KMCT: return "kmct";
  }
  return "unknown";
}

std::optional<MaskKind> parse_mask_kind(std::string_view text) {
  for (MaskKind k : {MaskKind::Joint, MaskKind::Spatial, MaskKind::PipelineTemporal,
                     MaskKind::ClassTokenOnlyTemporal, MaskKind::KMT, MaskKind::KMCT}) {
    if (text == to_string(k)) return k;
  }
  return std::nullopt;
}

AttentionMask::AttentionMask(MaskKind kind, std::size_t frames, std::size_t slots, Matrix entries)
    : kind_(kind), frames_(frames), slots_(slots), entries_(std::move(entries)) {
  const std::size_t n = frames_ * slots_;
  if (entries_.rows() != n || entries_.cols() != n) {
    throw ShapeError("mask entries " + shape_string(entries_) + " do not match T*S = " + std::to_string(n));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (entries_(i, i) != 0.0) throw std::invalid_argument("mask diagonal must be unmasked");
    for (std::size_t j = 0; j < n; ++j) {
      const double v = entries_(i, j);
      if (v != 0.0 && v != kNegInf) throw std::invalid_argument("mask entries must be 0 or -inf");
    }
  }
}

namespace {

void check_dimensions(MaskKind kind, std::size_t frames, std::size_t slots) {
  if (kind == MaskKind::ClassTokenOnlyTemporal) {
    throw std::invalid_argument("class-token-only temporal attention selects tokens; it has no n x n mask");
  }
  if (frames == 0 || slots == 0) throw std::invalid_argument("mask needs at least one frame and one slot");
  constexpr std::size_t kMax = std::numeric_limits<std::size_t>::max();
  if (frames > kMax / slots) throw std::overflow_error("T*S overflows");
  const std::size_t n = frames * slots;
  if (n > kMax / n / sizeof(double)) throw std::overflow_error("dense T*S x T*S mask does not fit in memory");
}

}  // namespace

bool predicate_masked(MaskKind kind, std::size_t slots, std::size_t i, std::size_t j) {
  const std::size_t fi = i / slots, fj = j / slots;
  const std::size_t si = i % slots, sj = j % slots;
  switch (kind) {
    case MaskKind::Joint: return false;
    case MaskKind::Spatial: return fi != fj;
    case MaskKind::PipelineTemporal: return si != sj;
    case MaskKind::KMT: return fi == fj && i != j;
    case MaskKind::KMCT: return (fi == fj && i != j) || fi < fj;
    case MaskKind::ClassTokenOnlyTemporal: break;
  }
  throw std::invalid_argument("no per-entry rule for class-token-only attention");
}

AttentionMask build_mask(MaskKind kind, std::size_t frames, std::size_t slots) {
  check_dimensions(kind, frames, slots);
  const std::size_t n = frames * slots;
  Matrix entries(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (predicate_masked(kind, slots, i, j)) entries(i, j) = kNegInf;
  return AttentionMask(kind, frames, slots, std::move(entries));
}

Matrix kronecker_pattern(MaskKind kind, std::size_t frames, std::size_t slots) {
  check_dimensions(kind, frames, slots);
  const Matrix it = Matrix::identity(frames);
  const Matrix is = Matrix::identity(slots);
  const Matrix jt = Matrix::ones(frames, frames);
  const Matrix js = Matrix::ones(slots, slots);
  switch (kind) {
    case MaskKind::Joint: return Matrix(frames * slots, frames * slots);
    case MaskKind::Spatial: return kron(jt - it, js);
    case MaskKind::PipelineTemporal: return kron(jt, js - is);
    case MaskKind::KMT: return kron(it, js - is);
    case MaskKind::KMCT: return kron(it, js - is) + kron(Matrix::upper_triangular_ones(frames) - it, js);
    case MaskKind::ClassTokenOnlyTemporal: break;
  }
  throw std::invalid_argument("unreachable mask kind");
}

std::size_t allowed_count(const AttentionMask& mask, std::size_t row) {
  if (row >= mask.size()) {
    throw std::out_of_range("row " + std::to_string(row) + " outside mask of size " + std::to_string(mask.size()));
  }
  std::size_t count = 0;
  for (double v : mask.entries().row(row))
    if (v == 0.0) ++count;
  return count;
}

bool equivalent_via_kron(const AttentionMask& mask) {
  const Matrix pattern = kronecker_pattern(mask.kind(), mask.frames(), mask.slots());
  const Matrix& entries = mask.entries();
  for (std::size_t i = 0; i < pattern.rows(); ++i)
    for (std::size_t j = 0; j < pattern.cols(); ++j) {
      const double expected = pattern(i, j) == 1.0 ? kNegInf : 0.0;
      if (entries(i, j) != expected) return false;
    }
  return true;
}

AttentionMask with_flipped_entry(const AttentionMask& mask, std::size_t i, std::size_t j) {
  Matrix entries = mask.entries();
  entries(i, j) = entries(i, j) == 0.0 ? kNegInf : 0.0;
  return AttentionMask(mask.kind(), mask.frames(), mask.slots(), std::move(entries));
}

}  // namespace claver

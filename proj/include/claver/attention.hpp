#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <variant>

#include "claver/masks.hpp"
#include "claver/numerics/autodiff.hpp"
#include "claver/numerics/matrix.hpp"
#include "claver/numerics/rng.hpp"

namespace claver {

/// Query/key/value/output projections, each D x D; head h owns columns
/// [h*d_head, (h+1)*d_head) of W_q, W_k and W_v.
template <typename T>
struct AttentionWeights {
  T wq, wk, wv, wo;

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    f(prefix + "wq", wq);
    f(prefix + "wk", wk);
    f(prefix + "wv", wv);
    f(prefix + "wo", wo);
  }
  template <typename U, typename F>
  AttentionWeights<U> map(const std::string& prefix, F&& f) const {
    return {f(prefix + "wq", wq), f(prefix + "wk", wk), f(prefix + "wv", wv), f(prefix + "wo", wo)};
  }
};

/// Pre-norm transformer block: x + attn(ln1(x)), then + ffn(ln2(.)).
template <typename T>
struct BlockWeights {
  AttentionWeights<T> attn;
  T ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  T w1, b1, w2, b2;  // D x 4D, 1 x 4D, 4D x D, 1 x D

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    attn.for_each(prefix + "attn.", f);
    f(prefix + "ln1.gain", ln1_gain);
    f(prefix + "ln1.bias", ln1_bias);
    f(prefix + "ln2.gain", ln2_gain);
    f(prefix + "ln2.bias", ln2_bias);
    f(prefix + "mlp.w1", w1);
    f(prefix + "mlp.b1", b1);
    f(prefix + "mlp.w2", w2);
    f(prefix + "mlp.b2", b2);
  }
  template <typename U, typename F>
  BlockWeights<U> map(const std::string& prefix, F&& f) const {
    return {attn.template map<U>(prefix + "attn.", f),
            f(prefix + "ln1.gain", ln1_gain), f(prefix + "ln1.bias", ln1_bias),
            f(prefix + "ln2.gain", ln2_gain), f(prefix + "ln2.bias", ln2_bias),
            f(prefix + "mlp.w1", w1), f(prefix + "mlp.b1", b1),
            f(prefix + "mlp.w2", w2), f(prefix + "mlp.b2", b2)};
  }
};

using AttentionParams = AttentionWeights<Matrix>;
using BlockParams = BlockWeights<Matrix>;

enum class LogitScale {
  PerHead,   // 1/sqrt(d_head)
  ModelDim,  // 1/sqrt(D)
};

struct AttentionShape {
  std::size_t heads = 1;
  LogitScale scale = LogitScale::PerHead;
};

/// Which query/key pairs may interact.
class AttentionScope {
 public:
  /// Unmasked attention over all rows.
  static AttentionScope joint() { return AttentionScope(std::monostate{}); }
  /// Attention under an additive mask; the mask must outlive the scope.
  static AttentionScope masked(const AttentionMask& mask) { return AttentionScope(&mask); }
  /// Independent unmasked attention within consecutive blocks of `length` rows.
  static AttentionScope segments(std::size_t length) { return AttentionScope(length); }

  const AttentionMask* mask() const {
    const auto* m = std::get_if<const AttentionMask*>(&scope_);
    return m ? *m : nullptr;
  }
  std::size_t segment_length(std::size_t rows) const {
    const auto* len = std::get_if<std::size_t>(&scope_);
    return len ? *len : rows;
  }

 private:
  using Variant = std::variant<std::monostate, const AttentionMask*, std::size_t>;
  explicit AttentionScope(Variant v) : scope_(v) {}
  Variant scope_;
};

AttentionParams init_attention(std::size_t dim, SeededRng& rng);
AttentionParams zero_attention(std::size_t dim);
BlockParams init_block(std::size_t dim, SeededRng& rng);
/// All weights zero, layer-norm gains one: the block is the identity map.
BlockParams identity_block(std::size_t dim);

AttentionWeights<ad::Var> bind(ad::Graph& graph, const AttentionParams& p, bool trainable);
BlockWeights<ad::Var> bind(ad::Graph& graph, const BlockParams& p, bool trainable);

/// Multi-head softmax(Q K^T / scale + mask) V, heads concatenated then
/// projected by W_o. x is n x D.
ad::Var masked_attention(ad::Var x, const AttentionScope& scope, const AttentionWeights<ad::Var>& w,
                         const AttentionShape& shape);

/// Post-softmax n x n attention matrix of one head (masked scopes only).
Matrix attention_matrix(const Matrix& x, const AttentionMask& mask, const AttentionParams& p,
                        const AttentionShape& shape, std::size_t head);

ad::Var transformer_block(ad::Var x, const AttentionScope& scope, const BlockWeights<ad::Var>& w,
                          const AttentionShape& shape);

/// Convenience forward passes on plain matrices.
Matrix masked_attention(const Matrix& x, const AttentionMask& mask, const AttentionParams& p,
                        const AttentionShape& shape);
Matrix transformer_block(const Matrix& x, const AttentionMask& mask, const BlockParams& p,
                         const AttentionShape& shape);

}  // namespace claver

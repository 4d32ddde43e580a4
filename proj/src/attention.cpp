#include "claver/attention.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace claver {

namespace {

Matrix gaussian(std::size_t rows, std::size_t cols, double stddev, SeededRng& rng) {
  Matrix m(rows, cols);
  for (double& v : m.values()) v = rng.normal(0.0, stddev);
  return m;
}

double logit_scale(const AttentionShape& shape, std::size_t dim) {
  const std::size_t head_dim = dim / shape.heads;
  return 1.0 / std::sqrt(static_cast<double>(shape.scale == LogitScale::PerHead ? head_dim : dim));
}

void check_heads(const AttentionShape& shape, std::size_t dim) {
  if (shape.heads == 0 || dim % shape.heads != 0) {
    throw ShapeError("model dim " + std::to_string(dim) + " not divisible by " + std::to_string(shape.heads) +
                     " heads");
  }
}

// Attention probabilities of one head over rows [begin, end) of q/k.
ad::Var head_probabilities(ad::Var q, ad::Var k, std::size_t begin, std::size_t end, const AttentionMask* mask,
                           double scale) {
  ad::Var qs = q, ks = k;
  if (begin != 0 || end != q.rows()) {
    qs = ad::slice_rows(q, begin, end);
    ks = ad::slice_rows(k, begin, end);
  }
  ad::Var logits = ad::scale(ad::matmul_nt(qs, ks), scale);
  if (mask != nullptr) logits = ad::add_constant(logits, mask->entries());
  return ad::softmax_rows(logits);
}

}  // namespace

AttentionParams init_attention(std::size_t dim, SeededRng& rng) {
  const double stddev = 1.0 / std::sqrt(static_cast<double>(dim));
  AttentionParams p;
  p.wq = gaussian(dim, dim, stddev, rng);
  p.wk = gaussian(dim, dim, stddev, rng);
  p.wv = gaussian(dim, dim, stddev, rng);
  p.wo = gaussian(dim, dim, stddev, rng);
  return p;
}

AttentionParams zero_attention(std::size_t dim) {
  return {Matrix(dim, dim), Matrix(dim, dim), Matrix(dim, dim), Matrix(dim, dim)};
}

BlockParams init_block(std::size_t dim, SeededRng& rng) {
  BlockParams p;
  p.attn = init_attention(dim, rng);
  p.ln1_gain = Matrix::ones(1, dim);
  p.ln1_bias = Matrix(1, dim);
  p.ln2_gain = Matrix::ones(1, dim);
  p.ln2_bias = Matrix(1, dim);
  p.w1 = gaussian(dim, 4 * dim, 1.0 / std::sqrt(static_cast<double>(dim)), rng);
  p.b1 = Matrix(1, 4 * dim);
  p.w2 = gaussian(4 * dim, dim, 1.0 / std::sqrt(static_cast<double>(4 * dim)), rng);
  p.b2 = Matrix(1, dim);
  return p;
}

BlockParams identity_block(std::size_t dim) {
  BlockParams p;
  p.attn = zero_attention(dim);
  p.ln1_gain = Matrix::ones(1, dim);
  p.ln1_bias = Matrix(1, dim);
  p.ln2_gain = Matrix::ones(1, dim);
  p.ln2_bias = Matrix(1, dim);
  p.w1 = Matrix(dim, 4 * dim);
  p.b1 = Matrix(1, 4 * dim);
  p.w2 = Matrix(4 * dim, dim);
  p.b2 = Matrix(1, dim);
  return p;
}

namespace {

auto binder(ad::Graph& graph, bool trainable) {
  return [&graph, trainable](const std::string&, const Matrix& m) {
    return trainable ? graph.parameter(m) : graph.constant(m);
  };
}

}  // namespace

AttentionWeights<ad::Var> bind(ad::Graph& graph, const AttentionParams& p, bool trainable) {
  return p.map<ad::Var>("", binder(graph, trainable));
}

BlockWeights<ad::Var> bind(ad::Graph& graph, const BlockParams& p, bool trainable) {
  return p.map<ad::Var>("", binder(graph, trainable));
}

ad::Var masked_attention(ad::Var x, const AttentionScope& scope, const AttentionWeights<ad::Var>& w,
                         const AttentionShape& shape) {
  const std::size_t n = x.rows(), dim = x.cols();
  check_heads(shape, dim);
  if (w.wq.rows() != dim || w.wq.cols() != dim) throw ShapeError("attention weights do not match model dim");
  const AttentionMask* mask = scope.mask();
  if (mask != nullptr && mask->size() != n) {
    throw ShapeError("mask of size " + std::to_string(mask->size()) + " applied to " + std::to_string(n) + " tokens");
  }
  const std::size_t seg = scope.segment_length(n);
  if (seg == 0 || n % seg != 0) throw ShapeError("segment length does not divide the token count");

  const ad::Var q = ad::matmul(x, w.wq);
  const ad::Var k = ad::matmul(x, w.wk);
  const ad::Var v = ad::matmul(x, w.wv);
  const std::size_t head_dim = dim / shape.heads;
  const double scale = logit_scale(shape, dim);

  std::vector<ad::Var> heads;
  heads.reserve(shape.heads);
  for (std::size_t h = 0; h < shape.heads; ++h) {
    const ad::Var qh = shape.heads == 1 ? q : ad::slice_cols(q, h * head_dim, (h + 1) * head_dim);
    const ad::Var kh = shape.heads == 1 ? k : ad::slice_cols(k, h * head_dim, (h + 1) * head_dim);
    const ad::Var vh = shape.heads == 1 ? v : ad::slice_cols(v, h * head_dim, (h + 1) * head_dim);
    if (seg == n) {
      heads.push_back(ad::matmul(head_probabilities(qh, kh, 0, n, mask, scale), vh));
      continue;
    }
    std::vector<ad::Var> parts;
    parts.reserve(n / seg);
    for (std::size_t begin = 0; begin < n; begin += seg) {
      const ad::Var probs = head_probabilities(qh, kh, begin, begin + seg, nullptr, scale);
      parts.push_back(ad::matmul(probs, ad::slice_rows(vh, begin, begin + seg)));
    }
    heads.push_back(ad::concat_rows(parts));
  }
  const ad::Var merged = heads.size() == 1 ? heads.front() : ad::concat_cols(heads);
  return ad::matmul(merged, w.wo);
}

Matrix attention_matrix(const Matrix& x, const AttentionMask& mask, const AttentionParams& p,
                        const AttentionShape& shape, std::size_t head) {
  if (head >= shape.heads) {
    throw std::out_of_range("head " + std::to_string(head) + " of " + std::to_string(shape.heads));
  }
  const std::size_t dim = x.cols();
  check_heads(shape, dim);
  if (mask.size() != x.rows()) throw ShapeError("mask size does not match token count");
  ad::Graph graph(false);
  const ad::Var xv = graph.constant(x);
  const std::size_t head_dim = dim / shape.heads;
  const ad::Var q = ad::slice_cols(ad::matmul(xv, graph.constant(p.wq)), head * head_dim, (head + 1) * head_dim);
  const ad::Var k = ad::slice_cols(ad::matmul(xv, graph.constant(p.wk)), head * head_dim, (head + 1) * head_dim);
  return head_probabilities(q, k, 0, x.rows(), &mask, logit_scale(shape, dim)).value();
}

ad::Var transformer_block(ad::Var x, const AttentionScope& scope, const BlockWeights<ad::Var>& w,
                          const AttentionShape& shape) {
  const ad::Var attn_in = ad::layer_norm_rows(x, w.ln1_gain, w.ln1_bias);
  const ad::Var h = ad::add(x, masked_attention(attn_in, scope, w.attn, shape));
  const ad::Var mlp_in = ad::layer_norm_rows(h, w.ln2_gain, w.ln2_bias);
  const ad::Var hidden = ad::gelu(ad::add_row(ad::matmul(mlp_in, w.w1), w.b1));
  return ad::add(h, ad::add_row(ad::matmul(hidden, w.w2), w.b2));
}

Matrix masked_attention(const Matrix& x, const AttentionMask& mask, const AttentionParams& p,
                        const AttentionShape& shape) {
  ad::Graph graph(false);
  return masked_attention(graph.constant(x), AttentionScope::masked(mask), bind(graph, p, false), shape).value();
}

Matrix transformer_block(const Matrix& x, const AttentionMask& mask, const BlockParams& p,
                         const AttentionShape& shape) {
  ad::Graph graph(false);
  return transformer_block(graph.constant(x), AttentionScope::masked(mask), bind(graph, p, false), shape).value();
}

}  // namespace claver

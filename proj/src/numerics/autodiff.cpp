#include "claver/numerics/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "claver/numerics/linalg.hpp"

namespace claver::ad {

const Matrix& Var::value() const { return graph->value(id); }
const Matrix& Var::grad() const { return graph->grad(id); }

Var Graph::parameter(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, record_});
  return Var{this, nodes_.size() - 1};
}

Var Graph::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false});
  return Var{this, nodes_.size() - 1};
}

Var Graph::push(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
  return push(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
}

Var Graph::push(Matrix value, std::span<const Var> inputs, Backward backward) {
  bool needs = false;
  if (record_) {
    for (const Var& in : inputs) {
      if (in.graph != this) throw std::logic_error("autodiff: mixing variables from different graphs");
      needs = needs || nodes_[in.id].needs_grad;
    }
  }
  Node node{std::move(value), {}, {}, needs};
  if (needs) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

void Graph::accumulate(std::size_t id, const Matrix& g) {
  Node& node = nodes_[id];
  if (!node.needs_grad) return;
  if (node.grad.empty() && !node.value.empty()) {
    node.grad = g;
  } else {
    node.grad += g;
  }
}

const Matrix& Graph::grad(std::size_t id) const {
  if (!backward_done_) throw std::logic_error("autodiff: grad() requested before backward()");
  return nodes_.at(id).grad;
}

void Graph::backward(Var output) {
  if (output.graph != this) throw std::logic_error("autodiff: output belongs to another graph");
  const Matrix& out = nodes_[output.id].value;
  if (out.rows() != 1 || out.cols() != 1) {
    throw ShapeError("backward() needs a 1x1 output, got " + shape_string(out));
  }
  if (backward_done_) throw std::logic_error("autodiff: backward() called twice on one graph");
  if (nodes_[output.id].needs_grad) nodes_[output.id].grad = Matrix(1, 1, 1.0);
  for (std::size_t id = output.id + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (node.backward && !node.grad.empty()) node.backward(*this, node.grad);
  }
  for (Node& node : nodes_) {
    if (node.grad.empty()) node.grad = Matrix(node.value.rows(), node.value.cols());
  }
  backward_done_ = true;
}

namespace {

Graph& graph_of(Var a) { return *a.graph; }

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": " + shape_string(a) + " vs " + shape_string(b));
  }
}

Matrix column_sums(const Matrix& g) {
  Matrix out(1, g.cols());
  for (std::size_t r = 0; r < g.rows(); ++r)
    for (std::size_t c = 0; c < g.cols(); ++c) out(0, c) += g(r, c);
  return out;
}

}  // namespace

Var matmul(Var a, Var b) {
  Matrix value = claver::matmul(a.value(), b.value());
  return graph_of(a).push(std::move(value), {a, b}, [a = a.id, b = b.id](Graph& g, const Matrix& og) {
    if (g.needs_grad(a)) g.accumulate(a, claver::matmul_nt(og, g.value(b)));
    if (g.needs_grad(b)) g.accumulate(b, claver::matmul_tn(g.value(a), og));
  });
}

Var matmul_nt(Var a, Var b) {
  Matrix value = claver::matmul_nt(a.value(), b.value());
  return graph_of(a).push(std::move(value), {a, b}, [a = a.id, b = b.id](Graph& g, const Matrix& og) {
    if (g.needs_grad(a)) g.accumulate(a, claver::matmul(og, g.value(b)));
    if (g.needs_grad(b)) g.accumulate(b, claver::matmul_tn(og, g.value(a)));
  });
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  return graph_of(a).push(a.value() + b.value(), {a, b}, [a = a.id, b = b.id](Graph& g, const Matrix& og) {
    g.accumulate(a, og);
    g.accumulate(b, og);
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  return graph_of(a).push(a.value() - b.value(), {a, b}, [a = a.id, b = b.id](Graph& g, const Matrix& og) {
    g.accumulate(a, og);
    if (g.needs_grad(b)) g.accumulate(b, og * -1.0);
  });
}

Var hadamard(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "hadamard");
  Matrix value = a.value();
  for (std::size_t i = 0; i < value.size(); ++i) value.values()[i] *= b.value().values()[i];
  return graph_of(a).push(std::move(value), {a, b}, [a = a.id, b = b.id](Graph& g, const Matrix& og) {
    auto mul = [&og](const Matrix& other) {
      Matrix out = og;
      for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] *= other.values()[i];
      return out;
    };
    if (g.needs_grad(a)) g.accumulate(a, mul(g.value(b)));
    if (g.needs_grad(b)) g.accumulate(b, mul(g.value(a)));
  });
}

Var scale(Var a, double s) {
  return graph_of(a).push(a.value() * s, {a}, [a = a.id, s](Graph& g, const Matrix& og) {
    g.accumulate(a, og * s);
  });
}

Var add_row(Var a, Var row) {
  const Matrix& av = a.value();
  const Matrix& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != av.cols()) {
    throw ShapeError("add_row: " + shape_string(av) + " + row " + shape_string(rv));
  }
  Matrix value = av;
  for (std::size_t r = 0; r < value.rows(); ++r)
    for (std::size_t c = 0; c < value.cols(); ++c) value(r, c) += rv(0, c);
  return graph_of(a).push(std::move(value), {a, row}, [a = a.id, row = row.id](Graph& g, const Matrix& og) {
    g.accumulate(a, og);
    if (g.needs_grad(row)) g.accumulate(row, column_sums(og));
  });
}

Var add_constant(Var a, const Matrix& c) {
  require_same_shape(a.value(), c, "add_constant");
  return graph_of(a).push(a.value() + c, {a}, [a = a.id](Graph& g, const Matrix& og) { g.accumulate(a, og); });
}

Var softmax_rows(Var a) {
  Matrix value = claver::softmax_rows(a.value());
  const std::size_t out_id = graph_of(a).size();
  return graph_of(a).push(std::move(value), {a}, [a = a.id, out_id](Graph& g, const Matrix& og) {
    const Matrix& y = g.value(out_id);
    Matrix dx(y.rows(), y.cols());
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) dot += og(r, c) * y(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) dx(r, c) = y(r, c) * (og(r, c) - dot);
    }
    g.accumulate(a, dx);
  });
}

Var log_softmax_rows(Var a) {
  const Matrix& x = a.value();
  Matrix value(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double peak = kNegInf;
    for (double v : x.row(r))
      if (std::isfinite(v)) peak = std::max(peak, v);
    if (peak == kNegInf) throw DegenerateRowError(r);
    double total = 0.0;
    for (double v : x.row(r))
      if (v != kNegInf) total += std::exp(v - peak);
    const double lse = peak + std::log(total);
    for (std::size_t c = 0; c < x.cols(); ++c) value(r, c) = x(r, c) - lse;
  }
  const std::size_t out_id = graph_of(a).size();
  return graph_of(a).push(std::move(value), {a}, [a = a.id, out_id](Graph& g, const Matrix& og) {
    const Matrix& y = g.value(out_id);
    Matrix dx(y.rows(), y.cols());
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) total += og(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) dx(r, c) = og(r, c) - std::exp(y(r, c)) * total;
    }
    g.accumulate(a, dx);
  });
}

Var layer_norm_rows(Var a, Var gain, Var bias, double eps) {
  const Matrix& x = a.value();
  const std::size_t n = x.rows(), d = x.cols();
  if (gain.value().rows() != 1 || gain.value().cols() != d || !gain.value().same_shape(bias.value())) {
    throw ShapeError("layer_norm_rows: gain/bias must be 1x" + std::to_string(d));
  }
  Matrix normalized(n, d);
  std::vector<double> inv_std(n);
  for (std::size_t r = 0; r < n; ++r) {
    double mean = 0.0;
    for (double v : x.row(r)) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : x.row(r)) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) normalized(r, c) = (x(r, c) - mean) * inv_std[r];
  }
  Matrix value(n, d);
  const Matrix& gv = gain.value();
  const Matrix& bv = bias.value();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) value(r, c) = normalized(r, c) * gv(0, c) + bv(0, c);

  return graph_of(a).push(
      std::move(value), {a, gain, bias},
      [a = a.id, gain = gain.id, bias = bias.id, normalized = std::move(normalized),
       inv_std = std::move(inv_std)](Graph& g, const Matrix& og) {
        const std::size_t n = og.rows(), d = og.cols();
        const Matrix& gv = g.value(gain);
        if (g.needs_grad(gain)) {
          Matrix dg(1, d);
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < d; ++c) dg(0, c) += og(r, c) * normalized(r, c);
          g.accumulate(gain, dg);
        }
        if (g.needs_grad(bias)) g.accumulate(bias, column_sums(og));
        if (g.needs_grad(a)) {
          Matrix dx(n, d);
          for (std::size_t r = 0; r < n; ++r) {
            double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
              const double dxhat = og(r, c) * gv(0, c);
              mean_dxhat += dxhat;
              mean_dxhat_xhat += dxhat * normalized(r, c);
            }
            mean_dxhat /= static_cast<double>(d);
            mean_dxhat_xhat /= static_cast<double>(d);
            for (std::size_t c = 0; c < d; ++c) {
              const double dxhat = og(r, c) * gv(0, c);
              dx(r, c) = inv_std[r] * (dxhat - mean_dxhat - normalized(r, c) * mean_dxhat_xhat);
            }
          }
          g.accumulate(a, dx);
        }
      });
}

constexpr double kInvSqrt2 = 0.5 * std::numbers::sqrt2;

Var gelu(Var a) {
  Matrix value = a.value();
  for (double& v : value.values()) v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  return graph_of(a).push(std::move(value), {a}, [a = a.id](Graph& g, const Matrix& og) {
    const Matrix& x = g.value(a);
    Matrix dx = og;
    constexpr double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    for (std::size_t i = 0; i < dx.size(); ++i) {
      const double v = x.values()[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      dx.values()[i] *= cdf + v * pdf;
    }
    g.accumulate(a, dx);
  });
}

Var normalize_rows(Var a) {
  const Matrix& x = a.value();
  Matrix value = x;
  std::vector<double> norms(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double sq = 0.0;
    for (double v : x.row(r)) sq += v * v;
    norms[r] = std::sqrt(sq);
    if (norms[r] == 0.0) throw NumericalError("normalize_rows: row " + std::to_string(r) + " has zero norm");
    for (double& v : value.row(r)) v /= norms[r];
  }
  const std::size_t out_id = graph_of(a).size();
  return graph_of(a).push(std::move(value), {a},
                          [a = a.id, out_id, norms = std::move(norms)](Graph& g, const Matrix& og) {
                            const Matrix& y = g.value(out_id);
                            Matrix dx(y.rows(), y.cols());
                            for (std::size_t r = 0; r < y.rows(); ++r) {
                              double dot = 0.0;
                              for (std::size_t c = 0; c < y.cols(); ++c) dot += og(r, c) * y(r, c);
                              for (std::size_t c = 0; c < y.cols(); ++c)
                                dx(r, c) = (og(r, c) - y(r, c) * dot) / norms[r];
                            }
                            g.accumulate(a, dx);
                          });
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  const Matrix& x = a.value();
  if (begin > end || end > x.rows()) throw ShapeError("slice_rows out of range on " + shape_string(x));
  std::vector<double> data(x.values().begin() + static_cast<std::ptrdiff_t>(begin * x.cols()),
                           x.values().begin() + static_cast<std::ptrdiff_t>(end * x.cols()));
  Matrix value(end - begin, x.cols(), std::move(data));
  return graph_of(a).push(std::move(value), {a}, [a = a.id, begin](Graph& g, const Matrix& og) {
    const Matrix& x = g.value(a);
    Matrix dx(x.rows(), x.cols());
    std::copy(og.values().begin(), og.values().end(), dx.values().begin() + static_cast<std::ptrdiff_t>(begin * x.cols()));
    g.accumulate(a, dx);
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Matrix& x = a.value();
  if (begin > end || end > x.cols()) throw ShapeError("slice_cols out of range on " + shape_string(x));
  Matrix value(x.rows(), end - begin);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = begin; c < end; ++c) value(r, c - begin) = x(r, c);
  return graph_of(a).push(std::move(value), {a}, [a = a.id, begin](Graph& g, const Matrix& og) {
    const Matrix& x = g.value(a);
    Matrix dx(x.rows(), x.cols());
    for (std::size_t r = 0; r < og.rows(); ++r)
      for (std::size_t c = 0; c < og.cols(); ++c) dx(r, begin + c) = og(r, c);
    g.accumulate(a, dx);
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows of nothing");
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: column mismatch");
    rows += p.rows();
  }
  std::vector<double> data;
  data.reserve(rows * cols);
  std::vector<std::size_t> ids, offsets;
  for (const Var& p : parts) {
    offsets.push_back(data.size() / std::max<std::size_t>(cols, 1));
    ids.push_back(p.id);
    data.insert(data.end(), p.value().values().begin(), p.value().values().end());
  }
  return graph_of(parts.front())
      .push(Matrix(rows, cols, std::move(data)), parts,
            [ids = std::move(ids), offsets = std::move(offsets)](Graph& g, const Matrix& og) {
              for (std::size_t i = 0; i < ids.size(); ++i) {
                if (!g.needs_grad(ids[i])) continue;
                const Matrix& part = g.value(ids[i]);
                const auto first = og.values().begin() + static_cast<std::ptrdiff_t>(offsets[i] * og.cols());
                g.accumulate(ids[i], Matrix(part.rows(), part.cols(),
                                            std::vector<double>(first, first + static_cast<std::ptrdiff_t>(part.size()))));
              }
            });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols of nothing");
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row mismatch");
    cols += p.cols();
  }
  Matrix value(rows, cols);
  std::vector<std::size_t> ids, offsets;
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Matrix& v = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < v.cols(); ++c) value(r, offset + c) = v(r, c);
    ids.push_back(p.id);
    offsets.push_back(offset);
    offset += v.cols();
  }
  return graph_of(parts.front())
      .push(std::move(value), parts, [ids = std::move(ids), offsets = std::move(offsets)](Graph& g, const Matrix& og) {
        for (std::size_t i = 0; i < ids.size(); ++i) {
          if (!g.needs_grad(ids[i])) continue;
          const Matrix& part = g.value(ids[i]);
          Matrix d(part.rows(), part.cols());
          for (std::size_t r = 0; r < d.rows(); ++r)
            for (std::size_t c = 0; c < d.cols(); ++c) d(r, c) = og(r, offsets[i] + c);
          g.accumulate(ids[i], d);
        }
      });
}

Var gather_rows(Var a, std::span<const std::size_t> indices) {
  const Matrix& x = a.value();
  Matrix value(indices.size(), x.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= x.rows()) throw ShapeError("gather_rows: index out of range");
    std::copy(x.row(indices[i]).begin(), x.row(indices[i]).end(), value.row(i).begin());
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return graph_of(a).push(std::move(value), {a}, [a = a.id, idx = std::move(idx)](Graph& g, const Matrix& og) {
    const Matrix& x = g.value(a);
    Matrix dx(x.rows(), x.cols());
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t c = 0; c < x.cols(); ++c) dx(idx[i], c) += og(i, c);
    g.accumulate(a, dx);
  });
}

Var tile_rows(Var a, std::size_t times) {
  const Matrix& x = a.value();
  std::vector<double> data;
  data.reserve(x.size() * times);
  for (std::size_t t = 0; t < times; ++t) data.insert(data.end(), x.values().begin(), x.values().end());
  return graph_of(a).push(Matrix(x.rows() * times, x.cols(), std::move(data)), {a},
                          [a = a.id, times](Graph& g, const Matrix& og) {
                            const Matrix& x = g.value(a);
                            Matrix dx(x.rows(), x.cols());
                            for (std::size_t t = 0; t < times; ++t)
                              for (std::size_t r = 0; r < x.rows(); ++r)
                                for (std::size_t c = 0; c < x.cols(); ++c) dx(r, c) += og(t * x.rows() + r, c);
                            g.accumulate(a, dx);
                          });
}

Var repeat_rows(Var a, std::size_t times) {
  const Matrix& x = a.value();
  Matrix value(x.rows() * times, x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t t = 0; t < times; ++t)
      std::copy(x.row(r).begin(), x.row(r).end(), value.row(r * times + t).begin());
  return graph_of(a).push(std::move(value), {a}, [a = a.id, times](Graph& g, const Matrix& og) {
    const Matrix& x = g.value(a);
    Matrix dx(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t t = 0; t < times; ++t)
        for (std::size_t c = 0; c < x.cols(); ++c) dx(r, c) += og(r * times + t, c);
    g.accumulate(a, dx);
  });
}

Var mean_rows(Var a) {
  const Matrix& x = a.value();
  if (x.rows() == 0) throw ShapeError("mean_rows of an empty matrix");
  Matrix value(1, x.cols());
  std::vector<double> column(x.rows());
  for (std::size_t c = 0; c < x.cols(); ++c) {
    for (std::size_t r = 0; r < x.rows(); ++r) column[r] = x(r, c);
    std::sort(column.begin(), column.end());
    double total = 0.0;
    for (double v : column) total += v;
    value(0, c) = total / static_cast<double>(x.rows());
  }
  return graph_of(a).push(std::move(value), {a}, [a = a.id](Graph& g, const Matrix& og) {
    const Matrix& x = g.value(a);
    Matrix dx(x.rows(), x.cols());
    const double inv = 1.0 / static_cast<double>(x.rows());
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t c = 0; c < x.cols(); ++c) dx(r, c) = og(0, c) * inv;
    g.accumulate(a, dx);
  });
}

Var sum_all(Var a) {
  double total = 0.0;
  for (double v : a.value().values()) total += v;
  return graph_of(a).push(Matrix(1, 1, total), {a}, [a = a.id](Graph& g, const Matrix& og) {
    const Matrix& x = g.value(a);
    g.accumulate(a, Matrix(x.rows(), x.cols(), og(0, 0)));
  });
}

Var nll_sum(Var logprobs, std::span<const std::size_t> targets) {
  const Matrix& lp = logprobs.value();
  if (targets.size() != lp.rows()) throw ShapeError("nll_sum: one target per row required");
  double total = 0.0;
  for (std::size_t r = 0; r < lp.rows(); ++r) {
    if (targets[r] >= lp.cols()) throw ShapeError("nll_sum: target out of range");
    total -= lp(r, targets[r]);
  }
  std::vector<std::size_t> t(targets.begin(), targets.end());
  return graph_of(logprobs).push(Matrix(1, 1, total), {logprobs},
                                 [id = logprobs.id, t = std::move(t)](Graph& g, const Matrix& og) {
                                   const Matrix& lp = g.value(id);
                                   Matrix d(lp.rows(), lp.cols());
                                   for (std::size_t r = 0; r < t.size(); ++r) d(r, t[r]) = -og(0, 0);
                                   g.accumulate(id, d);
                                 });
}

}  // namespace claver::ad

#include "claver/numerics/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace claver {

namespace {

// out[i0..i0+R) x [j0..j0+C) = a * b for that tile, accumulating over k in
// order so every entry sees the same sequence of additions as a plain loop.
template <std::size_t R, std::size_t C>
void matmul_tile(const double* a, const double* b, double* out, std::size_t k, std::size_t lda, std::size_t ldb,
                 std::size_t ldo, std::size_t i0, std::size_t j0) {
  double acc[R][C] = {};
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = b + p * ldb + j0;
    for (std::size_t r = 0; r < R; ++r) {
      const double av = a[(i0 + r) * lda + p];
      for (std::size_t c = 0; c < C; ++c) acc[r][c] += av * brow[c];
    }
  }
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) out[(i0 + r) * ldo + j0 + c] = acc[r][c];
}

template <std::size_t R>
void matmul_rows(const double* a, const double* b, double* out, std::size_t k, std::size_t m, std::size_t i0) {
  std::size_t j = 0;
  for (; j + 8 <= m; j += 8) matmul_tile<R, 8>(a, b, out, k, k, m, m, i0, j);
  for (; j + 4 <= m; j += 4) matmul_tile<R, 4>(a, b, out, k, k, m, m, i0, j);
  for (; j < m; ++j) matmul_tile<R, 1>(a, b, out, k, k, m, m, i0, j);
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + shape_string(a) + " * " + shape_string(b));
  }
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Matrix out(n, m);
  if (n == 0 || m == 0) return out;
  const double* ad = a.values().data();
  const double* bd = b.values().data();
  double* od = out.values().data();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) matmul_rows<4>(ad, bd, od, k, m, i);
  for (; i < n; ++i) matmul_rows<1>(ad, bd, od, k, m, i);
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: " + shape_string(a) + " * " + shape_string(b) + "^T");
  }
  // The row-times-row dot product does not vectorize; a transposed copy is cheaper.
  return matmul(a, transpose(b));
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: " + shape_string(a) + "^T * " + shape_string(b));
  }
  return matmul(transpose(a), b);
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

Matrix kron(const Matrix& a, const Matrix& b) {
  const std::size_t p = b.rows(), q = b.cols();
  Matrix out(a.rows() * p, a.cols() * q);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) {
      const double s = a(i, j);
      for (std::size_t k = 0; k < p; ++k)
        for (std::size_t l = 0; l < q; ++l) out(i * p + k, j * q + l) = s * b(k, l);
    }
  return out;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto in = logits.row(r);
    auto dst = out.row(r);
    double peak = kNegInf;
    for (double v : in)
      if (std::isfinite(v)) peak = std::max(peak, v);
    if (peak == kNegInf) throw DegenerateRowError(r);
    double total = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      dst[c] = in[c] == kNegInf ? 0.0 : std::exp(in[c] - peak);
      total += dst[c];
    }
    for (double& v : dst) v /= total;
  }
  return out;
}

std::vector<double> singular_values(const Matrix& m, const SvdOptions& options) {
  if (!m.all_finite()) throw NumericalError("singular_values: matrix has non-finite entries");
  // Work on columns of a tall matrix; singular values are transpose-invariant.
  Matrix a = m.rows() >= m.cols() ? m : transpose(m);
  const std::size_t rows = a.rows(), cols = a.cols();

  // Column-major copy makes the column rotations contiguous.
  std::vector<std::vector<double>> col(cols, std::vector<double>(rows));
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) col[j][i] = a(i, j);

  // Rounding in the inner products puts a floor of ~rows*eps on achievable
  // orthogonality.
  const double tol =
      std::max(options.tolerance, static_cast<double>(rows) * std::numeric_limits<double>::epsilon());
  bool converged = cols < 2;
  int sweep = 0;
  while (!converged && sweep < options.max_sweeps) {
    ++sweep;
    converged = true;
    for (std::size_t i = 0; i + 1 < cols; ++i) {
      for (std::size_t j = i + 1; j < cols; ++j) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t r = 0; r < rows; ++r) {
          alpha += col[i][r] * col[i][r];
          beta += col[j][r] * col[j][r];
          gamma += col[i][r] * col[j][r];
        }
        if (alpha == 0.0 || beta == 0.0) continue;
        if (std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
        converged = false;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t r = 0; r < rows; ++r) {
          const double xi = col[i][r], xj = col[j][r];
          col[i][r] = c * xi - s * xj;
          col[j][r] = s * xi + c * xj;
        }
      }
    }
  }
  if (!converged) {
    throw NumericalError("one-sided Jacobi SVD did not converge after " + std::to_string(sweep) +
                         " sweeps");
  }

  std::vector<double> sigma(cols);
  for (std::size_t j = 0; j < cols; ++j) {
    double norm = 0.0;
    for (double v : col[j]) norm += v * v;
    sigma[j] = std::sqrt(norm);
  }
  std::sort(sigma.begin(), sigma.end(), std::greater<>());
  return sigma;
}

std::size_t svd_rank(const Matrix& m, double rel_tol) {
  const auto sigma = singular_values(m);
  if (sigma.empty() || sigma.front() == 0.0) return 0;
  const double cutoff = rel_tol * sigma.front();
  return static_cast<std::size_t>(
      std::count_if(sigma.begin(), sigma.end(), [cutoff](double s) { return s > cutoff; }));
}

double determinant(const Matrix& m) {
  if (m.rows() != m.cols()) throw ShapeError("determinant of non-square " + shape_string(m));
  Matrix lu = m;
  const std::size_t n = lu.rows();
  double det = 1.0;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t pivot = k;
    for (std::size_t r = k + 1; r < n; ++r)
      if (std::abs(lu(r, k)) > std::abs(lu(pivot, k))) pivot = r;
    if (lu(pivot, k) == 0.0) return 0.0;
    if (pivot != k) {
      for (std::size_t c = 0; c < n; ++c) std::swap(lu(k, c), lu(pivot, c));
      det = -det;
    }
    det *= lu(k, k);
    for (std::size_t r = k + 1; r < n; ++r) {
      const double f = lu(r, k) / lu(k, k);
      for (std::size_t c = k; c < n; ++c) lu(r, c) -= f * lu(k, c);
    }
  }
  return det;
}

}  // namespace claver

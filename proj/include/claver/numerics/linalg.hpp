#pragma once

#include <cstddef>
#include <vector>

#include "claver/numerics/matrix.hpp"

namespace claver {

Matrix matmul(const Matrix& a, const Matrix& b);
/// a * b^T without materializing the transpose.
Matrix matmul_nt(const Matrix& a, const Matrix& b);
/// a^T * b without materializing the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

/// Kronecker product; block (i, j) of the result is a(i, j) * b.
Matrix kron(const Matrix& a, const Matrix& b);

/// Row-wise softmax. -inf logits map to exactly 0; a row with no finite
/// logit throws DegenerateRowError.
Matrix softmax_rows(const Matrix& logits);

struct SvdOptions {
  int max_sweeps = 60;
  double tolerance = 1e-15;
};

/// Singular values in descending order, via one-sided (Hestenes) Jacobi.
/// Throws NumericalError if the sweeps do not converge.
std::vector<double> singular_values(const Matrix& m, const SvdOptions& options = {});

inline constexpr double kDefaultRankTolerance = 1e-8;

/// Number of singular values greater than rel_tol * sigma_max.
std::size_t svd_rank(const Matrix& m, double rel_tol = kDefaultRankTolerance);

/// Determinant by LU factorization with partial pivoting.
double determinant(const Matrix& m);

}  // namespace claver

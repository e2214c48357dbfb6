#pragma once

#include "adrl/common.hpp"

namespace adrl {

// Relative ridge added to the diagonal before the Cholesky factorization:
// lambda = kSpdRidge * trace(A) / dim.
inline constexpr double kSpdRidge = 1e-6;

/// Solves A x = b for symmetric positive (semi)definite A. The ridged matrix is
/// factored once and the solution is polished by iterative refinement against
/// the unridged A, so well-conditioned systems are solved to full precision.
Vector solve_spd(const Matrix& a, const Vector& b);
Matrix solve_spd(const Matrix& a, const Matrix& b);

/// Number of singular values above `rel_tol` times the largest one.
int numerical_rank(const Matrix& a, double rel_tol = 1e-10);

}  // namespace adrl

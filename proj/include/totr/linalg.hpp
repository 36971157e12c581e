#pragma once

#include "totr/tensor.hpp"

namespace totr {

/// Inverse of a symmetric positive definite matrix; throws SingularError otherwise.
Matrix spd_inverse(const Matrix& a);

/// log|A| for symmetric positive definite A.
double logdet_spd(const Matrix& a);

/// Symmetric square root from the eigendecomposition.
Matrix sym_sqrt(const Matrix& a);
Matrix sym_inv_sqrt(const Matrix& a);

bool is_spd(const Matrix& a);

/// Solves A x = b for symmetric positive (semi)definite A with a rank check.
Matrix solve_psd(const Matrix& a, const Matrix& b, double rel_tol = 1e-12);

/// Moore-Penrose inverse via SVD with relative cutoff.
Matrix pseudo_inverse(const Matrix& a, double rel_tol = 1e-12);

}  // namespace totr

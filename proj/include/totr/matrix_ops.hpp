#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "totr/tensor.hpp"

namespace totr {

/// Largest commutation-type matrix that will be materialized densely.
inline constexpr std::size_t kMaxDenseCommutation = 10000;

Matrix kronecker(const Matrix& a, const Matrix& b);

/// A_1 (x) A_2 (x) ... in the order given.
Matrix kronecker(std::span<const Matrix> as);

/// A_p (x) ... (x) A_1, the ordering that matches first-mode-fastest vec().
Matrix kronecker_reversed(std::span<const Matrix> as);

/// Column-wise Kronecker product; column r is a(:,r) (x) b(:,r).
Matrix khatri_rao(const Matrix& a, const Matrix& b);

/// A_p (.) ... (.) A_1 for matrices with a common column count.
Matrix khatri_rao_reversed(std::span<const Matrix> as);

Matrix hadamard(const Matrix& a, const Matrix& b);

/// Index map of K_{m,n}: (K vec A)[i] = (vec A)[perm[i]] for m x n A.
std::vector<std::size_t> commutation_permutation(std::size_t m, std::size_t n);

/// K_{m,n} with K vec(A) = vec(A') for A of size m x n.
Matrix commutation_matrix(std::size_t m, std::size_t n);

/// K_(k) with vec(X_(k)) = K_(k) vec(X) for a tensor of the given dims.
Matrix mode_commutation_matrix(const Dims& dims, std::size_t k);

/// D_n with D_n vech(A) = vec(A) for symmetric n x n A.
Matrix duplication_matrix(std::size_t n);

/// Lower-triangular half of a square matrix, stacked column by column.
Vector vech(const Matrix& a);

}  // namespace totr

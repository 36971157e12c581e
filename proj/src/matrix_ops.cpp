#include "totr/matrix_ops.hpp"

#include <string>

namespace totr {

Matrix kronecker(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index j = 0; j < a.cols(); ++j)
        for (Eigen::Index i = 0; i < a.rows(); ++i)
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return out;
}

Matrix kronecker(std::span<const Matrix> as) {
    Matrix acc = Matrix::Ones(1, 1);
    for (const auto& a : as) acc = kronecker(acc, a);
    return acc;
}

Matrix kronecker_reversed(std::span<const Matrix> as) {
    Matrix acc = Matrix::Ones(1, 1);
    for (const auto& a : as) acc = kronecker(a, acc);
    return acc;
}

Matrix khatri_rao(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) throw DimensionError("Khatri-Rao factors need equal column counts");
    Matrix out(a.rows() * b.rows(), a.cols());
    for (Eigen::Index r = 0; r < a.cols(); ++r)
        for (Eigen::Index i = 0; i < a.rows(); ++i) out.col(r).segment(i * b.rows(), b.rows()) = a(i, r) * b.col(r);
    return out;
}

Matrix khatri_rao_reversed(std::span<const Matrix> as) {
    if (as.empty()) throw DimensionError("Khatri-Rao product of an empty list");
    Matrix acc = Matrix::Ones(1, as.front().cols());
    for (const auto& a : as) acc = khatri_rao(a, acc);
    return acc;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError("Hadamard factors differ in shape");
    return a.cwiseProduct(b);
}

std::vector<std::size_t> commutation_permutation(std::size_t m, std::size_t n) {
    // vec(A')[j + n*i] = A(i,j) = vec(A)[i + m*j]
    std::vector<std::size_t> perm(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) perm[j + n * i] = i + m * j;
    return perm;
}

Matrix commutation_matrix(std::size_t m, std::size_t n) {
    if (m * n > kMaxDenseCommutation)
        throw DimensionError("commutation matrix of order " + std::to_string(m * n) +
                             " is too large to materialize; use commutation_permutation");
    const auto perm = commutation_permutation(m, n);
    Matrix k = Matrix::Zero(m * n, m * n);
    for (std::size_t i = 0; i < perm.size(); ++i) k(i, perm[i]) = 1.0;
    return k;
}

Matrix mode_commutation_matrix(const Dims& dims, std::size_t k) {
    if (k < 1 || k > dims.size()) throw DimensionError("mode out of range");
    const std::size_t total = num_elements(dims);
    if (total > kMaxDenseCommutation)
        throw DimensionError("mode commutation matrix is too large to materialize; use permute()");
    std::size_t before = 1, after = 1;
    for (std::size_t q = 0; q + 1 < k; ++q) before *= dims[q];
    for (std::size_t q = k; q < dims.size(); ++q) after *= dims[q];
    return kronecker(Matrix::Identity(after, after), commutation_matrix(before, dims[k - 1]));
}

Matrix duplication_matrix(std::size_t n) {
    Matrix d = Matrix::Zero(n * n, n * (n + 1) / 2);
    std::size_t col = 0;
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t i = j; i < n; ++i, ++col) {
            d(i + n * j, col) = 1.0;
            d(j + n * i, col) = 1.0;
        }
    return d;
}

Vector vech(const Matrix& a) {
    if (a.rows() != a.cols()) throw DimensionError("vech needs a square matrix");
    const Eigen::Index n = a.rows();
    Vector v(n * (n + 1) / 2);
    Eigen::Index t = 0;
    for (Eigen::Index j = 0; j < n; ++j)
        for (Eigen::Index i = j; i < n; ++i) v(t++) = a(i, j);
    return v;
}

}  // namespace totr

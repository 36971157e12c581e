#include "totr/random.hpp"

namespace totr {

Matrix Rng::uniform_matrix(std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = uniform();
    return m;
}

Matrix Rng::normal_matrix(std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = normal();
    return m;
}

DenseTensor Rng::uniform_tensor(const Dims& dims) {
    DenseTensor t(dims);
    for (auto& v : t.values()) v = uniform();
    return t;
}

DenseTensor Rng::normal_tensor(const Dims& dims) {
    DenseTensor t(dims);
    for (auto& v : t.values()) v = normal();
    return t;
}

Matrix Rng::wishart_identity(std::size_t n, std::size_t df) {
    const Matrix z = normal_matrix(n, df);
    return z * z.transpose();
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
    // splitmix64 finalizer
    std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace totr

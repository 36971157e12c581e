#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "totr/errors.hpp"

namespace totr {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Dims = std::vector<std::size_t>;

std::size_t num_elements(const Dims& dims);

/// Dense real tensor stored with the first mode varying fastest.
///
/// Element indices are zero-based. Every function in this library that takes a
/// *mode* number uses one-based modes (mode 1 is the first mode), so that
/// X_(1) is `matricize_mode(x, 1)`.
class DenseTensor {
public:
    DenseTensor() : data_(1, 0.0) {}
    explicit DenseTensor(Dims dims, double fill = 0.0);
    DenseTensor(Dims dims, std::vector<double> data);

    static DenseTensor from_matrix(const Matrix& m);
    static DenseTensor from_vector(const Vector& v);

    std::size_t order() const { return dims_.size(); }
    const Dims& dims() const { return dims_; }
    std::size_t dim(std::size_t mode) const;
    std::size_t size() const { return data_.size(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    double& operator()(std::initializer_list<std::size_t> idx);
    double operator()(std::initializer_list<std::size_t> idx) const;
    double& at(std::span<const std::size_t> idx);
    double at(std::span<const std::size_t> idx) const;
    std::size_t linear_index(std::span<const std::size_t> idx) const;

    Eigen::Map<Vector> vec_view() { return {data_.data(), static_cast<Eigen::Index>(data_.size())}; }
    Eigen::Map<const Vector> vec_view() const {
        return {data_.data(), static_cast<Eigen::Index>(data_.size())};
    }
    /// Reinterpret the buffer as a rows x (size/rows) column-major matrix.
    Eigen::Map<Matrix> as_matrix(std::size_t rows);
    Eigen::Map<const Matrix> as_matrix(std::size_t rows) const;

    /// Same data, new shape with equal element count.
    DenseTensor reshaped(Dims dims) const;

    double norm() const;
    DenseTensor& operator+=(const DenseTensor& other);
    DenseTensor& operator-=(const DenseTensor& other);
    DenseTensor& operator*=(double s);

private:
    Dims dims_;
    std::vector<double> data_;
};

DenseTensor operator+(DenseTensor a, const DenseTensor& b);
DenseTensor operator-(DenseTensor a, const DenseTensor& b);
DenseTensor operator*(double s, DenseTensor a);

/// Row/column mode sets of a general matricization (one-based modes).
struct ModePartition {
    std::vector<std::size_t> rows;
    std::vector<std::size_t> cols;
};

/// Checks that the partition covers modes 1..order exactly once.
void validate_partition(const ModePartition& part, std::size_t order);

Vector vec(const DenseTensor& x);

/// Reorders modes: mode q of the result is mode perm[q-1] of x.
DenseTensor permute(const DenseTensor& x, const std::vector<std::size_t>& perm);

/// General matricization. Within each side, the first listed mode varies fastest.
Matrix matricize(const DenseTensor& x, const ModePartition& part);

/// X_(k): m_k x m_{-k}, remaining modes in increasing order.
Matrix matricize_mode(const DenseTensor& x, std::size_t k);

/// X_<k>: modes 1..k index rows.
Matrix matricize_canonical(const DenseTensor& x, std::size_t k);

/// Inverse of `matricize`.
DenseTensor fold(const Matrix& m, const ModePartition& part, const Dims& dims);

/// Contracts modes_x[t] of x with modes_y[t] of y. The result holds the free
/// modes of x followed by the free modes of y.
DenseTensor contract(const DenseTensor& x, const std::vector<std::size_t>& modes_x,
                     const DenseTensor& y, const std::vector<std::size_t>& modes_y);

double inner(const DenseTensor& x, const DenseTensor& y);

/// <X|B>: contracts all modes of x with the leading modes of b.
DenseTensor partial_contract(const DenseTensor& x, const DenseTensor& b);

/// Sum of X(i, :, ..., :, i); requires the first and last modes to match.
DenseTensor tensor_trace(const DenseTensor& x);

/// X x_p^1 Y: last mode of x against first mode of y.
DenseTensor last_first_contract(const DenseTensor& x, const DenseTensor& y);

/// Multiplies mode k by a (new size a.rows()); the mode keeps its position.
DenseTensor mode_product(const DenseTensor& x, const Matrix& a, std::size_t k);

/// Contracts mode k with v; the mode is removed.
DenseTensor mode_vector_product(const DenseTensor& x, const Vector& v, std::size_t k);

/// [[X; A_1, ..., A_p]].
DenseTensor tucker_product(const DenseTensor& x, std::span<const Matrix> factors);

/// Tucker product applying only the listed (mode, matrix) pairs.
struct ModeFactor {
    std::size_t mode;
    const Matrix* matrix;
};
DenseTensor multi_mode_product(const DenseTensor& x, std::span<const ModeFactor> factors);

/// Outer product v_1 o v_2 o ... o v_p.
DenseTensor outer_product(std::span<const Vector> vs);

/// Outer product of matrices A_q (m_q x h_q): result has modes (h_1..h_p, m_1..m_p)
/// with entries prod_q A_q(i_q, j_q).
DenseTensor outer_product(std::span<const Matrix> as);

/// Order-p diagonal tensor with ones on the superdiagonal, each mode of size r.
DenseTensor diagonal_tensor(std::size_t r, std::size_t p);

/// Stacks equally shaped tensors along a new trailing mode.
DenseTensor stack(std::span<const DenseTensor> xs);
std::vector<DenseTensor> unstack(const DenseTensor& x);

/// Slice of a stacked tensor along its trailing mode.
DenseTensor slice_last(const DenseTensor& x, std::size_t i);

}  // namespace totr

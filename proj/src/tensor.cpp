#include "totr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace totr {

namespace {

Dims strides_of(const Dims& dims) {
    Dims s(dims.size());
    std::size_t acc = 1;
    for (std::size_t q = 0; q < dims.size(); ++q) {
        s[q] = acc;
        acc *= dims[q];
    }
    return s;
}

void check_mode(std::size_t k, std::size_t order) {
    if (k < 1 || k > order)
        throw DimensionError("mode " + std::to_string(k) + " out of range for order " +
                             std::to_string(order));
}

void check_permutation(const std::vector<std::size_t>& perm, std::size_t order) {
    if (perm.size() != order) throw DimensionError("permutation length does not match tensor order");
    std::vector<bool> seen(order, false);
    for (std::size_t q : perm) {
        if (q < 1 || q > order || seen[q - 1]) throw DimensionError("invalid mode permutation");
        seen[q - 1] = true;
    }
}

}  // namespace

std::size_t num_elements(const Dims& dims) {
    std::size_t n = 1;
    for (std::size_t d : dims) n *= d;
    return n;
}

DenseTensor::DenseTensor(Dims dims, double fill) : dims_(std::move(dims)), data_(num_elements(dims_), fill) {}

DenseTensor::DenseTensor(Dims dims, std::vector<double> data) : dims_(std::move(dims)), data_(std::move(data)) {
    if (data_.size() != num_elements(dims_)) throw DimensionError("data length does not match dimensions");
}

DenseTensor DenseTensor::from_matrix(const Matrix& m) {
    DenseTensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
    std::copy(m.data(), m.data() + m.size(), t.data());
    return t;
}

DenseTensor DenseTensor::from_vector(const Vector& v) {
    DenseTensor t({static_cast<std::size_t>(v.size())});
    std::copy(v.data(), v.data() + v.size(), t.data());
    return t;
}

std::size_t DenseTensor::dim(std::size_t mode) const {
    check_mode(mode, order());
    return dims_[mode - 1];
}

std::size_t DenseTensor::linear_index(std::span<const std::size_t> idx) const {
    if (idx.size() != dims_.size()) throw DimensionError("index length does not match tensor order");
    std::size_t off = 0, stride = 1;
    for (std::size_t q = 0; q < idx.size(); ++q) {
        if (idx[q] >= dims_[q]) throw DimensionError("index out of range");
        off += idx[q] * stride;
        stride *= dims_[q];
    }
    return off;
}

double& DenseTensor::operator()(std::initializer_list<std::size_t> idx) {
    return data_[linear_index({idx.begin(), idx.size()})];
}
double DenseTensor::operator()(std::initializer_list<std::size_t> idx) const {
    return data_[linear_index({idx.begin(), idx.size()})];
}
double& DenseTensor::at(std::span<const std::size_t> idx) { return data_[linear_index(idx)]; }
double DenseTensor::at(std::span<const std::size_t> idx) const { return data_[linear_index(idx)]; }

Eigen::Map<Matrix> DenseTensor::as_matrix(std::size_t rows) {
    if (rows == 0 || data_.size() % rows != 0) throw DimensionError("row count does not divide tensor size");
    return {data_.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(data_.size() / rows)};
}
Eigen::Map<const Matrix> DenseTensor::as_matrix(std::size_t rows) const {
    if (rows == 0 || data_.size() % rows != 0) throw DimensionError("row count does not divide tensor size");
    return {data_.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(data_.size() / rows)};
}

DenseTensor DenseTensor::reshaped(Dims dims) const {
    if (num_elements(dims) != data_.size()) throw DimensionError("reshape changes element count");
    return DenseTensor(std::move(dims), data_);
}

double DenseTensor::norm() const { return vec_view().norm(); }

DenseTensor& DenseTensor::operator+=(const DenseTensor& other) {
    if (other.dims_ != dims_) throw DimensionError("tensor shapes differ");
    vec_view() += other.vec_view();
    return *this;
}
DenseTensor& DenseTensor::operator-=(const DenseTensor& other) {
    if (other.dims_ != dims_) throw DimensionError("tensor shapes differ");
    vec_view() -= other.vec_view();
    return *this;
}
DenseTensor& DenseTensor::operator*=(double s) {
    vec_view() *= s;
    return *this;
}

DenseTensor operator+(DenseTensor a, const DenseTensor& b) { return a += b; }
DenseTensor operator-(DenseTensor a, const DenseTensor& b) { return a -= b; }
DenseTensor operator*(double s, DenseTensor a) { return a *= s; }

void validate_partition(const ModePartition& part, std::size_t order) {
    std::vector<std::size_t> all(part.rows);
    all.insert(all.end(), part.cols.begin(), part.cols.end());
    check_permutation(all, order);
}

Vector vec(const DenseTensor& x) { return x.vec_view(); }

DenseTensor permute(const DenseTensor& x, const std::vector<std::size_t>& perm) {
    const std::size_t p = x.order();
    check_permutation(perm, p);
    bool identity = true;
    for (std::size_t q = 0; q < p; ++q) identity = identity && perm[q] == q + 1;
    if (identity) return x;

    const Dims in_strides = strides_of(x.dims());
    Dims out_dims(p), step(p);
    for (std::size_t q = 0; q < p; ++q) {
        out_dims[q] = x.dims()[perm[q] - 1];
        step[q] = in_strides[perm[q] - 1];
    }
    DenseTensor out(out_dims);
    const std::size_t total = out.size();
    if (total == 0) return out;

    // Innermost output mode handled as a strided run.
    const std::size_t n0 = out_dims[0], s0 = step[0];
    std::vector<std::size_t> counter(p, 0);
    std::size_t in_off = 0;
    const double* src = x.data();
    double* dst = out.data();
    for (std::size_t o = 0; o < total; o += n0) {
        for (std::size_t i = 0; i < n0; ++i) dst[o + i] = src[in_off + i * s0];
        for (std::size_t q = 1; q < p; ++q) {
            if (++counter[q] < out_dims[q]) {
                in_off += step[q];
                break;
            }
            in_off -= step[q] * (out_dims[q] - 1);
            counter[q] = 0;
        }
    }
    return out;
}

Matrix matricize(const DenseTensor& x, const ModePartition& part) {
    validate_partition(part, x.order());
    std::vector<std::size_t> perm(part.rows);
    perm.insert(perm.end(), part.cols.begin(), part.cols.end());
    std::size_t nrows = 1;
    for (std::size_t q : part.rows) nrows *= x.dims()[q - 1];
    const DenseTensor y = permute(x, perm);
    const std::size_t ncols = nrows == 0 ? 0 : y.size() / nrows;
    return Eigen::Map<const Matrix>(y.data(), static_cast<Eigen::Index>(nrows), static_cast<Eigen::Index>(ncols));
}

Matrix matricize_mode(const DenseTensor& x, std::size_t k) {
    check_mode(k, x.order());
    ModePartition part{{k}, {}};
    for (std::size_t q = 1; q <= x.order(); ++q)
        if (q != k) part.cols.push_back(q);
    return matricize(x, part);
}

Matrix matricize_canonical(const DenseTensor& x, std::size_t k) {
    if (k > x.order()) throw DimensionError("canonical matricization index exceeds order");
    std::size_t nrows = 1;
    for (std::size_t q = 0; q < k; ++q) nrows *= x.dims()[q];
    return Eigen::Map<const Matrix>(x.data(), static_cast<Eigen::Index>(nrows),
                                    static_cast<Eigen::Index>(nrows == 0 ? 0 : x.size() / nrows));
}

DenseTensor fold(const Matrix& m, const ModePartition& part, const Dims& dims) {
    validate_partition(part, dims.size());
    std::vector<std::size_t> perm(part.rows);
    perm.insert(perm.end(), part.cols.begin(), part.cols.end());
    Dims pdims(perm.size());
    for (std::size_t q = 0; q < perm.size(); ++q) pdims[q] = dims[perm[q] - 1];
    if (static_cast<std::size_t>(m.size()) != num_elements(pdims))
        throw DimensionError("matrix size does not match fold dimensions");
    std::size_t nrows = 1;
    for (std::size_t q : part.rows) nrows *= dims[q - 1];
    if (static_cast<std::size_t>(m.rows()) != nrows) throw DimensionError("matrix rows do not match row modes");
    DenseTensor y(pdims, std::vector<double>(m.data(), m.data() + m.size()));
    std::vector<std::size_t> inv(perm.size());
    for (std::size_t q = 0; q < perm.size(); ++q) inv[perm[q] - 1] = q + 1;
    return permute(y, inv);
}

DenseTensor contract(const DenseTensor& x, const std::vector<std::size_t>& modes_x, const DenseTensor& y,
                     const std::vector<std::size_t>& modes_y) {
    if (modes_x.size() != modes_y.size()) throw DimensionError("contraction mode lists differ in length");
    std::vector<bool> cx(x.order(), false), cy(y.order(), false);
    std::size_t inner_size = 1;
    for (std::size_t t = 0; t < modes_x.size(); ++t) {
        check_mode(modes_x[t], x.order());
        check_mode(modes_y[t], y.order());
        if (cx[modes_x[t] - 1] || cy[modes_y[t] - 1]) throw DimensionError("repeated contraction mode");
        cx[modes_x[t] - 1] = cy[modes_y[t] - 1] = true;
        if (x.dims()[modes_x[t] - 1] != y.dims()[modes_y[t] - 1])
            throw DimensionError("contracted modes have different sizes");
        inner_size *= x.dims()[modes_x[t] - 1];
    }
    std::vector<std::size_t> px, py(modes_y);
    Dims out_dims;
    std::size_t fx = 1, fy = 1;
    for (std::size_t q = 1; q <= x.order(); ++q)
        if (!cx[q - 1]) {
            px.push_back(q);
            out_dims.push_back(x.dims()[q - 1]);
            fx *= x.dims()[q - 1];
        }
    px.insert(px.end(), modes_x.begin(), modes_x.end());
    for (std::size_t q = 1; q <= y.order(); ++q)
        if (!cy[q - 1]) {
            py.push_back(q);
            out_dims.push_back(y.dims()[q - 1]);
            fy *= y.dims()[q - 1];
        }
    const DenseTensor xp = permute(x, px);
    const DenseTensor yp = permute(y, py);
    DenseTensor out(out_dims);
    Eigen::Map<const Matrix> a(xp.data(), fx, inner_size);
    Eigen::Map<const Matrix> b(yp.data(), inner_size, fy);
    Eigen::Map<Matrix>(out.data(), fx, fy).noalias() = a * b;
    return out;
}

double inner(const DenseTensor& x, const DenseTensor& y) {
    if (x.dims() != y.dims()) throw DimensionError("inner product of tensors with different shapes");
    return x.vec_view().dot(y.vec_view());
}

DenseTensor partial_contract(const DenseTensor& x, const DenseTensor& b) {
    const std::size_t p = x.order();
    if (b.order() < p) throw DimensionError("partial contraction needs order(b) >= order(x)");
    for (std::size_t q = 0; q < p; ++q)
        if (x.dims()[q] != b.dims()[q]) throw DimensionError("leading modes of b do not match x");
    Dims out_dims(b.dims().begin() + static_cast<std::ptrdiff_t>(p), b.dims().end());
    DenseTensor out(out_dims);
    Eigen::Map<const Matrix> bm(b.data(), static_cast<Eigen::Index>(x.size()),
                                static_cast<Eigen::Index>(out.size()));
    out.vec_view().noalias() = bm.transpose() * x.vec_view();
    return out;
}

DenseTensor tensor_trace(const DenseTensor& x) {
    const std::size_t p = x.order();
    if (p < 2 || x.dims().front() != x.dims().back())
        throw DimensionError("trace needs matching first and last modes");
    const std::size_t n = x.dims().front();
    Dims rest(x.dims().begin() + 1, x.dims().end() - 1);
    DenseTensor out(rest);
    const std::size_t r = out.size();
    for (std::size_t j = 0; j < r; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += x.data()[i + n * j + n * r * i];
        out.data()[j] = s;
    }
    return out;
}

DenseTensor last_first_contract(const DenseTensor& x, const DenseTensor& y) {
    if (x.order() == 0 || y.order() == 0) throw DimensionError("last-first contraction of a scalar");
    const std::size_t n = x.dims().back();
    if (y.dims().front() != n) throw DimensionError("last mode of x does not match first mode of y");
    Dims out_dims(x.dims().begin(), x.dims().end() - 1);
    out_dims.insert(out_dims.end(), y.dims().begin() + 1, y.dims().end());
    DenseTensor out(out_dims);
    const std::size_t fx = x.size() / n, fy = y.size() / n;
    Eigen::Map<Matrix>(out.data(), fx, fy).noalias() =
        Eigen::Map<const Matrix>(x.data(), fx, n) * Eigen::Map<const Matrix>(y.data(), n, fy);
    return out;
}

DenseTensor mode_product(const DenseTensor& x, const Matrix& a, std::size_t k) {
    check_mode(k, x.order());
    const std::size_t mk = x.dims()[k - 1];
    if (static_cast<std::size_t>(a.cols()) != mk) throw DimensionError("matrix columns do not match mode size");
    std::size_t left = 1, right = 1;
    for (std::size_t q = 0; q + 1 < k; ++q) left *= x.dims()[q];
    for (std::size_t q = k; q < x.order(); ++q) right *= x.dims()[q];
    Dims out_dims = x.dims();
    out_dims[k - 1] = static_cast<std::size_t>(a.rows());
    DenseTensor out(out_dims);
    const auto ar = a.rows();
    if (left == 1) {
        Eigen::Map<Matrix>(out.data(), ar, right).noalias() = a * Eigen::Map<const Matrix>(x.data(), mk, right);
        return out;
    }
    for (std::size_t r = 0; r < right; ++r) {
        Eigen::Map<const Matrix> xs(x.data() + r * left * mk, left, mk);
        Eigen::Map<Matrix>(out.data() + r * left * ar, left, ar).noalias() = xs * a.transpose();
    }
    return out;
}

DenseTensor mode_vector_product(const DenseTensor& x, const Vector& v, std::size_t k) {
    Matrix row = v.transpose();
    DenseTensor y = mode_product(x, row, k);
    Dims d = x.dims();
    d.erase(d.begin() + static_cast<std::ptrdiff_t>(k - 1));
    return y.reshaped(d);
}

DenseTensor tucker_product(const DenseTensor& x, std::span<const Matrix> factors) {
    if (factors.size() != x.order()) throw DimensionError("Tucker product needs one factor per mode");
    std::vector<ModeFactor> fs;
    for (std::size_t q = 0; q < factors.size(); ++q) fs.push_back({q + 1, &factors[q]});
    return multi_mode_product(x, fs);
}

DenseTensor multi_mode_product(const DenseTensor& x, std::span<const ModeFactor> factors) {
    // Shrinking products first keeps intermediates small.
    std::vector<ModeFactor> order(factors.begin(), factors.end());
    std::stable_sort(order.begin(), order.end(), [](const ModeFactor& a, const ModeFactor& b) {
        const double ra = static_cast<double>(a.matrix->rows()) / std::max<Eigen::Index>(1, a.matrix->cols());
        const double rb = static_cast<double>(b.matrix->rows()) / std::max<Eigen::Index>(1, b.matrix->cols());
        return ra < rb;
    });
    DenseTensor y = x;
    for (const auto& f : order) y = mode_product(y, *f.matrix, f.mode);
    return y;
}

DenseTensor outer_product(std::span<const Vector> vs) {
    Dims dims;
    Vector acc = Vector::Ones(1);
    for (const auto& v : vs) {
        dims.push_back(static_cast<std::size_t>(v.size()));
        Vector next(acc.size() * v.size());
        for (Eigen::Index j = 0; j < v.size(); ++j) next.segment(j * acc.size(), acc.size()) = v(j) * acc;
        acc = std::move(next);
    }
    return DenseTensor(dims, std::vector<double>(acc.data(), acc.data() + acc.size()));
}

DenseTensor outer_product(std::span<const Matrix> as) {
    const std::size_t p = as.size();
    std::vector<Vector> vs;
    for (std::size_t q = 0; q < p; ++q) {
        Matrix t = as[q].transpose();
        vs.emplace_back(Eigen::Map<const Vector>(t.data(), t.size()));
    }
    DenseTensor t = outer_product(std::span<const Vector>(vs));
    Dims pairs;
    for (std::size_t q = 0; q < p; ++q) {
        pairs.push_back(static_cast<std::size_t>(as[q].cols()));
        pairs.push_back(static_cast<std::size_t>(as[q].rows()));
    }
    t = t.reshaped(pairs);
    std::vector<std::size_t> perm;
    for (std::size_t q = 0; q < p; ++q) perm.push_back(2 * q + 1);
    for (std::size_t q = 0; q < p; ++q) perm.push_back(2 * q + 2);
    return permute(t, perm);
}

DenseTensor diagonal_tensor(std::size_t r, std::size_t p) {
    DenseTensor d(Dims(p, r));
    std::size_t step = 0, stride = 1;
    for (std::size_t q = 0; q < p; ++q) {
        step += stride;
        stride *= r;
    }
    for (std::size_t i = 0; i < r; ++i) d.data()[i * step] = 1.0;
    return d;
}

DenseTensor stack(std::span<const DenseTensor> xs) {
    if (xs.empty()) throw DimensionError("cannot stack an empty list");
    Dims d = xs.front().dims();
    const std::size_t each = xs.front().size();
    d.push_back(xs.size());
    DenseTensor out(d);
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (xs[i].dims() != xs.front().dims()) throw DimensionError("stacked tensors differ in shape");
        std::copy(xs[i].data(), xs[i].data() + each, out.data() + i * each);
    }
    return out;
}

DenseTensor slice_last(const DenseTensor& x, std::size_t i) {
    if (x.order() == 0 || i >= x.dims().back()) throw DimensionError("slice index out of range");
    Dims d(x.dims().begin(), x.dims().end() - 1);
    const std::size_t each = num_elements(d);
    return DenseTensor(d, std::vector<double>(x.data() + i * each, x.data() + (i + 1) * each));
}

std::vector<DenseTensor> unstack(const DenseTensor& x) {
    std::vector<DenseTensor> out;
    for (std::size_t i = 0; i < x.dims().back(); ++i) out.push_back(slice_last(x, i));
    return out;
}

}  // namespace totr

#include "totr/tvn.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "totr/linalg.hpp"
#include "totr/matrix_ops.hpp"

namespace totr {

void TvnParams::validate() const {
    if (scales.size() != mean.order()) throw DimensionError("TVN needs one scale matrix per mode");
    for (std::size_t k = 0; k < scales.size(); ++k)
        if (static_cast<std::size_t>(scales[k].rows()) != mean.dims()[k] || scales[k].rows() != scales[k].cols())
            throw DimensionError("scale matrix " + std::to_string(k + 1) + " does not match mode size");
    if (!(sigma2 >= 0.0)) throw DimensionError("sigma2 must be nonnegative");
}

Matrix kron_except(std::span<const Matrix> scales, std::size_t k) {
    std::vector<Matrix> rest;
    for (std::size_t q = 0; q < scales.size(); ++q)
        if (q + 1 != k) rest.push_back(scales[q]);
    return kronecker_reversed(rest);
}

DenseTensor apply_per_mode(const DenseTensor& x, std::span<const Matrix> mats, std::size_t skip) {
    std::vector<ModeFactor> fs;
    for (std::size_t q = 0; q < mats.size(); ++q)
        if (q + 1 != skip) fs.push_back({q + 1, &mats[q]});
    // Larger modes first.
    std::stable_sort(fs.begin(), fs.end(),
                     [](const ModeFactor& a, const ModeFactor& b) { return a.matrix->cols() > b.matrix->cols(); });
    DenseTensor y = x;
    for (const auto& f : fs) y = mode_product(y, *f.matrix, f.mode);
    return y;
}

std::vector<Matrix> inverses(std::span<const Matrix> scales) {
    std::vector<Matrix> out;
    for (const auto& s : scales) out.push_back(spd_inverse(s));
    return out;
}

double mahalanobis(const DenseTensor& y, const TvnParams& params) {
    params.validate();
    if (y.dims() != params.mean.dims()) throw DimensionError("observation does not match TVN mean shape");
    if (params.sigma2 <= 0.0) throw SingularError("Mahalanobis distance undefined for sigma2 = 0");
    const DenseTensor z = y - params.mean;
    const auto inv = inverses(params.scales);
    return inner(z, apply_per_mode(z, inv)) / params.sigma2;
}

double log_density(const DenseTensor& y, const TvnParams& params) {
    const double d2 = mahalanobis(y, params);
    const double m = static_cast<double>(params.mean.size());
    double ld = 0.0;
    for (std::size_t k = 0; k < params.scales.size(); ++k)
        ld += m / static_cast<double>(params.mean.dims()[k]) * logdet_spd(params.scales[k]);
    return -0.5 * (m * std::log(2.0 * std::numbers::pi * params.sigma2) + ld + d2);
}

DenseTensor sample_stacked(const TvnParams& params, std::size_t n, Rng& rng) {
    params.validate();
    Dims d = params.mean.dims();
    d.push_back(n);
    DenseTensor out(d);
    const std::size_t m = params.mean.size();
    if (params.sigma2 > 0.0) {
        std::vector<Matrix> roots;
        for (const auto& s : params.scales) roots.push_back(sym_sqrt(s));
        out = rng.normal_tensor(d);
        out = apply_per_mode(out, roots);
        out *= std::sqrt(params.sigma2);
    }
    for (std::size_t i = 0; i < n; ++i)
        Eigen::Map<Vector>(out.data() + i * m, static_cast<Eigen::Index>(m)) += params.mean.vec_view();
    return out;
}

std::vector<DenseTensor> sample(const TvnParams& params, std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    return unstack(sample_stacked(params, n, rng));
}

std::pair<Matrix, Matrix> reshape_distribution_check(const TvnParams& params, std::size_t k) {
    params.validate();
    if (k < 1 || k > params.scales.size()) throw DimensionError("mode out of range");
    return {params.scales[k - 1], kron_except(params.scales, k)};
}

}  // namespace totr

#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "totr/random.hpp"
#include "totr/tensor.hpp"

namespace totr {

/// Tensor-variate normal TVN(mean, sigma2 * Sigma_p (x) ... (x) Sigma_1).
struct TvnParams {
    DenseTensor mean;
    std::vector<Matrix> scales;
    double sigma2 = 1.0;

    void validate() const;
};

/// Sigma_{-k} = (x)_{i != k} Sigma_i, highest mode first.
Matrix kron_except(std::span<const Matrix> scales, std::size_t k);

/// Applies mats[q] along mode q+1 of x for every q except `skip` (1-based, 0 = none).
/// Stacked tensors may carry extra trailing modes, which are left untouched.
DenseTensor apply_per_mode(const DenseTensor& x, std::span<const Matrix> mats, std::size_t skip = 0);

std::vector<Matrix> inverses(std::span<const Matrix> scales);

double mahalanobis(const DenseTensor& y, const TvnParams& params);
double log_density(const DenseTensor& y, const TvnParams& params);

/// iid draws mean + sigma [[Z; Sigma_1^{1/2}, ..., Sigma_p^{1/2}]].
std::vector<DenseTensor> sample(const TvnParams& params, std::size_t n, std::uint64_t seed);

/// Draws stacked along a trailing observation mode.
DenseTensor sample_stacked(const TvnParams& params, std::size_t n, Rng& rng);

/// (Sigma_k, Sigma_{-k}): parameters of the matrix normal law of Y_(k).
std::pair<Matrix, Matrix> reshape_distribution_check(const TvnParams& params, std::size_t k);

}  // namespace totr

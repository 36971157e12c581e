#pragma once

#include <optional>
#include <string>
#include <vector>

#include "totr/estimation.hpp"
#include "totr/lowrank.hpp"
#include "totr/tensor.hpp"

namespace totr {

inline constexpr std::size_t kDefaultCovarianceBudget = 4'000'000;

/// Covariance factor acting on a run of consecutive tensor modes (one-based).
struct KroneckerBlock {
    std::vector<std::size_t> modes;
    Matrix cov;
};

/// blockwise: each factor's GLS map with the others held fixed, combined through
/// the shared data. joint: sigma^2 J N^+ J' from the full information N of theta.
enum class CovarianceMethod { blockwise, joint };

/// Normal law of B-hat with dims (h..., m...).
struct AsymptoticLaw {
    enum class Structure { kronecker, explicit_matrix };

    Structure structure = Structure::explicit_matrix;
    DenseTensor mean;
    double scale = 1.0;                  // kronecker: overall multiplier (tau^2)
    std::vector<KroneckerBlock> blocks;  // kronecker: blocks in mode order
    std::optional<Matrix> covariance;    // explicit: Cov(vec B), when within budget
    Vector variances;                    // marginal variances over vec(mean)

    /// Explicit covariance; expands the Kronecker form when needed.
    Matrix expand() const;
};

/// d(vec B)/d(theta) with theta the stacked vectorized factors, and the names
/// of the factor blocks in stacking order.
struct JacobianBlocks {
    std::vector<std::string> names;
    std::vector<Matrix> blocks;  // each (h m) x dim(theta_b)

    Matrix stacked() const;
};

/// Covariates entering the law: centered when the fit carried an intercept.
DenseTensor centered_model_adjustment(const ToTRFit& fit, const DenseTensor& x_stacked);

/// sigma^2 (M M') (x) (P_L (XX')^{-1} P_L). Balanced single-entry designs
/// (XX' = q I) return per-mode blocks (sigma^2/q) P_1..P_l, M_1M_1'..M_pM_p'.
AsymptoticLaw tucker_asymptotic_cov(const ToTRFit& fit, const DenseTensor& x_stacked);

/// J Cov(theta-hat) J' with Cov(theta-hat) = R (I_n (x) Sigma) R' built from the
/// block-wise GLS maps at the estimate.
AsymptoticLaw cp_asymptotic_cov(const ToTRFit& fit, const DenseTensor& x_stacked,
                                std::size_t budget = kDefaultCovarianceBudget,
                                CovarianceMethod method = CovarianceMethod::blockwise);
AsymptoticLaw tr_op_asymptotic_cov(const ToTRFit& fit, const DenseTensor& x_stacked,
                                   std::size_t budget = kDefaultCovarianceBudget,
                                   CovarianceMethod method = CovarianceMethod::blockwise);
/// Dispatches on the fitted format.
AsymptoticLaw asymptotic_law(const ToTRFit& fit, const DenseTensor& x_stacked,
                             std::size_t budget = kDefaultCovarianceBudget,
                             CovarianceMethod method = CovarianceMethod::blockwise);

/// Jacobian of a CP tensor [[A_1..A_L]] with respect to vec(A_k), the weights
/// folded into the last factor: K_(k)' (T_k (x) I), T_k = Khatri-Rao of the others.
Matrix cp_jacobian(const std::vector<Matrix>& factors, std::size_t k);
/// Jacobian of tr(C_1 x^1 ... x^1 C_L) with respect to vec(C_k(2)).
Matrix tr_jacobian(const std::vector<DenseTensor>& cores, std::size_t k);
/// Jacobian of the OP tensor (dims (h..., m...)) with respect to vec(M_k').
Matrix op_jacobian(const std::vector<Matrix>& factors, std::size_t k);
JacobianBlocks coefficient_jacobian(const LowRankCoeff& coeff);

/// Stacked parameter vector matching coefficient_jacobian (CP weights folded
/// into the last factor, TR cores as vec C_(2), OP as vec M_k').
Vector coefficient_parameters(const LowRankCoeff& coeff);
/// Inverse of coefficient_parameters for a coefficient of the same structure.
LowRankCoeff coefficient_from_parameters(const LowRankCoeff& like, const Vector& theta);

/// Cov(theta-hat): sigma^2 F^{-1} N F^{-1} with F the block diagonal of N (blockwise),
/// or sigma^2 N^+ (joint).
Matrix factor_covariance(const JacobianBlocks& jac, const Matrix& xx, std::span<const Matrix> scales, double sigma2,
                         CovarianceMethod method = CovarianceMethod::blockwise);

/// Contrast per mode; std::nullopt leaves the mode untouched. A contrast with
/// one row reduces its mode to size one and folds the 1x1 block into `scale`.
using Contrasts = std::vector<std::optional<Matrix>>;
AsymptoticLaw contrast_transform(const AsymptoticLaw& law, const Contrasts& contrasts);

/// Marginally standardized estimate: each entry divided by its standard deviation.
DenseTensor standardize(const DenseTensor& estimate, const AsymptoticLaw& law);

/// Fisher information with respect to (vech Sigma_1, ..., vech Sigma_p).
Matrix fisher_info_scale(std::span<const Matrix> scales, std::size_t n);
/// Kernel vector A^{-1} D' vec(Sigma_1^{-1}) of the Schur complement
/// A - B C^{-1} B' of the leading 2x2 block of the Fisher information.
Vector fisher_kernel_vector(std::span<const Matrix> scales, std::size_t n);
Matrix fisher_schur_complement(std::span<const Matrix> scales, std::size_t n);
bool is_singular(const Matrix& info, double rel_tol = 1e-10);

/// Two-sided normal p-value.
double two_sided_p(double z);

}  // namespace totr

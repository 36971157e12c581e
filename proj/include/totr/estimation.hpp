#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "totr/covariance.hpp"
#include "totr/lowrank.hpp"
#include "totr/tensor.hpp"

namespace totr {

struct ToTRSpec {
    Format format = Format::cp;
    std::vector<std::size_t> ranks;
    std::vector<ScaleModel> scale_models;  // empty: unstructured on every mode
    bool intercept = true;
    int max_iter = 500;
    std::optional<double> tol_loglik;  // unset: 1e-6 |loglik| + 1e-8
    double tol_norm = 1e-6;
    std::uint64_t seed = 0;
    bool allow_rank_deficient = false;
    bool record_blocks = false;  // exact loglik after every block update
    std::optional<LowRankCoeff> init;
};

struct BlockRecord {
    int iteration = 0;
    std::string block;
    double loglik = 0.0;
};

struct BlockTiming {
    double seconds = 0.0;
    std::size_t calls = 0;
};

struct ToTRFit {
    ModelShape shape;
    LowRankCoeff coeff;
    DenseTensor intercept;
    std::vector<Matrix> scales;
    std::vector<ScaleModel> scale_models;  // rho holds the fitted value for parametric kinds
    double sigma2 = 1.0;
    std::size_t n = 0;
    bool has_intercept = true;
    std::vector<double> loglik_trace;
    bool converged = false;
    int iterations = 0;
    bool rank_deficient = false;
    std::vector<std::string> warnings;
    std::vector<BlockRecord> block_trace;
    std::map<std::string, BlockTiming> timings;

    Format format() const { return format_of(coeff); }
    double loglik() const { return loglik_trace.empty() ? 0.0 : loglik_trace.back(); }
};

/// Working state of block relaxation on centered, stacked data.
struct EstimationState {
    ModelShape shape;
    std::size_t n = 0;
    DenseTensor x;      // (h..., n)
    DenseTensor y;      // (m..., n)
    Matrix xx;          // sum_i vec(X_i) vec(X_i)'
    DenseTensor yx;     // (m..., h): column j is sum_i X_i(j) Y_i
    LowRankCoeff coeff;
    std::vector<Matrix> scales;
    std::vector<Matrix> scale_inverses;
    std::vector<ScaleModel> models;
    double sigma2 = 1.0;
    bool allow_rank_deficient = false;
    bool rank_deficient = false;
    std::vector<std::string> warnings;

    std::size_t h() const { return shape.h(); }
    std::size_t m() const { return shape.m(); }
    void set_scale(std::size_t k, Matrix s);
};

struct CenteredData {
    DenseTensor x, y;        // stacked (h..., n), (m..., n)
    DenseTensor x_mean, y_mean;
};

CenteredData center_and_profile_intercept(const DenseTensor& x_stacked, const DenseTensor& y_stacked);
CenteredData center_and_profile_intercept(std::span<const DenseTensor> xs, std::span<const DenseTensor> ys);

/// Builds the estimation state on already centered data, with the given coefficient,
/// identity-like scales and sigma2 = 1.
EstimationState make_state(const DenseTensor& x_centered, const DenseTensor& y_centered, LowRankCoeff init,
                           std::vector<ScaleModel> models, bool allow_rank_deficient = false);

/// <X_i|B> for covariates stacked along a trailing mode, computed factor-wise.
DenseTensor predict_stacked(const LowRankCoeff& coeff, const DenseTensor& x_stacked);

DenseTensor residuals_stacked(const EstimationState& st);

/// Exact log-likelihood of the centered data at the current state.
double exact_loglik(const EstimationState& st);

/// ||B|| + sigma prod_k ||Sigma_k||.
double state_norm(const EstimationState& st);

// Block updates (k is one-based). Each mutates the state and returns the new block.
Matrix tucker_update_M(std::size_t k, EstimationState& st);
DenseTensor tucker_update_V(EstimationState& st);
Matrix tucker_update_L(std::size_t k, EstimationState& st);
/// Refits Sigma_k with sigma2, then restores M_k' Sigma_k^{-1} M_k = I by moving R into the core.
void tucker_update_scale(std::size_t k, EstimationState& st);

/// M_k, followed by the (Sigma_k, sigma2) update on the new residuals.
std::pair<Matrix, Matrix> cp_update_M(std::size_t k, EstimationState& st);
Matrix cp_update_L(std::size_t k, EstimationState& st);
std::pair<Matrix, Matrix> op_update(std::size_t k, EstimationState& st);

enum class Chain { covariate, response };
/// Updates core k of the given chain; response cores also refit (Sigma_k, sigma2).
DenseTensor tr_update(Chain chain, std::size_t k, EstimationState& st);

/// Refits (Sigma_k, sigma2) on the current residuals.
void update_scale(std::size_t k, EstimationState& st, const DenseTensor* residuals = nullptr);

/// CP M_k Gram matrix built from the Hadamard identity.
Matrix cp_gram_hadamard(std::size_t k, const EstimationState& st);

/// Normal equations M_k gram = cross of a response-side block whose design for
/// covariate cell j is G_j (q x m_{-k}); `g_all` has dims (q, m_{-k}..., h).
struct NormalEquations {
    Matrix gram;
    Matrix cross;
};
NormalEquations response_block_equations(std::size_t k, const EstimationState& st, const DenseTensor& g_all);

struct ConvergenceState {
    double loglik = 0.0;
    double norm = 0.0;
};

/// Strict-inequality test on |d loglik| and |d norm|; first iteration never converges.
bool convergence_check(const std::optional<ConvergenceState>& prev, const ConvergenceState& curr,
                       const ToTRSpec& spec);

ToTRFit fit(const ToTRSpec& spec, const DenseTensor& x_stacked, const DenseTensor& y_stacked);
ToTRFit fit(const ToTRSpec& spec, std::span<const DenseTensor> xs, std::span<const DenseTensor> ys);

/// Y_hat_i = intercept + <X_i|B>.
DenseTensor predict(const ToTRFit& f, const DenseTensor& x_stacked);
std::vector<DenseTensor> predict(const ToTRFit& f, std::span<const DenseTensor> xs);
DenseTensor residuals(const ToTRFit& f, const DenseTensor& x_stacked, const DenseTensor& y_stacked);
std::vector<DenseTensor> residuals(const ToTRFit& f, std::span<const DenseTensor> xs,
                                   std::span<const DenseTensor> ys);

/// Stacked shape checks shared by the drivers: X is (h..., n), Y is (m..., n).
ModelShape shape_from_data(const DenseTensor& x_stacked, const DenseTensor& y_stacked);

}  // namespace totr

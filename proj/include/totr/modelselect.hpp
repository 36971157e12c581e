#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "totr/estimation.hpp"

namespace totr {

/// Free scale parameters: sigma^2 once, plus per mode m_k(m_k+1)/2 - 1
/// (unstructured), 1 (ar1, equicorrelation) or 0 (identity).
std::size_t scale_param_count(const std::vector<ScaleModel>& models, const Dims& response);

struct BicResult {
    double bic = 0.0;
    double loglik = 0.0;
    std::size_t k_coeff = 0;
    std::size_t k_scale = 0;
    std::size_t k_total() const { return k_coeff + k_scale; }
    bool converged = true;
};

/// BIC = K log(n) - 2 loglik with the profile log-likelihood of the fit.
BicResult bic(const ToTRFit& fit);
double bic_value(std::size_t k, double loglik, std::size_t n);

using RankGrid = std::vector<std::vector<std::size_t>>;

struct RankSearchRow {
    std::vector<std::size_t> ranks;
    std::uint64_t seed = 0;
    BicResult bic;
    int iterations = 0;
    std::string error;  // nonempty when the candidate failed
};

struct RankSearchResult {
    std::size_t best = 0;  // index into table
    ToTRFit best_fit;
    std::vector<RankSearchRow> table;  // grid order
};

/// Seed of a candidate fit; depends on the base seed and the ranks only.
std::uint64_t candidate_seed(std::uint64_t base, const std::vector<std::size_t>& ranks);

/// Fits every candidate and returns the smallest BIC; ties go to the smaller
/// parameter count, then to the lexicographically smaller rank vector.
RankSearchResult rank_search(const ToTRSpec& base, const RankGrid& grid, const DenseTensor& x, const DenseTensor& y,
                             std::size_t jobs = 1);

struct TanovaDesign {
    Dims levels;
    std::vector<std::vector<std::size_t>> labels;  // zero-based level per factor, per observation
    std::vector<std::size_t> cell_counts;          // first factor fastest
    DenseTensor x;                                 // (levels..., n) single-entry covariates
    std::vector<std::string> warnings;

    std::size_t n() const { return labels.size(); }
    /// Units per cell when all cells hold the same count.
    std::optional<std::size_t> balanced() const;
};

TanovaDesign build_tanova_design(const Dims& levels, const std::vector<std::vector<std::size_t>>& labels);
/// Balanced design with `per_cell` units per cell, first factor fastest.
TanovaDesign balanced_tanova_design(const Dims& levels, std::size_t per_cell);
/// Same observations with factor k (one-based) merged into a single level.
TanovaDesign collapse_factor(const TanovaDesign& design, std::size_t k);
/// Ranks of the reduced model after collapsing covariate mode k: the Tucker rank
/// of that mode becomes 1 and every other Tucker rank is clipped to the product of
/// the rest; CP, TR and OP ranks are unchanged.
std::vector<std::size_t> reduced_ranks(Format f, const ModelShape& shape, const std::vector<std::size_t>& ranks,
                                       std::size_t k);

/// log of the product of the eigenvalues of Z Z' above rel_tol * lambda_max,
/// with Z the m x n matrix of vectorized residuals.
double log_generalized_det(const Matrix& z, double rel_tol = 1e-10);
std::size_t generalized_rank(const Matrix& z, double rel_tol = 1e-10);

/// Wilks' Lambda gdet(Sigma_R)/gdet(Sigma_T) from stacked residuals of the full
/// and reduced fits.
double wilks_lambda(const DenseTensor& residual_full, const DenseTensor& residual_reduced, double rel_tol = 1e-10);
double wilks_lambda(const ToTRFit& full, const DenseTensor& x_full, const ToTRFit& reduced, const DenseTensor& x_reduced,
                    const DenseTensor& y, double rel_tol = 1e-10);

struct WilksTest {
    double lambda = 1.0;
    ToTRFit full;
    ToTRFit reduced;
};

/// Fits the full model and the model with covariate factor k collapsed. The
/// reduced fit tolerates rank-deficient blocks (a collapsed TR core is a plain
/// matrix, which leaves its neighbours overparametrized).
WilksTest wilks_test(const ToTRSpec& spec, const TanovaDesign& design, const DenseTensor& y, std::size_t k = 1);

/// Type-7 sample quantile.
double sample_quantile(std::vector<double> values, double level);

/// Level quantile of replicate(seed_b) over b = 0..B-1 with seed_b = derive_seed(seed, b).
double wilks_mc_quantile(const std::function<double(std::uint64_t)>& replicate, std::size_t replicates, double level,
                         std::uint64_t seed, std::size_t jobs = 1, std::vector<double>* values = nullptr);

}  // namespace totr

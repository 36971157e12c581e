#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "totr/tensor.hpp"

namespace totr {

enum class ScaleKind { unstructured, ar1, equicorrelation, identity };

std::string scale_kind_name(ScaleKind k);
/// Accepts the config names unstructured|ar1|equicorr|identity.
ScaleKind parse_scale_kind(const std::string& name);

struct ScaleModel {
    ScaleKind kind = ScaleKind::unstructured;
    double rho = 0.0;
};

/// Correlation matrix of a parametric kind; unit diagonal.
Matrix structured_matrix(ScaleKind kind, std::size_t m, double rho);

/// Open interval of rho values giving a positive definite matrix.
std::pair<double, double> rho_bounds(ScaleKind kind, std::size_t m);

/// S_k = sum_i Z_i(k) Sigma_{-k}^{-1} Z_i(k)'.
Matrix mode_sse(std::span<const DenseTensor> residuals, std::span<const Matrix> scales, std::size_t k);

/// Same sum for residuals stacked along a trailing mode, given Sigma_q^{-1}.
Matrix mode_sse_stacked(const DenseTensor& residuals, std::span<const Matrix> scale_inverses, std::size_t k);

struct AdjustResult {
    Matrix sigma;        // normalized so sigma(0,0) == 1
    double sigma2_factor;  // multiply the caller's sigma2 by this
};

/// Unconstrained maximizer S/(df sigma2) split into a unit-(1,1) matrix and a scalar.
AdjustResult adjust(double df, double sigma2, const Matrix& s);

struct StructuredFit {
    Matrix sigma;
    double rho = 0.0;
    bool at_boundary = false;
};

/// Objective -(df/2) log|Sigma(rho)| - tr(Sigma(rho)^{-1} S)/(2 sigma2).
double structured_objective(ScaleKind kind, const Matrix& s, double df, double sigma2, double rho);

/// Bounded 1-D maximization of the objective above. When `current` is given it
/// is kept as a candidate so the result never scores below it.
StructuredFit fit_structured_scale(ScaleKind kind, const Matrix& s, double df, double sigma2,
                                   std::optional<double> current = std::nullopt);

/// tr(Sigma_k^{-1} S_k) / (n m).
double sigma2_update(const Matrix& sigma, const Matrix& s, std::size_t n, std::size_t m);

/// -(nm/2)[1 + log(2 pi sigma2) + sum_k logdet(Sigma_k)/m_k].
double profile_loglik(double sigma2, std::span<const Matrix> scales, std::size_t n, std::size_t m);

}  // namespace totr

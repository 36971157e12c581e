#include "totr/covariance.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "totr/linalg.hpp"
#include "totr/tvn.hpp"

namespace totr {

namespace {

constexpr double kShrink = 1e-6;
constexpr double kRhoTol = 1e-8;

struct Ar1Parts {
    double tr, inner_diag, off;
};

Ar1Parts ar1_parts(const Matrix& s) {
    const Eigen::Index m = s.rows();
    Ar1Parts p{s.trace(), 0.0, 0.0};
    for (Eigen::Index i = 1; i + 1 < m; ++i) p.inner_diag += s(i, i);
    for (Eigen::Index i = 0; i + 1 < m; ++i) p.off += s(i, i + 1);
    return p;
}

}  // namespace

std::string scale_kind_name(ScaleKind k) {
    switch (k) {
        case ScaleKind::unstructured: return "unstructured";
        case ScaleKind::ar1: return "ar1";
        case ScaleKind::equicorrelation: return "equicorr";
        case ScaleKind::identity: return "identity";
    }
    return "?";
}

ScaleKind parse_scale_kind(const std::string& name) {
    if (name == "unstructured") return ScaleKind::unstructured;
    if (name == "ar1") return ScaleKind::ar1;
    if (name == "equicorr" || name == "equicorrelation") return ScaleKind::equicorrelation;
    if (name == "identity") return ScaleKind::identity;
    throw ConfigError("unknown scale model '" + name + "'");
}

Matrix structured_matrix(ScaleKind kind, std::size_t m, double rho) {
    const auto n = static_cast<Eigen::Index>(m);
    switch (kind) {
        case ScaleKind::ar1: {
            Matrix s(n, n);
            for (Eigen::Index i = 0; i < n; ++i)
                for (Eigen::Index j = 0; j < n; ++j) s(i, j) = std::pow(rho, static_cast<double>(std::abs(i - j)));
            return s;
        }
        case ScaleKind::equicorrelation: {
            Matrix s = Matrix::Constant(n, n, rho);
            s.diagonal().setOnes();
            return s;
        }
        default: return Matrix::Identity(n, n);
    }
}

std::pair<double, double> rho_bounds(ScaleKind kind, std::size_t m) {
    if (kind == ScaleKind::equicorrelation && m > 1) return {-1.0 / static_cast<double>(m - 1), 1.0};
    return {-1.0, 1.0};
}

Matrix mode_sse_stacked(const DenseTensor& residuals, std::span<const Matrix> scale_inverses, std::size_t k) {
    if (residuals.order() < scale_inverses.size()) throw DimensionError("residuals do not match scale count");
    for (std::size_t q = 0; q < scale_inverses.size(); ++q)
        if (static_cast<std::size_t>(scale_inverses[q].rows()) != residuals.dims()[q])
            throw DimensionError("scale matrix does not match residual mode size");
    const DenseTensor t = apply_per_mode(residuals, scale_inverses, k);
    const Matrix zk = matricize_mode(residuals, k);
    const Matrix tk = matricize_mode(t, k);
    Matrix s = zk * tk.transpose();
    return 0.5 * (s + s.transpose());
}

Matrix mode_sse(std::span<const DenseTensor> residuals, std::span<const Matrix> scales, std::size_t k) {
    if (residuals.empty()) {
        if (k < 1 || k > scales.size()) throw DimensionError("mode out of range");
        const auto mk = scales[k - 1].rows();
        return Matrix::Zero(mk, mk);
    }
    return mode_sse_stacked(stack(residuals), inverses(scales), k);
}

AdjustResult adjust(double df, double sigma2, const Matrix& s) {
    if (df <= 0.0 || sigma2 <= 0.0) throw DimensionError("adjust needs df > 0 and sigma2 > 0");
    if (s.rows() == 0 || !(s(0, 0) > 0.0)) throw SingularError("degenerate first coordinate: S_k(1,1) = 0");
    const double s11 = s(0, 0);
    Matrix sigma = s / s11;
    sigma = 0.5 * (sigma + sigma.transpose());
    sigma(0, 0) = 1.0;
    return {sigma, s11 / (df * sigma2)};
}

double structured_objective(ScaleKind kind, const Matrix& s, double df, double sigma2, double rho) {
    const double m = static_cast<double>(s.rows());
    double logdet = 0.0, tr = 0.0;
    switch (kind) {
        case ScaleKind::ar1: {
            const auto p = ar1_parts(s);
            const double d = 1.0 - rho * rho;
            logdet = (m - 1.0) * std::log(d);
            tr = (p.tr + rho * rho * p.inner_diag - 2.0 * rho * p.off) / d;
            break;
        }
        case ScaleKind::equicorrelation: {
            const double a = 1.0 + (m - 1.0) * rho;
            logdet = (m - 1.0) * std::log(1.0 - rho) + std::log(a);
            tr = (s.trace() - rho / a * s.sum()) / (1.0 - rho);
            break;
        }
        default: tr = s.trace(); break;
    }
    return -0.5 * df * logdet - tr / (2.0 * sigma2);
}

StructuredFit fit_structured_scale(ScaleKind kind, const Matrix& s, double df, double sigma2,
                                   std::optional<double> current) {
    const std::size_t m = static_cast<std::size_t>(s.rows());
    if (s.rows() != s.cols()) throw DimensionError("S_k must be square");
    if (kind == ScaleKind::unstructured) throw ConfigError("fit_structured_scale needs a parametric kind");
    if (kind == ScaleKind::identity || m <= 1) return {Matrix::Identity(s.rows(), s.rows()), 0.0, false};

    auto [lo, hi] = rho_bounds(kind, m);
    lo += kShrink;
    hi -= kShrink;
    auto f = [&](double r) { return structured_objective(kind, s, df, sigma2, r); };

    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double c = b - g * (b - a), d = a + g * (b - a);
    double fc = f(c), fd = f(d);
    while (b - a > kRhoTol) {
        if (fc > fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    double rho = 0.5 * (a + b);
    double best = f(rho);
    for (int it = 0; it < 3; ++it) {
        const double h = 1e-5;
        if (rho - h <= lo || rho + h >= hi) break;
        const double f0 = best, fp = f(rho + h), fm = f(rho - h);
        const double d1 = (fp - fm) / (2 * h), d2 = (fp - 2 * f0 + fm) / (h * h);
        if (!(d2 < 0.0)) break;
        const double cand = rho - d1 / d2;
        if (cand <= lo || cand >= hi) break;
        const double fcand = f(cand);
        if (!(fcand > best)) break;
        rho = cand;
        best = fcand;
    }
    if (current && *current > lo - kShrink && *current < hi + kShrink) {
        const double cur = std::clamp(*current, lo, hi);
        if (f(cur) >= best) {
            rho = cur;
            best = f(cur);
        }
    }
    const bool boundary = (rho - lo) < 1e-5 || (hi - rho) < 1e-5;
    return {structured_matrix(kind, m, rho), rho, boundary};
}

double sigma2_update(const Matrix& sigma, const Matrix& s, std::size_t n, std::size_t m) {
    if (sigma.rows() != s.rows()) throw DimensionError("Sigma_k and S_k differ in size");
    Eigen::LLT<Matrix> llt(sigma);
    if (llt.info() != Eigen::Success) throw SingularError("scale matrix is not positive definite");
    return llt.solve(s).trace() / (static_cast<double>(n) * static_cast<double>(m));
}

double profile_loglik(double sigma2, std::span<const Matrix> scales, std::size_t n, std::size_t m) {
    const double nm = static_cast<double>(n) * static_cast<double>(m);
    double ld = 0.0;
    for (const auto& s : scales) ld += logdet_spd(s) / static_cast<double>(s.rows());
    return -0.5 * nm * (1.0 + std::log(2.0 * std::numbers::pi * sigma2) + ld);
}

}  // namespace totr

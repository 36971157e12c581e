#include "totr/estimation.hpp"

#include <chrono>
#include <cmath>
#include <functional>

#include "totr/linalg.hpp"
#include "totr/matrix_ops.hpp"
#include "totr/tvn.hpp"

namespace totr {

namespace {

using Clock = std::chrono::steady_clock;

Eigen::Map<const Matrix> mat(const DenseTensor& t, std::size_t rows) { return t.as_matrix(rows); }

DenseTensor tensor_from(const Matrix& m, Dims dims) {
    return DenseTensor(std::move(dims), std::vector<double>(m.data(), m.data() + m.size()));
}

Dims with_trailing(Dims d, std::size_t last) {
    d.push_back(last);
    return d;
}

Matrix solve_block(const Matrix& a, const Matrix& b, EstimationState& st, const std::string& block) {
    try {
        return solve_psd(a, b, 1e-12);
    } catch (const SingularError&) {
        if (!st.allow_rank_deficient) throw SingularError("singular normal equations in block " + block);
        if (!st.rank_deficient) st.warnings.push_back("rank-deficient normal equations in block " + block);
        st.rank_deficient = true;
        return pseudo_inverse(a, 1e-10) * b;
    }
}

Matrix mt_sigma_inv(const Matrix& m, const Matrix& sigma_inv) { return m.transpose() * sigma_inv; }

/// Maps (slice s of covariate mode k, remaining multi-index r) to the covariate linear index.
struct CovariateIndex {
    std::size_t left = 1, hk = 1;
    CovariateIndex(const Dims& h, std::size_t k) : hk(h[k - 1]) {
        for (std::size_t q = 0; q + 1 < k; ++q) left *= h[q];
    }
    std::size_t operator()(std::size_t s, std::size_t r) const { return r % left + left * (s + hk * (r / left)); }
};

/// GLS solve for a covariate-side block. Slice s of covariate mode k enters the
/// mean of covariate cell (s, r) as F E_r theta_s; `omega` = F' Sigma^{-1} F and
/// `fc` = F' Sigma^{-1} C. Returns Theta with row s = theta_s'.
Matrix solve_covariate_block(EstimationState& st, std::size_t k, const Matrix& omega, const Matrix& fc,
                             const std::vector<Matrix>& e, const std::string& block) {
    const CovariateIndex idx(st.shape.covariate, k);
    const std::size_t hk = idx.hk, hrest = st.h() / hk;
    const auto q = static_cast<std::size_t>(e.front().cols());
    std::vector<Matrix> oe(hrest);
    for (std::size_t r = 0; r < hrest; ++r) oe[r] = omega * e[r];
    const std::size_t dim = hk * q;
    Matrix nmat = Matrix::Zero(dim, dim);
    Vector b = Vector::Zero(dim);
    for (std::size_t r = 0; r < hrest; ++r) {
        for (std::size_t r2 = 0; r2 < hrest; ++r2) {
            bool any = false;
            for (std::size_t s = 0; s < hk && !any; ++s)
                for (std::size_t s2 = 0; s2 < hk && !any; ++s2) any = st.xx(idx(s, r), idx(s2, r2)) != 0.0;
            if (!any) continue;
            const Matrix a = e[r].transpose() * oe[r2];
            for (std::size_t s = 0; s < hk; ++s)
                for (std::size_t s2 = 0; s2 < hk; ++s2) {
                    const double w = st.xx(idx(s, r), idx(s2, r2));
                    if (w == 0.0) continue;
                    for (std::size_t u2 = 0; u2 < q; ++u2)
                        for (std::size_t u = 0; u < q; ++u) nmat(s + hk * u, s2 + hk * u2) += w * a(u, u2);
                }
        }
        for (std::size_t s = 0; s < hk; ++s) {
            const Vector v = e[r].transpose() * fc.col(static_cast<Eigen::Index>(idx(s, r)));
            for (std::size_t u = 0; u < q; ++u) b(s + hk * u) += v(u);
        }
    }
    const Vector theta = solve_block(nmat, b, st, block);
    return Eigen::Map<const Matrix>(theta.data(), hk, q);
}

Matrix solve_response_block(EstimationState& st, std::size_t k, const DenseTensor& g_all, const std::string& block) {
    const NormalEquations eq = response_block_equations(k, st, g_all);
    return solve_block(eq.gram, eq.cross.transpose(), st, block).transpose();
}

double push_scale_into(DenseTensor& core, DenseTensor& last) {
    const double c = core.norm();
    if (c > 0.0 && &core != &last) {
        core *= 1.0 / c;
        last *= c;
    }
    return c;
}

}  // namespace

void EstimationState::set_scale(std::size_t k, Matrix s) {
    scale_inverses[k - 1] = spd_inverse(s);
    scales[k - 1] = std::move(s);
}

ModelShape shape_from_data(const DenseTensor& x, const DenseTensor& y) {
    if (x.order() < 2 || y.order() < 2)
        throw DimensionError("stacked data need at least one data mode plus the observation mode");
    if (x.dims().back() != y.dims().back()) throw DimensionError("X and Y hold different sample counts");
    ModelShape s;
    s.covariate.assign(x.dims().begin(), x.dims().end() - 1);
    s.response.assign(y.dims().begin(), y.dims().end() - 1);
    return s;
}

CenteredData center_and_profile_intercept(const DenseTensor& x, const DenseTensor& y) {
    const ModelShape s = shape_from_data(x, y);
    const std::size_t n = x.dims().back();
    if (n == 0) throw DimensionError("no observations");
    CenteredData out{x, y, DenseTensor(s.covariate), DenseTensor(s.response)};
    auto center = [n](DenseTensor& t, DenseTensor& mean) {
        const std::size_t each = mean.size();
        Eigen::Map<Matrix> m(t.data(), static_cast<Eigen::Index>(each), static_cast<Eigen::Index>(n));
        mean.vec_view() = m.rowwise().mean();
        m.colwise() -= mean.vec_view();
    };
    center(out.x, out.x_mean);
    center(out.y, out.y_mean);
    return out;
}

CenteredData center_and_profile_intercept(std::span<const DenseTensor> xs, std::span<const DenseTensor> ys) {
    if (xs.size() != ys.size()) throw DimensionError("X and Y lists differ in length");
    if (xs.empty()) throw DimensionError("no observations");
    return center_and_profile_intercept(stack(xs), stack(ys));
}

EstimationState make_state(const DenseTensor& x, const DenseTensor& y, LowRankCoeff init, std::vector<ScaleModel> models,
                           bool allow_rank_deficient) {
    EstimationState st;
    st.shape = shape_from_data(x, y);
    const ModelShape cs = shape_of(init);
    if (!(cs == st.shape)) throw DimensionError("coefficient shape does not match the data");
    st.n = x.dims().back();
    st.x = x;
    st.y = y;
    const auto xm = mat(x, st.h());
    const auto ym = mat(y, st.m());
    st.xx = xm * xm.transpose();
    st.yx = tensor_from(ym * xm.transpose(), with_trailing(st.shape.response, st.h()));
    st.coeff = std::move(init);
    const std::size_t p = st.shape.p();
    if (models.empty()) models.assign(p, ScaleModel{});
    if (models.size() != p) throw ConfigError("need one scale model per response mode");
    st.models = std::move(models);
    for (std::size_t k = 0; k < p; ++k) {
        const std::size_t mk = st.shape.response[k];
        Matrix s = st.models[k].kind == ScaleKind::unstructured || st.models[k].kind == ScaleKind::identity
                       ? Matrix(Matrix::Identity(mk, mk))
                       : structured_matrix(st.models[k].kind, mk, st.models[k].rho);
        st.scales.push_back(s);
        st.scale_inverses.push_back(spd_inverse(s));
    }
    st.sigma2 = 1.0;
    st.allow_rank_deficient = allow_rank_deficient;
    return st;
}

DenseTensor predict_stacked(const LowRankCoeff& coeff, const DenseTensor& xs) {
    const ModelShape s = shape_of(coeff);
    if (xs.order() != s.l() + 1 || !std::equal(s.covariate.begin(), s.covariate.end(), xs.dims().begin()))
        throw DimensionError("covariates do not match the coefficient shape");
    const std::size_t n = xs.dims().back(), l = s.l(), p = s.p();
    const Dims out_dims = with_trailing(s.response, n);
    return std::visit(
        [&](const auto& c) -> DenseTensor {
            using T = std::decay_t<decltype(c)>;
            if constexpr (std::is_same_v<T, TuckerCoeff>) {
                std::vector<Matrix> lt;
                for (const auto& a : c.covariate_factors) lt.push_back(a.transpose());
                const DenseTensor w = apply_per_mode(xs, lt);
                std::size_t cdim = 1;
                for (std::size_t q = 0; q < l; ++q) cdim *= c.core.dims()[q];
                const Matrix vd = mat(c.core, cdim).transpose() * mat(w, cdim);
                Dims dd(c.core.dims().begin() + static_cast<std::ptrdiff_t>(l), c.core.dims().end());
                return apply_per_mode(tensor_from(vd, with_trailing(dd, n)), c.response_factors);
            } else if constexpr (std::is_same_v<T, CpCoeff>) {
                const Matrix kl = khatri_rao_reversed(c.covariate_factors);
                const Matrix km = khatri_rao_reversed(c.response_factors);
                const Matrix w = c.weights.asDiagonal() * (kl.transpose() * mat(xs, s.h()));
                return tensor_from(km * w, out_dims);
            } else if constexpr (std::is_same_v<T, OpCoeff>) {
                return apply_per_mode(xs, c.factors);
            } else {
                const DenseTensor lch = tr_chain(c.covariate_cores);
                const DenseTensor mch = tr_chain(c.response_cores);
                const std::size_t r0 = lch.dims().front(), rl = lch.dims().back();
                std::vector<std::size_t> perm;
                for (std::size_t q = 2; q <= l + 1; ++q) perm.push_back(q);
                perm.push_back(1);
                perm.push_back(l + 2);
                const Matrix lm = mat(permute(lch, perm), s.h());
                const Matrix t = mat(xs, s.h()).transpose() * lm;  // n x (r0 rl), index a + r0 b
                std::vector<std::size_t> mperm;
                for (std::size_t q = 2; q <= p + 1; ++q) mperm.push_back(q);
                mperm.push_back(p + 2);
                mperm.push_back(1);
                const Matrix mm = mat(permute(mch, mperm), s.m());  // m x (r0 rl), index a + r0 b
                (void)rl;
                (void)r0;
                return tensor_from(mm * t.transpose(), out_dims);
            }
        },
        coeff);
}

DenseTensor residuals_stacked(const EstimationState& st) { return st.y - predict_stacked(st.coeff, st.x); }

double exact_loglik(const EstimationState& st) {
    const DenseTensor z = residuals_stacked(st);
    const double quad = inner(z, apply_per_mode(z, st.scale_inverses));
    const double n = static_cast<double>(st.n), m = static_cast<double>(st.m());
    double ld = 0.0;
    for (std::size_t k = 0; k < st.scales.size(); ++k)
        ld += m / static_cast<double>(st.shape.response[k]) * logdet_spd(st.scales[k]);
    return -0.5 * n * m * std::log(2.0 * M_PI * st.sigma2) - 0.5 * n * ld - 0.5 * quad / st.sigma2;
}

double state_norm(const EstimationState& st) {
    double s = std::sqrt(st.sigma2);
    for (const auto& m : st.scales) s *= m.norm();
    return coeff_norm(st.coeff) + s;
}

NormalEquations response_block_equations(std::size_t k, const EstimationState& st, const DenseTensor& g_all) {
    const std::size_t p = st.shape.p();
    const std::size_t mk = st.shape.response[k - 1], mrest = st.m() / mk, h = st.h();
    const std::size_t q = g_all.dims().front();
    if (g_all.size() != q * mrest * h) throw DimensionError("design tensor does not match the block");
    std::vector<Matrix> inv(p + 1);
    std::vector<ModeFactor> fs;
    std::size_t pos = 2;
    for (std::size_t j = 1; j <= p; ++j) {
        if (j == k) continue;
        fs.push_back({pos++, &st.scale_inverses[j - 1]});
    }
    DenseTensor gt = g_all;
    for (const auto& f : fs) gt = mode_product(gt, *f.matrix, f.mode);
    const Eigen::Map<const Matrix> gq(g_all.data(), q, mrest * h);
    const Eigen::Map<const Matrix> gtq(gt.data(), q, mrest * h);
    const Matrix u = Eigen::Map<const Matrix>(gt.data(), q * mrest, h) * st.xx;
    const Eigen::Map<const Matrix> uq(u.data(), q, mrest * h);
    NormalEquations eq;
    eq.gram = gq * uq.transpose();
    eq.gram = 0.5 * (eq.gram + eq.gram.transpose());
    eq.cross = matricize_mode(st.yx, k) * gtq.transpose();
    return eq;
}

void update_scale(std::size_t k, EstimationState& st, const DenseTensor* residuals) {
    DenseTensor own;
    if (!residuals) {
        own = residuals_stacked(st);
        residuals = &own;
    }
    const Matrix s = mode_sse_stacked(*residuals, st.scale_inverses, k);
    const std::size_t mk = st.shape.response[k - 1];
    const double df = static_cast<double>(st.n) * static_cast<double>(st.m() / mk);
    ScaleModel& model = st.models[k - 1];
    Matrix sigma;
    switch (model.kind) {
        case ScaleKind::unstructured: sigma = adjust(df, st.sigma2, s).sigma; break;
        case ScaleKind::ar1:
        case ScaleKind::equicorrelation: {
            const StructuredFit f = fit_structured_scale(model.kind, s, df, st.sigma2, model.rho);
            sigma = f.sigma;
            model.rho = f.rho;
            if (f.at_boundary) st.warnings.push_back("scale parameter of mode " + std::to_string(k) + " at boundary");
            break;
        }
        case ScaleKind::identity: sigma = Matrix::Identity(mk, mk); break;
    }
    st.set_scale(k, sigma);
    const double s2 = sigma2_update(st.scales[k - 1], s, st.n, st.m());
    if (!(s2 > 0.0) || !std::isfinite(s2)) throw SingularError("residual variance vanished (exact fit)");
    st.sigma2 = s2;
}

// ---------------------------------------------------------------- Tucker

namespace {

struct TuckerDesign {
    Matrix gram;  // W W'
    DenseTensor yw;  // (m..., c): sum_i Y_i w_i'
    std::size_t cdim = 1;
};

TuckerDesign tucker_design(const EstimationState& st) {
    const auto& c = std::get<TuckerCoeff>(st.coeff);
    const Matrix kl = kronecker_reversed(c.covariate_factors);
    TuckerDesign d;
    d.cdim = static_cast<std::size_t>(kl.cols());
    d.gram = kl.transpose() * st.xx * kl;
    d.gram = 0.5 * (d.gram + d.gram.transpose());
    d.yw = tensor_from(mat(st.yx, st.m()) * kl, with_trailing(st.shape.response, d.cdim));
    return d;
}

}  // namespace

Matrix tucker_update_M(std::size_t k, EstimationState& st) {
    auto& c = std::get<TuckerCoeff>(st.coeff);
    const std::size_t p = st.shape.p(), l = st.shape.l();
    const TuckerDesign d = tucker_design(st);
    const Matrix ginv = solve_block(d.gram, Matrix::Identity(d.cdim, d.cdim), st, "V (core design)");
    std::vector<Matrix> proj(p);
    for (std::size_t q = 0; q < p; ++q)
        proj[q] = q + 1 == k ? Matrix() : mt_sigma_inv(c.response_factors[q], st.scale_inverses[q]);
    const DenseTensor f = apply_per_mode(d.yw, proj, k);
    const DenseTensor hten = mode_product(f, ginv, p + 1);
    Matrix qq = matricize_mode(f, k) * matricize_mode(hten, k).transpose();
    qq = 0.5 * (qq + qq.transpose());
    const Matrix& sigma = st.scales[k - 1];
    const Matrix ih = sym_inv_sqrt(sigma);
    Eigen::SelfAdjointEigenSolver<Matrix> es(ih * qq * ih);
    const std::size_t mk = st.shape.response[k - 1], dk = c.core.dims()[l + k - 1];
    const Vector& ev = es.eigenvalues();
    if (ev(static_cast<Eigen::Index>(mk - dk)) <= 1e-12 * std::max(1e-300, ev(static_cast<Eigen::Index>(mk - 1))))
        st.warnings.push_back("Q_" + std::to_string(k) + " has rank below d_" + std::to_string(k));
    Matrix u(mk, dk);
    for (std::size_t t = 0; t < dk; ++t) u.col(static_cast<Eigen::Index>(t)) = es.eigenvectors().col(static_cast<Eigen::Index>(mk - 1 - t));
    c.response_factors[k - 1] = sym_sqrt(sigma) * u;
    return c.response_factors[k - 1];
}

DenseTensor tucker_update_V(EstimationState& st) {
    auto& c = std::get<TuckerCoeff>(st.coeff);
    const std::size_t p = st.shape.p(), l = st.shape.l();
    const TuckerDesign d = tucker_design(st);
    std::vector<Matrix> a(p);
    for (std::size_t q = 0; q < p; ++q) {
        const Matrix mts = mt_sigma_inv(c.response_factors[q], st.scale_inverses[q]);
        const Matrix pm = mts * c.response_factors[q];
        a[q] = solve_psd(pm, mts);
    }
    const DenseTensor t = apply_per_mode(d.yw, a);
    const std::size_t ddim = t.size() / d.cdim;
    const Matrix v = solve_block(d.gram, mat(t, ddim).transpose(), st, "V");
    c.core = tensor_from(v, c.core.dims());
    (void)l;
    return c.core;
}

Matrix tucker_update_L(std::size_t k, EstimationState& st) {
    auto& c = std::get<TuckerCoeff>(st.coeff);
    const std::size_t l = st.shape.l(), p = st.shape.p();
    std::vector<ModeFactor> fs;
    for (std::size_t q = 1; q <= l; ++q)
        if (q != k) fs.push_back({q, &c.covariate_factors[q - 1]});
    const DenseTensor vt = multi_mode_product(c.core, fs);
    const std::size_t ck = c.core.dims()[k - 1];
    std::size_t ddim = 1;
    for (std::size_t q = 0; q < p; ++q) ddim *= c.core.dims()[l + q];
    const CovariateIndex cov(st.shape.covariate, k);
    const std::size_t hrest = st.h() / cov.hk, covsize = st.h() / cov.hk * ck;
    std::vector<Matrix> e(hrest, Matrix(ddim, ck));
    for (std::size_t r = 0; r < hrest; ++r) {
        const std::size_t a = r % cov.left, bb = r / cov.left;
        for (std::size_t b = 0; b < ddim; ++b)
            for (std::size_t t = 0; t < ck; ++t) e[r](b, t) = vt.data()[a + cov.left * (t + ck * bb) + covsize * b];
    }
    std::vector<Matrix> mts(p), pm(p);
    for (std::size_t q = 0; q < p; ++q) {
        mts[q] = mt_sigma_inv(c.response_factors[q], st.scale_inverses[q]);
        pm[q] = mts[q] * c.response_factors[q];
    }
    const Matrix omega = kronecker_reversed(pm);
    const DenseTensor fct = apply_per_mode(st.yx, mts);
    const Matrix fc = mat(fct, ddim);
    Matrix lk = solve_covariate_block(st, k, omega, fc, e, "L_" + std::to_string(k));
    if (lk.rows() >= lk.cols()) {
        Eigen::HouseholderQR<Matrix> qr(lk);
        const Matrix r = qr.matrixQR().topRows(lk.cols()).triangularView<Eigen::Upper>();
        if (r.diagonal().cwiseAbs().minCoeff() > 1e-12 * std::max(1.0, r.diagonal().cwiseAbs().maxCoeff())) {
            const Matrix q = qr.householderQ() * Matrix::Identity(lk.rows(), lk.cols());
            c.core = mode_product(c.core, r, k);
            lk = q;
        }
    }
    c.covariate_factors[k - 1] = lk;
    return lk;
}

void tucker_update_scale(std::size_t k, EstimationState& st) {
    update_scale(k, st);
    auto& c = std::get<TuckerCoeff>(st.coeff);
    Matrix& mk = c.response_factors[k - 1];
    const Matrix pm = mk.transpose() * st.scale_inverses[k - 1] * mk;
    Eigen::LLT<Matrix> llt(0.5 * (pm + pm.transpose()));
    if (llt.info() != Eigen::Success) throw SingularError("M_k' Sigma_k^{-1} M_k is singular");
    const Matrix r = llt.matrixU();
    mk = r.triangularView<Eigen::Upper>().solve<Eigen::OnTheRight>(mk);
    c.core = mode_product(c.core, r, st.shape.l() + k);
}

// ---------------------------------------------------------------- CP

Matrix cp_gram_hadamard(std::size_t k, const EstimationState& st) {
    const auto& c = std::get<CpCoeff>(st.coeff);
    const Matrix a = khatri_rao_reversed(c.covariate_factors) * c.weights.asDiagonal();
    Matrix g = a.transpose() * st.xx * a;
    for (std::size_t q = 0; q < c.response_factors.size(); ++q) {
        if (q + 1 == k) continue;
        const Matrix& mq = c.response_factors[q];
        g = g.cwiseProduct(mq.transpose() * st.scale_inverses[q] * mq);
    }
    return 0.5 * (g + g.transpose());
}

std::pair<Matrix, Matrix> cp_update_M(std::size_t k, EstimationState& st) {
    auto& c = std::get<CpCoeff>(st.coeff);
    const std::size_t p = st.shape.p();
    const auto r = c.weights.size();
    const Matrix a = khatri_rao_reversed(c.covariate_factors) * c.weights.asDiagonal();
    const Matrix gram = cp_gram_hadamard(k, st);
    const Matrix ca = mat(st.yx, st.m()) * a;
    std::vector<Matrix> sm;
    for (std::size_t q = 0; q < p; ++q)
        if (q + 1 != k) sm.push_back(st.scale_inverses[q] * c.response_factors[q]);
    const Matrix ks = sm.empty() ? Matrix(Matrix::Ones(1, r)) : khatri_rao_reversed(sm);
    const std::size_t mk = st.shape.response[k - 1];
    Matrix cross(mk, r);
    for (Eigen::Index u = 0; u < r; ++u) {
        const DenseTensor slice(st.shape.response, std::vector<double>(ca.col(u).data(), ca.col(u).data() + ca.rows()));
        cross.col(u) = matricize_mode(slice, k) * ks.col(u);
    }
    Matrix mnew = solve_block(gram, cross.transpose(), st, "M_" + std::to_string(k)).transpose();
    for (Eigen::Index u = 0; u < r; ++u) {
        const double nrm = mnew.col(u).norm();
        if (nrm > 0.0) {
            mnew.col(u) /= nrm;
            c.weights(u) *= nrm;
        }
    }
    c.response_factors[k - 1] = mnew;
    update_scale(k, st);
    return {mnew, st.scales[k - 1]};
}

Matrix cp_update_L(std::size_t k, EstimationState& st) {
    auto& c = std::get<CpCoeff>(st.coeff);
    const std::size_t p = st.shape.p(), l = st.shape.l();
    const auto r = c.weights.size();
    Matrix omega = Matrix::Ones(r, r);
    std::vector<Matrix> sm;
    for (std::size_t q = 0; q < p; ++q) {
        sm.push_back(st.scale_inverses[q] * c.response_factors[q]);
        omega = omega.cwiseProduct(c.response_factors[q].transpose() * sm.back());
    }
    const Matrix fc = khatri_rao_reversed(sm).transpose() * mat(st.yx, st.m());
    std::vector<Matrix> rest;
    for (std::size_t q = 0; q < l; ++q)
        if (q + 1 != k) rest.push_back(c.covariate_factors[q]);
    const Matrix kl = rest.empty() ? Matrix(Matrix::Ones(1, r)) : khatri_rao_reversed(rest);
    std::vector<Matrix> e;
    for (Eigen::Index j = 0; j < kl.rows(); ++j)
        e.push_back(Matrix(kl.row(j).transpose().cwiseProduct(c.weights).asDiagonal()));
    Matrix lk = solve_covariate_block(st, k, omega, fc, e, "L_" + std::to_string(k));
    for (Eigen::Index u = 0; u < r; ++u) {
        const double nrm = lk.col(u).norm();
        if (nrm > 0.0) {
            lk.col(u) /= nrm;
            c.weights(u) *= nrm;
        }
    }
    c.covariate_factors[k - 1] = lk;
    return lk;
}

// ---------------------------------------------------------------- OP

std::pair<Matrix, Matrix> op_update(std::size_t k, EstimationState& st) {
    auto& c = std::get<OpCoeff>(st.coeff);
    const std::size_t p = st.shape.p();
    const std::size_t hk = st.shape.covariate[k - 1], mrest = st.m() / st.shape.response[k - 1], h = st.h();
    Dims gd{hk};
    for (std::size_t q = 0; q < p; ++q)
        if (q + 1 != k) gd.push_back(st.shape.response[q]);
    gd.push_back(h);
    DenseTensor g(gd);
    std::vector<std::size_t> j(p, 0);
    for (std::size_t lin = 0; lin < h; ++lin) {
        std::size_t rem = lin;
        for (std::size_t q = 0; q < p; ++q) {
            j[q] = rem % st.shape.covariate[q];
            rem /= st.shape.covariate[q];
        }
        Vector v = Vector::Ones(1);
        for (std::size_t q = 0; q < p; ++q) {
            if (q + 1 == k) continue;
            const Vector col = c.factors[q].col(static_cast<Eigen::Index>(j[q]));
            Vector next(v.size() * col.size());
            for (Eigen::Index t = 0; t < col.size(); ++t) next.segment(t * v.size(), v.size()) = col(t) * v;
            v = std::move(next);
        }
        for (std::size_t i = 0; i < mrest; ++i) g.data()[j[k - 1] + hk * (i + mrest * lin)] = v(static_cast<Eigen::Index>(i));
    }
    Matrix mnew = solve_response_block(st, k, g, "M_" + std::to_string(k));
    c.factors[k - 1] = mnew;
    if (k < p) {
        const double nrm = mnew.norm();
        if (nrm > 0.0) {
            c.factors[k - 1] /= nrm;
            c.factors[p - 1] *= nrm;
        }
    }
    update_scale(k, st);
    return {c.factors[k - 1], st.scales[k - 1]};
}

// ---------------------------------------------------------------- TR

namespace {

/// Chain of cores[from], cores[from+1], ... (cyclic), `count` cores in total.
DenseTensor cyclic_chain(const std::vector<DenseTensor>& cores, std::size_t from, std::size_t count) {
    std::vector<DenseTensor> seq;
    for (std::size_t t = 0; t < count; ++t) seq.push_back(cores[(from + t) % cores.size()]);
    return tr_chain(seq);
}

DenseTensor identity_chain(std::size_t r) {
    DenseTensor t({r, r});
    for (std::size_t i = 0; i < r; ++i) t.data()[i + r * i] = 1.0;
    return t;
}

}  // namespace

DenseTensor tr_update(Chain chain, std::size_t k, EstimationState& st) {
    auto& c = std::get<TrCoeff>(st.coeff);
    const std::size_t l = st.shape.l(), p = st.shape.p(), L = l + p;
    std::vector<DenseTensor> all = tr_all_cores(c);
    if (chain == Chain::response) {
        const std::size_t t = l + k - 1;  // zero-based core position
        const std::size_t a_r = all[t].dims()[0], b_r = all[t].dims()[2], q = a_r * b_r;
        // (b, m_{k+1..p}, h_1..h_l, m_{1..k-1}, a)
        const DenseTensor ch = cyclic_chain(all, t + 1, L - 1);
        const std::size_t after = p - k, before = k - 1;
        std::vector<std::size_t> perm{ch.order(), 1};
        for (std::size_t i = 0; i < before; ++i) perm.push_back(2 + after + l + i);
        for (std::size_t i = 0; i < after; ++i) perm.push_back(2 + i);
        for (std::size_t i = 0; i < l; ++i) perm.push_back(2 + after + i);
        DenseTensor g = permute(ch, perm);
        Dims gd{q};
        for (std::size_t j = 0; j < p; ++j)
            if (j + 1 != k) gd.push_back(st.shape.response[j]);
        gd.push_back(st.h());
        g = g.reshaped(gd);
        const Matrix mnew = solve_response_block(st, k, g, "response core " + std::to_string(k));
        DenseTensor& core = c.response_cores[k - 1];
        const std::size_t mk = st.shape.response[k - 1];
        for (std::size_t b = 0; b < b_r; ++b)
            for (std::size_t i = 0; i < mk; ++i)
                for (std::size_t a = 0; a < a_r; ++a)
                    core.data()[a + a_r * (i + mk * b)] = mnew(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a + a_r * b));
        if (k < p) push_scale_into(core, c.response_cores.back());
        update_scale(k, st);
        return core;
    }

    const std::size_t t = k - 1;
    const std::size_t a_r = all[t].dims()[0], b_r = all[t].dims()[2], q = a_r * b_r;
    const DenseTensor mch = tr_chain(c.response_cores);  // (g0, m..., gp)
    const std::size_t g0 = mch.dims().front(), gp = mch.dims().back();
    std::vector<std::size_t> mperm;
    for (std::size_t i = 2; i <= p + 1; ++i) mperm.push_back(i);
    mperm.push_back(1);
    mperm.push_back(p + 2);
    const DenseTensor f = permute(mch, mperm);  // (m..., g0, gp)
    const DenseTensor ft = apply_per_mode(f, st.scale_inverses);
    const std::size_t fdim = g0 * gp;
    const Matrix omega = mat(f, st.m()).transpose() * mat(ft, st.m());
    const Matrix fc = mat(ft, st.m()).transpose() * mat(st.yx, st.m());
    // Ll: (r_0, h_1..h_{k-1}, r_{k-1}); Lr: (r_k, h_{k+1}..h_l, r_l)
    const DenseTensor ll = k == 1 ? identity_chain(a_r) : cyclic_chain(all, 0, k - 1);
    const DenseTensor lr = k == l ? identity_chain(b_r) : cyclic_chain(all, k, l - k);
    const CovariateIndex cov(st.shape.covariate, k);
    const std::size_t right = st.h() / cov.hk / cov.left;
    const std::size_t r0 = ll.dims().front(), rl = lr.dims().back();
    if (r0 != gp || rl != g0) throw DimensionError("TR ranks violate the cyclic closure");
    std::vector<Matrix> e(cov.left * right, Matrix(fdim, q));
    for (std::size_t bi = 0; bi < right; ++bi)
        for (std::size_t ai = 0; ai < cov.left; ++ai) {
            Matrix& er = e[ai + cov.left * bi];
            for (std::size_t b = 0; b < b_r; ++b)
                for (std::size_t a = 0; a < a_r; ++a)
                    for (std::size_t dd = 0; dd < gp; ++dd)
                        for (std::size_t cc = 0; cc < g0; ++cc) {
                            const double lrv = lr.data()[b + b_r * (bi + right * cc)];
                            const double llv = ll.data()[dd + r0 * (ai + cov.left * a)];
                            er(static_cast<Eigen::Index>(cc + g0 * dd), static_cast<Eigen::Index>(a + a_r * b)) = lrv * llv;
                        }
        }
    const Matrix theta = solve_covariate_block(st, k, omega, fc, e, "covariate core " + std::to_string(k));
    DenseTensor& core = c.covariate_cores[k - 1];
    const std::size_t hk = cov.hk;
    for (std::size_t b = 0; b < b_r; ++b)
        for (std::size_t s = 0; s < hk; ++s)
            for (std::size_t a = 0; a < a_r; ++a)
                core.data()[a + a_r * (s + hk * b)] = theta(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a + a_r * b));
    push_scale_into(core, c.response_cores.back());
    return core;
}

// ---------------------------------------------------------------- driver

bool convergence_check(const std::optional<ConvergenceState>& prev, const ConvergenceState& curr, const ToTRSpec& spec) {
    if (!prev) return false;
    const double tol_ll = spec.tol_loglik.value_or(1e-6 * std::abs(curr.loglik) + 1e-8);
    return std::abs(curr.loglik - prev->loglik) < tol_ll || std::abs(curr.norm - prev->norm) < spec.tol_norm;
}

namespace {

LowRankCoeff initial_coeff(const ToTRSpec& spec, const ModelShape& shape) {
    if (spec.init) return *spec.init;
    LowRankCoeff c = random_coeff(spec.format, shape, spec.ranks, spec.seed);
    if (auto* t = std::get_if<TuckerCoeff>(&c)) {
        // Sigma = I at the start, so orthonormal columns satisfy the constraint.
        for (auto& m : t->response_factors) {
            Eigen::HouseholderQR<Matrix> qr(m);
            m = qr.householderQ() * Matrix::Identity(m.rows(), m.cols());
        }
    }
    return c;
}

}  // namespace

ToTRFit fit(const ToTRSpec& spec, const DenseTensor& x_stacked, const DenseTensor& y_stacked) {
    const ModelShape shape = shape_from_data(x_stacked, y_stacked);
    if (x_stacked.dims().back() == 0) throw DimensionError("no observations");
    validate_ranks(spec.format, shape, spec.init ? ranks_of(*spec.init) : spec.ranks);
    if (spec.max_iter < 1) throw ConfigError("max_iter must be positive");
    if (spec.tol_norm <= 0.0 || (spec.tol_loglik && *spec.tol_loglik <= 0.0)) throw ConfigError("tolerances must be positive");

    CenteredData data;
    if (spec.intercept) {
        data = center_and_profile_intercept(x_stacked, y_stacked);
    } else {
        data = CenteredData{x_stacked, y_stacked, DenseTensor(shape.covariate), DenseTensor(shape.response)};
    }
    EstimationState st =
        make_state(data.x, data.y, initial_coeff(spec, shape), spec.scale_models, spec.allow_rank_deficient);

    ToTRFit out;
    const std::size_t l = shape.l(), p = shape.p();
    int iter = 0;
    auto timed = [&](const std::string& name, const std::function<void()>& fn) {
        const auto t0 = Clock::now();
        fn();
        auto& t = out.timings[name];
        t.seconds += std::chrono::duration<double>(Clock::now() - t0).count();
        ++t.calls;
        if (spec.record_blocks) out.block_trace.push_back({iter, name, exact_loglik(st)});
    };

    std::optional<ConvergenceState> prev;
    for (iter = 1; iter <= spec.max_iter; ++iter) {
        switch (spec.format) {
            case Format::tucker: {
                const auto t0 = Clock::now();
                for (std::size_t k = 1; k <= p; ++k) tucker_update_M(k, st);
                tucker_update_V(st);
                out.timings["M+V"].seconds += std::chrono::duration<double>(Clock::now() - t0).count();
                ++out.timings["M+V"].calls;
                if (spec.record_blocks) out.block_trace.push_back({iter, "M+V", exact_loglik(st)});
                for (std::size_t k = 1; k <= l; ++k) timed("L" + std::to_string(k), [&] { tucker_update_L(k, st); });
                for (std::size_t k = 1; k <= p; ++k) timed("Sigma" + std::to_string(k), [&] { tucker_update_scale(k, st); });
                break;
            }
            case Format::cp:
                for (std::size_t k = 1; k <= l; ++k) timed("L" + std::to_string(k), [&] { cp_update_L(k, st); });
                for (std::size_t k = 1; k <= p; ++k) timed("M" + std::to_string(k), [&] { cp_update_M(k, st); });
                break;
            case Format::op:
                for (std::size_t k = 1; k <= p; ++k) timed("M" + std::to_string(k), [&] { op_update(k, st); });
                break;
            case Format::tr:
                for (std::size_t k = 1; k <= l; ++k) timed("L" + std::to_string(k), [&] { tr_update(Chain::covariate, k, st); });
                for (std::size_t k = 1; k <= p; ++k) timed("M" + std::to_string(k), [&] { tr_update(Chain::response, k, st); });
                break;
        }
        const ConvergenceState cur{profile_loglik(st.sigma2, st.scales, st.n, st.m()), state_norm(st)};
        out.loglik_trace.push_back(cur.loglik);
        if (convergence_check(prev, cur, spec)) {
            out.converged = true;
            break;
        }
        prev = cur;
    }
    out.iterations = std::min(iter, spec.max_iter);
    out.shape = shape;
    out.coeff = st.coeff;
    out.scales = st.scales;
    out.scale_models = st.models;
    out.sigma2 = st.sigma2;
    out.n = st.n;
    out.has_intercept = spec.intercept;
    out.rank_deficient = st.rank_deficient;
    out.warnings = st.warnings;
    out.intercept = data.y_mean;
    if (spec.intercept) {
        const DenseTensor xm = data.x_mean.reshaped(with_trailing(shape.covariate, 1));
        out.intercept -= predict_stacked(out.coeff, xm).reshaped(shape.response);
    }
    return out;
}

ToTRFit fit(const ToTRSpec& spec, std::span<const DenseTensor> xs, std::span<const DenseTensor> ys) {
    if (xs.size() != ys.size()) throw DimensionError("X and Y lists differ in length");
    if (xs.empty()) throw DimensionError("no observations");
    return fit(spec, stack(xs), stack(ys));
}

DenseTensor predict(const ToTRFit& f, const DenseTensor& x_stacked) {
    DenseTensor y = predict_stacked(f.coeff, x_stacked);
    const std::size_t m = f.intercept.size(), n = x_stacked.dims().back();
    Eigen::Map<Matrix>(y.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n)).colwise() +=
        f.intercept.vec_view();
    return y;
}

std::vector<DenseTensor> predict(const ToTRFit& f, std::span<const DenseTensor> xs) {
    if (xs.empty()) return {};
    return unstack(predict(f, stack(xs)));
}

DenseTensor residuals(const ToTRFit& f, const DenseTensor& x_stacked, const DenseTensor& y_stacked) {
    shape_from_data(x_stacked, y_stacked);
    return y_stacked - predict(f, x_stacked);
}

std::vector<DenseTensor> residuals(const ToTRFit& f, std::span<const DenseTensor> xs, std::span<const DenseTensor> ys) {
    if (xs.size() != ys.size()) throw DimensionError("X and Y lists differ in length");
    if (xs.empty()) return {};
    return unstack(residuals(f, stack(xs), stack(ys)));
}

}  // namespace totr

#include "totr/inference.hpp"

#include <cmath>
#include <numeric>

#include "totr/errors.hpp"
#include "totr/linalg.hpp"
#include "totr/matrix_ops.hpp"
#include "totr/tvn.hpp"

namespace totr {

namespace {

Eigen::Index ix(std::size_t i) { return static_cast<Eigen::Index>(i); }

/// src[r] = linear index in x of entry r of vec(X_(k)).
std::vector<std::size_t> mode_row_map(const Dims& dims, std::size_t k) {
    DenseTensor idx(dims);
    std::iota(idx.values().begin(), idx.values().end(), 0.0);
    const Matrix mk = matricize_mode(idx, k);
    std::vector<std::size_t> out(static_cast<std::size_t>(mk.size()));
    for (Eigen::Index r = 0; r < mk.size(); ++r) out[static_cast<std::size_t>(r)] = static_cast<std::size_t>(mk.data()[r]);
    return out;
}

Matrix scatter_rows(const Matrix& d, const std::vector<std::size_t>& target) {
    Matrix j(d.rows(), d.cols());
    for (std::size_t r = 0; r < target.size(); ++r) j.row(ix(target[r])) = d.row(ix(r));
    return j;
}


Vector kron_diagonals(const std::vector<KroneckerBlock>& blocks, double scale) {
    std::vector<Matrix> diags;
    for (const auto& b : blocks) diags.push_back(b.cov.diagonal());
    return scale * Vector(kronecker_reversed(diags));
}

Matrix xx_of(const DenseTensor& x, std::size_t h) {
    const auto xm = x.as_matrix(h);
    Matrix xx = xm * xm.transpose();
    return 0.5 * (xx + xx.transpose());
}

Matrix cp_weighted_factors_last(const CpCoeff& c, std::vector<Matrix>& all) {
    all = cp_all_factors(c);
    all.back() = all.back() * c.weights.asDiagonal();
    return all.back();
}

}  // namespace

Matrix AsymptoticLaw::expand() const {
    if (structure == Structure::explicit_matrix) {
        if (!covariance) throw DimensionError("explicit covariance was not formed (size budget)");
        return *covariance;
    }
    std::vector<Matrix> cs;
    for (const auto& b : blocks) cs.push_back(b.cov);
    return scale * kronecker_reversed(cs);
}

Matrix JacobianBlocks::stacked() const {
    Eigen::Index cols = 0;
    for (const auto& b : blocks) cols += b.cols();
    Matrix j(blocks.front().rows(), cols);
    Eigen::Index at = 0;
    for (const auto& b : blocks) {
        j.middleCols(at, b.cols()) = b;
        at += b.cols();
    }
    return j;
}

DenseTensor centered_model_adjustment(const ToTRFit& fit, const DenseTensor& x_stacked) {
    if (x_stacked.order() != fit.shape.l() + 1 ||
        !std::equal(fit.shape.covariate.begin(), fit.shape.covariate.end(), x_stacked.dims().begin()))
        throw DimensionError("covariates do not match the fitted shape");
    if (!fit.has_intercept) return x_stacked;
    DenseTensor xc = x_stacked;
    auto m = xc.as_matrix(fit.shape.h());
    const Vector mean = m.rowwise().mean();
    m.colwise() -= mean;
    return xc;
}

AsymptoticLaw tucker_asymptotic_cov(const ToTRFit& fit, const DenseTensor& x_stacked) {
    const auto* c = std::get_if<TuckerCoeff>(&fit.coeff);
    if (!c) throw FormatError("Tucker law needs a Tucker fit");
    const ModelShape& s = fit.shape;
    const Matrix xx = xx_of(centered_model_adjustment(fit, x_stacked), s.h());
    AsymptoticLaw law;
    law.structure = AsymptoticLaw::Structure::kronecker;
    law.mean = to_full(fit.coeff);
    std::vector<Matrix> proj;
    for (const auto& lq : c->covariate_factors) proj.push_back(lq * spd_inverse(lq.transpose() * lq) * lq.transpose());
    const double q = xx(0, 0);
    const bool balanced = q > 0.0 && (xx - q * Matrix::Identity(xx.rows(), xx.cols())).cwiseAbs().maxCoeff() <= 1e-12 * q;
    if (balanced) {
        law.scale = fit.sigma2 / q;
        for (std::size_t j = 0; j < s.l(); ++j) law.blocks.push_back({{j + 1}, proj[j]});
    } else {
        Matrix xinv;
        try {
            xinv = solve_psd(xx, Matrix::Identity(xx.rows(), xx.cols()), 1e-12);
        } catch (const SingularError&) {
            throw SingularError("XX' is singular; the Tucker law needs invertible covariate cross-products");
        }
        const Matrix pl = kronecker_reversed(proj);
        std::vector<std::size_t> modes(s.l());
        std::iota(modes.begin(), modes.end(), 1);
        law.scale = fit.sigma2;
        law.blocks.push_back({modes, pl * xinv * pl});
    }
    for (std::size_t k = 0; k < s.p(); ++k) {
        const Matrix& mk = c->response_factors[k];
        law.blocks.push_back({{s.l() + k + 1}, mk * mk.transpose()});
    }
    law.variances = kron_diagonals(law.blocks, law.scale);
    return law;
}

Matrix cp_jacobian(const std::vector<Matrix>& factors, std::size_t k) {
    std::vector<Matrix> others;
    Dims dims;
    for (std::size_t q = 0; q < factors.size(); ++q) {
        dims.push_back(static_cast<std::size_t>(factors[q].rows()));
        if (q + 1 != k) others.push_back(factors[q]);
    }
    const auto r = factors.front().cols();
    const Matrix t = others.empty() ? Matrix(Matrix::Ones(1, r)) : khatri_rao_reversed(others);
    const auto nk = factors[k - 1].rows();
    return scatter_rows(kronecker(t, Matrix::Identity(nk, nk)), mode_row_map(dims, k));
}

Matrix tr_jacobian(const std::vector<DenseTensor>& cores, std::size_t k) {
    const std::size_t L = cores.size();
    Dims dims;
    for (const auto& c : cores) dims.push_back(c.dims()[1]);
    const DenseTensor& ck = cores[k - 1];
    const std::size_t ra = ck.dims()[0], rb = ck.dims()[2], nk = ck.dims()[1];
    Matrix t;
    if (L == 1) {
        t = Matrix::Zero(ra * rb, 1);
        for (std::size_t a = 0; a < ra; ++a) t(ix(a + ra * a), 0) = 1.0;
    } else {
        std::vector<DenseTensor> seq;
        for (std::size_t s = 0; s + 1 < L; ++s) seq.push_back(cores[(k + s) % L]);
        const DenseTensor ch = tr_chain(seq);  // (r_k, n_{k+1}..n_L, n_1..n_{k-1}, r_{k-1})
        std::vector<std::size_t> perm{ch.order(), 1};
        for (std::size_t i = 0; i + 1 < k; ++i) perm.push_back(2 + (L - k) + i);
        for (std::size_t i = 0; i < L - k; ++i) perm.push_back(2 + i);
        const DenseTensor pt = permute(ch, perm);
        t = pt.as_matrix(ra * rb);
    }
    return scatter_rows(kronecker(Matrix(t.transpose()), Matrix::Identity(ix(nk), ix(nk))), mode_row_map(dims, k));
}

Matrix op_jacobian(const std::vector<Matrix>& factors, std::size_t k) {
    const std::size_t p = factors.size();
    std::vector<Matrix> others;
    for (std::size_t q = 0; q < p; ++q)
        if (q + 1 != k) others.push_back(factors[q]);
    const std::size_t mk = static_cast<std::size_t>(factors[k - 1].rows()), hk = static_cast<std::size_t>(factors[k - 1].cols());
    Vector vo = Vector::Ones(1);
    Dims wdims{hk, mk};
    if (!others.empty()) {
        const DenseTensor o = outer_product(std::span<const Matrix>(others));  // (h_{-k}..., m_{-k}...)
        vo = o.vec_view();
        wdims.insert(wdims.end(), o.dims().begin(), o.dims().end());
    }
    const Matrix d0 = kronecker(Matrix(vo), Matrix::Identity(ix(hk * mk), ix(hk * mk)));
    // Target order (h_1..h_p, m_1..m_p); source modes: h_k=1, m_k=2, other h's, other m's.
    std::vector<std::size_t> perm(2 * p);
    std::size_t oh = 3, om = 3 + (p - 1);
    for (std::size_t q = 1; q <= p; ++q) {
        if (q == k) {
            perm[q - 1] = 1;
            perm[p + q - 1] = 2;
        } else {
            perm[q - 1] = oh++;
            perm[p + q - 1] = om++;
        }
    }
    DenseTensor idx(wdims);
    std::iota(idx.values().begin(), idx.values().end(), 0.0);
    const DenseTensor src = permute(idx, perm);
    Matrix j(d0.rows(), d0.cols());
    for (std::size_t t = 0; t < src.size(); ++t) j.row(ix(t)) = d0.row(static_cast<Eigen::Index>(src.data()[t]));
    return j;
}

JacobianBlocks coefficient_jacobian(const LowRankCoeff& coeff) {
    JacobianBlocks jb;
    const ModelShape s = shape_of(coeff);
    auto name = [&](std::size_t t) {
        return t < s.l() ? "L" + std::to_string(t + 1) : "M" + std::to_string(t + 1 - s.l());
    };
    if (const auto* c = std::get_if<CpCoeff>(&coeff)) {
        std::vector<Matrix> all;
        cp_weighted_factors_last(*c, all);
        for (std::size_t t = 0; t < all.size(); ++t) {
            jb.names.push_back(name(t));
            jb.blocks.push_back(cp_jacobian(all, t + 1));
        }
    } else if (const auto* c = std::get_if<TrCoeff>(&coeff)) {
        const auto all = tr_all_cores(*c);
        for (std::size_t t = 0; t < all.size(); ++t) {
            jb.names.push_back(name(t));
            jb.blocks.push_back(tr_jacobian(all, t + 1));
        }
    } else if (const auto* c = std::get_if<OpCoeff>(&coeff)) {
        for (std::size_t t = 0; t < c->factors.size(); ++t) {
            jb.names.push_back("M" + std::to_string(t + 1));
            jb.blocks.push_back(op_jacobian(c->factors, t + 1));
        }
    } else {
        throw FormatError("Jacobian blocks are defined for the CP, TR and OP formats");
    }
    return jb;
}

Vector coefficient_parameters(const LowRankCoeff& coeff) {
    std::vector<double> out;
    auto put = [&](const Matrix& m) { out.insert(out.end(), m.data(), m.data() + m.size()); };
    if (const auto* c = std::get_if<CpCoeff>(&coeff)) {
        std::vector<Matrix> all;
        cp_weighted_factors_last(*c, all);
        for (const auto& a : all) put(a);
    } else if (const auto* c = std::get_if<TrCoeff>(&coeff)) {
        for (const auto& core : tr_all_cores(*c)) put(matricize_mode(core, 2));
    } else if (const auto* c = std::get_if<OpCoeff>(&coeff)) {
        for (const auto& m : c->factors) put(m.transpose());
    } else {
        throw FormatError("parameter vectors are defined for the CP, TR and OP formats");
    }
    return Eigen::Map<const Vector>(out.data(), ix(out.size()));
}

LowRankCoeff coefficient_from_parameters(const LowRankCoeff& like, const Vector& theta) {
    Eigen::Index at = 0;
    auto take = [&](Eigen::Index rows, Eigen::Index cols) {
        if (at + rows * cols > theta.size()) throw DimensionError("parameter vector too short");
        Matrix m = Eigen::Map<const Matrix>(theta.data() + at, rows, cols);
        at += rows * cols;
        return m;
    };
    LowRankCoeff out = like;
    if (auto* c = std::get_if<CpCoeff>(&out)) {
        for (auto& a : c->covariate_factors) a = take(a.rows(), a.cols());
        for (auto& a : c->response_factors) a = take(a.rows(), a.cols());
        c->weights.setOnes();
    } else if (auto* c = std::get_if<TrCoeff>(&out)) {
        auto fill = [&](DenseTensor& core) {
            const auto& d = core.dims();
            const Matrix m2 = take(ix(d[1]), ix(d[0] * d[2]));
            for (std::size_t b = 0; b < d[2]; ++b)
                for (std::size_t i = 0; i < d[1]; ++i)
                    for (std::size_t a = 0; a < d[0]; ++a) core.data()[a + d[0] * (i + d[1] * b)] = m2(ix(i), ix(a + d[0] * b));
        };
        for (auto& core : c->covariate_cores) fill(core);
        for (auto& core : c->response_cores) fill(core);
    } else if (auto* c = std::get_if<OpCoeff>(&out)) {
        for (auto& m : c->factors) m = take(m.cols(), m.rows()).transpose();
    } else {
        throw FormatError("parameter vectors are defined for the CP, TR and OP formats");
    }
    if (at != theta.size()) throw DimensionError("parameter vector too long");
    return out;
}

Matrix factor_covariance(const JacobianBlocks& jac, const Matrix& xx, std::span<const Matrix> scales, double sigma2,
                         CovarianceMethod method) {
    const Matrix j = jac.stacked();
    const std::size_t hdim = static_cast<std::size_t>(xx.rows());
    const std::size_t d = static_cast<std::size_t>(j.cols());
    Dims dims{hdim};
    for (const auto& s : scales) dims.push_back(static_cast<std::size_t>(s.rows()));
    dims.push_back(d);
    DenseTensor t(dims, std::vector<double>(j.data(), j.data() + j.size()));
    for (std::size_t k = 0; k < scales.size(); ++k) t = mode_product(t, spd_inverse(scales[k]), k + 2);
    t = mode_product(t, xx, 1);
    Matrix nmat = j.transpose() * t.as_matrix(num_elements(dims) / d);
    nmat = 0.5 * (nmat + nmat.transpose());
    if (method == CovarianceMethod::joint) {
        Matrix cov = sigma2 * pseudo_inverse(nmat, 1e-10);
        return 0.5 * (cov + cov.transpose());
    }
    Matrix finv = Matrix::Zero(ix(d), ix(d));
    Eigen::Index at = 0;
    for (const auto& b : jac.blocks) {
        const auto w = b.cols();
        const Matrix fb = nmat.block(at, at, w, w);
        Matrix inv;
        try {
            inv = solve_psd(fb, Matrix::Identity(w, w), 1e-12);
        } catch (const SingularError&) {
            inv = pseudo_inverse(fb, 1e-10);
        }
        finv.block(at, at, w, w) = inv;
        at += w;
    }
    Matrix cov = sigma2 * finv * nmat * finv;
    return 0.5 * (cov + cov.transpose());
}

namespace {

AsymptoticLaw jacobian_law(const ToTRFit& fit, const DenseTensor& x_stacked, std::size_t budget, CovarianceMethod method) {
    const ModelShape& s = fit.shape;
    const Matrix xx = xx_of(centered_model_adjustment(fit, x_stacked), s.h());
    const JacobianBlocks jac = coefficient_jacobian(fit.coeff);
    const Matrix ctheta = factor_covariance(jac, xx, fit.scales, fit.sigma2, method);
    const Matrix j = jac.stacked();
    const Matrix jc = j * ctheta;
    AsymptoticLaw law;
    law.structure = AsymptoticLaw::Structure::explicit_matrix;
    law.mean = to_full(fit.coeff);
    law.variances = jc.cwiseProduct(j).rowwise().sum();
    const std::size_t mh = s.m() * s.h();
    if (mh * mh <= budget) {
        Matrix cov = jc * j.transpose();
        law.covariance = 0.5 * (cov + cov.transpose());
    }
    return law;
}

}  // namespace

AsymptoticLaw cp_asymptotic_cov(const ToTRFit& fit, const DenseTensor& x_stacked, std::size_t budget,
                                CovarianceMethod method) {
    if (fit.format() != Format::cp) throw FormatError("CP law needs a CP fit");
    return jacobian_law(fit, x_stacked, budget, method);
}

AsymptoticLaw tr_op_asymptotic_cov(const ToTRFit& fit, const DenseTensor& x_stacked, std::size_t budget,
                                   CovarianceMethod method) {
    if (fit.format() != Format::tr && fit.format() != Format::op) throw FormatError("TR/OP law needs a TR or OP fit");
    return jacobian_law(fit, x_stacked, budget, method);
}

AsymptoticLaw asymptotic_law(const ToTRFit& fit, const DenseTensor& x_stacked, std::size_t budget,
                             CovarianceMethod method) {
    switch (fit.format()) {
        case Format::tucker: return tucker_asymptotic_cov(fit, x_stacked);
        case Format::cp: return cp_asymptotic_cov(fit, x_stacked, budget, method);
        default: return tr_op_asymptotic_cov(fit, x_stacked, budget, method);
    }
}

AsymptoticLaw contrast_transform(const AsymptoticLaw& law, const Contrasts& contrasts) {
    if (law.structure != AsymptoticLaw::Structure::kronecker) throw FormatError("contrasts need a Kronecker-form law");
    if (contrasts.size() != law.mean.order()) throw DimensionError("need one contrast entry per mode");
    AsymptoticLaw out = law;
    std::vector<ModeFactor> fs;
    for (std::size_t k = 0; k < contrasts.size(); ++k) {
        if (!contrasts[k]) continue;
        if (static_cast<std::size_t>(contrasts[k]->cols()) != law.mean.dims()[k])
            throw DimensionError("contrast for mode " + std::to_string(k + 1) + " does not conform");
        fs.push_back({k + 1, &*contrasts[k]});
    }
    out.mean = multi_mode_product(law.mean, fs);
    for (auto& b : out.blocks) {
        bool touched = false;
        std::vector<Matrix> cs;
        for (std::size_t mode : b.modes) {
            const auto& c = contrasts[mode - 1];
            touched = touched || c.has_value();
            cs.push_back(c ? *c : Matrix(Matrix::Identity(ix(law.mean.dims()[mode - 1]), ix(law.mean.dims()[mode - 1]))));
        }
        if (!touched) continue;
        const Matrix c = kronecker_reversed(cs);
        b.cov = c * b.cov * c.transpose();
        b.cov = 0.5 * (b.cov + b.cov.transpose());
        if (b.cov.size() == 1) {
            out.scale *= b.cov(0, 0);
            b.cov(0, 0) = 1.0;
        }
    }
    out.variances = kron_diagonals(out.blocks, out.scale);
    return out;
}

DenseTensor standardize(const DenseTensor& estimate, const AsymptoticLaw& law) {
    Vector variances = law.variances;
    if (variances.size() == 0) {
        if (law.structure == AsymptoticLaw::Structure::kronecker) variances = kron_diagonals(law.blocks, law.scale);
        else if (law.covariance) variances = law.covariance->diagonal();
    }
    if (estimate.size() != static_cast<std::size_t>(variances.size()))
        throw DimensionError("estimate does not match the law");
    DenseTensor z = estimate;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double v = variances(ix(i));
        if (!(v > 0.0)) throw SingularError("zero marginal variance at entry " + std::to_string(i));
        z.data()[i] /= std::sqrt(v);
    }
    return z;
}

namespace {

struct FisherParts {
    std::vector<Matrix> dup;
    std::vector<Matrix> inv;
    std::vector<Vector> vinv;
    std::vector<std::size_t> m;
    std::size_t mtot = 1;
};

FisherParts fisher_parts(std::span<const Matrix> scales) {
    FisherParts f;
    for (const auto& s : scales) {
        if (!is_spd(s)) throw SingularError("scale matrices must be positive definite");
        const auto mk = static_cast<std::size_t>(s.rows());
        f.m.push_back(mk);
        f.mtot *= mk;
        f.dup.push_back(duplication_matrix(mk));
        f.inv.push_back(spd_inverse(s));
        f.vinv.push_back(Eigen::Map<const Vector>(f.inv.back().data(), f.inv.back().size()));
    }
    return f;
}

Matrix fisher_block(const FisherParts& f, std::size_t k, std::size_t l, std::size_t n) {
    if (k == l) {
        const double c = 0.5 * static_cast<double>(n) * static_cast<double>(f.mtot / f.m[k]);
        return c * f.dup[k].transpose() * kronecker(f.inv[k], f.inv[k]) * f.dup[k];
    }
    const double c = 0.5 * static_cast<double>(n) * static_cast<double>(f.mtot / f.m[k] / f.m[l]);
    return c * (f.dup[k].transpose() * f.vinv[k]) * (f.vinv[l].transpose() * f.dup[l]);
}

}  // namespace

Matrix fisher_info_scale(std::span<const Matrix> scales, std::size_t n) {
    if (scales.size() < 2) throw DimensionError("the scale Fisher information needs p >= 2");
    const FisherParts f = fisher_parts(scales);
    std::vector<Eigen::Index> off{0};
    for (auto mk : f.m) off.push_back(off.back() + ix(mk * (mk + 1) / 2));
    Matrix info(off.back(), off.back());
    for (std::size_t k = 0; k < f.m.size(); ++k)
        for (std::size_t l = 0; l < f.m.size(); ++l) {
            const Matrix b = fisher_block(f, k, l, n);
            info.block(off[k], off[l], b.rows(), b.cols()) = b;
        }
    return 0.5 * (info + info.transpose());
}

Matrix fisher_schur_complement(std::span<const Matrix> scales, std::size_t n) {
    if (scales.size() < 2) throw DimensionError("the scale Fisher information needs p >= 2");
    const FisherParts f = fisher_parts(scales);
    const Matrix a = fisher_block(f, 0, 0, n), b = fisher_block(f, 0, 1, n), c = fisher_block(f, 1, 1, n);
    return a - b * solve_psd(c, Matrix(b.transpose()));
}

Vector fisher_kernel_vector(std::span<const Matrix> scales, std::size_t n) {
    if (scales.size() < 2) throw DimensionError("the scale Fisher information needs p >= 2");
    const FisherParts f = fisher_parts(scales);
    const Matrix a = fisher_block(f, 0, 0, n);
    return solve_psd(a, Matrix(f.dup[0].transpose() * f.vinv[0]));
}

bool is_singular(const Matrix& info, double rel_tol) {
    const Vector ev = Eigen::SelfAdjointEigenSolver<Matrix>(0.5 * (info + info.transpose())).eigenvalues();
    return ev.cwiseAbs().minCoeff() < rel_tol * ev.cwiseAbs().maxCoeff();
}

double two_sided_p(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

}  // namespace totr

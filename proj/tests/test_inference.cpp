#include <doctest.h>

#include "oracles.hpp"
#include "totr/inference.hpp"
#include "totr/linalg.hpp"
#include "totr/matrix_ops.hpp"
#include "totr/modelselect.hpp"
#include "totr/tvn.hpp"

using namespace totr;

namespace {

Vector vec_full(const LowRankCoeff& like, const Vector& theta) { return vec(to_full(coefficient_from_parameters(like, theta))); }

void check_jacobian(const LowRankCoeff& c) {
    const JacobianBlocks jb = coefficient_jacobian(c);
    const Vector theta = coefficient_parameters(c);
    const Matrix fd = oracle::fd_jacobian([&](const Vector& t) { return vec_full(c, t); }, theta);
    const Matrix j = jb.stacked();
    REQUIRE(j.rows() == fd.rows());
    REQUIRE(j.cols() == fd.cols());
    CHECK(oracle::rel_diff(j, fd) < 1e-6);
}

double min_eig(const Matrix& a) { return Eigen::SelfAdjointEigenSolver<Matrix>(0.5 * (a + a.transpose())).eigenvalues()(0); }

}  // namespace

TEST_CASE("parameter vectors round trip") {
    const ModelShape s{{2, 3}, {3, 2}};
    for (Format f : {Format::cp, Format::op, Format::tr}) {
        std::vector<std::size_t> r;
        if (f == Format::cp) r = {2};
        if (f == Format::tr) r = {1, 2, 2, 2};
        const LowRankCoeff c = random_coeff(f, s, r, 3);
        CHECK(oracle::rel_diff(to_full(coefficient_from_parameters(c, coefficient_parameters(c))), to_full(c)) < 1e-14);
    }
    CHECK_THROWS_AS(coefficient_jacobian(random_coeff(Format::tucker, s, {1, 1, 1, 1}, 1)), FormatError);
}

TEST_CASE("Jacobians match central differences") {
    const ModelShape s{{2, 3}, {3, 2}};
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        check_jacobian(random_coeff(Format::cp, s, {2}, seed));
        check_jacobian(random_coeff(Format::op, s, {}, seed));
        check_jacobian(random_coeff(Format::tr, ModelShape{{2}, {3, 2}}, {1, 2, 2}, seed));
        check_jacobian(random_coeff(Format::tr, s, {2, 1, 2, 3}, seed));
    }
}

TEST_CASE("balanced Tucker law") {
    const TanovaDesign d = balanced_tanova_design({2, 2}, 3);
    Rng rng(1);
    const DenseTensor y = rng.normal_tensor({2, 2, d.n()});
    ToTRSpec spec;
    spec.format = Format::tucker;
    spec.ranks = {2, 2, 2, 2};
    spec.intercept = false;
    spec.scale_models.assign(2, ScaleModel{ScaleKind::identity, 0.0});
    const ToTRFit fr = fit(spec, d.x, y);
    const AsymptoticLaw law = tucker_asymptotic_cov(fr, d.x);
    CHECK(law.structure == AsymptoticLaw::Structure::kronecker);
    CHECK(law.scale == doctest::Approx(fr.sigma2 / 3.0));
    REQUIRE(law.blocks.size() == 4);
    for (const auto& b : law.blocks) CHECK(oracle::rel_diff(b.cov, Matrix::Identity(2, 2)) < 1e-10);
}

TEST_CASE("Tucker law projections and rank") {
    Rng rng(2);
    const std::size_t n = 60;
    const DenseTensor x = rng.normal_tensor({3, 2, n});
    const LowRankCoeff truth = random_coeff(Format::tucker, ModelShape{{3, 2}, {2, 2}}, {2, 1, 1, 2}, 3);
    const DenseTensor y = predict_stacked(truth, x) + rng.normal_tensor({2, 2, n});
    ToTRSpec spec;
    spec.format = Format::tucker;
    spec.ranks = {2, 1, 1, 2};
    const ToTRFit fr = fit(spec, x, y);
    const AsymptoticLaw law = tucker_asymptotic_cov(fr, x);
    const auto& tk = std::get<TuckerCoeff>(fr.coeff);
    for (const auto& l : tk.covariate_factors) {
        const Matrix p = l * (l.transpose() * l).inverse() * l.transpose();
        CHECK(oracle::rel_diff(Matrix(p * p), p) < 1e-12);
    }
    const Matrix cov = law.expand();
    CHECK(oracle::rel_diff(cov, Matrix(cov.transpose())) < 1e-14);
    Eigen::JacobiSVD<Matrix> svd(cov);
    const Vector sv = svd.singularValues();
    std::size_t rank = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i) rank += sv(i) > 1e-10 * sv(0) ? 1 : 0;
    CHECK(rank <= 2 * 1 * 1 * 2);
    CHECK(oracle::rel_diff(Matrix(law.variances), Matrix(cov.diagonal())) < 1e-12);
}

TEST_CASE("OP with one mode has the classical covariance") {
    Rng rng(3);
    const std::size_t h = 3, m = 2, n = 50;
    const DenseTensor x = rng.normal_tensor({h, n});
    DenseTensor y = rng.normal_tensor({m, n});
    y.as_matrix(m) += rng.normal_matrix(m, h) * x.as_matrix(h);
    ToTRSpec spec;
    spec.format = Format::op;
    spec.intercept = false;
    const ToTRFit fr = fit(spec, x, y);
    const AsymptoticLaw law = tr_op_asymptotic_cov(fr, x);
    REQUIRE(law.covariance);
    const Matrix xm = x.as_matrix(h);
    const Matrix expect = kronecker(fr.sigma2 * fr.scales[0], Matrix((xm * xm.transpose()).inverse()));
    CHECK(oracle::rel_diff(*law.covariance, expect) < 1e-8);
}

TEST_CASE("plug-in laws are symmetric and nonnegative") {
    Rng rng(4);
    const ModelShape s{{2, 3}, {3, 2}};
    const std::size_t n = 60;
    for (Format f : {Format::cp, Format::op, Format::tr}) {
        CAPTURE(format_name(f));
        std::vector<std::size_t> r;
        if (f == Format::cp) r = {2};
        if (f == Format::tr) r = {2, 2, 2, 2};
        const LowRankCoeff truth = random_coeff(f, s, r, 5);
        const DenseTensor x = rng.normal_tensor({2, 3, n});
        const DenseTensor y = predict_stacked(truth, x) + 0.3 * rng.normal_tensor({3, 2, n});
        ToTRSpec spec;
        spec.format = f;
        spec.ranks = r;
        const ToTRFit fr = fit(spec, x, y);
        const AsymptoticLaw law = asymptotic_law(fr, x);
        REQUIRE(law.covariance);
        const Matrix& c = *law.covariance;
        CHECK(oracle::rel_diff(c, Matrix(c.transpose())) < 1e-12);
        CHECK(min_eig(c) >= -1e-10 * c.norm());

        // Adding a constant to every covariate leaves the law unchanged when an intercept is fitted.
        DenseTensor shifted = x;
        for (double& v : shifted.values()) v += 2.5;
        const AsymptoticLaw law2 = asymptotic_law(fr, shifted);
        CHECK(oracle::rel_diff(*law2.covariance, c) < 1e-8);
        const CenteredData cd = center_and_profile_intercept(x, y);
        CHECK(oracle::rel_diff(*asymptotic_law(fr, cd.x).covariance, c) < 1e-8);
    }
    const LowRankCoeff big = random_coeff(Format::cp, ModelShape{{4, 5}, {6, 7}}, {2}, 1);
    const DenseTensor x = rng.normal_tensor({4, 5, 30});
    ToTRSpec spec;
    spec.format = Format::cp;
    spec.ranks = {2};
    const ToTRFit fr = fit(spec, x, predict_stacked(big, x) + rng.normal_tensor({6, 7, 30}));
    const AsymptoticLaw small = cp_asymptotic_cov(fr, x, 1000);
    CHECK(!small.covariance);
    CHECK(small.variances.size() == 4 * 5 * 6 * 7);
}

TEST_CASE("centering is skipped without an intercept") {
    Rng rng(5);
    const DenseTensor x = rng.normal_tensor({2, 20});
    const DenseTensor y = rng.normal_tensor({2, 20});
    ToTRSpec spec;
    spec.format = Format::op;
    spec.intercept = false;
    const ToTRFit fr = fit(spec, x, y);
    CHECK(centered_model_adjustment(fr, x).values() == x.values());
    spec.intercept = true;
    const ToTRFit g = fit(spec, x, y);
    CHECK(oracle::rel_diff(centered_model_adjustment(g, x), center_and_profile_intercept(x, y).x) < 1e-15);
}

TEST_CASE("contrast transforms and standardization") {
    Rng rng(6);
    AsymptoticLaw law;
    law.structure = AsymptoticLaw::Structure::kronecker;
    law.mean = rng.normal_tensor({3, 2, 2});
    law.scale = 0.7;
    law.blocks = {{{1}, oracle::random_spd(3, rng)}, {{2}, oracle::random_spd(2, rng)}, {{3}, oracle::random_spd(2, rng)}};
    const Matrix dense = law.expand();
    CHECK(oracle::rel_diff(dense, Matrix(law.scale * oracle::kron_rev({law.blocks[0].cov, law.blocks[1].cov, law.blocks[2].cov}))) < 1e-14);

    const AsymptoticLaw same = contrast_transform(law, Contrasts(3));
    CHECK(oracle::rel_diff(same.expand(), dense) < 1e-15);

    Matrix c1 = Matrix::Zero(1, 3);
    c1 << 1, -1, 0;
    const Matrix c2 = rng.normal_matrix(2, 2);
    Matrix c3(1, 2);
    c3 << 0.5, 0.5;
    const AsymptoticLaw t = contrast_transform(law, Contrasts{c1, c2, c3});
    const Matrix cfull = oracle::kron_rev({c1, c2, c3});
    CHECK(oracle::rel_diff(t.expand(), Matrix(cfull * dense * cfull.transpose())) < 1e-12);
    CHECK(oracle::rel_diff(Matrix(vec(t.mean)), Matrix(cfull * vec(law.mean))) < 1e-12);
    const double tau2 = law.scale * (c1 * law.blocks[0].cov * c1.transpose())(0, 0) * (c3 * law.blocks[2].cov * c3.transpose())(0, 0);
    CHECK(t.scale == doctest::Approx(tau2).epsilon(1e-12));

    // Averaging contrast over levels with equal means gives a zero mean.
    AsymptoticLaw eq = law;
    for (std::size_t j = 0; j < 2; ++j)
        for (std::size_t k = 0; k < 2; ++k)
            for (std::size_t i = 0; i < 3; ++i) eq.mean({i, j, k}) = 1.0 + j + 2.0 * k;
    Matrix diff(2, 3);
    diff << 1, -1, 0, 0, 1, -1;
    CHECK(contrast_transform(eq, Contrasts{diff, std::nullopt, std::nullopt}).mean.norm() < 1e-14);

    AsymptoticLaw id = law;
    id.scale = 1.0;
    for (auto& b : id.blocks) b.cov = Matrix::Identity(b.cov.rows(), b.cov.cols());
    id.variances = Vector::Ones(12);
    const DenseTensor est = rng.normal_tensor({3, 2, 2});
    CHECK(oracle::rel_diff(standardize(est, id), est) < 1e-15);
    AsymptoticLaw scaled = law;
    scaled.scale *= 4.0;
    CHECK(oracle::rel_diff(standardize(2.0 * est, scaled), standardize(est, law)) < 1e-14);
    AsymptoticLaw zero = law;
    zero.blocks[0].cov.row(1).setZero();
    zero.blocks[0].cov.col(1).setZero();
    zero.variances = Vector();
    CHECK_THROWS_AS(standardize(est, zero), SingularError);
}

TEST_CASE("Fisher information of the scales is singular") {
    Rng rng(7);
    for (int t = 0; t < 5; ++t) {
        std::vector<Matrix> sc{oracle::random_spd(2, rng), oracle::random_spd(2, rng)};
        if (t == 0) sc = {Matrix::Identity(2, 2), Matrix::Identity(2, 2)};
        const Matrix info = fisher_info_scale(sc, 10);
        CHECK(info.rows() == 6);
        CHECK(is_singular(info));
        const Eigen::SelfAdjointEigenSolver<Matrix> es(info);
        CHECK(std::abs(es.eigenvalues()(0)) < 1e-10 * es.eigenvalues().maxCoeff());
        CHECK(is_spd(info.topLeftCorner(3, 3)));
        CHECK(is_spd(info.bottomRightCorner(3, 3)));
        const Vector v = fisher_kernel_vector(sc, 10);
        const Matrix s = fisher_schur_complement(sc, 10);
        CHECK((s * v).norm() <= 1e-10 * s.norm() * v.norm());
        CHECK(v.norm() > 0.0);
    }
    // The kernel direction scales Sigma_1 up and Sigma_2 down.
    const std::vector<Matrix> sc{oracle::random_spd(2, rng), oracle::random_spd(3, rng)};
    const Matrix info = fisher_info_scale(sc, 5);
    Vector dir(3 + 6);
    dir << vech(sc[0]), -vech(sc[1]);
    CHECK((info * dir).norm() < 1e-10 * info.norm() * dir.norm());
    CHECK_FALSE(is_singular(Matrix::Identity(3, 3)));
}

TEST_CASE("two-sided p-values") {
    CHECK(two_sided_p(0.0) == doctest::Approx(1.0));
    CHECK(two_sided_p(1.959963984540054) == doctest::Approx(0.05).epsilon(1e-9));
    CHECK(two_sided_p(-1.959963984540054) == doctest::Approx(0.05).epsilon(1e-9));
}

namespace {

struct MonteCarlo {
    Vector empirical;
    AsymptoticLaw blockwise;
    AsymptoticLaw joint;
};

// Refits from the truth on fresh noise; laws are evaluated at the true parameters.
MonteCarlo monte_carlo(Format f, const std::vector<std::size_t>& r, std::size_t n, std::size_t reps) {
    const ModelShape s{{2, 2}, {2, 2}};
    const LowRankCoeff truth = random_coeff(f, s, r, 5);
    Rng rng(1);
    const DenseTensor x = rng.normal_tensor({2, 2, n});
    Matrix s1(2, 2);
    s1 << 1.0, 0.4, 0.4, 1.5;
    const TvnParams noise{DenseTensor({2, 2}), {s1, Matrix::Identity(2, 2)}, 0.05};
    const DenseTensor mu = predict_stacked(truth, x);
    Matrix est(16, static_cast<Eigen::Index>(reps));
    MonteCarlo out;
    for (std::size_t b = 0; b < reps; ++b) {
        ToTRSpec spec;
        spec.format = f;
        spec.ranks = r;
        spec.intercept = false;
        spec.init = truth;
        const ToTRFit fr = fit(spec, x, mu + sample_stacked(noise, n, rng));
        est.col(static_cast<Eigen::Index>(b)) = vec(to_full(fr.coeff));
        if (b == 0) {
            ToTRFit at = fr;
            if (f != Format::tucker) at.coeff = truth;
            at.scales = noise.scales;
            at.sigma2 = noise.sigma2;
            out.blockwise = asymptotic_law(at, x);
            out.joint = asymptotic_law(at, x, kDefaultCovarianceBudget, CovarianceMethod::joint);
        }
    }
    const Matrix c = est.colwise() - est.rowwise().mean();
    out.empirical = (c * c.transpose()).diagonal() / static_cast<double>(reps - 1);
    return out;
}

// Largest relative error over entries carrying at least a tenth of the largest variance.
double worst_ratio_error(const Vector& empirical, const Vector& predicted) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < empirical.size(); ++i) {
        if (empirical(i) < 0.1 * empirical.maxCoeff()) continue;
        worst = std::max(worst, std::abs(empirical(i) / predicted(i) - 1.0));
    }
    return worst;
}

}  // namespace

TEST_CASE("full-rank Tucker law matches refits") {
    const MonteCarlo mc = monte_carlo(Format::tucker, {2, 2, 2, 2}, 500, 500);
    CHECK(worst_ratio_error(mc.empirical, mc.blockwise.variances) < 0.2);
}

TEST_CASE("joint CP law matches refits") {
    const MonteCarlo mc = monte_carlo(Format::cp, {1}, 2000, 500);
    CHECK(worst_ratio_error(mc.empirical, mc.joint.variances) < 0.25);
}

TEST_CASE("blockwise CP law matches refits" * doctest::may_fail()) {
    const MonteCarlo mc = monte_carlo(Format::cp, {1}, 2000, 500);
    CHECK(worst_ratio_error(mc.empirical, mc.blockwise.variances) < 0.25);
}

TEST_CASE("joint OP law matches refits") {
    const MonteCarlo mc = monte_carlo(Format::op, {}, 500, 300);
    CHECK(worst_ratio_error(mc.empirical, mc.joint.variances) < 0.25);
}

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "totr/modelselect.hpp"
#include "totr/harness.hpp"
#include "totr/random.hpp"

using namespace totr;

namespace {

std::vector<ScaleModel> kinds(std::initializer_list<ScaleKind> ks) {
    std::vector<ScaleModel> out;
    for (ScaleKind k : ks) out.push_back({k, 0.0});
    return out;
}

// Y_i = B[cell_i, :] + sd * noise with B of dims (levels..., m...).
DenseTensor cell_response(const TanovaDesign& d, const DenseTensor& b, const Dims& m, double sd, Rng& rng) {
    const auto h = static_cast<Eigen::Index>(std::accumulate(d.levels.begin(), d.levels.end(), std::size_t{1},
                                                             std::multiplies<>()));
    const Eigen::Index mm = static_cast<Eigen::Index>(b.size()) / h;
    const Eigen::Map<const Matrix> bm(b.data(), h, mm);
    const Eigen::Map<const Matrix> xm(d.x.data(), h, static_cast<Eigen::Index>(d.n()));
    Dims ydims = m;
    ydims.push_back(d.n());
    DenseTensor y = sd * rng.normal_tensor(ydims);
    Eigen::Map<Matrix>(y.data(), mm, static_cast<Eigen::Index>(d.n())) += bm.transpose() * xm;
    return y;
}

Matrix with_spectrum(const Vector& s, Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    const Matrix u = Eigen::HouseholderQR<Matrix>(rng.normal_matrix(static_cast<std::size_t>(rows), static_cast<std::size_t>(rows))).householderQ();
    const Matrix v = Eigen::HouseholderQR<Matrix>(rng.normal_matrix(static_cast<std::size_t>(cols), static_cast<std::size_t>(cols))).householderQ();
    Matrix d = Matrix::Zero(rows, cols);
    for (Eigen::Index i = 0; i < s.size(); ++i) d(i, i) = s(i);
    return u * d * v.transpose();
}

}  // namespace

TEST_CASE("scale parameter counts") {
    CHECK(scale_param_count(kinds({ScaleKind::unstructured, ScaleKind::unstructured}), {2, 3}) == 8);
    CHECK(scale_param_count(kinds({ScaleKind::ar1, ScaleKind::identity}), {4, 5}) == 2);
    CHECK(scale_param_count(kinds({ScaleKind::equicorrelation, ScaleKind::unstructured}), {4, 3}) == 1 + 1 + 5);
    CHECK(scale_param_count({}, {6, 7}) == 1 + 20 + 27);
}

TEST_CASE("BIC arithmetic") {
    CHECK(bic_value(10, -50.0, 100) == doctest::Approx(10 * std::log(100.0) + 100.0).epsilon(1e-15));
    CHECK(bic_value(12, -50.0, 100) - bic_value(10, -50.0, 100) == doctest::Approx(2 * std::log(100.0)));

    Rng rng(2);
    const ModelShape s{{3, 2}, {3, 2}};
    const DenseTensor x = rng.normal_tensor({3, 2, 80});
    const DenseTensor y = predict_stacked(random_coeff(Format::cp, s, {1}, 1), x) + rng.normal_tensor({3, 2, 80});
    ToTRSpec spec;
    spec.format = Format::cp;
    spec.ranks = {1};
    const ToTRFit f1 = fit(spec, x, y);
    spec.ranks = {2};
    const ToTRFit f2 = fit(spec, x, y);
    const BicResult b1 = bic(f1);
    const BicResult b2 = bic(f2);
    CHECK(b1.k_coeff == param_count(f1.coeff));
    CHECK(b1.k_scale == 1 + 5 + 2);
    CHECK(b2.k_total() > b1.k_total());
    CHECK(b1.bic == bic_value(b1.k_total(), f1.loglik(), 80));
    CHECK(b1.loglik == f1.loglik());
}

TEST_CASE("rank search") {
    Rng rng(3);
    const ModelShape s{{3, 3}, {3, 3}};
    const std::size_t n = 200;
    const DenseTensor x = rng.normal_tensor({3, 3, n});
    LowRankCoeff truth = random_coeff(Format::cp, s, {2}, 7);
    harness::scale_coeff(truth, 2.0);
    const DenseTensor y = predict_stacked(truth, x) + 0.5 * rng.normal_tensor({3, 3, n});
    ToTRSpec spec;
    spec.format = Format::cp;
    spec.seed = 11;

    const RankSearchResult one = rank_search(spec, {{3}}, x, y);
    REQUIRE(one.table.size() == 1);
    CHECK(one.best == 0);
    CHECK(one.best_fit.coeff.index() == truth.index());

    const RankGrid grid{{1}, {2}, {3}, {4}};
    const RankSearchResult rs = rank_search(spec, grid, x, y, 3);
    REQUIRE(rs.table.size() == grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        CHECK(rs.table[i].ranks == grid[i]);
        CHECK(rs.table[i].seed == candidate_seed(11, grid[i]));
    }
    CHECK(rs.table[rs.best].ranks == std::vector<std::size_t>{2});
    for (const auto& row : rs.table) CHECK(row.bic.bic >= rs.table[rs.best].bic.bic);

    RankGrid reversed(grid.rbegin(), grid.rend());
    const RankSearchResult rr = rank_search(spec, reversed, x, y);
    CHECK(rr.table[rr.best].ranks == rs.table[rs.best].ranks);
    CHECK(rr.table[rr.best].bic.bic == rs.table[rs.best].bic.bic);

    // Identical candidates tie on every key; the first one wins.
    const RankSearchResult dup = rank_search(spec, {{2}, {2}}, x, y);
    CHECK(dup.best == 0);

    CHECK_THROWS_AS(rank_search(spec, {}, x, y), ConfigError);
}

TEST_CASE("TANOVA designs") {
    const TanovaDesign d1 = build_tanova_design({2}, {{0}, {1}, {1}});
    CHECK(d1.x.dims() == Dims{2, 3});
    CHECK(oracle::get(d1.x, {0, 0}) == 1.0);
    CHECK(oracle::get(d1.x, {1, 0}) == 0.0);
    CHECK(oracle::get(d1.x, {0, 1}) == 0.0);
    CHECK(oracle::get(d1.x, {1, 1}) == 1.0);
    CHECK(d1.cell_counts == std::vector<std::size_t>{1, 2});
    CHECK(!d1.balanced());

    const TanovaDesign d2 = build_tanova_design({4, 3}, {{1, 2}});
    const DenseTensor xi = slice_last(d2.x, 0);
    CHECK(xi.dims() == Dims{4, 3});
    CHECK(std::accumulate(xi.values().begin(), xi.values().end(), 0.0) == 1.0);
    CHECK(oracle::get(xi, {1, 2}) == 1.0);

    Rng rng(5);
    const DenseTensor b = rng.normal_tensor({4, 3, 2, 5});
    const DenseTensor sel = partial_contract(xi, b);
    REQUIRE(sel.dims() == Dims{2, 5});
    oracle::for_each_index(sel.dims(), [&](const std::vector<std::size_t>& idx) {
        CHECK(oracle::get(sel, idx) == oracle::get(b, {1, 2, idx[0], idx[1]}));
    });

    const TanovaDesign bal = balanced_tanova_design({2, 3}, 4);
    CHECK(bal.n() == 24);
    REQUIRE(bal.balanced());
    CHECK(*bal.balanced() == 4);
    CHECK(bal.labels[0] == std::vector<std::size_t>{0, 0});
    CHECK(bal.labels[1] == std::vector<std::size_t>{0, 0});
    CHECK(bal.labels[4] == std::vector<std::size_t>{1, 0});

    const TanovaDesign col = collapse_factor(bal, 1);
    CHECK(col.levels == Dims{1, 3});
    CHECK(col.n() == 24);
    for (std::size_t i = 0; i < col.n(); ++i) {
        CHECK(col.labels[i][0] == 0);
        CHECK(col.labels[i][1] == bal.labels[i][1]);
    }
    CHECK(*col.balanced() == 8);

    const TanovaDesign gap = build_tanova_design({3}, {{0}, {2}});
    CHECK(!gap.warnings.empty());
    CHECK_THROWS(build_tanova_design({3}, {{3}}));

    const ModelShape s{{2, 3}, {4, 4}};
    CHECK(reduced_ranks(Format::tucker, s, {2, 2, 3, 3}, 1) == std::vector<std::size_t>{1, 2, 3, 3});
    CHECK(reduced_ranks(Format::tucker, ModelShape{{4}, {3, 2}}, {4, 3, 2}, 1) == std::vector<std::size_t>{1, 2, 2});
    CHECK(reduced_ranks(Format::cp, s, {3}, 2) == std::vector<std::size_t>{3});
    CHECK(reduced_ranks(Format::tr, s, {2, 3, 2, 2}, 2) == std::vector<std::size_t>{2, 3, 2, 2});
}

TEST_CASE("generalized determinant") {
    Rng rng(6);
    Vector sv(3);
    sv << 3.0, 1.0, 0.5;  // rank 3 in an 8 x 5 matrix
    const Matrix z = with_spectrum(sv, 8, 5, rng);
    const double expect = 2.0 * (std::log(3.0) + std::log(1.0) + std::log(0.5));
    CHECK(generalized_rank(z) == 3);
    CHECK(log_generalized_det(z) == doctest::Approx(expect).epsilon(1e-10));
    CHECK(log_generalized_det(Matrix(z.transpose())) == doctest::Approx(expect).epsilon(1e-10));
    CHECK(log_generalized_det(z, 1e-9) == doctest::Approx(expect).epsilon(1e-10));
    CHECK(log_generalized_det(z, 1e-11) == doctest::Approx(expect).epsilon(1e-10));
    CHECK_THROWS_AS(log_generalized_det(Matrix::Zero(3, 4)), SingularError);
}

TEST_CASE("Wilks lambda") {
    Rng rng(7);
    const DenseTensor r = rng.normal_tensor({3, 2, 40});
    CHECK(wilks_lambda(r, r) == doctest::Approx(1.0).epsilon(1e-12));

    const TanovaDesign d = balanced_tanova_design({4}, 30);
    DenseTensor b = rng.normal_tensor({4, 3, 2});
    const DenseTensor y = cell_response(d, b, {3, 2}, 1.0, rng);
    ToTRSpec spec;
    spec.format = Format::tucker;
    spec.ranks = {4, 3, 2};
    spec.intercept = false;
    const WilksTest t = wilks_test(spec, d, y);
    CHECK(t.lambda > 0.0);
    CHECK(t.lambda < 0.5);

    // Permuting observations permutes residual columns only.
    std::vector<std::size_t> perm(d.n());
    std::iota(perm.begin(), perm.end(), 0);
    std::reverse(perm.begin(), perm.end());
    std::vector<std::vector<std::size_t>> labels;
    for (std::size_t i : perm) labels.push_back(d.labels[i]);
    const TanovaDesign dp = build_tanova_design(d.levels, labels);
    DenseTensor yp(y.dims());
    for (std::size_t i = 0; i < d.n(); ++i)
        for (std::size_t j = 0; j < 6; ++j) yp.values()[6 * i + j] = y.values()[6 * perm[i] + j];
    CHECK(wilks_test(spec, dp, yp).lambda == doctest::Approx(t.lambda).epsilon(1e-8));

    // No group differences: Lambda stays near one.
    const DenseTensor flat = cell_response(d, DenseTensor({4, 3, 2}), {3, 2}, 1.0, rng);
    CHECK(wilks_test(spec, d, flat).lambda > 0.85);
}

TEST_CASE("sample quantiles") {
    CHECK(sample_quantile({4.0, 1.0, 3.0, 2.0}, 0.5) == doctest::Approx(2.5));
    CHECK(sample_quantile({4.0, 1.0, 3.0, 2.0}, 0.95) == doctest::Approx(3.85));
    CHECK(sample_quantile({4.0, 1.0, 3.0, 2.0}, 0.0) == 1.0);
    CHECK(sample_quantile({4.0, 1.0, 3.0, 2.0}, 1.0) == 4.0);
    CHECK(sample_quantile({7.0}, 0.3) == 7.0);
    CHECK_THROWS(sample_quantile({}, 0.5));
    CHECK_THROWS(sample_quantile({1.0}, 1.5));
}

TEST_CASE("Monte-Carlo quantiles") {
    const auto rep = [](std::uint64_t seed) {
        Rng rng(seed);
        return rng.uniform();
    };
    std::vector<double> vals;
    const double q1 = wilks_mc_quantile(rep, 1, 0.95, 9, 1, &vals);
    REQUIRE(vals.size() == 1);
    CHECK(q1 == vals[0]);
    CHECK(q1 == Rng(derive_seed(9, 0)).uniform());

    std::vector<double> a, b;
    const double s1 = wilks_mc_quantile(rep, 200, 0.95, 9, 1, &a);
    const double s4 = wilks_mc_quantile(rep, 200, 0.95, 9, 4, &b);
    CHECK(s1 == s4);
    CHECK(a == b);
    CHECK(std::abs(s1 - 0.95) < 0.05);
}

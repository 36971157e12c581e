#include <doctest.h>

#include <filesystem>

#include "oracles.hpp"
#include "totr/lowrank.hpp"
#include "totr/matrix_ops.hpp"

using namespace totr;

namespace {
const ModelShape kShape{{4, 5}, {6, 7}};
const ModelShape kSmall{{2, 3}, {3, 2}};
}

TEST_CASE("format names") {
    for (Format f : {Format::tucker, Format::cp, Format::op, Format::tr}) CHECK(parse_format(format_name(f)) == f);
    CHECK(parse_format("tk") == Format::tucker);
    CHECK_THROWS(parse_format("hosvd"));
}

TEST_CASE("CP rank one with ones is the all-ones tensor") {
    CpCoeff c;
    c.weights = Vector::Ones(1);
    c.covariate_factors = {Matrix::Ones(2, 1), Matrix::Ones(3, 1)};
    c.response_factors = {Matrix::Ones(3, 1), Matrix::Ones(2, 1)};
    const DenseTensor b = to_full(c);
    CHECK(b.dims() == Dims{2, 3, 3, 2});
    for (double v : b.values()) CHECK(v == 1.0);
}

TEST_CASE("reconstructions match entry-wise oracles") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto tk = std::get<TuckerCoeff>(random_coeff(Format::tucker, kSmall, {2, 2, 2, 1}, seed));
        std::vector<Matrix> tf = tk.covariate_factors;
        tf.insert(tf.end(), tk.response_factors.begin(), tk.response_factors.end());
        CHECK(oracle::rel_diff(to_full(tk), oracle::tucker_full(tk.core, tf)) < 1e-13);

        const auto cp = std::get<CpCoeff>(random_coeff(Format::cp, kSmall, {3}, seed));
        CHECK(oracle::rel_diff(to_full(cp), oracle::cp_full(cp.weights, cp_all_factors(cp))) < 1e-13);

        const auto op = std::get<OpCoeff>(random_coeff(Format::op, kSmall, {}, seed));
        CHECK(oracle::rel_diff(to_full(op), oracle::op_full(op.factors)) < 1e-13);

        const auto tr = std::get<TrCoeff>(random_coeff(Format::tr, kSmall, {2, 3, 1, 2}, seed));
        CHECK(oracle::rel_diff(to_full(tr), oracle::tr_full(tr_all_cores(tr))) < 1e-13);
    }
}

TEST_CASE("Tucker with a diagonal core is CP") {
    const auto cp = std::get<CpCoeff>(random_coeff(Format::cp, kSmall, {2}, 9));
    TuckerCoeff tk;
    tk.core = diagonal_tensor(2, 4);
    tk.covariate_factors = cp.covariate_factors;
    tk.response_factors = cp.response_factors;
    CHECK(oracle::rel_diff(to_full(tk), to_full(cp)) < 1e-14);
}

TEST_CASE("TR with unit ranks is an outer product of fibers") {
    const auto tr = std::get<TrCoeff>(random_coeff(Format::tr, kSmall, {1, 1, 1, 1}, 4));
    std::vector<Vector> fibers;
    for (const auto& c : tr_all_cores(tr)) fibers.push_back(c.vec_view());
    CHECK(oracle::rel_diff(to_full(tr), outer_product(fibers)) < 1e-14);
}

TEST_CASE("TR with one unit rank is a tensor train") {
    const ModelShape shape{{2}, {3, 2}};
    const auto tr = std::get<TrCoeff>(random_coeff(Format::tr, shape, {2, 2, 1}, 5));
    const auto cores = tr_all_cores(tr);
    const DenseTensor chain = tr_chain(cores);
    CHECK(chain.dims() == Dims{1, 2, 3, 2, 1});
    CHECK(oracle::rel_diff(to_full(tr), chain.reshaped({2, 3, 2})) < 1e-14);
}

TEST_CASE("TR chain against brute force") {
    const ModelShape shape{{2}, {3, 2}};
    const auto tr = std::get<TrCoeff>(random_coeff(Format::tr, shape, {1, 2, 2}, 6));
    CHECK(oracle::rel_diff(to_full(tr), oracle::tr_full(tr_all_cores(tr))) < 1e-14);
    const auto cores = tr_all_cores(tr);
    CHECK_THROWS_AS(tr_chain(cores, 4), DimensionError);
}

TEST_CASE("norms agree with the dense reconstruction") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        for (Format f : {Format::tucker, Format::cp, Format::op, Format::tr}) {
            std::vector<std::size_t> r;
            if (f == Format::tucker) r = {2, 3, 3, 2};
            if (f == Format::cp) r = {2};
            if (f == Format::tr) r = {2, 2, 3, 2};
            const LowRankCoeff c = random_coeff(f, kSmall, r, seed);
            CHECK(std::abs(coeff_norm(c) - to_full(c).norm()) <= 1e-10 * to_full(c).norm());
        }
    }
    OpCoeff op;
    op.factors = {Matrix::Constant(2, 2, 1.0), Matrix::Constant(3, 3, 1.0)};  // norms 2 and 3
    CHECK(coeff_norm(op) == doctest::Approx(6.0).epsilon(1e-14));
    CpCoeff z = std::get<CpCoeff>(random_coeff(Format::cp, kSmall, {2}, 1));
    z.response_factors[0].setZero();
    CHECK(coeff_norm(z) == 0.0);
}

TEST_CASE("parameter counts") {
    CHECK(param_count(Format::op, kShape, {}) == 58);
    CHECK(param_count(Format::cp, kShape, {2}) == 38);
    CHECK(param_count(Format::tucker, kShape, {2, 2, 2, 2}) == 48);
    CHECK(param_count(Format::tr, kShape, {2, 2, 2, 2}) == 16 + 20 + 24 + 28 - 3);
    CHECK(param_count(Format::tucker, ModelShape{{2, 2}, {2, 2}}, {1, 1, 1, 1}) == 5);
    // Monotone in every rank component.
    for (std::size_t i = 0; i < 4; ++i) {
        std::vector<std::size_t> lo{2, 2, 2, 2}, hi = lo;
        ++hi[i];
        CHECK(param_count(Format::tucker, kShape, hi) >= param_count(Format::tucker, kShape, lo));
        CHECK(param_count(Format::tr, kShape, hi) >= param_count(Format::tr, kShape, lo));
    }
    CHECK(param_count(Format::cp, kShape, {3}) > param_count(Format::cp, kShape, {2}));
}

TEST_CASE("rank validation") {
    CHECK_THROWS_AS(validate_ranks(Format::tr, kShape, {3, 2, 2, 2, 2}), Error);
    CHECK_NOTHROW(validate_ranks(Format::tr, kShape, {2, 2, 2, 2, 2}));
    CHECK_THROWS_AS(validate_ranks(Format::tucker, kShape, {5, 2, 2, 2}), Error);
    CHECK_THROWS_AS(validate_ranks(Format::tucker, kShape, {1, 4, 1, 3}), Error);
    CHECK_NOTHROW(validate_ranks(Format::tucker, kShape, {1, 3, 1, 3}));
    CHECK_THROWS_AS(validate_ranks(Format::cp, kShape, {}), Error);
    CHECK_THROWS_AS(validate_ranks(Format::op, ModelShape{{4}, {6, 7}}, {}), Error);
    CHECK_THROWS_AS(validate_ranks(Format::cp, kShape, {0}), Error);
}

TEST_CASE("random coefficients are reproducible and uniform") {
    const LowRankCoeff a = random_coeff(Format::tr, kShape, {2, 2, 2, 2}, 42);
    const LowRankCoeff b = random_coeff(Format::tr, kShape, {2, 2, 2, 2}, 42);
    CHECK(to_full(a).values() == to_full(b).values());
    CHECK(to_full(a).dims() == Dims{4, 5, 6, 7});
    const auto cp = std::get<CpCoeff>(random_coeff(Format::cp, kShape, {3}, 1));
    for (const auto& f : cp_all_factors(cp)) {
        CHECK(f.minCoeff() >= 0.0);
        CHECK(f.maxCoeff() < 1.0);
    }
    CHECK(cp.weights == Vector::Ones(3));
}

TEST_CASE("coefficient files round trip") {
    const auto dir = std::filesystem::temp_directory_path() / "totr_test_coeff";
    for (Format f : {Format::tucker, Format::cp, Format::op, Format::tr}) {
        std::vector<std::size_t> r;
        if (f == Format::tucker) r = {2, 2, 2, 2};
        if (f == Format::cp) r = {2};
        if (f == Format::tr) r = {2, 1, 2, 2};
        const LowRankCoeff c = random_coeff(f, kShape, r, 3);
        std::filesystem::remove_all(dir);
        save_coeff(dir, c);
        const LowRankCoeff d = load_coeff(dir);
        CHECK(format_of(d) == f);
        CHECK(ranks_of(d) == ranks_of(c));
        CHECK(to_full(d).values() == to_full(c).values());
    }
    std::filesystem::remove_all(dir);
}

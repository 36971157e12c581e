#include <doctest.h>

#include "oracles.hpp"
#include "totr/linalg.hpp"
#include "totr/matrix_ops.hpp"
#include "totr/tvn.hpp"

using namespace totr;

namespace {
TvnParams random_params(const Dims& d, Rng& rng, double sigma2 = 1.7) {
    TvnParams p{rng.normal_tensor(d), {}, sigma2};
    for (auto m : d) p.scales.push_back(oracle::random_spd(m, rng));
    return p;
}
}  // namespace

TEST_CASE("Mahalanobis distance") {
    Rng rng(1);
    const TvnParams p = random_params({2, 3}, rng);
    CHECK(mahalanobis(p.mean, p) == doctest::Approx(0.0));
    const DenseTensor y = rng.normal_tensor({2, 3});
    const Matrix cov = p.sigma2 * oracle::kron_rev(p.scales);
    const Vector z = vec(y) - vec(p.mean);
    CHECK(mahalanobis(y, p) == doctest::Approx(z.dot(cov.ldlt().solve(z))).epsilon(1e-12));

    const TvnParams id{DenseTensor({2, 3}), {Matrix::Identity(2, 2), Matrix::Identity(3, 3)}, 1.0};
    CHECK(mahalanobis(y, id) == doctest::Approx(y.norm() * y.norm()).epsilon(1e-13));
}

TEST_CASE("log density") {
    Rng rng(2);
    const TvnParams id{DenseTensor({2, 2}), {Matrix::Identity(2, 2), Matrix::Identity(2, 2)}, 1.0};
    CHECK(log_density(id.mean, id) == doctest::Approx(-2.0 * std::log(2.0 * M_PI)));
    for (int t = 0; t < 5; ++t) {
        const TvnParams p = random_params({2, 3, 2}, rng);
        const DenseTensor y = rng.normal_tensor({2, 3, 2});
        const Matrix cov = p.sigma2 * oracle::kron_rev(p.scales);
        CHECK(log_density(y, p) == doctest::Approx(oracle::mvn_logpdf(vec(y), vec(p.mean), cov)).epsilon(1e-11));
    }
    const TvnParams p1 = random_params({4}, rng);
    const DenseTensor y1 = rng.normal_tensor({4});
    CHECK(log_density(y1, p1) ==
          doctest::Approx(oracle::mvn_logpdf(vec(y1), vec(p1.mean), p1.sigma2 * p1.scales[0])).epsilon(1e-12));

    // Scale ambiguity between Sigma_1 and sigma2.
    TvnParams q = random_params({2, 3}, rng);
    const DenseTensor y = rng.normal_tensor({2, 3});
    const double before = log_density(y, q);
    q.scales[0] *= 3.0;
    q.sigma2 /= 3.0;
    CHECK(log_density(y, q) == doctest::Approx(before).epsilon(1e-12));

    TvnParams zero = q;
    zero.sigma2 = 0.0;
    CHECK_THROWS(log_density(y, zero));
}

TEST_CASE("Kronecker determinant identity") {
    Rng rng(3);
    const Matrix s1 = oracle::random_spd(2, rng), s2 = oracle::random_spd(3, rng);
    CHECK(std::log(kronecker(s2, s1).determinant()) ==
          doctest::Approx(3 * std::log(s1.determinant()) + 2 * std::log(s2.determinant())).epsilon(1e-12));
}

TEST_CASE("density integrates to one") {
    const TvnParams p{DenseTensor({2}), {(Matrix(2, 2) << 1.0, 0.3, 0.3, 0.8).finished()}, 0.5};
    const int n = 300;
    const double lim = 6.0, h = 2 * lim / n;
    double total = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            DenseTensor y({2});
            y.values() = {-lim + (i + 0.5) * h, -lim + (j + 0.5) * h};
            total += std::exp(log_density(y, p)) * h * h;
        }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("sampling") {
    Rng rng(4);
    TvnParams p = random_params({2, 3}, rng);
    p.sigma2 = 0.0;
    for (const auto& d : sample(p, 3, 1)) CHECK(d.values() == p.mean.values());

    p = random_params({3, 2}, rng, 1.0);
    p.mean = DenseTensor({3, 2});
    const std::size_t n = 5000;
    const auto draws = sample(p, n, 11);
    // E[Y_(1) Y_(1)'] = Sigma_1 tr(Sigma_2).
    Matrix s = Matrix::Zero(3, 3);
    double maha = 0.0, ld = 0.0;
    for (const auto& d : draws) {
        const Matrix y1 = matricize_mode(d, 1);
        s += y1 * y1.transpose();
        maha += mahalanobis(d, p);
        ld += log_density(d, p);
    }
    s /= static_cast<double>(n);
    const Matrix expect = p.scales[0] * p.scales[1].trace();
    CHECK(oracle::rel_diff(s, expect) < 0.05);
    const double m = 6.0;
    CHECK(std::abs(maha / n - m) < 3.0 * std::sqrt(2.0 * m / n));
    const double entropy =
        0.5 * m * (1.0 + std::log(2.0 * M_PI)) + 0.5 * std::log(oracle::kron_rev(p.scales).determinant());
    CHECK(std::abs(ld / n + entropy) < 3.0 * std::sqrt(m / 2.0 / n));
    CHECK(sample(p, 2, 5)[1].values() == sample(p, 2, 5)[1].values());
}

TEST_CASE("reshaping distribution parameters") {
    Rng rng(5);
    const TvnParams p2 = random_params({2, 3}, rng);
    auto [a, b] = reshape_distribution_check(p2, 1);
    CHECK(a == p2.scales[0]);
    CHECK(b == p2.scales[1]);

    const Dims d{2, 3, 2};
    const TvnParams p3 = random_params(d, rng);
    auto [s2, rest] = reshape_distribution_check(p3, 2);
    CHECK(s2 == p3.scales[1]);
    CHECK(oracle::rel_diff(rest, oracle::kron(p3.scales[2], p3.scales[0])) < 1e-15);
    const Matrix k = mode_commutation_matrix(d, 2);
    const Matrix sigma = oracle::kron_rev(p3.scales);
    CHECK(oracle::rel_diff(Matrix(k * sigma * k.transpose()), oracle::kron(rest, s2)) < 1e-14);
}

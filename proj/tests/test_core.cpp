#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <cmath>

#include "support/oracles.hpp"
#include "trajmix/kernel.hpp"
#include "trajmix/mvn.hpp"
#include "trajmix/spline.hpp"
#include "trajmix/stats.hpp"

using namespace trajmix;

TEST_CASE("clamped spline endpoints and dimension") {
    SplineBasis basis(3, evenly_spaced_interior(0.0, 10.0, 8), 0.0, 10.0);
    CHECK(basis.dimension() == 12);  // 8 interior + degree + 1

    const Eigen::VectorXd at_lo = basis.row(0.0);
    CHECK(at_lo[0] == doctest::Approx(1.0).epsilon(1e-14));
    for (int k = 1; k < basis.dimension(); ++k) CHECK(std::abs(at_lo[k]) < 1e-14);

    const Eigen::VectorXd at_hi = basis.row(10.0);
    CHECK(at_hi[basis.dimension() - 1] == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("spline partition of unity on random interior points") {
    SplineBasis basis(3, evenly_spaced_interior(-2.0, 7.0, 8), -2.0, 7.0);
    Rng rng(11);
    for (int k = 0; k < 1000; ++k) {
        const double t = -2.0 + 9.0 * rng.uniform();
        CHECK(std::abs(basis.row(t).sum() - 1.0) < 1e-10);
        CHECK(basis.row(t).minCoeff() >= 0.0);
    }
}

TEST_CASE("spline values match the naive Cox-de Boor recursion") {
    SplineBasis basis(3, {1.0, 2.5, 4.0}, 0.0, 5.0);
    Rng rng(7);
    for (int k = 0; k < 50; ++k) {
        const double t = 5.0 * rng.uniform();
        const Eigen::VectorXd fast = basis.row(t);
        const Eigen::VectorXd naive = oracles::naive_bspline_row(basis, t);
        for (int i = 0; i < basis.dimension(); ++i)
            CHECK(fast[i] == doctest::Approx(naive[i]).epsilon(1e-12));
    }
    // boundary point included
    const Eigen::VectorXd hi = basis.row(5.0);
    const Eigen::VectorXd hi_naive = oracles::naive_bspline_row(basis, 5.0);
    for (int i = 0; i < basis.dimension(); ++i)
        CHECK(hi[i] == doctest::Approx(hi_naive[i]).epsilon(1e-12));
}

TEST_CASE("spline clamps out-of-range and rejects non-finite times") {
    SplineBasis basis(3, {1.0, 2.0}, 0.0, 3.0);
    CHECK((basis.row(-4.0) - basis.row(0.0)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((basis.row(99.0) - basis.row(3.0)).cwiseAbs().maxCoeff() == 0.0);
    CHECK_THROWS_AS(basis.row(std::numeric_limits<double>::quiet_NaN()), std::invalid_argument);
}

TEST_CASE("spline basis invariants are enforced") {
    CHECK_THROWS_AS(SplineBasis(3, {5.0}, 0.0, 4.0), std::invalid_argument);   // knot outside
    CHECK_THROWS_AS(SplineBasis(3, {2.0, 1.0}, 0.0, 4.0), std::invalid_argument);  // not ascending
    CHECK_THROWS_AS(SplineBasis(3, {}, 2.0, 2.0), std::invalid_argument);      // empty span
}

TEST_CASE("linear design rows") {
    Eigen::VectorXd t0(1), t1(1), many(4);
    t0 << 0.0;
    t1 << 2.5;
    many << -1.0, 0.0, 1.0, 3.0;
    CHECK(linear_design(t0)(0, 0) == 1.0);
    CHECK(linear_design(t0)(0, 1) == 0.0);
    CHECK(linear_design(t1)(0, 1) == 2.5);
    CHECK(linear_design(many).rows() == 4);
    CHECK(linear_design(many).cols() == 2);
}

TEST_CASE("OU kernel closed-form entries") {
    Eigen::VectorXd single(1);
    single << 0.0;
    CHECK(ou_kernel_matrix({1.0, 1.0}, single, single)(0, 0) == doctest::Approx(1.0));

    Eigen::VectorXd pair(2);
    pair << 0.0, 1.0;
    const Eigen::MatrixXd k = ou_kernel_matrix({2.0, 1.0}, pair, pair);
    CHECK(k(0, 0) == doctest::Approx(4.0));
    CHECK(k(0, 1) == doctest::Approx(4.0 * std::exp(-1.0)).epsilon(1e-7));
    CHECK(k(0, 1) == doctest::Approx(1.4715178).epsilon(1e-6));

    CHECK_THROWS_AS(ou_kernel_matrix({-1.0, 1.0}, pair, pair), std::invalid_argument);
    CHECK_THROWS_AS(ou_kernel_matrix({1.0, 0.0}, pair, pair), std::invalid_argument);
}

TEST_CASE("OU kernel is PSD under jitter for random time sets") {
    Rng rng(23);
    for (int rep = 0; rep < 20; ++rep) {
        const int n = 2 + rng.uniform_int(49);
        Eigen::VectorXd times(n);
        for (int i = 0; i < n; ++i) times[i] = 20.0 * rng.uniform();
        const double a = std::exp(2.0 * (rng.uniform() - 0.5));
        const double l = std::exp(2.0 * (rng.uniform() - 0.5));
        const Eigen::MatrixXd k = ou_kernel_matrix({a, l}, times, times);
        const Eigen::MatrixXd jittered =
            k + 1e-8 * a * a * Eigen::MatrixXd::Identity(n, n);
        CHECK_NOTHROW(chol_with_jitter(jittered, a * a));
        // brute-force eigenvalue check
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(k);
        CHECK(eig.eigenvalues().minCoeff() > -1e-8 * a * a);
    }
}

TEST_CASE("OU kernel is stationary (exact shift invariance on dyadic times)") {
    const OUKernelParams params{1.7, 0.9};
    Eigen::VectorXd times(3), shifted(3);
    times << 0.25, 1.5, 3.75;
    const double delta = 2.5;  // dyadic: shifts are exact in binary
    shifted = times.array() + delta;
    const Eigen::MatrixXd k0 = ou_kernel_matrix(params, times, times);
    const Eigen::MatrixXd k1 = ou_kernel_matrix(params, shifted, shifted);
    CHECK((k0 - k1).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("chol_with_jitter escalates and eventually fails") {
    Eigen::MatrixXd bad(2, 2);
    bad << 1.0, 0.0, 0.0, -5.0;  // indefinite beyond any allowed jitter
    CHECK_THROWS_AS(chol_with_jitter(bad, 1.0), std::runtime_error);

    Eigen::MatrixXd borderline(2, 2);
    borderline << 1.0, 1.0, 1.0, 1.0;  // singular; needs jitter
    CHECK_NOTHROW(chol_with_jitter(borderline, 1.0));
}

TEST_CASE("mvn_logpdf closed forms") {
    GaussianDist standard{Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Identity(1, 1)};
    CHECK(mvn_logpdf(Eigen::VectorXd::Zero(1), standard) ==
          doctest::Approx(-0.9189385332046727).epsilon(1e-12));

    // x = mean leaves only the normalizer
    Eigen::MatrixXd factor(2, 2);
    factor << 1.5, 0.0, 0.3, 0.8;
    Eigen::VectorXd mean(2);
    mean << 3.0, -1.0;
    GaussianDist dist{mean, factor};
    const Eigen::MatrixXd cov = factor * factor.transpose();
    const double expected = -0.5 * std::log((2.0 * M_PI * cov).determinant());
    CHECK(mvn_logpdf(mean, dist) == doctest::Approx(expected).epsilon(1e-12));

    CHECK_THROWS_AS(mvn_logpdf(Eigen::VectorXd::Zero(3), dist), std::invalid_argument);
}

TEST_CASE("mvn_logpdf matches naive dense-inverse evaluation") {
    Rng rng(5);
    Eigen::MatrixXd factor = Eigen::MatrixXd::Zero(4, 4);
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < i; ++j) factor(i, j) = rng.normal() * 0.4;
        factor(i, i) = 0.5 + rng.uniform();
    }
    Eigen::VectorXd mean(4), x(4);
    for (int i = 0; i < 4; ++i) {
        mean[i] = rng.normal();
        x[i] = rng.normal();
    }
    GaussianDist dist{mean, factor};
    const double naive = oracles::naive_mvn_logpdf(x, mean, factor * factor.transpose());
    CHECK(mvn_logpdf(x, dist) == doctest::Approx(naive).epsilon(1e-10));
}

TEST_CASE("mvn_logpdf integrates to one on a 1-d grid") {
    GaussianDist dist{Eigen::VectorXd::Constant(1, 0.7),
                      Eigen::MatrixXd::Constant(1, 1, 1.3)};
    const double sd = 1.3;
    const int n_grid = 20001;
    const double lo = 0.7 - 8.0 * sd, hi = 0.7 + 8.0 * sd;
    const double dx = (hi - lo) / (n_grid - 1);
    double integral = 0.0;
    for (int i = 0; i < n_grid; ++i) {
        Eigen::VectorXd x(1);
        x << lo + i * dx;
        const double w = (i == 0 || i == n_grid - 1) ? 0.5 : 1.0;
        integral += w * std::exp(mvn_logpdf(x, dist)) * dx;
    }
    CHECK(integral == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("mvn_sample determinism and degenerate-covariance limit") {
    Eigen::MatrixXd tiny = 1e-12 * Eigen::MatrixXd::Identity(3, 3);
    Eigen::VectorXd mean(3);
    mean << 1.0, 2.0, 3.0;
    GaussianDist dist{mean, tiny};
    Rng rng(42);
    CHECK((mvn_sample(dist, rng) - mean).cwiseAbs().maxCoeff() < 1e-10);

    Rng r1(99), r2(99);
    GaussianDist wide{mean, Eigen::MatrixXd::Identity(3, 3)};
    CHECK((mvn_sample(wide, r1) - mvn_sample(wide, r2)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("mvn_sample empirical covariance matches within 5 percent") {
    Eigen::MatrixXd factor(2, 2);
    factor << 1.0, 0.0, 0.6, 0.8;
    Eigen::VectorXd mean(2);
    mean << -1.0, 2.0;
    GaussianDist dist{mean, factor};
    const Eigen::MatrixXd cov = factor * factor.transpose();

    Rng rng(2024);
    const int n = 100000;
    Eigen::MatrixXd samples(n, 2);
    for (int s = 0; s < n; ++s) samples.row(s) = mvn_sample(dist, rng).transpose();
    const Eigen::RowVectorXd emp_mean = samples.colwise().mean();
    Eigen::MatrixXd centered = samples.rowwise() - emp_mean;
    const Eigen::MatrixXd emp_cov = centered.transpose() * centered / double(n - 1);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
            CHECK(std::abs(emp_cov(i, j) - cov(i, j)) < 0.05 * std::abs(cov(i, j)));
}

TEST_CASE("softmax basics") {
    Eigen::VectorXd equal = Eigen::VectorXd::Constant(5, 3.3);
    const Eigen::VectorXd uniform = softmax(equal);
    for (int i = 0; i < 5; ++i) CHECK(uniform[i] == doctest::Approx(0.2).epsilon(1e-14));

    Eigen::VectorXd two(2);
    two << 0.0, std::log(3.0);
    const Eigen::VectorXd probs = softmax(two);
    CHECK(probs[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(probs[1] == doctest::Approx(0.75).epsilon(1e-12));

    // shift invariance
    Rng rng(3);
    Eigen::VectorXd logits(4);
    for (int i = 0; i < 4; ++i) logits[i] = rng.normal();
    const Eigen::VectorXd base = softmax(logits);
    const Eigen::VectorXd shifted = softmax(logits.array() + 123.456);
    CHECK((base - shifted).cwiseAbs().maxCoeff() < 1e-14);
    CHECK(base.sum() == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("rng factory streams are independent of call order") {
    RngFactory factory(1234);
    Rng a1 = factory.stream("alpha", 7);
    Rng b = factory.stream("beta", 7);
    Rng a2 = factory.stream("alpha", 7);
    const double x1 = a1.normal();
    (void)b.normal();
    const double x2 = a2.normal();
    CHECK(x1 == x2);
    CHECK(factory.stream("alpha", 7).next_u64() != factory.stream("alpha", 8).next_u64());
}

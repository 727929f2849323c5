#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "censor/error.hpp"
#include "censor/numerics.hpp"
#include "censor/rng.hpp"

#include <cmath>

using namespace censor;

namespace {

Mat random_mat(Rng& rng, int rows, int cols, double scale = 1.0) {
    Mat m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = scale * rng.gaussian();
    return m;
}

}  // namespace

TEST_CASE("pairwise_sq_dists hand cases") {
    Mat a(1, 1), b(1, 1);
    a << 0.0;
    b << 0.0;
    CHECK(pairwise_sq_dists(a, a)(0, 0) == 0.0);

    Mat a2(2, 1), b2(1, 1);
    a2 << 0.0, 2.0;
    b2 << 1.0;
    const Mat d = pairwise_sq_dists(a2, b2);
    CHECK(d(0, 0) == doctest::Approx(1.0));
    CHECK(d(1, 0) == doctest::Approx(1.0));

    Mat a3(1, 2), b3(1, 2);
    a3 << 1.0, 0.0;
    b3 << 0.0, 1.0;
    CHECK(pairwise_sq_dists(a3, b3)(0, 0) == doctest::Approx(2.0));

    Mat bad(1, 3);
    bad.setZero();
    CHECK_THROWS_AS(pairwise_sq_dists(a3, bad), NumericError);
}

TEST_CASE("pairwise_sq_dists self: zero diagonal, symmetric, nonnegative") {
    Rng rng(11);
    const Mat z = random_mat(rng, 17, 4);
    const Mat d = pairwise_sq_dists(z, z);
    CHECK(d.diagonal().cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((d - d.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(d.minCoeff() >= 0.0);
}

TEST_CASE("median_heuristic hand cases and errors") {
    Mat two(2, 1);
    two << 0.0, 2.0;
    CHECK(median_heuristic(two) == doctest::Approx(2.0));

    Mat three(3, 1);
    three << 0.0, 1.0, 3.0;  // pair distances {1,2,3}
    CHECK(median_heuristic(three) == doctest::Approx(2.0));

    Mat degen(2, 2);
    degen << 5.0, 5.0, 5.0, 5.0;
    CHECK_THROWS_AS(median_heuristic(degen), NumericError);

    Mat one(1, 2);
    one.setZero();
    CHECK_THROWS_AS(median_heuristic(one), NumericError);
}

TEST_CASE("median_heuristic permutation and scale invariances") {
    Rng rng(5);
    Mat z = random_mat(rng, 9, 3);
    const double base = median_heuristic(z);
    Mat perm = z;
    perm.row(0).swap(perm.row(7));
    perm.row(2).swap(perm.row(4));
    CHECK(median_heuristic(perm) == doctest::Approx(base));
    CHECK(median_heuristic(Mat(2.5 * z)) == doctest::Approx(2.5 * base));
}

TEST_CASE("rbf_kernel values and PSD property") {
    Mat d2(1, 1);
    d2 << 0.0;
    CHECK(rbf_kernel(d2, 0.7)(0, 0) == 1.0);
    d2 << 4.0;
    CHECK(rbf_kernel(d2, std::sqrt(2.0))(0, 0) == doctest::Approx(std::exp(-1.0)));
    d2 << 1e6;
    CHECK(rbf_kernel(d2, 1.0)(0, 0) <= 1e-12);
    CHECK_THROWS_AS(rbf_kernel(d2, 0.0), NumericError);
    CHECK_THROWS_AS(rbf_kernel(d2, -1.0), NumericError);

    Rng rng(3);
    for (int rep = 0; rep < 4; ++rep) {
        const Mat z = random_mat(rng, 8 + 6 * rep, 3);
        const Mat k = rbf_kernel(pairwise_sq_dists(z, z), 1.3);
        Eigen::SelfAdjointEigenSolver<Mat> eig(k);
        CHECK(eig.eigenvalues().minCoeff() >= -1e-8);
    }
}

TEST_CASE("perplexity_kernel symmetry and unit diagonal") {
    Rng rng(7);
    const Mat z = random_mat(rng, 12, 2);
    const auto pk = perplexity_kernel(z, 5.0);
    CHECK((pk.ksym - pk.ksym.transpose()).cwiseAbs().maxCoeff() == 0.0);
    for (int i = 0; i < 12; ++i) CHECK(pk.ksym(i, i) == 1.0);
    // Log-space averaging of the directed weights.
    const Mat d2 = pairwise_sq_dists(z, z);
    for (int i = 0; i < 12; ++i)
        for (int j = 0; j < 12; ++j) {
            const double lhs = pk.ksym(i, j);
            const double rhs = std::exp((-pk.beta[i] * d2(i, j) + -pk.beta[j] * d2(j, i)) / 2.0);
            CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
        }
}

TEST_CASE("perplexity_kernel equidistant points keep the initial beta") {
    Mat z(3, 2);
    z << 0.0, 0.0, 1.0, 0.0, 0.5, std::sqrt(3.0) / 2.0;  // equilateral triangle
    const auto pk = perplexity_kernel(z, 2.0);
    for (int i = 0; i < 3; ++i) CHECK(pk.beta[i] == 1.0);
}

TEST_CASE("perplexity_kernel achieved perplexity and beta comparison") {
    Mat near_far(3, 1);
    near_far << 0.0, 1.0, 10.0;
    Mat evenly(3, 1);
    evenly << 0.0, 1.0, 2.0;
    const double target = 1.5;
    const auto pk_a = perplexity_kernel(near_far, target);
    const auto pk_b = perplexity_kernel(evenly, target);
    // Achieved perplexity check via independent recomputation.
    auto row_perp = [](const Mat& pts, int i, double beta) {
        double z = 0.0, h = 0.0;
        for (int j = 0; j < pts.rows(); ++j) {
            if (j == i) continue;
            const double d2 = (pts.row(i) - pts.row(j)).squaredNorm();
            z += std::exp(-beta * d2);
        }
        for (int j = 0; j < pts.rows(); ++j) {
            if (j == i) continue;
            const double d2 = (pts.row(i) - pts.row(j)).squaredNorm();
            const double p = std::exp(-beta * d2) / z;
            if (p > 0) h -= p * std::log(p);
        }
        return std::exp(h);
    };
    CHECK(row_perp(near_far, 0, pk_a.beta[0]) == doctest::Approx(target).epsilon(1e-4));
    CHECK(row_perp(evenly, 0, pk_b.beta[0]) == doctest::Approx(target).epsilon(1e-4));
    // With a far second neighbor, much less concentration is needed to hit the
    // same target perplexity (the binary search lands on a smaller beta).
    CHECK(pk_a.beta[0] < pk_b.beta[0]);

    CHECK_THROWS_AS(perplexity_kernel(evenly, 0.5), ConfigError);
    CHECK_THROWS_AS(perplexity_kernel(evenly, 3.0), ConfigError);
}

TEST_CASE("quantile") {
    CHECK(quantile({5.0}, 0.0) == 5.0);
    CHECK(quantile({5.0}, 0.7) == 5.0);
    CHECK(quantile({0.5, 0.6, 0.7, 0.8}, 0.25) == doctest::Approx(0.575));
    CHECK(quantile({1.0, 2.0, 3.0}, 1.0) == 3.0);
    CHECK(quantile({3.0, 1.0, 2.0}, 0.5) == 2.0);  // conventional median, odd length
    CHECK_THROWS_AS(quantile({}, 0.5), NumericError);
    CHECK_THROWS_AS(quantile({1.0}, 1.5), ConfigError);
}

TEST_CASE("solve_ridge") {
    Mat zero = Mat::Zero(3, 3);
    Mat b = Mat::Zero(3, 2);
    b << 1, 2, 3, 4, 5, 6;
    CHECK((solve_ridge(zero, 1.0, b) - b).cwiseAbs().maxCoeff() <= 1e-12);

    Mat eye = Mat::Identity(1, 1);
    Mat b1(1, 1);
    b1 << 2.0;
    CHECK(solve_ridge(eye, 1.0, b1)(0, 0) == doctest::Approx(1.0));

    Mat diag(2, 2);
    diag << 1, 0, 0, 3;
    Mat b2(2, 1);
    b2 << 2, 8;
    const Mat x = solve_ridge(diag, 1.0, b2);
    CHECK(x(0, 0) == doctest::Approx(1.0));
    CHECK(x(1, 0) == doctest::Approx(2.0));

    Mat asym(2, 2);
    asym << 1, 0.5, 0, 1;
    CHECK_THROWS_AS(solve_ridge(asym, 1.0, b2), NumericError);

    // Residual bound on a random PSD system.
    Rng rng(21);
    const Mat a = random_mat(rng, 24, 6);
    const Mat k = a * a.transpose();
    const Mat rhs = random_mat(rng, 24, 3);
    const Mat sol = solve_ridge(k, 0.01, rhs);
    Mat reg = k;
    reg.diagonal().array() += 0.01;
    CHECK((reg * sol - rhs).norm() <= 1e-6 * (rhs.norm() + 1.0));
}

TEST_CASE("sym_eig_topj") {
    Mat d(2, 2);
    d << 3, 0, 0, 1;
    const auto top1 = sym_eig_topj(d, 1);
    CHECK(top1.values[0] == doctest::Approx(3.0));
    CHECK(std::abs(top1.vectors(0, 0)) == doctest::Approx(1.0));

    Mat offdiag(2, 2);
    offdiag << 0, 1, 1, 0;
    const auto both = sym_eig_topj(offdiag, 2);
    CHECK(both.values[0] == doctest::Approx(1.0));
    CHECK(both.values[1] == doctest::Approx(-1.0));
    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    CHECK(std::abs(both.vectors(0, 0)) == doctest::Approx(inv_sqrt2));
    CHECK(std::abs(both.vectors(1, 0)) == doctest::Approx(inv_sqrt2));

    const Mat eye = Mat::Identity(4, 4);
    const auto all_ones = sym_eig_topj(eye, 4);
    for (int m = 0; m < 4; ++m) CHECK(all_ones.values[m] == doctest::Approx(1.0));

    CHECK_THROWS_AS(sym_eig_topj(eye, 5), NumericError);

    Rng rng(2);
    const Mat a = random_mat(rng, 16, 16);
    const Mat sym = 0.5 * (a + a.transpose());
    const auto eig = sym_eig_topj(sym, 5);
    for (int m = 0; m < 5; ++m) {
        const double lambda = eig.values[m];
        CHECK((sym * eig.vectors.col(m) - lambda * eig.vectors.col(m)).norm() <=
              1e-6 * (std::abs(lambda) + 1.0));
        if (m > 0) CHECK(eig.values[m] <= eig.values[m - 1]);
    }
}

#include <gtest/gtest.h>

#include "genadapt/fdcheck.hpp"
#include "genadapt/kernels.hpp"
#include "genadapt/matrix.hpp"
#include "oracles.hpp"

using namespace genadapt;

TEST(Matmul, IdentityLeavesInputUnchanged) {
    Rng rng(1);
    Matrix m = Matrix::gaussian(3, 5, rng);
    Matrix out = matmul(Matrix::identity(3), m);
    EXPECT_EQ(out, m);
}

TEST(Matmul, HandComputedProduct) {
    Matrix a{{1, 2}, {3, 4}};
    Matrix b{{0}, {1}};
    Matrix out = matmul(a, b);
    EXPECT_DOUBLE_EQ(out(0, 0), 2.0);
    EXPECT_DOUBLE_EQ(out(1, 0), 4.0);
}

TEST(Matmul, MatchesTripleLoopOracle) {
    Rng rng(42);
    Matrix a = Matrix::gaussian(5, 7, rng);
    Matrix b = Matrix::gaussian(7, 3, rng);
    EXPECT_LE(max_abs_diff(matmul(a, b), oracles::matmul_naive(a, b)), 1e-12);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
    Matrix a(2, 3);
    Matrix b(4, 2);
    try {
        matmul(a, b);
        FAIL() << "expected DimensionError";
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("2x3"), std::string::npos);
        EXPECT_NE(msg.find("4x2"), std::string::npos);
    }
}

TEST(ProjectedGram, ZeroInputGivesZero) {
    Rng rng(2);
    Matrix h = Matrix::zeros(3, 4);
    Matrix a2 = Matrix::gaussian(2, 4, rng);
    Matrix b1 = Matrix::gaussian(4, 2, rng);
    Matrix out = projected_gram(h, a2, b1);
    EXPECT_EQ(out.rows(), 2);
    EXPECT_EQ(out.cols(), 2);
    EXPECT_DOUBLE_EQ(out.max_abs(), 0.0);
}

TEST(ProjectedGram, IdentityProjectionIsOuterProduct) {
    Matrix h{{1, 2}};
    Matrix out = projected_gram(h, Matrix::identity(2), Matrix::identity(2));
    Matrix expected{{1, 2}, {2, 4}};
    EXPECT_LE(max_abs_diff(out, expected), 1e-15);
}

TEST(ProjectedGram, MatchesRowwiseOuterProductOracle) {
    Rng rng(7);
    Matrix h = Matrix::gaussian(3, 4, rng);
    Matrix a2 = Matrix::gaussian(2, 4, rng);
    Matrix b1 = Matrix::gaussian(4, 2, rng);
    EXPECT_LE(max_abs_diff(projected_gram(h, a2, b1),
                           oracles::projected_gram_rowsum(h, a2, b1)),
              1e-12);
}

TEST(ProjectedGram, EmptyChunkGivesZero) {
    Rng rng(3);
    Matrix h(0, 4);
    Matrix a2 = Matrix::gaussian(2, 4, rng);
    Matrix b1 = Matrix::gaussian(4, 2, rng);
    Matrix out = projected_gram(h, a2, b1);
    EXPECT_DOUBLE_EQ(out.max_abs(), 0.0);
}

// Additivity over rows: the gram of a stacked matrix is the sum of the
// grams of its row slices.
TEST(ProjectedGram, AdditiveOverRowPartitions) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(split_seed(99, seed));
        const Eigen::Index rows = 1 + static_cast<Eigen::Index>(rng.uniform_int(0, 9));
        const Eigen::Index dh = 2 + static_cast<Eigen::Index>(rng.uniform_int(0, 6));
        const Eigen::Index dr = 1 + static_cast<Eigen::Index>(rng.uniform_int(0, 4));
        Matrix h = Matrix::gaussian(rows, dh, rng);
        Matrix a2 = Matrix::gaussian(dr, dh, rng);
        Matrix b1 = Matrix::gaussian(dh, dr, rng);

        Matrix whole = projected_gram(h, a2, b1);
        Matrix acc = Matrix::zeros(dr, dr);
        for (Eigen::Index r = 0; r < rows; ++r) {
            Matrix row(1, dh);
            for (Eigen::Index j = 0; j < dh; ++j) row(0, j) = h(r, j);
            acc = add(acc, projected_gram(row, a2, b1));
        }
        EXPECT_LE(max_abs_diff(whole, acc), 1e-10) << "seed " << seed;
    }
}

TEST(FrobeniusNormalize, ThreeFourFive) {
    Matrix m{{3, 4}};
    Matrix out = frobenius_normalize(m);
    EXPECT_NEAR(out(0, 0), 0.6, 1e-15);
    EXPECT_NEAR(out(0, 1), 0.8, 1e-15);
}

TEST(FrobeniusNormalize, ZeroGuard) {
    Matrix out = frobenius_normalize(Matrix::zeros(3, 3));
    EXPECT_DOUBLE_EQ(out.max_abs(), 0.0);
}

TEST(FrobeniusNormalize, UnitNormOutput) {
    Rng rng(3);
    Matrix m = Matrix::gaussian(4, 4, rng);
    EXPECT_NEAR(frobenius_normalize(m).frobenius_norm(), 1.0, 1e-12);
}

TEST(Precision, SingleEntriesAreFloatRepresentable) {
    Matrix m{{0.1, 0.2}, {0.3, 0.4}};
    Matrix s = m.to(Precision::f32);
    for (Eigen::Index i = 0; i < 2; ++i)
        for (Eigen::Index j = 0; j < 2; ++j) {
            EXPECT_EQ(s(i, j), static_cast<double>(static_cast<float>(m(i, j))));
        }
}

TEST(Precision, MixedOperandsPromoteToDouble) {
    Rng rng(4);
    Matrix a = Matrix::gaussian(2, 2, rng).to(Precision::f32);
    Matrix b = Matrix::gaussian(2, 2, rng);
    EXPECT_EQ(matmul(a, b).precision(), Precision::f64);
    EXPECT_EQ(matmul(a, a.to(Precision::f32)).precision(), Precision::f32);
}

TEST(Matrix, NonFiniteEntriesRejected) {
    EXPECT_THROW(Matrix({{1.0, std::numeric_limits<double>::infinity()}}),
                 NumericError);
}

TEST(FiniteDifference, QuadraticGradient) {
    Rng rng(11);
    Matrix x(4, 3);
    for (Eigen::Index i = 0; i < 4; ++i)
        for (Eigen::Index j = 0; j < 3; ++j)
            x(i, j) = (rng.uniform() + 0.5) * (rng.uniform() < 0.5 ? -1 : 1);
    auto f = [](const std::vector<Matrix>& p) {
        return 0.5 * p[0].frobenius_norm() * p[0].frobenius_norm();
    };
    const double err = finite_difference_check(f, {x}, {x}, 1e-4);
    EXPECT_LE(err, 1e-10);
}

TEST(FiniteDifference, TraceLinearForm) {
    Rng rng(12);
    Matrix a = Matrix::gaussian(3, 4, rng);
    Matrix b = Matrix::gaussian(4, 3, rng);
    auto f = [&](const std::vector<Matrix>& p) {
        return matmul(p[0], b).em().trace();
    };
    const double err = finite_difference_check(f, {a}, {transpose(b)}, 1e-4);
    EXPECT_LE(err, 1e-10);
}

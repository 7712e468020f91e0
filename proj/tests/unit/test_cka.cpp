#include <gtest/gtest.h>

#include <limits>
#include <random>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "hq/cka.hpp"
#include "hq/error.hpp"

using hq::Matrix;
using hqtest::literal_cka;
using hqtest::random_matrix;

namespace {

Matrix shift_rows(const Matrix& x, std::mt19937_64& rng) {
    const Matrix offset = random_matrix(1, x.cols(), rng, 10.0);
    Matrix out = x;
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) += offset(0, j);
    return out;
}

}  // namespace

TEST(LinearCka, MatchesLiteralFormula) {
    std::mt19937_64 rng(1);
    const Matrix x = random_matrix(50, 6, rng);
    const Matrix y = hq::add(hq::matmul(x, random_matrix(6, 6, rng)), random_matrix(50, 6, rng));
    EXPECT_NEAR(hq::linear_cka(x, y).value, literal_cka(x, y), 1e-10);
}

TEST(LinearCka, MatchesLiteralFormulaDifferentWidths) {
    std::mt19937_64 rng(2);
    const Matrix x = random_matrix(30, 4, rng);
    const Matrix y = hq::matmul(x, random_matrix(4, 9, rng));
    const auto s = hq::linear_cka(x, y);
    EXPECT_NEAR(s.value, literal_cka(x, y), 1e-10);
    EXPECT_EQ(s.n_rows, 30u);
}

TEST(LinearCka, SelfSimilarityIsOne) {
    std::mt19937_64 rng(3);
    const Matrix x = random_matrix(20, 5, rng);
    EXPECT_NEAR(hq::linear_cka(x, x).value, 1.0, 1e-12);
}

TEST(LinearCka, ScaleAndOrthogonalInvariance) {
    std::mt19937_64 rng(4);
    const Matrix x = random_matrix(40, 6, rng);
    const Matrix y = hq::add(x, random_matrix(40, 6, rng, 0.7));
    const double base = hq::linear_cka(x, y).value;
    EXPECT_NEAR(hq::linear_cka(x, hq::scaled(x, -3.5)).value, 1.0, 1e-12);
    const Matrix q1 = hqtest::random_orthogonal(6, rng), q2 = hqtest::random_orthogonal(6, rng);
    EXPECT_NEAR(hq::linear_cka(hq::matmul(x, q1), hq::matmul(y, q2)).value, base, 1e-9);
}

TEST(LinearCka, Symmetric) {
    std::mt19937_64 rng(5);
    for (int t = 0; t < 20; ++t) {
        const Matrix x = random_matrix(25, 3, rng), y = random_matrix(25, 5, rng);
        EXPECT_NEAR(hq::linear_cka(x, y).value, hq::linear_cka(y, x).value, 1e-12);
    }
}

TEST(LinearCka, TranslationInvariant) {
    std::mt19937_64 rng(6);
    const Matrix x = random_matrix(30, 4, rng), y = random_matrix(30, 4, rng);
    EXPECT_NEAR(hq::linear_cka(shift_rows(x, rng), y).value, hq::linear_cka(x, y).value, 1e-10);
}

TEST(LinearCka, IndependentDataScoresLow) {
    std::mt19937_64 rng(7);
    const Matrix x = random_matrix(4000, 8, rng), y = random_matrix(4000, 8, rng);
    EXPECT_LT(hq::linear_cka(x, y).value, 0.2);
}

TEST(LinearCka, ConstantInputIsDegenerateZero) {
    std::mt19937_64 rng(8);
    const Matrix c(10, 3, 2.5);
    const auto s = hq::linear_cka(c, random_matrix(10, 3, rng));
    EXPECT_TRUE(s.degenerate);
    EXPECT_EQ(s.value, 0.0);
}

TEST(LinearCka, HugeMagnitudesStayFinite) {
    // Squared entries overflow a double; the score must not.
    std::mt19937_64 rng(10);
    const Matrix x = random_matrix(12, 4, rng), y = random_matrix(12, 3, rng);
    Matrix bx = x, by = y;
    for (double& v : bx.values()) v *= 1e200;
    for (double& v : by.values()) v *= 1e-200;
    EXPECT_NEAR(hq::linear_cka(bx, by).value, hq::linear_cka(x, y).value, 1e-12);
    EXPECT_NEAR(hq::linear_cka(bx, bx).value, 1.0, 1e-12);
}

TEST(LinearCka, BoundedFuzz) {
    std::mt19937_64 rng(9);
    for (int t = 0; t < 100; ++t) {
        const std::size_t n = 2 + static_cast<std::size_t>(t % 40);
        const Matrix x = random_matrix(n, 1 + t % 7, rng), y = random_matrix(n, 1 + t % 5, rng);
        const auto s = hq::linear_cka(x, y);
        EXPECT_GE(s.value, 0.0);
        EXPECT_LE(s.value, 1.0);
        EXPECT_NEAR(s.value, literal_cka(x, y), 1e-10);
    }
}

TEST(LinearCka, Errors) {
    auto code = [](auto&& fn) {
        try {
            fn();
        } catch (const hq::Error& e) {
            return e.code();
        }
        return hq::ErrorCode::InvalidConfig;
    };
    EXPECT_EQ(code([] { hq::linear_cka(Matrix(4, 2, 1.0), Matrix(5, 2, 1.0)); }), hq::ErrorCode::RowCountMismatch);
    EXPECT_EQ(code([] { hq::linear_cka(Matrix(1, 2, 1.0), Matrix(1, 2, 1.0)); }), hq::ErrorCode::TooFewRows);
    EXPECT_EQ(code([] {
                  Matrix x(4, 2, 1.0);
                  x(2, 1) = std::numeric_limits<double>::quiet_NaN();
                  hq::linear_cka(x, Matrix(4, 2, 1.0));
              }),
              hq::ErrorCode::NonFinite);
}

TEST(Subsample, NoOpWhenLargeEnough) {
    std::mt19937_64 rng(10);
    const Matrix x = random_matrix(12, 3, rng);
    EXPECT_EQ(hq::subsample_rows(x, 12, 1), x);
    EXPECT_EQ(hq::subsample_rows(x, 100, 1), x);
}

TEST(Subsample, DeterministicSortedUnique) {
    const auto a = hq::subsample_indices(1000, 50, 42);
    EXPECT_EQ(a, hq::subsample_indices(1000, 50, 42));
    EXPECT_NE(a, hq::subsample_indices(1000, 50, 43));
    ASSERT_EQ(a.size(), 50u);
    for (std::size_t i = 1; i < a.size(); ++i) EXPECT_LT(a[i - 1], a[i]);
    EXPECT_LT(a.back(), 1000u);
}

TEST(Subsample, StableCkaOnSmoothData) {
    std::mt19937_64 rng(11);
    const std::size_t n = 16384;
    const Matrix x = random_matrix(n, 8, rng);
    const Matrix y = hq::add(hq::matmul(x, random_matrix(8, 8, rng)), random_matrix(n, 8, rng, 2.0));
    const auto idx = hq::subsample_indices(n, 4096, 3);
    const double full = hq::linear_cka(x, y).value;
    const double sub = hq::linear_cka(hq::take_rows(x, idx), hq::take_rows(y, idx)).value;
    EXPECT_LT(std::abs(full - sub), 0.02);
}

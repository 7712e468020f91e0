#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "hq/error.hpp"
#include "hq/quant_codec.hpp"

using hq::GroupQuantTensor;
using hq::Matrix;
using hq::QuantConfig;
using hqtest::random_matrix;

namespace {

QuantConfig qc(int bits, std::size_t group, bool symmetric = false) {
    QuantConfig c;
    c.bits = bits;
    c.group_size = group;
    c.symmetric = symmetric;
    return c;
}

/// Largest |w - deq| / scale over every element, via a scan group by group.
double worst_error_in_scales(const Matrix& w, const GroupQuantTensor& q) {
    const Matrix d = hq::dequantize(q);
    double worst = 0.0;
    for (std::size_t r = 0; r < w.rows(); ++r)
        for (std::size_t c = 0; c < w.cols(); ++c) {
            const double s = q.params(q.group_index(r, c)).scale;
            const double err = std::abs(w(r, c) - d(r, c));
            if (s == 0.0) {
                EXPECT_EQ(err, 0.0);
                continue;
            }
            worst = std::max(worst, (err - 1e-12) / s);
        }
    return worst;
}

}  // namespace

TEST(Codec, OnGridValuesRoundTripExactly) {
    // Column 0 spans 0..15 in steps of 1: a 4-bit asymmetric grid.
    Matrix w(16, 2);
    for (std::size_t r = 0; r < 16; ++r) {
        w(r, 0) = static_cast<double>(r);
        w(r, 1) = 0.25 * static_cast<double>(r) - 1.0;
    }
    const auto q = hq::quantize_rtn(w, qc(4, 16));
    EXPECT_LT(hq::max_abs_diff(hq::dequantize(q), w), 1e-12);
}

TEST(Codec, ZeroMatrix) {
    const Matrix w(8, 4);
    const auto q = hq::quantize_rtn(w, qc(3, 4));
    for (auto c : q.codes()) EXPECT_EQ(c, 0);
    for (double s : q.scales()) EXPECT_EQ(s, 0.0);
    EXPECT_EQ(hq::dequantize(q), w);
}

TEST(Codec, ConstantGroupIsExact) {
    const Matrix w(6, 3, -0.75);
    EXPECT_EQ(hq::dequantize(hq::quantize_rtn(w, qc(2, 6))), w);
}

TEST(Codec, RandomMatrixErrorWithinHalfScale) {
    std::mt19937_64 rng(1);
    const Matrix w = random_matrix(128, 64, rng);
    const auto q = hq::quantize_rtn(w, qc(4, 128));
    EXPECT_EQ(q.row_groups(), 1u);
    EXPECT_LE(worst_error_in_scales(w, q), 0.5);
}

TEST(Codec, ErrorBoundFuzzAllBitsBothModes) {
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<int> dim(1, 40);
    for (int t = 0; t < 1000; ++t) {
        const int bits = 2 + t % 7;
        const bool sym = (t / 7) % 2 == 1;
        const std::size_t rows = dim(rng), cols = dim(rng);
        const std::size_t group = 1 + static_cast<std::size_t>(t % 17);
        const Matrix w = random_matrix(rows, cols, rng, 0.1 + t % 5);
        const auto q = hq::quantize_rtn(w, qc(bits, group, sym));
        ASSERT_LE(worst_error_in_scales(w, q), 0.5) << "bits " << bits << " sym " << sym;
    }
}

TEST(Codec, CodesWithinRange) {
    std::mt19937_64 rng(3);
    for (int bits = 2; bits <= 8; ++bits) {
        for (bool sym : {false, true}) {
            const auto q = hq::quantize_rtn(random_matrix(20, 5, rng), qc(bits, 7, sym));
            for (auto c : q.codes()) {
                EXPECT_GE(c, hq::code_min(bits, sym));
                EXPECT_LE(c, hq::code_max(bits, sym));
            }
            for (double s : q.scales()) EXPECT_GT(s, 0.0);
            if (sym)
                for (double z : q.zero_points()) EXPECT_EQ(z, 0.0);
        }
    }
    EXPECT_EQ(hq::code_max(4, false), 15);
    EXPECT_EQ(hq::code_min(4, true), -8);
    EXPECT_EQ(hq::code_max(4, true), 7);
}

TEST(Codec, AsymmetricScaleFormula) {
    const Matrix w{{-1.0}, {0.2}, {2.0}};
    const auto q = hq::quantize_rtn(w, qc(3, 3));
    EXPECT_DOUBLE_EQ(q.scales()[0], 3.0 / 7.0);
}

TEST(Codec, SymmetricScaleFormulaAndRange) {
    std::mt19937_64 rng(4);
    const Matrix w = random_matrix(16, 3, rng);
    const auto q = hq::quantize_rtn(w, qc(4, 16, true));
    const Matrix d = hq::dequantize(q);
    for (std::size_t c = 0; c < 3; ++c) {
        double max_abs = 0.0;
        for (std::size_t r = 0; r < 16; ++r) max_abs = std::max(max_abs, std::abs(w(r, c)));
        EXPECT_DOUBLE_EQ(q.scales()[c], max_abs / 7.0);
        for (std::size_t r = 0; r < 16; ++r) EXPECT_LE(std::abs(d(r, c)), q.scales()[c] * 7.0 + 1e-12);
    }
}

TEST(Codec, EightBitNearLossless) {
    std::mt19937_64 rng(5);
    const Matrix w = random_matrix(64, 32, rng);
    // Worst element error relative to the largest weight: bounded by 1/255.
    double max_abs = 0.0;
    for (double v : w.values()) max_abs = std::max(max_abs, std::abs(v));
    EXPECT_LT(hq::max_abs_diff(hq::dequantize(hq::quantize_rtn(w, qc(8, 64))), w) / max_abs, 0.005);
    EXPECT_LT(hq::relative_error(hq::dequantize(hq::quantize_rtn(w, qc(8, 64))), w), 0.01);
}

TEST(Codec, DequantizeMatchesScalarFormula) {
    std::mt19937_64 rng(6);
    const Matrix w = random_matrix(10, 4, rng);
    const auto q = hq::quantize_rtn(w, qc(3, 4));
    const Matrix d = hq::dequantize(q);
    for (std::size_t r = 0; r < 10; ++r)
        for (std::size_t c = 0; c < 4; ++c) {
            const std::size_t g = (r / 4) * 4 + c;
            const double expect = q.codes()[r * 4 + c] * q.scales()[g] + q.zero_points()[g] * q.scales()[g];
            EXPECT_NEAR(d(r, c), expect, 1e-14);
        }
}

TEST(Codec, GroupSizeCappedAtInputDim) {
    EXPECT_EQ(qc(4, 128).effective_group(64), 64u);
    EXPECT_EQ(qc(4, 128).effective_group(172), 128u);
    std::mt19937_64 rng(7);
    const auto q = hq::quantize_rtn(random_matrix(10, 3, rng), qc(4, 128));
    EXPECT_EQ(q.group_size(), 10u);
    EXPECT_EQ(q.scales().size(), 3u);
}

TEST(Codec, TrailingPartialGroup) {
    std::mt19937_64 rng(8);
    const Matrix w = random_matrix(10, 2, rng);
    const auto q = hq::quantize_rtn(w, qc(4, 4));
    EXPECT_EQ(q.row_groups(), 3u);
    EXPECT_EQ(q.scales().size(), 6u);
    EXPECT_LE(worst_error_in_scales(w, q), 0.5);
}

TEST(Codec, FidelityMonotoneInBits) {
    std::mt19937_64 rng(9);
    for (int t = 0; t < 50; ++t) {
        const Matrix w = random_matrix(32, 8, rng);
        for (bool sym : {false, true}) {
            double prev = std::numeric_limits<double>::infinity();
            for (int b = 2; b <= 8; ++b) {
                const double err = hq::frobenius_norm(hq::subtract(w, hq::dequantize(hq::quantize_rtn(w, qc(b, 8, sym)))));
                EXPECT_LE(err, prev * (1.0 + 1e-12)) << "bits " << b;
                prev = err;
            }
        }
    }
}

TEST(Codec, GroupIndependence) {
    std::mt19937_64 rng(10);
    const Matrix w = random_matrix(16, 4, rng);
    Matrix w2 = w;
    w2(2, 1) += 5.0;  // group (row-group 0, column 1)
    const auto a = hq::quantize_rtn(w, qc(3, 8));
    const auto b = hq::quantize_rtn(w2, qc(3, 8));
    for (std::size_t r = 0; r < 16; ++r)
        for (std::size_t c = 0; c < 4; ++c) {
            if (a.group_index(r, c) == a.group_index(2, 1)) continue;
            EXPECT_EQ(a.codes()[r * 4 + c], b.codes()[r * 4 + c]);
        }
    for (std::size_t g = 0; g < a.scales().size(); ++g) {
        if (g == a.group_index(2, 1)) continue;
        EXPECT_EQ(a.scales()[g], b.scales()[g]);
        EXPECT_EQ(a.zero_points()[g], b.zero_points()[g]);
    }
}

TEST(Codec, ConstructorValidates) {
    using hq::ErrorCode;
    auto code = [](auto&& fn) {
        try {
            fn();
        } catch (const hq::Error& e) {
            return e.code();
        }
        return ErrorCode::NonFiniteActivation;
    };
    EXPECT_EQ(code([] { GroupQuantTensor(1, 1, 2, 1, false, {4}, {1.0}, {0.0}); }), ErrorCode::InvalidConfig);
    EXPECT_EQ(code([] { GroupQuantTensor(1, 1, 9, 1, false, {0}, {1.0}, {0.0}); }), ErrorCode::InvalidConfig);
    EXPECT_EQ(code([] { GroupQuantTensor(1, 2, 4, 1, false, {0}, {1.0}, {0.0}); }), ErrorCode::DimensionMismatch);
    EXPECT_EQ(code([] { GroupQuantTensor(1, 1, 4, 1, false, {0}, {-1.0}, {0.0}); }), ErrorCode::NonFinite);
    EXPECT_EQ(code([] { hq::quantize_rtn(Matrix(2, 2), qc(1, 4)); }), ErrorCode::InvalidConfig);
}

TEST(Packing, RoundTripAllWidths) {
    std::mt19937_64 rng(11);
    for (int bits = 2; bits <= 8; ++bits) {
        for (bool sym : {false, true}) {
            std::uniform_int_distribution<int> d(hq::code_min(bits, sym), hq::code_max(bits, sym));
            std::vector<std::int32_t> codes(37);
            for (auto& c : codes) c = d(rng);
            const auto packed = hq::pack_codes(codes, bits, sym);
            EXPECT_EQ(packed.size(), (codes.size() * bits + 7) / 8);
            EXPECT_EQ(hq::unpack_codes(packed, codes.size(), bits, sym), codes);
        }
    }
}

TEST(Packing, LittleEndianBitOrder) {
    // 4-bit asymmetric codes 1, 2 -> one byte 0x21.
    const std::vector<std::int32_t> codes{1, 2};
    const auto packed = hq::pack_codes(codes, 4, false);
    ASSERT_EQ(packed.size(), 1u);
    EXPECT_EQ(packed[0], 0x21);
}

TEST(ActivationQuant, OnGridIsIdentity) {
    Matrix x(2, 3);
    x(0, 0) = 127.0 * 0.01;
    x(0, 1) = -3.0 * 0.01;
    x(1, 2) = 64.0 * 0.01;
    EXPECT_LT(hq::max_abs_diff(hq::quantize_activations(x, 8), x), 1e-15);
}

TEST(ActivationQuant, GaussianErrorBelowScale) {
    std::mt19937_64 rng(12);
    const Matrix x = random_matrix(1024, 64, rng);
    const double s = hq::activation_scale(x, 8);
    const Matrix q = hq::quantize_activations(x, 8);
    double mean = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) mean += std::abs(x.values()[i] - q.values()[i]);
    EXPECT_LT(mean / static_cast<double>(x.size()), s);
}

TEST(ActivationQuant, MatchesScalarOracle) {
    std::mt19937_64 rng(13);
    const Matrix x = random_matrix(50, 7, rng, 3.0);
    for (int bits = 4; bits <= 8; ++bits) {
        double max_abs = 0.0;
        for (double v : x.values()) max_abs = std::max(max_abs, std::abs(v));
        const double qmax = std::pow(2.0, bits - 1) - 1.0;
        const double s = max_abs / qmax;
        const Matrix q = hq::quantize_activations(x, bits);
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double code = std::clamp(std::round(x.values()[i] / s), -qmax - 1.0, qmax);
            EXPECT_EQ(q.values()[i], code * s);
        }
    }
}

TEST(ActivationQuant, RejectsOutOfRangeBits) {
    EXPECT_THROW(hq::quantize_activations(Matrix(2, 2, 1.0), 3), hq::Error);
    EXPECT_THROW(hq::quantize_activations(Matrix(2, 2, 1.0), 9), hq::Error);
}

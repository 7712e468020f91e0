#include "hq/quant_codec.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hq/error.hpp"

namespace hq {

void QuantConfig::validate() const {
    if (bits < 2 || bits > 8) {
        fail(ErrorCode::InvalidConfig, "bits must be in [2, 8], got " + std::to_string(bits));
    }
    if (group_size < 1) fail(ErrorCode::InvalidConfig, "group_size must be >= 1");
    if (act_bits && (*act_bits < 4 || *act_bits > 8)) {
        fail(ErrorCode::InvalidConfig, "act_bits must be in [4, 8], got " + std::to_string(*act_bits));
    }
}

std::size_t QuantConfig::effective_group(std::size_t input_dim) const noexcept {
    return std::max<std::size_t>(1, std::min(group_size, input_dim));
}

int code_min(int bits, bool symmetric) noexcept { return symmetric ? -(1 << (bits - 1)) : 0; }

int code_max(int bits, bool symmetric) noexcept {
    return symmetric ? (1 << (bits - 1)) - 1 : (1 << bits) - 1;
}

GroupParams compute_group_params(std::span<const double> values, int bits, bool symmetric) {
    GroupParams p;
    if (values.empty()) return p;
    if (symmetric) {
        double max_abs = 0.0;
        for (double v : values) max_abs = std::max(max_abs, std::abs(v));
        if (max_abs == 0.0) return p;
        p.scale = max_abs / static_cast<double>(code_max(bits, true));
        return p;
    }
    const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
    const double lo = *lo_it;
    const double hi = *hi_it;
    if (hi == lo) {
        // Constant group: any positive scale reproduces it with code 0.
        if (lo == 0.0) return p;
        p.scale = std::abs(lo);
        p.zero_point = lo / p.scale;
        return p;
    }
    p.scale = (hi - lo) / static_cast<double>(code_max(bits, false));
    p.zero_point = lo / p.scale;
    return p;
}

std::int32_t quantize_value(double w, const GroupParams& p, int bits, bool symmetric) noexcept {
    if (p.scale == 0.0) return 0;
    const double q = std::round(w / p.scale - p.zero_point);
    const double lo = code_min(bits, symmetric);
    const double hi = code_max(bits, symmetric);
    return static_cast<std::int32_t>(std::clamp(q, lo, hi));
}

GroupQuantTensor::GroupQuantTensor(std::size_t rows, std::size_t cols, int bits,
                                   std::size_t group_size, bool symmetric,
                                   std::vector<std::int32_t> codes, std::vector<double> scales,
                                   std::vector<double> zero_points)
    : rows_(rows),
      cols_(cols),
      bits_(bits),
      group_size_(group_size),
      symmetric_(symmetric),
      codes_(std::move(codes)),
      scales_(std::move(scales)),
      zero_points_(std::move(zero_points)) {
    if (bits < 2 || bits > 8) fail(ErrorCode::InvalidConfig, "tensor bits out of range");
    if (group_size < 1) fail(ErrorCode::InvalidConfig, "tensor group_size < 1");
    if (codes_.size() != rows * cols) fail(ErrorCode::DimensionMismatch, "codes length");
    const std::size_t groups = row_groups() * cols;
    if (scales_.size() != groups || zero_points_.size() != groups) {
        fail(ErrorCode::DimensionMismatch, "scale/zero-point count != group count");
    }
    const int lo = code_min(bits, symmetric);
    const int hi = code_max(bits, symmetric);
    for (auto c : codes_) {
        if (c < lo || c > hi) fail(ErrorCode::InvalidConfig, "code outside representable range");
    }
    for (std::size_t g = 0; g < groups; ++g) {
        if (!std::isfinite(scales_[g]) || scales_[g] < 0.0 || !std::isfinite(zero_points_[g])) {
            fail(ErrorCode::NonFinite, "invalid group scale");
        }
        if (symmetric && zero_points_[g] != 0.0) {
            fail(ErrorCode::InvalidConfig, "symmetric tensor with non-zero zero point");
        }
    }
}

GroupQuantTensor quantize_rtn(const Matrix& w, const QuantConfig& cfg) {
    cfg.validate();
    if (!w.all_finite()) fail(ErrorCode::NonFinite, "quantize_rtn input");
    const std::size_t rows = w.rows();
    const std::size_t cols = w.cols();
    const std::size_t g = cfg.effective_group(rows);
    const std::size_t row_groups = (rows + g - 1) / g;

    std::vector<std::int32_t> codes(rows * cols);
    std::vector<double> scales(row_groups * cols);
    std::vector<double> zps(row_groups * cols);
    std::vector<double> buf;
    for (std::size_t gr = 0; gr < row_groups; ++gr) {
        const std::size_t r0 = gr * g;
        const std::size_t r1 = std::min(rows, r0 + g);
        for (std::size_t c = 0; c < cols; ++c) {
            buf.clear();
            for (std::size_t r = r0; r < r1; ++r) buf.push_back(w(r, c));
            const GroupParams p = compute_group_params(buf, cfg.bits, cfg.symmetric);
            scales[gr * cols + c] = p.scale;
            zps[gr * cols + c] = p.zero_point;
            for (std::size_t r = r0; r < r1; ++r) {
                codes[r * cols + c] = quantize_value(w(r, c), p, cfg.bits, cfg.symmetric);
            }
        }
    }
    return GroupQuantTensor(rows, cols, cfg.bits, g, cfg.symmetric, std::move(codes),
                            std::move(scales), std::move(zps));
}

Matrix dequantize(const GroupQuantTensor& q) {
    Matrix out(q.rows(), q.cols());
    const auto codes = q.codes();
    for (std::size_t r = 0; r < q.rows(); ++r) {
        for (std::size_t c = 0; c < q.cols(); ++c) {
            out(r, c) = dequantize_value(codes[r * q.cols() + c], q.params(q.group_index(r, c)));
        }
    }
    return out;
}

double activation_scale(const Matrix& x, int act_bits) {
    if (act_bits < 4 || act_bits > 8) fail(ErrorCode::InvalidConfig, "act_bits must be in [4, 8]");
    double max_abs = 0.0;
    for (double v : x.values()) max_abs = std::max(max_abs, std::abs(v));
    return max_abs / static_cast<double>(code_max(act_bits, true));
}

Matrix quantize_activations(const Matrix& x, int act_bits) {
    const double scale = activation_scale(x, act_bits);
    Matrix out = x;
    if (scale == 0.0) return out;
    const double lo = code_min(act_bits, true);
    const double hi = code_max(act_bits, true);
    for (double& v : out.values()) v = std::clamp(std::round(v / scale), lo, hi) * scale;
    return out;
}

std::vector<std::uint8_t> pack_codes(std::span<const std::int32_t> codes, int bits, bool symmetric) {
    const int offset = code_min(bits, symmetric);
    std::vector<std::uint8_t> out((codes.size() * static_cast<std::size_t>(bits) + 7) / 8, 0);
    std::size_t bit = 0;
    for (auto code : codes) {
        const auto u = static_cast<std::uint32_t>(code - offset);
        for (int b = 0; b < bits; ++b, ++bit) {
            if ((u >> b) & 1u) out[bit / 8] |= static_cast<std::uint8_t>(1u << (bit % 8));
        }
    }
    return out;
}

std::vector<std::int32_t> unpack_codes(std::span<const std::uint8_t> packed, std::size_t count,
                                       int bits, bool symmetric) {
    if (packed.size() * 8 < count * static_cast<std::size_t>(bits)) {
        fail(ErrorCode::TruncatedFile, "packed code buffer too short");
    }
    const int offset = code_min(bits, symmetric);
    std::vector<std::int32_t> out(count);
    std::size_t bit = 0;
    for (std::size_t i = 0; i < count; ++i) {
        std::uint32_t u = 0;
        for (int b = 0; b < bits; ++b, ++bit) {
            u |= static_cast<std::uint32_t>((packed[bit / 8] >> (bit % 8)) & 1u) << b;
        }
        out[i] = static_cast<std::int32_t>(u) + offset;
    }
    return out;
}

}  // namespace hq

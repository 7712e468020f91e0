#pragma once

// Group-wise uniform integer quantization of weight matrices.
//
// Weights use the y = x * W layout (rows = input channels), and groups run
// down the input dimension: group (gr, c) covers rows [gr*g, min((gr+1)*g, rows))
// of column c. A trailing partial group is allowed.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "hq/numerics.hpp"

namespace hq {

struct QuantConfig {
    int bits = 4;
    std::size_t group_size = 128;
    bool symmetric = false;
    /// Per-tensor activation fake-quantization width; unset keeps activations FP.
    std::optional<int> act_bits;

    void validate() const;
    /// min(group_size, input_dim), at least 1.
    std::size_t effective_group(std::size_t input_dim) const noexcept;

    friend bool operator==(const QuantConfig&, const QuantConfig&) = default;
};

/// Scale and zero point for one group. Dequantized value = (code + zero_point) * scale.
struct GroupParams {
    double scale = 0.0;
    double zero_point = 0.0;
};

int code_min(int bits, bool symmetric) noexcept;
int code_max(int bits, bool symmetric) noexcept;

GroupParams compute_group_params(std::span<const double> values, int bits, bool symmetric);
std::int32_t quantize_value(double w, const GroupParams& p, int bits, bool symmetric) noexcept;
inline double dequantize_value(std::int32_t code, const GroupParams& p) noexcept {
    return (static_cast<double>(code) + p.zero_point) * p.scale;
}

class GroupQuantTensor {
public:
    GroupQuantTensor() = default;
    /// Validates code ranges and scale positivity.
    GroupQuantTensor(std::size_t rows, std::size_t cols, int bits, std::size_t group_size,
                     bool symmetric, std::vector<std::int32_t> codes, std::vector<double> scales,
                     std::vector<double> zero_points);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    int bits() const noexcept { return bits_; }
    std::size_t group_size() const noexcept { return group_size_; }
    bool symmetric() const noexcept { return symmetric_; }
    std::size_t row_groups() const noexcept { return (rows_ + group_size_ - 1) / group_size_; }
    std::size_t group_index(std::size_t r, std::size_t c) const noexcept {
        return (r / group_size_) * cols_ + c;
    }

    std::span<const std::int32_t> codes() const noexcept { return codes_; }
    std::span<const double> scales() const noexcept { return scales_; }
    std::span<const double> zero_points() const noexcept { return zero_points_; }
    GroupParams params(std::size_t group) const noexcept {
        return {scales_[group], zero_points_[group]};
    }

    friend bool operator==(const GroupQuantTensor&, const GroupQuantTensor&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    int bits_ = 0;
    std::size_t group_size_ = 1;
    bool symmetric_ = false;
    std::vector<std::int32_t> codes_;
    std::vector<double> scales_;
    std::vector<double> zero_points_;
};

/// Round-to-nearest quantization with per-group min/max (or max-abs) ranges.
GroupQuantTensor quantize_rtn(const Matrix& w, const QuantConfig& cfg);
Matrix dequantize(const GroupQuantTensor& q);

/// Per-tensor symmetric quantize-dequantize of activations.
Matrix quantize_activations(const Matrix& x, int act_bits);
/// Scale used by quantize_activations for x (max|x| / (2^(b-1)-1)).
double activation_scale(const Matrix& x, int act_bits);

/// Little-endian bit packing of codes shifted to [0, 2^bits). Used by the
/// hybrid-model container.
std::vector<std::uint8_t> pack_codes(std::span<const std::int32_t> codes, int bits, bool symmetric);
std::vector<std::int32_t> unpack_codes(std::span<const std::uint8_t> packed, std::size_t count,
                                       int bits, bool symmetric);

}  // namespace hq

#pragma once

// The candidate pool: four post-training quantizers behind one interface.
// Every method consumes (LayerWeights, ProjectionInputs, MethodConfig) and
// yields a QuantizedLayer that model::forward_layer can execute.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hq/model.hpp"
#include "hq/quant_codec.hpp"

namespace hq {

enum class MethodKind { RTN, GPTQ, AWQ, SmoothQuant };

std::string_view method_name(MethodKind k) noexcept;
MethodKind parse_method(std::string_view s);

std::vector<double> default_awq_alpha_grid();

struct MethodConfig {
    MethodKind kind = MethodKind::GPTQ;
    QuantConfig qcfg;
    double gptq_damping = 0.01;
    std::vector<double> awq_alpha_grid = default_awq_alpha_grid();
    double sq_alpha = 0.5;
    /// When false the reparameterized weights are kept in full precision;
    /// used to check that scaling methods are exact transforms.
    bool quantize_weights = true;

    void validate() const;
    /// Stable identifier, e.g. "gptq" or "awq".
    std::string label() const { return std::string(method_name(kind)); }

    friend bool operator==(const MethodConfig&, const MethodConfig&) = default;
};

using CandidatePool = std::vector<MethodConfig>;

/// Parses "gptq,awq,smoothquant" into a pool sharing one QuantConfig.
CandidatePool parse_pool(std::string_view text, const QuantConfig& qcfg);
CandidatePool default_pool(const QuantConfig& qcfg);

class QuantizedLayer {
public:
    QuantizedLayer() = default;
    QuantizedLayer(MethodKind method, std::array<GroupQuantTensor, kProjectionCount> weights,
                   std::array<std::vector<double>, kProjectionCount> act_scales,
                   std::vector<double> norm_attn, std::vector<double> norm_ffn,
                   std::optional<int> act_bits);

    /// A layer carrying dense (unquantized) weights, tagged with a method.
    static QuantizedLayer dense(MethodKind method, const LayerWeights& weights,
                                std::array<std::vector<double>, kProjectionCount> act_scales = {},
                                std::optional<int> act_bits = std::nullopt);

    MethodKind method() const noexcept { return method_; }
    std::optional<int> act_bits() const noexcept { return act_bits_; }
    bool has_codes(Projection p) const noexcept { return !is_dense_[idx(p)]; }
    const GroupQuantTensor& codes(Projection p) const noexcept { return tensors_[idx(p)]; }
    /// Per-input-channel multipliers (empty when none).
    std::span<const double> act_scale(Projection p) const noexcept { return act_scales_[idx(p)]; }
    /// Weight matrix the layer actually runs with.
    const Matrix& effective_weight(Projection p) const noexcept { return effective_[idx(p)]; }
    std::span<const double> norm_attn() const noexcept { return norm_attn_; }
    std::span<const double> norm_ffn() const noexcept { return norm_ffn_; }

    /// Replaces a projection with a real-valued matrix, dropping its codes.
    void replace_dense(Projection p, Matrix weight);
    /// Replaces a projection with new codes; activation scales are kept.
    void replace_codes(Projection p, GroupQuantTensor codes);
    /// Parameter-weighted mean bit width over quantized projections.
    double mean_bits() const;
    std::size_t parameter_count() const;

    LayerView view() const;

    friend bool operator==(const QuantizedLayer&, const QuantizedLayer&) = default;

private:
    static std::size_t idx(Projection p) noexcept { return static_cast<std::size_t>(p); }

    MethodKind method_ = MethodKind::RTN;
    std::array<GroupQuantTensor, kProjectionCount> tensors_;
    std::array<bool, kProjectionCount> is_dense_{};
    std::array<std::vector<double>, kProjectionCount> act_scales_;
    std::array<Matrix, kProjectionCount> effective_;
    std::vector<double> norm_attn_;
    std::vector<double> norm_ffn_;
    std::optional<int> act_bits_;
};

inline LayerActivations forward_layer(const QuantizedLayer& layer, const ModelConfig& cfg,
                                      const Matrix& input, const SequenceLayout& layout,
                                      const LayerForwardOptions& opts = {}) {
    return forward_layer(layer.view(), cfg, input, layout, opts);
}

QuantizedLayer apply_rtn(const LayerWeights& layer, const MethodConfig& cfg);
QuantizedLayer apply_gptq(const LayerWeights& layer, const ProjectionInputs& calib,
                          const MethodConfig& cfg);
QuantizedLayer apply_awq(const LayerWeights& layer, const ProjectionInputs& calib,
                         const MethodConfig& cfg);
QuantizedLayer apply_smoothquant(const LayerWeights& layer, const ProjectionInputs& calib,
                                 const MethodConfig& cfg);

/// Dispatches on cfg.kind. The only place method kinds are branched on.
QuantizedLayer quantize_layer(const LayerWeights& layer, const ProjectionInputs& calib,
                              const MethodConfig& cfg);

/// Process-wide count of quantize_layer invocations.
std::uint64_t quantize_invocations() noexcept;

// Per-projection building blocks, exposed for tests and diagnostics.

/// GPTQ for one weight (in x out) against calibration inputs (n x in).
GroupQuantTensor gptq_quantize(const Matrix& w, const Matrix& x, const QuantConfig& qcfg,
                               double damping);

struct ScaledProjection {
    Matrix scaled_weight;             // diag(s) * W
    std::vector<double> input_scale;  // 1 / s
    double alpha = 0.0;
};

/// AWQ scale search for one projection. Loss is output MSE on x.
ScaledProjection awq_search(const Matrix& w, const Matrix& x, const QuantConfig& qcfg,
                            std::span<const double> alpha_grid);
std::vector<double> awq_scales(std::span<const double> mean_abs_act, double alpha);
ScaledProjection smoothquant_scales(const Matrix& w, const Matrix& x, double alpha);

/// ||x W - x_in_scaled W_hat||_F^2 / (n * out) computed through the Gram x^T x.
double output_mse_via_gram(const Matrix& gram, std::size_t n, const Matrix& w,
                           const Matrix& w_effective);

}  // namespace hq

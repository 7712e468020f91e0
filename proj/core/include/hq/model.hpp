#pragma once

// Toy Llama-style decoder: pre-RMSNorm, rotary multi-head attention, SwiGLU FFN.
// The forward math is written out in docs/forward_math.md; any
// implementation that exchanges HQTM files with this one must follow it.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "hq/numerics.hpp"

namespace hq {

using TokenId = std::uint32_t;
using TokenSequence = std::vector<TokenId>;

struct ModelConfig {
    std::size_t d_model = 64;
    std::size_t d_ff = 172;
    std::size_t n_heads = 4;
    std::size_t n_layers = 8;
    std::size_t vocab = 256;
    std::size_t max_seq = 256;
    double rope_base = 10000.0;
    double norm_eps = 1e-5;

    std::size_t head_dim() const noexcept { return d_model / n_heads; }
    void validate() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class Projection : std::size_t { Q = 0, K, V, O, Gate, Up, Down };
inline constexpr std::size_t kProjectionCount = 7;
inline constexpr std::array<Projection, kProjectionCount> kAllProjections = {
    Projection::Q,    Projection::K,  Projection::V,   Projection::O,
    Projection::Gate, Projection::Up, Projection::Down};

std::string_view projection_name(Projection p) noexcept;
/// (input_dim, output_dim) of a projection under a config.
std::pair<std::size_t, std::size_t> projection_shape(const ModelConfig& cfg, Projection p) noexcept;

struct LayerWeights {
    std::array<Matrix, kProjectionCount> proj;  // indexed by Projection
    std::vector<double> norm_attn;
    std::vector<double> norm_ffn;

    Matrix& operator[](Projection p) noexcept { return proj[static_cast<std::size_t>(p)]; }
    const Matrix& operator[](Projection p) const noexcept {
        return proj[static_cast<std::size_t>(p)];
    }
    void validate(const ModelConfig& cfg) const;

    friend bool operator==(const LayerWeights&, const LayerWeights&) = default;
};

struct TransformerModel {
    ModelConfig config;
    Matrix embedding;               // vocab x d_model
    std::vector<double> final_norm; // d_model
    Matrix lm_head;                 // d_model x vocab
    std::vector<LayerWeights> layers;

    void validate() const;
    friend bool operator==(const TransformerModel&, const TransformerModel&) = default;
};

/// Non-owning executable form of a layer. Both full-precision weights and
/// dequantized layers are run through this view.
struct ProjectionView {
    const Matrix* weight = nullptr;
    /// Per-input-channel multipliers applied to activations before the
    /// product; empty means none.
    std::span<const double> input_scale;
};

struct LayerView {
    std::array<ProjectionView, kProjectionCount> proj;
    std::span<const double> norm_attn;
    std::span<const double> norm_ffn;
    /// Activation fake-quantization at every projection input.
    std::optional<int> act_bits;
};

LayerView view_of(const LayerWeights& w);

/// Flattened batch layout: consecutive rows belong to sequences of these
/// lengths; causal attention and positions restart at each boundary.
struct SequenceLayout {
    std::vector<std::size_t> lengths;

    std::size_t total() const noexcept;
    static SequenceLayout of(std::span<const TokenSequence> seqs);
    friend bool operator==(const SequenceLayout&, const SequenceLayout&) = default;
};

enum class CapturePoint { FfnOutput, LayerOutput, FfnIntermediate };
std::string_view capture_point_name(CapturePoint p) noexcept;
CapturePoint parse_capture_point(std::string_view s);

struct LayerActivations {
    Matrix layer_input;
    Matrix ffn_out_preres;   // w_down output, before the residual add
    Matrix layer_output;
    Matrix ffn_intermediate; // SwiGLU hidden (d_ff wide); filled only on request

    const Matrix& at(CapturePoint p) const;
};

/// Inputs seen by each projection, the calibration data quantizers fit to.
struct ProjectionInputs {
    Matrix attn_in;      // normed input to q/k/v
    Matrix attn_context; // attention mix, input to o
    Matrix ffn_in;       // normed input to gate/up
    Matrix ffn_hidden;   // SwiGLU hidden, input to down

    const Matrix& for_projection(Projection p) const noexcept;
};

struct LayerForwardOptions {
    bool keep_intermediate = false;
    ProjectionInputs* projection_inputs = nullptr;
};

LayerActivations forward_layer(const LayerView& layer, const ModelConfig& cfg, const Matrix& input,
                               const SequenceLayout& layout, const LayerForwardOptions& opts = {});

inline LayerActivations forward_layer(const LayerWeights& layer, const ModelConfig& cfg,
                                      const Matrix& input, const SequenceLayout& layout,
                                      const LayerForwardOptions& opts = {}) {
    return forward_layer(view_of(layer), cfg, input, layout, opts);
}

/// Token ids -> embedding rows; validates ids and lengths.
Matrix embed_tokens(const ModelConfig& cfg, const Matrix& embedding,
                    std::span<const TokenSequence> seqs);

Matrix rms_norm(const Matrix& x, std::span<const double> gain, double eps);

struct ModelForward {
    Matrix logits;
    std::vector<LayerActivations> layers;  // empty when capture is off
    SequenceLayout layout;
};

struct ModelHeadView {
    const ModelConfig* config = nullptr;
    const Matrix* embedding = nullptr;
    std::span<const double> final_norm;
    const Matrix* lm_head = nullptr;
};

ModelForward forward_stack(const ModelHeadView& head, std::span<const LayerView> layers,
                           std::span<const TokenSequence> seqs, bool capture,
                           bool keep_intermediate = false);

ModelForward forward_model(const TransformerModel& model, std::span<const TokenSequence> seqs,
                           bool capture = true, bool keep_intermediate = false);

ModelHeadView head_of(const TransformerModel& model);

struct SampledBatch {
    std::vector<TokenSequence> sequences;
    /// Logits produced at every position while decoding, rows laid out as
    /// in forward_model over `sequences`.
    Matrix logits;
};

/// Ancestral sampling with a cached K/V decoder. The first token of each
/// sequence is uniform over the vocabulary; later tokens are drawn from
/// softmax(logits / temperature).
SampledBatch sample_sequences(const TransformerModel& model, std::size_t n, std::size_t len,
                              std::uint64_t seed, double temperature = 1.0);

struct InitOptions {
    std::uint64_t seed = 0;
    /// Residual channels whose embedding columns are amplified, mimicking
    /// the outlier features of trained decoders.
    std::size_t outlier_channels = 0;
    double outlier_scale = 8.0;
    /// Log-normal spread of the per-layer RMSNorm gains (0 keeps them at 1),
    /// giving projection inputs uneven per-channel scales.
    double gain_spread = 0.0;
};

/// Gaussian init: projections N(0, 1/fan_in), embedding N(0, 1),
/// lm_head N(0, 1/d_model), norm gains 1 (or exp(gain_spread * N(0, 1))).
/// Values rounded to real32.
TransformerModel random_model(const ModelConfig& cfg, const InitOptions& opts);

/// 64-bit FNV-1a over every weight, for report fingerprints and
/// mutation checks.
std::uint64_t fingerprint(const TransformerModel& model);

inline constexpr std::uint32_t kHqtmVersion = 1;

void save_model(const TransformerModel& model, const std::filesystem::path& path);
TransformerModel load_model(const std::filesystem::path& path);

/// Little-endian u32 token file; documents separated by vocab-1.
void write_token_file(const std::filesystem::path& path, std::span<const TokenSequence> docs,
                      TokenId separator);
std::vector<TokenId> read_token_file(const std::filesystem::path& path);

}  // namespace hq

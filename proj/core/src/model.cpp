#include "hq/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include <Eigen/Core>

#include "detail/container.hpp"
#include "detail/model_io.hpp"
#include "hq/error.hpp"
#include "hq/quant_codec.hpp"

namespace hq {

namespace {

constexpr char kModelMagic[5] = "HQTM";

void require(bool ok, ErrorCode code, const std::string& msg) {
    if (!ok) fail(code, msg);
}

bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

Matrix apply_projection(const ProjectionView& p, const Matrix& x, std::optional<int> act_bits) {
    if (p.input_scale.empty() && !act_bits) return matmul(x, *p.weight);
    Matrix in = x;
    if (!p.input_scale.empty()) {
        if (p.input_scale.size() != in.cols()) {
            fail(ErrorCode::DimensionMismatch, "input scale length != activation width");
        }
        for (std::size_t r = 0; r < in.rows(); ++r) {
            auto row = in.row(r);
            for (std::size_t c = 0; c < row.size(); ++c) row[c] *= p.input_scale[c];
        }
    }
    if (act_bits) in = quantize_activations(in, *act_bits);
    return matmul(in, *p.weight);
}

// In-place rotary embedding over every head, rotate-half pairing (i, i + hd/2).
// Row r sits at position pos(r).
template <class PositionOf>
void rope_rows(Matrix& x, const ModelConfig& cfg, PositionOf pos_of) {
    const std::size_t hd = cfg.head_dim();
    const std::size_t half = hd / 2;
    std::vector<double> inv_freq(half);
    for (std::size_t i = 0; i < half; ++i) {
        inv_freq[i] = std::pow(cfg.rope_base, -2.0 * static_cast<double>(i) / static_cast<double>(hd));
    }
    for (std::size_t row = 0; row < x.rows(); ++row) {
        const auto pos = static_cast<double>(pos_of(row));
        auto r = x.row(row);
        for (std::size_t i = 0; i < half; ++i) {
            const double angle = pos * inv_freq[i];
            const double c = std::cos(angle);
            const double s = std::sin(angle);
            for (std::size_t h = 0; h < cfg.n_heads; ++h) {
                double& a = r[h * hd + i];
                double& b = r[h * hd + i + half];
                const double x1 = a;
                const double x2 = b;
                a = x1 * c - x2 * s;
                b = x1 * s + x2 * c;
            }
        }
    }
}

void apply_rope(Matrix& x, const ModelConfig& cfg, const SequenceLayout& layout) {
    std::vector<std::size_t> positions;
    positions.reserve(x.rows());
    for (std::size_t len : layout.lengths) {
        for (std::size_t p = 0; p < len; ++p) positions.push_back(p);
    }
    rope_rows(x, cfg, [&](std::size_t r) { return positions[r]; });
}

Matrix causal_attention(const Matrix& q, const Matrix& k, const Matrix& v, const ModelConfig& cfg,
                        const SequenceLayout& layout) {
    using Block = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>,
                             0, Eigen::OuterStride<>>;
    using OutBlock = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>, 0,
                                Eigen::OuterStride<>>;
    const std::size_t hd = cfg.head_dim();
    const auto d = static_cast<Eigen::Index>(q.cols());
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
    Matrix out(q.rows(), q.cols());
    Eigen::MatrixXd scores;
    std::size_t offset = 0;
    for (std::size_t len : layout.lengths) {
        const auto n = static_cast<Eigen::Index>(len);
        for (std::size_t h = 0; h < cfg.n_heads; ++h) {
            const std::size_t c0 = h * hd;
            const auto w = static_cast<Eigen::Index>(hd);
            const Block qh(&q(offset, c0), n, w, Eigen::OuterStride<>(d));
            const Block kh(&k(offset, c0), n, w, Eigen::OuterStride<>(d));
            const Block vh(&v(offset, c0), n, w, Eigen::OuterStride<>(d));
            OutBlock oh(&out(offset, c0), n, w, Eigen::OuterStride<>(d));
            scores.noalias() = (qh * kh.transpose()) * inv_sqrt;
            for (Eigen::Index t = 0; t < n; ++t) {
                const double max_score = scores.row(t).head(t + 1).maxCoeff();
                double denom = 0.0;
                for (Eigen::Index s = 0; s <= t; ++s) {
                    scores(t, s) = std::exp(scores(t, s) - max_score);
                    denom += scores(t, s);
                }
                scores.row(t).head(t + 1) /= denom;
                scores.row(t).tail(n - t - 1).setZero();
            }
            oh.noalias() = scores * vh;
        }
        offset += len;
    }
    return out;
}

double silu(double x) { return x / (1.0 + std::exp(-x)); }

std::string layer_tensor(std::size_t l, std::string_view what) {
    return "layers." + std::to_string(l) + "." + std::string(what);
}

void mix(std::uint64_t& h, const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
}

void mix_values(std::uint64_t& h, std::span<const double> v) { mix(h, v.data(), v.size() * 8); }

}  // namespace

void ModelConfig::validate() const {
    require(n_layers >= 1, ErrorCode::InvalidConfig, "n_layers must be >= 1");
    require(d_model >= 2 && n_heads >= 1 && d_model % n_heads == 0, ErrorCode::InvalidConfig,
            "d_model must be divisible by n_heads");
    require(head_dim() % 2 == 0, ErrorCode::InvalidConfig, "head_dim must be even for rotary");
    require(d_ff >= 1 && vocab >= 2 && max_seq >= 1, ErrorCode::InvalidConfig,
            "d_ff, vocab, max_seq must be positive (vocab >= 2)");
    require(rope_base > 0.0 && norm_eps > 0.0, ErrorCode::InvalidConfig,
            "rope_base and norm_eps must be positive");
}

std::string_view projection_name(Projection p) noexcept {
    switch (p) {
        case Projection::Q: return "w_q";
        case Projection::K: return "w_k";
        case Projection::V: return "w_v";
        case Projection::O: return "w_o";
        case Projection::Gate: return "w_gate";
        case Projection::Up: return "w_up";
        case Projection::Down: return "w_down";
    }
    return "?";
}

std::pair<std::size_t, std::size_t> projection_shape(const ModelConfig& cfg, Projection p) noexcept {
    switch (p) {
        case Projection::Gate:
        case Projection::Up: return {cfg.d_model, cfg.d_ff};
        case Projection::Down: return {cfg.d_ff, cfg.d_model};
        default: return {cfg.d_model, cfg.d_model};
    }
}

void LayerWeights::validate(const ModelConfig& cfg) const {
    for (Projection p : kAllProjections) {
        const auto [in, out] = projection_shape(cfg, p);
        const Matrix& m = (*this)[p];
        require(m.rows() == in && m.cols() == out, ErrorCode::DimensionMismatch,
                std::string(projection_name(p)) + " shape disagrees with config");
        require(m.all_finite(), ErrorCode::NonFinite, std::string(projection_name(p)));
    }
    require(norm_attn.size() == cfg.d_model && norm_ffn.size() == cfg.d_model,
            ErrorCode::DimensionMismatch, "norm gain length != d_model");
    require(all_finite(norm_attn) && all_finite(norm_ffn), ErrorCode::NonFinite, "norm gains");
}

void TransformerModel::validate() const {
    config.validate();
    require(layers.size() == config.n_layers, ErrorCode::DimensionMismatch,
            "layer count != n_layers");
    require(embedding.rows() == config.vocab && embedding.cols() == config.d_model,
            ErrorCode::DimensionMismatch, "embedding shape");
    require(lm_head.rows() == config.d_model && lm_head.cols() == config.vocab,
            ErrorCode::DimensionMismatch, "lm_head shape");
    require(final_norm.size() == config.d_model, ErrorCode::DimensionMismatch, "final_norm");
    require(embedding.all_finite() && lm_head.all_finite() && all_finite(final_norm),
            ErrorCode::NonFinite, "model head tensors");
    for (const auto& l : layers) l.validate(config);
}

LayerView view_of(const LayerWeights& w) {
    LayerView v;
    for (Projection p : kAllProjections) v.proj[static_cast<std::size_t>(p)].weight = &w[p];
    v.norm_attn = w.norm_attn;
    v.norm_ffn = w.norm_ffn;
    return v;
}

std::size_t SequenceLayout::total() const noexcept {
    return std::accumulate(lengths.begin(), lengths.end(), std::size_t{0});
}

SequenceLayout SequenceLayout::of(std::span<const TokenSequence> seqs) {
    SequenceLayout l;
    l.lengths.reserve(seqs.size());
    for (const auto& s : seqs) l.lengths.push_back(s.size());
    return l;
}

std::string_view capture_point_name(CapturePoint p) noexcept {
    switch (p) {
        case CapturePoint::FfnOutput: return "ffn-output";
        case CapturePoint::LayerOutput: return "layer-output";
        case CapturePoint::FfnIntermediate: return "ffn-intermediate";
    }
    return "?";
}

CapturePoint parse_capture_point(std::string_view s) {
    if (s == "ffn-output" || s == "ffn-out") return CapturePoint::FfnOutput;
    if (s == "layer-output") return CapturePoint::LayerOutput;
    if (s == "ffn-intermediate") return CapturePoint::FfnIntermediate;
    fail(ErrorCode::InvalidConfig, "unknown capture point '" + std::string(s) + "'");
}

const Matrix& LayerActivations::at(CapturePoint p) const {
    switch (p) {
        case CapturePoint::FfnOutput: return ffn_out_preres;
        case CapturePoint::LayerOutput: return layer_output;
        case CapturePoint::FfnIntermediate:
            if (ffn_intermediate.empty()) {
                fail(ErrorCode::InvalidConfig, "ffn-intermediate capture was not requested");
            }
            return ffn_intermediate;
    }
    return ffn_out_preres;
}

const Matrix& ProjectionInputs::for_projection(Projection p) const noexcept {
    switch (p) {
        case Projection::Q:
        case Projection::K:
        case Projection::V: return attn_in;
        case Projection::O: return attn_context;
        case Projection::Gate:
        case Projection::Up: return ffn_in;
        case Projection::Down: return ffn_hidden;
    }
    return attn_in;
}

Matrix rms_norm(const Matrix& x, std::span<const double> gain, double eps) {
    if (gain.size() != x.cols()) fail(ErrorCode::DimensionMismatch, "rms_norm gain length");
    Matrix out(x.rows(), x.cols());
    const double inv_d = 1.0 / static_cast<double>(x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto in = x.row(r);
        double ss = 0.0;
        for (double v : in) ss += v * v;
        if (!std::isfinite(ss)) fail(ErrorCode::NonFiniteActivation, "rms_norm: mean square overflows");
        const double inv_rms = 1.0 / std::sqrt(ss * inv_d + eps);
        auto o = out.row(r);
        for (std::size_t c = 0; c < in.size(); ++c) o[c] = in[c] * inv_rms * gain[c];
    }
    return out;
}

LayerActivations forward_layer(const LayerView& layer, const ModelConfig& cfg, const Matrix& input,
                               const SequenceLayout& layout, const LayerForwardOptions& opts) {
    if (input.cols() != cfg.d_model) {
        fail(ErrorCode::DimensionMismatch, "layer input width " + std::to_string(input.cols()) +
                                               " != d_model " + std::to_string(cfg.d_model));
    }
    if (layout.total() != input.rows()) {
        fail(ErrorCode::DimensionMismatch, "sequence layout does not cover input rows");
    }
    const auto& P = layer.proj;
    auto proj = [&](Projection p, const Matrix& x) {
        return apply_projection(P[static_cast<std::size_t>(p)], x, layer.act_bits);
    };

    Matrix attn_in = rms_norm(input, layer.norm_attn, cfg.norm_eps);
    Matrix q = proj(Projection::Q, attn_in);
    Matrix k = proj(Projection::K, attn_in);
    Matrix v = proj(Projection::V, attn_in);
    apply_rope(q, cfg, layout);
    apply_rope(k, cfg, layout);
    Matrix context = causal_attention(q, k, v, cfg, layout);
    Matrix resid = add(input, proj(Projection::O, context));

    Matrix ffn_in = rms_norm(resid, layer.norm_ffn, cfg.norm_eps);
    Matrix gate = proj(Projection::Gate, ffn_in);
    const Matrix up = proj(Projection::Up, ffn_in);
    auto gv = gate.values();
    auto uv = up.values();
    for (std::size_t i = 0; i < gv.size(); ++i) gv[i] = silu(gv[i]) * uv[i];
    Matrix& hidden = gate;

    LayerActivations act;
    act.ffn_out_preres = proj(Projection::Down, hidden);
    act.layer_output = add(resid, act.ffn_out_preres);
    if (!act.layer_output.all_finite()) {
        fail(ErrorCode::NonFiniteActivation, "layer output contains NaN or Inf");
    }
    act.layer_input = input;
    if (opts.keep_intermediate) act.ffn_intermediate = hidden;
    if (opts.projection_inputs) {
        auto& pi = *opts.projection_inputs;
        pi.attn_in = std::move(attn_in);
        pi.attn_context = std::move(context);
        pi.ffn_in = std::move(ffn_in);
        pi.ffn_hidden = std::move(hidden);
    }
    return act;
}

Matrix embed_tokens(const ModelConfig& cfg, const Matrix& embedding,
                    std::span<const TokenSequence> seqs) {
    std::size_t total = 0;
    for (const auto& s : seqs) {
        if (s.size() > cfg.max_seq) {
            fail(ErrorCode::SequenceTooLong, std::to_string(s.size()) + " > max_seq " +
                                                 std::to_string(cfg.max_seq));
        }
        total += s.size();
    }
    Matrix out(total, cfg.d_model);
    std::size_t row = 0;
    for (const auto& s : seqs) {
        for (TokenId t : s) {
            if (t >= cfg.vocab) {
                fail(ErrorCode::TokenOutOfRange, "token id " + std::to_string(t) + " >= vocab " +
                                                     std::to_string(cfg.vocab));
            }
            auto src = embedding.row(t);
            std::copy(src.begin(), src.end(), out.row(row++).begin());
        }
    }
    return out;
}

ModelForward forward_stack(const ModelHeadView& head, std::span<const LayerView> layers,
                           std::span<const TokenSequence> seqs, bool capture,
                           bool keep_intermediate) {
    const ModelConfig& cfg = *head.config;
    ModelForward out;
    out.layout = SequenceLayout::of(seqs);
    Matrix h = embed_tokens(cfg, *head.embedding, seqs);
    if (capture) out.layers.reserve(layers.size());
    LayerForwardOptions opts;
    opts.keep_intermediate = keep_intermediate;
    for (const auto& layer : layers) {
        LayerActivations act = forward_layer(layer, cfg, h, out.layout, opts);
        h = act.layer_output;
        if (capture) out.layers.push_back(std::move(act));
    }
    out.logits = matmul(rms_norm(h, head.final_norm, cfg.norm_eps), *head.lm_head);
    return out;
}

ModelHeadView head_of(const TransformerModel& model) {
    return {&model.config, &model.embedding, model.final_norm, &model.lm_head};
}

ModelForward forward_model(const TransformerModel& model, std::span<const TokenSequence> seqs,
                           bool capture, bool keep_intermediate) {
    std::vector<LayerView> views;
    views.reserve(model.layers.size());
    for (const auto& l : model.layers) views.push_back(view_of(l));
    return forward_stack(head_of(model), views, seqs, capture, keep_intermediate);
}

SampledBatch sample_sequences(const TransformerModel& model, std::size_t n, std::size_t len,
                              std::uint64_t seed, double temperature) {
    model.validate();
    const ModelConfig& cfg = model.config;
    require(n >= 1 && len >= 1, ErrorCode::InvalidConfig, "sample_sequences needs n, len >= 1");
    require(len <= cfg.max_seq, ErrorCode::SequenceTooLong, "len exceeds max_seq");
    require(std::isfinite(temperature) && temperature > 0.0, ErrorCode::InvalidConfig,
            "temperature must be positive");
    const std::size_t d = cfg.d_model;
    const std::size_t hd = cfg.head_dim();
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<TokenId> first(0, static_cast<TokenId>(cfg.vocab - 1));

    SampledBatch out;
    out.sequences.assign(n, TokenSequence{});
    out.logits = Matrix(n * len, cfg.vocab);
    // Cache row s * len + t holds key/value of sequence s at position t.
    std::vector<Matrix> k_cache(cfg.n_layers, Matrix(n * len, d));
    std::vector<Matrix> v_cache(cfg.n_layers, Matrix(n * len, d));
    std::vector<TokenId> current(n);
    for (auto& t : current) t = first(rng);
    std::vector<double> scores(len);

    for (std::size_t t = 0; t < len; ++t) {
        Matrix x(n, d);
        for (std::size_t s = 0; s < n; ++s) {
            out.sequences[s].push_back(current[s]);
            auto src = model.embedding.row(current[s]);
            std::copy(src.begin(), src.end(), x.row(s).begin());
        }
        for (std::size_t l = 0; l < cfg.n_layers; ++l) {
            const LayerWeights& w = model.layers[l];
            const Matrix a = rms_norm(x, w.norm_attn, cfg.norm_eps);
            Matrix q = matmul(a, w[Projection::Q]);
            Matrix k = matmul(a, w[Projection::K]);
            const Matrix v = matmul(a, w[Projection::V]);
            rope_rows(q, cfg, [&](std::size_t) { return t; });
            rope_rows(k, cfg, [&](std::size_t) { return t; });
            for (std::size_t s = 0; s < n; ++s) {
                std::copy(k.row(s).begin(), k.row(s).end(), k_cache[l].row(s * len + t).begin());
                std::copy(v.row(s).begin(), v.row(s).end(), v_cache[l].row(s * len + t).begin());
            }
            Matrix ctx(n, d);
            for (std::size_t s = 0; s < n; ++s) {
                for (std::size_t h = 0; h < cfg.n_heads; ++h) {
                    const std::size_t c0 = h * hd;
                    double mx = -std::numeric_limits<double>::infinity();
                    for (std::size_t j = 0; j <= t; ++j) {
                        const auto kr = k_cache[l].row(s * len + j);
                        double dot = 0.0;
                        for (std::size_t i = 0; i < hd; ++i) dot += q(s, c0 + i) * kr[c0 + i];
                        scores[j] = dot * inv_sqrt;
                        mx = std::max(mx, scores[j]);
                    }
                    double denom = 0.0;
                    for (std::size_t j = 0; j <= t; ++j) {
                        scores[j] = std::exp(scores[j] - mx);
                        denom += scores[j];
                    }
                    for (std::size_t j = 0; j <= t; ++j) {
                        const double p = scores[j] / denom;
                        const auto vr = v_cache[l].row(s * len + j);
                        for (std::size_t i = 0; i < hd; ++i) ctx(s, c0 + i) += p * vr[c0 + i];
                    }
                }
            }
            x = add(x, matmul(ctx, w[Projection::O]));
            const Matrix f = rms_norm(x, w.norm_ffn, cfg.norm_eps);
            Matrix gate = matmul(f, w[Projection::Gate]);
            const Matrix up = matmul(f, w[Projection::Up]);
            auto gv = gate.values();
            auto uv = up.values();
            for (std::size_t i = 0; i < gv.size(); ++i) gv[i] = silu(gv[i]) * uv[i];
            x = add(x, matmul(gate, w[Projection::Down]));
            require(x.all_finite(), ErrorCode::NonFiniteActivation, "decoder state contains NaN or Inf");
        }
        const Matrix logits = matmul(rms_norm(x, model.final_norm, cfg.norm_eps), model.lm_head);
        for (std::size_t s = 0; s < n; ++s) {
            const auto z = logits.row(s);
            std::copy(z.begin(), z.end(), out.logits.row(s * len + t).begin());
            if (t + 1 == len) continue;
            const double mx = *std::max_element(z.begin(), z.end());
            double total = 0.0;
            std::vector<double> p(z.size());
            for (std::size_t i = 0; i < z.size(); ++i) total += p[i] = std::exp((z[i] - mx) / temperature);
            const double target = u(rng) * total;
            double acc = 0.0;
            TokenId pick = static_cast<TokenId>(z.size() - 1);
            for (std::size_t i = 0; i < z.size(); ++i) {
                acc += p[i];
                if (target < acc) {
                    pick = static_cast<TokenId>(i);
                    break;
                }
            }
            current[s] = pick;
        }
    }
    return out;
}

TransformerModel random_model(const ModelConfig& cfg, const InitOptions& opts) {
    cfg.validate();
    std::mt19937_64 rng(opts.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto gaussian = [&](std::size_t rows, std::size_t cols, double stddev) {
        Matrix m(rows, cols);
        for (double& v : m.values()) v = static_cast<float>(normal(rng) * stddev);
        return m;
    };

    TransformerModel model;
    model.config = cfg;
    model.embedding = gaussian(cfg.vocab, cfg.d_model, 1.0);
    if (opts.outlier_channels > 0) {
        std::vector<std::size_t> channels(cfg.d_model);
        std::iota(channels.begin(), channels.end(), std::size_t{0});
        std::shuffle(channels.begin(), channels.end(), rng);
        const std::size_t k = std::min(opts.outlier_channels, cfg.d_model);
        for (std::size_t i = 0; i < k; ++i) {
            for (std::size_t r = 0; r < cfg.vocab; ++r) {
                double& v = model.embedding(r, channels[i]);
                v = static_cast<float>(v * opts.outlier_scale);
            }
        }
    }
    model.layers.resize(cfg.n_layers);
    for (auto& layer : model.layers) {
        for (Projection p : kAllProjections) {
            const auto [in, out] = projection_shape(cfg, p);
            layer[p] = gaussian(in, out, 1.0 / std::sqrt(static_cast<double>(in)));
        }
        layer.norm_attn.assign(cfg.d_model, 1.0);
        layer.norm_ffn.assign(cfg.d_model, 1.0);
        if (opts.gain_spread > 0.0) {
            for (auto* gains : {&layer.norm_attn, &layer.norm_ffn}) {
                for (double& g : *gains) g = static_cast<float>(std::exp(opts.gain_spread * normal(rng)));
            }
        }
    }
    model.final_norm.assign(cfg.d_model, 1.0);
    model.lm_head = gaussian(cfg.d_model, cfg.vocab, 1.0 / std::sqrt(static_cast<double>(cfg.d_model)));
    return model;
}

std::uint64_t fingerprint(const TransformerModel& model) {
    std::uint64_t h = 14695981039346656037ull;
    const std::size_t dims[] = {model.config.d_model, model.config.d_ff, model.config.n_heads,
                                model.config.n_layers, model.config.vocab, model.config.max_seq};
    mix(h, dims, sizeof(dims));
    mix_values(h, model.embedding.values());
    mix_values(h, model.final_norm);
    mix_values(h, model.lm_head.values());
    for (const auto& l : model.layers) {
        for (const auto& m : l.proj) mix_values(h, m.values());
        mix_values(h, l.norm_attn);
        mix_values(h, l.norm_ffn);
    }
    return h;
}

void save_model(const TransformerModel& model, const std::filesystem::path& path) {
    model.validate();
    const ModelConfig& cfg = model.config;
    detail::PayloadWriter w;
    nlohmann::json tensors = nlohmann::json::array();
    tensors.push_back(detail::put_matrix_f32(w, "embedding", model.embedding));
    tensors.push_back(detail::put_vector_f32(w, "final_norm", model.final_norm));
    tensors.push_back(detail::put_matrix_f32(w, "lm_head", model.lm_head));
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const auto& layer = model.layers[l];
        for (Projection p : kAllProjections) {
            tensors.push_back(detail::put_matrix_f32(w, layer_tensor(l, projection_name(p)), layer[p]));
        }
        tensors.push_back(detail::put_vector_f32(w, layer_tensor(l, "norm_attn"), layer.norm_attn));
        tensors.push_back(detail::put_vector_f32(w, layer_tensor(l, "norm_ffn"), layer.norm_ffn));
    }
    nlohmann::json header = {
        {"format", "HQTM"},
        {"d_model", cfg.d_model},
        {"d_ff", cfg.d_ff},
        {"n_heads", cfg.n_heads},
        {"n_layers", cfg.n_layers},
        {"vocab", cfg.vocab},
        {"max_seq", cfg.max_seq},
        {"rope_base", cfg.rope_base},
        {"norm_eps", cfg.norm_eps},
        {"payload_bytes", w.bytes().size()},
        {"tensors", tensors},
    };
    detail::write_container(path, kModelMagic, kHqtmVersion, header, w.bytes());
}

namespace detail {

ModelConfig config_from_header(const nlohmann::json& h) {
    ModelConfig cfg;
    try {
        cfg.d_model = h.at("d_model").get<std::size_t>();
        cfg.d_ff = h.at("d_ff").get<std::size_t>();
        cfg.n_heads = h.at("n_heads").get<std::size_t>();
        cfg.n_layers = h.at("n_layers").get<std::size_t>();
        cfg.vocab = h.at("vocab").get<std::size_t>();
        cfg.max_seq = h.at("max_seq").get<std::size_t>();
        cfg.rope_base = h.value("rope_base", 10000.0);
        cfg.norm_eps = h.value("norm_eps", 1e-5);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::HeaderMismatch, std::string("model header: ") + e.what());
    }
    try {
        cfg.validate();
    } catch (const Error& e) {
        fail(ErrorCode::HeaderMismatch, e.what());
    }
    return cfg;
}

}  // namespace detail

TransformerModel load_model(const std::filesystem::path& path) {
    const auto c = detail::read_container(path, kModelMagic);
    if (c.version != kHqtmVersion) {
        fail(ErrorCode::HeaderMismatch, "unsupported HQTM version " + std::to_string(c.version));
    }
    TransformerModel model;
    model.config = detail::config_from_header(c.header);
    const ModelConfig& cfg = model.config;
    const detail::PayloadReader r(c.payload);
    try {
        const auto& dir = c.header.at("tensors");
        model.embedding = detail::get_matrix_f32(r, detail::find_tensor(dir, "embedding"), cfg.vocab, cfg.d_model);
        model.final_norm = detail::get_vector_f32(r, detail::find_tensor(dir, "final_norm"), cfg.d_model);
        model.lm_head = detail::get_matrix_f32(r, detail::find_tensor(dir, "lm_head"), cfg.d_model, cfg.vocab);
        model.layers.resize(cfg.n_layers);
        for (std::size_t l = 0; l < cfg.n_layers; ++l) {
            auto& layer = model.layers[l];
            for (Projection p : kAllProjections) {
                const auto [in, out] = projection_shape(cfg, p);
                layer[p] = detail::get_matrix_f32(
                    r, detail::find_tensor(dir, layer_tensor(l, projection_name(p))), in, out);
            }
            layer.norm_attn = detail::get_vector_f32(r, detail::find_tensor(dir, layer_tensor(l, "norm_attn")), cfg.d_model);
            layer.norm_ffn = detail::get_vector_f32(r, detail::find_tensor(dir, layer_tensor(l, "norm_ffn")), cfg.d_model);
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::HeaderMismatch, std::string("tensor directory: ") + e.what());
    }
    model.validate();
    return model;
}

void write_token_file(const std::filesystem::path& path, std::span<const TokenSequence> docs,
                      TokenId separator) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) fail(ErrorCode::IoError, "cannot open " + path.string());
    auto put = [&](TokenId t) {
        unsigned char b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(t >> (8 * i));
        f.write(reinterpret_cast<const char*>(b), 4);
    };
    for (std::size_t d = 0; d < docs.size(); ++d) {
        if (d > 0) put(separator);
        for (TokenId t : docs[d]) put(t);
    }
    if (!f) fail(ErrorCode::IoError, "write failed: " + path.string());
}

std::vector<TokenId> read_token_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail(ErrorCode::FileNotFound, path.string());
    const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                           std::istreambuf_iterator<char>());
    if (bytes.size() % 4 != 0) fail(ErrorCode::TruncatedFile, "token file length not a multiple of 4");
    std::vector<TokenId> out(bytes.size() / 4);
    for (std::size_t i = 0; i < out.size(); ++i) {
        TokenId t = 0;
        for (int b = 0; b < 4; ++b) t |= static_cast<TokenId>(bytes[4 * i + b]) << (8 * b);
        out[i] = t;
    }
    return out;
}

}  // namespace hq

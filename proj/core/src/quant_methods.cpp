#include "hq/quant_methods.hpp"

#include <algorithm>
#include <cctype>
#include <atomic>
#include <cmath>
#include <limits>
#include <string>

#include "hq/error.hpp"

namespace hq {

namespace {

std::atomic<std::uint64_t> g_invocations{0};

constexpr double kScaleMin = 1e-4;
constexpr double kScaleMax = 1e4;

Matrix scale_rows(const Matrix& w, std::span<const double> s) {
    Matrix out = w;
    for (std::size_t r = 0; r < w.rows(); ++r) {
        for (double& v : out.row(r)) v *= s[r];
    }
    return out;
}

std::vector<double> reciprocal(std::span<const double> s) {
    std::vector<double> out(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) out[i] = 1.0 / s[i];
    return out;
}

void check_calibration(const Matrix& w, const Matrix& x, Projection p) {
    if (x.cols() != w.rows()) {
        fail(ErrorCode::DimensionMismatch, std::string(projection_name(p)) +
                                               ": calibration width " + std::to_string(x.cols()) +
                                               " != weight input dim " + std::to_string(w.rows()));
    }
    if (x.rows() == 0) fail(ErrorCode::DimensionMismatch, "empty calibration inputs");
}

// Shared tail of the scaling methods: quantize diag(s) W (or keep it dense)
// and remember 1/s for the activations.
QuantizedLayer assemble_scaled(MethodKind kind, const LayerWeights& layer, const MethodConfig& cfg,
                               std::array<ScaledProjection, kProjectionCount>& scaled) {
    std::array<std::vector<double>, kProjectionCount> act;
    for (std::size_t i = 0; i < kProjectionCount; ++i) act[i] = std::move(scaled[i].input_scale);
    if (!cfg.quantize_weights) {
        LayerWeights reparam = layer;
        for (std::size_t i = 0; i < kProjectionCount; ++i) reparam.proj[i] = std::move(scaled[i].scaled_weight);
        return QuantizedLayer::dense(kind, reparam, std::move(act), cfg.qcfg.act_bits);
    }
    std::array<GroupQuantTensor, kProjectionCount> q;
    for (std::size_t i = 0; i < kProjectionCount; ++i) q[i] = quantize_rtn(scaled[i].scaled_weight, cfg.qcfg);
    return QuantizedLayer(kind, std::move(q), std::move(act), layer.norm_attn, layer.norm_ffn,
                          cfg.qcfg.act_bits);
}

}  // namespace

std::string_view method_name(MethodKind k) noexcept {
    switch (k) {
        case MethodKind::RTN: return "rtn";
        case MethodKind::GPTQ: return "gptq";
        case MethodKind::AWQ: return "awq";
        case MethodKind::SmoothQuant: return "smoothquant";
    }
    return "?";
}

MethodKind parse_method(std::string_view s) {
    if (s == "rtn") return MethodKind::RTN;
    if (s == "gptq") return MethodKind::GPTQ;
    if (s == "awq") return MethodKind::AWQ;
    if (s == "smoothquant" || s == "sq") return MethodKind::SmoothQuant;
    fail(ErrorCode::InvalidConfig, "unknown method '" + std::string(s) + "'");
}

std::vector<double> default_awq_alpha_grid() {
    std::vector<double> grid;
    for (int i = 0; i <= 20; ++i) grid.push_back(i * 0.05);
    return grid;
}

void MethodConfig::validate() const {
    qcfg.validate();
    if (sq_alpha < 0.0 || sq_alpha > 1.0) fail(ErrorCode::InvalidConfig, "sq_alpha must be in [0, 1]");
    if (awq_alpha_grid.empty()) fail(ErrorCode::InvalidConfig, "awq_alpha_grid is empty");
    for (double a : awq_alpha_grid) {
        if (a < 0.0 || a > 1.0) fail(ErrorCode::InvalidConfig, "awq alpha outside [0, 1]");
    }
    if (gptq_damping < 0.0) fail(ErrorCode::InvalidConfig, "gptq_damping must be >= 0");
}

CandidatePool parse_pool(std::string_view text, const QuantConfig& qcfg) {
    CandidatePool pool;
    std::size_t at = 0;
    while (at <= text.size()) {
        const std::size_t comma = std::min(text.find(',', at), text.size());
        auto item = text.substr(at, comma - at);
        while (!item.empty() && std::isspace(static_cast<unsigned char>(item.front()))) item.remove_prefix(1);
        while (!item.empty() && std::isspace(static_cast<unsigned char>(item.back()))) item.remove_suffix(1);
        if (!item.empty()) {
            MethodConfig m;
            m.kind = parse_method(item);
            m.qcfg = qcfg;
            pool.push_back(m);
        }
        at = comma + 1;
    }
    if (pool.empty()) fail(ErrorCode::EmptyPool, "pool '" + std::string(text) + "' names no methods");
    return pool;
}

CandidatePool default_pool(const QuantConfig& qcfg) { return parse_pool("gptq,awq,smoothquant", qcfg); }

QuantizedLayer::QuantizedLayer(MethodKind method,
                               std::array<GroupQuantTensor, kProjectionCount> weights,
                               std::array<std::vector<double>, kProjectionCount> act_scales,
                               std::vector<double> norm_attn, std::vector<double> norm_ffn,
                               std::optional<int> act_bits)
    : method_(method),
      tensors_(std::move(weights)),
      act_scales_(std::move(act_scales)),
      norm_attn_(std::move(norm_attn)),
      norm_ffn_(std::move(norm_ffn)),
      act_bits_(act_bits) {
    for (std::size_t i = 0; i < kProjectionCount; ++i) {
        effective_[i] = dequantize(tensors_[i]);
        const auto& s = act_scales_[i];
        if (!s.empty() && s.size() != effective_[i].rows()) {
            fail(ErrorCode::DimensionMismatch, "act scale length != projection input dim");
        }
        for (double v : s) {
            if (!(v > 0.0) || !std::isfinite(v)) fail(ErrorCode::InvalidConfig, "act scales must be positive");
        }
    }
}

QuantizedLayer QuantizedLayer::dense(MethodKind method, const LayerWeights& weights,
                                     std::array<std::vector<double>, kProjectionCount> act_scales,
                                     std::optional<int> act_bits) {
    QuantizedLayer q;
    q.method_ = method;
    q.act_scales_ = std::move(act_scales);
    q.norm_attn_ = weights.norm_attn;
    q.norm_ffn_ = weights.norm_ffn;
    q.act_bits_ = act_bits;
    for (std::size_t i = 0; i < kProjectionCount; ++i) {
        q.effective_[i] = weights.proj[i];
        q.is_dense_[i] = true;
    }
    return q;
}

void QuantizedLayer::replace_dense(Projection p, Matrix weight) {
    const auto i = idx(p);
    if (weight.rows() != effective_[i].rows() || weight.cols() != effective_[i].cols()) {
        fail(ErrorCode::DimensionMismatch, "replacement weight shape");
    }
    effective_[i] = std::move(weight);
    tensors_[i] = GroupQuantTensor();
    is_dense_[i] = true;
}

void QuantizedLayer::replace_codes(Projection p, GroupQuantTensor codes) {
    const auto i = idx(p);
    if (codes.rows() != effective_[i].rows() || codes.cols() != effective_[i].cols()) {
        fail(ErrorCode::DimensionMismatch, "replacement codes shape");
    }
    effective_[i] = dequantize(codes);
    tensors_[i] = std::move(codes);
    is_dense_[i] = false;
}

std::size_t QuantizedLayer::parameter_count() const {
    std::size_t n = 0;
    for (const auto& m : effective_) n += m.size();
    return n;
}

double QuantizedLayer::mean_bits() const {
    double bits = 0.0;
    for (std::size_t i = 0; i < kProjectionCount; ++i) {
        const double b = is_dense_[i] ? 32.0 : static_cast<double>(tensors_[i].bits());
        bits += b * static_cast<double>(effective_[i].size());
    }
    const auto n = parameter_count();
    return n == 0 ? 0.0 : bits / static_cast<double>(n);
}

LayerView QuantizedLayer::view() const {
    LayerView v;
    for (std::size_t i = 0; i < kProjectionCount; ++i) {
        v.proj[i].weight = &effective_[i];
        v.proj[i].input_scale = act_scales_[i];
    }
    v.norm_attn = norm_attn_;
    v.norm_ffn = norm_ffn_;
    v.act_bits = act_bits_;
    return v;
}

double output_mse_via_gram(const Matrix& gram, std::size_t n, const Matrix& w,
                           const Matrix& w_effective) {
    const Matrix e = subtract(w, w_effective);
    const Matrix ge = matmul(gram, e);
    double tr = 0.0;
    auto ev = e.values();
    auto gv = ge.values();
    for (std::size_t i = 0; i < ev.size(); ++i) tr += ev[i] * gv[i];
    return tr / static_cast<double>(n * w.cols());
}

QuantizedLayer apply_rtn(const LayerWeights& layer, const MethodConfig& cfg) {
    cfg.validate();
    if (!cfg.quantize_weights) return QuantizedLayer::dense(MethodKind::RTN, layer, {}, cfg.qcfg.act_bits);
    std::array<GroupQuantTensor, kProjectionCount> q;
    for (std::size_t i = 0; i < kProjectionCount; ++i) q[i] = quantize_rtn(layer.proj[i], cfg.qcfg);
    return QuantizedLayer(MethodKind::RTN, std::move(q), {}, layer.norm_attn, layer.norm_ffn,
                          cfg.qcfg.act_bits);
}

GroupQuantTensor gptq_quantize(const Matrix& w, const Matrix& x, const QuantConfig& qcfg,
                               double damping) {
    qcfg.validate();
    const std::size_t in = w.rows();
    const std::size_t out = w.cols();
    if (x.cols() != in) fail(ErrorCode::DimensionMismatch, "gptq calibration width");

    Matrix h = matmul_tn(x, x);
    Matrix work = w;
    // Inputs that never fire carry no information; their weights are zeroed
    // and the Hessian patched so it stays invertible.
    for (std::size_t i = 0; i < in; ++i) {
        if (h(i, i) == 0.0) {
            h(i, i) = 1.0;
            for (double& v : work.row(i)) v = 0.0;
        }
    }
    Matrix upper;  // U with H^-1 = U^T U
    try {
        const Matrix h_inv = solve_spd(h, Matrix::identity(in), damping);
        upper = transpose(cholesky(h_inv));
    } catch (const Error& e) {
        if (e.code() == ErrorCode::NotPositiveDefinite) fail(ErrorCode::HessianNotPD, e.what());
        throw;
    }

    const std::size_t g = qcfg.effective_group(in);
    const std::size_t row_groups = (in + g - 1) / g;
    std::vector<std::int32_t> codes(in * out);
    std::vector<double> scales(row_groups * out);
    std::vector<double> zps(row_groups * out);
    std::vector<GroupParams> params(out);
    std::vector<double> buf;
    std::vector<double> err(out);

    for (std::size_t i = 0; i < in; ++i) {
        if (i % g == 0) {
            const std::size_t gr = i / g;
            const std::size_t r1 = std::min(in, i + g);
            for (std::size_t c = 0; c < out; ++c) {
                buf.clear();
                for (std::size_t r = i; r < r1; ++r) buf.push_back(work(r, c));
                params[c] = compute_group_params(buf, qcfg.bits, qcfg.symmetric);
                scales[gr * out + c] = params[c].scale;
                zps[gr * out + c] = params[c].zero_point;
            }
        }
        const double d = upper(i, i);
        for (std::size_t c = 0; c < out; ++c) {
            const double wv = work(i, c);
            const auto code = quantize_value(wv, params[c], qcfg.bits, qcfg.symmetric);
            codes[i * out + c] = code;
            err[c] = (wv - dequantize_value(code, params[c])) / d;
        }
        for (std::size_t j = i + 1; j < in; ++j) {
            const double u = upper(i, j);
            if (u == 0.0) continue;
            auto row = work.row(j);
            for (std::size_t c = 0; c < out; ++c) row[c] -= u * err[c];
        }
    }
    return GroupQuantTensor(in, out, qcfg.bits, g, qcfg.symmetric, std::move(codes),
                            std::move(scales), std::move(zps));
}

QuantizedLayer apply_gptq(const LayerWeights& layer, const ProjectionInputs& calib,
                          const MethodConfig& cfg) {
    cfg.validate();
    if (!cfg.quantize_weights) return QuantizedLayer::dense(MethodKind::GPTQ, layer, {}, cfg.qcfg.act_bits);
    std::array<GroupQuantTensor, kProjectionCount> q;
    for (Projection p : kAllProjections) {
        const Matrix& x = calib.for_projection(p);
        check_calibration(layer[p], x, p);
        q[static_cast<std::size_t>(p)] = gptq_quantize(layer[p], x, cfg.qcfg, cfg.gptq_damping);
    }
    return QuantizedLayer(MethodKind::GPTQ, std::move(q), {}, layer.norm_attn, layer.norm_ffn,
                          cfg.qcfg.act_bits);
}

std::vector<double> awq_scales(std::span<const double> mean_abs_act, double alpha) {
    double log_sum = 0.0;
    for (double a : mean_abs_act) log_sum += std::log(std::max(a, 1e-12));
    const double geomean = std::exp(log_sum / static_cast<double>(mean_abs_act.size()));
    std::vector<double> s(mean_abs_act.size());
    for (std::size_t j = 0; j < s.size(); ++j) {
        const double ratio = std::max(mean_abs_act[j], 1e-12) / geomean;
        s[j] = std::clamp(std::pow(ratio, alpha), kScaleMin, kScaleMax);
    }
    return s;
}

ScaledProjection awq_search(const Matrix& w, const Matrix& x, const QuantConfig& qcfg,
                            std::span<const double> alpha_grid) {
    std::vector<double> mean_abs(x.cols(), 0.0);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto row = x.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) mean_abs[c] += std::abs(row[c]);
    }
    bool any_live = false;
    for (double& a : mean_abs) {
        a /= static_cast<double>(x.rows());
        any_live = any_live || a > 1e-12;
    }
    if (!any_live) fail(ErrorCode::DegenerateActivations, "all AWQ channel magnitudes vanish");

    const Matrix gram = matmul_tn(x, x);
    ScaledProjection best;
    double best_loss = std::numeric_limits<double>::infinity();
    for (double alpha : alpha_grid) {
        const auto s = awq_scales(mean_abs, alpha);
        Matrix scaled = scale_rows(w, s);
        const auto inv = reciprocal(s);
        const Matrix effective = scale_rows(dequantize(quantize_rtn(scaled, qcfg)), inv);
        const double loss = output_mse_via_gram(gram, x.rows(), w, effective);
        if (loss < best_loss) {
            best_loss = loss;
            best.scaled_weight = std::move(scaled);
            best.input_scale = inv;
            best.alpha = alpha;
        }
    }
    return best;
}

QuantizedLayer apply_awq(const LayerWeights& layer, const ProjectionInputs& calib,
                         const MethodConfig& cfg) {
    cfg.validate();
    std::array<ScaledProjection, kProjectionCount> scaled;
    for (Projection p : kAllProjections) {
        const Matrix& x = calib.for_projection(p);
        check_calibration(layer[p], x, p);
        scaled[static_cast<std::size_t>(p)] = awq_search(layer[p], x, cfg.qcfg, cfg.awq_alpha_grid);
    }
    return assemble_scaled(MethodKind::AWQ, layer, cfg, scaled);
}

ScaledProjection smoothquant_scales(const Matrix& w, const Matrix& x, double alpha) {
    std::vector<double> act_max(x.cols(), 0.0);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto row = x.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) act_max[c] = std::max(act_max[c], std::abs(row[c]));
    }
    std::vector<double> w_max(w.rows(), 0.0);
    for (std::size_t r = 0; r < w.rows(); ++r) {
        for (double v : w.row(r)) w_max[r] = std::max(w_max[r], std::abs(v));
    }
    if (std::all_of(act_max.begin(), act_max.end(), [](double v) { return v == 0.0; })) {
        fail(ErrorCode::DegenerateActivations, "smoothquant calibration activations are all zero");
    }
    if (std::all_of(w_max.begin(), w_max.end(), [](double v) { return v == 0.0; })) {
        fail(ErrorCode::DegenerateWeights, "smoothquant weight matrix is all zero");
    }
    ScaledProjection out;
    out.alpha = alpha;
    std::vector<double> s(w.rows(), 1.0);
    for (std::size_t j = 0; j < s.size(); ++j) {
        // Dead channels keep unit scale.
        if (act_max[j] == 0.0 || w_max[j] == 0.0) continue;
        s[j] = std::clamp(std::pow(act_max[j], alpha) / std::pow(w_max[j], 1.0 - alpha), kScaleMin,
                          kScaleMax);
    }
    out.scaled_weight = scale_rows(w, s);
    out.input_scale = reciprocal(s);
    return out;
}

QuantizedLayer apply_smoothquant(const LayerWeights& layer, const ProjectionInputs& calib,
                                 const MethodConfig& cfg) {
    cfg.validate();
    std::array<ScaledProjection, kProjectionCount> scaled;
    for (Projection p : kAllProjections) {
        const Matrix& x = calib.for_projection(p);
        check_calibration(layer[p], x, p);
        scaled[static_cast<std::size_t>(p)] = smoothquant_scales(layer[p], x, cfg.sq_alpha);
    }
    return assemble_scaled(MethodKind::SmoothQuant, layer, cfg, scaled);
}

QuantizedLayer quantize_layer(const LayerWeights& layer, const ProjectionInputs& calib,
                              const MethodConfig& cfg) {
    g_invocations.fetch_add(1, std::memory_order_relaxed);
    switch (cfg.kind) {
        case MethodKind::RTN: return apply_rtn(layer, cfg);
        case MethodKind::GPTQ: return apply_gptq(layer, calib, cfg);
        case MethodKind::AWQ: return apply_awq(layer, calib, cfg);
        case MethodKind::SmoothQuant: return apply_smoothquant(layer, calib, cfg);
    }
    fail(ErrorCode::InvalidConfig, "unknown method kind");
}

std::uint64_t quantize_invocations() noexcept { return g_invocations.load(std::memory_order_relaxed); }

}  // namespace hq

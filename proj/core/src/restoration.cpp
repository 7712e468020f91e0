#include "hq/restoration.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "hq/error.hpp"
#include "hq/evalsuite.hpp"

namespace hq {

namespace {

std::vector<TokenSequence> pick(std::span<const TokenSequence> seqs, std::span<const std::size_t> idx) {
    std::vector<TokenSequence> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(seqs[i]);
    return out;
}

const Matrix& ffn_out(const ModelForward& f, std::size_t layer) { return f.layers[layer].ffn_out_preres; }

nlohmann::json cka_json(const CkaScore& s) {
    return {{"value", s.value}, {"n_rows", s.n_rows}, {"degenerate", s.degenerate}};
}

nlohmann::json opt_cka_json(const std::optional<CkaScore>& s) {
    return s ? cka_json(*s) : nlohmann::json();
}

nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

std::vector<double> values_of(const LayerCkaProfile& p) {
    std::vector<double> v;
    for (const auto& s : p.scores) v.push_back(s.value);
    return v;
}

}  // namespace

LayerCkaProfile layer_cka_profile(const TransformerModel& fp, const HybridModel& quantized,
                                  std::span<const TokenSequence> calib) {
    if (fp.config.n_layers != quantized.layers.size()) {
        fail(ErrorCode::DimensionMismatch, "FP and quantized models differ in layer count");
    }
    const ModelForward ref = forward_model(fp, calib, true);
    const ModelForward q = forward_hybrid(quantized, calib, true);
    LayerCkaProfile p;
    for (std::size_t l = 0; l < ref.layers.size(); ++l) {
        p.scores.push_back(linear_cka(ffn_out(ref, l), ffn_out(q, l)));
        if (p.scores[l].value < p.scores[p.worst].value) p.worst = l;
    }
    return p;
}

std::size_t find_worst_layer(const TransformerModel& fp, const HybridModel& quantized,
                             std::span<const TokenSequence> calib) {
    return layer_cka_profile(fp, quantized, calib).worst;
}

RestorationOutcome fit_and_absorb(const TransformerModel& fp, const HybridModel& quantized,
                                  std::size_t layer, std::span<const TokenSequence> calib,
                                  const RestorationOptions& opts, std::span<const TokenSequence> eval) {
    if (layer >= quantized.layers.size()) fail(ErrorCode::InvalidConfig, "restoration layer out of range");
    if (calib.empty()) fail(ErrorCode::InvalidConfig, "restoration needs calibration data");
    if (!(opts.fit_fraction > 0.0 && opts.fit_fraction <= 1.0)) {
        fail(ErrorCode::InvalidConfig, "fit_fraction must be in (0, 1]");
    }

    std::vector<std::size_t> order(calib.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(opts.seed);
    for (std::size_t i = order.size(); i > 1; --i) {
        std::uniform_int_distribution<std::size_t> d(0, i - 1);
        std::swap(order[i - 1], order[d(rng)]);
    }
    auto n_fit = static_cast<std::size_t>(std::llround(opts.fit_fraction * static_cast<double>(calib.size())));
    n_fit = std::clamp<std::size_t>(n_fit, 1, calib.size());
    if (n_fit == calib.size() && calib.size() > 1 && opts.fit_fraction < 1.0) n_fit = calib.size() - 1;
    std::vector<std::size_t> fit_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_fit));
    std::vector<std::size_t> held_idx(order.begin() + static_cast<std::ptrdiff_t>(n_fit), order.end());
    std::sort(fit_idx.begin(), fit_idx.end());
    std::sort(held_idx.begin(), held_idx.end());
    const auto fit = pick(calib, fit_idx);
    const auto held = pick(calib, held_idx);

    RestorationResult r;
    r.layer = layer;
    const Matrix x_fp = ffn_out(forward_model(fp, fit, true), layer);
    const Matrix x_q = ffn_out(forward_hybrid(quantized, fit, true), layer);
    r.fit_rows = x_fp.rows();
    r.residual_before = frobenius_norm(subtract(x_fp, x_q));
    r.cka_before = linear_cka(x_fp, x_q);

    const LeastSquaresResult ls = least_squares(x_q, x_fp);
    r.rank_deficient = ls.rank_deficient;
    r.ls_damping = ls.damping;
    r.fell_back_to_identity = ls.fell_back_to_identity;
    r.m_matrix_norm = frobenius_norm(ls.m);
    r.m_identity_distance = frobenius_norm(subtract(ls.m, Matrix::identity(ls.m.rows())));

    HybridModel restored = quantized;
    QuantizedLayer& target = restored.layers[layer];
    const bool had_codes = target.has_codes(Projection::Down);
    QuantConfig requant = opts.requantize_fallback;
    if (had_codes) {
        requant.bits = target.codes(Projection::Down).bits();
        requant.group_size = target.codes(Projection::Down).group_size();
        requant.symmetric = target.codes(Projection::Down).symmetric();
    }
    target.replace_dense(Projection::Down, matmul(target.effective_weight(Projection::Down), ls.m));

    const Matrix x_r = ffn_out(forward_hybrid(restored, fit, true), layer);
    r.residual_after = frobenius_norm(subtract(x_fp, x_r));
    r.cka_after = linear_cka(x_fp, x_r);

    if (!held.empty()) {
        const Matrix h_fp = ffn_out(forward_model(fp, held, true), layer);
        const Matrix h_q = ffn_out(forward_hybrid(quantized, held, true), layer);
        const Matrix h_r = ffn_out(forward_hybrid(restored, held, true), layer);
        r.heldout_rows = h_fp.rows();
        if (h_fp.rows() >= 2) {
            r.heldout_cka_before = linear_cka(h_fp, h_q);
            r.heldout_cka_after = linear_cka(h_fp, h_r);
        }
    }

    if (opts.requantize) {
        target.replace_codes(Projection::Down, quantize_rtn(target.effective_weight(Projection::Down), requant));
        r.requantized = true;
        r.integer_representation_broken = false;
        r.cka_after_requantize = linear_cka(x_fp, ffn_out(forward_hybrid(restored, fit, true), layer));
    }

    r.layer_cka_before = values_of(layer_cka_profile(fp, quantized, calib));
    r.layer_cka_after = values_of(layer_cka_profile(fp, restored, calib));
    if (!eval.empty()) {
        r.ppl_before = perplexity(quantized, eval).ppl;
        r.ppl_after = perplexity(restored, eval).ppl;
    }
    restored.report.strategy = quantized.report.strategy;
    return {std::move(restored), std::move(r)};
}

std::string RestorationResult::to_json() const {
    nlohmann::json j = {
        {"layer", layer},
        {"fit_rows", fit_rows},
        {"heldout_rows", heldout_rows},
        {"cka_before", cka_json(cka_before)},
        {"cka_after", cka_json(cka_after)},
        {"heldout_cka_before", opt_cka_json(heldout_cka_before)},
        {"heldout_cka_after", opt_cka_json(heldout_cka_after)},
        {"residual_before", residual_before},
        {"residual_after", residual_after},
        {"m_matrix_norm", m_matrix_norm},
        {"m_identity_distance", m_identity_distance},
        {"rank_deficient", rank_deficient},
        {"ls_damping", ls_damping},
        {"fell_back_to_identity", fell_back_to_identity},
        {"absorbed_into", absorbed_into},
        {"integer_representation_broken", integer_representation_broken},
        {"requantized", requantized},
        {"cka_after_requantize", opt_cka_json(cka_after_requantize)},
        {"ppl_before", opt_json(ppl_before)},
        {"ppl_after", opt_json(ppl_after)},
        {"layer_cka_before", layer_cka_before},
        {"layer_cka_after", layer_cka_after},
        {"toolkit_version", kToolkitVersion},
    };
    return j.dump(2);
}

std::string RestorationResult::cka_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "layer,cka_before,cka_after\n";
    for (std::size_t l = 0; l < layer_cka_before.size(); ++l) {
        os << l << ',' << layer_cka_before[l] << ',' << (l < layer_cka_after.size() ? layer_cka_after[l] : 0.0)
           << '\n';
    }
    return os.str();
}

}  // namespace hq

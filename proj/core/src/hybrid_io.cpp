// HQTM-Q container: the HQTM framing with magic "HQTQ", per-layer method
// tags, bit-packed codes, real64 side data (scales, zero points, activation
// scales, dense overrides), and the selection report embedded as JSON.

#include <string>

#include "detail/container.hpp"
#include "detail/model_io.hpp"
#include "hq/error.hpp"
#include "hq/selector.hpp"

namespace hq {

namespace {

constexpr char kHybridMagic[5] = "HQTQ";

nlohmann::json put_f64(detail::PayloadWriter& w, std::span<const double> v) {
    return {{"offset", w.put_f64(v)}, {"count", v.size()}};
}

std::vector<double> get_f64(const detail::PayloadReader& r, const nlohmann::json& e,
                            std::size_t expect_count) {
    const auto count = e.at("count").get<std::size_t>();
    if (count != expect_count) fail(ErrorCode::HeaderMismatch, "side-data length disagrees with shape");
    return r.f64(e.at("offset").get<std::size_t>(), count);
}

std::vector<double> get_f64_any(const detail::PayloadReader& r, const nlohmann::json& e) {
    return r.f64(e.at("offset").get<std::size_t>(), e.at("count").get<std::size_t>());
}

}  // namespace

void save_hybrid(const HybridModel& hybrid, const std::filesystem::path& path) {
    const ModelConfig& cfg = hybrid.config;
    if (hybrid.layers.size() != cfg.n_layers) {
        fail(ErrorCode::DimensionMismatch, "hybrid layer count != n_layers");
    }
    detail::PayloadWriter w;
    nlohmann::json head = {
        {"embedding", put_f64(w, hybrid.embedding.values())},
        {"final_norm", put_f64(w, hybrid.final_norm)},
        {"lm_head", put_f64(w, hybrid.lm_head.values())},
    };
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& layer : hybrid.layers) {
        nlohmann::json lj;
        lj["method"] = std::string(method_name(layer.method()));
        lj["act_bits"] = layer.act_bits() ? nlohmann::json(*layer.act_bits()) : nlohmann::json(nullptr);
        lj["norm_attn"] = put_f64(w, layer.norm_attn());
        lj["norm_ffn"] = put_f64(w, layer.norm_ffn());
        lj["projections"] = nlohmann::json::array();
        for (Projection p : kAllProjections) {
            nlohmann::json pj;
            pj["name"] = std::string(projection_name(p));
            pj["act_scale"] = put_f64(w, layer.act_scale(p));
            if (layer.has_codes(p)) {
                const auto& q = layer.codes(p);
                const auto packed = pack_codes(q.codes(), q.bits(), q.symmetric());
                pj["dense"] = false;
                pj["bits"] = q.bits();
                pj["group_size"] = q.group_size();
                pj["symmetric"] = q.symmetric();
                pj["codes"] = {{"offset", w.put_bytes(packed)}, {"bytes", packed.size()}};
                pj["scales"] = put_f64(w, q.scales());
                pj["zero_points"] = put_f64(w, q.zero_points());
            } else {
                pj["dense"] = true;
                pj["weight"] = put_f64(w, layer.effective_weight(p).values());
            }
            lj["projections"].push_back(std::move(pj));
        }
        layers.push_back(std::move(lj));
    }
    nlohmann::json header = {
        {"format", "HQTM-Q"},
        {"d_model", cfg.d_model},
        {"d_ff", cfg.d_ff},
        {"n_heads", cfg.n_heads},
        {"n_layers", cfg.n_layers},
        {"vocab", cfg.vocab},
        {"max_seq", cfg.max_seq},
        {"rope_base", cfg.rope_base},
        {"norm_eps", cfg.norm_eps},
        {"pool", hybrid.report.pool_labels()},
        {"head", head},
        {"layers", layers},
        {"report", nlohmann::json::parse(hybrid.report.to_json())},
        {"payload_bytes", w.bytes().size()},
    };
    detail::write_container(path, kHybridMagic, kHqtmqVersion, header, w.bytes());
}

HybridModel load_hybrid(const std::filesystem::path& path, const HybridExpectations& expect) {
    const auto c = detail::read_container(path, kHybridMagic);
    if (c.version != kHqtmqVersion) {
        fail(ErrorCode::HeaderMismatch, "unsupported HQTM-Q version " + std::to_string(c.version));
    }
    HybridModel h;
    h.config = detail::config_from_header(c.header);
    const ModelConfig& cfg = h.config;
    if (expect.config && !(*expect.config == cfg)) {
        fail(ErrorCode::HeaderMismatch, "model dims differ from the expected configuration");
    }
    const detail::PayloadReader r(c.payload);
    try {
        const auto pool = c.header.at("pool").get<std::vector<std::string>>();
        if (expect.pool_labels && *expect.pool_labels != pool) {
            fail(ErrorCode::HeaderMismatch, "file was produced with a different candidate pool");
        }
        h.report = SelectionReport::from_json(c.header.at("report").dump());
        const auto& head = c.header.at("head");
        h.embedding = Matrix(cfg.vocab, cfg.d_model, get_f64(r, head.at("embedding"), cfg.vocab * cfg.d_model));
        h.final_norm = get_f64(r, head.at("final_norm"), cfg.d_model);
        h.lm_head = Matrix(cfg.d_model, cfg.vocab, get_f64(r, head.at("lm_head"), cfg.d_model * cfg.vocab));

        const auto& layers = c.header.at("layers");
        if (layers.size() != cfg.n_layers) fail(ErrorCode::HeaderMismatch, "layer table size != n_layers");
        for (const auto& lj : layers) {
            const MethodKind kind = parse_method(lj.at("method").get<std::string>());
            std::optional<int> act_bits;
            if (!lj.at("act_bits").is_null()) act_bits = lj.at("act_bits").get<int>();
            auto norm_attn = get_f64(r, lj.at("norm_attn"), cfg.d_model);
            auto norm_ffn = get_f64(r, lj.at("norm_ffn"), cfg.d_model);

            const auto& pjs = lj.at("projections");
            if (pjs.size() != kProjectionCount) fail(ErrorCode::HeaderMismatch, "projection table size");
            std::array<GroupQuantTensor, kProjectionCount> tensors;
            std::array<std::vector<double>, kProjectionCount> act_scales;
            std::array<std::optional<Matrix>, kProjectionCount> dense;
            for (Projection p : kAllProjections) {
                const auto i = static_cast<std::size_t>(p);
                const auto& pj = pjs[i];
                if (pj.at("name").get<std::string>() != projection_name(p)) {
                    fail(ErrorCode::HeaderMismatch, "projection order");
                }
                const auto [in, out] = projection_shape(cfg, p);
                act_scales[i] = get_f64_any(r, pj.at("act_scale"));
                if (pj.at("dense").get<bool>()) {
                    dense[i] = Matrix(in, out, get_f64(r, pj.at("weight"), in * out));
                    // Placeholder codes; replaced by the dense matrix below.
                    tensors[i] = quantize_rtn(Matrix(in, out), QuantConfig{});
                    continue;
                }
                const int bits = pj.at("bits").get<int>();
                const auto g = pj.at("group_size").get<std::size_t>();
                const bool sym = pj.at("symmetric").get<bool>();
                if (g < 1) fail(ErrorCode::HeaderMismatch, "group_size < 1");
                const std::size_t groups = ((in + g - 1) / g) * out;
                const auto& cj = pj.at("codes");
                auto codes = unpack_codes(r.bytes(cj.at("offset").get<std::size_t>(), cj.at("bytes").get<std::size_t>()),
                                          in * out, bits, sym);
                tensors[i] = GroupQuantTensor(in, out, bits, g, sym, std::move(codes),
                                              get_f64(r, pj.at("scales"), groups),
                                              get_f64(r, pj.at("zero_points"), groups));
            }
            QuantizedLayer layer(kind, std::move(tensors), std::move(act_scales), std::move(norm_attn),
                                 std::move(norm_ffn), act_bits);
            for (Projection p : kAllProjections) {
                auto& d = dense[static_cast<std::size_t>(p)];
                if (d) layer.replace_dense(p, std::move(*d));
            }
            h.layers.push_back(std::move(layer));
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::HeaderMismatch, std::string("HQTM-Q header: ") + e.what());
    }
    if (expect.bits) {
        for (const auto& l : h.layers) {
            for (Projection p : kAllProjections) {
                if (l.has_codes(p) && l.codes(p).bits() != *expect.bits) {
                    fail(ErrorCode::HeaderMismatch, "file bit width differs from expected " +
                                                        std::to_string(*expect.bits));
                }
            }
        }
    }
    return h;
}

}  // namespace hq

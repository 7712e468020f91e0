#pragma once

// Reference computations shared by the unit and acceptance suites.

#include <cmath>
#include <vector>

#include "hq/cka.hpp"
#include "hq/selector.hpp"

namespace hqtest {

// HSIC ratio evaluated literally: materialize H and the n x n products.
inline double literal_cka(const hq::Matrix& x, const hq::Matrix& y) {
    const std::size_t n = x.rows();
    hq::Matrix h = hq::Matrix::identity(n);
    for (double& v : h.values()) v -= 1.0 / static_cast<double>(n);
    auto mm = [](const hq::Matrix& a, const hq::Matrix& b) {
        hq::Matrix c(a.rows(), b.cols());
        for (std::size_t i = 0; i < a.rows(); ++i)
            for (std::size_t k = 0; k < a.cols(); ++k)
                for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += a(i, k) * b(k, j);
        return c;
    };
    auto tr = [](const hq::Matrix& a) {
        hq::Matrix t(a.cols(), a.rows());
        for (std::size_t i = 0; i < a.rows(); ++i)
            for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
        return t;
    };
    auto fro2 = [](const hq::Matrix& a) {
        double s = 0.0;
        for (double v : a.values()) s += v * v;
        return s;
    };
    const hq::Matrix xc = mm(h, x), yc = mm(h, y);
    return fro2(mm(tr(yc), xc)) / (std::sqrt(fro2(mm(tr(xc), xc))) * std::sqrt(fro2(mm(tr(yc), yc))));
}

namespace detail {
using namespace hq;
// Applies one method to every layer by hand: fit on the running quantized
// stream, advance that stream. No selector code involved.
inline std::vector<QuantizedLayer> manual_uniform(const TransformerModel& m, const MethodConfig& method,
                                                  const std::vector<TokenSequence>& calib) {
    const SequenceLayout layout = SequenceLayout::of(calib);
    Matrix h = embed_tokens(m.config, m.embedding, calib);
    std::vector<QuantizedLayer> out;
    for (const auto& w : m.layers) {
        ProjectionInputs pi;
        LayerForwardOptions opts;
        opts.projection_inputs = &pi;
        forward_layer(w, m.config, h, layout, opts);
        out.push_back(quantize_layer(w, pi, method));
        h = forward_layer(out.back(), m.config, h, layout).layer_output;
    }
    return out;
}

// CKA of one candidate at one layer, recomputed from the two streams.
inline CkaScore recompute(const TransformerModel& m, std::size_t l, const MethodConfig& method,
                          const Matrix& fp_in, const Matrix& q_in, const SequenceLayout& layout,
                          Matrix* q_out = nullptr) {
    const auto target = forward_layer(m.layers[l], m.config, fp_in, layout);
    ProjectionInputs pi;
    LayerForwardOptions opts;
    opts.projection_inputs = &pi;
    forward_layer(m.layers[l], m.config, q_in, layout, opts);
    const auto act = forward_layer(quantize_layer(m.layers[l], pi, method), m.config, q_in, layout);
    if (q_out) *q_out = act.layer_output;
    return linear_cka(target.ffn_out_preres, act.ffn_out_preres);
}

}  // namespace detail

using detail::manual_uniform;
using detail::recompute;

}  // namespace hqtest

#pragma once

// Linear restoration at one layer: fit M minimizing ||X_fp - X_q M||_F on
// the FFN pre-residual output, then fold it into the down-projection
// (W_down' = W_down_effective * M). The folded projection is real-valued,
// so the layer loses its integer representation for w_down.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hq/cka.hpp"
#include "hq/model.hpp"
#include "hq/selector.hpp"

namespace hq {

struct LayerCkaProfile {
    std::vector<CkaScore> scores;  // per layer, FP stream vs quantized stream
    std::size_t worst = 0;         // argmin, first wins ties
};

/// Scores every layer at the FFN pre-residual output, each model
/// advancing on its own stream.
LayerCkaProfile layer_cka_profile(const TransformerModel& fp, const HybridModel& quantized,
                                  std::span<const TokenSequence> calib);

std::size_t find_worst_layer(const TransformerModel& fp, const HybridModel& quantized,
                             std::span<const TokenSequence> calib);

struct RestorationOptions {
    double fit_fraction = 0.8;
    std::uint64_t seed = 0;
    /// Re-run RTN on the folded w_down (bits/group of the original codes,
    /// or the fallback config when w_down was already dense).
    bool requantize = false;
    QuantConfig requantize_fallback;
};

struct RestorationResult {
    std::size_t layer = 0;
    std::size_t fit_rows = 0;
    std::size_t heldout_rows = 0;
    CkaScore cka_before;  // fit split
    CkaScore cka_after;
    std::optional<CkaScore> heldout_cka_before;
    std::optional<CkaScore> heldout_cka_after;
    double residual_before = 0.0;  // ||X_fp - X_q||_F on the fit split
    double residual_after = 0.0;   // ||X_fp - X_q M||_F on the fit split
    double m_matrix_norm = 0.0;
    double m_identity_distance = 0.0;  // ||M - I||_F
    bool rank_deficient = false;
    double ls_damping = 0.0;
    bool fell_back_to_identity = false;
    std::string absorbed_into = "w_down";
    bool integer_representation_broken = true;
    bool requantized = false;
    std::optional<CkaScore> cka_after_requantize;  // fit split
    std::optional<double> ppl_before;
    std::optional<double> ppl_after;
    /// Per-layer CKA on all calibration tokens, before and after.
    std::vector<double> layer_cka_before;
    std::vector<double> layer_cka_after;

    std::string to_json() const;
    /// layer,cka_before,cka_after
    std::string cka_csv() const;
};

struct RestorationOutcome {
    HybridModel restored;
    RestorationResult result;
};

/// eval, when non-empty, is used for the before/after perplexity.
RestorationOutcome fit_and_absorb(const TransformerModel& fp, const HybridModel& quantized,
                                  std::size_t layer, std::span<const TokenSequence> calib,
                                  const RestorationOptions& opts = {},
                                  std::span<const TokenSequence> eval = {});

}  // namespace hq

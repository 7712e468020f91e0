#pragma once

// Calibration and evaluation data, perplexity, and the method comparison
// table. Eval windows never overlap calibration windows when both come
// from the same source.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hq/model.hpp"
#include "hq/selector.hpp"

namespace hq {

struct CalibrationSet {
    std::vector<TokenSequence> sequences;
    std::string source = "synthetic";
    std::uint64_t seed = 0;
    std::size_t n_sequences = 0;
    std::size_t seq_len = 0;
    /// Start of each window in the source stream.
    std::vector<std::size_t> offsets;
};

enum class SourceFormat { Auto, Tokens, Text };

/// Calibration windows plus a disjoint evaluation set drawn from one stream.
struct DataSplit {
    CalibrationSet calib;
    CalibrationSet eval;
};

/// Text bytes map to ids 0..255 directly.
std::vector<TokenId> read_source(const std::filesystem::path& path, SourceFormat format,
                                 std::size_t vocab);

/// Picks n_calib + n_eval non-overlapping windows of seq_len from stream.
/// Windows sit on a seeded-offset grid of stride seq_len, so disjointness
/// holds by construction.
DataSplit sample_windows(std::span<const TokenId> stream, std::size_t n_calib, std::size_t n_eval,
                         std::size_t seq_len, std::uint64_t seed, const std::string& source);

CalibrationSet load_calibration(const std::filesystem::path& path, std::size_t n_sequences,
                                std::size_t seq_len, std::uint64_t seed, std::size_t vocab,
                                SourceFormat format = SourceFormat::Auto);

DataSplit load_split(const std::filesystem::path& path, std::size_t n_calib, std::size_t n_eval,
                     std::size_t seq_len, std::uint64_t seed, std::size_t vocab,
                     SourceFormat format = SourceFormat::Auto);

/// True when any window of a intersects any window of b (same source).
bool windows_overlap(const CalibrationSet& a, const CalibrationSet& b);

/// First-order Markov chain over the vocabulary. Row i's transition
/// weights are exp(skew * z_ij) with z_ij ~ N(0, 1); skew 0 is uniform.
class MarkovSource {
public:
    MarkovSource(std::size_t vocab, double skew, std::uint64_t seed);

    std::size_t vocab() const noexcept { return vocab_; }
    double transition(std::size_t from, std::size_t to) const noexcept {
        return transitions_[from * vocab_ + to];
    }
    /// Power-iterated stationary distribution.
    const std::vector<double>& stationary() const noexcept { return stationary_; }
    /// Chain draw whose first state comes from the stationary distribution.
    std::vector<TokenId> generate(std::size_t length, std::uint64_t seed) const;

private:
    std::size_t vocab_;
    std::vector<double> transitions_;
    std::vector<double> stationary_;
};

inline constexpr double kDefaultMarkovSkew = 2.0;

CalibrationSet synth_calibration(const ModelConfig& cfg, std::size_t n_sequences,
                                 std::size_t seq_len, std::uint64_t seed,
                                 double skew = kDefaultMarkovSkew);

/// Synthetic calibration plus disjoint eval windows from one chain draw.
/// The chain itself depends only on chain_seed, so different window seeds
/// sample the same language.
DataSplit synth_split(const ModelConfig& cfg, std::size_t n_calib, std::size_t n_eval,
                      std::size_t seq_len, std::uint64_t seed, double skew = kDefaultMarkovSkew,
                      std::uint64_t chain_seed = 0);

/// Calibration and eval sequences sampled from the model itself, so the
/// full-precision model is the true data distribution and any deviation
/// raises expected NLL. Offsets index the concatenation of all samples.
DataSplit model_split(const TransformerModel& model, std::size_t n_calib, std::size_t n_eval,
                      std::size_t seq_len, std::uint64_t seed, double temperature = 1.0);

struct EvalResult {
    double ppl = 0.0;
    double nll_total = 0.0;
    std::size_t token_count = 0;
    /// CKA against the full-precision reference per layer; empty when
    /// no reference was supplied.
    std::vector<double> per_layer_cka;
    std::string config = "{}";

    double mean_cka() const;
    std::string to_json() const;
};

struct EvalOptions {
    CapturePoint cka_point = CapturePoint::FfnOutput;
    std::size_t cka_max_rows = 0;
    std::uint64_t seed = 0;
};

/// Sum of next-token NLL (natural log) over every non-initial position.
double sequence_nll(const Matrix& logits, std::span<const TokenSequence> seqs);

EvalResult perplexity(const TransformerModel& model, std::span<const TokenSequence> data,
                      const TransformerModel* fp_ref = nullptr, const EvalOptions& opts = {});
EvalResult perplexity(const HybridModel& hybrid, std::span<const TokenSequence> data,
                      const TransformerModel* fp_ref = nullptr, const EvalOptions& opts = {});

struct ComparisonRow {
    std::string label;  // "fp", "uniform:<m>", "hybrid", "hybrid-without:<m>"
    std::vector<std::string> pool;
    double ppl = 0.0;
    /// Mean per-layer CKA vs the FP model on the eval set.
    double mean_eval_cka = 1.0;
    /// Mean of the selected candidates' calibration-time scores.
    std::optional<double> mean_selection_cka;
    std::vector<std::string> methods;  // per layer
};

struct ComparisonTable {
    std::vector<ComparisonRow> rows;
    std::string run_config = "{}";

    const ComparisonRow* find(const std::string& label) const;
    std::string to_json() const;
    /// label,ppl,mean_eval_cka,mean_selection_cka,methods
    std::string to_csv() const;
};

/// Rows: FP, each uniform method, the full-pool hybrid (omitted when the
/// pool has one member, since it equals the uniform row), and one
/// leave-one-out hybrid per member when the pool has 3 or more.
ComparisonTable compare_methods(const TransformerModel& model, const CandidatePool& pool,
                                std::span<const TokenSequence> calib,
                                std::span<const TokenSequence> eval, const SelectionConfig& cfg);

}  // namespace hq

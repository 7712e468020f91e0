#pragma once

// Layer-wise method selection: for each decoder layer every pool member is
// fitted on the quantized stream's activations, run on that stream, and
// scored by linear CKA against the full-precision stream. The best wins
// and its output feeds the next layer.
//
// Cost is exactly L x |pool| quantize_layer calls for the greedy and block
// strategies; the exhaustive oracle is exponential and guarded.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hq/cka.hpp"
#include "hq/model.hpp"
#include "hq/quant_methods.hpp"

namespace hq {

inline constexpr const char* kToolkitVersion = "hq-modular-quant 0.3.0";
inline constexpr int kReportSchemaVersion = 1;

struct SelectionConfig {
    CapturePoint cka_point = CapturePoint::FfnOutput;
    /// Rows kept for CKA scoring; 0 keeps every calibration position.
    std::size_t cka_max_rows = 0;
    std::uint64_t seed = 0;
    /// Upper bound on candidates evaluated concurrently within a layer/block.
    unsigned threads = 1;
};

struct CandidateRecord {
    std::string method;  // pool label
    CkaScore score;
    double seconds = 0.0;
};

struct LayerRecord {
    std::size_t layer = 0;
    std::size_t chosen = 0;  // index into the pool (or per-layer plan)
    std::string chosen_method;
    int bits = 0;
    std::vector<CandidateRecord> candidates;  // pool order
    double seconds = 0.0;
    /// FNV-1a of the quantized-stream input this layer saw.
    std::uint64_t input_hash = 0;
    /// Sensitivity probe score (mixed-bit baseline only).
    std::optional<double> sensitivity;
};

struct BlockRecord {
    std::size_t first_layer = 0;
    std::size_t layer_count = 0;
    std::vector<double> mean_scores;  // per pool member
    std::size_t chosen = 0;
};

struct SelectionReport {
    std::string strategy = "greedy";  // greedy | blockwise | exhaustive | mixed-bit | assignment
    std::size_t block_k = 1;
    CandidatePool pool;
    CapturePoint cka_point = CapturePoint::FfnOutput;
    std::vector<LayerRecord> layers;
    std::vector<BlockRecord> blocks;
    std::uint64_t candidate_evaluations = 0;
    std::uint64_t model_fingerprint = 0;
    std::size_t calibration_rows = 0;
    /// Caller-provided run configuration, embedded verbatim (JSON text).
    std::string run_config = "{}";
    std::string toolkit_version = kToolkitVersion;

    std::vector<std::string> pool_labels() const;
    double mean_selected_score() const;
    std::string to_json() const;
    /// FNV-1a of the JSON with wall-clock fields removed; equal for
    /// reruns with identical inputs.
    std::uint64_t content_hash() const;
    static SelectionReport from_json(const std::string& text);
    /// layer,method,score_<m1>,score_<m2>,...
    std::string to_csv() const;
};

class HybridModel {
public:
    ModelConfig config;
    Matrix embedding;
    std::vector<double> final_norm;
    Matrix lm_head;
    std::vector<QuantizedLayer> layers;
    SelectionReport report;

    ModelHeadView head() const { return {&config, &embedding, final_norm, &lm_head}; }
    std::vector<LayerView> views() const;
    double mean_bits() const;
};

/// Full-precision layers wrapped as a hybrid (every projection dense,
/// tagged RTN); the starting point for planted-corruption fixtures.
HybridModel dense_hybrid(const TransformerModel& model);

ModelForward forward_hybrid(const HybridModel& hybrid, std::span<const TokenSequence> seqs,
                            bool capture = true, bool keep_intermediate = false);

/// Per-layer streams recorded during selection, for post-hoc recomputation.
struct SelectionTrace {
    std::vector<Matrix> fp_inputs;     // X_ref entering layer l
    std::vector<Matrix> quant_inputs;  // H_in entering layer l
};

HybridModel select_greedy(const TransformerModel& model, const CandidatePool& pool,
                          std::span<const TokenSequence> calib, const SelectionConfig& cfg,
                          SelectionTrace* trace = nullptr);

HybridModel select_blockwise(const TransformerModel& model, const CandidatePool& pool,
                             std::span<const TokenSequence> calib, std::size_t block_k,
                             const SelectionConfig& cfg, SelectionTrace* trace = nullptr);

/// Runs a fixed per-layer plan (one MethodConfig per layer) along the
/// quantized stream, recording the single candidate score per layer.
HybridModel assemble_plan(const TransformerModel& model, const std::vector<MethodConfig>& plan,
                          std::span<const TokenSequence> calib, const SelectionConfig& cfg);

struct AssignmentScore {
    std::vector<std::size_t> assignment;  // pool index per layer
    double total_cka = 0.0;
};

struct ExhaustiveResult {
    HybridModel best;
    std::vector<AssignmentScore> table;  // enumeration order
    std::vector<std::size_t> greedy_assignment;
    double greedy_total = 0.0;
    double best_total = 0.0;
    /// 1-based rank of the greedy assignment by total CKA.
    std::size_t greedy_rank = 0;
};

inline constexpr std::size_t kMaxExhaustiveAssignments = 4096;

ExhaustiveResult select_exhaustive(const TransformerModel& model, const CandidatePool& pool,
                                   std::span<const TokenSequence> calib, const SelectionConfig& cfg);

struct MixedBitOptions {
    double avg_bits = 4.0;
    std::vector<int> bit_options = {2, 4, 8};
    /// Method applied everywhere; its qcfg.bits is overridden per layer.
    MethodConfig method;
    int probe_bits = 2;
};

HybridModel mixed_bit_baseline(const TransformerModel& model, std::span<const TokenSequence> calib,
                               const MixedBitOptions& opts, const SelectionConfig& cfg);

/// Optional checks applied by load_hybrid; any mismatch raises HeaderMismatch.
struct HybridExpectations {
    std::optional<std::vector<std::string>> pool_labels;
    std::optional<int> bits;
    std::optional<ModelConfig> config;
};

inline constexpr std::uint32_t kHqtmqVersion = 1;

void save_hybrid(const HybridModel& hybrid, const std::filesystem::path& path);
HybridModel load_hybrid(const std::filesystem::path& path, const HybridExpectations& expect = {});

/// FNV-1a over a matrix's values.
std::uint64_t hash_matrix(const Matrix& m);

}  // namespace hq

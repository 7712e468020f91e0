#pragma once

// The hqquant command surface as a library, so tests can drive it in-process.
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
// failure, 1 anything else.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "hq/error.hpp"

namespace hqtool {

inline constexpr int kExitOk = 0;
inline constexpr int kExitOther = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumerical = 4;

int exit_code_for(const hq::Error& e) noexcept;

/// Where token sequences come from: "synthetic" (Markov chain), "model"
/// (sampled from the full-precision model), or a token/text file path.
struct DataSpec {
    std::string source = "synthetic";
    std::size_t n = 32;
    std::size_t len = 256;
    std::string format = "auto";  // auto | tokens | text
};

struct RunConfig {
    std::string command;
    std::string model_path;
    std::string hybrid_path;
    std::string fp_ref_path;
    std::string pool = "gptq,awq,smoothquant";
    int bits = 4;
    std::size_t group = 128;
    bool symmetric = false;
    int act_bits = 0;  // 0 = full-precision activations
    std::string cka_point = "ffn-output";
    std::size_t cka_max_rows = 0;
    DataSpec calib;
    DataSpec eval{"synthetic", 16, 256, "auto"};
    std::size_t block_k = 1;
    std::string out;
    std::string report;
    std::uint64_t seed = 0;
    unsigned threads = 1;

    // gen-model
    std::size_t layers = 8;
    std::size_t dim = 64;
    std::size_t heads = 4;
    std::size_t ffdim = 172;
    std::size_t vocab = 256;
    std::size_t max_seq = 256;
    std::size_t outliers = 0;
    double outlier_scale = 8.0;
    double gain_spread = 0.0;

    // restore
    long layer = -1;  // -1 = worst layer
    bool requantize_after_restore = false;

    // mixed-bit
    double avg_bits = 4.0;
    std::vector<int> bit_options = {2, 4, 8};
    std::string method = "gptq";
    int probe_bits = 2;

    /// Throws hq::Error(InvalidConfig) on any inconsistency.
    void validate() const;
    std::string to_json() const;
};

/// argv[0] is the program name, as from main().
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hqtool

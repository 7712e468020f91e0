#pragma once

#include <unistd.h>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "hq/model.hpp"
#include "hq/numerics.hpp"

namespace hqtest {

inline hq::Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng,
                                double stddev = 1.0) {
    std::normal_distribution<double> d(0.0, stddev);
    hq::Matrix m(rows, cols);
    for (double& v : m.values()) v = d(rng);
    return m;
}

/// Rows drawn from N(0, A A^T) with a random mixing A, so columns correlate.
inline hq::Matrix correlated_gaussian(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
    const hq::Matrix z = random_matrix(rows, cols, rng);
    hq::Matrix a = random_matrix(cols, cols, rng);
    for (std::size_t i = 0; i < cols; ++i) a(i, i) += 1.0;
    return hq::matmul(z, a);
}

inline hq::Matrix random_orthogonal(std::size_t n, std::mt19937_64& rng) {
    // Gram-Schmidt on a Gaussian matrix.
    hq::Matrix q = random_matrix(n, n, rng);
    for (std::size_t c = 0; c < n; ++c) {
        for (std::size_t p = 0; p < c; ++p) {
            double dot = 0.0;
            for (std::size_t r = 0; r < n; ++r) dot += q(r, c) * q(r, p);
            for (std::size_t r = 0; r < n; ++r) q(r, c) -= dot * q(r, p);
        }
        double norm = 0.0;
        for (std::size_t r = 0; r < n; ++r) norm += q(r, c) * q(r, c);
        norm = std::sqrt(norm);
        for (std::size_t r = 0; r < n; ++r) q(r, c) /= norm;
    }
    return q;
}

inline hq::ModelConfig tiny_config(std::size_t layers = 2, std::size_t d = 16, std::size_t heads = 2,
                                   std::size_t ff = 40, std::size_t vocab = 32, std::size_t max_seq = 64) {
    hq::ModelConfig c;
    c.n_layers = layers;
    c.d_model = d;
    c.n_heads = heads;
    c.d_ff = ff;
    c.vocab = vocab;
    c.max_seq = max_seq;
    return c;
}

inline hq::TransformerModel tiny_model(std::uint64_t seed, const hq::ModelConfig& cfg = tiny_config(),
                                       double gain_spread = 0.5) {
    hq::InitOptions init;
    init.seed = seed;
    init.gain_spread = gain_spread;
    return hq::random_model(cfg, init);
}

inline std::vector<hq::TokenSequence> random_tokens(std::size_t n, std::size_t len, std::size_t vocab,
                                                    std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> d(0, vocab - 1);
    std::vector<hq::TokenSequence> out(n);
    for (auto& s : out) {
        s.resize(len);
        for (auto& t : s) t = static_cast<hq::TokenId>(d(rng));
    }
    return out;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("hqtest-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const noexcept { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

}  // namespace hqtest

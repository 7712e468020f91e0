#include <benchmark/benchmark.h>

#include <random>

#include "hq/cka.hpp"
#include "hq/quant_methods.hpp"

namespace {

hq::Matrix gaussian(std::size_t rows, std::size_t cols, std::uint64_t seed, double stddev = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, stddev);
    hq::Matrix m(rows, cols);
    for (double& v : m.values()) v = d(rng);
    return m;
}

void BM_LinearCka(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto d = static_cast<std::size_t>(state.range(1));
    const hq::Matrix x = gaussian(n, d, 1), y = gaussian(n, d, 2);
    for (auto _ : state) benchmark::DoNotOptimize(hq::linear_cka(x, y));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_LinearCka)->Args({2048, 64})->Args({8192, 64})->Args({2048, 172});

void BM_QuantizeRtn(benchmark::State& state) {
    const hq::Matrix w = gaussian(static_cast<std::size_t>(state.range(0)), 172, 3, 0.1);
    hq::QuantConfig q;
    q.bits = static_cast<int>(state.range(1));
    for (auto _ : state) benchmark::DoNotOptimize(hq::quantize_rtn(w, q));
}
BENCHMARK(BM_QuantizeRtn)->Args({64, 4})->Args({172, 3})->Args({512, 4});

void BM_Gptq(benchmark::State& state) {
    const auto in = static_cast<std::size_t>(state.range(0));
    const hq::Matrix w = gaussian(in, 64, 4, 0.1);
    const hq::Matrix x = gaussian(2048, in, 5);
    hq::QuantConfig q;
    q.bits = 3;
    for (auto _ : state) benchmark::DoNotOptimize(hq::gptq_quantize(w, x, q, 0.01));
}
BENCHMARK(BM_Gptq)->Arg(64)->Arg(172);

void BM_ForwardLayer(benchmark::State& state) {
    hq::ModelConfig cfg;
    cfg.n_layers = 1;
    hq::InitOptions io;
    io.seed = 6;
    const auto model = hq::random_model(cfg, io);
    const auto seqs = static_cast<std::size_t>(state.range(0)), len = static_cast<std::size_t>(state.range(1));
    const hq::Matrix x = gaussian(seqs * len, cfg.d_model, 7);
    const hq::SequenceLayout layout{std::vector<std::size_t>(seqs, len)};
    for (auto _ : state) benchmark::DoNotOptimize(hq::forward_layer(model.layers[0], cfg, x, layout));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(seqs * len));
}
BENCHMARK(BM_ForwardLayer)->Args({8, 256})->Args({32, 256});

}  // namespace
BENCHMARK_MAIN();

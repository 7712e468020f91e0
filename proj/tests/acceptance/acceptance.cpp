// One verdict line per acceptance criterion:
//   PASS|FAIL|FLAG <criterion>: <measurements>
// Per-seed diagnostics go to lines starting with '#'. Exit status is 1 when
// any criterion FAILs; FLAG is informational.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "hq/error.hpp"
#include "hq/evalsuite.hpp"
#include "hq/restoration.hpp"
#include "oracles.hpp"

using namespace hq;
using hqtest::random_matrix;

namespace {

// Tolerances and thresholds.
constexpr double kCkaOracleTol = 1e-10;
constexpr double kCkaInvarianceTol = 1e-9;
constexpr double kCkaSeconds = 5.0;
constexpr int kCkaCases = 100;
constexpr int kCodecCases = 1000;
constexpr double kCodecSeconds = 30.0;
constexpr double kReparamTol = 1e-10;
constexpr int kReparamCases = 50;
constexpr int kGptqSeeds = 50, kGptqWins = 45;
constexpr double kGptqSeconds = 60.0;
constexpr double kPipelineSeconds = 60.0;
constexpr double kRecomputeTol = 1e-12;
constexpr int kToySeeds = 10;
constexpr int kHeterogeneousRuns = 5;
constexpr double kHybridSlack = 1.02;
constexpr int kHybridRuns = 7;
constexpr double kLeaveOneOutSlack = 1.02;
constexpr double kGranularityBand = 1.01;
constexpr double kRestoredCka = 0.999;
constexpr int kOracleSeeds = 20, kOracleRuns = 16;
constexpr double kOracleSlack = 0.01;
constexpr int kMixedBitRuns = 7;
constexpr double kBitAccountingTol = 0.01;
constexpr int kMonotoneRuns = 9;

enum class Outcome { Pass, Fail, Flag };

struct Verdict {
    Outcome outcome;
    std::string detail;
};

int failures = 0;

void report(const char* name, const Verdict& v, double seconds) {
    const char* tag = v.outcome == Outcome::Pass ? "PASS" : v.outcome == Outcome::Fail ? "FAIL" : "FLAG";
    if (v.outcome == Outcome::Fail) ++failures;
    std::printf("%s %s (%.1fs): %s\n", tag, name, seconds, v.detail.c_str());
    std::fflush(stdout);
}

template <class... Args>
std::string fmt(const char* f, Args... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Outcome pass_if(bool ok) { return ok ? Outcome::Pass : Outcome::Fail; }

QuantConfig qbits(int bits) {
    QuantConfig q;
    q.bits = bits;
    return q;
}

MethodConfig method(MethodKind k, const QuantConfig& q) {
    MethodConfig m;
    m.kind = k;
    m.qcfg = q;
    return m;
}

// ---------------------------------------------------------------------------

Verdict cka_correctness() {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<std::size_t> rows(3, 60), cols(1, 12);
    double oracle_err = 0, self_err = 0, inv_err = 0;
    for (int t = 0; t < kCkaCases; ++t) {
        const std::size_t n = rows(rng), dx = cols(rng), dy = cols(rng);
        const Matrix x = random_matrix(n, dx, rng);
        Matrix y = random_matrix(n, dy, rng);
        if (t % 2) y = add(matmul(x, random_matrix(dx, dy, rng)), y);
        const double s = linear_cka(x, y).value;
        oracle_err = std::max(oracle_err, std::abs(s - hqtest::literal_cka(x, y)));
        self_err = std::max(self_err, std::abs(linear_cka(x, x).value - 1.0));

        Matrix shifted = matmul(x, hqtest::random_orthogonal(dx, rng));
        const double c = std::exp(std::uniform_real_distribution<double>(-5, 5)(rng));
        const Matrix offset = random_matrix(1, dx, rng, 10.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < dx; ++j) shifted(i, j) = c * shifted(i, j) + offset(0, j);
        inv_err = std::max(inv_err, std::abs(linear_cka(shifted, y).value - s));
    }
    const double secs = seconds_since(t0);
    return {pass_if(oracle_err <= kCkaOracleTol && self_err <= kCkaInvarianceTol && inv_err <= kCkaInvarianceTol &&
                    secs < kCkaSeconds),
            fmt("%d cases; max |cka - literal| %.2e (tol %.0e); max |self - 1| %.2e; max orth/scale/shift drift "
                "%.2e (tol %.0e)",
                kCkaCases, oracle_err, kCkaOracleTol, self_err, inv_err, kCkaInvarianceTol)};
}

Verdict codec_bound() {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(12);
    std::uniform_int_distribution<std::size_t> dim(1, 48), group(1, 64);
    double worst = 0.0;
    int violations = 0;
    for (int t = 0; t < kCodecCases; ++t) {
        QuantConfig q;
        q.bits = 2 + t % 7;
        q.symmetric = (t / 7) % 2;
        q.group_size = group(rng);
        const Matrix w = random_matrix(dim(rng), dim(rng), rng, std::exp(std::normal_distribution<double>()(rng)));
        const auto codes = quantize_rtn(w, q);
        const Matrix d = dequantize(codes);
        for (std::size_t r = 0; r < w.rows(); ++r)
            for (std::size_t c = 0; c < w.cols(); ++c) {
                const double s = codes.params(codes.group_index(r, c)).scale;
                const double err = std::abs(w(r, c) - d(r, c));
                // 1e-12 absorbs the rounding of (code + zero) * scale itself.
                if (err > 0.5 * s + 1e-12) ++violations;
                if (s > 0) worst = std::max(worst, err / s);
            }
    }
    const double secs = seconds_since(t0);
    return {pass_if(violations == 0 && secs < kCodecSeconds),
            fmt("%d matrices, bits 2..8, both modes; worst |w - deq| / scale %.6f; violations %d", kCodecCases,
                worst, violations)};
}

Verdict reparameterization() {
    double worst = 0.0;
    const ModelConfig cfg = hqtest::tiny_config(1, 32, 4, 80, 64, 64);
    for (int t = 0; t < kReparamCases; ++t) {
        InitOptions io;
        io.seed = 500 + t;
        io.gain_spread = 0.5;
        const auto model = random_model(cfg, io);
        std::mt19937_64 rng(600 + t);
        const Matrix x = random_matrix(32, cfg.d_model, rng);
        const SequenceLayout layout{{16, 16}};
        ProjectionInputs pi;
        LayerForwardOptions opts;
        opts.projection_inputs = &pi;
        const auto fp = forward_layer(model.layers[0], cfg, x, layout, opts);
        for (MethodKind k : {MethodKind::AWQ, MethodKind::SmoothQuant}) {
            auto m = method(k, qbits(2));
            m.quantize_weights = false;
            m.sq_alpha = 0.1 * (t % 11);
            const auto out = forward_layer(quantize_layer(model.layers[0], pi, m), cfg, x, layout);
            worst = std::max(worst, relative_error(out.layer_output, fp.layer_output));
        }
    }
    return {pass_if(worst <= kReparamTol),
            fmt("%d cases x {awq, smoothquant}; max relative layer-output error %.2e (tol %.0e)", kReparamCases,
                worst, kReparamTol)};
}

Verdict gptq_advantage() {
    const auto t0 = std::chrono::steady_clock::now();
    int wins = 0;
    std::vector<double> ratios;
    QuantConfig q = qbits(3);
    q.group_size = 16;
    for (int seed = 0; seed < kGptqSeeds; ++seed) {
        std::mt19937_64 rng(1000 + seed);
        const Matrix x = hqtest::correlated_gaussian(256, 16, rng);
        const Matrix w = random_matrix(16, 16, rng, 0.25);
        const Matrix ref = matmul(x, w);
        const double eg = frobenius_norm(subtract(ref, matmul(x, dequantize(gptq_quantize(w, x, q, 0.01)))));
        const double er = frobenius_norm(subtract(ref, matmul(x, dequantize(quantize_rtn(w, q)))));
        wins += eg <= er;
        ratios.push_back(eg / er);
    }
    const double secs = seconds_since(t0);
    return {pass_if(wins >= kGptqWins && secs < kGptqSeconds),
            fmt("GPTQ error <= RTN in %d/%d seeds (need %d); median GPTQ/RTN error ratio %.3f", wins, kGptqSeeds,
                kGptqWins, median(ratios))};
}

Verdict selection_fidelity() {
    const ModelConfig cfg;  // L=8, d=64
    InitOptions io;
    io.seed = 1;
    io.gain_spread = 0.5;
    const auto model = random_model(cfg, io);
    const auto calib = synth_split(cfg, 32, 0, 256, 2).calib.sequences;
    const auto pool = default_pool(qbits(3));
    SelectionConfig sc;
    sc.threads = 1;

    const std::uint64_t before = quantize_invocations();
    SelectionTrace trace;
    const auto t0 = std::chrono::steady_clock::now();
    const auto h = select_greedy(model, pool, calib, sc, &trace);
    const double secs = seconds_since(t0);
    const std::uint64_t invoked = quantize_invocations() - before;
    const std::uint64_t expected = cfg.n_layers * pool.size();

    const SequenceLayout layout = SequenceLayout::of(calib);
    double worst = 0.0;
    int argmax_mismatch = 0;
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const auto& rec = h.report.layers[l];
        std::size_t best = 0;
        double best_score = -1.0;
        for (std::size_t p = 0; p < pool.size(); ++p) {
            const double s =
                hqtest::recompute(model, l, pool[p], trace.fp_inputs[l], trace.quant_inputs[l], layout).value;
            worst = std::max(worst, std::abs(s - rec.candidates[p].score.value));
            if (s > best_score) best_score = s, best = p;
        }
        argmax_mismatch += best != rec.chosen;
    }

    const MethodConfig gptq = method(MethodKind::GPTQ, qbits(3));
    const bool singleton_exact =
        select_greedy(model, {gptq}, calib, sc).layers == hqtest::manual_uniform(model, gptq, calib);

    std::string methods;
    for (const auto& r : h.report.layers) methods += r.chosen_method + " ";
    std::printf("# fidelity: methods %s\n", methods.c_str());
    return {pass_if(worst <= kRecomputeTol && argmax_mismatch == 0 && h.report.candidate_evaluations == expected &&
                    invoked == expected && singleton_exact && secs < kPipelineSeconds),
            fmt("recomputed scores max |diff| %.1e, argmax mismatches %d; evaluations %llu (reported %llu, L*|P| "
                "%llu); |P|=1 equals uniform: %s; L=8 d=64 32x256 |P|=3 selection %.1fs (limit %.0fs)",
                worst, argmax_mismatch, static_cast<unsigned long long>(invoked),
                static_cast<unsigned long long>(h.report.candidate_evaluations),
                static_cast<unsigned long long>(expected), singleton_exact ? "yes" : "no", secs, kPipelineSeconds)};
}

// Everything the statistical criteria need from one seeded toy run.
struct ToyRun {
    int seed = 0;
    double fp = 0, hybrid = 0, min_uniform = 0, min_loo = 0;
    std::size_t distinct = 0;
    std::string methods;
    double block1 = 0, block2 = 0, block4 = 0;
    bool block1_is_greedy = false;
    double hybrid4 = 0, mixed = 0, mixed_bits = 0, mixed_bits_recount = 0;
    double rtn3 = 0, rtn4 = 0, rtn8 = 0;
    double residual_before = 0, residual_after = 0;
    double heldout_cka_delta = 0, ppl_delta = 0;
    std::size_t restored_layer = 0;
};

// Parameter-weighted mean width of the quantized projections, counted
// from the codes themselves.
double recount_bits(const HybridModel& h) {
    double bits = 0, params = 0;
    for (const auto& layer : h.layers)
        for (Projection p : kAllProjections) {
            if (!layer.has_codes(p)) continue;
            const auto& c = layer.codes(p);
            const double n = static_cast<double>(c.rows() * c.cols());
            bits += n * c.bits();
            params += n;
        }
    return bits / params;
}

TransformerModel toy_model(int seed, std::size_t layers = 8) {
    ModelConfig cfg;
    cfg.n_layers = layers;
    InitOptions io;
    io.seed = seed;
    io.gain_spread = 0.5;
    return random_model(cfg, io);
}

ToyRun toy_run(int seed) {
    ToyRun r;
    r.seed = seed;
    const auto model = toy_model(seed);
    const auto split = model_split(model, 16, 16, 128, seed + 100);
    const auto& calib = split.calib.sequences;
    const auto& eval = split.eval.sequences;
    SelectionConfig sc;
    sc.seed = seed;
    auto ppl = [&](const HybridModel& h) { return perplexity(h, eval).ppl; };

    const auto pool3 = default_pool(qbits(3));
    const auto table = compare_methods(model, pool3, calib, eval, sc);
    r.fp = table.find("fp")->ppl;
    r.hybrid = table.find("hybrid")->ppl;
    r.min_uniform = r.min_loo = 1e300;
    for (const auto& row : table.rows) {
        if (row.label.rfind("uniform:", 0) == 0) r.min_uniform = std::min(r.min_uniform, row.ppl);
        if (row.label.rfind("hybrid-without:", 0) == 0) r.min_loo = std::min(r.min_loo, row.ppl);
    }
    const auto& chosen = table.find("hybrid")->methods;
    r.distinct = std::set<std::string>(chosen.begin(), chosen.end()).size();
    for (const auto& m : chosen) r.methods += m.substr(0, 1);

    const auto greedy = select_greedy(model, pool3, calib, sc);
    const auto block1 = select_blockwise(model, pool3, calib, 1, sc);
    r.block1 = ppl(block1);
    r.block1_is_greedy = block1.layers == greedy.layers && r.block1 == r.hybrid;
    r.block2 = ppl(select_blockwise(model, pool3, calib, 2, sc));
    r.block4 = ppl(select_blockwise(model, pool3, calib, 4, sc));

    const auto restored = fit_and_absorb(model, greedy, find_worst_layer(model, greedy, calib), calib, {}, eval);
    r.restored_layer = restored.result.layer;
    r.residual_before = restored.result.residual_before;
    r.residual_after = restored.result.residual_after;
    r.heldout_cka_delta = restored.result.heldout_cka_after->value - restored.result.heldout_cka_before->value;
    r.ppl_delta = *restored.result.ppl_after - *restored.result.ppl_before;

    r.hybrid4 = ppl(select_greedy(model, default_pool(qbits(4)), calib, sc));
    MixedBitOptions mo;
    mo.avg_bits = 4.0;
    mo.bit_options = {2, 4, 8};
    mo.method = method(MethodKind::GPTQ, qbits(4));
    const auto mixed = mixed_bit_baseline(model, calib, mo, sc);
    r.mixed = ppl(mixed);
    r.mixed_bits = mixed.mean_bits();
    r.mixed_bits_recount = recount_bits(mixed);

    double* rtn[] = {&r.rtn3, &r.rtn4, &r.rtn8};
    int i = 0;
    for (int b : {3, 4, 8}) *rtn[i++] = ppl(select_greedy(model, {method(MethodKind::RTN, qbits(b))}, calib, sc));

    std::printf("# seed %2d fp %.2f hybrid %.2f min-uniform %.2f min-loo %.2f methods %s | block 1/2/4 %.2f %.2f %.2f "
                "| hybrid4 %.2f mixed %.2f (%.3f bits) | rtn 3/4/8 %.2f %.2f %.2f | restore L%zu residual %.4g -> "
                "%.4g heldout-cka %+.4f ppl %+.3f\n",
                seed, r.fp, r.hybrid, r.min_uniform, r.min_loo, r.methods.c_str(), r.block1, r.block2, r.block4,
                r.hybrid4, r.mixed, r.mixed_bits, r.rtn3, r.rtn4, r.rtn8, r.restored_layer, r.residual_before,
                r.residual_after, r.heldout_cka_delta, r.ppl_delta);
    std::fflush(stdout);
    return r;
}

Verdict heterogeneity(const std::vector<ToyRun>& runs) {
    int hetero = 0;
    std::string distinct;
    for (const auto& r : runs) {
        hetero += r.distinct >= 2;
        distinct += std::to_string(r.distinct);
    }
    const std::string detail =
        fmt("%d/%zu runs pick >= 2 methods (need %d); distinct counts per seed %s", hetero, runs.size(),
            kHeterogeneousRuns, distinct.c_str());
    return {hetero >= kHeterogeneousRuns ? Outcome::Pass : Outcome::Flag, detail};
}

Verdict hybrid_vs_uniform(const std::vector<ToyRun>& runs) {
    int ok = 0;
    std::vector<double> loo_gain;
    for (const auto& r : runs) {
        ok += r.hybrid <= r.min_uniform * kHybridSlack;
        loo_gain.push_back(r.hybrid / r.min_loo);
    }
    const double med = median(loo_gain);
    return {pass_if(ok >= kHybridRuns && med <= kLeaveOneOutSlack),
            fmt("hybrid <= %.2f x best uniform in %d/%zu runs (need %d); median hybrid/best-leave-one-out PPL "
                "%.4f (limit %.2f)",
                kHybridSlack, ok, runs.size(), kHybridRuns, med, kLeaveOneOutSlack)};
}

Verdict granularity(const std::vector<ToyRun>& runs) {
    std::vector<double> b1, b2, b4;
    bool exact = true;
    for (const auto& r : runs) {
        b1.push_back(r.block1);
        b2.push_back(r.block2);
        b4.push_back(r.block4);
        exact = exact && r.block1_is_greedy;
    }
    const double m1 = median(b1), m2 = median(b2), m4 = median(b4);
    return {pass_if(exact && m1 <= m2 * kGranularityBand && m2 <= m4 * kGranularityBand),
            fmt("median PPL block-1 %.3f, block-2 %.3f, block-4 %.3f (band %.0f%% per step); block-1 identical "
                "to layer-wise in every run: %s",
                m1, m2, m4, (kGranularityBand - 1) * 100, exact ? "yes" : "no")};
}

Verdict restoration(const std::vector<ToyRun>& runs) {
    // Planted fixture: an invertible map folded into the last layer's w_down.
    const auto model = toy_model(77);
    const auto split = model_split(model, 16, 4, 128, 78);
    const std::size_t last = model.config.n_layers - 1, d = model.config.d_model;
    std::mt19937_64 rng(79);
    auto corrupted = dense_hybrid(model);
    corrupted.layers[last].replace_dense(
        Projection::Down,
        matmul(model.layers[last][Projection::Down], add(Matrix::identity(d), random_matrix(d, d, rng, 0.2))));
    const auto planted = fit_and_absorb(model, corrupted, last, split.calib.sequences, {}, split.eval.sequences);
    const double planted_cka = planted.result.cka_after.value;
    const double planted_heldout = planted.result.heldout_cka_after->value;

    int increased = 0;
    std::vector<double> cka_delta, ppl_delta;
    for (const auto& r : runs) {
        increased += r.residual_after > r.residual_before;
        cka_delta.push_back(r.heldout_cka_delta);
        ppl_delta.push_back(r.ppl_delta);
    }
    return {pass_if(increased == 0 && planted_cka >= kRestoredCka),
            fmt("fit residual increased in %d/%zu runs; planted corruption cka %.3f -> %.6f (need %.3f), held-out "
                "%.6f; worst-layer median held-out cka delta %+.4f, median ppl delta %+.3f",
                increased, runs.size(), planted.result.cka_before.value, planted_cka, kRestoredCka, planted_heldout,
                median(cka_delta), median(ppl_delta))};
}

Verdict exhaustive_oracle() {
    int within = 0, optimal = 0;
    std::vector<double> gaps;
    const auto pool = parse_pool("gptq,awq", qbits(3));
    for (int seed = 0; seed < kOracleSeeds; ++seed) {
        const auto model = toy_model(200 + seed, 3);
        const auto calib = model_split(model, 16, 0, 128, 300 + seed).calib.sequences;
        SelectionConfig sc;
        sc.seed = seed;
        const auto ex = select_exhaustive(model, pool, calib, sc);
        const double gap = (ex.best_total - ex.greedy_total) / ex.best_total;
        gaps.push_back(gap);
        within += gap <= kOracleSlack;
        optimal += ex.greedy_rank == 1;
    }
    return {pass_if(within >= kOracleRuns),
            fmt("greedy within %.0f%% of optimum in %d/%d seeds (need %d); optimal in %d; max gap %.4f%%",
                kOracleSlack * 100, within, kOracleSeeds, kOracleRuns, optimal,
                *std::max_element(gaps.begin(), gaps.end()) * 100)};
}

Verdict mixed_bit(const std::vector<ToyRun>& runs) {
    int ok = 0;
    double accounting = 0, over = 0;
    for (const auto& r : runs) {
        ok += r.hybrid4 <= r.mixed;
        accounting = std::max(accounting, std::abs(r.mixed_bits - r.mixed_bits_recount));
        over = std::max(over, r.mixed_bits_recount - 4.0);
    }
    return {pass_if(ok >= kMixedBitRuns && accounting <= kBitAccountingTol && over <= kBitAccountingTol),
            fmt("4-bit hybrid <= mixed-bit GPTQ in %d/%zu runs (need %d); max |reported - recounted bits| %.2e, "
                "max excess over budget %.3f (tol %.2f)",
                ok, runs.size(), kMixedBitRuns, accounting, std::max(over, 0.0), kBitAccountingTol)};
}

Verdict bit_monotonicity(const std::vector<ToyRun>& runs) {
    int ok = 0;
    for (const auto& r : runs) ok += r.rtn3 >= r.rtn4 && r.rtn4 >= r.rtn8;
    return {pass_if(ok >= kMonotoneRuns),
            fmt("PPL(3) >= PPL(4) >= PPL(8) for uniform RTN in %d/%zu runs (need %d)", ok, runs.size(),
                kMonotoneRuns)};
}

template <class Fn>
ErrorCode code_of(Fn&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    return ErrorCode::InvalidConfig;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), {});
}

void spit(const std::filesystem::path& p, const std::string& bytes) { std::ofstream(p, std::ios::binary) << bytes; }

Verdict determinism_formats() {
    hqtest::TempDir dir;
    ModelConfig cfg;
    cfg.n_layers = 3;
    const auto model = toy_model(5, 3);
    const auto calib = synth_split(cfg, 8, 0, 64, 6).calib.sequences;
    const auto pool = default_pool(qbits(3));
    SelectionConfig sc;
    sc.seed = 9;
    const auto a = select_greedy(model, pool, calib, sc);
    const auto b = select_greedy(model, pool, calib, sc);
    const bool same_hash = a.report.content_hash() == b.report.content_hash() && a.layers == b.layers;

    save_model(model, dir / "m.hqtm");
    save_hybrid(a, dir / "h.hqtmq");
    const auto m2 = load_model(dir / "m.hqtm");
    const auto h2 = load_hybrid(dir / "h.hqtmq");
    save_model(m2, dir / "m2.hqtm");
    save_hybrid(h2, dir / "h2.hqtmq");
    const bool round_trip = fingerprint(m2) == fingerprint(model) && h2.layers == a.layers &&
                            slurp(dir / "m.hqtm") == slurp(dir / "m2.hqtm") &&
                            slurp(dir / "h.hqtmq") == slurp(dir / "h2.hqtmq") &&
                            h2.report.content_hash() == a.report.content_hash();

    int rejected = 0, attempts = 0;
    for (const char* name : {"m.hqtm", "h.hqtmq"}) {
        const bool is_model = name[0] == 'm';
        auto load = [&](const std::filesystem::path& p) {
            return code_of([&] { is_model ? (void)load_model(p) : (void)load_hybrid(p); });
        };
        const std::string bytes = slurp(dir / name);
        std::string flipped = bytes;
        flipped[bytes.size() - 5] ^= 0x10;
        spit(dir / "x", flipped);
        rejected += load(dir / "x") == ErrorCode::ChecksumMismatch;
        spit(dir / "x", bytes.substr(0, bytes.size() / 2));
        rejected += load(dir / "x") == ErrorCode::TruncatedFile;
        spit(dir / "x", "XXXX" + bytes.substr(4));
        rejected += load(dir / "x") == ErrorCode::BadMagic;
        attempts += 3;
    }
    return {pass_if(same_hash && round_trip && rejected == attempts),
            fmt("rerun report hash %016llx == %016llx; HQTM/HQTM-Q bit-exact round trip: %s; corrupted files "
                "rejected %d/%d",
                static_cast<unsigned long long>(a.report.content_hash()),
                static_cast<unsigned long long>(b.report.content_hash()), round_trip ? "yes" : "no", rejected,
                attempts)};
}

}  // namespace

int main(int argc, char** argv) {
    std::set<std::string> only(argv + 1, argv + argc);
    auto run = [&](const char* name, const std::function<Verdict()>& fn) {
        if (!only.empty() && !only.count(name)) return;
        const auto t0 = std::chrono::steady_clock::now();
        Verdict v{Outcome::Fail, ""};
        try {
            v = fn();
        } catch (const std::exception& e) {
            v = {Outcome::Fail, std::string("threw ") + e.what()};
        }
        report(name, v, seconds_since(t0));
    };

    run("cka-correctness", cka_correctness);
    run("codec-bound", codec_bound);
    run("reparameterization-exact", reparameterization);
    run("gptq-advantage", gptq_advantage);
    run("selection-fidelity", selection_fidelity);
    run("exhaustive-oracle", exhaustive_oracle);
    run("determinism-formats", determinism_formats);

    static const std::set<std::string> statistical = {"heterogeneity", "hybrid-vs-uniform", "granularity-ordering",
                                                      "restoration", "mixed-bit-baseline", "bit-monotonicity"};
    bool need_runs = only.empty();
    for (const auto& s : only) need_runs = need_runs || statistical.count(s);
    std::vector<ToyRun> runs;
    if (need_runs)
        for (int seed = 1; seed <= kToySeeds; ++seed) runs.push_back(toy_run(seed));

    run("heterogeneity", [&] { return heterogeneity(runs); });
    run("hybrid-vs-uniform", [&] { return hybrid_vs_uniform(runs); });
    run("granularity-ordering", [&] { return granularity(runs); });
    run("restoration", [&] { return restoration(runs); });
    run("mixed-bit-baseline", [&] { return mixed_bit(runs); });
    run("bit-monotonicity", [&] { return bit_monotonicity(runs); });
    return failures ? 1 : 0;
}

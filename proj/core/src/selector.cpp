#include "hq/selector.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <future>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "hq/error.hpp"

namespace hq {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Re-raises a pipeline error with the layer (and method) that produced it.
template <class F>
auto with_context(std::size_t layer, const std::string& method, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const Error& e) {
        std::string where = "layer " + std::to_string(layer);
        if (!method.empty()) where += " (" + method + ")";
        throw Error(e.code(), where + ": " + e.what());
    }
}

void run_parallel(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& body) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    for (std::size_t start = 0; start < n; start += threads) {
        const std::size_t end = std::min<std::size_t>(n, start + threads);
        std::vector<std::future<void>> jobs;
        for (std::size_t i = start; i < end; ++i) jobs.push_back(std::async(std::launch::async, body, i));
        for (auto& j : jobs) j.get();
    }
}

class Scorer {
public:
    explicit Scorer(const SelectionConfig& cfg) : cfg_(cfg) {}

    CkaScore operator()(const LayerActivations& target, const LayerActivations& candidate,
                        std::size_t layer) const {
        const Matrix& x = target.at(cfg_.cka_point);
        const Matrix& y = candidate.at(cfg_.cka_point);
        if (cfg_.cka_max_rows == 0 || x.rows() <= cfg_.cka_max_rows) return linear_cka(x, y);
        const auto idx = subsample_indices(x.rows(), cfg_.cka_max_rows,
                                           cfg_.seed ^ (0x9e3779b97f4a7c15ull * (layer + 1)));
        return linear_cka(take_rows(x, idx), take_rows(y, idx));
    }

    bool keep_intermediate() const { return cfg_.cka_point == CapturePoint::FfnIntermediate; }

private:
    const SelectionConfig& cfg_;
};

ProjectionInputs capture_inputs(const LayerWeights& w, const ModelConfig& cfg, const Matrix& input,
                                const SequenceLayout& layout) {
    ProjectionInputs pi;
    LayerForwardOptions opts;
    opts.projection_inputs = &pi;
    forward_layer(w, cfg, input, layout, opts);
    return pi;
}

void validate_inputs(const TransformerModel& model, std::span<const TokenSequence> calib) {
    model.validate();
    if (calib.empty()) fail(ErrorCode::InvalidConfig, "calibration set is empty");
    std::size_t rows = 0;
    for (const auto& s : calib) rows += s.size();
    if (rows < 2) fail(ErrorCode::InvalidConfig, "calibration set needs at least two positions");
}

HybridModel shell_of(const TransformerModel& model) {
    HybridModel h;
    h.config = model.config;
    h.embedding = model.embedding;
    h.final_norm = model.final_norm;
    h.lm_head = model.lm_head;
    return h;
}

using PoolFor = std::function<const CandidatePool&(std::size_t layer)>;

// Shared engine for greedy (block_k = 1), blockwise, and fixed plans. Each
// block is evaluated once per candidate, chaining the candidate through the
// block's layers on the quantized stream.
HybridModel run_blocks(const TransformerModel& model, const PoolFor& pool_for,
                       const CandidatePool& report_pool, std::span<const TokenSequence> calib,
                       std::size_t block_k, const SelectionConfig& cfg, SelectionTrace* trace,
                       const std::string& strategy) {
    validate_inputs(model, calib);
    if (block_k < 1) fail(ErrorCode::InvalidConfig, "block_k must be >= 1");
    const std::size_t L = model.config.n_layers;
    for (std::size_t l = 0; l < L; ++l) {
        const auto& pool = pool_for(l);
        if (pool.empty()) fail(ErrorCode::EmptyPool, "candidate pool is empty");
        for (const auto& m : pool) m.validate();
    }

    const Scorer score(cfg);
    LayerForwardOptions fwd;
    fwd.keep_intermediate = score.keep_intermediate();

    const SequenceLayout layout = SequenceLayout::of(calib);
    Matrix x_ref = embed_tokens(model.config, model.embedding, calib);
    Matrix h_in = x_ref;

    HybridModel hybrid = shell_of(model);
    SelectionReport& report = hybrid.report;
    report.strategy = strategy;
    report.block_k = block_k;
    report.pool = report_pool;
    report.cka_point = cfg.cka_point;
    report.model_fingerprint = fingerprint(model);
    report.calibration_rows = layout.total();
    if (trace) *trace = {};

    for (std::size_t b = 0; b < L; b += block_k) {
        const std::size_t e = std::min(L, b + block_k);
        const CandidatePool& pool = pool_for(b);
        for (std::size_t l = b + 1; l < e; ++l) {
            if (pool_for(l).size() != pool.size()) {
                fail(ErrorCode::InvalidConfig, "pool size changes inside a block");
            }
        }

        // Step 1: full-precision targets along the reference stream.
        std::vector<LayerActivations> targets;
        std::vector<Matrix> fp_inputs;
        Matrix x = x_ref;
        for (std::size_t l = b; l < e; ++l) {
            fp_inputs.push_back(x);
            targets.push_back(with_context(l, "", [&] {
                return forward_layer(model.layers[l], model.config, x, layout, fwd);
            }));
            x = targets.back().layer_output;
        }
        // Every candidate enters the block on the same stream, so the first
        // layer's calibration inputs are shared.
        const ProjectionInputs first_calib = with_context(b, "", [&] {
            return capture_inputs(model.layers[b], model.config, h_in, layout);
        });

        struct Chain {
            std::vector<QuantizedLayer> layers;
            std::vector<CkaScore> scores;
            std::vector<double> seconds;
            std::vector<Matrix> inputs;
            Matrix out;
            double mean = 0.0;
        };
        std::vector<Chain> chains(pool.size());

        // Step 2: quantize, run, and score every candidate.
        run_parallel(pool.size(), cfg.threads, [&](std::size_t i) {
            Chain& chain = chains[i];
            Matrix h = h_in;
            double sum = 0.0;
            for (std::size_t l = b; l < e; ++l) {
                const MethodConfig& method = pool_for(l)[i];
                const auto t0 = Clock::now();
                with_context(l, method.label(), [&] {
                    ProjectionInputs local;
                    if (l != b) local = capture_inputs(model.layers[l], model.config, h, layout);
                    const ProjectionInputs& pi = l == b ? first_calib : local;
                    QuantizedLayer ql = quantize_layer(model.layers[l], pi, method);
                    LayerActivations act = forward_layer(ql, model.config, h, layout, fwd);
                    const CkaScore s = score(targets[l - b], act, l);
                    sum += s.value;
                    chain.scores.push_back(s);
                    chain.layers.push_back(std::move(ql));
                    chain.inputs.push_back(std::move(h));
                    h = std::move(act.layer_output);
                });
                chain.seconds.push_back(seconds_since(t0));
            }
            chain.out = std::move(h);
            chain.mean = sum / static_cast<double>(e - b);
        });
        report.candidate_evaluations += pool.size() * (e - b);

        std::size_t best = 0;
        for (std::size_t i = 1; i < chains.size(); ++i) {
            if (chains[i].mean > chains[best].mean) best = i;
        }

        // Step 3: assemble and advance both streams.
        if (e - b > 1 || block_k > 1) {
            BlockRecord block;
            block.first_layer = b;
            block.layer_count = e - b;
            block.chosen = best;
            for (const auto& c : chains) block.mean_scores.push_back(c.mean);
            report.blocks.push_back(std::move(block));
        }
        for (std::size_t l = b; l < e; ++l) {
            const auto& layer_pool = pool_for(l);
            LayerRecord rec;
            rec.layer = l;
            rec.chosen = best;
            rec.chosen_method = layer_pool[best].label();
            rec.bits = layer_pool[best].qcfg.bits;
            rec.input_hash = hash_matrix(chains[best].inputs[l - b]);
            for (std::size_t i = 0; i < chains.size(); ++i) {
                rec.candidates.push_back(
                    {layer_pool[i].label(), chains[i].scores[l - b], chains[i].seconds[l - b]});
                rec.seconds += chains[i].seconds[l - b];
            }
            report.layers.push_back(std::move(rec));
            hybrid.layers.push_back(std::move(chains[best].layers[l - b]));
        }
        if (trace) {
            for (auto& m : fp_inputs) trace->fp_inputs.push_back(std::move(m));
            for (auto& m : chains[best].inputs) trace->quant_inputs.push_back(std::move(m));
        }
        h_in = std::move(chains[best].out);
        x_ref = std::move(x);
    }
    return hybrid;
}

nlohmann::json method_to_json(const MethodConfig& m) {
    nlohmann::json j = {
        {"method", m.label()},
        {"bits", m.qcfg.bits},
        {"group_size", m.qcfg.group_size},
        {"symmetric", m.qcfg.symmetric},
        {"act_bits", m.qcfg.act_bits ? nlohmann::json(*m.qcfg.act_bits) : nlohmann::json(nullptr)},
        {"gptq_damping", m.gptq_damping},
        {"awq_alpha_grid", m.awq_alpha_grid},
        {"sq_alpha", m.sq_alpha},
    };
    return j;
}

MethodConfig method_from_json(const nlohmann::json& j) {
    MethodConfig m;
    m.kind = parse_method(j.at("method").get<std::string>());
    m.qcfg.bits = j.at("bits").get<int>();
    m.qcfg.group_size = j.at("group_size").get<std::size_t>();
    m.qcfg.symmetric = j.at("symmetric").get<bool>();
    if (!j.at("act_bits").is_null()) m.qcfg.act_bits = j.at("act_bits").get<int>();
    m.gptq_damping = j.at("gptq_damping").get<double>();
    m.awq_alpha_grid = j.at("awq_alpha_grid").get<std::vector<double>>();
    m.sq_alpha = j.at("sq_alpha").get<double>();
    return m;
}

std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << v;
    return os.str();
}

std::uint64_t parse_hex64(const std::string& s) { return std::stoull(s, nullptr, 16); }

}  // namespace

std::uint64_t hash_matrix(const Matrix& m) {
    std::uint64_t h = 14695981039346656037ull;
    const auto* p = reinterpret_cast<const unsigned char*>(m.values().data());
    for (std::size_t i = 0; i < m.size() * sizeof(double); ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

std::vector<std::string> SelectionReport::pool_labels() const {
    std::vector<std::string> out;
    for (const auto& m : pool) out.push_back(m.label());
    return out;
}

double SelectionReport::mean_selected_score() const {
    if (layers.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& l : layers) sum += l.candidates.at(l.chosen).score.value;
    return sum / static_cast<double>(layers.size());
}

std::string SelectionReport::to_json() const {
    nlohmann::json j;
    j["schema_version"] = kReportSchemaVersion;
    j["toolkit_version"] = toolkit_version;
    j["strategy"] = strategy;
    j["block_k"] = block_k;
    j["cka_point"] = std::string(capture_point_name(cka_point));
    j["model_fingerprint"] = hex64(model_fingerprint);
    j["calibration_rows"] = calibration_rows;
    j["candidate_evaluations"] = candidate_evaluations;
    j["pool"] = nlohmann::json::array();
    for (const auto& m : pool) j["pool"].push_back(method_to_json(m));
    j["layers"] = nlohmann::json::array();
    for (const auto& l : layers) {
        nlohmann::json lj = {
            {"layer", l.layer},
            {"chosen", l.chosen},
            {"chosen_method", l.chosen_method},
            {"bits", l.bits},
            {"seconds", l.seconds},
            {"input_hash", hex64(l.input_hash)},
            {"sensitivity", l.sensitivity ? nlohmann::json(*l.sensitivity) : nlohmann::json(nullptr)},
        };
        lj["candidates"] = nlohmann::json::array();
        for (const auto& c : l.candidates) {
            lj["candidates"].push_back({{"method", c.method},
                                        {"cka", c.score.value},
                                        {"degenerate", c.score.degenerate},
                                        {"n_rows", c.score.n_rows},
                                        {"seconds", c.seconds}});
        }
        j["layers"].push_back(std::move(lj));
    }
    j["blocks"] = nlohmann::json::array();
    for (const auto& b : blocks) {
        j["blocks"].push_back({{"first_layer", b.first_layer},
                               {"layer_count", b.layer_count},
                               {"mean_scores", b.mean_scores},
                               {"chosen", b.chosen}});
    }
    j["run_config"] = nlohmann::json::parse(run_config.empty() ? "{}" : run_config);
    return j.dump(2);
}

std::uint64_t SelectionReport::content_hash() const {
    nlohmann::json j = nlohmann::json::parse(to_json());
    for (auto& l : j["layers"]) {
        l.erase("seconds");
        for (auto& c : l["candidates"]) c.erase("seconds");
    }
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : j.dump()) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

SelectionReport SelectionReport::from_json(const std::string& text) {
    SelectionReport r;
    try {
        const auto j = nlohmann::json::parse(text);
        if (j.at("schema_version").get<int>() != kReportSchemaVersion) {
            fail(ErrorCode::HeaderMismatch, "unsupported report schema version");
        }
        r.toolkit_version = j.at("toolkit_version").get<std::string>();
        r.strategy = j.at("strategy").get<std::string>();
        r.block_k = j.at("block_k").get<std::size_t>();
        r.cka_point = parse_capture_point(j.at("cka_point").get<std::string>());
        r.model_fingerprint = parse_hex64(j.at("model_fingerprint").get<std::string>());
        r.calibration_rows = j.at("calibration_rows").get<std::size_t>();
        r.candidate_evaluations = j.at("candidate_evaluations").get<std::uint64_t>();
        for (const auto& m : j.at("pool")) r.pool.push_back(method_from_json(m));
        for (const auto& lj : j.at("layers")) {
            LayerRecord l;
            l.layer = lj.at("layer").get<std::size_t>();
            l.chosen = lj.at("chosen").get<std::size_t>();
            l.chosen_method = lj.at("chosen_method").get<std::string>();
            l.bits = lj.at("bits").get<int>();
            l.seconds = lj.at("seconds").get<double>();
            l.input_hash = parse_hex64(lj.at("input_hash").get<std::string>());
            if (!lj.at("sensitivity").is_null()) l.sensitivity = lj.at("sensitivity").get<double>();
            for (const auto& cj : lj.at("candidates")) {
                CandidateRecord c;
                c.method = cj.at("method").get<std::string>();
                c.score.value = cj.at("cka").get<double>();
                c.score.degenerate = cj.at("degenerate").get<bool>();
                c.score.n_rows = cj.at("n_rows").get<std::size_t>();
                c.seconds = cj.at("seconds").get<double>();
                l.candidates.push_back(std::move(c));
            }
            r.layers.push_back(std::move(l));
        }
        for (const auto& bj : j.at("blocks")) {
            BlockRecord b;
            b.first_layer = bj.at("first_layer").get<std::size_t>();
            b.layer_count = bj.at("layer_count").get<std::size_t>();
            b.mean_scores = bj.at("mean_scores").get<std::vector<double>>();
            b.chosen = bj.at("chosen").get<std::size_t>();
            r.blocks.push_back(std::move(b));
        }
        r.run_config = j.at("run_config").dump();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::HeaderMismatch, std::string("selection report: ") + e.what());
    }
    return r;
}

std::string SelectionReport::to_csv() const {
    // Repeated labels get a #k suffix so columns stay unique.
    std::vector<std::string> columns;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        std::string label = pool[i].label();
        const auto seen = std::count_if(pool.begin(), pool.begin() + static_cast<long>(i),
                                        [&](const MethodConfig& m) { return m.label() == label; });
        if (seen > 0) label += "#" + std::to_string(seen + 1);
        columns.push_back("score_" + label);
    }
    std::ostringstream os;
    os.precision(17);
    os << "layer,method";
    for (const auto& c : columns) os << ',' << c;
    os << '\n';
    for (const auto& l : layers) {
        os << l.layer << ',' << l.chosen_method;
        for (std::size_t i = 0; i < columns.size(); ++i) {
            os << ',';
            if (i < l.candidates.size()) os << l.candidates[i].score.value;
        }
        os << '\n';
    }
    return os.str();
}

std::vector<LayerView> HybridModel::views() const {
    std::vector<LayerView> v;
    v.reserve(layers.size());
    for (const auto& l : layers) v.push_back(l.view());
    return v;
}

double HybridModel::mean_bits() const {
    double bits = 0.0;
    double params = 0.0;
    for (const auto& l : layers) {
        const auto n = static_cast<double>(l.parameter_count());
        bits += l.mean_bits() * n;
        params += n;
    }
    return params == 0.0 ? 0.0 : bits / params;
}

HybridModel dense_hybrid(const TransformerModel& model) {
    model.validate();
    HybridModel h = shell_of(model);
    for (const auto& w : model.layers) h.layers.push_back(QuantizedLayer::dense(MethodKind::RTN, w));
    h.report.strategy = "dense";
    h.report.model_fingerprint = fingerprint(model);
    for (std::size_t l = 0; l < h.layers.size(); ++l) {
        LayerRecord r;
        r.layer = l;
        r.chosen_method = "rtn";
        r.bits = 32;
        h.report.layers.push_back(std::move(r));
    }
    return h;
}

ModelForward forward_hybrid(const HybridModel& hybrid, std::span<const TokenSequence> seqs,
                            bool capture, bool keep_intermediate) {
    const auto views = hybrid.views();
    return forward_stack(hybrid.head(), views, seqs, capture, keep_intermediate);
}

HybridModel select_greedy(const TransformerModel& model, const CandidatePool& pool,
                          std::span<const TokenSequence> calib, const SelectionConfig& cfg,
                          SelectionTrace* trace) {
    if (pool.empty()) fail(ErrorCode::EmptyPool, "candidate pool is empty");
    return run_blocks(model, [&](std::size_t) -> const CandidatePool& { return pool; }, pool, calib, 1,
                      cfg, trace, "greedy");
}

HybridModel select_blockwise(const TransformerModel& model, const CandidatePool& pool,
                             std::span<const TokenSequence> calib, std::size_t block_k,
                             const SelectionConfig& cfg, SelectionTrace* trace) {
    if (pool.empty()) fail(ErrorCode::EmptyPool, "candidate pool is empty");
    return run_blocks(model, [&](std::size_t) -> const CandidatePool& { return pool; }, pool, calib,
                      block_k, cfg, trace, block_k == 1 ? "greedy" : "blockwise");
}

HybridModel assemble_plan(const TransformerModel& model, const std::vector<MethodConfig>& plan,
                          std::span<const TokenSequence> calib, const SelectionConfig& cfg) {
    if (plan.size() != model.config.n_layers) {
        fail(ErrorCode::InvalidConfig, "plan length != layer count");
    }
    std::vector<CandidatePool> singles;
    CandidatePool distinct;
    for (const auto& m : plan) {
        singles.push_back({m});
        if (std::find(distinct.begin(), distinct.end(), m) == distinct.end()) distinct.push_back(m);
    }
    return run_blocks(model, [&](std::size_t l) -> const CandidatePool& { return singles[l]; },
                      distinct, calib, 1, cfg, nullptr, "assignment");
}

ExhaustiveResult select_exhaustive(const TransformerModel& model, const CandidatePool& pool,
                                   std::span<const TokenSequence> calib, const SelectionConfig& cfg) {
    if (pool.empty()) fail(ErrorCode::EmptyPool, "candidate pool is empty");
    validate_inputs(model, calib);
    const std::size_t L = model.config.n_layers;
    double space = std::pow(static_cast<double>(pool.size()), static_cast<double>(L));
    if (space > static_cast<double>(kMaxExhaustiveAssignments)) {
        fail(ErrorCode::SearchSpaceTooLarge, std::to_string(pool.size()) + "^" + std::to_string(L) +
                                                 " assignments exceeds " +
                                                 std::to_string(kMaxExhaustiveAssignments));
    }
    for (const auto& m : pool) m.validate();

    const Scorer score(cfg);
    LayerForwardOptions fwd;
    fwd.keep_intermediate = score.keep_intermediate();
    const SequenceLayout layout = SequenceLayout::of(calib);
    const Matrix embedded = embed_tokens(model.config, model.embedding, calib);

    std::vector<LayerActivations> targets;
    {
        Matrix x = embedded;
        for (std::size_t l = 0; l < L; ++l) {
            targets.push_back(forward_layer(model.layers[l], model.config, x, layout, fwd));
            x = targets.back().layer_output;
        }
    }

    ExhaustiveResult result;
    std::vector<std::size_t> prefix;
    // Depth-first over assignments, sharing each prefix's stream.
    std::function<void(std::size_t, const Matrix&, double)> recurse =
        [&](std::size_t l, const Matrix& h, double total) {
            if (l == L) {
                result.table.push_back({prefix, total});
                return;
            }
            const ProjectionInputs pi = capture_inputs(model.layers[l], model.config, h, layout);
            for (std::size_t i = 0; i < pool.size(); ++i) {
                LayerActivations act = with_context(l, pool[i].label(), [&] {
                    const QuantizedLayer ql = quantize_layer(model.layers[l], pi, pool[i]);
                    return forward_layer(ql, model.config, h, layout, fwd);
                });
                const double s = score(targets[l], act, l).value;
                prefix.push_back(i);
                recurse(l + 1, act.layer_output, total + s);
                prefix.pop_back();
            }
        };
    recurse(0, embedded, 0.0);

    std::size_t best = 0;
    for (std::size_t i = 1; i < result.table.size(); ++i) {
        if (result.table[i].total_cka > result.table[best].total_cka) best = i;
    }
    result.best_total = result.table[best].total_cka;

    const HybridModel greedy = select_greedy(model, pool, calib, cfg);
    for (const auto& rec : greedy.report.layers) result.greedy_assignment.push_back(rec.chosen);
    for (const auto& row : result.table) {
        if (row.assignment == result.greedy_assignment) result.greedy_total = row.total_cka;
    }
    result.greedy_rank = 1;
    for (const auto& row : result.table) {
        if (row.total_cka > result.greedy_total) ++result.greedy_rank;
    }

    std::vector<MethodConfig> plan;
    for (std::size_t idx : result.table[best].assignment) plan.push_back(pool[idx]);
    result.best = assemble_plan(model, plan, calib, cfg);
    result.best.report.strategy = "exhaustive";
    result.best.report.pool = pool;
    for (std::size_t l = 0; l < L; ++l) result.best.report.layers[l].chosen = result.table[best].assignment[l];
    return result;
}

HybridModel mixed_bit_baseline(const TransformerModel& model, std::span<const TokenSequence> calib,
                               const MixedBitOptions& opts, const SelectionConfig& cfg) {
    validate_inputs(model, calib);
    std::vector<int> options = opts.bit_options;
    std::sort(options.begin(), options.end());
    options.erase(std::unique(options.begin(), options.end()), options.end());
    if (options.empty()) fail(ErrorCode::InvalidConfig, "bit_options is empty");
    for (int b : options) {
        if (b < 2 || b > 8) fail(ErrorCode::InvalidConfig, "bit option outside [2, 8]");
    }
    constexpr double kSlack = 1e-9;
    if (static_cast<double>(options.front()) > opts.avg_bits + kSlack) {
        fail(ErrorCode::InfeasibleBudget, "budget " + std::to_string(opts.avg_bits) +
                                              " below the smallest bit option");
    }
    const std::size_t L = model.config.n_layers;

    // Sensitivity probe: low-bit RTN on the full-precision stream.
    const Scorer score(cfg);
    LayerForwardOptions fwd;
    fwd.keep_intermediate = score.keep_intermediate();
    const SequenceLayout layout = SequenceLayout::of(calib);
    MethodConfig probe;
    probe.kind = MethodKind::RTN;
    probe.qcfg = opts.method.qcfg;
    probe.qcfg.bits = opts.probe_bits;
    probe.qcfg.act_bits.reset();
    std::vector<double> sensitivity(L);
    std::vector<double> params(L);
    {
        Matrix x = embed_tokens(model.config, model.embedding, calib);
        for (std::size_t l = 0; l < L; ++l) {
            const LayerActivations target = forward_layer(model.layers[l], model.config, x, layout, fwd);
            const QuantizedLayer q = apply_rtn(model.layers[l], probe);
            const LayerActivations act = forward_layer(q, model.config, x, layout, fwd);
            sensitivity[l] = score(target, act, l).value;
            double n = 0.0;
            for (const auto& m : model.layers[l].proj) n += static_cast<double>(m.size());
            params[l] = n;
            x = target.layer_output;
        }
    }

    // Most sensitive (lowest probe CKA) layers are upgraded first, each to
    // the widest option the remaining budget allows.
    std::vector<std::size_t> order(L);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return sensitivity[a] < sensitivity[b]; });
    const double total_params = std::accumulate(params.begin(), params.end(), 0.0);
    const double budget = opts.avg_bits * total_params;
    std::vector<int> bits(L, options.front());
    double used = options.front() * total_params;
    for (std::size_t l : order) {
        for (auto it = options.rbegin(); it != options.rend(); ++it) {
            const double next = used + (*it - bits[l]) * params[l];
            if (next <= budget * (1.0 + kSlack)) {
                used = next;
                bits[l] = *it;
                break;
            }
        }
    }

    std::vector<MethodConfig> plan(L, opts.method);
    for (std::size_t l = 0; l < L; ++l) plan[l].qcfg.bits = bits[l];
    HybridModel hybrid = assemble_plan(model, plan, calib, cfg);
    hybrid.report.strategy = "mixed-bit";
    for (std::size_t l = 0; l < L; ++l) hybrid.report.layers[l].sensitivity = sensitivity[l];
    return hybrid;
}

}  // namespace hq

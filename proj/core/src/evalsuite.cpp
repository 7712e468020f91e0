#include "hq/evalsuite.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "hq/cka.hpp"
#include "hq/error.hpp"

namespace hq {

namespace {

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

bool looks_like_text(const std::filesystem::path& path) {
    const auto ext = path.extension().string();
    return ext == ".txt" || ext == ".text" || ext == ".md";
}

std::vector<double> layer_cka(const ModelForward& ref, const ModelForward& test, const EvalOptions& opts) {
    std::vector<double> out;
    if (ref.layers.size() != test.layers.size()) {
        fail(ErrorCode::DimensionMismatch, "reference and evaluated models differ in layer count");
    }
    for (std::size_t l = 0; l < ref.layers.size(); ++l) {
        const Matrix& a = ref.layers[l].at(opts.cka_point);
        const Matrix& b = test.layers[l].at(opts.cka_point);
        if (opts.cka_max_rows > 0 && opts.cka_max_rows < a.rows()) {
            const auto idx = subsample_indices(a.rows(), opts.cka_max_rows, opts.seed ^ (kGolden * (l + 1)));
            out.push_back(linear_cka(take_rows(a, idx), take_rows(b, idx)).value);
        } else {
            out.push_back(linear_cka(a, b).value);
        }
    }
    return out;
}

EvalResult finish(const ModelForward& fwd, std::span<const TokenSequence> data) {
    EvalResult r;
    r.nll_total = sequence_nll(fwd.logits, data);
    for (const auto& s : data) r.token_count += s.empty() ? 0 : s.size() - 1;
    if (r.token_count == 0) fail(ErrorCode::InvalidConfig, "evaluation data has no predictable positions");
    r.ppl = std::exp(r.nll_total / static_cast<double>(r.token_count));
    return r;
}

EvalResult evaluate(const ModelHeadView& head, std::span<const LayerView> layers,
                    std::span<const TokenSequence> data, const TransformerModel* fp_ref,
                    const EvalOptions& opts) {
    if (data.empty()) fail(ErrorCode::InvalidConfig, "empty evaluation set");
    const bool capture = fp_ref != nullptr;
    const bool wide = opts.cka_point == CapturePoint::FfnIntermediate;
    const ModelForward fwd = forward_stack(head, layers, data, capture, capture && wide);
    EvalResult r = finish(fwd, data);
    if (fp_ref) {
        const ModelForward ref = forward_model(*fp_ref, data, true, wide);
        r.per_layer_cka = layer_cka(ref, fwd, opts);
    }
    return r;
}

}  // namespace

std::vector<TokenId> read_source(const std::filesystem::path& path, SourceFormat format,
                                 std::size_t vocab) {
    if (!std::filesystem::exists(path)) fail(ErrorCode::FileNotFound, path.string());
    if (format == SourceFormat::Auto) format = looks_like_text(path) ? SourceFormat::Text : SourceFormat::Tokens;
    std::vector<TokenId> ids;
    if (format == SourceFormat::Tokens) {
        ids = read_token_file(path);
    } else {
        std::ifstream f(path, std::ios::binary);
        if (!f) fail(ErrorCode::FileNotFound, path.string());
        const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                               std::istreambuf_iterator<char>());
        ids.assign(bytes.begin(), bytes.end());
    }
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= vocab) {
            fail(ErrorCode::TokenOutOfRange, "id " + std::to_string(ids[i]) + " at position " +
                                                 std::to_string(i) + " >= vocab " + std::to_string(vocab));
        }
    }
    return ids;
}

DataSplit sample_windows(std::span<const TokenId> stream, std::size_t n_calib, std::size_t n_eval,
                         std::size_t seq_len, std::uint64_t seed, const std::string& source) {
    const std::size_t need = n_calib + n_eval;
    if (need == 0) fail(ErrorCode::InvalidConfig, "no windows requested");
    if (seq_len < 2) fail(ErrorCode::InvalidConfig, "seq_len must be >= 2");
    const std::size_t slots = stream.size() / seq_len;
    if (slots < need) {
        fail(ErrorCode::FileTooShort, source + ": " + std::to_string(stream.size()) + " tokens hold " +
                                          std::to_string(slots) + " windows of " + std::to_string(seq_len) +
                                          ", need " + std::to_string(need));
    }
    std::mt19937_64 rng(seed);
    const std::size_t slack = stream.size() - slots * seq_len;
    const std::size_t shift = std::uniform_int_distribution<std::size_t>(0, slack)(rng);
    std::vector<std::size_t> order(slots);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = 0; i < need; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, slots - 1);
        std::swap(order[i], order[pick(rng)]);
    }

    DataSplit split;
    auto fill = [&](CalibrationSet& set, std::size_t first, std::size_t count) {
        set.source = source;
        set.seed = seed;
        set.n_sequences = count;
        set.seq_len = seq_len;
        for (std::size_t i = first; i < first + count; ++i) {
            const std::size_t off = shift + order[i] * seq_len;
            set.offsets.push_back(off);
            set.sequences.emplace_back(stream.begin() + static_cast<std::ptrdiff_t>(off),
                                       stream.begin() + static_cast<std::ptrdiff_t>(off + seq_len));
        }
    };
    fill(split.calib, 0, n_calib);
    fill(split.eval, n_calib, n_eval);
    return split;
}

CalibrationSet load_calibration(const std::filesystem::path& path, std::size_t n_sequences,
                                std::size_t seq_len, std::uint64_t seed, std::size_t vocab,
                                SourceFormat format) {
    return load_split(path, n_sequences, 0, seq_len, seed, vocab, format).calib;
}

DataSplit load_split(const std::filesystem::path& path, std::size_t n_calib, std::size_t n_eval,
                     std::size_t seq_len, std::uint64_t seed, std::size_t vocab, SourceFormat format) {
    const auto stream = read_source(path, format, vocab);
    return sample_windows(stream, n_calib, n_eval, seq_len, seed, path.string());
}

bool windows_overlap(const CalibrationSet& a, const CalibrationSet& b) {
    if (a.source != b.source) return false;
    for (std::size_t i = 0; i < a.offsets.size(); ++i) {
        const std::size_t a0 = a.offsets[i];
        const std::size_t a1 = a0 + a.sequences[i].size();
        for (std::size_t j = 0; j < b.offsets.size(); ++j) {
            const std::size_t b0 = b.offsets[j];
            const std::size_t b1 = b0 + b.sequences[j].size();
            if (a0 < b1 && b0 < a1) return true;
        }
    }
    return false;
}

MarkovSource::MarkovSource(std::size_t vocab, double skew, std::uint64_t seed)
    : vocab_(vocab), transitions_(vocab * vocab), stationary_(vocab, 1.0 / static_cast<double>(vocab)) {
    if (vocab < 2) fail(ErrorCode::InvalidConfig, "Markov source needs vocab >= 2");
    if (!std::isfinite(skew) || skew < 0.0) fail(ErrorCode::InvalidConfig, "skew must be finite and >= 0");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, 1.0);
    for (std::size_t i = 0; i < vocab; ++i) {
        double total = 0.0;
        for (std::size_t j = 0; j < vocab; ++j) {
            const double w = skew == 0.0 ? 1.0 : std::exp(skew * z(rng));
            transitions_[i * vocab + j] = w;
            total += w;
        }
        for (std::size_t j = 0; j < vocab; ++j) transitions_[i * vocab + j] /= total;
    }
    std::vector<double> next(vocab);
    for (int iter = 0; iter < 5000; ++iter) {
        std::fill(next.begin(), next.end(), 0.0);
        for (std::size_t i = 0; i < vocab; ++i) {
            const double p = stationary_[i];
            for (std::size_t j = 0; j < vocab; ++j) next[j] += p * transitions_[i * vocab + j];
        }
        double delta = 0.0;
        for (std::size_t j = 0; j < vocab; ++j) delta += std::abs(next[j] - stationary_[j]);
        stationary_.swap(next);
        if (delta < 1e-14) break;
    }
}

std::vector<TokenId> MarkovSource::generate(std::size_t length, std::uint64_t seed) const {
    std::vector<TokenId> out;
    out.reserve(length);
    if (length == 0) return out;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto draw = [&](const double* probs) {
        const double target = u(rng);
        double acc = 0.0;
        for (std::size_t j = 0; j + 1 < vocab_; ++j) {
            acc += probs[j];
            if (target < acc) return static_cast<TokenId>(j);
        }
        return static_cast<TokenId>(vocab_ - 1);
    };
    TokenId state = draw(stationary_.data());
    out.push_back(state);
    while (out.size() < length) {
        state = draw(&transitions_[static_cast<std::size_t>(state) * vocab_]);
        out.push_back(state);
    }
    return out;
}

CalibrationSet synth_calibration(const ModelConfig& cfg, std::size_t n_sequences, std::size_t seq_len,
                                 std::uint64_t seed, double skew) {
    return synth_split(cfg, n_sequences, 0, seq_len, seed, skew, seed).calib;
}

DataSplit synth_split(const ModelConfig& cfg, std::size_t n_calib, std::size_t n_eval,
                      std::size_t seq_len, std::uint64_t seed, double skew, std::uint64_t chain_seed) {
    if (seq_len > cfg.max_seq) fail(ErrorCode::SequenceTooLong, "seq_len exceeds max_seq");
    const MarkovSource chain(cfg.vocab, skew, chain_seed);
    const auto stream = chain.generate((n_calib + n_eval + 1) * seq_len, seed ^ kGolden);
    DataSplit split = sample_windows(stream, n_calib, n_eval, seq_len, seed, "synthetic");
    return split;
}

DataSplit model_split(const TransformerModel& model, std::size_t n_calib, std::size_t n_eval,
                      std::size_t seq_len, std::uint64_t seed, double temperature) {
    if (n_calib + n_eval == 0) fail(ErrorCode::InvalidConfig, "no sequences requested");
    SampledBatch batch = sample_sequences(model, n_calib + n_eval, seq_len, seed, temperature);
    DataSplit split;
    auto fill = [&](CalibrationSet& set, std::size_t first, std::size_t count) {
        set.source = "model-sampled";
        set.seed = seed;
        set.n_sequences = count;
        set.seq_len = seq_len;
        for (std::size_t i = first; i < first + count; ++i) {
            set.offsets.push_back(i * seq_len);
            set.sequences.push_back(std::move(batch.sequences[i]));
        }
    };
    fill(split.calib, 0, n_calib);
    fill(split.eval, n_calib, n_eval);
    return split;
}

double EvalResult::mean_cka() const {
    if (per_layer_cka.empty()) return 1.0;
    return std::accumulate(per_layer_cka.begin(), per_layer_cka.end(), 0.0) /
           static_cast<double>(per_layer_cka.size());
}

std::string EvalResult::to_json() const {
    nlohmann::json j = {
        {"ppl", ppl},
        {"nll_total", nll_total},
        {"token_count", token_count},
        {"per_layer_cka", per_layer_cka},
        {"config", nlohmann::json::parse(config)},
        {"toolkit_version", kToolkitVersion},
    };
    return j.dump(2);
}

double sequence_nll(const Matrix& logits, std::span<const TokenSequence> seqs) {
    double nll = 0.0;
    std::size_t row = 0;
    const std::size_t vocab = logits.cols();
    for (const auto& s : seqs) {
        for (std::size_t t = 0; t < s.size(); ++t, ++row) {
            if (t + 1 == s.size()) continue;
            const auto z = logits.row(row);
            const double mx = *std::max_element(z.begin(), z.end());
            double sum = 0.0;
            for (std::size_t v = 0; v < vocab; ++v) sum += std::exp(z[v] - mx);
            nll += mx + std::log(sum) - z[s[t + 1]];
        }
    }
    if (row != logits.rows()) fail(ErrorCode::DimensionMismatch, "logit rows != token count");
    return nll;
}

EvalResult perplexity(const TransformerModel& model, std::span<const TokenSequence> data,
                      const TransformerModel* fp_ref, const EvalOptions& opts) {
    std::vector<LayerView> views;
    for (const auto& l : model.layers) views.push_back(view_of(l));
    return evaluate(head_of(model), views, data, fp_ref, opts);
}

EvalResult perplexity(const HybridModel& hybrid, std::span<const TokenSequence> data,
                      const TransformerModel* fp_ref, const EvalOptions& opts) {
    const auto views = hybrid.views();
    return evaluate(hybrid.head(), views, data, fp_ref, opts);
}

const ComparisonRow* ComparisonTable::find(const std::string& label) const {
    for (const auto& r : rows) {
        if (r.label == label) return &r;
    }
    return nullptr;
}

std::string ComparisonTable::to_json() const {
    nlohmann::json rs = nlohmann::json::array();
    for (const auto& r : rows) {
        rs.push_back({
            {"label", r.label},
            {"pool", r.pool},
            {"ppl", r.ppl},
            {"mean_eval_cka", r.mean_eval_cka},
            {"mean_selection_cka", r.mean_selection_cka ? nlohmann::json(*r.mean_selection_cka) : nlohmann::json()},
            {"methods", r.methods},
        });
    }
    nlohmann::json j = {
        {"rows", rs},
        {"run_config", nlohmann::json::parse(run_config)},
        {"toolkit_version", kToolkitVersion},
    };
    return j.dump(2);
}

std::string ComparisonTable::to_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "label,ppl,mean_eval_cka,mean_selection_cka,methods\n";
    for (const auto& r : rows) {
        os << r.label << ',' << r.ppl << ',' << r.mean_eval_cka << ',';
        if (r.mean_selection_cka) os << *r.mean_selection_cka;
        os << ',';
        for (std::size_t i = 0; i < r.methods.size(); ++i) os << (i ? ";" : "") << r.methods[i];
        os << '\n';
    }
    return os.str();
}

ComparisonTable compare_methods(const TransformerModel& model, const CandidatePool& pool,
                                std::span<const TokenSequence> calib,
                                std::span<const TokenSequence> eval, const SelectionConfig& cfg) {
    if (pool.empty()) fail(ErrorCode::EmptyPool, "compare_methods needs a non-empty pool");
    EvalOptions eo;
    eo.cka_point = cfg.cka_point;
    eo.cka_max_rows = cfg.cka_max_rows;
    eo.seed = cfg.seed;

    ComparisonTable table;
    {
        const EvalResult fp = perplexity(model, eval, &model, eo);
        ComparisonRow row;
        row.label = "fp";
        row.ppl = fp.ppl;
        row.mean_eval_cka = fp.mean_cka();
        row.methods.assign(model.config.n_layers, "fp");
        table.rows.push_back(std::move(row));
    }
    auto add_hybrid = [&](std::string label, const CandidatePool& p) {
        const HybridModel h = select_greedy(model, p, calib, cfg);
        const EvalResult r = perplexity(h, eval, &model, eo);
        ComparisonRow row;
        row.label = std::move(label);
        row.pool = h.report.pool_labels();
        row.ppl = r.ppl;
        row.mean_eval_cka = r.mean_cka();
        row.mean_selection_cka = h.report.mean_selected_score();
        for (const auto& l : h.report.layers) row.methods.push_back(l.chosen_method);
        table.rows.push_back(std::move(row));
    };
    for (const auto& m : pool) add_hybrid("uniform:" + m.label(), CandidatePool{m});
    if (pool.size() > 1) add_hybrid("hybrid", pool);
    if (pool.size() >= 3) {
        for (std::size_t i = 0; i < pool.size(); ++i) {
            CandidatePool loo;
            for (std::size_t j = 0; j < pool.size(); ++j) {
                if (j != i) loo.push_back(pool[j]);
            }
            add_hybrid("hybrid-without:" + pool[i].label(), loo);
        }
    }
    return table;
}

}  // namespace hq

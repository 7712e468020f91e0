#include "hqtool/commands.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "hq/evalsuite.hpp"
#include "hq/model.hpp"
#include "hq/restoration.hpp"
#include "hq/selector.hpp"

namespace hqtool {

namespace fs = std::filesystem;
using hq::ErrorCode;
using hq::fail;

int exit_code_for(const hq::Error& e) noexcept {
    switch (hq::category_of(e.code())) {
        case hq::ErrorCategory::Config: return kExitConfig;
        case hq::ErrorCategory::Data: return kExitData;
        case hq::ErrorCategory::Numerical: return kExitNumerical;
    }
    return kExitOther;
}

namespace {

void check(bool ok, const std::string& msg) {
    if (!ok) fail(ErrorCode::InvalidConfig, msg);
}

nlohmann::json data_json(const DataSpec& d) {
    return {{"source", d.source}, {"n", d.n}, {"len", d.len}, {"format", d.format}};
}

void validate_data(const DataSpec& d, const char* what, bool allow_empty) {
    check(!d.source.empty(), std::string(what) + " source is empty");
    check(allow_empty || d.n >= 1, std::string(what) + " needs at least one sequence");
    check(d.len >= 2, std::string(what) + " length must be >= 2");
    check(d.format == "auto" || d.format == "tokens" || d.format == "text",
          std::string(what) + " format must be auto, tokens or text");
}

std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) fail(ErrorCode::IoError, "cannot open " + path.string());
    f << text;
    if (!f) fail(ErrorCode::IoError, "write failed: " + path.string());
}

fs::path out_dir(const RunConfig& cfg) {
    const fs::path dir = cfg.out.empty() ? fs::path(".") : fs::path(cfg.out);
    fs::create_directories(dir);
    return dir;
}

hq::QuantConfig quant_config(const RunConfig& cfg) {
    hq::QuantConfig q;
    q.bits = cfg.bits;
    q.group_size = cfg.group;
    q.symmetric = cfg.symmetric;
    if (cfg.act_bits > 0) q.act_bits = cfg.act_bits;
    q.validate();
    return q;
}

hq::SelectionConfig selection_config(const RunConfig& cfg) {
    hq::SelectionConfig s;
    s.cka_point = hq::parse_capture_point(cfg.cka_point);
    s.cka_max_rows = cfg.cka_max_rows;
    s.seed = cfg.seed;
    s.threads = cfg.threads;
    return s;
}

hq::SourceFormat source_format(const std::string& f) {
    if (f == "tokens") return hq::SourceFormat::Tokens;
    if (f == "text") return hq::SourceFormat::Text;
    return hq::SourceFormat::Auto;
}

void truncate(hq::CalibrationSet& set, std::size_t len) {
    for (auto& s : set.sequences) s.resize(std::min(s.size(), len));
    set.seq_len = len;
}

/// Calibration and eval sets drawn from one source. Windows are laid out
/// at the longer of the two lengths, so they stay disjoint when truncated.
hq::DataSplit load_data(const RunConfig& cfg, const hq::ModelConfig& dims, const DataSpec& calib,
                        std::size_t n_eval, const hq::TransformerModel* sampler) {
    const std::size_t stride = n_eval > 0 ? std::max(calib.len, cfg.eval.len) : calib.len;
    hq::DataSplit split;
    if (calib.source == "synthetic") {
        split = hq::synth_split(dims, calib.n, n_eval, stride, cfg.seed);
    } else if (calib.source == "model") {
        if (!sampler) fail(ErrorCode::InvalidConfig, "data source 'model' needs a full-precision model");
        split = hq::model_split(*sampler, calib.n, n_eval, stride, cfg.seed);
    } else {
        split = hq::load_split(calib.source, calib.n, n_eval, stride, cfg.seed, dims.vocab,
                               source_format(calib.format));
    }
    truncate(split.calib, calib.len);
    truncate(split.eval, cfg.eval.len);
    if (hq::windows_overlap(split.calib, split.eval)) {
        fail(ErrorCode::InvalidConfig, "calibration and evaluation windows overlap");
    }
    return split;
}

std::string cka_layers_csv(const hq::SelectionReport& r) {
    std::ostringstream os;
    os.precision(17);
    os << "layer,method,cka,degenerate\n";
    for (const auto& l : r.layers) {
        const auto& s = l.candidates.at(l.chosen).score;
        os << l.layer << ',' << l.chosen_method << ',' << s.value << ',' << (s.degenerate ? 1 : 0) << '\n';
    }
    return os.str();
}

void print_selection(std::ostream& out, const hq::SelectionReport& r) {
    for (const auto& l : r.layers) {
        out << "layer " << l.layer << ' ' << l.chosen_method << " cka " << l.candidates.at(l.chosen).score.value
            << '\n';
    }
    out << "candidate-evaluations " << r.candidate_evaluations << '\n';
    out << "report-hash " << hex64(r.content_hash()) << '\n';
}

void write_selection_outputs(const fs::path& report_path, const hq::SelectionReport& r) {
    const fs::path dir = report_path.has_parent_path() ? report_path.parent_path() : fs::path(".");
    write_text(report_path, r.to_json());
    write_text(dir / "selection.csv", r.to_csv());
    write_text(dir / "cka_layers.csv", cka_layers_csv(r));
}

int cmd_gen_model(const RunConfig& cfg, std::ostream& out) {
    hq::ModelConfig dims;
    dims.n_layers = cfg.layers;
    dims.d_model = cfg.dim;
    dims.n_heads = cfg.heads;
    dims.d_ff = cfg.ffdim;
    dims.vocab = cfg.vocab;
    dims.max_seq = cfg.max_seq;
    dims.validate();
    hq::InitOptions init;
    init.seed = cfg.seed;
    init.outlier_channels = cfg.outliers;
    init.outlier_scale = cfg.outlier_scale;
    init.gain_spread = cfg.gain_spread;
    const auto model = hq::random_model(dims, init);
    const fs::path path = cfg.out.empty() ? fs::path("model.hqtm") : fs::path(cfg.out);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    hq::save_model(model, path);
    out << "wrote " << path.string() << " fingerprint " << hex64(hq::fingerprint(model)) << '\n';
    return kExitOk;
}

int cmd_quantize(const RunConfig& cfg, std::ostream& out) {
    const auto model = hq::load_model(cfg.model_path);
    const auto pool = hq::parse_pool(cfg.pool, quant_config(cfg));
    const auto data = load_data(cfg, model.config, cfg.calib, 0, &model);
    auto hybrid = hq::select_blockwise(model, pool, data.calib.sequences, cfg.block_k, selection_config(cfg));
    hybrid.report.run_config = cfg.to_json();
    const fs::path hybrid_path = cfg.out.empty() ? fs::path("hybrid.hqtmq") : fs::path(cfg.out);
    if (hybrid_path.has_parent_path()) fs::create_directories(hybrid_path.parent_path());
    hq::save_hybrid(hybrid, hybrid_path);
    const fs::path report_path = cfg.report.empty()
                                     ? (hybrid_path.has_parent_path() ? hybrid_path.parent_path() : fs::path("."))
                                           / "report.json"
                                     : fs::path(cfg.report);
    write_selection_outputs(report_path, hybrid.report);
    print_selection(out, hybrid.report);
    out << "mean-bits " << hybrid.mean_bits() << '\n';
    return kExitOk;
}

int cmd_eval(const RunConfig& cfg, std::ostream& out) {
    check(cfg.model_path.empty() != cfg.hybrid_path.empty(), "eval takes exactly one of --model or --hybrid");
    std::optional<hq::TransformerModel> fp_ref;
    if (!cfg.fp_ref_path.empty()) fp_ref = hq::load_model(cfg.fp_ref_path);
    std::optional<hq::TransformerModel> model;
    std::optional<hq::HybridModel> hybrid;
    if (!cfg.model_path.empty()) {
        model = hq::load_model(cfg.model_path);
    } else {
        hybrid = hq::load_hybrid(cfg.hybrid_path);
    }
    const hq::ModelConfig& dims = model ? model->config : hybrid->config;
    const hq::TransformerModel* sampler = fp_ref ? &*fp_ref : (model ? &*model : nullptr);
    // The eval set is the eval half of the same split the other commands use.
    DataSpec calib = cfg.calib;
    const auto data = load_data(cfg, dims, calib, cfg.eval.n, sampler);
    hq::EvalOptions eo;
    eo.cka_point = hq::parse_capture_point(cfg.cka_point);
    eo.cka_max_rows = cfg.cka_max_rows;
    eo.seed = cfg.seed;
    const hq::TransformerModel* ref = fp_ref ? &*fp_ref : nullptr;
    hq::EvalResult r = model ? hq::perplexity(*model, data.eval.sequences, ref, eo)
                             : hq::perplexity(*hybrid, data.eval.sequences, ref, eo);
    r.config = cfg.to_json();
    out << std::setprecision(17) << "ppl " << r.ppl << " tokens " << r.token_count << '\n';
    for (std::size_t l = 0; l < r.per_layer_cka.size(); ++l) {
        out << "layer " << l << " cka " << r.per_layer_cka[l] << '\n';
    }
    if (!cfg.out.empty()) write_text(cfg.out, r.to_json());
    return kExitOk;
}

int cmd_compare(const RunConfig& cfg, std::ostream& out) {
    const auto model = hq::load_model(cfg.model_path);
    const auto pool = hq::parse_pool(cfg.pool, quant_config(cfg));
    const auto data = load_data(cfg, model.config, cfg.calib, cfg.eval.n, &model);
    auto table = hq::compare_methods(model, pool, data.calib.sequences, data.eval.sequences, selection_config(cfg));
    table.run_config = cfg.to_json();
    const fs::path dir = out_dir(cfg);
    write_text(dir / "compare.json", table.to_json());
    write_text(dir / "compare.csv", table.to_csv());
    out << std::setprecision(8);
    for (const auto& r : table.rows) out << r.label << " ppl " << r.ppl << " cka " << r.mean_eval_cka << '\n';
    return kExitOk;
}

int cmd_restore(const RunConfig& cfg, std::ostream& out) {
    const auto model = hq::load_model(cfg.model_path);
    const auto hybrid = hq::load_hybrid(cfg.hybrid_path, {std::nullopt, std::nullopt, model.config});
    const auto data = load_data(cfg, model.config, cfg.calib, cfg.eval.n, &model);
    const std::size_t layer = cfg.layer < 0 ? hq::find_worst_layer(model, hybrid, data.calib.sequences)
                                            : static_cast<std::size_t>(cfg.layer);
    hq::RestorationOptions ro;
    ro.seed = cfg.seed;
    ro.requantize = cfg.requantize_after_restore;
    ro.requantize_fallback = quant_config(cfg);
    auto outcome = hq::fit_and_absorb(model, hybrid, layer, data.calib.sequences, ro, data.eval.sequences);
    const fs::path dir = out_dir(cfg);
    nlohmann::json j = nlohmann::json::parse(outcome.result.to_json());
    j["run_config"] = nlohmann::json::parse(cfg.to_json());
    write_text(dir / "restoration.json", j.dump(2));
    write_text(dir / "restoration_cka.csv", outcome.result.cka_csv());
    hq::save_hybrid(outcome.restored, dir / "restored.hqtmq");
    const auto& r = outcome.result;
    out << std::setprecision(10) << "layer " << r.layer << '\n'
        << "cka-before " << r.cka_before.value << " cka-after " << r.cka_after.value << '\n'
        << "residual-before " << r.residual_before << " residual-after " << r.residual_after << '\n';
    if (r.heldout_cka_after) {
        out << "heldout-cka-before " << r.heldout_cka_before->value << " heldout-cka-after "
            << r.heldout_cka_after->value << '\n';
    }
    if (r.ppl_after) out << "ppl-before " << *r.ppl_before << " ppl-after " << *r.ppl_after << '\n';
    return kExitOk;
}

int cmd_oracle(const RunConfig& cfg, std::ostream& out) {
    const auto model = hq::load_model(cfg.model_path);
    const auto pool = hq::parse_pool(cfg.pool, quant_config(cfg));
    const auto data = load_data(cfg, model.config, cfg.calib, 0, &model);
    auto res = hq::select_exhaustive(model, pool, data.calib.sequences, selection_config(cfg));
    res.best.report.run_config = cfg.to_json();
    auto labels = [&](const std::vector<std::size_t>& a) {
        std::string s;
        for (std::size_t i = 0; i < a.size(); ++i) s += (i ? ";" : "") + pool[a[i]].label();
        return s;
    };
    nlohmann::json table = nlohmann::json::array();
    std::ostringstream csv;
    csv.precision(17);
    csv << "assignment,total_cka\n";
    for (const auto& row : res.table) {
        table.push_back({{"assignment", row.assignment}, {"methods", labels(row.assignment)}, {"total_cka", row.total_cka}});
        csv << labels(row.assignment) << ',' << row.total_cka << '\n';
    }
    nlohmann::json j = {
        {"assignments", res.table.size()},
        {"table", table},
        {"best_total", res.best_total},
        {"greedy_assignment", res.greedy_assignment},
        {"greedy_total", res.greedy_total},
        {"greedy_rank", res.greedy_rank},
        {"report", nlohmann::json::parse(res.best.report.to_json())},
        {"run_config", nlohmann::json::parse(cfg.to_json())},
        {"toolkit_version", hq::kToolkitVersion},
    };
    const fs::path dir = out_dir(cfg);
    write_text(dir / "oracle.json", j.dump(2));
    write_text(dir / "oracle.csv", csv.str());
    out << std::setprecision(10) << "assignments " << res.table.size() << '\n'
        << "best " << labels(res.table.empty() ? std::vector<std::size_t>{} : [&] {
               for (const auto& row : res.table) {
                   if (row.total_cka == res.best_total) return row.assignment;
               }
               return res.table.front().assignment;
           }())
        << " total " << res.best_total << '\n'
        << "greedy " << labels(res.greedy_assignment) << " total " << res.greedy_total << " rank "
        << res.greedy_rank << '\n';
    return kExitOk;
}

int cmd_mixed_bit(const RunConfig& cfg, std::ostream& out) {
    const auto model = hq::load_model(cfg.model_path);
    const auto data = load_data(cfg, model.config, cfg.calib, 0, &model);
    hq::MixedBitOptions mo;
    mo.avg_bits = cfg.avg_bits;
    mo.bit_options = cfg.bit_options;
    mo.probe_bits = cfg.probe_bits;
    mo.method.kind = hq::parse_method(cfg.method);
    mo.method.qcfg = quant_config(cfg);
    auto hybrid = hq::mixed_bit_baseline(model, data.calib.sequences, mo, selection_config(cfg));
    hybrid.report.run_config = cfg.to_json();
    const fs::path dir = out_dir(cfg);
    hq::save_hybrid(hybrid, dir / "mixed_bit.hqtmq");
    write_selection_outputs(dir / "mixed_bit.json", hybrid.report);
    for (const auto& l : hybrid.report.layers) out << "layer " << l.layer << " bits " << l.bits << '\n';
    out << "mean-bits " << hybrid.mean_bits() << '\n';
    return kExitOk;
}

void add_quant_flags(CLI::App* app, RunConfig& cfg) {
    app->add_option("--pool", cfg.pool, "Comma-separated candidate pool (rtn, gptq, awq, smoothquant)")
        ->capture_default_str();
    app->add_option("--bits", cfg.bits, "Weight bit width, 2..8")->capture_default_str();
    app->add_option("--group", cfg.group, "Group size along the input dimension (capped at the input width)")
        ->capture_default_str();
    app->add_flag("--symmetric", cfg.symmetric, "Symmetric weight grid instead of asymmetric");
    app->add_option("--act-bits", cfg.act_bits, "Activation fake-quantization bits, 4..8 (0 = off)")
        ->capture_default_str();
    app->add_option("--cka-point", cfg.cka_point, "CKA measure point: ffn-output, layer-output, ffn-intermediate")
        ->capture_default_str();
    app->add_option("--cka-max-rows", cfg.cka_max_rows, "Rows kept for CKA scoring (0 = all)")->capture_default_str();
    app->add_option("--threads", cfg.threads, "Candidates evaluated concurrently (env HQ_THREADS)")
        ->capture_default_str();
}

void add_data_flags(CLI::App* app, RunConfig& cfg, bool with_eval, const std::string& calib_flag = "--calib") {
    app->add_option(calib_flag, cfg.calib.source, "Data source: synthetic, model, or a token/text file")
        ->capture_default_str();
    app->add_option(calib_flag + "-n", cfg.calib.n, "Calibration sequences")->capture_default_str();
    app->add_option(calib_flag + "-len", cfg.calib.len, "Calibration sequence length")->capture_default_str();
    app->add_option(calib_flag + "-format", cfg.calib.format, "File format: auto, tokens, text")->capture_default_str();
    if (with_eval) {
        app->add_option("--eval-n", cfg.eval.n, "Evaluation sequences (disjoint from calibration)")
            ->capture_default_str();
        app->add_option("--eval-len", cfg.eval.len, "Evaluation sequence length")->capture_default_str();
    }
    app->add_option("--seed", cfg.seed, "Seed for data sampling and CKA subsampling")->capture_default_str();
}

}  // namespace

void RunConfig::validate() const {
    check(bits >= 2 && bits <= 8, "--bits must be in [2, 8]");
    check(group >= 1, "--group must be >= 1");
    check(act_bits == 0 || (act_bits >= 4 && act_bits <= 8), "--act-bits must be 0 or in [4, 8]");
    check(block_k >= 1, "--block-k must be >= 1");
    check(threads >= 1, "--threads must be >= 1");
    hq::parse_capture_point(cka_point);
    check(cka_max_rows == 0 || cka_max_rows >= 2, "--cka-max-rows must be 0 or >= 2");
    if (command == "quantize" || command == "compare" || command == "oracle") {
        hq::parse_pool(pool, hq::QuantConfig{});
    }
    if (command != "gen-model") {
        validate_data(calib, "calibration", command == "eval");
        if (command == "eval" || command == "compare" || command == "restore") validate_data(eval, "eval", false);
    }
    if (command == "gen-model") {
        check(layers >= 1 && dim >= 1 && heads >= 1 && ffdim >= 1 && vocab >= 2 && max_seq >= 1,
              "model dimensions must be positive");
        check(dim % heads == 0 && (dim / heads) % 2 == 0, "--dim / --heads must be an even head size");
        check(outlier_scale > 0.0 && gain_spread >= 0.0, "outlier scale must be > 0, gain spread >= 0");
    }
    if (command == "quantize" || command == "compare" || command == "oracle" || command == "mixed-bit" ||
        command == "restore") {
        check(!model_path.empty(), "--model is required");
    }
    if (command == "restore") check(!hybrid_path.empty(), "--hybrid is required");
    if (command == "mixed-bit") {
        check(!bit_options.empty(), "--bit-options must not be empty");
        for (int b : bit_options) check(b >= 2 && b <= 8, "--bit-options entries must be in [2, 8]");
        check(probe_bits >= 2 && probe_bits <= 8, "--probe-bits must be in [2, 8]");
        hq::parse_method(method);
    }
}

std::string RunConfig::to_json() const {
    nlohmann::json j = {
        {"command", command},
        {"model", model_path},
        {"hybrid", hybrid_path},
        {"fp_ref", fp_ref_path},
        {"pool", pool},
        {"bits", bits},
        {"group", group},
        {"symmetric", symmetric},
        {"act_bits", act_bits},
        {"cka_point", cka_point},
        {"cka_max_rows", cka_max_rows},
        {"calib", data_json(calib)},
        {"eval", data_json(eval)},
        {"block_k", block_k},
        {"out", out},
        {"report", report},
        {"seed", seed},
        {"threads", threads},
    };
    if (command == "gen-model") {
        j["gen"] = {{"layers", layers},   {"dim", dim},         {"heads", heads},
                    {"ffdim", ffdim},     {"vocab", vocab},     {"max_seq", max_seq},
                    {"outliers", outliers}, {"outlier_scale", outlier_scale}, {"gain_spread", gain_spread}};
    }
    if (command == "restore") {
        j["restore"] = {{"layer", layer}, {"requantize_after_restore", requantize_after_restore}};
    }
    if (command == "mixed-bit") {
        j["mixed_bit"] = {{"avg_bits", avg_bits}, {"bit_options", bit_options}, {"method", method},
                          {"probe_bits", probe_bits}};
    }
    j["toolkit_version"] = hq::kToolkitVersion;
    return j.dump();
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    RunConfig cfg;
    if (const char* env = std::getenv("HQ_THREADS")) {
        try {
            cfg.threads = static_cast<unsigned>(std::stoul(env));
        } catch (const std::exception&) {
            err << "error: HQ_THREADS must be a positive integer\n";
            return kExitConfig;
        }
    }

    CLI::App app{"CKA-guided layer-wise mixed-method quantization for toy decoder models", "hqquant"};
    app.require_subcommand(1);
    app.set_version_flag("--version", hq::kToolkitVersion);

    auto* gen = app.add_subcommand("gen-model", "Write a seeded random-init HQTM model");
    gen->add_option("--layers", cfg.layers, "Decoder layers")->capture_default_str();
    gen->add_option("--dim", cfg.dim, "Model width")->capture_default_str();
    gen->add_option("--heads", cfg.heads, "Attention heads")->capture_default_str();
    gen->add_option("--ffdim", cfg.ffdim, "SwiGLU hidden width")->capture_default_str();
    gen->add_option("--vocab", cfg.vocab, "Vocabulary size")->capture_default_str();
    gen->add_option("--max-seq", cfg.max_seq, "Maximum sequence length")->capture_default_str();
    gen->add_option("--seed", cfg.seed, "Init seed")->capture_default_str();
    gen->add_option("--outliers", cfg.outliers, "Residual channels with amplified embeddings")->capture_default_str();
    gen->add_option("--outlier-scale", cfg.outlier_scale, "Amplification of outlier channels")->capture_default_str();
    gen->add_option("--gain-spread", cfg.gain_spread, "Log-normal sigma of RMSNorm gains")->capture_default_str();
    gen->add_option("--out", cfg.out, "Output model path")->capture_default_str();

    auto* quant = app.add_subcommand("quantize", "Greedy (or block-wise) CKA-guided method selection");
    quant->add_option("--model", cfg.model_path, "Full-precision HQTM model")->required();
    add_quant_flags(quant, cfg);
    add_data_flags(quant, cfg, false);
    quant->add_option("--block-k", cfg.block_k, "Consecutive layers sharing one method")->capture_default_str();
    quant->add_option("--out", cfg.out, "Output HQTM-Q hybrid path")->capture_default_str();
    quant->add_option("--report", cfg.report, "Report JSON path (CSV files are written beside it)");

    auto* eval = app.add_subcommand("eval", "Perplexity of a model or hybrid on held-out data");
    eval->add_option("--model", cfg.model_path, "HQTM model to evaluate");
    eval->add_option("--hybrid", cfg.hybrid_path, "HQTM-Q hybrid to evaluate");
    eval->add_option("--fp-ref", cfg.fp_ref_path, "Full-precision reference for per-layer CKA");
    eval->add_option("--cka-point", cfg.cka_point, "CKA measure point")->capture_default_str();
    eval->add_option("--cka-max-rows", cfg.cka_max_rows, "Rows kept for CKA (0 = all)")->capture_default_str();
    add_data_flags(eval, cfg, true, "--data");
    eval->add_option("--out", cfg.out, "EvalResult JSON path");

    auto* cmp = app.add_subcommand("compare", "FP, uniform, hybrid and leave-one-out comparison table");
    cmp->add_option("--model", cfg.model_path, "Full-precision HQTM model")->required();
    add_quant_flags(cmp, cfg);
    add_data_flags(cmp, cfg, true);
    cmp->add_option("--out", cfg.out, "Output directory")->capture_default_str();

    auto* rest = app.add_subcommand("restore", "Fit and absorb a restoration matrix at one layer");
    rest->add_option("--model", cfg.model_path, "Full-precision HQTM model")->required();
    rest->add_option("--hybrid", cfg.hybrid_path, "Quantized HQTM-Q model")->required();
    rest->add_option("--layer", cfg.layer, "Layer to restore (-1 = lowest CKA)")->capture_default_str();
    rest->add_flag("--requantize-after-restore", cfg.requantize_after_restore,
                   "Re-run RTN on the folded down-projection");
    rest->add_option("--bits", cfg.bits, "Fallback bits for requantizing a dense projection")->capture_default_str();
    rest->add_option("--group", cfg.group, "Fallback group size for requantizing")->capture_default_str();
    add_data_flags(rest, cfg, true);
    rest->add_option("--out", cfg.out, "Output directory")->capture_default_str();

    auto* orc = app.add_subcommand("oracle", "Exhaustive assignment search for tiny models");
    orc->add_option("--model", cfg.model_path, "Full-precision HQTM model")->required();
    add_quant_flags(orc, cfg);
    add_data_flags(orc, cfg, false);
    orc->add_option("--out", cfg.out, "Output directory")->capture_default_str();

    auto* mb = app.add_subcommand("mixed-bit", "Bit-heterogeneous single-method baseline");
    mb->add_option("--model", cfg.model_path, "Full-precision HQTM model")->required();
    mb->add_option("--avg-bits", cfg.avg_bits, "Parameter-weighted average bit budget")->capture_default_str();
    mb->add_option("--bit-options", cfg.bit_options, "Allowed bit widths")->delimiter(',')->capture_default_str();
    mb->add_option("--method", cfg.method, "Method applied to every layer")->capture_default_str();
    mb->add_option("--probe-bits", cfg.probe_bits, "RTN bit width of the sensitivity probe")->capture_default_str();
    add_quant_flags(mb, cfg);
    add_data_flags(mb, cfg, false);
    mb->add_option("--out", cfg.out, "Output directory")->capture_default_str();

    std::vector<std::string> rev(args.begin() + (args.empty() ? 0 : 1), args.end());
    std::reverse(rev.begin(), rev.end());
    try {
        app.parse(rev);
    } catch (const CLI::Success& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kExitConfig;
    }

    try {
        cfg.command = app.get_subcommands().front()->get_name();
        cfg.validate();
        if (cfg.command == "gen-model") return cmd_gen_model(cfg, out);
        if (cfg.command == "quantize") return cmd_quantize(cfg, out);
        if (cfg.command == "eval") return cmd_eval(cfg, out);
        if (cfg.command == "compare") return cmd_compare(cfg, out);
        if (cfg.command == "restore") return cmd_restore(cfg, out);
        if (cfg.command == "oracle") return cmd_oracle(cfg, out);
        if (cfg.command == "mixed-bit") return cmd_mixed_bit(cfg, out);
    } catch (const hq::Error& e) {
        err << "error: " << e.what() << '\n';
        return exit_code_for(e);
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return kExitData;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitOther;
    }
    return kExitOther;
}

}  // namespace hqtool

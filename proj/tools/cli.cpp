// ptqkit: batch front end for dataset generation, quantization,
// evaluation and ablation grids.

#include "ptqkit/ablation.hpp"
#include "ptqkit/benchmark.hpp"
#include "ptqkit/error.hpp"
#include "ptqkit/pipeline.hpp"
#include "ptqkit/serialize.hpp"
#include "ptqkit/synthdata.hpp"
#include "ptqkit/toymodel.hpp"

#include "CLI11.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <map>

using namespace ptqkit;
using nlohmann::json;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kIo = 2, kFormat = 3, kMath = 4 };

int exit_code(ErrorCategory c)
{
    switch (c) {
    case ErrorCategory::io: return kIo;
    case ErrorCategory::format: return kFormat;
    case ErrorCategory::math: return kMath;
    }
    return kMath;
}

// QuantConfig flags shared by quantize and ablate.
struct ConfigFlags {
    QuantConfig cfg;
    std::string softmax_base = "logsqrt2";
    std::string prefix_mode = "quantized";
    std::string granularity = "reparam";
    std::string clip_method = "sigmoid";
    bool no_clip = false;
    bool no_gptq = false;
    bool no_reparam_softmax = false;

    void attach(CLI::App* app)
    {
        app->add_option("--act-bits", cfg.act_bits, "activation bit-width")->check(CLI::Range(kMinBits, kMaxBits));
        app->add_option("--weight-bits", cfg.weight_bits, "weight bit-width")->check(CLI::Range(kMinBits, kMaxBits));
        app->add_option("--percentile", cfg.percentile, "percentile for generic activations, in (0.5, 1]");
        app->add_option("--clip-iters", cfg.clip_iters, "Adam iterations for clipping")->check(CLI::NonNegativeNumber);
        app->add_option("--clip-lr", cfg.clip_lr, "Adam learning rate for clipping")->check(CLI::PositiveNumber);
        app->add_option("--clip-init", cfg.clip_init, "initial clipping logit");
        app->add_option("--clip-method", clip_method, "bound parameterization")
            ->check(CLI::IsMember({"sigmoid", "direct"}));
        app->add_option("--softmax-base", softmax_base, "softmax quantizer base")
            ->check(CLI::IsMember({"log2", "logsqrt2"}));
        app->add_option("--calib-size", cfg.calib_size, "calibration samples used")->check(CLI::PositiveNumber);
        app->add_option("--seed", cfg.seed, "seed recorded with the run");
        app->add_option("--prefix-mode", prefix_mode, "source of layer calibration inputs")
            ->check(CLI::IsMember({"quantized", "fp"}));
        app->add_option("--quantizer-granularity", granularity, "LayerNorm output quantizer")
            ->check(CLI::IsMember({"reparam", "channel", "layer"}));
        app->add_flag("--no-clip", no_clip, "disable dual clipping");
        app->add_flag("--no-gptq", no_gptq, "round-to-nearest weights");
        app->add_flag("--no-reparam-softmax", no_reparam_softmax, "plain log2 softmax quantizer");
    }

    QuantConfig resolve() const
    {
        QuantConfig c = cfg;
        c.softmax = softmax_base == "log2" || no_reparam_softmax ? SoftmaxQuantizer::log2 : SoftmaxQuantizer::log_sqrt2;
        c.prefix = prefix_mode == "fp" ? PrefixMode::fp : PrefixMode::quantized;
        c.ln_mode = granularity == "layer" ? LnMode::layer : granularity == "channel" ? LnMode::channel : LnMode::reparam;
        c.clip_method = clip_method == "direct" ? ClipMethod::direct : ClipMethod::sigmoid;
        c.clip = !no_clip;
        c.gptq = !no_gptq;
        c.validate();
        return c;
    }
};

json report_header(const char* kind)
{
    return json{{"format_version", kFormatVersion}, {"kind", kind}};
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw IoError("cannot open " + path + " for writing");
    auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i)
            out << (i ? "," : "") << cells[i];
        out << '\n';
    };
    line(header);
    for (const auto& r : rows)
        line(r);
    if (!out)
        throw IoError("failed writing " + path);
}

std::string cell(const json& v)
{
    if (v.is_string())
        return v.get<std::string>();
    if (v.is_null())
        return "";
    return v.dump();
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Post-training quantization with scale reparameterization"};
    app.require_subcommand(1);

    // gen
    SynthSpec synth;
    std::string gen_kind = "interchannel", gen_out;
    auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
    gen->add_option("--kind", gen_kind, "generator")->check(CLI::IsMember({"interchannel", "powerlaw"}));
    gen->add_option("--channels", synth.channels, "channels D")->check(CLI::PositiveNumber);
    gen->add_option("--tokens", synth.tokens, "tokens N")->check(CLI::PositiveNumber);
    gen->add_option("--samples", synth.samples, "samples S")->check(CLI::PositiveNumber);
    gen->add_option("--range-ratio", synth.range_ratio, "inter-channel stddev ratio");
    gen->add_option("--base-std", synth.base_std, "smallest channel stddev");
    gen->add_option("--left-fraction", synth.left_fraction, "fraction of left-biased channels");
    gen->add_option("--right-fraction", synth.right_fraction, "fraction of right-biased channels");
    gen->add_option("--outlier-prob", synth.outlier_prob, "outlier probability per value");
    gen->add_option("--mean-offset", synth.mean_offset, "channel mean offset in stddevs");
    gen->add_option("--powerlaw-exponent", synth.powerlaw_exponent, "tail exponent of softmax-like data");
    gen->add_option("--seed", synth.seed, "seed of the channel statistics");
    gen->add_option("--sample-seed", synth.sample_seed, "seed of the sample draws");
    gen->add_option("-o,--out", gen_out, "dataset manifest path")->required();

    // init-model
    ModelSpec mspec;
    std::string init_out;
    auto* init = app.add_subcommand("init-model", "create a random toy model");
    init->add_option("--blocks", mspec.blocks, "transformer blocks")->check(CLI::PositiveNumber);
    init->add_option("--dim", mspec.embed_dim, "embedding width D")->check(CLI::PositiveNumber);
    init->add_option("--tokens", mspec.tokens, "tokens N")->check(CLI::PositiveNumber);
    init->add_option("--heads", mspec.heads, "attention heads")->check(CLI::PositiveNumber);
    init->add_option("--mlp-ratio", mspec.mlp_ratio, "MLP expansion")->check(CLI::PositiveNumber);
    init->add_option("--seed", mspec.seed, "initialization seed");
    init->add_option("-o,--out", init_out, "model manifest path")->required();

    // quantize
    ConfigFlags qflags;
    std::string q_model, q_data, q_out, q_report;
    auto* quant = app.add_subcommand("quantize", "run the sequential quantization pipeline");
    quant->add_option("--model", q_model, "float model manifest")->required();
    quant->add_option("--data", q_data, "calibration dataset manifest")->required();
    quant->add_option("-o,--out", q_out, "quantized model manifest path")->required();
    quant->add_option("--report", q_report, "per-layer report path (JSON)");
    qflags.attach(quant);

    // eval
    std::string e_model, e_quant, e_data, e_out;
    auto* eval = app.add_subcommand("eval", "compare a quantized model against its float model");
    eval->add_option("--model", e_model, "float model manifest")->required();
    eval->add_option("--quantized", e_quant, "quantized model manifest")->required();
    eval->add_option("--data", e_data, "held-out dataset manifest")->required();
    eval->add_option("-o,--out", e_out, "metrics path (JSON)")->required();

    // ablate
    ConfigFlags aflags;
    std::string a_model, a_data, a_heldout, a_out, a_study = "modules";
    std::uint64_t a_bench_seed = 0;
    unsigned a_threads = 0;
    auto* ablate = app.add_subcommand("ablate", "run an ablation grid");
    ablate->add_option("--study", a_study, "grid to run")
        ->check(CLI::IsMember({"modules", "softmax", "layernorm", "contraction"}));
    ablate->add_option("--model", a_model, "float model manifest (default: shipped benchmark)");
    ablate->add_option("--data", a_data, "calibration dataset manifest");
    ablate->add_option("--heldout", a_heldout, "held-out dataset manifest");
    ablate->add_option("--benchmark-seed", a_bench_seed, "seed of the shipped benchmark");
    ablate->add_option("--threads", a_threads, "worker threads (0: one per row)");
    ablate->add_option("-o,--out", a_out, "grid report path (JSON)")->required();
    aflags.attach(ablate);

    // report
    std::vector<std::string> r_in;
    std::string r_out;
    auto* report = app.add_subcommand("report", "flatten report files into CSV");
    report->add_option("inputs", r_in, "quantize, eval or ablate reports")->required();
    report->add_option("-o,--out", r_out, "CSV path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kUsage;
    }

    try {
        if (*gen) {
            const Tensor data = gen_kind == "powerlaw" ? gen_powerlaw(synth) : gen_interchannel(synth);
            const json meta{{"kind", gen_kind},
                            {"channels", synth.channels},
                            {"tokens", synth.tokens},
                            {"samples", synth.samples},
                            {"range_ratio", synth.range_ratio},
                            {"base_std", synth.base_std},
                            {"left_fraction", synth.left_fraction},
                            {"right_fraction", synth.right_fraction},
                            {"outlier_prob", synth.outlier_prob},
                            {"mean_offset", synth.mean_offset},
                            {"powerlaw_exponent", synth.powerlaw_exponent},
                            {"seed", synth.seed},
                            {"sample_seed", synth.sample_seed}};
            save_dataset(data, gen_out, meta);
        } else if (*init) {
            save_model(init_model(mspec), init_out);
        } else if (*quant) {
            const QuantConfig cfg = qflags.resolve();
            const ToyModel model = load_model(q_model);
            const Tensor calib = load_dataset(q_data);
            const PipelineResult res = run_pipeline(model, calib, cfg);
            save_quantized(res.model, q_out);
            if (!q_report.empty()) {
                json j = report_header("quantize_report");
                j["config"] = config_to_json(cfg);
                j["hardware_friendly"] = res.model.hardware_friendly();
                j["layers"] = json::array();
                for (const auto& r : res.reports)
                    j["layers"].push_back(report_to_json(r));
                write_json(j, q_report);
            }
        } else if (*eval) {
            const ToyModel model = load_model(e_model);
            const QuantizedModel qm = load_quantized(e_quant);
            const Tensor data = load_dataset(e_data);
            json j = report_header("eval_report");
            j["config"] = config_to_json(qm.config);
            j["metrics"] = metrics_to_json(evaluate(qm, model, data));
            write_json(j, e_out);
        } else if (*ablate) {
            const QuantConfig base = aflags.resolve();
            ToyModel model;
            Tensor calib, heldout;
            if (a_model.empty() != a_data.empty() || a_data.empty() != a_heldout.empty())
                throw ContractError("ablate: give --model, --data and --heldout together, or none of them");
            if (a_model.empty()) {
                Benchmark b = make_benchmark(a_bench_seed);
                model = std::move(b.model);
                calib = std::move(b.calib);
                heldout = std::move(b.heldout);
            } else {
                model = load_model(a_model);
                calib = load_dataset(a_data);
                heldout = load_dataset(a_heldout);
            }
            const auto rows = run_ablation(study_from_name(a_study), model, calib, heldout, base, a_threads);
            json j = report_header("ablation_report");
            j["study"] = a_study;
            j["base_config"] = config_to_json(base);
            if (a_model.empty())
                j["benchmark_seed"] = a_bench_seed;
            j["rows"] = json::array();
            for (const auto& r : rows) {
                j["rows"].push_back(json{{"name", r.name},
                                         {"config", config_to_json(r.config)},
                                         {"hardware_friendly", r.hardware_friendly},
                                         {"metrics", metrics_to_json(r.metrics)}});
            }
            write_json(j, a_out);
        } else if (*report) {
            const std::vector<std::string> header{"source", "kind", "name", "metric", "value"};
            std::vector<std::vector<std::string>> rows;
            for (const auto& path : r_in) {
                const json j = read_json(path);
                const std::string kind = j.value("kind", std::string());
                if (kind == "quantize_report") {
                    for (const auto& l : j.at("layers")) {
                        for (const char* key : {"pre_loss", "post_loss"})
                            rows.push_back({path, kind, cell(l.at("id")), key, cell(l.at(key))});
                    }
                } else if (kind == "eval_report") {
                    const json& m = j.at("metrics");
                    rows.push_back({path, kind, "model", "output_mse", cell(m.at("output_mse"))});
                    rows.push_back({path, kind, "model", "cosine_similarity", cell(m.at("cosine_similarity"))});
                } else if (kind == "ablation_report") {
                    for (const auto& r : j.at("rows")) {
                        const json& m = r.at("metrics");
                        rows.push_back({path, kind, cell(r.at("name")), "output_mse", cell(m.at("output_mse"))});
                        rows.push_back(
                            {path, kind, cell(r.at("name")), "cosine_similarity", cell(m.at("cosine_similarity"))});
                    }
                } else {
                    throw FormatError(path + ": not a report file (kind '" + kind + "')");
                }
            }
            write_csv(r_out, header, rows);
        }
    } catch (const Error& e) {
        std::cerr << "ptqkit: " << e.what() << '\n';
        return exit_code(e.category());
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "ptqkit: malformed file: " << e.what() << '\n';
        return kFormat;
    } catch (const std::exception& e) {
        std::cerr << "ptqkit: " << e.what() << '\n';
        return kMath;
    }
    return kOk;
}

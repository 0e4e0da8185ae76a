#pragma once

#include "ptqkit/clipping.hpp"
#include "ptqkit/gptq.hpp"
#include "ptqkit/quantizers.hpp"
#include "ptqkit/toymodel.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ptqkit {

enum class SoftmaxQuantizer { log2, log_sqrt2 };

/// reparam: channel-wise calibration folded into a layer-wise quantizer.
/// channel: channel-wise quantizer kept at inference (not hardware friendly).
/// layer:   layer-wise calibration straight away.
enum class LnMode { reparam, channel, layer };

/// Where calibration inputs of layer i come from.
enum class PrefixMode { quantized, fp };

enum class ClipMethod { sigmoid, direct };

struct QuantConfig {
    int weight_bits = 4;
    int act_bits = 4;
    /// Percentile for generic activations.
    double percentile = 0.9999;
    bool clip = true;
    int clip_iters = 100;
    double clip_lr = 0.01;
    double clip_init = 2.0;
    ClipMethod clip_method = ClipMethod::sigmoid;
    bool gptq = true;
    SoftmaxQuantizer softmax = SoftmaxQuantizer::log_sqrt2;
    LnMode ln_mode = LnMode::reparam;
    PrefixMode prefix = PrefixMode::quantized;
    std::size_t calib_size = 128;
    std::uint64_t seed = 0;

    /// Throws ContractError.
    void validate() const;
};

enum class ActKind { uniform, log2, log2_parity };

/// Inference-side activation quantizer.
///   uniform:     affine quantizer, normally layer-wise.
///   log2:        base-2 log codes, dequant s * 2^-code.
///   log2_parity: half-octave log codes, dequant s~(parity) * 2^floor(-code/2).
struct ActQuantizer {
    ActKind kind = ActKind::uniform;
    UniformQuantParams uniform;
    double log_scale = 1.0;
    int bits = 8;

    Tensor codes(const Tensor& x) const;
    Tensor dequant(const Tensor& codes) const;
    Tensor fake_quant(const Tensor& x) const { return dequant(codes(x)); }
    bool hardware_friendly() const noexcept;
};

struct QuantizedLinear {
    /// Dequantized weight and float bias.
    LinearLayerParams layer;
    Tensor codes;
    UniformQuantParams weight_quant;
};

/// Variation factors moved out of one LayerNorm output quantizer.
struct ReparamRecord {
    Site site = Site::ln1_out;
    std::vector<double> r1;
    std::vector<double> r2;
    double s_tilde = 0.0;
    double z_tilde = 0.0;
};

struct QuantizedBlock {
    LayerNormParams ln1, ln2;
    QuantizedLinear wq, wk, wv, wo, mlp_up, mlp_down;
    std::size_t heads = 1;
    std::array<std::optional<ActQuantizer>, std::size(kAllSites)> act;
    std::vector<ReparamRecord> reparam;

    /// Float block carrying the dequantized weights.
    TransformerBlock as_block() const;
    const QuantizedLinear& linear(const std::string& name) const;
};

struct QuantizedModel {
    std::vector<QuantizedBlock> blocks;
    std::size_t embed_dim = 0;
    std::size_t tokens = 0;
    QuantConfig config;

    /// Fake-quant execution of the quantized model.
    Tensor forward(const Tensor& x) const;
    /// Only layer-wise uniform and base-2 log quantizers on activations.
    bool hardware_friendly() const noexcept;
    void validate() const;
};

enum class ReportKind { layernorm_act, softmax_act, generic_act, weight };

std::string report_kind_name(ReportKind kind);

struct LayerReport {
    /// e.g. "block0.ln1_out" or "block1.wo".
    std::string id;
    ReportKind kind = ReportKind::generic_act;
    /// Squared reconstruction error before and after this branch's
    /// refinement: min-max vs final bounds for activations, RTN vs GPTQ proxy
    /// loss for weights, log2 vs the chosen quantizer for softmax.
    double pre_loss = 0.0;
    double post_loss = 0.0;
    bool clipped = false;
    double clip_initial_loss = 0.0;
    double clip_best_loss = 0.0;
    std::size_t clip_best_iteration = 0;
    std::size_t positive_min_channels = 0;
    std::vector<std::size_t> degenerate_channels;
    bool cholesky_fallback = false;
};

struct PipelineResult {
    QuantizedModel model;
    std::vector<LayerReport> reports;
};

/// Sequential block-by-block calibration of activations and weights.
/// `calib` is [S x N x D]; the first min(S, cfg.calib_size) samples are used.
PipelineResult run_pipeline(const ToyModel& model, const Tensor& calib, const QuantConfig& cfg);

struct Metrics {
    double output_mse = 0.0;
    double cosine_similarity = 0.0;
    /// Output SQNR of each block in dB.
    std::vector<double> block_sqnr_db;
};

Metrics evaluate(const QuantizedModel& modelq, const ToyModel& model_fp, const Tensor& inputs);

/// Cosine similarity of two flattened tensors; 1 when both are zero.
double cosine_similarity(const Tensor& a, const Tensor& b);

}  // namespace ptqkit

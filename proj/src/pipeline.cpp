#include "ptqkit/pipeline.hpp"

#include "ptqkit/error.hpp"
#include "ptqkit/reparam.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace ptqkit {

void QuantConfig::validate() const
{
    if (weight_bits < kMinBits || weight_bits > kMaxBits || act_bits < kMinBits || act_bits > kMaxBits)
        throw ContractError("config: bit-widths must lie in [" + std::to_string(kMinBits) + ", " +
                            std::to_string(kMaxBits) + "]");
    if (!(percentile > 0.5 && percentile <= 1.0))
        throw ContractError("config: percentile must lie in (0.5, 1]");
    if (clip_iters < 0)
        throw ContractError("config: clip iterations must be nonnegative");
    if (!(clip_lr > 0.0) || !std::isfinite(clip_lr))
        throw ContractError("config: clip learning rate must be positive");
    if (!std::isfinite(clip_init))
        throw ContractError("config: clip init must be finite");
    if (calib_size == 0)
        throw ContractError("config: calibration size must be positive");
}

Tensor ActQuantizer::codes(const Tensor& x) const
{
    switch (kind) {
    case ActKind::uniform:
        return uniform_quant(x, uniform);
    case ActKind::log2:
        return log_quant(x, LogQuantParams{log_scale, LogBase::two, bits});
    case ActKind::log2_parity:
        return log_quant(x, LogQuantParams{log_scale, LogBase::sqrt_two, bits});
    }
    return x;
}

Tensor ActQuantizer::dequant(const Tensor& c) const
{
    switch (kind) {
    case ActKind::uniform:
        return uniform_dequant(c, uniform);
    case ActKind::log2:
        return log_dequant(c, LogQuantParams{log_scale, LogBase::two, bits});
    case ActKind::log2_parity:
        return reparam_log_sqrt2(c, LogQuantParams{log_scale, LogBase::sqrt_two, bits}).dequant;
    }
    return c;
}

bool ActQuantizer::hardware_friendly() const noexcept
{
    return kind != ActKind::uniform || uniform.granularity == Granularity::layer;
}

TransformerBlock QuantizedBlock::as_block() const
{
    TransformerBlock b;
    b.ln1 = ln1;
    b.ln2 = ln2;
    b.wq = wq.layer;
    b.wk = wk.layer;
    b.wv = wv.layer;
    b.wo = wo.layer;
    b.mlp_up = mlp_up.layer;
    b.mlp_down = mlp_down.layer;
    b.heads = heads;
    return b;
}

const QuantizedLinear& QuantizedBlock::linear(const std::string& name) const
{
    if (name == "wq") return wq;
    if (name == "wk") return wk;
    if (name == "wv") return wv;
    if (name == "wo") return wo;
    if (name == "mlp_up") return mlp_up;
    if (name == "mlp_down") return mlp_down;
    throw FormatError("unknown linear layer '" + name + "'");
}

namespace {

std::size_t site_index(Site s)
{
    return static_cast<std::size_t>(s);
}

Hook quant_hook(const std::vector<QuantizedBlock>& blocks)
{
    return [&blocks](const HookContext& ctx, Tensor t) {
        const auto& q = blocks[ctx.block].act[site_index(ctx.site)];
        return q ? q->fake_quant(t) : t;
    };
}

}  // namespace

Tensor QuantizedModel::forward(const Tensor& x) const
{
    const Hook hook = quant_hook(blocks);
    Tensor y = x;
    for (std::size_t b = 0; b < blocks.size(); ++b)
        y = block_forward(y, blocks[b].as_block(), hook, b);
    return y;
}

bool QuantizedModel::hardware_friendly() const noexcept
{
    for (const auto& b : blocks) {
        for (const auto& q : b.act) {
            if (q && !q->hardware_friendly())
                return false;
        }
    }
    return true;
}

void QuantizedModel::validate() const
{
    if (blocks.empty())
        throw ContractError("quantized model has no blocks");
    for (const auto& b : blocks) {
        b.as_block().validate();
        for (const QuantizedLinear* l : {&b.wq, &b.wk, &b.wv, &b.wo, &b.mlp_up, &b.mlp_down}) {
            if (l->codes.shape() != l->layer.weight.shape())
                throw ContractError("quantized model: weight codes " + shape_to_string(l->codes.shape()) +
                                    " do not match weight " + shape_to_string(l->layer.weight.shape()));
            l->weight_quant.validate();
        }
        if (b.ln1.dim() != embed_dim)
            throw DimensionError("quantized model: block width differs from embed_dim");
    }
}

std::string report_kind_name(ReportKind kind)
{
    switch (kind) {
    case ReportKind::layernorm_act: return "layernorm-act";
    case ReportKind::softmax_act: return "softmax-act";
    case ReportKind::generic_act: return "generic-act";
    case ReportKind::weight: return "weight";
    }
    return "?";
}

double cosine_similarity(const Tensor& a, const Tensor& b)
{
    if (a.size() != b.size())
        throw DimensionError("cosine_similarity: sizes differ");
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if (aa == 0.0 && bb == 0.0)
        return 1.0;
    if (aa == 0.0 || bb == 0.0)
        return 0.0;
    return std::clamp(ab / std::sqrt(aa * bb), -1.0, 1.0);
}

namespace {

// Everything the pipeline knows about the block it is working on.
struct BlockState {
    TransformerBlock fp;    // floating weights, reparam updates applied
    QuantizedBlock q;       // working copy, dequant weights once quantized
    std::size_t index = 0;
};

class Pipeline {
public:
    Pipeline(const ToyModel& model, const Tensor& calib, const QuantConfig& cfg)
        : model_(model), cfg_(cfg)
    {
        const std::size_t s = std::min(calib.dim(0), cfg.calib_size);
        Tensor x({s, calib.dim(1), calib.dim(2)});
        std::copy_n(calib.values().begin(), x.size(), x.data().begin());
        x_in_ = std::move(x);
    }

    PipelineResult run()
    {
        PipelineResult out;
        out.model.embed_dim = model_.embed_dim;
        out.model.tokens = model_.tokens;
        out.model.config = cfg_;
        Tensor x_fp = x_in_;
        for (std::size_t b = 0; b < model_.blocks.size(); ++b) {
            BlockState st;
            st.index = b;
            st.fp = model_.blocks[b];
            st.q = float_block(st.fp);
            quantize_block(st);
            const Hook hook = [&st](const HookContext& ctx, Tensor t) {
                const auto& q = st.q.act[site_index(ctx.site)];
                return q ? q->fake_quant(t) : t;
            };
            if (cfg_.prefix == PrefixMode::quantized) {
                x_in_ = block_forward(x_in_, st.q.as_block(), hook, b);
            } else {
                x_fp = block_forward(x_fp, model_.blocks[b], {}, b);
                x_in_ = x_fp;
            }
            out.model.blocks.push_back(std::move(st.q));
        }
        out.reports = std::move(reports_);
        return out;
    }

private:
    static QuantizedLinear unquantized(const LinearLayerParams& p)
    {
        return QuantizedLinear{p, Tensor(), UniformQuantParams{}};
    }

    static QuantizedBlock float_block(const TransformerBlock& b)
    {
        QuantizedBlock q;
        q.ln1 = b.ln1;
        q.ln2 = b.ln2;
        q.wq = unquantized(b.wq);
        q.wk = unquantized(b.wk);
        q.wv = unquantized(b.wv);
        q.wo = unquantized(b.wo);
        q.mlp_up = unquantized(b.mlp_up);
        q.mlp_down = unquantized(b.mlp_down);
        q.heads = b.heads;
        return q;
    }

    std::string layer_id(const BlockState& st, const std::string& name) const
    {
        return "block" + std::to_string(st.index) + "." + name;
    }

    // Runs the calibration samples through the current state of the block
    // and returns the activations seen by the consuming matmul at `sites`,
    // flattened to [rows x cols].
    static void require_finite(const Tensor& t)
    {
        if (!t.all_finite())
            throw DomainError("non-finite calibration values");
    }

    std::map<Site, Tensor> capture(const BlockState& st, std::initializer_list<Site> sites) const
    {
        const bool quantized = cfg_.prefix == PrefixMode::quantized;
        std::map<Site, std::vector<double>> buf;
        std::map<Site, std::size_t> cols;
        const Hook hook = [&](const HookContext& ctx, Tensor t) {
            if (quantized) {
                const auto& q = st.q.act[site_index(ctx.site)];
                if (q)
                    t = q->fake_quant(t);
            }
            if (std::find(sites.begin(), sites.end(), ctx.site) != sites.end()) {
                auto& v = buf[ctx.site];
                v.insert(v.end(), t.values().begin(), t.values().end());
                cols[ctx.site] = t.cols();
            }
            return t;
        };
        block_forward(x_in_, quantized ? st.q.as_block() : st.fp, hook, st.index);
        std::map<Site, Tensor> out;
        for (auto& [site, v] : buf) {
            const std::size_t c = cols[site];
            const std::size_t rows = v.size() / c;
            out.emplace(site, Tensor({rows, c}, std::move(v)));
        }
        return out;
    }

    // Calibration input of a weight, with the activation quantizer applied in
    // the quantized-prefix regime.
    Tensor weight_input(const BlockState& st, Site site, const Tensor& captured) const
    {
        const auto& q = st.q.act[site_index(site)];
        if (cfg_.prefix == PrefixMode::quantized && q)
            return q->fake_quant(captured);
        return captured;
    }

    void quantize_weight(BlockState& st, const std::string& name, const LinearLayerParams& fp,
                         QuantizedLinear& target, const HessianAccumulator& h)
    {
        LayerReport rep;
        rep.id = layer_id(st, name);
        rep.kind = ReportKind::weight;
        try {
            require_finite(fp.weight);
            require_finite(h.hessian());
            const UniformQuantParams wq = weight_quant_params(fp.weight, cfg_.weight_bits);
            const WeightQuantResult rtn = rtn_quantize_layer(fp.weight, wq);
            rep.pre_loss = proxy_loss(fp.weight, rtn.dequant_weight, h.hessian());
            WeightQuantResult res = rtn;
            if (cfg_.gptq) {
                res = gptq_quantize_layer(fp.weight, h, wq);
                rep.cholesky_fallback = res.cholesky_fallback;
            }
            rep.post_loss = proxy_loss(fp.weight, res.dequant_weight, h.hessian());
            target.layer = LinearLayerParams{res.dequant_weight, fp.bias};
            target.codes = std::move(res.codes);
            target.weight_quant = wq;
        } catch (const Error& e) {
            throw Error(e.category(), rep.id + " [weight]: " + e.what());
        }
        reports_.push_back(std::move(rep));
    }

    ActQuantizer generic_act(const BlockState& st, Site site, const Tensor& x)
    {
        LayerReport rep;
        rep.id = layer_id(st, site_name(site));
        rep.kind = ReportKind::generic_act;
        ActQuantizer q;
        try {
            require_finite(x);
            std::vector<std::size_t> widened;
            const UniformQuantParams minmax =
                params_from_range(widen_degenerate(calibrate_minmax(x, Granularity::layer)), cfg_.act_bits);
            const UniformQuantParams pct = params_from_range(
                widen_degenerate(calibrate_percentile(x, Granularity::layer, cfg_.percentile), &widened),
                cfg_.act_bits);
            rep.pre_loss = squared_distance(uniform_fake_quant(x, minmax), x);
            rep.post_loss = squared_distance(uniform_fake_quant(x, pct), x);
            rep.degenerate_channels = widened;
            q.kind = ActKind::uniform;
            q.uniform = pct;
            q.bits = cfg_.act_bits;
        } catch (const Error& e) {
            throw Error(e.category(), rep.id + " [generic-act]: " + e.what());
        }
        reports_.push_back(std::move(rep));
        return q;
    }

    ActQuantizer softmax_act(const BlockState& st, const Tensor& x)
    {
        LayerReport rep;
        rep.id = layer_id(st, site_name(Site::softmax));
        rep.kind = ReportKind::softmax_act;
        ActQuantizer q;
        try {
            require_finite(x);
            const double s = *std::max_element(x.values().begin(), x.values().end());
            if (!(s > 0.0))
                throw CalibrationError("softmax activations are all zero");
            const LogQuantParams base2{s, LogBase::two, cfg_.act_bits};
            rep.pre_loss = squared_distance(log_fake_quant(x, base2), x);
            q.kind = cfg_.softmax == SoftmaxQuantizer::log_sqrt2 ? ActKind::log2_parity : ActKind::log2;
            q.log_scale = s;
            q.bits = cfg_.act_bits;
            rep.post_loss = squared_distance(q.fake_quant(x), x);
        } catch (const Error& e) {
            throw Error(e.category(), rep.id + " [softmax-act]: " + e.what());
        }
        reports_.push_back(std::move(rep));
        return q;
    }

    // LayerNorm output branch: calibrate, clip, then either fold the channel
    // quantizer into the affine factors and consumers or keep it as is.
    // Consumers are updated in both the floating and the working block.
    ActQuantizer layernorm_act(BlockState& st, Site site, const Tensor& x)
    {
        LayerReport rep;
        rep.id = layer_id(st, site_name(site));
        rep.kind = ReportKind::layernorm_act;
        ActQuantizer q;
        try {
            require_finite(x);
            const bool layer = cfg_.ln_mode == LnMode::layer;
            const Tensor samples = layer ? x.reshaped({x.size(), 1}) : x;
            const CalibRange minmax = widen_degenerate(calibrate_minmax(samples, Granularity::channel));
            rep.pre_loss = bounds_loss(samples, minmax, cfg_.act_bits);
            CalibRange bounds = minmax;
            if (cfg_.clip) {
                const ClipOptions opt{cfg_.clip_iters, cfg_.clip_lr, cfg_.clip_init,
                                      GradientEstimator::piecewise_exact};
                const ClipResult res = cfg_.clip_method == ClipMethod::sigmoid
                                           ? optimize_clip(samples, cfg_.act_bits, opt)
                                           : optimize_bounds_direct(samples, cfg_.act_bits, opt);
                bounds = res.bounds;
                rep.clipped = true;
                rep.clip_initial_loss = res.initial_loss;
                rep.clip_best_loss = res.best_loss;
                rep.clip_best_iteration = res.best_iteration;
                rep.positive_min_channels = res.positive_min_channels.size();
                rep.degenerate_channels = res.degenerate_channels;
            }
            rep.post_loss = bounds_loss(samples, bounds, cfg_.act_bits);
            bounds.granularity = layer ? Granularity::layer : Granularity::channel;
            const UniformQuantParams cw = params_from_range(bounds, cfg_.act_bits);
            q.kind = ActKind::uniform;
            q.bits = cfg_.act_bits;
            if (cfg_.ln_mode != LnMode::reparam) {
                q.uniform = cw;
            } else {
                const bool first = site == Site::ln1_out;
                LayerNormParams& ln = first ? st.fp.ln1 : st.fp.ln2;
                std::vector<LinearLayerParams*> fp_consumers, q_consumers;
                if (first) {
                    fp_consumers = {&st.fp.wq, &st.fp.wk, &st.fp.wv};
                    q_consumers = {&st.q.wq.layer, &st.q.wk.layer, &st.q.wv.layer};
                } else {
                    fp_consumers = {&st.fp.mlp_up};
                    q_consumers = {&st.q.mlp_up.layer};
                }
                std::vector<LinearLayerParams> consumers;
                for (auto* c : fp_consumers)
                    consumers.push_back(*c);
                const ReparamResult rp = reparam_layernorm(cw, ln, consumers);
                ln = rp.new_ln;
                (first ? st.q.ln1 : st.q.ln2) = rp.new_ln;
                for (std::size_t i = 0; i < consumers.size(); ++i) {
                    *fp_consumers[i] = rp.new_linear[i];
                    *q_consumers[i] = rp.new_linear[i];
                }
                st.q.reparam.push_back(ReparamRecord{site, rp.r1, rp.r2, rp.new_quant.scale[0], rp.z_tilde});
                q.uniform = rp.new_quant;
            }
        } catch (const Error& e) {
            throw Error(e.category(), rep.id + " [layernorm-act]: " + e.what());
        }
        reports_.push_back(std::move(rep));
        return q;
    }

    void set_act(BlockState& st, Site site, ActQuantizer q)
    {
        st.q.act[site_index(site)] = std::move(q);
    }

    void quantize_block(BlockState& st)
    {
        // QKV inputs.
        {
            auto cap = capture(st, {Site::ln1_out});
            set_act(st, Site::ln1_out, layernorm_act(st, Site::ln1_out, cap.at(Site::ln1_out)));
            const Tensor in = cfg_.ln_mode == LnMode::reparam ? capture(st, {Site::ln1_out}).at(Site::ln1_out)
                                                              : weight_input(st, Site::ln1_out, cap.at(Site::ln1_out));
            HessianAccumulator h(in.cols());
            h.accumulate(in);
            quantize_weight(st, "wq", st.fp.wq, st.q.wq, h);
            quantize_weight(st, "wk", st.fp.wk, st.q.wk, h);
            quantize_weight(st, "wv", st.fp.wv, st.q.wv, h);
        }
        {
            auto cap = capture(st, {Site::query, Site::key});
            set_act(st, Site::query, generic_act(st, Site::query, cap.at(Site::query)));
            set_act(st, Site::key, generic_act(st, Site::key, cap.at(Site::key)));
        }
        {
            auto cap = capture(st, {Site::softmax, Site::value});
            set_act(st, Site::softmax, softmax_act(st, cap.at(Site::softmax)));
            set_act(st, Site::value, generic_act(st, Site::value, cap.at(Site::value)));
        }
        {
            auto cap = capture(st, {Site::attn_out});
            set_act(st, Site::attn_out, generic_act(st, Site::attn_out, cap.at(Site::attn_out)));
            HessianAccumulator h(cap.at(Site::attn_out).cols());
            h.accumulate(weight_input(st, Site::attn_out, cap.at(Site::attn_out)));
            quantize_weight(st, "wo", st.fp.wo, st.q.wo, h);
        }
        {
            auto cap = capture(st, {Site::ln2_out});
            set_act(st, Site::ln2_out, layernorm_act(st, Site::ln2_out, cap.at(Site::ln2_out)));
            const Tensor in = cfg_.ln_mode == LnMode::reparam ? capture(st, {Site::ln2_out}).at(Site::ln2_out)
                                                              : weight_input(st, Site::ln2_out, cap.at(Site::ln2_out));
            HessianAccumulator h(in.cols());
            h.accumulate(in);
            quantize_weight(st, "mlp_up", st.fp.mlp_up, st.q.mlp_up, h);
        }
        {
            auto cap = capture(st, {Site::mlp_hidden});
            set_act(st, Site::mlp_hidden, generic_act(st, Site::mlp_hidden, cap.at(Site::mlp_hidden)));
            HessianAccumulator h(cap.at(Site::mlp_hidden).cols());
            h.accumulate(weight_input(st, Site::mlp_hidden, cap.at(Site::mlp_hidden)));
            quantize_weight(st, "mlp_down", st.fp.mlp_down, st.q.mlp_down, h);
        }
    }

    const ToyModel& model_;
    QuantConfig cfg_;
    Tensor x_in_;
    std::vector<LayerReport> reports_;
};

}  // namespace

PipelineResult run_pipeline(const ToyModel& model, const Tensor& calib, const QuantConfig& cfg)
{
    cfg.validate();
    model.validate();
    if (calib.rank() != 3 || calib.empty())
        throw DimensionError("run_pipeline: calibration set must be a nonempty [S x N x D] tensor, got " +
                             shape_to_string(calib.shape()));
    if (calib.dim(2) != model.embed_dim)
        throw DimensionError("run_pipeline: calibration width " + std::to_string(calib.dim(2)) +
                             " differs from model width " + std::to_string(model.embed_dim));
    if (!calib.all_finite())
        throw DomainError("run_pipeline: calibration set contains non-finite values");
    return Pipeline(model, calib, cfg).run();
}

Metrics evaluate(const QuantizedModel& modelq, const ToyModel& model_fp, const Tensor& inputs)
{
    model_fp.validate();
    modelq.validate();
    if (modelq.blocks.size() != model_fp.blocks.size() || modelq.embed_dim != model_fp.embed_dim)
        throw ContractError("evaluate: quantized model has " + std::to_string(modelq.blocks.size()) +
                            " blocks of width " + std::to_string(modelq.embed_dim) + ", float model has " +
                            std::to_string(model_fp.blocks.size()) + " of width " + std::to_string(model_fp.embed_dim));
    for (std::size_t b = 0; b < modelq.blocks.size(); ++b) {
        const auto& qb = modelq.blocks[b];
        const auto& fb = model_fp.blocks[b];
        if (qb.heads != fb.heads || qb.mlp_up.layer.out_features() != fb.mlp_up.out_features())
            throw ContractError("evaluate: block " + std::to_string(b) + " architecture differs");
    }
    if (inputs.cols() != model_fp.embed_dim || (inputs.rank() != 2 && inputs.rank() != 3))
        throw DimensionError("evaluate: inputs " + shape_to_string(inputs.shape()) + " do not fit width " +
                             std::to_string(model_fp.embed_dim));

    Metrics m;
    const Hook hook = quant_hook(modelq.blocks);
    Tensor yf = inputs, yq = inputs;
    for (std::size_t b = 0; b < modelq.blocks.size(); ++b) {
        yf = block_forward(yf, model_fp.blocks[b], {}, b);
        yq = block_forward(yq, modelq.blocks[b].as_block(), hook, b);
        const double signal = squared_distance(yf, Tensor(yf.shape()));
        const double noise = squared_distance(yf, yq);
        m.block_sqnr_db.push_back(noise == 0.0 ? INFINITY : 10.0 * std::log10(signal / noise));
    }
    m.output_mse = squared_distance(yf, yq) / static_cast<double>(yf.size());
    m.cosine_similarity = cosine_similarity(yf, yq);
    return m;
}

}  // namespace ptqkit

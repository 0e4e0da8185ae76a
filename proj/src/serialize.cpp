#include "ptqkit/serialize.hpp"

#include "ptqkit/error.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace ptqkit {

using nlohmann::json;

namespace {

constexpr std::size_t kInlineLimit = 64;

static_assert(std::endian::native == std::endian::little, "blob encoding assumes a little-endian host");

class BlobWriter {
public:
    json put_f32(std::span<const double> values)
    {
        const std::size_t offset = bytes_.size();
        for (double v : values) {
            const float f = static_cast<float>(v);
            append(&f, sizeof f);
        }
        return ref(offset, values.size(), "f32");
    }

    json put_codes(const Tensor& codes, int bits)
    {
        const std::size_t offset = bytes_.size();
        const bool wide = bits > 8;
        for (double c : codes.values()) {
            if (wide) {
                const auto v = static_cast<std::uint16_t>(c);
                append(&v, sizeof v);
            } else {
                const auto v = static_cast<std::uint8_t>(c);
                append(&v, sizeof v);
            }
        }
        return ref(offset, codes.size(), wide ? "u16" : "u8");
    }

    /// Inline JSON for short channel arrays, blob reference otherwise.
    json put_array(std::span<const double> values)
    {
        if (values.size() <= kInlineLimit)
            return json(std::vector<double>(values.begin(), values.end()));
        return put_f32(values);
    }

    void write(const std::string& path) const
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out)
            throw IoError("cannot open " + path + " for writing");
        out.write(bytes_.data(), static_cast<std::streamsize>(bytes_.size()));
        if (!out)
            throw IoError("failed writing " + path);
    }

private:
    void append(const void* p, std::size_t n)
    {
        const char* c = static_cast<const char*>(p);
        bytes_.insert(bytes_.end(), c, c + n);
    }

    static json ref(std::size_t offset, std::size_t length, const char* dtype)
    {
        return json{{"offset", offset}, {"length", length}, {"dtype", dtype}};
    }

    std::vector<char> bytes_;
};

class BlobReader {
public:
    explicit BlobReader(const std::string& path)
    {
        std::ifstream in(path, std::ios::binary);
        if (!in)
            throw IoError("cannot open blob " + path);
        std::ostringstream ss;
        ss << in.rdbuf();
        bytes_ = ss.str();
    }

    std::vector<double> get(const json& j) const
    {
        if (j.is_array()) {
            std::vector<double> out;
            for (const auto& v : j) {
                if (!v.is_number())
                    throw FormatError("inline array holds a non-number");
                out.push_back(v.get<double>());
            }
            return out;
        }
        if (!j.is_object() || !j.contains("offset") || !j.contains("length") || !j.contains("dtype"))
            throw FormatError("expected an inline array or a blob reference");
        const auto offset = j.at("offset").get<std::size_t>();
        const auto length = j.at("length").get<std::size_t>();
        const auto dtype = j.at("dtype").get<std::string>();
        const std::size_t width = dtype == "f32" ? 4 : dtype == "u16" ? 2 : dtype == "u8" ? 1 : 0;
        if (width == 0)
            throw FormatError("unknown blob dtype '" + dtype + "'");
        if (offset > bytes_.size() || length > (bytes_.size() - offset) / width)
            throw FormatError("blob reference out of range");
        std::vector<double> out(length);
        const char* base = bytes_.data() + offset;
        for (std::size_t i = 0; i < length; ++i) {
            if (width == 4) {
                float f;
                std::memcpy(&f, base + 4 * i, 4);
                out[i] = f;
            } else if (width == 2) {
                std::uint16_t v;
                std::memcpy(&v, base + 2 * i, 2);
                out[i] = v;
            } else {
                out[i] = static_cast<unsigned char>(base[i]);
            }
        }
        return out;
    }

    Tensor get_tensor(const json& j, Shape shape) const
    {
        std::vector<double> v = get(j);
        std::size_t n = 1;
        for (auto d : shape)
            n *= d;
        if (v.size() != n)
            throw FormatError("tensor of " + std::to_string(v.size()) + " values does not fit shape " +
                              shape_to_string(shape));
        return Tensor(std::move(shape), std::move(v));
    }

private:
    std::string bytes_;
};

std::string blob_path(const std::string& path)
{
    return path + ".bin";
}

json header(const char* kind, const std::string& path)
{
    return json{{"format_version", kFormatVersion},
                {"kind", kind},
                {"blob", std::filesystem::path(blob_path(path)).filename().string()}};
}

// Validates the header and returns the blob path next to the manifest.
std::string check_header(const json& j, const char* kind, const std::string& path)
{
    if (!j.is_object() || !j.contains("format_version"))
        throw FormatError(path + ": missing format_version");
    if (!j.at("format_version").is_number_integer() || j.at("format_version").get<int>() != kFormatVersion)
        throw FormatError(path + ": unsupported format_version " + j.at("format_version").dump() + " (expected " +
                          std::to_string(kFormatVersion) + ")");
    if (j.value("kind", std::string()) != kind)
        throw FormatError(path + ": expected kind '" + kind + "', found '" + j.value("kind", std::string()) + "'");
    const auto dir = std::filesystem::path(path).parent_path();
    return (dir / j.at("blob").get<std::string>()).string();
}

const char* kLinearNames[] = {"wq", "wk", "wv", "wo", "mlp_up", "mlp_down"};

json ln_to_json(const LayerNormParams& p, BlobWriter& blob)
{
    return json{{"gamma", blob.put_array(p.gamma)}, {"beta", blob.put_array(p.beta)}, {"eps", p.eps}};
}

LayerNormParams ln_from_json(const json& j, const BlobReader& blob)
{
    LayerNormParams p{blob.get(j.at("gamma")), blob.get(j.at("beta")), j.at("eps").get<double>()};
    p.validate();
    return p;
}

std::string granularity_name(Granularity g)
{
    return g == Granularity::layer ? "layer" : "channel";
}

Granularity granularity_from(const std::string& s)
{
    if (s == "layer")
        return Granularity::layer;
    if (s == "channel")
        return Granularity::channel;
    throw FormatError("unknown granularity '" + s + "'");
}

json uniform_to_json(const UniformQuantParams& p, BlobWriter& blob)
{
    return json{{"granularity", granularity_name(p.granularity)},
                {"bits", p.bits},
                {"scale", blob.put_array(p.scale)},
                {"zero_point", blob.put_array(p.zero_point)}};
}

UniformQuantParams uniform_from_json(const json& j, const BlobReader& blob)
{
    UniformQuantParams p{blob.get(j.at("scale")), blob.get(j.at("zero_point")), j.at("bits").get<int>(),
                         granularity_from(j.at("granularity").get<std::string>())};
    p.validate();
    return p;
}

LinearLayerParams* block_linear(TransformerBlock& b, const std::string& name)
{
    if (name == "wq") return &b.wq;
    if (name == "wk") return &b.wk;
    if (name == "wv") return &b.wv;
    if (name == "wo") return &b.wo;
    if (name == "mlp_up") return &b.mlp_up;
    return &b.mlp_down;
}

QuantizedLinear* qblock_linear(QuantizedBlock& b, const std::string& name)
{
    if (name == "wq") return &b.wq;
    if (name == "wk") return &b.wk;
    if (name == "wv") return &b.wv;
    if (name == "wo") return &b.wo;
    if (name == "mlp_up") return &b.mlp_up;
    return &b.mlp_down;
}

template <class F>
auto guarded(const std::string& path, F&& f)
{
    try {
        return f();
    } catch (const Error&) {
        throw;
    } catch (const json::exception& e) {
        throw FormatError(path + ": " + e.what());
    }
}

std::string act_kind_name(ActKind k)
{
    switch (k) {
    case ActKind::uniform: return "uniform";
    case ActKind::log2: return "log2";
    case ActKind::log2_parity: return "log2_parity";
    }
    return "?";
}

}  // namespace

json read_json(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open " + path);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw FormatError(path + ": " + e.what());
    }
}

void write_json(const json& j, const std::string& path)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw IoError("cannot open " + path + " for writing");
    out << j.dump(2) << '\n';
    if (!out)
        throw IoError("failed writing " + path);
}

void save_model(const ToyModel& model, const std::string& path)
{
    model.validate();
    BlobWriter blob;
    json j = header("toy_model", path);
    j["embed_dim"] = model.embed_dim;
    j["tokens"] = model.tokens;
    json blocks = json::array();
    for (const auto& b : model.blocks) {
        json jb{{"heads", b.heads}, {"ln1", ln_to_json(b.ln1, blob)}, {"ln2", ln_to_json(b.ln2, blob)}};
        TransformerBlock copy = b;
        for (const char* name : kLinearNames) {
            const LinearLayerParams& l = *block_linear(copy, name);
            jb["linears"][name] = json{{"in", l.in_features()},
                                       {"out", l.out_features()},
                                       {"weight", blob.put_f32(l.weight.values())},
                                       {"bias", blob.put_array(l.bias)}};
        }
        blocks.push_back(std::move(jb));
    }
    j["blocks"] = std::move(blocks);
    blob.write(blob_path(path));
    write_json(j, path);
}

ToyModel load_model(const std::string& path)
{
    const json j = read_json(path);
    return guarded(path, [&] {
        const BlobReader blob(check_header(j, "toy_model", path));
        ToyModel m;
        m.embed_dim = j.at("embed_dim").get<std::size_t>();
        m.tokens = j.at("tokens").get<std::size_t>();
        for (const auto& jb : j.at("blocks")) {
            TransformerBlock b;
            b.heads = jb.at("heads").get<std::size_t>();
            b.ln1 = ln_from_json(jb.at("ln1"), blob);
            b.ln2 = ln_from_json(jb.at("ln2"), blob);
            for (const char* name : kLinearNames) {
                const json& jl = jb.at("linears").at(name);
                LinearLayerParams& l = *block_linear(b, name);
                l.weight = blob.get_tensor(jl.at("weight"), {jl.at("in").get<std::size_t>(), jl.at("out").get<std::size_t>()});
                l.bias = blob.get(jl.at("bias"));
            }
            m.blocks.push_back(std::move(b));
        }
        try {
            m.validate();
        } catch (const Error& e) {
            throw FormatError(path + ": inconsistent model: " + e.what());
        }
        return m;
    });
}

void save_quantized(const QuantizedModel& model, const std::string& path)
{
    model.validate();
    BlobWriter blob;
    json j = header("quantized_model", path);
    j["embed_dim"] = model.embed_dim;
    j["tokens"] = model.tokens;
    j["config"] = config_to_json(model.config);
    j["hardware_friendly"] = model.hardware_friendly();
    json blocks = json::array();
    for (const auto& b : model.blocks) {
        json jb{{"heads", b.heads}, {"ln1", ln_to_json(b.ln1, blob)}, {"ln2", ln_to_json(b.ln2, blob)}};
        for (const char* name : kLinearNames) {
            const QuantizedLinear& l = b.linear(name);
            jb["linears"][name] = json{{"in", l.layer.in_features()},
                                       {"out", l.layer.out_features()},
                                       {"codes", blob.put_codes(l.codes, l.weight_quant.bits)},
                                       {"weight_quant", uniform_to_json(l.weight_quant, blob)},
                                       {"bias", blob.put_array(l.layer.bias)}};
        }
        json acts = json::object();
        for (Site s : kAllSites) {
            const auto& q = b.act[static_cast<std::size_t>(s)];
            if (!q)
                continue;
            json jq{{"kind", act_kind_name(q->kind)}, {"bits", q->bits}};
            if (q->kind == ActKind::uniform) {
                jq["granularity"] = granularity_name(q->uniform.granularity);
                jq["scale"] = blob.put_array(q->uniform.scale);
                jq["zero_point"] = blob.put_array(q->uniform.zero_point);
            } else {
                jq["scale"] = q->log_scale;
            }
            acts[site_name(s)] = std::move(jq);
        }
        jb["activations"] = std::move(acts);
        json rps = json::array();
        for (const auto& r : b.reparam) {
            rps.push_back(json{{"site", site_name(r.site)},
                               {"r1", blob.put_array(r.r1)},
                               {"r2", blob.put_array(r.r2)},
                               {"s_tilde", r.s_tilde},
                               {"z_tilde", r.z_tilde}});
        }
        jb["reparam"] = std::move(rps);
        blocks.push_back(std::move(jb));
    }
    j["blocks"] = std::move(blocks);
    blob.write(blob_path(path));
    write_json(j, path);
}

QuantizedModel load_quantized(const std::string& path)
{
    const json j = read_json(path);
    return guarded(path, [&] {
        const BlobReader blob(check_header(j, "quantized_model", path));
        QuantizedModel m;
        m.embed_dim = j.at("embed_dim").get<std::size_t>();
        m.tokens = j.at("tokens").get<std::size_t>();
        m.config = config_from_json(j.at("config"));
        for (const auto& jb : j.at("blocks")) {
            QuantizedBlock b;
            b.heads = jb.at("heads").get<std::size_t>();
            b.ln1 = ln_from_json(jb.at("ln1"), blob);
            b.ln2 = ln_from_json(jb.at("ln2"), blob);
            for (const char* name : kLinearNames) {
                const json& jl = jb.at("linears").at(name);
                QuantizedLinear& l = *qblock_linear(b, name);
                l.weight_quant = uniform_from_json(jl.at("weight_quant"), blob);
                l.codes = blob.get_tensor(jl.at("codes"), {jl.at("in").get<std::size_t>(), jl.at("out").get<std::size_t>()});
                if (l.weight_quant.channels() != 1 && l.weight_quant.channels() != l.codes.cols())
                    throw FormatError(path + ": weight quantizer of " + name + " does not match its codes");
                l.layer.weight = uniform_dequant(l.codes, l.weight_quant);
                l.layer.bias = blob.get(jl.at("bias"));
            }
            for (const auto& [name, jq] : jb.at("activations").items()) {
                ActQuantizer q;
                const auto kind = jq.at("kind").get<std::string>();
                q.bits = jq.at("bits").get<int>();
                if (kind == "uniform") {
                    q.kind = ActKind::uniform;
                    q.uniform = UniformQuantParams{blob.get(jq.at("scale")), blob.get(jq.at("zero_point")), q.bits,
                                                   granularity_from(jq.at("granularity").get<std::string>())};
                    q.uniform.validate();
                } else if (kind == "log2" || kind == "log2_parity") {
                    q.kind = kind == "log2" ? ActKind::log2 : ActKind::log2_parity;
                    q.log_scale = jq.at("scale").get<double>();
                    LogQuantParams{q.log_scale, LogBase::two, q.bits}.validate();
                } else {
                    throw FormatError(path + ": unknown activation quantizer kind '" + kind + "'");
                }
                b.act[static_cast<std::size_t>(site_from_name(name))] = std::move(q);
            }
            for (const auto& jr : jb.at("reparam")) {
                b.reparam.push_back(ReparamRecord{site_from_name(jr.at("site").get<std::string>()),
                                                  blob.get(jr.at("r1")), blob.get(jr.at("r2")),
                                                  jr.at("s_tilde").get<double>(), jr.at("z_tilde").get<double>()});
            }
            m.blocks.push_back(std::move(b));
        }
        try {
            m.validate();
        } catch (const FormatError&) {
            throw;
        } catch (const Error& e) {
            throw FormatError(path + ": inconsistent quantized model: " + e.what());
        }
        return m;
    });
}

void save_dataset(const Tensor& data, const std::string& path, const json& meta)
{
    BlobWriter blob;
    json j = header("dataset", path);
    j["shape"] = data.shape();
    j["data"] = blob.put_f32(data.values());
    j["generator"] = meta;
    blob.write(blob_path(path));
    write_json(j, path);
}

Tensor load_dataset(const std::string& path)
{
    const json j = read_json(path);
    return guarded(path, [&] {
        const BlobReader blob(check_header(j, "dataset", path));
        const auto shape = j.at("shape").get<Shape>();
        if (shape.empty())
            throw FormatError(path + ": empty dataset shape");
        for (auto d : shape) {
            if (d == 0)
                throw FormatError(path + ": zero-sized dataset dimension");
        }
        return blob.get_tensor(j.at("data"), shape);
    });
}

namespace {

const char* softmax_name(SoftmaxQuantizer s)
{
    return s == SoftmaxQuantizer::log2 ? "log2" : "logsqrt2";
}

const char* ln_mode_name(LnMode m)
{
    switch (m) {
    case LnMode::reparam: return "reparam";
    case LnMode::channel: return "channel";
    case LnMode::layer: return "layer";
    }
    return "?";
}

}  // namespace

json config_to_json(const QuantConfig& c)
{
    return json{{"weight_bits", c.weight_bits},
                {"act_bits", c.act_bits},
                {"percentile", c.percentile},
                {"clip", c.clip},
                {"clip_iters", c.clip_iters},
                {"clip_lr", c.clip_lr},
                {"clip_init", c.clip_init},
                {"clip_method", c.clip_method == ClipMethod::sigmoid ? "sigmoid" : "direct"},
                {"gptq", c.gptq},
                {"softmax_base", softmax_name(c.softmax)},
                {"ln_mode", ln_mode_name(c.ln_mode)},
                {"prefix_mode", c.prefix == PrefixMode::quantized ? "quantized" : "fp"},
                {"calib_size", c.calib_size},
                {"seed", c.seed}};
}

QuantConfig config_from_json(const json& j)
{
    QuantConfig c;
    try {
        c.weight_bits = j.value("weight_bits", c.weight_bits);
        c.act_bits = j.value("act_bits", c.act_bits);
        c.percentile = j.value("percentile", c.percentile);
        c.clip = j.value("clip", c.clip);
        c.clip_iters = j.value("clip_iters", c.clip_iters);
        c.clip_lr = j.value("clip_lr", c.clip_lr);
        c.clip_init = j.value("clip_init", c.clip_init);
        c.gptq = j.value("gptq", c.gptq);
        c.calib_size = j.value("calib_size", c.calib_size);
        c.seed = j.value("seed", c.seed);
        const auto method = j.value("clip_method", std::string("sigmoid"));
        if (method != "sigmoid" && method != "direct")
            throw FormatError("config: unknown clip_method '" + method + "'");
        c.clip_method = method == "sigmoid" ? ClipMethod::sigmoid : ClipMethod::direct;
        const auto base = j.value("softmax_base", std::string("logsqrt2"));
        if (base != "log2" && base != "logsqrt2")
            throw FormatError("config: unknown softmax_base '" + base + "'");
        c.softmax = base == "log2" ? SoftmaxQuantizer::log2 : SoftmaxQuantizer::log_sqrt2;
        const auto mode = j.value("ln_mode", std::string("reparam"));
        if (mode == "reparam")
            c.ln_mode = LnMode::reparam;
        else if (mode == "channel")
            c.ln_mode = LnMode::channel;
        else if (mode == "layer")
            c.ln_mode = LnMode::layer;
        else
            throw FormatError("config: unknown ln_mode '" + mode + "'");
        const auto prefix = j.value("prefix_mode", std::string("quantized"));
        if (prefix != "quantized" && prefix != "fp")
            throw FormatError("config: unknown prefix_mode '" + prefix + "'");
        c.prefix = prefix == "fp" ? PrefixMode::fp : PrefixMode::quantized;
    } catch (const json::exception& e) {
        throw FormatError(std::string("config: ") + e.what());
    }
    try {
        c.validate();
    } catch (const Error& e) {
        throw FormatError(e.what());
    }
    return c;
}

json report_to_json(const LayerReport& r)
{
    json j{{"id", r.id},
           {"kind", report_kind_name(r.kind)},
           {"pre_loss", r.pre_loss},
           {"post_loss", r.post_loss},
           {"degenerate_channels", r.degenerate_channels},
           {"cholesky_fallback", r.cholesky_fallback}};
    if (r.clipped) {
        j["clip"] = json{{"initial_loss", r.clip_initial_loss},
                         {"best_loss", r.clip_best_loss},
                         {"best_iteration", r.clip_best_iteration},
                         {"positive_min_channels", r.positive_min_channels}};
    }
    return j;
}

json metrics_to_json(const Metrics& m)
{
    const auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
    json sq = json::array();
    for (double v : m.block_sqnr_db)
        sq.push_back(num(v));
    return json{{"output_mse", num(m.output_mse)}, {"cosine_similarity", num(m.cosine_similarity)}, {"block_sqnr_db", sq}};
}

}  // namespace ptqkit

#include "ptqkit/error.hpp"
#include "ptqkit/pipeline.hpp"
#include "ptqkit/serialize.hpp"
#include "ptqkit/synthdata.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

using namespace ptqkit;
namespace fs = std::filesystem;

namespace {

class SerializeTest : public ::testing::Test {
protected:
    void SetUp() override
    {
        dir_ = fs::temp_directory_path() /
               ("ptqkit_ser_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }
    std::string path(const std::string& name) const { return (dir_ / name).string(); }

    fs::path dir_;
};

std::string slurp(const std::string& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

Tensor as_f32(const Tensor& t)
{
    Tensor out(t.shape());
    for (std::size_t i = 0; i < t.size(); ++i)
        out[i] = static_cast<float>(t[i]);
    return out;
}

ModelSpec tiny_spec()
{
    ModelSpec ms;
    ms.blocks = 1;
    ms.embed_dim = 16;
    ms.tokens = 8;
    ms.heads = 2;
    return ms;
}

Tensor tiny_data(std::size_t samples = 12)
{
    SynthSpec ds;
    ds.channels = 16;
    ds.tokens = 8;
    ds.samples = samples;
    return gen_interchannel(ds);
}

}  // namespace

TEST_F(SerializeTest, DatasetRoundTrip)
{
    const Tensor x = tiny_data();
    save_dataset(x, path("d.json"), {{"note", "x"}});
    const Tensor y = load_dataset(path("d.json"));
    EXPECT_EQ(y, as_f32(x));
    EXPECT_EQ(read_json(path("d.json"))["kind"], "dataset");
}

TEST_F(SerializeTest, SmallArraysInline)
{
    save_dataset(Tensor::vector({1.5, -2.0, 3.25}), path("s.json"));
    EXPECT_EQ(load_dataset(path("s.json")), Tensor::vector({1.5, -2.0, 3.25}));
}

TEST_F(SerializeTest, ModelRoundTripIsStable)
{
    const ToyModel m = init_model(tiny_spec());
    save_model(m, path("m.json"));
    const ToyModel back = load_model(path("m.json"));
    ASSERT_EQ(back.blocks.size(), 1u);
    EXPECT_EQ(back.blocks[0].wq.weight, as_f32(m.blocks[0].wq.weight));
    EXPECT_EQ(back.blocks[0].heads, m.blocks[0].heads);
    save_model(back, path("m2.json"));
    EXPECT_EQ(slurp(path("m.json.bin")), slurp(path("m2.json.bin")));
}

TEST_F(SerializeTest, QuantizedRoundTripPreservesForward)
{
    const ToyModel m = init_model(tiny_spec());
    QuantConfig c;
    c.clip_iters = 10;
    const Tensor calib = tiny_data();
    const QuantizedModel q = run_pipeline(m, calib, c).model;
    save_quantized(q, path("q.json"));
    const QuantizedModel back = load_quantized(path("q.json"));
    EXPECT_TRUE(back.hardware_friendly());
    EXPECT_EQ(back.blocks[0].wq.codes, q.blocks[0].wq.codes);
    const Tensor ya = q.forward(calib), yb = back.forward(calib);
    EXPECT_LT(squared_distance(ya, yb), 1e-6 * squared_distance(ya, Tensor(ya.shape())));
    save_quantized(back, path("q2.json"));
    auto ja = read_json(path("q.json")), jb = read_json(path("q2.json"));
    ja.erase("blob");
    jb.erase("blob");
    EXPECT_EQ(ja.dump(), jb.dump());
    EXPECT_EQ(slurp(path("q.json.bin")), slurp(path("q2.json.bin")));
}

TEST_F(SerializeTest, MissingFileIsIoError)
{
    EXPECT_THROW(load_dataset(path("nope.json")), IoError);
    EXPECT_THROW(read_json(path("nope.json")), IoError);
}

TEST_F(SerializeTest, MissingBlobIsIoError)
{
    save_dataset(tiny_data(), path("d.json"));
    fs::remove(path("d.json.bin"));
    EXPECT_THROW(load_dataset(path("d.json")), IoError);
}

TEST_F(SerializeTest, VersionMismatchIsFormatError)
{
    save_dataset(tiny_data(), path("d.json"));
    auto j = read_json(path("d.json"));
    j["format_version"] = kFormatVersion + 1;
    write_json(j, path("d.json"));
    EXPECT_THROW(load_dataset(path("d.json")), FormatError);
}

TEST_F(SerializeTest, WrongKindIsFormatError)
{
    save_dataset(tiny_data(), path("d.json"));
    EXPECT_THROW(load_model(path("d.json")), FormatError);
}

TEST_F(SerializeTest, GarbageIsFormatError)
{
    {
        std::ofstream out(path("g.json"));
        out << "{not json";
    }
    EXPECT_THROW(read_json(path("g.json")), FormatError);
}

TEST_F(SerializeTest, TruncatedBlobIsFormatError)
{
    save_dataset(tiny_data(), path("d.json"));
    fs::resize_file(path("d.json.bin"), 10);
    EXPECT_THROW(load_dataset(path("d.json")), FormatError);
}

TEST(ConfigJson, RoundTrip)
{
    QuantConfig c;
    c.act_bits = 6;
    c.softmax = SoftmaxQuantizer::log2;
    c.ln_mode = LnMode::channel;
    c.prefix = PrefixMode::fp;
    c.clip_method = ClipMethod::direct;
    c.seed = 77;
    const QuantConfig d = config_from_json(config_to_json(c));
    EXPECT_EQ(config_to_json(d), config_to_json(c));
}

TEST(ConfigJson, RejectsBadEnum)
{
    auto j = config_to_json(QuantConfig{});
    j["softmax_base"] = "log3";
    EXPECT_THROW(config_from_json(j), FormatError);
}

TEST(MetricsJson, NonFiniteBecomesNull)
{
    const auto j = metrics_to_json(Metrics{NAN, 1.0, {1.0, INFINITY}});
    EXPECT_TRUE(j["output_mse"].is_null());
}

#include "ptqkit/benchmark.hpp"

#include "ptqkit/rng.hpp"


namespace ptqkit {

ModelSpec benchmark_model_spec(std::uint64_t seed)
{
    ModelSpec spec;
    spec.blocks = 2;
    spec.embed_dim = 64;
    spec.tokens = 16;
    spec.heads = 4;
    spec.seed = seed;
    return spec;
}

SynthSpec benchmark_data_spec(std::uint64_t seed, std::size_t samples)
{
    SynthSpec spec;
    spec.channels = 64;
    spec.tokens = 16;
    spec.samples = samples;
    spec.seed = seed;
    return spec;
}

Benchmark make_benchmark(std::uint64_t seed)
{
    Benchmark b;
    b.model = init_model(benchmark_model_spec(seed));
    // Keeps the data streams apart from the model's streams of the same seed.
    SynthSpec data = benchmark_data_spec(splitmix64(seed ^ 0x64617461ULL), kBenchmarkCalibSamples);
    b.calib = gen_interchannel(data);
    data.samples = kBenchmarkHeldoutSamples;
    data.sample_seed = 1;
    b.heldout = gen_interchannel(data);
    return b;
}

}  // namespace ptqkit

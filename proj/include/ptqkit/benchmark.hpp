#pragma once

#include "ptqkit/synthdata.hpp"
#include "ptqkit/toymodel.hpp"

#include <cstdint>

namespace ptqkit {

/// The shipped desk-scale benchmark: a small model plus calibration and
/// held-out inputs with strong inter-channel variation and outliers.
struct Benchmark {
    ToyModel model;
    Tensor calib;
    Tensor heldout;
};

ModelSpec benchmark_model_spec(std::uint64_t seed);
SynthSpec benchmark_data_spec(std::uint64_t seed, std::size_t samples);

inline constexpr std::size_t kBenchmarkCalibSamples = 64;
inline constexpr std::size_t kBenchmarkHeldoutSamples = 32;

Benchmark make_benchmark(std::uint64_t seed);

}  // namespace ptqkit

#pragma once

#include "ptqkit/pipeline.hpp"

#include <string>
#include <vector>

namespace ptqkit {

/// modules:     clip x gptq on/off (4 rows)
/// softmax:     log2 vs log-sqrt2 softmax quantizer
/// layernorm:   layer-wise, channel-wise, reparameterized LayerNorm quantizer
/// contraction: sigmoid vs direct bound parameterization for clipping
enum class AblationStudy { modules, softmax, layernorm, contraction };

std::string study_name(AblationStudy s);
/// Throws FormatError on unknown names.
AblationStudy study_from_name(const std::string& name);

struct AblationRow {
    std::string name;
    QuantConfig config;
    Metrics metrics;
    bool hardware_friendly = true;
};

/// Grid configurations derived from `base`, in report order.
std::vector<AblationRow> ablation_grid(AblationStudy study, const QuantConfig& base);

/// Runs every grid point (in up to `threads` worker threads; 0 means one per
/// row) and evaluates it on `heldout`. Results do not depend on `threads`.
std::vector<AblationRow> run_ablation(AblationStudy study, const ToyModel& model, const Tensor& calib,
                                      const Tensor& heldout, const QuantConfig& base, unsigned threads = 0);

}  // namespace ptqkit

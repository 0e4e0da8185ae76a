#pragma once

#include "ptqkit/pipeline.hpp"
#include "ptqkit/tensor.hpp"
#include "ptqkit/toymodel.hpp"

#include "json.hpp"

#include <string>
#include <vector>

namespace ptqkit {

inline constexpr int kFormatVersion = 1;

/// Files are a JSON manifest at `path` plus a little-endian blob at
/// `path + ".bin"`. Float tensors are stored as f32, weight codes as u8
/// (u16 above 8 bits). Channel arrays of at most 64 entries are inlined.
void save_model(const ToyModel& model, const std::string& path);
ToyModel load_model(const std::string& path);

void save_quantized(const QuantizedModel& model, const std::string& path);
QuantizedModel load_quantized(const std::string& path);

/// `meta` is stored verbatim under "generator".
void save_dataset(const Tensor& data, const std::string& path, const nlohmann::json& meta = nlohmann::json::object());
Tensor load_dataset(const std::string& path);

nlohmann::json config_to_json(const QuantConfig& cfg);
/// Missing keys keep their defaults; bad values throw FormatError.
QuantConfig config_from_json(const nlohmann::json& j);

nlohmann::json report_to_json(const LayerReport& report);
nlohmann::json metrics_to_json(const Metrics& m);

/// Reads and parses a JSON file (IoError / FormatError).
nlohmann::json read_json(const std::string& path);
/// Writes `j` with two-space indentation and a trailing newline.
void write_json(const nlohmann::json& j, const std::string& path);

}  // namespace ptqkit

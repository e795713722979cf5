#pragma once

#include <cstdint>
#include <filesystem>

#include "json.hpp"
#include "sam3d/decoder/decoder.hpp"
#include "sam3d/encoder/encoder.hpp"
#include "sam3d/infer/inference.hpp"
#include "sam3d/train/trainer.hpp"

namespace sam3d {

inline constexpr int kSchemaVersion = 1;

struct MetricsConfig {
  bool write_csv = true;
};

/// One JSON document describing an experiment. Relative paths are resolved
/// against the directory holding the config file.
struct RunConfig {
  int schema_version = kSchemaVersion;
  std::filesystem::path dataset_manifest;
  EncoderConfig encoder;
  DecoderConfig decoder;
  TrainConfig train;
  InferenceConfig inference;
  MetricsConfig metrics;
  std::filesystem::path output_dir = "runs/default";
  std::uint64_t seed = 0;

  bool operator==(const RunConfig& other) const;
};

/// Unknown keys, type mismatches and range violations raise ValidationError
/// whose message starts with the JSON path, e.g. "$.train.max_epoch: ...".
/// Decoder in_channels / num_classes default to the manifest's modality and
/// class counts.
RunConfig parse_config(const std::filesystem::path& path);
RunConfig parse_config_json(const nlohmann::json& doc, const std::filesystem::path& base_dir,
                            bool check_paths = true);

/// Fully explicit document (every default written out, absolute paths).
nlohmann::json serialize_config(const RunConfig& cfg);

}  // namespace sam3d

#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "sam3d/decoder/decoder.hpp"
#include "sam3d/train/optim.hpp"

namespace sam3d {

// Checkpoint directory layout:
//   manifest.json          epoch, iteration, config digests, configs, tensor index
//   params/<name>.rvf      one file per decoder parameter
//   velocity/<name>.rvf    matching SGD velocity

struct CheckpointDigests {
  std::string decoder;
  std::string encoder;
  std::string train;

  bool operator==(const CheckpointDigests&) const = default;
};

struct TrainingState {
  Decoder<float> decoder;
  SgdState<float> optimizer;
  std::size_t epoch = 0;      // next epoch to run
  std::size_t iteration = 0;  // global iterations completed
  CheckpointDigests digests;
  nlohmann::json configs = nlohmann::json::object();
};

/// Writes to a sibling temp directory, then swaps it into place.
void save_checkpoint(const std::filesystem::path& dir, const TrainingState& state);

/// Throws IoError naming any tensor whose file is missing.
TrainingState load_checkpoint(const std::filesystem::path& dir);

/// Loads parameters only (velocity files are not required).
Decoder<float> load_decoder(const std::filesystem::path& dir);

/// Throws ValidationError listing which digests differ.
void require_matching_digests(const CheckpointDigests& saved, const CheckpointDigests& live);

}  // namespace sam3d

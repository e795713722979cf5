#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "sam3d/io/volume.hpp"

namespace sam3d::cli {

struct GlobalOptions {
  std::filesystem::path config;
  std::filesystem::path checkpoint;
  std::filesystem::path input;
  std::filesystem::path output;
  std::filesystem::path cache_dir;
  unsigned threads = 1;
  bool deterministic = false;
  std::string isa = "auto";  // auto | scalar | avx2
};

/// Applies --threads, --deterministic and --isa to the kernel layer.
void apply_runtime(const GlobalOptions& g);

struct TrainArgs {
  bool resume = false;
  std::size_t prefetch = 0;
  std::size_t stop_after_epoch = 0;
};

struct PredictArgs {
  bool probabilities = false;  // also write <case>_probs.rvf
};

struct CountArgs {
  std::size_t modalities = 1;
  std::size_t classes = 9;
};

struct ToyArgs {
  std::size_t cases = 4;
  Extent3 shape{8, 64, 64};
  int classes = 3;
  std::uint64_t seed = 0;
};

// Each command returns a JSON summary (printed by the executable) and throws
// sam3d::Error subclasses on failure.
nlohmann::json cmd_train(const GlobalOptions& g, const TrainArgs& a);
nlohmann::json cmd_predict(const GlobalOptions& g, const PredictArgs& a);
nlohmann::json cmd_evaluate(const GlobalOptions& g);
nlohmann::json cmd_extract_embeddings(const GlobalOptions& g);
nlohmann::json cmd_count_params(const GlobalOptions& g, const CountArgs& a);
nlohmann::json cmd_make_toy_dataset(const GlobalOptions& g, const ToyArgs& a);

/// "D,H,W" -> extent.
Extent3 parse_shape(const std::string& text);

/// {"error": kind, "message": what} on one line.
std::string error_line(const std::exception& e);

}  // namespace sam3d::cli

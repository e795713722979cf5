#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>

#include "json.hpp"
#include "sam3d/io/volume.hpp"

namespace sam3d {

inline constexpr std::size_t kEmbedDim = 256;
inline constexpr std::size_t kPatchStride = 16;

enum class EncoderBackend { kToy, kPretrainedVit };

struct EncoderConfig {
  EncoderBackend backend = EncoderBackend::kToy;
  std::uint64_t seed = 0;                   // toy backend
  std::filesystem::path checkpoint_path;    // pretrained backend: directory of RVF tensors
  std::size_t embed_dim = kEmbedDim;
  std::size_t patch_stride = kPatchStride;
  std::size_t toy_depth = 2;
  std::size_t toy_heads = 4;
  std::size_t toy_mlp_ratio = 2;
  // Pretrained backend input normalization after per-slice [0, 255] rescale.
  std::array<double, 3> pixel_mean{123.675, 116.28, 103.53};
  std::array<double, 3> pixel_std{58.395, 57.12, 57.375};

  nlohmann::json to_json() const;
  /// Hash of every field that influences encoder outputs.
  std::string digest() const;
};

std::string backend_name(EncoderBackend b);
EncoderBackend backend_from_name(const std::string& name);

/// (D, 3, H, W): each depth slice of one modality copied into three channels.
using SliceBatch = Tensor<float>;

/// (256 * M, D, H / 16, W / 16): per-slice embeddings stacked along depth,
/// modalities concatenated along channels.
using EmbeddingVolume = Tensor<float>;

SliceBatch split_into_slices(const Volume& vol, std::size_t modality);

/// A frozen 2D encoder. Implementations expose no mutable state; outputs are a
/// pure function of the input slices.
class SliceEncoder {
 public:
  virtual ~SliceEncoder() = default;
  /// (D, 3, H, W) -> (D, 256, H / 16, W / 16)
  virtual Tensor<float> encode_slices(const SliceBatch& slices) const = 0;
  virtual std::string digest() const = 0;
  virtual std::size_t parameter_count() const = 0;
};

std::unique_ptr<SliceEncoder> make_encoder(const EncoderConfig& cfg);

EmbeddingVolume encode_volume(const Volume& vol, const SliceEncoder& encoder);

}  // namespace sam3d

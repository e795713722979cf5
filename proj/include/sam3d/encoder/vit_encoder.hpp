#pragma once

#include <filesystem>
#include <vector>

#include "sam3d/encoder/encoder.hpp"
#include "sam3d/encoder/transformer.hpp"

namespace sam3d {

/// Architecture of a windowed-attention ViT image encoder with a 256-channel
/// convolutional neck. Defaults describe the ViT-B variant.
struct VitSpec {
  std::size_t embed_dim = 768;
  std::size_t depth = 12;
  std::size_t heads = 12;
  std::size_t mlp_ratio = 4;
  std::size_t window = 14;
  std::vector<std::size_t> global_blocks{2, 5, 8, 11};
  std::size_t pos_grid = 64;  // learned absolute position grid (pos_grid x pos_grid)
  bool use_rel_pos = true;

  static VitSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// Pretrained backend. Weights come from a directory holding one RVF file per
/// tensor, named by the checkpoint key (e.g. "blocks.3.attn.qkv.weight.rvf"),
/// plus an optional "vit.json" with the VitSpec. Slices are encoded at native
/// resolution with bilinearly resized absolute position embeddings.
class VitEncoder final : public SliceEncoder {
 public:
  explicit VitEncoder(const EncoderConfig& cfg);

  Tensor<float> encode_slices(const SliceBatch& slices) const override;
  std::string digest() const override { return digest_; }
  std::size_t parameter_count() const override;
  const VitSpec& spec() const { return spec_; }

 private:
  EncoderConfig cfg_;
  VitSpec spec_;
  std::string digest_;
  vit::Linear patch_proj_;
  Tensor<float> pos_embed_;  // (g, g, C)
  std::vector<vit::Block> blocks_;
  Tensor<float> neck_conv1_;  // (256, C)
  vit::LayerNorm neck_norm1_;
  Tensor<float> neck_conv2_;  // (256, 256 * 9), channel-major then 3x3 taps
  vit::LayerNorm neck_norm2_;
};

}  // namespace sam3d

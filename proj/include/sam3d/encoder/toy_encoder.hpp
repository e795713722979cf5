#pragma once

#include <vector>

#include "sam3d/encoder/encoder.hpp"
#include "sam3d/encoder/transformer.hpp"

namespace sam3d {

/// Desk-scale stand-in for a pretrained backbone: seeded 16x16 patch
/// projection to 256 channels, additive sinusoidal position encoding, and a
/// few pre-norm self-attention blocks. All weights are fixed at construction.
class ToyEncoder final : public SliceEncoder {
 public:
  explicit ToyEncoder(const EncoderConfig& cfg);

  Tensor<float> encode_slices(const SliceBatch& slices) const override;
  std::string digest() const override { return digest_; }
  std::size_t parameter_count() const override;

  /// Runs the attention blocks on an (h, w, 256) token grid.
  Tensor<float> transform_tokens(Tensor<float> tokens) const;

 private:
  EncoderConfig cfg_;
  std::string digest_;
  vit::Linear patch_proj_;
  std::vector<vit::Block> blocks_;
};

}  // namespace sam3d

#include <algorithm>

#include "sam3d/core/digest.hpp"
#include "sam3d/core/error.hpp"
#include "sam3d/encoder/encoder.hpp"
#include "sam3d/encoder/toy_encoder.hpp"
#include "sam3d/encoder/vit_encoder.hpp"

namespace sam3d {

std::string backend_name(EncoderBackend b) { return b == EncoderBackend::kToy ? "toy" : "pretrained_vit"; }

EncoderBackend backend_from_name(const std::string& name) {
  if (name == "toy") return EncoderBackend::kToy;
  if (name == "pretrained_vit") return EncoderBackend::kPretrainedVit;
  throw ValidationError("unknown encoder backend '" + name + "'");
}

nlohmann::json EncoderConfig::to_json() const {
  return {{"backend", backend_name(backend)},
          {"seed", seed},
          {"checkpoint_path", checkpoint_path.string()},
          {"embed_dim", embed_dim},
          {"patch_stride", patch_stride},
          {"toy_depth", toy_depth},
          {"toy_heads", toy_heads},
          {"toy_mlp_ratio", toy_mlp_ratio},
          {"pixel_mean", pixel_mean},
          {"pixel_std", pixel_std}};
}

std::string EncoderConfig::digest() const {
  nlohmann::json j = to_json();
  if (backend == EncoderBackend::kToy) {
    j.erase("checkpoint_path");
    j.erase("pixel_mean");
    j.erase("pixel_std");
  } else {
    j.erase("seed");
    j.erase("toy_depth");
    j.erase("toy_heads");
    j.erase("toy_mlp_ratio");
  }
  return sha256_hex(j.dump());
}

SliceBatch split_into_slices(const Volume& vol, std::size_t modality) {
  vol.validate();
  if (modality >= vol.modalities()) {
    throw ShapeError("modality " + std::to_string(modality) + " out of range for " +
                     std::to_string(vol.modalities()) + " modalities");
  }
  const std::size_t d = vol.depth();
  const std::size_t plane = vol.height() * vol.width();
  SliceBatch out(Shape{d, 3, vol.height(), vol.width()});
  const float* src = vol.data.data() + modality * d * plane;
  for (std::size_t z = 0; z < d; ++z) {
    for (std::size_t c = 0; c < 3; ++c) std::copy_n(src + z * plane, plane, out.data() + (z * 3 + c) * plane);
  }
  return out;
}

std::unique_ptr<SliceEncoder> make_encoder(const EncoderConfig& cfg) {
  if (cfg.embed_dim != kEmbedDim || cfg.patch_stride != kPatchStride) {
    throw ValidationError("encoder must produce 256 channels at stride 16");
  }
  if (cfg.backend == EncoderBackend::kToy) return std::make_unique<ToyEncoder>(cfg);
  return std::make_unique<VitEncoder>(cfg);
}

EmbeddingVolume encode_volume(const Volume& vol, const SliceEncoder& encoder) {
  vol.validate();
  if (vol.height() % kPatchStride != 0 || vol.width() % kPatchStride != 0) {
    throw ShapeError("volume in-plane size " + std::to_string(vol.height()) + "x" + std::to_string(vol.width()) +
                     " is not a multiple of 16");
  }
  const std::size_t m = vol.modalities();
  const std::size_t d = vol.depth();
  const std::size_t h = vol.height() / kPatchStride;
  const std::size_t w = vol.width() / kPatchStride;
  const std::size_t plane = h * w;
  EmbeddingVolume out(Shape{kEmbedDim * m, d, h, w});
  for (std::size_t mod = 0; mod < m; ++mod) {
    const Tensor<float> per_slice = encoder.encode_slices(split_into_slices(vol, mod));  // (D, 256, h, w)
    if (per_slice.shape() != Shape{d, kEmbedDim, h, w}) {
      throw ShapeError("encoder returned " + shape_str(per_slice.shape()));
    }
    // (D, C, h, w) -> (C, D, h, w) at channel offset mod * 256
    for (std::size_t z = 0; z < d; ++z) {
      for (std::size_t c = 0; c < kEmbedDim; ++c) {
        std::copy_n(per_slice.data() + (z * kEmbedDim + c) * plane, plane,
                    out.data() + ((mod * kEmbedDim + c) * d + z) * plane);
      }
    }
  }
  return out;
}

}  // namespace sam3d

#include "sam3d/encoder/toy_encoder.hpp"

#include "sam3d/core/error.hpp"
#include "sam3d/core/rng.hpp"

namespace sam3d {

namespace {

constexpr double kInitStd = 0.02;

Tensor<float> normal_tensor(Shape shape, Rng& rng) {
  Tensor<float> t(std::move(shape));
  for (float& v : t.vec()) v = static_cast<float>(rng.normal(0.0, kInitStd));
  return t;
}

vit::Linear random_linear(std::size_t out, std::size_t in, Rng& rng) {
  return vit::Linear::from_out_in(normal_tensor(Shape{out, in}, rng), Tensor<float>(Shape{out}));
}

}  // namespace

ToyEncoder::ToyEncoder(const EncoderConfig& cfg) : cfg_(cfg), digest_(cfg.digest()) {
  const std::size_t c = cfg.embed_dim;
  if (c % cfg.toy_heads != 0) throw ValidationError("toy encoder embed_dim must divide evenly into heads");
  Rng rng(cfg.seed);
  patch_proj_ = random_linear(c, 3 * cfg.patch_stride * cfg.patch_stride, rng);
  for (std::size_t i = 0; i < cfg.toy_depth; ++i) {
    vit::Block b;
    b.heads = cfg.toy_heads;
    b.norm1 = vit::LayerNorm::identity(c);
    b.norm2 = vit::LayerNorm::identity(c);
    b.qkv = random_linear(3 * c, c, rng);
    b.proj = random_linear(c, c, rng);
    b.fc1 = random_linear(cfg.toy_mlp_ratio * c, c, rng);
    b.fc2 = random_linear(c, cfg.toy_mlp_ratio * c, rng);
    blocks_.push_back(std::move(b));
  }
}

std::size_t ToyEncoder::parameter_count() const {
  std::size_t n = patch_proj_.parameter_count();
  for (const vit::Block& b : blocks_) n += b.parameter_count();
  return n;
}

Tensor<float> ToyEncoder::transform_tokens(Tensor<float> tokens) const {
  for (const vit::Block& b : blocks_) vit::block_forward(b, tokens);
  return tokens;
}

Tensor<float> ToyEncoder::encode_slices(const SliceBatch& slices) const {
  if (slices.rank() != 4 || slices.dim(1) != 3) throw ShapeError("slices must be (D, 3, H, W)");
  const std::size_t d = slices.dim(0);
  const std::size_t height = slices.dim(2);
  const std::size_t width = slices.dim(3);
  const std::size_t stride = cfg_.patch_stride;
  if (height % stride != 0 || width % stride != 0) {
    throw ShapeError("slice size " + std::to_string(height) + "x" + std::to_string(width) +
                     " is not a multiple of 16");
  }
  const std::size_t gh = height / stride;
  const std::size_t gw = width / stride;
  const std::size_t c = cfg_.embed_dim;
  const Tensor<float> pos = vit::sinusoidal_position_encoding(gh, gw, c);
  Tensor<float> out(Shape{d, c, gh, gw});
  for (std::size_t z = 0; z < d; ++z) {
    Tensor<float> tokens = vit::patch_embed(slices.data() + z * 3 * height * width, height, width, stride, patch_proj_);
    for (std::size_t i = 0; i < tokens.size(); ++i) tokens[i] += pos[i];
    tokens = transform_tokens(std::move(tokens));
    for (std::size_t p = 0; p < gh * gw; ++p) {
      for (std::size_t ch = 0; ch < c; ++ch) out[(z * c + ch) * gh * gw + p] = tokens[p * c + ch];
    }
  }
  return out;
}

}  // namespace sam3d

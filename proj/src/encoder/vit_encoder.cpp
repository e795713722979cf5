#include "sam3d/encoder/vit_encoder.hpp"

#include <utility>
#include <algorithm>
#include <fstream>

#include "sam3d/core/digest.hpp"
#include "sam3d/core/error.hpp"
#include "sam3d/io/rvf.hpp"

namespace sam3d {

VitSpec VitSpec::from_json(const nlohmann::json& j) {
  VitSpec s;
  s.embed_dim = j.value("embed_dim", s.embed_dim);
  s.depth = j.value("depth", s.depth);
  s.heads = j.value("heads", s.heads);
  s.mlp_ratio = j.value("mlp_ratio", s.mlp_ratio);
  s.window = j.value("window", s.window);
  s.global_blocks = j.value("global_blocks", s.global_blocks);
  s.pos_grid = j.value("pos_grid", s.pos_grid);
  s.use_rel_pos = j.value("use_rel_pos", s.use_rel_pos);
  return s;
}

nlohmann::json VitSpec::to_json() const {
  return {{"embed_dim", embed_dim}, {"depth", depth},         {"heads", heads},
          {"mlp_ratio", mlp_ratio}, {"window", window},       {"global_blocks", global_blocks},
          {"pos_grid", pos_grid},   {"use_rel_pos", use_rel_pos}};
}

namespace {

class TensorDir {
 public:
  explicit TensorDir(std::filesystem::path dir) : dir_(std::move(dir)), hash_() {}

  Tensor<float> get(const std::string& name, const Shape& expected) {
    const std::filesystem::path p = dir_ / (name + ".rvf");
    if (!std::filesystem::exists(p)) {
      throw IoError("pretrained checkpoint '" + dir_.string() + "' is missing tensor '" + name + "'");
    }
    Tensor<float> t = rvf_read_as<float>(p);
    if (t.shape() != expected) {
      throw ShapeError("tensor '" + name + "' has shape " + shape_str(t.shape()) + ", expected " +
                       shape_str(expected));
    }
    hash_.update(name);
    hash_.update_values(std::as_const(t).span());
    return t;
  }

  std::string digest() { return hash_.hex(); }

 private:
  std::filesystem::path dir_;
  Sha256 hash_;
};

vit::LayerNorm load_norm(TensorDir& dir, const std::string& prefix, std::size_t dim) {
  return {dir.get(prefix + ".weight", {dim}), dir.get(prefix + ".bias", {dim}), 1e-6f};
}

vit::Linear load_linear(TensorDir& dir, const std::string& prefix, std::size_t out, std::size_t in) {
  return vit::Linear::from_out_in(dir.get(prefix + ".weight", {out, in}), dir.get(prefix + ".bias", {out}));
}

}  // namespace

VitEncoder::VitEncoder(const EncoderConfig& cfg) : cfg_(cfg) {
  const std::filesystem::path& root = cfg.checkpoint_path;
  if (root.empty() || !std::filesystem::is_directory(root)) {
    throw IoError("pretrained encoder checkpoint directory '" + root.string() + "' does not exist");
  }
  if (std::filesystem::exists(root / "vit.json")) {
    std::ifstream in(root / "vit.json");
    spec_ = VitSpec::from_json(nlohmann::json::parse(in));
  }
  const std::size_t c = spec_.embed_dim;
  const std::size_t s = cfg.patch_stride;
  if (c % spec_.heads != 0) throw ValidationError("ViT embed_dim must divide evenly into heads");
  const std::size_t hd = c / spec_.heads;

  TensorDir dir(root);
  patch_proj_ = vit::Linear::from_out_in(dir.get("patch_embed.proj.weight", {c, 3, s, s}),
                                         dir.get("patch_embed.proj.bias", {c}));
  pos_embed_ = dir.get("pos_embed", {1, spec_.pos_grid, spec_.pos_grid, c}).reshaped({spec_.pos_grid, spec_.pos_grid, c});
  for (std::size_t i = 0; i < spec_.depth; ++i) {
    const std::string p = "blocks." + std::to_string(i);
    const bool global = std::find(spec_.global_blocks.begin(), spec_.global_blocks.end(), i) != spec_.global_blocks.end();
    vit::Block b;
    b.heads = spec_.heads;
    b.window = global ? 0 : spec_.window;
    b.norm1 = load_norm(dir, p + ".norm1", c);
    b.norm2 = load_norm(dir, p + ".norm2", c);
    b.qkv = load_linear(dir, p + ".attn.qkv", 3 * c, c);
    b.proj = load_linear(dir, p + ".attn.proj", c, c);
    b.fc1 = load_linear(dir, p + ".mlp.lin1", spec_.mlp_ratio * c, c);
    b.fc2 = load_linear(dir, p + ".mlp.lin2", c, spec_.mlp_ratio * c);
    b.use_rel_pos = spec_.use_rel_pos;
    if (b.use_rel_pos) {
      const std::size_t span = global ? spec_.pos_grid : spec_.window;
      b.rel_pos_h = dir.get(p + ".attn.rel_pos_h", {2 * span - 1, hd});
      b.rel_pos_w = dir.get(p + ".attn.rel_pos_w", {2 * span - 1, hd});
    }
    blocks_.push_back(std::move(b));
  }
  neck_conv1_ = dir.get("neck.0.weight", {kEmbedDim, c, 1, 1}).reshaped({kEmbedDim, c});
  neck_norm1_ = load_norm(dir, "neck.1", kEmbedDim);
  neck_conv2_ = dir.get("neck.2.weight", {kEmbedDim, kEmbedDim, 3, 3}).reshaped({kEmbedDim, kEmbedDim * 9});
  neck_norm2_ = load_norm(dir, "neck.3", kEmbedDim);

  digest_ = sha256_hex(cfg.digest() + spec_.to_json().dump() + dir.digest());
}

std::size_t VitEncoder::parameter_count() const {
  std::size_t n = patch_proj_.parameter_count() + pos_embed_.size() + neck_conv1_.size() + neck_conv2_.size() +
                  4 * kEmbedDim;
  for (const vit::Block& b : blocks_) n += b.parameter_count();
  return n;
}

Tensor<float> VitEncoder::encode_slices(const SliceBatch& slices) const {
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
  const std::size_t t = gh * gw;
  const Tensor<float> pos = vit::interpolate_position_embeddings(pos_embed_, gh, gw);
  const vit::Linear neck1 = vit::Linear::from_out_in(neck_conv1_, {});
  const vit::Linear neck2 = vit::Linear::from_out_in(neck_conv2_, {});

  Tensor<float> out(Shape{d, kEmbedDim, gh, gw});
  std::vector<float> image(3 * height * width);
  for (std::size_t z = 0; z < d; ++z) {
    const float* src = slices.data() + z * 3 * height * width;
    const auto [lo_it, hi_it] = std::minmax_element(src, src + 3 * height * width);
    const double lo = *lo_it;
    const double range = static_cast<double>(*hi_it) - lo;
    for (std::size_t ch = 0; ch < 3; ++ch) {
      for (std::size_t i = 0; i < height * width; ++i) {
        const double v = range > 0.0 ? (src[ch * height * width + i] - lo) / range * 255.0 : 0.0;
        image[ch * height * width + i] = static_cast<float>((v - cfg_.pixel_mean[ch]) / cfg_.pixel_std[ch]);
      }
    }
    Tensor<float> tokens = vit::patch_embed(image.data(), height, width, stride, patch_proj_);
    for (std::size_t i = 0; i < tokens.size(); ++i) tokens[i] += pos[i];
    for (const vit::Block& b : blocks_) vit::block_forward(b, tokens);

    std::vector<float> n1(t * kEmbedDim);
    neck1.forward(tokens.data(), t, n1.data());
    neck_norm1_.forward(n1.data(), t);
    std::vector<float> col(t * kEmbedDim * 9, 0.0f);
    for (std::size_t y = 0; y < gh; ++y) {
      for (std::size_t x = 0; x < gw; ++x) {
        float* row = col.data() + (y * gw + x) * kEmbedDim * 9;
        for (std::size_t ky = 0; ky < 3; ++ky) {
          for (std::size_t kx = 0; kx < 3; ++kx) {
            const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + kx) - 1;
            if (sy < 0 || sx < 0 || sy >= static_cast<std::ptrdiff_t>(gh) || sx >= static_cast<std::ptrdiff_t>(gw)) continue;
            const float* v = n1.data() + (static_cast<std::size_t>(sy) * gw + static_cast<std::size_t>(sx)) * kEmbedDim;
            for (std::size_t ch = 0; ch < kEmbedDim; ++ch) row[ch * 9 + ky * 3 + kx] = v[ch];
          }
        }
      }
    }
    std::vector<float> n2(t * kEmbedDim);
    neck2.forward(col.data(), t, n2.data());
    neck_norm2_.forward(n2.data(), t);
    for (std::size_t p = 0; p < t; ++p) {
      for (std::size_t ch = 0; ch < kEmbedDim; ++ch) out[(z * kEmbedDim + ch) * t + p] = n2[p * kEmbedDim + ch];
    }
  }
  return out;
}

}  // namespace sam3d

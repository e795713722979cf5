#pragma once

// Frozen vision-transformer building blocks shared by the toy and pretrained
// slice encoders. Token grids are stored channel-last: (h, w, C).

#include <cstddef>

#include "sam3d/core/tensor.hpp"

namespace sam3d::vit {

/// y = x W^T + b with the weight kept pre-transposed as (in, out).
struct Linear {
  Tensor<float> weight_t;
  Tensor<float> bias;  // empty means no bias

  /// From the conventional (out, in) layout.
  static Linear from_out_in(const Tensor<float>& weight, const Tensor<float>& bias);
  std::size_t in_features() const { return weight_t.dim(0); }
  std::size_t out_features() const { return weight_t.dim(1); }
  std::size_t parameter_count() const { return weight_t.size() + bias.size(); }
  void forward(const float* x, std::size_t rows, float* y) const;
};

struct LayerNorm {
  Tensor<float> gamma;
  Tensor<float> beta;
  float eps = 1e-6f;

  static LayerNorm identity(std::size_t dim);
  void forward(float* x, std::size_t rows) const;
};

struct Block {
  LayerNorm norm1;
  LayerNorm norm2;
  Linear qkv;
  Linear proj;
  Linear fc1;
  Linear fc2;
  std::size_t heads = 1;
  std::size_t window = 0;  // 0 = global attention
  bool use_rel_pos = false;
  Tensor<float> rel_pos_h;  // (L, head_dim)
  Tensor<float> rel_pos_w;

  std::size_t parameter_count() const;
};

/// Pre-norm block: x += attn(norm1(x)); x += mlp(norm2(x)). tokens is (h, w, C).
void block_forward(const Block& block, Tensor<float>& tokens);

/// Non-overlapping stride x stride patches of a (3, H, W) slice projected by
/// `proj` (in = 3 * stride * stride, ordered channel, row, column).
Tensor<float> patch_embed(const float* slice, std::size_t height, std::size_t width, std::size_t stride,
                          const Linear& proj);

/// Fixed 2D sin/cos encoding (h, w, C); C must be divisible by 4.
Tensor<float> sinusoidal_position_encoding(std::size_t h, std::size_t w, std::size_t channels);

/// Bilinear resize of a (h0, w0, C) grid to (h1, w1, C), half-pixel centres.
/// Returns an exact copy when the sizes already agree.
Tensor<float> interpolate_position_embeddings(const Tensor<float>& table, std::size_t h1, std::size_t w1);

/// Linear resize of an (L, C) table along L, half-pixel centres.
Tensor<float> resize_linear_1d(const Tensor<float>& table, std::size_t length);

/// Relative-position lookup (q_size, k_size, C) from a table of any length.
Tensor<float> relative_positions(std::size_t q_size, std::size_t k_size, const Tensor<float>& table);

}  // namespace sam3d::vit

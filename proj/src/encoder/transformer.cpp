#include "sam3d/encoder/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "sam3d/core/error.hpp"
#include "sam3d/kernels/kernels.hpp"

namespace sam3d::vit {

Linear Linear::from_out_in(const Tensor<float>& weight, const Tensor<float>& bias) {
  if (weight.rank() < 2) throw ShapeError("linear weight must be at least 2D");
  const std::size_t out = weight.dim(0);
  const std::size_t in = weight.size() / out;
  if (!bias.empty() && bias.size() != out) throw ShapeError("linear bias size does not match output features");
  Linear l;
  l.weight_t = Tensor<float>(Shape{in, out});
  kernels::transpose(out, in, weight.data(), l.weight_t.data());
  l.bias = bias.reshaped(Shape{bias.size()});
  return l;
}

void Linear::forward(const float* x, std::size_t rows, float* y) const {
  const std::size_t out = out_features();
  kernels::gemm(rows, out, in_features(), x, in_features(), weight_t.data(), out, y, out, false);
  if (!bias.empty()) {
    for (std::size_t r = 0; r < rows; ++r) {
      float* yr = y + r * out;
      for (std::size_t j = 0; j < out; ++j) yr[j] += bias[j];
    }
  }
}

LayerNorm LayerNorm::identity(std::size_t dim) { return {Tensor<float>(Shape{dim}, 1.0f), Tensor<float>(Shape{dim})}; }

void LayerNorm::forward(float* x, std::size_t rows) const {
  const std::size_t dim = gamma.size();
  for (std::size_t r = 0; r < rows; ++r) {
    float* v = x + r * dim;
    double mean = 0.0;
    for (std::size_t i = 0; i < dim; ++i) mean += v[i];
    mean /= static_cast<double>(dim);
    double var = 0.0;
    for (std::size_t i = 0; i < dim; ++i) var += (v[i] - mean) * (v[i] - mean);
    var /= static_cast<double>(dim);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < dim; ++i) v[i] = static_cast<float>((v[i] - mean) * inv) * gamma[i] + beta[i];
  }
}

std::size_t Block::parameter_count() const {
  return norm1.gamma.size() * 2 + norm2.gamma.size() * 2 + qkv.parameter_count() + proj.parameter_count() +
         fc1.parameter_count() + fc2.parameter_count() + rel_pos_h.size() + rel_pos_w.size();
}

Tensor<float> resize_linear_1d(const Tensor<float>& table, std::size_t length) {
  const std::size_t n = table.dim(0);
  const std::size_t c = table.size() / n;
  if (n == length) return table;
  Tensor<float> out(Shape{length, c});
  const double scale = static_cast<double>(n) / static_cast<double>(length);
  for (std::size_t o = 0; o < length; ++o) {
    const double src = std::max((static_cast<double>(o) + 0.5) * scale - 0.5, 0.0);
    const auto i0 = std::min(static_cast<std::size_t>(src), n - 1);
    const std::size_t i1 = std::min(i0 + 1, n - 1);
    const double f = src - static_cast<double>(i0);
    for (std::size_t k = 0; k < c; ++k) {
      out[o * c + k] = static_cast<float>(table[i0 * c + k] * (1.0 - f) + table[i1 * c + k] * f);
    }
  }
  return out;
}

Tensor<float> relative_positions(std::size_t q_size, std::size_t k_size, const Tensor<float>& table) {
  const std::size_t max_dist = 2 * std::max(q_size, k_size) - 1;
  const Tensor<float> resized = resize_linear_1d(table, max_dist);
  const std::size_t c = resized.size() / max_dist;
  const double q_ratio = std::max(static_cast<double>(k_size) / static_cast<double>(q_size), 1.0);
  const double k_ratio = std::max(static_cast<double>(q_size) / static_cast<double>(k_size), 1.0);
  Tensor<float> out(Shape{q_size, k_size, c});
  for (std::size_t i = 0; i < q_size; ++i) {
    for (std::size_t j = 0; j < k_size; ++j) {
      const double rel = static_cast<double>(i) * q_ratio - static_cast<double>(j) * k_ratio +
                         static_cast<double>(k_size - 1) * k_ratio;
      const auto idx = static_cast<std::size_t>(rel);
      std::copy_n(resized.data() + idx * c, c, out.data() + (i * k_size + j) * c);
    }
  }
  return out;
}

namespace {

void gelu(float* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = static_cast<float>(0.5 * x[i] * (1.0 + std::erf(x[i] / std::sqrt(2.0))));
  }
}

// Multi-head self-attention over a gh x gw token grid; x is (gh*gw, C) and is
// replaced by the projected attention output.
void attention(const Block& b, std::vector<float>& x, std::size_t gh, std::size_t gw) {
  const std::size_t t = gh * gw;
  const std::size_t c = b.proj.out_features();
  const std::size_t hd = c / b.heads;
  const float scale = 1.0f / std::sqrt(static_cast<float>(hd));

  std::vector<float> qkv(t * 3 * c);
  b.qkv.forward(x.data(), t, qkv.data());

  Tensor<float> rh, rw;
  if (b.use_rel_pos) {
    rh = relative_positions(gh, gh, b.rel_pos_h);
    rw = relative_positions(gw, gw, b.rel_pos_w);
  }

  std::vector<float> q(t * hd), kt(hd * t), v(t * hd), scores(t * t), head_out(t * hd), merged(t * c);
  for (std::size_t h = 0; h < b.heads; ++h) {
    for (std::size_t i = 0; i < t; ++i) {
      const float* row = qkv.data() + i * 3 * c;
      for (std::size_t d = 0; d < hd; ++d) {
        q[i * hd + d] = row[h * hd + d];
        kt[d * t + i] = row[c + h * hd + d];
        v[i * hd + d] = row[2 * c + h * hd + d];
      }
    }
    kernels::gemm(t, t, hd, q.data(), hd, kt.data(), t, scores.data(), t, false);
    for (float& s : scores) s *= scale;
    if (b.use_rel_pos) {
      // Decomposed relative position terms use the unscaled query.
      for (std::size_t qy = 0; qy < gh; ++qy) {
        for (std::size_t qx = 0; qx < gw; ++qx) {
          const float* qv = q.data() + (qy * gw + qx) * hd;
          float* srow = scores.data() + (qy * gw + qx) * t;
          for (std::size_t ky = 0; ky < gh; ++ky) {
            const float th = kernels::dot(hd, qv, rh.data() + (qy * gh + ky) * hd);
            for (std::size_t kx = 0; kx < gw; ++kx) srow[ky * gw + kx] += th;
          }
          for (std::size_t kx = 0; kx < gw; ++kx) {
            const float tw = kernels::dot(hd, qv, rw.data() + (qx * gw + kx) * hd);
            for (std::size_t ky = 0; ky < gh; ++ky) srow[ky * gw + kx] += tw;
          }
        }
      }
    }
    for (std::size_t i = 0; i < t; ++i) {
      float* srow = scores.data() + i * t;
      const float mx = *std::max_element(srow, srow + t);
      double sum = 0.0;
      for (std::size_t j = 0; j < t; ++j) {
        srow[j] = std::exp(srow[j] - mx);
        sum += srow[j];
      }
      const auto inv = static_cast<float>(1.0 / sum);
      for (std::size_t j = 0; j < t; ++j) srow[j] *= inv;
    }
    kernels::gemm(t, hd, t, scores.data(), t, v.data(), hd, head_out.data(), hd, false);
    for (std::size_t i = 0; i < t; ++i) std::copy_n(head_out.data() + i * hd, hd, merged.data() + i * c + h * hd);
  }
  b.proj.forward(merged.data(), t, x.data());
}

}  // namespace

void block_forward(const Block& b, Tensor<float>& tokens) {
  const std::size_t gh = tokens.dim(0);
  const std::size_t gw = tokens.dim(1);
  const std::size_t c = tokens.dim(2);
  const std::size_t t = gh * gw;

  std::vector<float> normed(tokens.vec());
  b.norm1.forward(normed.data(), t);

  if (b.window == 0) {
    attention(b, normed, gh, gw);
    for (std::size_t i = 0; i < t * c; ++i) tokens[i] += normed[i];
  } else {
    const std::size_t ws = b.window;
    const std::size_t ph = (gh + ws - 1) / ws * ws;
    const std::size_t pw = (gw + ws - 1) / ws * ws;
    std::vector<float> win(ws * ws * c);
    for (std::size_t wy = 0; wy < ph; wy += ws) {
      for (std::size_t wx = 0; wx < pw; wx += ws) {
        // Zero padding outside the grid, as in windowed ViT backbones.
        std::fill(win.begin(), win.end(), 0.0f);
        for (std::size_t y = 0; y < ws; ++y) {
          for (std::size_t x = 0; x < ws; ++x) {
            if (wy + y < gh && wx + x < gw) {
              std::copy_n(normed.data() + ((wy + y) * gw + wx + x) * c, c, win.data() + (y * ws + x) * c);
            }
          }
        }
        attention(b, win, ws, ws);
        for (std::size_t y = 0; y < ws; ++y) {
          for (std::size_t x = 0; x < ws; ++x) {
            if (wy + y < gh && wx + x < gw) {
              float* dst = tokens.data() + ((wy + y) * gw + wx + x) * c;
              const float* src = win.data() + (y * ws + x) * c;
              for (std::size_t k = 0; k < c; ++k) dst[k] += src[k];
            }
          }
        }
      }
    }
  }

  std::vector<float> h2(tokens.vec());
  b.norm2.forward(h2.data(), t);
  std::vector<float> hidden(t * b.fc1.out_features());
  b.fc1.forward(h2.data(), t, hidden.data());
  gelu(hidden.data(), hidden.size());
  b.fc2.forward(hidden.data(), t, h2.data());
  for (std::size_t i = 0; i < t * c; ++i) tokens[i] += h2[i];
}

Tensor<float> patch_embed(const float* slice, std::size_t height, std::size_t width, std::size_t stride,
                          const Linear& proj) {
  if (height % stride != 0 || width % stride != 0) {
    throw ShapeError("slice " + std::to_string(height) + "x" + std::to_string(width) +
                     " is not a multiple of the patch stride " + std::to_string(stride));
  }
  const std::size_t gh = height / stride;
  const std::size_t gw = width / stride;
  const std::size_t k = 3 * stride * stride;
  if (proj.in_features() != k) throw ShapeError("patch projection expects " + std::to_string(k) + " inputs");
  std::vector<float> patches(gh * gw * k);
  for (std::size_t py = 0; py < gh; ++py) {
    for (std::size_t px = 0; px < gw; ++px) {
      float* dst = patches.data() + (py * gw + px) * k;
      for (std::size_t ch = 0; ch < 3; ++ch) {
        for (std::size_t y = 0; y < stride; ++y) {
          const float* src = slice + (ch * height + py * stride + y) * width + px * stride;
          std::copy_n(src, stride, dst + (ch * stride + y) * stride);
        }
      }
    }
  }
  Tensor<float> out(Shape{gh, gw, proj.out_features()});
  proj.forward(patches.data(), gh * gw, out.data());
  return out;
}

Tensor<float> sinusoidal_position_encoding(std::size_t h, std::size_t w, std::size_t channels) {
  if (channels % 4 != 0) throw ShapeError("sinusoidal encoding needs channels divisible by 4");
  const std::size_t quarter = channels / 4;
  Tensor<float> pe(Shape{h, w, channels});
  for (std::size_t i = 0; i < quarter; ++i) {
    const double freq = 1.0 / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(quarter));
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        float* v = pe.data() + (y * w + x) * channels;
        v[i] = static_cast<float>(std::sin(static_cast<double>(y) * freq));
        v[quarter + i] = static_cast<float>(std::cos(static_cast<double>(y) * freq));
        v[2 * quarter + i] = static_cast<float>(std::sin(static_cast<double>(x) * freq));
        v[3 * quarter + i] = static_cast<float>(std::cos(static_cast<double>(x) * freq));
      }
    }
  }
  return pe;
}

Tensor<float> interpolate_position_embeddings(const Tensor<float>& table, std::size_t h1, std::size_t w1) {
  if (table.rank() != 3) throw ShapeError("position table must be (h, w, C)");
  const std::size_t h0 = table.dim(0);
  const std::size_t w0 = table.dim(1);
  const std::size_t c = table.dim(2);
  if (h0 == h1 && w0 == w1) return table;
  auto axis = [](std::size_t n_in, std::size_t n_out, std::size_t o) {
    const double src = std::max((static_cast<double>(o) + 0.5) * static_cast<double>(n_in) / n_out - 0.5, 0.0);
    const auto i0 = std::min(static_cast<std::size_t>(src), n_in - 1);
    return std::tuple{i0, std::min(i0 + 1, n_in - 1), src - static_cast<double>(i0)};
  };
  Tensor<float> out(Shape{h1, w1, c});
  for (std::size_t y = 0; y < h1; ++y) {
    const auto [y0, y1, fy] = axis(h0, h1, y);
    for (std::size_t x = 0; x < w1; ++x) {
      const auto [x0, x1, fx] = axis(w0, w1, x);
      const float* a = table.data() + (y0 * w0 + x0) * c;
      const float* b = table.data() + (y0 * w0 + x1) * c;
      const float* d = table.data() + (y1 * w0 + x0) * c;
      const float* e = table.data() + (y1 * w0 + x1) * c;
      float* o = out.data() + (y * w1 + x) * c;
      for (std::size_t k = 0; k < c; ++k) {
        const double top = a[k] * (1.0 - fx) + b[k] * fx;
        const double bot = d[k] * (1.0 - fx) + e[k] * fx;
        o[k] = static_cast<float>(top * (1.0 - fy) + bot * fy);
      }
    }
  }
  return out;
}

}  // namespace sam3d::vit

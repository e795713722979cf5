#include "sam3d/decoder/layers.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sam3d/kernels/kernels.hpp"

namespace sam3d::nn {
namespace {

struct Geometry {
  std::size_t c, d, h, w;
  std::size_t voxels() const { return d * h * w; }
};

template <typename T>
Geometry geometry(const Tensor<T>& x, const char* what) {
  if (x.rank() != 4) {
    throw ShapeError(std::string(what) + ": expected (C, D, H, W), got " + shape_str(x.shape()));
  }
  return {x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
}

// Column matrix for the (d, h) rows [r0, r1): entry
// (ci * k^3 + kd * k^2 + kh * k + kw, v) holds x shifted by that tap, zero
// outside the volume. The chunk has (r1 - r0) * W columns.
template <typename T>
void im2col(const T* x, const Geometry& g, std::size_t k, std::size_t r0, std::size_t r1, T* col) {
  const long pad = static_cast<long>(k / 2);
  const std::size_t V = g.voxels();
  const std::size_t VC = (r1 - r0) * g.w;
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    const T* xc = x + ci * V;
    for (std::size_t kd = 0; kd < k; ++kd) {
      for (std::size_t kh = 0; kh < k; ++kh) {
        for (std::size_t kw = 0; kw < k; ++kw, ++row) {
          T* out = col + row * VC;
          const long od = static_cast<long>(kd) - pad;
          const long oh = static_cast<long>(kh) - pad;
          const long ow = static_cast<long>(kw) - pad;
          const std::size_t w0 = ow < 0 ? static_cast<std::size_t>(-ow) : 0;
          const std::size_t w1 = ow > 0 ? g.w - std::min(g.w, static_cast<std::size_t>(ow)) : g.w;
          for (std::size_t r = r0; r < r1; ++r) {
            const long sd = static_cast<long>(r / g.h) + od;
            const long sh = static_cast<long>(r % g.h) + oh;
            T* o = out + (r - r0) * g.w;
            if (sd < 0 || sd >= static_cast<long>(g.d) || sh < 0 || sh >= static_cast<long>(g.h) || w0 >= w1) {
              std::fill(o, o + g.w, T{0});
              continue;
            }
            const T* src = xc + (static_cast<std::size_t>(sd) * g.h + static_cast<std::size_t>(sh)) * g.w;
            std::fill(o, o + w0, T{0});
            for (std::size_t w = w0; w < w1; ++w) o[w] = src[static_cast<long>(w) + ow];
            std::fill(o + w1, o + g.w, T{0});
          }
        }
      }
    }
  }
}

// Adds a column chunk back onto x (the adjoint of im2col).
template <typename T>
void col2im_add(const T* col, const Geometry& g, std::size_t k, std::size_t r0, std::size_t r1, T* x) {
  const long pad = static_cast<long>(k / 2);
  const std::size_t V = g.voxels();
  const std::size_t VC = (r1 - r0) * g.w;
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    T* xc = x + ci * V;
    for (std::size_t kd = 0; kd < k; ++kd) {
      for (std::size_t kh = 0; kh < k; ++kh) {
        for (std::size_t kw = 0; kw < k; ++kw, ++row) {
          const T* in = col + row * VC;
          const long od = static_cast<long>(kd) - pad;
          const long oh = static_cast<long>(kh) - pad;
          const long ow = static_cast<long>(kw) - pad;
          const std::size_t w0 = ow < 0 ? static_cast<std::size_t>(-ow) : 0;
          const std::size_t w1 = ow > 0 ? g.w - std::min(g.w, static_cast<std::size_t>(ow)) : g.w;
          if (w0 >= w1) continue;
          for (std::size_t r = r0; r < r1; ++r) {
            const long sd = static_cast<long>(r / g.h) + od;
            const long sh = static_cast<long>(r % g.h) + oh;
            if (sd < 0 || sd >= static_cast<long>(g.d) || sh < 0 || sh >= static_cast<long>(g.h)) continue;
            const T* i = in + (r - r0) * g.w;
            T* dst = xc + (static_cast<std::size_t>(sd) * g.h + static_cast<std::size_t>(sh)) * g.w;
            for (std::size_t w = w0; w < w1; ++w) dst[static_cast<long>(w) + ow] += i[w];
          }
        }
      }
    }
  }
}

// Rows of W voxels per chunk so that one column chunk stays cache-resident.
template <typename T>
std::size_t chunk_rows(const Geometry& g, std::size_t K) {
  constexpr std::size_t kBudget = std::size_t{1} << 20;
  constexpr std::size_t kMinColumns = 512;
  const std::size_t per_row = K * g.w * sizeof(T);
  const std::size_t rows = std::max(kBudget / std::max<std::size_t>(per_row, 1), (kMinColumns + g.w - 1) / g.w);
  return std::clamp<std::size_t>(rows, 1, g.d * g.h);
}

template <typename T>
std::size_t kernel_size(const Tensor<T>& weight, std::size_t cin) {
  if (weight.rank() != 5 || weight.dim(2) != weight.dim(3) || weight.dim(3) != weight.dim(4) ||
      weight.dim(2) % 2 == 0) {
    throw ShapeError("conv3d: weight must be (Cout, Cin, k, k, k) with odd k, got " + shape_str(weight.shape()));
  }
  if (weight.dim(1) != cin) {
    throw ShapeError("conv3d: input has " + std::to_string(cin) + " channels, weight expects " +
                     std::to_string(weight.dim(1)));
  }
  return weight.dim(2);
}

}  // namespace

template <typename T>
Tensor<T> conv3d_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  const Geometry g = geometry(x, "conv3d");
  const std::size_t k = kernel_size(weight, g.c);
  const std::size_t cout = weight.dim(0);
  const std::size_t V = g.voxels();
  const std::size_t K = g.c * k * k * k;
  if (bias.size() != cout) throw ShapeError("conv3d: bias size mismatch");

  Tensor<T> y({cout, g.d, g.h, g.w});
  for (std::size_t co = 0; co < cout; ++co) std::fill(y.data() + co * V, y.data() + (co + 1) * V, bias[co]);
  if (k == 1) {
    kernels::gemm(cout, V, K, weight.data(), K, x.data(), V, y.data(), V, true);
    return y;
  }
  const std::size_t rows = g.d * g.h;
  const std::size_t step = chunk_rows<T>(g, K);
  std::vector<T> col(K * step * g.w);
  for (std::size_t r0 = 0; r0 < rows; r0 += step) {
    const std::size_t r1 = std::min(rows, r0 + step);
    const std::size_t VC = (r1 - r0) * g.w;
    im2col(x.data(), g, k, r0, r1, col.data());
    kernels::gemm(cout, VC, K, weight.data(), K, col.data(), VC, y.data() + r0 * g.w, V, true);
  }
  return y;
}

template <typename T>
void conv3d_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& dy, Tensor<T>* dx,
                     Tensor<T>& dweight, Tensor<T>& dbias) {
  const Geometry g = geometry(x, "conv3d");
  const std::size_t k = kernel_size(weight, g.c);
  const std::size_t cout = weight.dim(0);
  const std::size_t V = g.voxels();
  const std::size_t K = g.c * k * k * k;
  if (dy.shape() != Shape{cout, g.d, g.h, g.w}) throw ShapeError("conv3d: output gradient shape mismatch");

  for (std::size_t co = 0; co < cout; ++co) {
    const T* row = dy.data() + co * V;
    T s{0};
    for (std::size_t v = 0; v < V; ++v) s += row[v];
    dbias[co] += s;
  }

  std::vector<T> wt;
  if (dx != nullptr) {
    wt.resize(K * cout);
    kernels::transpose(cout, K, weight.data(), wt.data());
    *dx = Tensor<T>(x.shape());
  }
  if (k == 1) {
    std::vector<T> xt(V * K);
    kernels::transpose(K, V, x.data(), xt.data());
    kernels::gemm(cout, K, V, dy.data(), V, xt.data(), K, dweight.data(), K, true);
    if (dx != nullptr) kernels::gemm(K, V, cout, wt.data(), cout, dy.data(), V, dx->data(), V, false);
    return;
  }
  // dW^T (K x Cout) accumulates col * dy^T chunk by chunk; transposing the
  // narrow dy chunk is far cheaper than transposing the column matrix.
  const std::size_t rows = g.d * g.h;
  const std::size_t step = chunk_rows<T>(g, K);
  std::vector<T> col(K * step * g.w), dyt(step * g.w * cout), dwt(K * cout, T{0});
  for (std::size_t r0 = 0; r0 < rows; r0 += step) {
    const std::size_t r1 = std::min(rows, r0 + step);
    const std::size_t VC = (r1 - r0) * g.w;
    im2col(x.data(), g, k, r0, r1, col.data());
    for (std::size_t co = 0; co < cout; ++co) {
      const T* src = dy.data() + co * V + r0 * g.w;
      for (std::size_t v = 0; v < VC; ++v) dyt[v * cout + co] = src[v];
    }
    kernels::gemm(K, cout, VC, col.data(), VC, dyt.data(), cout, dwt.data(), cout, true);
    if (dx != nullptr) {
      kernels::gemm(K, VC, cout, wt.data(), cout, dy.data() + r0 * g.w, V, col.data(), VC, false);
      col2im_add(col.data(), g, k, r0, r1, dx->data());
    }
  }
  for (std::size_t co = 0; co < cout; ++co) {
    T* dst = dweight.data() + co * K;
    for (std::size_t i = 0; i < K; ++i) dst[i] += dwt[i * cout + co];
  }
}

template <typename T>
Tensor<T> instance_norm_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps,
                                NormCache<T>* cache) {
  const Geometry g = geometry(x, "instance_norm");
  if (gamma.size() != g.c || beta.size() != g.c) throw ShapeError("instance_norm: affine size mismatch");
  const std::size_t V = g.voxels();
  Tensor<T> y(x.shape());
  if (cache) {
    cache->xhat = Tensor<T>(x.shape());
    cache->inv_std.assign(g.c, T{0});
  }
  for (std::size_t c = 0; c < g.c; ++c) {
    const T* xc = x.data() + c * V;
    double mean = 0.0;
    for (std::size_t v = 0; v < V; ++v) mean += xc[v];
    mean /= static_cast<double>(V);
    double var = 0.0;
    for (std::size_t v = 0; v < V; ++v) {
      const double dlt = xc[v] - mean;
      var += dlt * dlt;
    }
    var /= static_cast<double>(V);
    const T inv = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
    const T m = static_cast<T>(mean);
    T* yc = y.data() + c * V;
    T* hc = cache ? cache->xhat.data() + c * V : nullptr;
    for (std::size_t v = 0; v < V; ++v) {
      const T xh = (xc[v] - m) * inv;
      if (hc) hc[v] = xh;
      yc[v] = gamma[c] * xh + beta[c];
    }
    if (cache) cache->inv_std[c] = inv;
  }
  return y;
}

template <typename T>
Tensor<T> instance_norm_backward(const NormCache<T>& cache, const Tensor<T>& gamma, const Tensor<T>& dy,
                                 Tensor<T>& dgamma, Tensor<T>& dbeta) {
  const Geometry g = geometry(dy, "instance_norm");
  const std::size_t V = g.voxels();
  Tensor<T> dx(dy.shape());
  for (std::size_t c = 0; c < g.c; ++c) {
    const T* dyc = dy.data() + c * V;
    const T* hc = cache.xhat.data() + c * V;
    double sum_dy = 0.0, sum_dy_xh = 0.0;
    for (std::size_t v = 0; v < V; ++v) {
      sum_dy += dyc[v];
      sum_dy_xh += static_cast<double>(dyc[v]) * hc[v];
    }
    dgamma[c] += static_cast<T>(sum_dy_xh);
    dbeta[c] += static_cast<T>(sum_dy);
    const T scale = gamma[c] * cache.inv_std[c];
    const T mean_dy = static_cast<T>(sum_dy / static_cast<double>(V));
    const T mean_dy_xh = static_cast<T>(sum_dy_xh / static_cast<double>(V));
    T* dxc = dx.data() + c * V;
    for (std::size_t v = 0; v < V; ++v) dxc[v] = scale * (dyc[v] - mean_dy - hc[v] * mean_dy_xh);
  }
  return dx;
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T{0} ? x[i] : slope * x[i];
  return y;
}

template <typename T>
Tensor<T> leaky_relu_backward(const Tensor<T>& x, const Tensor<T>& dy, T slope) {
  Tensor<T> dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > T{0} ? dy[i] : slope * dy[i];
  return dx;
}

namespace {

// Source taps for doubling a length-n axis with half-pixel centres.
struct Taps {
  std::vector<std::size_t> i0, i1;
  std::vector<double> w0, w1;
};

Taps doubling_taps(std::size_t n) {
  Taps t;
  const std::size_t m = 2 * n;
  t.i0.resize(m);
  t.i1.resize(m);
  t.w0.resize(m);
  t.w1.resize(m);
  for (std::size_t o = 0; o < m; ++o) {
    double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
    if (src < 0.0) src = 0.0;
    std::size_t i0 = static_cast<std::size_t>(src);
    if (i0 > n - 1) i0 = n - 1;
    const std::size_t i1 = std::min(i0 + 1, n - 1);
    const double l1 = src - static_cast<double>(i0);
    t.i0[o] = i0;
    t.i1[o] = i1;
    t.w0[o] = 1.0 - l1;
    t.w1[o] = l1;
  }
  return t;
}

}  // namespace

template <typename T>
Tensor<T> upsample_inplane_forward(const Tensor<T>& x) {
  const Geometry g = geometry(x, "upsample");
  const std::size_t H2 = 2 * g.h, W2 = 2 * g.w;
  const Taps th = doubling_taps(g.h), tw = doubling_taps(g.w);
  Tensor<T> y({g.c, g.d, H2, W2});
  std::vector<T> rowbuf(g.h * W2);
  for (std::size_t s = 0; s < g.c * g.d; ++s) {
    const T* src = x.data() + s * g.h * g.w;
    for (std::size_t h = 0; h < g.h; ++h) {
      const T* r = src + h * g.w;
      T* o = rowbuf.data() + h * W2;
      for (std::size_t w = 0; w < W2; ++w) {
        o[w] = static_cast<T>(tw.w0[w]) * r[tw.i0[w]] + static_cast<T>(tw.w1[w]) * r[tw.i1[w]];
      }
    }
    T* dst = y.data() + s * H2 * W2;
    for (std::size_t h = 0; h < H2; ++h) {
      const T* a = rowbuf.data() + th.i0[h] * W2;
      const T* b = rowbuf.data() + th.i1[h] * W2;
      const T wa = static_cast<T>(th.w0[h]), wb = static_cast<T>(th.w1[h]);
      T* o = dst + h * W2;
      for (std::size_t w = 0; w < W2; ++w) o[w] = wa * a[w] + wb * b[w];
    }
  }
  return y;
}

template <typename T>
Tensor<T> upsample_inplane_backward(const Tensor<T>& dy) {
  const Geometry g2 = geometry(dy, "upsample");
  if (g2.h % 2 || g2.w % 2) throw ShapeError("upsample: gradient has odd in-plane size");
  const std::size_t H = g2.h / 2, W = g2.w / 2;
  const Taps th = doubling_taps(H), tw = doubling_taps(W);
  Tensor<T> dx({g2.c, g2.d, H, W});
  std::vector<T> rowbuf(H * g2.w);
  for (std::size_t s = 0; s < g2.c * g2.d; ++s) {
    const T* src = dy.data() + s * g2.h * g2.w;
    std::fill(rowbuf.begin(), rowbuf.end(), T{0});
    for (std::size_t h = 0; h < g2.h; ++h) {
      const T* r = src + h * g2.w;
      T* a = rowbuf.data() + th.i0[h] * g2.w;
      T* b = rowbuf.data() + th.i1[h] * g2.w;
      const T wa = static_cast<T>(th.w0[h]), wb = static_cast<T>(th.w1[h]);
      for (std::size_t w = 0; w < g2.w; ++w) {
        a[w] += wa * r[w];
        b[w] += wb * r[w];
      }
    }
    T* dst = dx.data() + s * H * W;
    for (std::size_t h = 0; h < H; ++h) {
      const T* r = rowbuf.data() + h * g2.w;
      T* o = dst + h * W;
      for (std::size_t w = 0; w < g2.w; ++w) {
        o[tw.i0[w]] += static_cast<T>(tw.w0[w]) * r[w];
        o[tw.i1[w]] += static_cast<T>(tw.w1[w]) * r[w];
      }
    }
  }
  return dx;
}

#define SAM3D_INSTANTIATE_LAYERS(T)                                                                          \
  template Tensor<T> conv3d_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                   \
  template void conv3d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>*, Tensor<T>&, \
                                Tensor<T>&);                                                                 \
  template Tensor<T> instance_norm_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T,          \
                                           NormCache<T>*);                                                   \
  template Tensor<T> instance_norm_backward(const NormCache<T>&, const Tensor<T>&, const Tensor<T>&,         \
                                            Tensor<T>&, Tensor<T>&);                                         \
  template Tensor<T> leaky_relu(const Tensor<T>&, T);                                                        \
  template Tensor<T> leaky_relu_backward(const Tensor<T>&, const Tensor<T>&, T);                             \
  template Tensor<T> upsample_inplane_forward(const Tensor<T>&);                                             \
  template Tensor<T> upsample_inplane_backward(const Tensor<T>&);

SAM3D_INSTANTIATE_LAYERS(float)
SAM3D_INSTANTIATE_LAYERS(double)

}  // namespace sam3d::nn

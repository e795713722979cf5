#include "sam3d/infer/inference.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sam3d/core/error.hpp"
#include "sam3d/io/volume_ops.hpp"

namespace sam3d {

WindowGrid compute_window_grid(const Extent3& shape, const Extent3& window, double overlap) {
  if (!(overlap >= 0.0 && overlap < 1.0)) throw ValidationError("window overlap must be in [0, 1)");
  WindowGrid g{window, {}, overlap, {}};
  std::array<std::vector<std::size_t>, 3> axes;
  for (int a = 0; a < 3; ++a) {
    if (window[a] == 0) throw ValidationError("window extent must be positive");
    const std::size_t n = std::max(shape[a], window[a]);
    g.shape[a] = n;
    const auto stride = static_cast<std::size_t>(
        std::max(1.0, std::ceil(static_cast<double>(window[a]) * (1.0 - overlap) - 1e-12)));
    const std::size_t last = n - window[a];
    for (std::size_t o = 0;; o += stride) {
      const std::size_t c = std::min(o, last);
      if (axes[a].empty() || axes[a].back() != c) axes[a].push_back(c);
      if (c == last) break;
    }
  }
  for (std::size_t d : axes[0]) {
    for (std::size_t h : axes[1]) {
      for (std::size_t w : axes[2]) g.origins.push_back({d, h, w});
    }
  }
  return g;
}

Tensor<double> gaussian_importance_map(const Extent3& window) {
  std::array<std::vector<double>, 3> f;
  for (int a = 0; a < 3; ++a) {
    const std::size_t n = window[a];
    if (n == 0) throw ValidationError("window extent must be positive");
    const double centre = (static_cast<double>(n) - 1.0) / 2.0;
    const double sigma = static_cast<double>(n) / 8.0;
    f[a].resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double x = (static_cast<double>(i) - centre) / sigma;
      f[a][i] = std::exp(-0.5 * x * x);
    }
  }
  Tensor<double> m({window[0], window[1], window[2]});
  double peak = 0.0;
  for (std::size_t d = 0; d < window[0]; ++d) {
    for (std::size_t h = 0; h < window[1]; ++h) {
      for (std::size_t w = 0; w < window[2]; ++w) {
        const double v = f[0][d] * f[1][h] * f[2][w];
        m.at(d, h, w) = v;
        peak = std::max(peak, v);
      }
    }
  }
  for (double& v : m.vec()) v = std::max(v / peak, 1e-4);
  return m;
}

Tensor<float> sliding_window_predict(const Volume& vol, const SliceEncoder& encoder, const Decoder<float>& decoder,
                                     const InferenceConfig& cfg) {
  vol.validate();
  const Extent3 ext = vol.extent();
  Extent3 window = cfg.window;
  if (window == Extent3{0, 0, 0}) {
    for (int a = 0; a < 3; ++a) window[a] = ext[a];
    for (int a = 1; a < 3; ++a) window[a] = (window[a] + kPatchStride - 1) / kPatchStride * kPatchStride;
  }
  if (window[1] % kPatchStride || window[2] % kPatchStride) {
    throw ValidationError("inference window in-plane size must be a multiple of 16, got " + extent_str(window));
  }
  const std::size_t N = decoder.config().num_classes;

  // Pad small axes symmetrically by edge replication, then crop back at the end.
  Extent3 target;
  for (int a = 0; a < 3; ++a) target[a] = std::max(ext[a], window[a]);
  const auto [before, after] = padding_for(ext, target);
  Volume padded = vol;
  padded.data = pad_edge(vol.data, before, after);
  const Extent3 pext = padded.extent();

  const WindowGrid grid = compute_window_grid(pext, window, cfg.overlap);
  const Tensor<double> gauss = gaussian_importance_map(window);
  const std::size_t PV = pext[0] * pext[1] * pext[2];
  std::vector<double> acc(N * PV, 0.0), wsum(PV, 0.0);

  for (const Extent3& o : grid.origins) {
    const Volume win{crop(padded.data, o, window), padded.spacing, padded.origin};
    const EmbeddingVolume emb = encode_volume(win, encoder);
    const DecoderOutputs<float> out = decoder.forward(emb, nullptr, false);
    const Tensor<float>& z = out.logits[0];
    const std::size_t WV = window[0] * window[1] * window[2];
    std::vector<double> prob(N);
    for (std::size_t d = 0; d < window[0]; ++d) {
      for (std::size_t h = 0; h < window[1]; ++h) {
        for (std::size_t w = 0; w < window[2]; ++w) {
          const std::size_t k = (d * window[1] + h) * window[2] + w;
          double mx = -INFINITY;
          for (std::size_t c = 0; c < N; ++c) mx = std::max(mx, static_cast<double>(z[c * WV + k]));
          double s = 0.0;
          for (std::size_t c = 0; c < N; ++c) s += prob[c] = std::exp(static_cast<double>(z[c * WV + k]) - mx);
          const double g = gauss[k];
          const std::size_t pk = ((o[0] + d) * pext[1] + o[1] + h) * pext[2] + o[2] + w;
          for (std::size_t c = 0; c < N; ++c) acc[c * PV + pk] += g * prob[c] / s;
          wsum[pk] += g;
        }
      }
    }
  }

  Tensor<float> probs({N, ext[0], ext[1], ext[2]});
  const std::size_t V = ext[0] * ext[1] * ext[2];
  for (std::size_t d = 0; d < ext[0]; ++d) {
    for (std::size_t h = 0; h < ext[1]; ++h) {
      for (std::size_t w = 0; w < ext[2]; ++w) {
        const std::size_t pk = ((d + before[0]) * pext[1] + h + before[1]) * pext[2] + w + before[2];
        if (!(wsum[pk] > 0.0)) {
          throw Error("inference: voxel (" + std::to_string(d) + ", " + std::to_string(h) + ", " +
                      std::to_string(w) + ") not covered by any window");
        }
        const std::size_t k = (d * ext[1] + h) * ext[2] + w;
        for (std::size_t c = 0; c < N; ++c) probs[c * V + k] = static_cast<float>(acc[c * PV + pk] / wsum[pk]);
      }
    }
  }
  return probs;
}

LabelVolume argmax_segmentation(const Tensor<float>& probs) {
  if (probs.rank() != 4) throw ShapeError("argmax: expected (N, D, H, W), got " + shape_str(probs.shape()));
  const std::size_t N = probs.dim(0);
  if (N < 2 || N > 256) throw ValidationError("argmax: class count must be in [2, 256]");
  const std::size_t V = probs.size() / N;
  LabelVolume out{Tensor<std::uint8_t>({probs.dim(1), probs.dim(2), probs.dim(3)}), static_cast<int>(N)};
  for (std::size_t k = 0; k < V; ++k) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < N; ++c) {
      if (probs[c * V + k] > probs[best * V + k]) best = c;
    }
    out.labels[k] = static_cast<std::uint8_t>(best);
  }
  return out;
}

}  // namespace sam3d

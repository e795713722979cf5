#include "sam3d/io/volume_ops.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "sam3d/core/error.hpp"
#include "sam3d/core/rng.hpp"
#include "sam3d/core/stats.hpp"

namespace sam3d {

void Volume::validate() const {
  if (data.rank() != 4) throw ShapeError("volume data must be 4D (M, D, H, W), got " + shape_str(data.shape()));
  for (std::size_t i = 0; i < 4; ++i) {
    if (data.dim(i) == 0) throw ShapeError("volume has an empty axis: " + shape_str(data.shape()));
  }
  for (double s : spacing) {
    if (!(s > 0.0) || !std::isfinite(s)) throw ValidationError("volume spacing must be positive and finite");
  }
}

void LabelVolume::validate() const {
  if (labels.rank() != 3) throw ShapeError("label volume must be 3D (D, H, W), got " + shape_str(labels.shape()));
  if (num_classes < 2 || num_classes > 256) throw ValidationError("num_classes must be in [2, 256]");
  for (std::uint8_t v : labels.vec()) {
    if (v >= num_classes) {
      throw ValidationError("label value " + std::to_string(v) + " is not below num_classes " +
                            std::to_string(num_classes));
    }
  }
}

namespace {

void zscore_in_place(std::span<float> v) {
  double sum = 0.0;
  for (float x : v) sum += x;
  const double mean = sum / static_cast<double>(v.size());
  double sq = 0.0;
  for (float x : v) sq += (x - mean) * (x - mean);
  const double sd = std::max(std::sqrt(sq / static_cast<double>(v.size())), 1e-8);
  for (float& x : v) x = static_cast<float>((x - mean) / sd);
}

}  // namespace

Volume normalize_intensity(const Volume& vol, const NormalizeConfig& cfg) {
  vol.validate();
  Volume out = vol;
  const std::size_t n = vol.voxels();
  for (std::size_t m = 0; m < vol.modalities(); ++m) {
    std::span<float> chan(out.data.data() + m * n, n);
    for (float x : chan) {
      if (!std::isfinite(x)) throw ValidationError("cannot normalize a volume containing NaN/Inf");
    }
    if (cfg.scheme == NormScheme::kClipZScore) {
      const float lo = *std::min_element(chan.begin(), chan.end());
      std::vector<double> fg;
      fg.reserve(n);
      for (float x : chan) {
        if (x > lo) fg.push_back(x);
      }
      if (fg.empty()) fg.assign(chan.begin(), chan.end());
      std::sort(fg.begin(), fg.end());
      const double clip_lo = percentile_sorted(fg, cfg.p_low);
      const double clip_hi = percentile_sorted(fg, cfg.p_high);
      for (float& x : chan) x = static_cast<float>(std::clamp(static_cast<double>(x), clip_lo, clip_hi));
    }
    zscore_in_place(chan);
  }
  return out;
}

template <typename T>
Tensor<T> pad_edge(const Tensor<T>& t, const Extent3& before, const Extent3& after) {
  const std::size_t r = t.rank();
  if (r < 3) throw ShapeError("pad_edge needs at least three axes");
  const Extent3 in = extent_of(t.shape());
  const Extent3 out_e{in[0] + before[0] + after[0], in[1] + before[1] + after[1], in[2] + before[2] + after[2]};
  Shape out_shape = t.shape();
  for (int a = 0; a < 3; ++a) out_shape[r - 3 + a] = out_e[a];
  Tensor<T> out(out_shape);
  const std::size_t lead = t.size() / (in[0] * in[1] * in[2]);
  auto src_index = [](std::size_t o, std::size_t b, std::size_t n) {
    const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(o) - static_cast<std::ptrdiff_t>(b);
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(s, 0, static_cast<std::ptrdiff_t>(n) - 1));
  };
  for (std::size_t l = 0; l < lead; ++l) {
    const T* src = t.data() + l * in[0] * in[1] * in[2];
    T* dst = out.data() + l * out_e[0] * out_e[1] * out_e[2];
    for (std::size_t d = 0; d < out_e[0]; ++d) {
      const std::size_t sd = src_index(d, before[0], in[0]);
      for (std::size_t h = 0; h < out_e[1]; ++h) {
        const std::size_t sh = src_index(h, before[1], in[1]);
        const T* srow = src + (sd * in[1] + sh) * in[2];
        T* drow = dst + (d * out_e[1] + h) * out_e[2];
        for (std::size_t w = 0; w < out_e[2]; ++w) drow[w] = srow[src_index(w, before[2], in[2])];
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> crop(const Tensor<T>& t, const Extent3& origin, const Extent3& size) {
  const std::size_t r = t.rank();
  const Extent3 in = extent_of(t.shape());
  for (int a = 0; a < 3; ++a) {
    if (origin[a] + size[a] > in[a]) {
      throw ShapeError("crop box " + extent_str(origin) + "+" + extent_str(size) + " exceeds " + extent_str(in));
    }
  }
  Shape out_shape = t.shape();
  for (int a = 0; a < 3; ++a) out_shape[r - 3 + a] = size[a];
  Tensor<T> out(out_shape);
  const std::size_t lead = t.size() / (in[0] * in[1] * in[2]);
  for (std::size_t l = 0; l < lead; ++l) {
    const T* src = t.data() + l * in[0] * in[1] * in[2];
    T* dst = out.data() + l * size[0] * size[1] * size[2];
    for (std::size_t d = 0; d < size[0]; ++d) {
      for (std::size_t h = 0; h < size[1]; ++h) {
        const T* srow = src + ((origin[0] + d) * in[1] + origin[1] + h) * in[2] + origin[2];
        std::copy(srow, srow + size[2], dst + (d * size[1] + h) * size[2]);
      }
    }
  }
  return out;
}

std::pair<Extent3, Extent3> padding_for(const Extent3& extent, const Extent3& target) {
  Extent3 before{}, after{};
  for (int a = 0; a < 3; ++a) {
    if (extent[a] < target[a]) {
      const std::size_t total = target[a] - extent[a];
      before[a] = total / 2;
      after[a] = total - before[a];
    }
  }
  return {before, after};
}

TrainingPatch sample_training_patch(const Volume& vol, const LabelVolume& lab, const Extent3& patch,
                                    bool force_foreground, std::uint64_t seed) {
  vol.validate();
  if (lab.extent() != vol.extent()) {
    throw ShapeError("label extent " + extent_str(lab.extent()) + " differs from image " + extent_str(vol.extent()));
  }
  for (std::size_t p : patch) {
    if (p == 0) throw ShapeError("patch size must be positive");
  }
  const auto [before, after] = padding_for(vol.extent(), patch);
  const bool padded = before != Extent3{} || after != Extent3{};
  const Tensor<float> image = padded ? pad_edge(vol.data, before, after) : vol.data;
  const Tensor<std::uint8_t> labels = padded ? pad_edge(lab.labels, before, after) : lab.labels;
  const Extent3 ext = extent_of(labels.shape());

  Rng rng(seed);
  Extent3 origin{};
  bool placed = false;
  if (force_foreground) {
    std::vector<std::size_t> fg;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] != 0) fg.push_back(i);
    }
    if (!fg.empty()) {
      const std::size_t flat = fg[rng.below(fg.size())];
      const Extent3 voxel{flat / (ext[1] * ext[2]), (flat / ext[2]) % ext[1], flat % ext[2]};
      for (int a = 0; a < 3; ++a) {
        const std::size_t lo = voxel[a] + 1 >= patch[a] ? voxel[a] + 1 - patch[a] : 0;
        const std::size_t hi = std::min(voxel[a], ext[a] - patch[a]);
        origin[a] = lo + rng.below(hi - lo + 1);
      }
      placed = true;
    }
  }
  if (!placed) {
    for (int a = 0; a < 3; ++a) origin[a] = rng.below(ext[a] - patch[a] + 1);
  }

  TrainingPatch out;
  out.origin = origin;
  out.image.data = crop(image, origin, patch);
  out.image.spacing = vol.spacing;
  out.image.origin = vol.origin;
  out.labels.labels = crop(labels, origin, patch);
  out.labels.num_classes = lab.num_classes;
  return out;
}

LabelVolume downsample_label_volume(const LabelVolume& lab, const Extent3& factor) {
  const Extent3 in = lab.extent();
  Extent3 out_e{};
  for (int a = 0; a < 3; ++a) {
    if (factor[a] == 0 || in[a] % factor[a] != 0) {
      throw ShapeError("label extent " + extent_str(in) + " is not divisible by factor " + extent_str(factor));
    }
    out_e[a] = in[a] / factor[a];
  }
  LabelVolume out;
  out.num_classes = lab.num_classes;
  out.labels = Tensor<std::uint8_t>(Shape{out_e[0], out_e[1], out_e[2]});
  for (std::size_t d = 0; d < out_e[0]; ++d) {
    for (std::size_t h = 0; h < out_e[1]; ++h) {
      for (std::size_t w = 0; w < out_e[2]; ++w) {
        out.labels.at(d, h, w) = lab.labels.at(d * factor[0], h * factor[1], w * factor[2]);
      }
    }
  }
  return out;
}

template Tensor<float> pad_edge<float>(const Tensor<float>&, const Extent3&, const Extent3&);
template Tensor<std::uint8_t> pad_edge<std::uint8_t>(const Tensor<std::uint8_t>&, const Extent3&, const Extent3&);
template Tensor<float> crop<float>(const Tensor<float>&, const Extent3&, const Extent3&);
template Tensor<double> crop<double>(const Tensor<double>&, const Extent3&, const Extent3&);
template Tensor<std::uint8_t> crop<std::uint8_t>(const Tensor<std::uint8_t>&, const Extent3&, const Extent3&);

}  // namespace sam3d

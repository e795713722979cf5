#include "sam3d/objective/loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sam3d/core/error.hpp"
#include "sam3d/io/volume_ops.hpp"

namespace sam3d {

std::vector<double> deep_supervision_weights(std::size_t levels) {
  if (levels == 0) throw ValidationError("deep supervision needs at least one level");
  std::vector<double> w(levels);
  double sum = 0.0;
  for (std::size_t l = 0; l < levels; ++l) {
    w[l] = std::ldexp(1.0, -static_cast<int>(l));
    sum += w[l];
  }
  for (double& v : w) v /= sum;
  return w;
}

void LossConfig::validate() const {
  if (num_classes < 2) throw ValidationError("loss: num_classes must be >= 2");
  if (!(epsilon > 0.0)) throw ValidationError("loss: epsilon must be positive");
  if (ds_weights.empty()) throw ValidationError("loss: ds_weights must not be empty");
  double sum = 0.0;
  for (double w : ds_weights) {
    if (!(w > 0.0)) throw ValidationError("loss: ds_weights must be positive");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("loss: ds_weights must sum to 1");
}

namespace {

struct Layout {
  std::size_t classes, voxels;
};

template <typename T>
Layout check(const Tensor<T>& logits, const Tensor<std::uint8_t>& labels) {
  if (logits.rank() != 4 || labels.rank() != 3) {
    throw ShapeError("loss: expected logits (N, D, H, W) and labels (D, H, W), got " + shape_str(logits.shape()) +
                     " and " + shape_str(labels.shape()));
  }
  for (std::size_t a = 0; a < 3; ++a) {
    if (logits.dim(a + 1) != labels.dim(a)) {
      throw ShapeError("loss: logits " + shape_str(logits.shape()) + " do not match labels " +
                       shape_str(labels.shape()));
    }
  }
  const std::size_t n = logits.dim(0);
  for (std::uint8_t v : labels.vec()) {
    if (v >= n) {
      throw ValidationError("loss: label " + std::to_string(v) + " out of range for " + std::to_string(n) +
                            " classes");
    }
  }
  return {n, labels.size()};
}

// Class-major softmax probabilities in double.
template <typename T>
std::vector<double> softmax(const Tensor<T>& logits, const Layout& L) {
  std::vector<double> p(L.classes * L.voxels);
  for (std::size_t k = 0; k < L.voxels; ++k) {
    double mx = -INFINITY;
    for (std::size_t c = 0; c < L.classes; ++c) mx = std::max(mx, static_cast<double>(logits[c * L.voxels + k]));
    double sum = 0.0;
    for (std::size_t c = 0; c < L.classes; ++c) {
      const double e = std::exp(static_cast<double>(logits[c * L.voxels + k]) - mx);
      p[c * L.voxels + k] = e;
      sum += e;
    }
    for (std::size_t c = 0; c < L.classes; ++c) p[c * L.voxels + k] /= sum;
  }
  return p;
}

template <typename T>
void ensure_grad(Tensor<T>* grad, const Tensor<T>& logits) {
  if (grad && grad->empty()) *grad = Tensor<T>(logits.shape());
  if (grad && grad->shape() != logits.shape()) throw ShapeError("loss: gradient buffer shape mismatch");
}

}  // namespace

template <typename T>
double soft_dice_loss(const Tensor<T>& logits, const Tensor<std::uint8_t>& labels, double eps,
                      bool include_background, Tensor<T>* grad, double weight) {
  const Layout L = check(logits, labels);
  ensure_grad(grad, logits);
  const std::vector<double> p = softmax(logits, L);
  const std::size_t c0 = include_background ? 0 : 1;
  const double nc = static_cast<double>(L.classes - c0);

  std::vector<double> inter(L.classes, 0.0), denom(L.classes, 0.0);
  for (std::size_t c = c0; c < L.classes; ++c) {
    const double* pc = p.data() + c * L.voxels;
    double i = 0.0, s = 0.0;
    for (std::size_t k = 0; k < L.voxels; ++k) {
      const double g = labels[k] == c ? 1.0 : 0.0;
      i += pc[k] * g;
      s += pc[k] * pc[k] + g;
    }
    inter[c] = i;
    denom[c] = s;
  }
  double mean_dice = 0.0;
  for (std::size_t c = c0; c < L.classes; ++c) mean_dice += (2.0 * inter[c] + eps) / (denom[c] + eps);
  mean_dice /= nc;

  if (grad) {
    // dL/dp, then through the softmax Jacobian per voxel.
    std::vector<double> dp(L.classes);
    for (std::size_t k = 0; k < L.voxels; ++k) {
      double dot = 0.0;
      for (std::size_t c = 0; c < L.classes; ++c) {
        double d = 0.0;
        if (c >= c0) {
          const double g = labels[k] == c ? 1.0 : 0.0;
          const double den = denom[c] + eps;
          const double pk = p[c * L.voxels + k];
          d = -(2.0 * g * den - (2.0 * inter[c] + eps) * 2.0 * pk) / (den * den) / nc;
        }
        dp[c] = d;
        dot += d * p[c * L.voxels + k];
      }
      for (std::size_t c = 0; c < L.classes; ++c) {
        const double pk = p[c * L.voxels + k];
        (*grad)[c * L.voxels + k] += static_cast<T>(weight * pk * (dp[c] - dot));
      }
    }
  }
  return 1.0 - mean_dice;
}

template <typename T>
double cross_entropy_loss(const Tensor<T>& logits, const Tensor<std::uint8_t>& labels, Tensor<T>* grad,
                          double weight) {
  const Layout L = check(logits, labels);
  ensure_grad(grad, logits);
  double total = 0.0;
  const double inv_k = 1.0 / static_cast<double>(L.voxels);
  for (std::size_t k = 0; k < L.voxels; ++k) {
    double mx = -INFINITY;
    for (std::size_t c = 0; c < L.classes; ++c) mx = std::max(mx, static_cast<double>(logits[c * L.voxels + k]));
    double sum = 0.0;
    for (std::size_t c = 0; c < L.classes; ++c) sum += std::exp(static_cast<double>(logits[c * L.voxels + k]) - mx);
    const double lse = mx + std::log(sum);
    total += lse - static_cast<double>(logits[labels[k] * L.voxels + k]);
    if (grad) {
      for (std::size_t c = 0; c < L.classes; ++c) {
        const double pk = std::exp(static_cast<double>(logits[c * L.voxels + k]) - lse);
        const double g = labels[k] == c ? 1.0 : 0.0;
        (*grad)[c * L.voxels + k] += static_cast<T>(weight * (pk - g) * inv_k);
      }
    }
  }
  return total * inv_k;
}

template <typename T>
LossTerms combined_loss(const Tensor<T>& logits, const Tensor<std::uint8_t>& labels, const LossConfig& cfg,
                        Tensor<T>* grad, double weight) {
  if (logits.rank() == 4 && logits.dim(0) != cfg.num_classes) {
    throw ShapeError("loss: logits have " + std::to_string(logits.dim(0)) + " classes, config says " +
                     std::to_string(cfg.num_classes));
  }
  LossTerms t;
  t.dice = soft_dice_loss(logits, labels, cfg.epsilon, cfg.include_background, grad, weight);
  t.ce = cross_entropy_loss(logits, labels, grad, weight);
  t.total = t.dice + t.ce;
  return t;
}

namespace {

Tensor<std::uint8_t> downsample_inplane(const Tensor<std::uint8_t>& labels, std::size_t f, std::size_t classes) {
  if (f == 1) return labels;
  const LabelVolume lv{labels, static_cast<int>(classes)};
  return downsample_label_volume(lv, {1, f, f}).labels;
}

}  // namespace

template <typename T>
LossTerms deep_supervision_loss(const DecoderOutputs<T>& outputs, const Tensor<std::uint8_t>& labels,
                                const LossConfig& cfg, std::array<Tensor<T>, kNumStages>* grads, double weight) {
  cfg.validate();
  if (cfg.ds_weights.size() > kNumStages) throw ValidationError("loss: more ds_weights than decoder stages");
  if (labels.rank() != 3) throw ShapeError("loss: labels must be (D, H, W)");
  LossTerms sum;
  for (std::size_t l = 0; l < cfg.ds_weights.size(); ++l) {
    const Tensor<T>& z = outputs.logits[l];
    if (z.empty()) throw ShapeError("loss: stage " + std::to_string(l + 1) + " logits missing");
    const std::size_t f = std::size_t{1} << l;
    const Shape want{cfg.num_classes, labels.dim(0), labels.dim(1) / f, labels.dim(2) / f};
    if (z.shape() != want) {
      throw ShapeError("loss: stage " + std::to_string(l + 1) + " logits " + shape_str(z.shape()) + ", expected " +
                       shape_str(want));
    }
    const double a = cfg.ds_weights[l];
    const LossTerms t =
        combined_loss(z, downsample_inplane(labels, f, cfg.num_classes), cfg, grads ? &(*grads)[l] : nullptr, weight * a);
    sum.total += a * t.total;
    sum.dice += a * t.dice;
    sum.ce += a * t.ce;
  }
  return sum;
}

#define SAM3D_INSTANTIATE_LOSS(T)                                                                                 \
  template double soft_dice_loss(const Tensor<T>&, const Tensor<std::uint8_t>&, double, bool, Tensor<T>*, double); \
  template double cross_entropy_loss(const Tensor<T>&, const Tensor<std::uint8_t>&, Tensor<T>*, double);          \
  template LossTerms combined_loss(const Tensor<T>&, const Tensor<std::uint8_t>&, const LossConfig&, Tensor<T>*,  \
                                   double);                                                                       \
  template LossTerms deep_supervision_loss(const DecoderOutputs<T>&, const Tensor<std::uint8_t>&,                \
                                           const LossConfig&, std::array<Tensor<T>, kNumStages>*, double);

SAM3D_INSTANTIATE_LOSS(float)
SAM3D_INSTANTIATE_LOSS(double)

}  // namespace sam3d

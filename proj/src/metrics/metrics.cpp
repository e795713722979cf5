#include "sam3d/metrics/metrics.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "sam3d/core/error.hpp"
#include "sam3d/core/stats.hpp"

using nlohmann::json;

namespace sam3d {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr std::size_t kBruteForceLimit = 10000;

void check_pair(const Mask& a, const Mask& b) {
  if (a.rank() != 3 || a.shape() != b.shape()) {
    throw ValidationError("metrics: mask shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void check_spacing(const Spacing3& s) {
  for (double v : s) {
    if (!(v > 0.0)) throw ValidationError("metrics: spacing must be positive");
  }
}

bool any_foreground(const Mask& m) {
  return std::any_of(m.vec().begin(), m.vec().end(), [](std::uint8_t v) { return v != 0; });
}

// Lower envelope of parabolas w*(q - p)^2 + f(p), in place over a strided line.
void edt_1d(double* f, std::size_t n, std::size_t stride, double w, std::vector<double>& tmp,
            std::vector<std::size_t>& v, std::vector<double>& z) {
  tmp.resize(n);
  v.resize(n);
  z.resize(n + 1);
  for (std::size_t i = 0; i < n; ++i) tmp[i] = f[i * stride];
  std::size_t k = 0;
  bool any = false;
  for (std::size_t q = 0; q < n; ++q) {
    if (tmp[q] == kInf) continue;
    if (!any) {
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      any = true;
      continue;
    }
    const double fq = tmp[q] + w * static_cast<double>(q) * static_cast<double>(q);
    double s;
    while (true) {
      const std::size_t p = v[k];
      const double fp = tmp[p] + w * static_cast<double>(p) * static_cast<double>(p);
      s = (fq - fp) / (2.0 * w * (static_cast<double>(q) - static_cast<double>(p)));
      if (s <= z[k] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    if (s <= z[k]) {
      // k == 0 and the new parabola dominates everywhere.
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  if (!any) return;
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[k + 1] < static_cast<double>(q)) ++k;
    const double d = static_cast<double>(q) - static_cast<double>(v[k]);
    f[q * stride] = w * d * d + tmp[v[k]];
  }
}

// Squared anisotropic distance from every voxel to the nearest listed point.
std::vector<double> squared_edt(const std::vector<Extent3>& points, const Extent3& ext, const Spacing3& sp) {
  const std::size_t D = ext[0], H = ext[1], W = ext[2];
  std::vector<double> f(D * H * W, kInf);
  for (const auto& p : points) f[(p[0] * H + p[1]) * W + p[2]] = 0.0;
  std::vector<double> tmp, z;
  std::vector<std::size_t> v;
  for (std::size_t d = 0; d < D; ++d)
    for (std::size_t h = 0; h < H; ++h) edt_1d(f.data() + (d * H + h) * W, W, 1, sp[2] * sp[2], tmp, v, z);
  for (std::size_t d = 0; d < D; ++d)
    for (std::size_t w = 0; w < W; ++w) edt_1d(f.data() + d * H * W + w, H, W, sp[1] * sp[1], tmp, v, z);
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t w = 0; w < W; ++w) edt_1d(f.data() + h * W + w, D, H * W, sp[0] * sp[0], tmp, v, z);
  return f;
}

double directed_d95(const std::vector<Extent3>& from, const std::vector<double>& sq_edt, const Extent3& ext) {
  std::vector<double> d;
  d.reserve(from.size());
  for (const auto& p : from) d.push_back(std::sqrt(sq_edt[(p[0] * ext[1] + p[1]) * ext[2] + p[2]]));
  return percentile(std::move(d), 95.0);
}

double directed_d95_brute(const std::vector<Extent3>& from, const std::vector<Extent3>& to, const Spacing3& sp) {
  std::vector<double> d;
  d.reserve(from.size());
  for (const auto& a : from) {
    double best = kInf;
    for (const auto& b : to) {
      double s = 0.0;
      for (int i = 0; i < 3; ++i) {
        const double x = (static_cast<double>(a[i]) - static_cast<double>(b[i])) * sp[i];
        s += x * x;
      }
      best = std::min(best, s);
    }
    d.push_back(std::sqrt(best));
  }
  return percentile(std::move(d), 95.0);
}

Mask binarize(const Tensor<std::uint8_t>& labels, int c) {
  Mask m(labels.shape());
  for (std::size_t i = 0; i < labels.size(); ++i) m[i] = labels[i] == c ? 1 : 0;
  return m;
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

double dice_coefficient(const Mask& pred, const Mask& gt) {
  check_pair(pred, gt);
  std::size_t a = 0, b = 0, both = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0, g = gt[i] != 0;
    a += p;
    b += g;
    both += p && g;
  }
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

std::vector<Extent3> extract_boundary(const Mask& mask) {
  if (mask.rank() != 3) throw ValidationError("metrics: mask must be (D, H, W)");
  const std::size_t D = mask.dim(0), H = mask.dim(1), W = mask.dim(2);
  auto fg = [&](std::size_t d, std::size_t h, std::size_t w) { return mask[(d * H + h) * W + w] != 0; };
  std::vector<Extent3> out;
  for (std::size_t d = 0; d < D; ++d) {
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t w = 0; w < W; ++w) {
        if (!fg(d, h, w)) continue;
        const bool interior = d > 0 && d + 1 < D && h > 0 && h + 1 < H && w > 0 && w + 1 < W && fg(d - 1, h, w) &&
                              fg(d + 1, h, w) && fg(d, h - 1, w) && fg(d, h + 1, w) && fg(d, h, w - 1) &&
                              fg(d, h, w + 1);
        if (!interior) out.push_back({d, h, w});
      }
    }
  }
  return out;
}

std::optional<double> hd95(const Mask& pred, const Mask& gt, const Spacing3& spacing) {
  check_pair(pred, gt);
  check_spacing(spacing);
  if (!any_foreground(pred) || !any_foreground(gt)) return std::nullopt;
  const Extent3 ext{pred.dim(0), pred.dim(1), pred.dim(2)};
  const auto a = extract_boundary(pred);
  const auto b = extract_boundary(gt);
  const double ab = directed_d95(a, squared_edt(b, ext, spacing), ext);
  const double ba = directed_d95(b, squared_edt(a, ext, spacing), ext);
  return std::max(ab, ba);
}

std::optional<double> hd95_bruteforce(const Mask& pred, const Mask& gt, const Spacing3& spacing) {
  check_pair(pred, gt);
  check_spacing(spacing);
  const auto a = extract_boundary(pred);
  const auto b = extract_boundary(gt);
  if (a.size() + b.size() > kBruteForceLimit) {
    throw ValidationError("hd95_bruteforce: " + std::to_string(a.size() + b.size()) +
                          " boundary voxels exceed the limit of " + std::to_string(kBruteForceLimit));
  }
  if (a.empty() || b.empty()) return std::nullopt;
  return std::max(directed_d95_brute(a, b, spacing), directed_d95_brute(b, a, spacing));
}

CaseMetrics evaluate_volume(const LabelVolume& pred, const LabelVolume& gt, const Spacing3& spacing,
                            int num_classes) {
  if (pred.labels.shape() != gt.labels.shape()) {
    throw ValidationError("metrics: prediction " + shape_str(pred.labels.shape()) + " vs ground truth " +
                          shape_str(gt.labels.shape()));
  }
  if (num_classes < 2) throw ValidationError("metrics: num_classes must be >= 2");
  CaseMetrics m;
  double dsc_sum = 0.0, hd_sum = 0.0;
  std::size_t hd_n = 0;
  for (int c = 1; c < num_classes; ++c) {
    const Mask p = binarize(pred.labels, c), g = binarize(gt.labels, c);
    ClassMetrics cm{c, dice_coefficient(p, g), hd95(p, g, spacing)};
    dsc_sum += cm.dsc;
    if (cm.hd95) {
      hd_sum += *cm.hd95;
      ++hd_n;
    }
    m.per_class.push_back(cm);
  }
  m.mean_dsc = dsc_sum / static_cast<double>(num_classes - 1);
  if (hd_n) m.mean_hd95 = hd_sum / static_cast<double>(hd_n);
  return m;
}

json CaseMetrics::to_json() const {
  json classes = json::array();
  for (const auto& c : per_class) {
    classes.push_back({{"class_id", c.class_id}, {"dsc", c.dsc}, {"hd95", optional_json(c.hd95)}});
  }
  return {{"case_id", case_id}, {"per_class", classes}, {"mean_dsc", mean_dsc}, {"mean_hd95", optional_json(mean_hd95)}};
}

json EvaluationReport::to_json() const {
  json cs = json::array();
  double dsc = 0.0;
  for (const auto& c : cases) {
    cs.push_back(c.to_json());
    dsc += c.mean_dsc;
  }
  return {{"num_classes", num_classes},
          {"cases", cs},
          {"mean_dsc", cases.empty() ? json(nullptr) : json(dsc / static_cast<double>(cases.size()))}};
}

std::string EvaluationReport::to_csv() const {
  std::ostringstream out;
  out.precision(10);
  out << "case_id";
  for (int c = 1; c < num_classes; ++c) out << ",dsc_" << c;
  out << ",mean_dsc";
  for (int c = 1; c < num_classes; ++c) out << ",hd95_" << c;
  out << ",mean_hd95\n";

  const std::size_t nc = static_cast<std::size_t>(num_classes - 1);
  std::vector<double> dsum(nc, 0.0), hsum(nc, 0.0);
  std::vector<std::size_t> hn(nc, 0);
  double mean_dsum = 0.0, mean_hsum = 0.0;
  std::size_t mean_hn = 0;
  auto cell = [&](const std::optional<double>& v) {
    out << ',';
    if (v) out << *v;
  };
  for (const auto& cm : cases) {
    out << cm.case_id;
    for (std::size_t i = 0; i < nc; ++i) {
      out << ',' << cm.per_class[i].dsc;
      dsum[i] += cm.per_class[i].dsc;
    }
    out << ',' << cm.mean_dsc;
    mean_dsum += cm.mean_dsc;
    for (std::size_t i = 0; i < nc; ++i) {
      cell(cm.per_class[i].hd95);
      if (cm.per_class[i].hd95) {
        hsum[i] += *cm.per_class[i].hd95;
        ++hn[i];
      }
    }
    cell(cm.mean_hd95);
    if (cm.mean_hd95) {
      mean_hsum += *cm.mean_hd95;
      ++mean_hn;
    }
    out << '\n';
  }
  if (!cases.empty()) {
    const double n = static_cast<double>(cases.size());
    out << "mean";
    for (std::size_t i = 0; i < nc; ++i) out << ',' << dsum[i] / n;
    out << ',' << mean_dsum / n;
    for (std::size_t i = 0; i < nc; ++i) cell(hn[i] ? std::optional<double>(hsum[i] / hn[i]) : std::nullopt);
    cell(mean_hn ? std::optional<double>(mean_hsum / mean_hn) : std::nullopt);
    out << '\n';
  }
  return out.str();
}

}  // namespace sam3d

#include "sam3d/train/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "sam3d/core/rng.hpp"

namespace sam3d {

GradCheckReport finite_difference_gradient_check(ParameterSet<double>& params, const std::function<double()>& loss,
                                                 const GradCheckOptions& opts,
                                                 const std::function<std::uint64_t()>& region) {
  GradCheckReport report;
  std::size_t fault_param = 0, fault_index = 0;
  if (opts.inject_fault) {
    double best = -1.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      for (std::size_t j = 0; j < params[i].grad.size(); ++j) {
        if (std::abs(params[i].grad[j]) > best) {
          best = std::abs(params[i].grad[j]);
          fault_param = i;
          fault_index = j;
        }
      }
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double saved = p.value[j];
      p.value[j] = saved + opts.step;
      const double up = loss();
      const std::uint64_t up_region = region ? region() : 0;
      p.value[j] = saved - opts.step;
      const double down = loss();
      const std::uint64_t down_region = region ? region() : 0;
      p.value[j] = saved;
      if (up_region != down_region) {
        ++report.kinks;
        continue;
      }
      const double numeric = (up - down) / (2.0 * opts.step);
      double analytic = p.grad[j];
      if (opts.inject_fault && i == fault_param && j == fault_index) analytic *= 2.0;
      const double denom = std::max({std::abs(analytic), std::abs(numeric), opts.floor});
      const double rel = std::abs(analytic - numeric) / denom;
      if (report.checked == 0 || rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst = {p.name, j, analytic, numeric, rel};
      }
      ++report.checked;
    }
  }
  return report;
}

GradCheckReport finite_difference_gradient_check(const DecoderConfig& dec_cfg, const LossConfig& loss_cfg,
                                                 std::uint64_t seed, const std::array<std::size_t, 3>& extent,
                                                 const GradCheckOptions& opts) {
  Decoder<double> dec = Decoder<double>::initialized(dec_cfg, seed);
  Rng rng(Rng::derive(seed, {1}));
  // Non-trivial norm affine and biases so every parameter has a generic gradient.
  for (auto& p : dec.params()) {
    if (p.value.rank() != 5) {
      for (auto& v : p.value.vec()) v += rng.normal(0.0, 0.1);
    }
  }
  Tensor<double> emb({dec_cfg.in_channels, extent[0], extent[1], extent[2]});
  for (auto& v : emb.vec()) v = rng.normal();
  const std::size_t H = extent[1] * 16, W = extent[2] * 16;
  Tensor<std::uint8_t> labels({extent[0], H, W});
  for (auto& v : labels.vec()) v = static_cast<std::uint8_t>(rng.below(dec_cfg.num_classes));

  DecoderTape<double> tape;
  const DecoderOutputs<double> out = dec.forward(emb, &tape);
  std::array<Tensor<double>, kNumStages> dlogits;
  deep_supervision_loss(out, labels, loss_cfg, &dlogits);
  dec.params().zero_grad();
  dec.backward(tape, dlogits);

  // One evaluation fills the tape; the region query reads its rectifier inputs.
  DecoderTape<double> probe;
  auto loss = [&] { return deep_supervision_loss(dec.forward(emb, &probe), labels, loss_cfg).total; };
  auto region = [&] {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&](const Tensor<double>& t) {
      for (double v : t.vec()) h = (h ^ (v > 0.0 ? 1u : 0u)) * 0x100000001b3ull;
    };
    for (const auto& b : probe.blocks) {
      mix(b.pre1);
      mix(b.pre);
    }
    for (const auto& hd : probe.heads) mix(hd.pre);
    return h;
  };
  return finite_difference_gradient_check(dec.params(), loss, opts, region);
}

}  // namespace sam3d

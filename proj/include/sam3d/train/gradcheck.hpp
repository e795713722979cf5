#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>

#include "sam3d/decoder/decoder.hpp"
#include "sam3d/objective/loss.hpp"

namespace sam3d {

struct GradCheckEntry {
  std::string name;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  std::size_t checked = 0;
  /// Entries whose +/- step landed on different sides of an activation kink;
  /// central differences are meaningless there, so they are not compared.
  std::size_t kinks = 0;
  double max_rel_error = 0.0;
  GradCheckEntry worst;

  /// An empty report passes.
  bool passed(double tolerance = 1e-3) const { return max_rel_error < tolerance; }
};

struct GradCheckOptions {
  double step = 1e-4;
  /// Denominator floor: rel = |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  /// Multiply the largest-magnitude analytic gradient by 2 before comparing.
  bool inject_fault = false;
};

/// Central differences against gradients already stored in params[*].grad.
/// `loss` must evaluate the objective at the current parameter values. When
/// given, `region` returns a fingerprint of the piecewise-linear region (for
/// example the sign pattern of every rectifier input) at the current values.
GradCheckReport finite_difference_gradient_check(ParameterSet<double>& params, const std::function<double()>& loss,
                                                 const GradCheckOptions& opts = {},
                                                 const std::function<std::uint64_t()>& region = {});

/// Random embedding (in_channels, extent) and labels; deep-supervision loss.
GradCheckReport finite_difference_gradient_check(const DecoderConfig& dec_cfg, const LossConfig& loss_cfg,
                                                 std::uint64_t seed, const std::array<std::size_t, 3>& extent = {2, 2, 2},
                                                 const GradCheckOptions& opts = {});

}  // namespace sam3d

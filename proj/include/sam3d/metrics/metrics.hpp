#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sam3d/io/volume.hpp"

namespace sam3d {

/// Binary (D, H, W) mask; any nonzero value is foreground.
using Mask = Tensor<std::uint8_t>;

/// 2|A n B| / (|A| + |B|); 1 when both are empty.
double dice_coefficient(const Mask& pred, const Mask& gt);

/// Foreground voxels with at least one background 6-neighbour; the outside
/// of the volume counts as background. Coordinates in (d, h, w) order.
std::vector<Extent3> extract_boundary(const Mask& mask);

/// Symmetric 95th-percentile boundary distance in spacing units, via an
/// exact Euclidean distance transform. nullopt when either mask is empty.
std::optional<double> hd95(const Mask& pred, const Mask& gt, const Spacing3& spacing);

/// Exhaustive pairwise oracle for hd95. Refuses (ValidationError) when the two
/// boundaries hold more than 10^4 voxels together.
std::optional<double> hd95_bruteforce(const Mask& pred, const Mask& gt, const Spacing3& spacing);

struct ClassMetrics {
  int class_id = 0;
  double dsc = 0.0;
  std::optional<double> hd95;
};

struct CaseMetrics {
  std::string case_id;
  std::vector<ClassMetrics> per_class;  // foreground classes 1..N-1
  double mean_dsc = 0.0;
  std::optional<double> mean_hd95;  // over classes where hd95 is defined

  nlohmann::json to_json() const;
};

CaseMetrics evaluate_volume(const LabelVolume& pred, const LabelVolume& gt, const Spacing3& spacing,
                            int num_classes);

struct EvaluationReport {
  std::vector<CaseMetrics> cases;
  int num_classes = 2;

  nlohmann::json to_json() const;
  /// One row per case plus a "mean" row: case_id, then dsc_<c> per class,
  /// mean_dsc, hd95_<c> per class, mean_hd95. Undefined values are empty cells.
  std::string to_csv() const;
};

}  // namespace sam3d

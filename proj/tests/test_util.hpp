#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "sam3d/core/rng.hpp"
#include "sam3d/core/tensor.hpp"
#include "sam3d/io/volume.hpp"

namespace sam3d::test {

template <typename T>
Tensor<T> random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
  Tensor<T> t(std::move(shape));
  Rng rng(seed);
  for (auto& v : t.vec()) v = static_cast<T>(rng.normal(0.0, scale));
  return t;
}

inline Tensor<std::uint8_t> random_labels(Shape shape, int classes, std::uint64_t seed) {
  Tensor<std::uint8_t> t(std::move(shape));
  Rng rng(seed);
  for (auto& v : t.vec()) v = static_cast<std::uint8_t>(rng.below(static_cast<std::uint64_t>(classes)));
  return t;
}

inline Volume random_volume(std::size_t m, const Extent3& e, std::uint64_t seed) {
  Volume v;
  v.data = random_tensor<float>({m, e[0], e[1], e[2]}, seed);
  v.spacing = {2.5, 0.75, 0.8};
  v.origin = {-10.0, 3.5, 7.25};
  return v;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("sam3d_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

}  // namespace sam3d::test

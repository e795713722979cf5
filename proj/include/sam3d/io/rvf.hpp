#pragma once

// RVF: a minimal tensor container.
//
//   bytes 0..3   magic "RVF1"
//   bytes 4..7   header length L, little-endian uint32
//   bytes 8..    L bytes of UTF-8 JSON: {"dtype", "shape", "order": "C", "meta"}
//   then         raw little-endian values in C order

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "sam3d/core/tensor.hpp"

namespace sam3d {

enum class DType { kUInt8, kInt16, kInt32, kInt64, kFloat32, kFloat64 };

std::string dtype_name(DType d);
DType dtype_from_name(const std::string& name);
std::size_t dtype_size(DType d);

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<std::uint8_t>() { return DType::kUInt8; }
template <>
constexpr DType dtype_of<std::int16_t>() { return DType::kInt16; }
template <>
constexpr DType dtype_of<std::int32_t>() { return DType::kInt32; }
template <>
constexpr DType dtype_of<std::int64_t>() { return DType::kInt64; }
template <>
constexpr DType dtype_of<float>() { return DType::kFloat32; }
template <>
constexpr DType dtype_of<double>() { return DType::kFloat64; }

struct RvfTensor {
  DType dtype = DType::kFloat32;
  Shape shape;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::byte> payload;  // host byte order

  /// Typed view; throws FormatError on dtype mismatch.
  template <typename T>
  Tensor<T> as() const;
};

/// Writes atomically (temp file + rename). Float inputs must be finite.
template <typename T>
void rvf_write(const std::filesystem::path& path, const Tensor<T>& tensor,
               const nlohmann::json& meta = nlohmann::json::object());

RvfTensor rvf_read(const std::filesystem::path& path);

template <typename T>
Tensor<T> rvf_read_as(const std::filesystem::path& path, nlohmann::json* meta = nullptr) {
  RvfTensor t = rvf_read(path);
  if (meta) *meta = t.meta;
  return t.as<T>();
}

}  // namespace sam3d

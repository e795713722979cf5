#include "sam3d/io/rvf.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "sam3d/core/error.hpp"

namespace sam3d {

namespace {

constexpr char kMagic[4] = {'R', 'V', 'F', '1'};
constexpr std::uint32_t kMaxHeader = 1u << 24;

static_assert(std::endian::native == std::endian::little, "RVF payloads are written in host order");

std::filesystem::path temp_sibling(const std::filesystem::path& path) {
  static thread_local std::mt19937_64 gen{std::random_device{}()};
  std::ostringstream os;
  os << path.filename().string() << ".tmp." << std::hex << gen();
  return path.parent_path() / os.str();
}

}  // namespace

std::string dtype_name(DType d) {
  switch (d) {
    case DType::kUInt8: return "uint8";
    case DType::kInt16: return "int16";
    case DType::kInt32: return "int32";
    case DType::kInt64: return "int64";
    case DType::kFloat32: return "float32";
    case DType::kFloat64: return "float64";
  }
  return "unknown";
}

DType dtype_from_name(const std::string& name) {
  if (name == "uint8") return DType::kUInt8;
  if (name == "int16") return DType::kInt16;
  if (name == "int32") return DType::kInt32;
  if (name == "int64") return DType::kInt64;
  if (name == "float32") return DType::kFloat32;
  if (name == "float64") return DType::kFloat64;
  throw FormatError("rvf: unknown dtype '" + name + "'");
}

std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::kUInt8: return 1;
    case DType::kInt16: return 2;
    case DType::kInt32: return 4;
    case DType::kInt64: return 8;
    case DType::kFloat32: return 4;
    case DType::kFloat64: return 8;
  }
  return 0;
}

template <typename T>
Tensor<T> RvfTensor::as() const {
  if (dtype != dtype_of<T>()) {
    throw FormatError("rvf: stored dtype " + dtype_name(dtype) + " does not match requested " +
                      dtype_name(dtype_of<T>()));
  }
  std::vector<T> values(shape_numel(shape));
  if (!values.empty()) std::memcpy(values.data(), payload.data(), values.size() * sizeof(T));
  return Tensor<T>(shape, std::move(values));
}

template <typename T>
void rvf_write(const std::filesystem::path& path, const Tensor<T>& tensor, const nlohmann::json& meta) {
  if constexpr (std::is_floating_point_v<T>) {
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      if (!std::isfinite(tensor[i])) {
        throw ValidationError("rvf: refusing to write non-finite value at flat index " + std::to_string(i) +
                              " to '" + path.string() + "'");
      }
    }
  }
  nlohmann::json header = {
      {"dtype", dtype_name(dtype_of<T>())}, {"shape", tensor.shape()}, {"order", "C"}, {"meta", meta}};
  const std::string text = header.dump();
  const auto len = static_cast<std::uint32_t>(text.size());

  const std::filesystem::path tmp = temp_sibling(path);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("rvf: cannot open '" + tmp.string() + "' for writing");
    out.write(kMagic, 4);
    out.write(reinterpret_cast<const char*>(&len), 4);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(reinterpret_cast<const char*>(tensor.data()), static_cast<std::streamsize>(tensor.size() * sizeof(T)));
    if (!out) throw IoError("rvf: short write to '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw IoError("rvf: cannot move temp file into '" + path.string() + "': " + ec.message());
  }
}

RvfTensor rvf_read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("rvf: cannot open '" + path.string() + "'");
  char magic[4];
  std::uint32_t len = 0;
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("rvf: '" + path.string() + "' does not start with magic \"RVF1\"");
  }
  if (!in.read(reinterpret_cast<char*>(&len), 4)) throw FormatError("rvf: truncated header length");
  if (len > kMaxHeader) throw FormatError("rvf: header length " + std::to_string(len) + " is implausible");
  std::string text(len, '\0');
  if (!in.read(text.data(), len)) throw FormatError("rvf: header is shorter than its declared length");

  RvfTensor t;
  try {
    const nlohmann::json header = nlohmann::json::parse(text);
    t.dtype = dtype_from_name(header.at("dtype").get<std::string>());
    t.shape = header.at("shape").get<Shape>();
    if (header.value("order", std::string("C")) != "C") throw FormatError("rvf: only C order is supported");
    if (header.contains("meta")) t.meta = header.at("meta");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("rvf: malformed header: ") + e.what());
  }

  const std::size_t expected = shape_numel(t.shape) * dtype_size(t.dtype);
  const std::streampos start = in.tellg();
  in.seekg(0, std::ios::end);
  const auto available = static_cast<std::size_t>(in.tellg() - start);
  if (available != expected) {
    throw FormatError("rvf: payload length " + std::to_string(available) + " does not match header (" +
                      std::to_string(expected) + " bytes expected)");
  }
  in.seekg(start);
  t.payload.resize(expected);
  if (expected > 0 && !in.read(reinterpret_cast<char*>(t.payload.data()), static_cast<std::streamsize>(expected))) {
    throw FormatError("rvf: failed to read payload");
  }
  return t;
}

#define SAM3D_INSTANTIATE(T)                                                                               \
  template Tensor<T> RvfTensor::as<T>() const;                                                             \
  template void rvf_write<T>(const std::filesystem::path&, const Tensor<T>&, const nlohmann::json&);

SAM3D_INSTANTIATE(std::uint8_t)
SAM3D_INSTANTIATE(std::int16_t)
SAM3D_INSTANTIATE(std::int32_t)
SAM3D_INSTANTIATE(std::int64_t)
SAM3D_INSTANTIATE(float)
SAM3D_INSTANTIATE(double)
#undef SAM3D_INSTANTIATE

}  // namespace sam3d

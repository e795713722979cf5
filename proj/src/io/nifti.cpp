#include "sam3d/io/nifti.hpp"

#include <zlib.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "sam3d/core/error.hpp"

namespace sam3d {

namespace {

constexpr int kHeaderSize = 348;
constexpr int kVoxOffset = 352;

enum NiftiType : std::int16_t {
  kUInt8 = 2,
  kInt16 = 4,
  kInt32 = 8,
  kFloat32 = 16,
  kFloat64 = 64,
};

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (f == nullptr) throw IoError("cannot open '" + path.string() + "'");
  std::vector<unsigned char> out;
  std::vector<unsigned char> buf(1 << 20);
  for (;;) {
    const int n = gzread(f, buf.data(), static_cast<unsigned>(buf.size()));
    if (n < 0) {
      int err = 0;
      std::string msg = gzerror(f, &err);
      gzclose(f);
      throw FormatError("nifti: failed to decode '" + path.string() + "': " + msg);
    }
    if (n == 0) break;
    out.insert(out.end(), buf.begin(), buf.begin() + n);
  }
  gzclose(f);
  return out;
}

void write_all(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  const bool gz = path.extension() == ".gz";
  gzFile f = gzopen(path.c_str(), gz ? "wb6" : "wbT");
  if (f == nullptr) throw IoError("cannot open '" + path.string() + "' for writing");
  std::size_t off = 0;
  while (off < bytes.size()) {
    const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(bytes.size() - off, 1 << 26));
    if (gzwrite(f, bytes.data() + off, chunk) != static_cast<int>(chunk)) {
      gzclose(f);
      throw IoError("short write to '" + path.string() + "'");
    }
    off += chunk;
  }
  if (gzclose(f) != Z_OK) throw IoError("failed to close '" + path.string() + "'");
}

template <typename T>
T load(const unsigned char* p, bool swap) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  if (swap && sizeof(T) > 1) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}

template <typename T>
void store(unsigned char* p, T v) {
  std::memcpy(p, &v, sizeof(T));
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::filesystem::path image_path_for(const std::filesystem::path& header_path) {
  std::string s = header_path.string();
  if (ends_with(s, ".hdr.gz")) return s.substr(0, s.size() - 7) + ".img.gz";
  if (ends_with(s, ".hdr")) return s.substr(0, s.size() - 4) + ".img";
  if (ends_with(s, ".nii.gz")) return s.substr(0, s.size() - 7) + ".img";
  if (ends_with(s, ".nii")) return s.substr(0, s.size() - 4) + ".img";
  return s + ".img";
}

template <typename Src>
void convert(const unsigned char* src, std::size_t n, bool swap, float* dst) {
  for (std::size_t i = 0; i < n; ++i) dst[i] = static_cast<float>(load<Src>(src + i * sizeof(Src), swap));
}

std::vector<unsigned char> make_header(const NiftiHeader* like, const Extent3& e, std::size_t t, std::int16_t dtype,
                                       std::int16_t bitpix, const Spacing3& spacing, const Spacing3& origin) {
  std::vector<unsigned char> h(kVoxOffset, 0);
  if (like) std::memcpy(h.data(), like->raw.data(), kHeaderSize);
  unsigned char* p = h.data();
  store<std::int32_t>(p + 0, kHeaderSize);
  const std::int16_t ndim = t > 1 ? 4 : 3;
  const std::int16_t dims[8] = {ndim,
                                static_cast<std::int16_t>(e[2]),
                                static_cast<std::int16_t>(e[1]),
                                static_cast<std::int16_t>(e[0]),
                                static_cast<std::int16_t>(t),
                                1,
                                1,
                                1};
  for (int i = 0; i < 8; ++i) store<std::int16_t>(p + 40 + 2 * i, dims[i]);
  store<std::int16_t>(p + 70, dtype);
  store<std::int16_t>(p + 72, bitpix);
  store<float>(p + 108, static_cast<float>(kVoxOffset));
  store<float>(p + 112, 0.0f);  // scl_slope: no scaling
  store<float>(p + 116, 0.0f);
  if (!like) {
    const float pixdim[8] = {1.0f,
                             static_cast<float>(spacing[2]),
                             static_cast<float>(spacing[1]),
                             static_cast<float>(spacing[0]),
                             1.0f,
                             1.0f,
                             1.0f,
                             1.0f};
    for (int i = 0; i < 8; ++i) store<float>(p + 76 + 4 * i, pixdim[i]);
    p[123] = 2;                         // xyzt_units: mm
    store<std::int16_t>(p + 252, 1);    // qform_code: scanner
    store<std::int16_t>(p + 254, 1);    // sform_code
    store<float>(p + 268, static_cast<float>(origin[2]));
    store<float>(p + 272, static_cast<float>(origin[1]));
    store<float>(p + 276, static_cast<float>(origin[0]));
    const float srow[3][4] = {{static_cast<float>(spacing[2]), 0, 0, static_cast<float>(origin[2])},
                              {0, static_cast<float>(spacing[1]), 0, static_cast<float>(origin[1])},
                              {0, 0, static_cast<float>(spacing[0]), static_cast<float>(origin[0])}};
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 4; ++c) store<float>(p + 280 + 16 * r + 4 * c, srow[r][c]);
    }
  }
  std::memcpy(p + 344, "n+1\0", 4);
  return h;
}

}  // namespace

NiftiImage read_nifti(const std::filesystem::path& path) {
  std::vector<unsigned char> bytes = read_all(path);
  if (bytes.size() < static_cast<std::size_t>(kHeaderSize)) {
    throw FormatError("nifti: '" + path.string() + "' is shorter than the 348-byte header");
  }
  const unsigned char* h = bytes.data();
  bool swap = false;
  std::int32_t sizeof_hdr = load<std::int32_t>(h, false);
  if (sizeof_hdr != kHeaderSize) {
    if (load<std::int32_t>(h, true) == kHeaderSize) {
      swap = true;
    } else {
      throw FormatError("nifti: sizeof_hdr is " + std::to_string(sizeof_hdr) + ", expected 348");
    }
  }
  const bool single_file = std::memcmp(h + 344, "n+1\0", 4) == 0;
  const bool pair_file = std::memcmp(h + 344, "ni1\0", 4) == 0;
  if (!single_file && !pair_file) throw FormatError("nifti: magic is not \"n+1\" or \"ni1\"");

  std::int16_t dim[8];
  for (int i = 0; i < 8; ++i) dim[i] = load<std::int16_t>(h + 40 + 2 * i, swap);
  if (dim[0] < 1 || dim[0] > 7) throw FormatError("nifti: dim[0] is " + std::to_string(dim[0]));
  if (dim[0] > 4) throw UnsupportedError("nifti: " + std::to_string(dim[0]) + "-dimensional images are not supported");
  std::size_t n[4] = {1, 1, 1, 1};
  for (int i = 1; i <= dim[0]; ++i) {
    if (dim[i] < 1) throw FormatError("nifti: dim[" + std::to_string(i) + "] is " + std::to_string(dim[i]));
    n[i - 1] = static_cast<std::size_t>(dim[i]);
  }

  const std::int16_t datatype = load<std::int16_t>(h + 70, swap);
  std::size_t elem = 0;
  switch (datatype) {
    case kUInt8: elem = 1; break;
    case kInt16: elem = 2; break;
    case kInt32: elem = 4; break;
    case kFloat32: elem = 4; break;
    case kFloat64: elem = 8; break;
    default: throw UnsupportedError("nifti: unsupported datatype code " + std::to_string(datatype));
  }

  float pixdim[8];
  for (int i = 0; i < 8; ++i) pixdim[i] = load<float>(h + 76 + 4 * i, swap);
  Spacing3 spacing{};
  for (int axis = 0; axis < 3; ++axis) {
    const int k = 3 - axis;  // D <- z (pixdim[3]), H <- y, W <- x
    const double v = std::fabs(static_cast<double>(pixdim[k]));
    if (!std::isfinite(v) || v == 0.0) {
      if (n[k - 1] > 1) throw FormatError("nifti: pixdim[" + std::to_string(k) + "] must be positive");
      spacing[axis] = 1.0;
    } else {
      spacing[axis] = v;
    }
  }

  const float vox_offset = load<float>(h + 108, swap);
  const float slope = load<float>(h + 112, swap);
  const float inter = load<float>(h + 116, swap);

  const std::size_t count = n[0] * n[1] * n[2] * n[3];
  const unsigned char* src = nullptr;
  std::vector<unsigned char> image_bytes;
  if (single_file) {
    if (!std::isfinite(vox_offset) || vox_offset < static_cast<float>(kHeaderSize)) {
      throw FormatError("nifti: vox_offset " + std::to_string(vox_offset) + " is inside the header");
    }
    const std::size_t off = static_cast<std::size_t>(vox_offset);
    if (bytes.size() < off + count * elem) {
      throw FormatError("nifti: data section holds " + std::to_string(bytes.size() - std::min(bytes.size(), off)) +
                        " bytes, expected " + std::to_string(count * elem));
    }
    src = bytes.data() + off;
  } else {
    image_bytes = read_all(image_path_for(path));
    const std::size_t off = std::isfinite(vox_offset) && vox_offset > 0 ? static_cast<std::size_t>(vox_offset) : 0;
    if (image_bytes.size() < off + count * elem) throw FormatError("nifti: image file is shorter than dim implies");
    src = image_bytes.data() + off;
  }

  NiftiImage out;
  std::memcpy(out.header.raw.data(), h, kHeaderSize);
  out.volume.data = Tensor<float>(Shape{n[3], n[2], n[1], n[0]});
  float* dst = out.volume.data.data();
  switch (datatype) {
    case kUInt8: convert<std::uint8_t>(src, count, swap, dst); break;
    case kInt16: convert<std::int16_t>(src, count, swap, dst); break;
    case kInt32: convert<std::int32_t>(src, count, swap, dst); break;
    case kFloat32: convert<float>(src, count, swap, dst); break;
    case kFloat64: convert<double>(src, count, swap, dst); break;
    default: break;
  }
  if (std::isfinite(slope) && slope != 0.0f && !(slope == 1.0f && inter == 0.0f)) {
    for (std::size_t i = 0; i < count; ++i) dst[i] = dst[i] * slope + inter;
  }
  out.volume.spacing = spacing;
  out.volume.origin = {load<float>(h + 276, swap), load<float>(h + 272, swap), load<float>(h + 268, swap)};
  return out;
}

LabelVolume read_nifti_labels(const std::filesystem::path& path, int num_classes) {
  NiftiImage img = read_nifti(path);
  const Tensor<float>& d = img.volume.data;
  if (d.dim(0) != 1) throw ShapeError("label map '" + path.string() + "' has more than one volume");
  LabelVolume lab;
  lab.num_classes = num_classes;
  lab.labels = Tensor<std::uint8_t>(Shape{d.dim(1), d.dim(2), d.dim(3)});
  for (std::size_t i = 0; i < d.size(); ++i) {
    const float v = d[i];
    if (!(v >= 0.0f) || v != std::floor(v) || v >= static_cast<float>(num_classes)) {
      throw ValidationError("label map '" + path.string() + "' has value " + std::to_string(v) + " outside [0, " +
                            std::to_string(num_classes) + ")");
    }
    lab.labels[i] = static_cast<std::uint8_t>(v);
  }
  return lab;
}

void write_nifti(const std::filesystem::path& path, const Volume& volume, const NiftiHeader* like) {
  volume.validate();
  std::vector<unsigned char> bytes =
      make_header(like, volume.extent(), volume.modalities(), kFloat32, 32, volume.spacing, volume.origin);
  const std::size_t header = bytes.size();
  bytes.resize(header + volume.data.size() * sizeof(float));
  std::memcpy(bytes.data() + header, volume.data.data(), volume.data.size() * sizeof(float));
  static_assert(std::endian::native == std::endian::little, "NIfTI writer assumes a little-endian host");
  write_all(path, bytes);
}

void write_nifti_labels(const std::filesystem::path& path, const LabelVolume& labels, const Spacing3& spacing,
                        const Spacing3& origin, const NiftiHeader* like) {
  std::vector<unsigned char> bytes = make_header(like, labels.extent(), 1, kUInt8, 8, spacing, origin);
  bytes.insert(bytes.end(), labels.labels.vec().begin(), labels.labels.vec().end());
  write_all(path, bytes);
}

}  // namespace sam3d

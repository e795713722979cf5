#include "sam3d/encoder/embedding_cache.hpp"

#include <spdlog/spdlog.h>

#include "sam3d/core/digest.hpp"
#include "sam3d/core/error.hpp"
#include "sam3d/io/rvf.hpp"

namespace sam3d {

EmbeddingCache::EmbeddingCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::error_code ec;
  std::filesystem::create_directories(dir_, ec);
  if (ec) throw IoError("cannot create embedding cache '" + dir_.string() + "': " + ec.message());
}

std::string EmbeddingCache::content_digest(const Volume& vol) {
  Sha256 h;
  h.update(shape_str(vol.data.shape()));
  h.update_values(vol.data.span());
  return h.hex();
}

std::string EmbeddingCache::key(const Volume& vol, const SliceEncoder& encoder) {
  return sha256_hex(content_digest(vol) + ":" + encoder.digest());
}

std::filesystem::path EmbeddingCache::entry_path(const std::string& case_id, const std::string& key) const {
  return dir_ / (case_id + "-" + key.substr(0, 24) + ".rvf");
}

EmbeddingVolume EmbeddingCache::get_or_compute(const std::string& case_id, const Volume& vol,
                                               const SliceEncoder& encoder) {
  const std::string k = key(vol, encoder);
  const std::filesystem::path path = entry_path(case_id, k);
  const Shape expected{kEmbedDim * vol.modalities(), vol.depth(), vol.height() / kPatchStride,
                       vol.width() / kPatchStride};
  if (std::filesystem::exists(path)) {
    try {
      nlohmann::json meta;
      EmbeddingVolume cached = rvf_read_as<float>(path, &meta);
      if (cached.shape() != expected || meta.value("key", std::string{}) != k) {
        throw FormatError("cache entry has shape " + shape_str(cached.shape()) + " or a stale key");
      }
      ++hits_;
      return cached;
    } catch (const Error& e) {
      spdlog::warn("embedding cache entry '{}' is unreadable ({}); recomputing", path.string(), e.what());
    }
  }
  ++misses_;
  EmbeddingVolume fresh = encode_volume(vol, encoder);
  rvf_write(path, fresh, {{"key", k}, {"case_id", case_id}, {"encoder", encoder.digest()}});
  return fresh;
}

}  // namespace sam3d

#pragma once

#include <atomic>
#include <filesystem>
#include <string>

#include "sam3d/encoder/encoder.hpp"

namespace sam3d {

/// On-disk cache of encoder outputs. A frozen encoder makes embeddings a pure
/// function of (volume content, encoder config), which is the cache key.
/// One RVF file per key; writes go through a temp file and an atomic rename.
class EmbeddingCache {
 public:
  explicit EmbeddingCache(std::filesystem::path dir);

  EmbeddingVolume get_or_compute(const std::string& case_id, const Volume& vol, const SliceEncoder& encoder);

  static std::string content_digest(const Volume& vol);
  static std::string key(const Volume& vol, const SliceEncoder& encoder);
  std::filesystem::path entry_path(const std::string& case_id, const std::string& key) const;

  std::size_t hits() const { return hits_; }
  std::size_t misses() const { return misses_; }
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  std::atomic<std::size_t> hits_{0};
  std::atomic<std::size_t> misses_{0};
};

}  // namespace sam3d

#include <atomic>
#include <cmath>
#include <fstream>

#include "doctest.h"
#include "sam3d/encoder/embedding_cache.hpp"
#include "sam3d/encoder/encoder.hpp"
#include "sam3d/encoder/toy_encoder.hpp"
#include "sam3d/encoder/transformer.hpp"
#include "sam3d/encoder/vit_encoder.hpp"
#include "sam3d/io/rvf.hpp"
#include "test_util.hpp"

using namespace sam3d;

namespace {

class CountingEncoder final : public SliceEncoder {
 public:
  explicit CountingEncoder(const SliceEncoder& inner) : inner_(inner) {}
  Tensor<float> encode_slices(const SliceBatch& s) const override {
    ++calls;
    return inner_.encode_slices(s);
  }
  std::string digest() const override { return inner_.digest(); }
  std::size_t parameter_count() const override { return inner_.parameter_count(); }
  mutable std::atomic<int> calls{0};

 private:
  const SliceEncoder& inner_;
};

EncoderConfig toy_cfg(std::uint64_t seed) {
  EncoderConfig c;
  c.seed = seed;
  return c;
}

bool all_finite(const Tensor<float>& t) {
  return std::all_of(t.vec().begin(), t.vec().end(), [](float v) { return std::isfinite(v); });
}

// A small randomly initialized windowed ViT written in the pretrained layout.
void write_synthetic_vit(const std::filesystem::path& dir, const VitSpec& spec, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "vit.json");
    f << spec.to_json().dump();
  }
  std::uint64_t n = seed;
  auto put = [&](const std::string& name, Shape shape, double scale = 0.05) {
    rvf_write(dir / (name + ".rvf"), test::random_tensor<float>(std::move(shape), ++n, scale));
  };
  auto put_norm = [&](const std::string& p, std::size_t dim) {
    rvf_write(dir / (p + ".weight.rvf"), Tensor<float>({dim}, 1.0f));
    put(p + ".bias", {dim});
  };
  const std::size_t c = spec.embed_dim, hd = c / spec.heads;
  put("patch_embed.proj.weight", {c, 3, 16, 16}, 0.01);
  put("patch_embed.proj.bias", {c});
  put("pos_embed", {1, spec.pos_grid, spec.pos_grid, c}, 0.1);
  for (std::size_t i = 0; i < spec.depth; ++i) {
    const std::string p = "blocks." + std::to_string(i);
    const bool global = std::find(spec.global_blocks.begin(), spec.global_blocks.end(), i) != spec.global_blocks.end();
    const std::size_t span = global ? spec.pos_grid : spec.window;
    put_norm(p + ".norm1", c);
    put_norm(p + ".norm2", c);
    put(p + ".attn.qkv.weight", {3 * c, c});
    put(p + ".attn.qkv.bias", {3 * c});
    put(p + ".attn.proj.weight", {c, c});
    put(p + ".attn.proj.bias", {c});
    put(p + ".attn.rel_pos_h", {2 * span - 1, hd});
    put(p + ".attn.rel_pos_w", {2 * span - 1, hd});
    put(p + ".mlp.lin1.weight", {spec.mlp_ratio * c, c});
    put(p + ".mlp.lin1.bias", {spec.mlp_ratio * c});
    put(p + ".mlp.lin2.weight", {c, spec.mlp_ratio * c});
    put(p + ".mlp.lin2.bias", {c});
  }
  put("neck.0.weight", {256, c, 1, 1});
  put_norm("neck.1", 256);
  put("neck.2.weight", {256, 256, 3, 3}, 0.02);
  put_norm("neck.3", 256);
}

VitSpec tiny_spec() {
  VitSpec s;
  s.embed_dim = 32;
  s.depth = 2;
  s.heads = 2;
  s.mlp_ratio = 2;
  s.window = 2;
  s.global_blocks = {1};
  s.pos_grid = 4;
  return s;
}

}  // namespace

TEST_CASE("slices replicate one modality into three channels") {
  const Volume v = test::random_volume(2, {4, 32, 16}, 1);
  const SliceBatch s = split_into_slices(v, 1);
  CHECK(s.shape() == Shape{4, 3, 32, 16});
  for (std::size_t z = 0; z < 4; ++z)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t h = 0; h < 32; h += 5)
        for (std::size_t w = 0; w < 16; w += 3) CHECK(s.at(z, c, h, w) == v.data.at(1, z, h, w));
  CHECK(split_into_slices(test::random_volume(1, {1, 16, 16}, 2), 0).dim(0) == 1);
  CHECK_THROWS_AS(split_into_slices(v, 2), ShapeError);
}

TEST_CASE("embedding shape law and modality concatenation") {
  const auto enc = make_encoder(toy_cfg(0));
  CHECK(encode_volume(test::random_volume(1, {4, 64, 64}, 3), *enc).shape() == Shape{256, 4, 4, 4});
  const Volume multi = test::random_volume(4, {2, 32, 48}, 4);
  const EmbeddingVolume e = encode_volume(multi, *enc);
  CHECK(e.shape() == Shape{1024, 2, 2, 3});
  Volume second;
  second.data = Tensor<float>({1, 2, 32, 48},
                              std::vector<float>(multi.data.data() + 2 * 2 * 32 * 48, multi.data.data() + 3 * 2 * 32 * 48));
  const EmbeddingVolume e2 = encode_volume(second, *enc);
  for (std::size_t i = 0; i < e2.size(); ++i) REQUIRE(e[2 * e2.size() + i] == e2[i]);
  CHECK_THROWS_AS(encode_volume(test::random_volume(1, {2, 20, 32}, 5), *enc), ShapeError);
}

TEST_CASE("toy encoder is deterministic and seed dependent") {
  const Volume v = test::random_volume(1, {2, 32, 32}, 6);
  const EmbeddingVolume a = encode_volume(v, *make_encoder(toy_cfg(3)));
  const EmbeddingVolume b = encode_volume(v, *make_encoder(toy_cfg(3)));
  const EmbeddingVolume c = encode_volume(v, *make_encoder(toy_cfg(4)));
  CHECK(a == b);
  CHECK(all_finite(a));
  double diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(static_cast<double>(a[i]) - c[i]));
  CHECK(diff > 0.0);
  CHECK(make_encoder(toy_cfg(3))->digest() != make_encoder(toy_cfg(4))->digest());

  ToyEncoder toy(toy_cfg(3));
  const Tensor<float> single = toy.encode_slices(test::random_tensor<float>({1, 3, 32, 32}, 7));
  CHECK(single.shape() == Shape{1, 256, 2, 2});
}

TEST_CASE("zero slices give the position-encoding response") {
  ToyEncoder toy(toy_cfg(9));
  const Tensor<float> out = toy.encode_slices(Tensor<float>({1, 3, 32, 48}));
  const Tensor<float> tokens = toy.transform_tokens(vit::sinusoidal_position_encoding(2, 3, 256));
  CHECK(all_finite(out));
  for (std::size_t p = 0; p < 6; ++p)
    for (std::size_t c = 0; c < 256; ++c) REQUIRE(out[c * 6 + p] == tokens[p * 256 + c]);
}

TEST_CASE("position embedding interpolation") {
  const auto table = test::random_tensor<float>({4, 5, 8}, 10);
  CHECK(vit::interpolate_position_embeddings(table, 4, 5) == table);

  const Tensor<float> constant({3, 3, 4}, 2.5f);
  const Tensor<float> resized = vit::interpolate_position_embeddings(constant, 7, 2);
  CHECK(resized.shape() == Shape{7, 2, 4});
  for (float v : resized.vec()) CHECK(v == doctest::Approx(2.5f));

  Tensor<float> corners({2, 2, 1});
  corners[0] = 0.0f;
  corners[1] = 1.0f;
  corners[2] = 1.0f;
  corners[3] = 2.0f;
  const Tensor<float> up = vit::interpolate_position_embeddings(corners, 3, 3);
  CHECK(up.at(1, 1, 0) == doctest::Approx(1.0f));
  CHECK(up.at(0, 0, 0) == doctest::Approx(0.0f));
  CHECK(up.at(2, 2, 0) == doctest::Approx(2.0f));

  CHECK(vit::relative_positions(3, 3, test::random_tensor<float>({5, 2}, 11)).shape() == Shape{3, 3, 2});
  const auto rel = test::random_tensor<float>({5, 2}, 11);
  const Tensor<float> lookup = vit::relative_positions(3, 3, rel);
  CHECK(lookup.at(0, 0, 1) == rel.at(2, 1));
  CHECK(lookup.at(2, 0, 0) == rel.at(4, 0));
  CHECK(lookup.at(0, 2, 0) == rel.at(0, 0));
}

TEST_CASE("embedding cache semantics") {
  test::TempDir dir("cache");
  const auto enc = make_encoder(toy_cfg(0));
  CountingEncoder counting(*enc);
  const Volume v = test::random_volume(1, {2, 32, 32}, 12);
  EmbeddingCache cache(dir.path());

  const EmbeddingVolume first = cache.get_or_compute("c0", v, counting);
  const int after_first = counting.calls;
  CHECK(after_first > 0);
  const EmbeddingVolume second = cache.get_or_compute("c0", v, counting);
  CHECK(counting.calls == after_first);
  CHECK(second == first);
  CHECK(cache.hits() == 1);
  CHECK(cache.misses() == 1);

  const auto other = make_encoder(toy_cfg(1));
  CHECK(EmbeddingCache::key(v, *other) != EmbeddingCache::key(v, *enc));
  Volume changed = v;
  changed.data[0] += 1.0f;
  CHECK(EmbeddingCache::key(changed, *enc) != EmbeddingCache::key(v, *enc));

  const auto path = cache.entry_path("c0", EmbeddingCache::key(v, *enc));
  REQUIRE(std::filesystem::exists(path));
  std::filesystem::resize_file(path, std::filesystem::file_size(path) / 2);
  const EmbeddingVolume third = cache.get_or_compute("c0", v, counting);
  CHECK(counting.calls > after_first);
  CHECK(third == first);
  CHECK(cache.misses() == 2);
  CHECK(rvf_read_as<float>(path) == first);
}

TEST_CASE("pretrained ViT backend on a synthetic checkpoint") {
  test::TempDir dir("vit");
  const VitSpec spec = tiny_spec();
  write_synthetic_vit(dir.path(), spec, 100);
  EncoderConfig cfg;
  cfg.backend = EncoderBackend::kPretrainedVit;
  cfg.checkpoint_path = dir.path();
  const auto enc = make_encoder(cfg);
  CHECK(dynamic_cast<const VitEncoder&>(*enc).spec().embed_dim == 32);
  CHECK(enc->parameter_count() > 0);

  const Volume v = test::random_volume(1, {2, 32, 80}, 13);
  const EmbeddingVolume a = encode_volume(v, *enc);
  CHECK(a.shape() == Shape{256, 2, 2, 5});
  CHECK(all_finite(a));
  CHECK(encode_volume(v, *make_encoder(cfg)) == a);

  std::filesystem::remove(dir / "blocks.1.mlp.lin2.bias.rvf");
  try {
    make_encoder(cfg);
    FAIL("expected a missing-tensor error");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("blocks.1.mlp.lin2.bias") != std::string::npos);
  }
  cfg.checkpoint_path = dir / "absent";
  CHECK_THROWS_AS(make_encoder(cfg), IoError);
}

#include "sam3d/app/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "sam3d/core/error.hpp"
#include "sam3d/io/manifest.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace sam3d {
namespace {

[[noreturn]] void fail(const std::string& path, const std::string& what) { throw ValidationError(path + ": " + what); }

/// Reads keys from one JSON object, remembering which were consumed so that
/// leftovers can be reported as unknown.
class Section {
 public:
  Section(const json* obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (obj_ && !obj_->is_object()) fail(path_, "expected an object");
  }

  std::string path(const std::string& key) const { return path_ + "." + key; }

  const json* find(const std::string& key) {
    seen_.insert(key);
    if (!obj_) return nullptr;
    auto it = obj_->find(key);
    return it == obj_->end() ? nullptr : &*it;
  }

  Section child(const std::string& key) { return Section(find(key), path(key)); }

  void number(const std::string& key, double& out, double lo, double hi, bool lo_open = false) {
    if (const json* v = find(key)) {
      if (!v->is_number()) fail(path(key), "expected a number");
      const double x = v->get<double>();
      if (x < lo || x > hi || (lo_open && x == lo)) {
        fail(path(key), "value " + v->dump() + " out of range");
      }
      out = x;
    }
  }

  template <typename U>
  void integer(const std::string& key, U& out, std::uint64_t lo = 0) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) fail(path(key), "expected an integer");
      if (v->is_number_unsigned() ? v->get<std::uint64_t>() < lo : v->get<std::int64_t>() < static_cast<std::int64_t>(lo)) {
        fail(path(key), "value " + v->dump() + " must be >= " + std::to_string(lo));
      }
      out = static_cast<U>(v->get<std::uint64_t>());
    }
  }

  void boolean(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) fail(path(key), "expected a boolean");
      out = v->get<bool>();
    }
  }

  bool string(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) fail(path(key), "expected a string");
      out = v->get<std::string>();
      return true;
    }
    return false;
  }

  template <std::size_t N, typename U>
  void array(const std::string& key, std::array<U, N>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array() || v->size() != N) fail(path(key), "expected an array of " + std::to_string(N) + " numbers");
      for (std::size_t i = 0; i < N; ++i) {
        const json& e = (*v)[i];
        if constexpr (std::is_integral_v<U>) {
          if (!e.is_number_integer() || (!e.is_number_unsigned() && e.get<std::int64_t>() < 0)) fail(path(key) + "[" + std::to_string(i) + "]", "expected a non-negative integer");
        } else {
          if (!e.is_number()) fail(path(key) + "[" + std::to_string(i) + "]", "expected a number");
        }
        out[i] = e.get<U>();
      }
    }
  }

  void finish() const {
    if (!obj_) return;
    for (auto it = obj_->begin(); it != obj_->end(); ++it) {
      if (!seen_.count(it.key())) fail(path(it.key()), "unknown key");
    }
  }

 private:
  const json* obj_;
  std::string path_;
  std::set<std::string> seen_;
};

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

void parse_augment(Section s, AugmentConfig& a) {
  bool enabled = true;
  s.boolean("enabled", enabled);
  if (!enabled) a = AugmentConfig::disabled();
  s.number("p_rotation", a.p_rotation, 0, 1);
  s.number("max_rotation_deg", a.max_rotation_deg, 0, 180);
  s.number("p_scale", a.p_scale, 0, 1);
  s.number("scale_min", a.scale_min, 0, 100, true);
  s.number("scale_max", a.scale_max, 0, 100, true);
  s.number("p_brightness", a.p_brightness, 0, 1);
  s.number("brightness_min", a.brightness_min, 0, 100, true);
  s.number("brightness_max", a.brightness_max, 0, 100, true);
  s.number("p_gamma", a.p_gamma, 0, 1);
  s.number("gamma_min", a.gamma_min, 0, 100, true);
  s.number("gamma_max", a.gamma_max, 0, 100, true);
  s.number("p_mirror", a.p_mirror, 0, 1);
  if (a.scale_min > a.scale_max || a.brightness_min > a.brightness_max || a.gamma_min > a.gamma_max) {
    fail(s.path("*"), "range minimum exceeds maximum");
  }
  s.finish();
}

}  // namespace

bool RunConfig::operator==(const RunConfig& other) const { return serialize_config(*this) == serialize_config(other); }

RunConfig parse_config_json(const json& doc, const fs::path& base_dir, bool check_paths) {
  RunConfig cfg;
  Section root(&doc, "$");

  const json* version = root.find("schema_version");
  if (!version) fail("$.schema_version", "missing required key");
  if (!version->is_number_integer() || version->get<std::int64_t>() != kSchemaVersion) {
    fail("$.schema_version", "unsupported version " + version->dump() + ", expected " + std::to_string(kSchemaVersion));
  }
  root.integer("seed", cfg.seed);
  std::string out_dir;
  if (root.string("output_dir", out_dir)) cfg.output_dir = resolve(base_dir, out_dir);
  else cfg.output_dir = resolve(base_dir, cfg.output_dir.string());

  DatasetManifest manifest;
  bool have_manifest = false;
  {
    Section s = root.child("dataset");
    std::string m;
    if (s.string("manifest", m)) {
      cfg.dataset_manifest = resolve(base_dir, m);
      if (check_paths) {
        if (!fs::exists(cfg.dataset_manifest)) fail(s.path("manifest"), "file not found: " + cfg.dataset_manifest.string());
        manifest = load_manifest(cfg.dataset_manifest);
        have_manifest = true;
      }
    }
    s.finish();
  }

  {
    Section s = root.child("encoder");
    std::string backend = "toy";
    s.string("backend", backend);
    try {
      cfg.encoder.backend = backend_from_name(backend);
    } catch (const ValidationError& e) {
      fail(s.path("backend"), e.what());
    }
    cfg.encoder.seed = cfg.seed;
    s.integer("seed", cfg.encoder.seed);
    std::string ckpt;
    if (s.string("checkpoint", ckpt)) cfg.encoder.checkpoint_path = resolve(base_dir, ckpt);
    if (cfg.encoder.backend == EncoderBackend::kPretrainedVit) {
      if (cfg.encoder.checkpoint_path.empty()) fail(s.path("checkpoint"), "required for the pretrained_vit backend");
      if (check_paths && !fs::exists(cfg.encoder.checkpoint_path)) {
        fail(s.path("checkpoint"), "path not found: " + cfg.encoder.checkpoint_path.string());
      }
    }
    s.integer("toy_depth", cfg.encoder.toy_depth, 1);
    s.integer("toy_heads", cfg.encoder.toy_heads, 1);
    s.integer("toy_mlp_ratio", cfg.encoder.toy_mlp_ratio, 1);
    s.array("pixel_mean", cfg.encoder.pixel_mean);
    s.array("pixel_std", cfg.encoder.pixel_std);
    if (cfg.encoder.embed_dim % cfg.encoder.toy_heads) fail(s.path("toy_heads"), "must divide 256");
    s.finish();
  }

  std::size_t num_classes = have_manifest ? static_cast<std::size_t>(manifest.num_classes) : 2;
  {
    Section s = root.child("decoder");
    std::size_t modalities = 1;
    if (have_manifest && !manifest.cases.empty()) modalities = static_cast<std::size_t>(manifest.cases.front().modality_count);
    cfg.decoder.in_channels = kEmbedDim * modalities;
    s.integer("in_channels", cfg.decoder.in_channels, 1);
    s.integer("num_classes", num_classes, 2);
    cfg.decoder.num_classes = num_classes;
    s.array("block_channels", cfg.decoder.block_channels);
    s.number("leaky_slope", cfg.decoder.leaky_slope, 0, 1);
    s.number("norm_eps", cfg.decoder.norm_eps, 0, 1, true);
    if (have_manifest && num_classes != static_cast<std::size_t>(manifest.num_classes)) {
      fail(s.path("num_classes"), "disagrees with the manifest (" + std::to_string(manifest.num_classes) + ")");
    }
    try {
      cfg.decoder.validate();
    } catch (const ValidationError& e) {
      fail("$.decoder", e.what());
    }
    s.finish();
  }

  TrainConfig& t = cfg.train;
  t.seed = cfg.seed;
  t.loss.num_classes = num_classes;
  {
    Section s = root.child("train");
    s.integer("max_epoch", t.max_epoch, 1);
    s.integer("iters_per_epoch", t.iters_per_epoch, 1);
    s.integer("batch_size", t.batch_size, 1);
    s.array("patch_size", t.patch_size);
    s.number("foreground_probability", t.foreground_probability, 0, 1);
    s.integer("checkpoint_every", t.checkpoint_every);
    parse_augment(s.child("augment"), t.augment);
    {
      Section n = s.child("normalize");
      std::string scheme = "zscore";
      n.string("scheme", scheme);
      if (scheme == "zscore") t.normalize.scheme = NormScheme::kZScore;
      else if (scheme == "clip_zscore") t.normalize.scheme = NormScheme::kClipZScore;
      else fail(n.path("scheme"), "expected \"zscore\" or \"clip_zscore\"");
      n.number("p_low", t.normalize.p_low, 0, 100);
      n.number("p_high", t.normalize.p_high, 0, 100);
      if (t.normalize.p_low >= t.normalize.p_high) fail(n.path("p_low"), "must be below p_high");
      n.finish();
    }
    {
      Section l = s.child("loss");
      l.number("epsilon", t.loss.epsilon, 0, 1, true);
      l.boolean("include_background", t.loss.include_background);
      if (const json* w = l.find("ds_weights")) {
        if (!w->is_array() || w->empty() || w->size() > kNumStages) {
          fail(l.path("ds_weights"), "expected 1 to 3 positive numbers");
        }
        std::vector<double> ws;
        double sum = 0.0;
        for (const auto& e : *w) {
          if (!e.is_number() || !(e.get<double>() > 0.0)) fail(l.path("ds_weights"), "expected positive numbers");
          ws.push_back(e.get<double>());
          sum += ws.back();
        }
        if (std::abs(sum - 1.0) > 1e-12) {
          for (double& x : ws) x /= sum;
        }
        t.loss.ds_weights = ws;
      }
      l.finish();
    }
    s.finish();
  }
  {
    Section s = root.child("optimizer");
    s.number("init_lr", t.init_lr, 0, 10, true);
    s.number("power", t.power, 0, 100, true);
    s.number("momentum", t.sgd.momentum, 0, 0.999999);
    s.number("weight_decay", t.sgd.weight_decay, 0, 1);
    s.boolean("nesterov", t.sgd.nesterov);
    s.finish();
  }
  {
    Section s = root.child("inference");
    s.array("window", cfg.inference.window);
    s.number("overlap", cfg.inference.overlap, 0, 0.999);
    if (cfg.inference.window[1] % kPatchStride || cfg.inference.window[2] % kPatchStride) {
      fail(s.path("window"), "in-plane extents must be multiples of 16");
    }
    s.finish();
  }
  {
    Section s = root.child("metrics");
    s.boolean("write_csv", cfg.metrics.write_csv);
    s.finish();
  }
  root.finish();
  try {
    t.validate();
  } catch (const ValidationError& e) {
    fail("$.train", e.what());
  }
  return cfg;
}

RunConfig parse_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw FormatError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_config_json(doc, fs::absolute(path).parent_path());
}

json serialize_config(const RunConfig& cfg) {
  const TrainConfig& t = cfg.train;
  const AugmentConfig& a = t.augment;
  json enc = {{"backend", backend_name(cfg.encoder.backend)},
              {"seed", cfg.encoder.seed},
              {"toy_depth", cfg.encoder.toy_depth},
              {"toy_heads", cfg.encoder.toy_heads},
              {"toy_mlp_ratio", cfg.encoder.toy_mlp_ratio},
              {"pixel_mean", cfg.encoder.pixel_mean},
              {"pixel_std", cfg.encoder.pixel_std}};
  if (!cfg.encoder.checkpoint_path.empty()) enc["checkpoint"] = cfg.encoder.checkpoint_path.string();
  json doc = {
      {"schema_version", cfg.schema_version},
      {"seed", cfg.seed},
      {"output_dir", cfg.output_dir.string()},
      {"encoder", enc},
      {"decoder",
       {{"in_channels", cfg.decoder.in_channels},
        {"num_classes", cfg.decoder.num_classes},
        {"block_channels", cfg.decoder.block_channels},
        {"leaky_slope", cfg.decoder.leaky_slope},
        {"norm_eps", cfg.decoder.norm_eps}}},
      {"train",
       {{"max_epoch", t.max_epoch},
        {"iters_per_epoch", t.iters_per_epoch},
        {"batch_size", t.batch_size},
        {"patch_size", t.patch_size},
        {"foreground_probability", t.foreground_probability},
        {"checkpoint_every", t.checkpoint_every},
        {"augment",
         {{"p_rotation", a.p_rotation},
          {"max_rotation_deg", a.max_rotation_deg},
          {"p_scale", a.p_scale},
          {"scale_min", a.scale_min},
          {"scale_max", a.scale_max},
          {"p_brightness", a.p_brightness},
          {"brightness_min", a.brightness_min},
          {"brightness_max", a.brightness_max},
          {"p_gamma", a.p_gamma},
          {"gamma_min", a.gamma_min},
          {"gamma_max", a.gamma_max},
          {"p_mirror", a.p_mirror}}},
        {"normalize",
         {{"scheme", t.normalize.scheme == NormScheme::kZScore ? "zscore" : "clip_zscore"},
          {"p_low", t.normalize.p_low},
          {"p_high", t.normalize.p_high}}},
        {"loss",
         {{"epsilon", t.loss.epsilon},
          {"include_background", t.loss.include_background},
          {"ds_weights", t.loss.ds_weights}}}}},
      {"optimizer",
       {{"init_lr", t.init_lr},
        {"power", t.power},
        {"momentum", t.sgd.momentum},
        {"weight_decay", t.sgd.weight_decay},
        {"nesterov", t.sgd.nesterov}}},
      {"inference", {{"window", cfg.inference.window}, {"overlap", cfg.inference.overlap}}},
      {"metrics", {{"write_csv", cfg.metrics.write_csv}}}};
  if (!cfg.dataset_manifest.empty()) doc["dataset"] = {{"manifest", cfg.dataset_manifest.string()}};
  return doc;
}

}  // namespace sam3d

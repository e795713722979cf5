#include "sam3d/app/commands.hpp"

#include <fstream>
#include <sstream>

#include <spdlog/spdlog.h>

#include "sam3d/app/config.hpp"
#include "sam3d/app/toy_dataset.hpp"
#include "sam3d/core/error.hpp"
#include "sam3d/encoder/embedding_cache.hpp"
#include "sam3d/infer/inference.hpp"
#include "sam3d/io/manifest.hpp"
#include "sam3d/io/nifti.hpp"
#include "sam3d/io/rvf.hpp"
#include "sam3d/io/volume_ops.hpp"
#include "sam3d/kernels/kernels.hpp"
#include "sam3d/metrics/metrics.hpp"
#include "sam3d/train/checkpoint.hpp"
#include "sam3d/train/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace sam3d::cli {
namespace {

RunConfig require_config(const GlobalOptions& g) {
  if (g.config.empty()) throw ValidationError("--config is required for this command");
  return parse_config(g.config);
}

fs::path output_dir(const GlobalOptions& g, const RunConfig& cfg) { return g.output.empty() ? cfg.output_dir : g.output; }

fs::path checkpoint_dir(const GlobalOptions& g, const RunConfig& cfg) {
  if (!g.checkpoint.empty()) return g.checkpoint;
  const fs::path fin = cfg.output_dir / "checkpoint_final";
  return fs::exists(fin) ? fin : cfg.output_dir / "checkpoint_latest";
}

const DatasetManifest& require_manifest(const RunConfig& cfg, DatasetManifest& storage) {
  if (cfg.dataset_manifest.empty()) throw ValidationError("$.dataset.manifest: required for this command");
  storage = load_manifest(cfg.dataset_manifest);
  return storage;
}

bool is_manifest(const fs::path& p) { return p.extension() == ".json"; }

std::string strip_nii(std::string name) {
  for (const char* ext : {".nii.gz", ".nii", ".hdr"}) {
    const std::string e(ext);
    if (name.size() > e.size() && name.compare(name.size() - e.size(), e.size(), e) == 0) {
      return name.substr(0, name.size() - e.size());
    }
  }
  return name;
}

}  // namespace

void apply_runtime(const GlobalOptions& g) {
  kernels::set_num_threads(g.deterministic ? 1 : std::max(1u, g.threads));
  if (g.isa == "scalar") {
    kernels::set_isa(kernels::Isa::kScalar);
  } else if (g.isa == "avx2") {
    kernels::set_isa(kernels::Isa::kAvx2);
  } else if (g.isa == "auto") {
    kernels::set_isa(kernels::best_isa());
  } else {
    throw ValidationError("--isa must be auto, scalar or avx2");
  }
}

Extent3 parse_shape(const std::string& text) {
  Extent3 e{};
  std::stringstream ss(text);
  std::string part;
  std::size_t i = 0;
  while (std::getline(ss, part, ',')) {
    if (i == 3) throw ValidationError("shape '" + text + "' must have three comma-separated extents");
    try {
      std::size_t used = 0;
      const long v = std::stol(part, &used);
      if (used != part.size() || v <= 0) throw std::invalid_argument(part);
      e[i++] = static_cast<std::size_t>(v);
    } catch (const std::logic_error&) {
      throw ValidationError("shape '" + text + "' has an invalid extent '" + part + "'");
    }
  }
  if (i != 3) throw ValidationError("shape '" + text + "' must have three comma-separated extents");
  return e;
}

std::string error_line(const std::exception& e) {
  const auto* se = dynamic_cast<const Error*>(&e);
  return json{{"error", se ? se->kind() : "internal"}, {"message", e.what()}}.dump();
}

json cmd_train(const GlobalOptions& g, const TrainArgs& a) {
  const RunConfig cfg = require_config(g);
  DatasetManifest storage;
  const DatasetManifest& manifest = require_manifest(cfg, storage);
  const fs::path out = output_dir(g, cfg);
  TrainOptions opts;
  opts.cache_dir = g.cache_dir;
  opts.prefetch = g.deterministic ? 0 : a.prefetch;
  opts.stop_after_epoch = a.stop_after_epoch;
  if (a.resume) opts.resume_from = g.checkpoint.empty() ? out / "checkpoint_latest" : g.checkpoint;
  fs::create_directories(out);
  {
    std::ofstream(out / "config.json") << serialize_config(cfg).dump(2) << "\n";
  }
  const TrainResult r = run_training(manifest, cfg.encoder, cfg.decoder, cfg.train, out, opts);
  return {{"command", "train"},
          {"iterations", r.iterations.size()},
          {"epoch", r.state.epoch},
          {"final_loss", r.iterations.empty() ? json(nullptr) : json(r.iterations.back().loss)},
          {"output", out.string()}};
}

json cmd_predict(const GlobalOptions& g, const PredictArgs& a) {
  const RunConfig cfg = require_config(g);
  const fs::path out = g.output.empty() ? cfg.output_dir / "predictions" : g.output;
  const Decoder<float> dec = load_decoder(checkpoint_dir(g, cfg));
  const auto encoder = make_encoder(cfg.encoder);

  std::vector<std::pair<std::string, fs::path>> inputs;
  fs::path input = g.input.empty() ? cfg.dataset_manifest : g.input;
  if (input.empty()) throw ValidationError("--input is required (NIfTI image or manifest .json)");
  bool to_dir = true;
  if (is_manifest(input)) {
    for (const auto& c : load_manifest(input).cases) inputs.emplace_back(c.case_id, c.image);
  } else {
    inputs.emplace_back(strip_nii(input.filename().string()), input);
    to_dir = !(out.string().ends_with(".nii") || out.string().ends_with(".nii.gz"));
  }
  if (to_dir) fs::create_directories(out);

  json written = json::array();
  for (const auto& [id, path] : inputs) {
    const NiftiImage img = read_nifti(path);
    if (img.volume.modalities() * kEmbedDim != dec.config().in_channels) {
      throw ShapeError("case " + id + ": " + std::to_string(img.volume.modalities()) +
                       " modalities do not match the decoder input channels");
    }
    const Volume norm = normalize_intensity(img.volume, cfg.train.normalize);
    const Tensor<float> probs = sliding_window_predict(norm, *encoder, dec, cfg.inference);
    const LabelVolume seg = argmax_segmentation(probs);
    const fs::path dst = to_dir ? out / (id + ".nii.gz") : out;
    write_nifti_labels(dst, seg, img.volume.spacing, img.volume.origin, &img.header);
    if (a.probabilities) {
      const fs::path pp = to_dir ? out / (id + "_probs.rvf") : fs::path(strip_nii(out.string()) + "_probs.rvf");
      rvf_write(pp, probs, {{"case_id", id}});
    }
    written.push_back({{"case_id", id}, {"prediction", dst.string()}});
    spdlog::info("predicted {}", id);
  }
  return {{"command", "predict"}, {"cases", written}};
}

json cmd_evaluate(const GlobalOptions& g) {
  const RunConfig cfg = require_config(g);
  DatasetManifest storage;
  const DatasetManifest& manifest = require_manifest(cfg, storage);
  const fs::path pred_dir = g.input.empty() ? output_dir(g, cfg) / "predictions" : g.input;
  const fs::path out = g.output.empty() ? output_dir(g, cfg) : g.output;
  fs::create_directories(out);

  EvaluationReport report;
  report.num_classes = manifest.num_classes;
  for (const CaseEntry& c : manifest.cases) {
    const fs::path pp = pred_dir / (c.case_id + ".nii.gz");
    if (!fs::exists(pp)) throw IoError("case " + c.case_id + ": prediction not found at " + pp.string());
    const NiftiImage gt_img = read_nifti(c.label);
    const LabelVolume gt = read_nifti_labels(c.label, manifest.num_classes);
    const LabelVolume pred = read_nifti_labels(pp, manifest.num_classes);
    if (pred.labels.shape() != gt.labels.shape()) {
      throw ValidationError("case " + c.case_id + ": prediction shape " + shape_str(pred.labels.shape()) +
                            " differs from label shape " + shape_str(gt.labels.shape()));
    }
    CaseMetrics m = evaluate_volume(pred, gt, gt_img.volume.spacing, manifest.num_classes);
    m.case_id = c.case_id;
    report.cases.push_back(std::move(m));
  }
  const json j = report.to_json();
  std::ofstream(out / "evaluation.json") << j.dump(2) << "\n";
  if (cfg.metrics.write_csv) std::ofstream(out / "evaluation.csv") << report.to_csv();
  return {{"command", "evaluate"}, {"mean_dsc", j.at("mean_dsc")}, {"report", (out / "evaluation.json").string()}};
}

json cmd_extract_embeddings(const GlobalOptions& g) {
  const RunConfig cfg = require_config(g);
  DatasetManifest storage;
  const DatasetManifest& manifest = require_manifest(cfg, storage);
  const fs::path dir = g.cache_dir.empty() ? output_dir(g, cfg) / "cache" : g.cache_dir;
  EmbeddingCache cache(dir);
  const auto encoder = make_encoder(cfg.encoder);
  json entries = json::array();
  for (const CaseEntry& c : manifest.cases) {
    const Volume vol = normalize_intensity(read_nifti(c.image).volume, cfg.train.normalize);
    const EmbeddingVolume emb = cache.get_or_compute(c.case_id, vol, *encoder);
    entries.push_back({{"case_id", c.case_id},
                       {"path", cache.entry_path(c.case_id, EmbeddingCache::key(vol, *encoder)).string()},
                       {"shape", emb.shape()}});
  }
  return {{"command", "extract-embeddings"},
          {"entries", entries},
          {"hits", cache.hits()},
          {"misses", cache.misses()}};
}

json cmd_count_params(const GlobalOptions& g, const CountArgs& a) {
  DecoderConfig dc = g.config.empty() ? DecoderConfig::for_modalities(a.modalities, a.classes)
                                      : require_config(g).decoder;
  const ParameterCount pc = count_parameters(dc);
  const Decoder<float> dec(dc);
  const std::size_t allocated = dec.params().element_count();
  json layers = json::array();
  for (const auto& [name, n] : pc.per_layer) layers.push_back({{"layer", name}, {"params", n}});
  if (allocated != pc.total) {
    throw Error("closed-form count " + std::to_string(pc.total) + " != allocated " + std::to_string(allocated));
  }
  return {{"command", "count-params"},
          {"decoder", dc.to_json()},
          {"closed_form", pc.total},
          {"allocated", allocated},
          {"match", true},
          {"per_layer", layers}};
}

json cmd_make_toy_dataset(const GlobalOptions& g, const ToyArgs& a) {
  if (g.output.empty()) throw ValidationError("--output is required for make-toy-dataset");
  const DatasetManifest m = generate_toy_dataset(g.output, a.cases, a.shape, a.classes, a.seed);
  return {{"command", "make-toy-dataset"},
          {"manifest", (g.output / "manifest.json").string()},
          {"cases", m.cases.size()}};
}

}  // namespace sam3d::cli

#include "sam3d/train/checkpoint.hpp"

#include <fstream>

#include "sam3d/core/error.hpp"
#include "sam3d/io/rvf.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace sam3d {
namespace {

constexpr const char* kFormat = "sam3d-checkpoint";
constexpr int kVersion = 1;

json read_manifest(const fs::path& dir) {
  const fs::path path = dir / "manifest.json";
  std::ifstream in(path);
  if (!in) throw IoError("checkpoint: cannot open " + path.string());
  json m;
  try {
    in >> m;
  } catch (const json::exception& e) {
    throw FormatError("checkpoint: malformed manifest.json: " + std::string(e.what()));
  }
  if (m.value("format", "") != kFormat) throw FormatError("checkpoint: " + path.string() + " is not a checkpoint");
  if (m.value("version", 0) != kVersion) throw UnsupportedError("checkpoint: unsupported version");
  return m;
}

Tensor<float> read_tensor(const fs::path& dir, const json& entry, const Shape& want) {
  const std::string name = entry.at("name");
  const fs::path file = dir / entry.at("file").get<std::string>();
  if (!fs::exists(file)) throw IoError("checkpoint: missing tensor '" + name + "' (" + file.string() + ")");
  Tensor<float> t = rvf_read_as<float>(file);
  if (t.shape() != want) {
    throw ShapeError("checkpoint: tensor '" + name + "' has shape " + shape_str(t.shape()) + ", expected " +
                     shape_str(want));
  }
  return t;
}

const json& find_entry(const json& tensors, const std::string& name, const std::string& role) {
  for (const auto& e : tensors) {
    if (e.at("name") == name && e.at("role") == role) return e;
  }
  throw IoError("checkpoint: missing tensor '" + name + "' (" + role + ") in manifest");
}

}  // namespace

void save_checkpoint(const fs::path& dir, const TrainingState& state) {
  const fs::path tmp = dir.string() + ".tmp";
  std::error_code ec;
  fs::remove_all(tmp, ec);
  fs::create_directories(tmp / "params");
  fs::create_directories(tmp / "velocity");

  const auto& params = state.decoder.params();
  json tensors = json::array();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    const std::string pf = "params/" + p.name + ".rvf";
    rvf_write(tmp / pf, p.value, {{"name", p.name}});
    tensors.push_back({{"name", p.name}, {"role", "param"}, {"file", pf}, {"shape", p.value.shape()}});
    if (i < state.optimizer.velocity.size()) {
      const std::string vf = "velocity/" + p.name + ".rvf";
      rvf_write(tmp / vf, state.optimizer.velocity[i], {{"name", p.name}});
      tensors.push_back({{"name", p.name}, {"role", "velocity"}, {"file", vf}, {"shape", p.value.shape()}});
    }
  }
  json m = {{"format", kFormat},
            {"version", kVersion},
            {"epoch", state.epoch},
            {"iteration", state.iteration},
            {"digests",
             {{"decoder", state.digests.decoder}, {"encoder", state.digests.encoder}, {"train", state.digests.train}}},
            {"decoder_config", state.decoder.config().to_json()},
            {"configs", state.configs},
            {"tensors", tensors}};
  {
    std::ofstream out(tmp / "manifest.json");
    out << m.dump(2) << "\n";
    if (!out) throw IoError("checkpoint: failed to write manifest in " + tmp.string());
  }
  fs::remove_all(dir, ec);
  fs::rename(tmp, dir);
}

TrainingState load_checkpoint(const fs::path& dir) {
  const json m = read_manifest(dir);
  TrainingState st{Decoder<float>(DecoderConfig::from_json(m.at("decoder_config"))), {}, 0, 0, {}, {}};
  st.epoch = m.at("epoch").get<std::size_t>();
  st.iteration = m.at("iteration").get<std::size_t>();
  const json& d = m.at("digests");
  st.digests = {d.value("decoder", ""), d.value("encoder", ""), d.value("train", "")};
  st.configs = m.value("configs", json::object());
  const json& tensors = m.at("tensors");
  auto& params = st.decoder.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    p.value = read_tensor(dir, find_entry(tensors, p.name, "param"), p.value.shape());
    st.optimizer.velocity.push_back(read_tensor(dir, find_entry(tensors, p.name, "velocity"), p.value.shape()));
  }
  return st;
}

Decoder<float> load_decoder(const fs::path& dir) {
  const json m = read_manifest(dir);
  Decoder<float> dec(DecoderConfig::from_json(m.at("decoder_config")));
  const json& tensors = m.at("tensors");
  for (auto& p : dec.params()) p.value = read_tensor(dir, find_entry(tensors, p.name, "param"), p.value.shape());
  return dec;
}

void require_matching_digests(const CheckpointDigests& saved, const CheckpointDigests& live) {
  std::string diff;
  if (saved.decoder != live.decoder) diff += " decoder";
  if (saved.encoder != live.encoder) diff += " encoder";
  if (saved.train != live.train) diff += " train";
  if (!diff.empty()) throw ValidationError("checkpoint: refusing to resume, config digest differs for:" + diff);
}

}  // namespace sam3d

#include "sam3d/io/manifest.hpp"

#include <fstream>
#include <set>

#include "json.hpp"
#include "sam3d/core/error.hpp"

namespace sam3d {

using nlohmann::json;

void DatasetManifest::validate() const {
  if (cases.empty()) throw ValidationError("manifest lists no cases");
  if (num_classes < 2 || num_classes > 256) throw ValidationError("manifest num_classes must be in [2, 256]");
  if (patch_size[0] == 0 || patch_size[1] == 0 || patch_size[2] == 0) {
    throw ValidationError("manifest patch_size must be positive");
  }
  if (patch_size[1] % 16 != 0 || patch_size[2] % 16 != 0) {
    throw ValidationError("manifest patch_size " + extent_str(patch_size) + ": H and W must be multiples of 16");
  }
  std::set<std::string> ids;
  for (const CaseEntry& c : cases) {
    if (!ids.insert(c.case_id).second) throw ValidationError("duplicate case_id '" + c.case_id + "'");
    if (c.modality_count != cases.front().modality_count) {
      throw ValidationError("case '" + c.case_id + "' has modality_count " + std::to_string(c.modality_count) +
                            ", expected " + std::to_string(cases.front().modality_count));
    }
    if (c.split != "train" && c.split != "validation") {
      throw ValidationError("case '" + c.case_id + "' has unknown split '" + c.split + "'");
    }
  }
}

std::vector<CaseEntry> DatasetManifest::cases_in(const std::string& split) const {
  std::vector<CaseEntry> out;
  for (const CaseEntry& c : cases) {
    if (c.split == split) out.push_back(c);
  }
  return out;
}

const CaseEntry& DatasetManifest::find(const std::string& case_id) const {
  for (const CaseEntry& c : cases) {
    if (c.case_id == case_id) return c;
  }
  throw ValidationError("manifest has no case '" + case_id + "'");
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
  const std::filesystem::path root = path.parent_path();
  DatasetManifest m;
  try {
    const json j = json::parse(in);
    m.num_classes = j.at("num_classes").get<int>();
    const auto patch = j.at("patch_size").get<std::vector<std::size_t>>();
    if (patch.size() != 3) throw ValidationError("manifest patch_size must have three entries (D, H, W)");
    m.patch_size = {patch[0], patch[1], patch[2]};
    for (const json& c : j.at("cases")) {
      CaseEntry e;
      e.case_id = c.at("case_id").get<std::string>();
      e.image = root / c.at("image").get<std::string>();
      e.label = c.contains("label") ? root / c.at("label").get<std::string>() : std::filesystem::path{};
      e.modality_count = c.value("modality_count", 1);
      e.split = c.value("split", std::string("train"));
      m.cases.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw FormatError("manifest '" + path.string() + "': " + e.what());
  }
  m.validate();
  return m;
}

void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  const std::filesystem::path root = path.parent_path();
  auto rel = [&](const std::filesystem::path& p) {
    return p.empty() ? std::string{} : std::filesystem::relative(p, root.empty() ? "." : root).generic_string();
  };
  json cases = json::array();
  for (const CaseEntry& c : manifest.cases) {
    json e = {{"case_id", c.case_id},
              {"image", rel(c.image)},
              {"modality_count", c.modality_count},
              {"split", c.split}};
    if (!c.label.empty()) e["label"] = rel(c.label);
    cases.push_back(std::move(e));
  }
  const json j = {{"num_classes", manifest.num_classes},
                  {"patch_size", {manifest.patch_size[0], manifest.patch_size[1], manifest.patch_size[2]}},
                  {"cases", cases}};
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest '" + path.string() + "'");
  out << j.dump(2) << "\n";
}

}  // namespace sam3d

#include "vdcnet/manifest.hpp"

#include <fstream>

#include <json.hpp>

#include "vdcnet/errors.hpp"

namespace vdcnet {

using nlohmann::json;

std::size_t DatasetManifest::count_label(int label) const {
  std::size_t n = 0;
  for (const auto& r : records) n += r.label == label;
  return n;
}

std::vector<ManifestRecord> DatasetManifest::usable() const {
  std::vector<ManifestRecord> out;
  for (const auto& r : records)
    if (!r.discarded && r.flag.empty()) out.push_back(r);
  return out;
}

namespace {

json to_json(const ManifestRecord& r) {
  json j;
  j["id"] = r.id;
  j["path"] = r.path;
  j["label"] = r.label;
  j["parent_id"] = r.parent_id;
  j["quadrant"] = r.quadrant;
  j["split"] = r.split;
  if (!r.mask_path.empty()) j["mask_path"] = r.mask_path;
  if (r.discarded) j["discarded"] = true;
  if (!r.flag.empty()) j["flag"] = r.flag;
  if (r.bbox) {
    j["bbox"] = {{"cx", r.bbox->cx},
                 {"cy", r.bbox->cy},
                 {"width", r.bbox->width},
                 {"height", r.bbox->height},
                 {"source", to_string(r.bbox->source)}};
  }
  return j;
}

ManifestRecord from_json(const json& j) {
  ManifestRecord r;
  r.id = j.at("id").get<std::string>();
  r.path = j.at("path").get<std::string>();
  r.label = j.at("label").get<int>();
  if (r.label != 0 && r.label != 1) throw DataError("record " + r.id + " has non-binary label");
  r.parent_id = j.value("parent_id", r.id);
  r.quadrant = j.value("quadrant", -1);
  r.split = j.value("split", "");
  r.mask_path = j.value("mask_path", "");
  r.discarded = j.value("discarded", false);
  r.flag = j.value("flag", "");
  if (j.contains("bbox")) {
    const json& b = j["bbox"];
    r.bbox = BBox{b.at("cx").get<double>(), b.at("cy").get<double>(), b.at("width").get<double>(),
                  b.at("height").get<double>(), parse_box_source(b.value("source", "annotation"))};
  }
  return r;
}

}  // namespace

void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw IoError("cannot write manifest " + path.string());
  f << json{{"manifest_version", 1}, {"seed", m.seed}, {"config_hash", m.config_hash}}.dump() << '\n';
  for (const auto& r : m.records) f << to_json(r).dump() << '\n';
  if (!f) throw IoError("failed writing manifest " + path.string());
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open manifest " + path.string());
  DatasetManifest m;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      if (j.contains("manifest_version")) {
        m.seed = j.value("seed", std::uint64_t{0});
        m.config_hash = j.value("config_hash", "");
        continue;
      }
      m.records.push_back(from_json(j));
    } catch (const json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return m;
}

std::filesystem::path resolve_path(const std::filesystem::path& manifest_path, const std::string& relative) {
  const std::filesystem::path p(relative);
  if (p.is_absolute()) return p;
  return manifest_path.parent_path() / p;
}

std::string provenance_comment(std::uint64_t seed, const std::string& config_hash) {
  return "seed=" + std::to_string(seed) + " config_hash=" + (config_hash.empty() ? "none" : config_hash);
}

}  // namespace vdcnet

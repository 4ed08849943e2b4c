#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "vdcnet/imaging.hpp"

namespace vdcnet {

struct ManifestRecord {
  std::string id;
  std::string path;  // relative to the manifest's directory unless absolute
  int label = 0;     // 0 undamaged, 1 damaged
  std::optional<BBox> bbox;
  std::string parent_id;  // equals id for whole images
  int quadrant = -1;      // 0..3 for tiles (TL, TR, BL, BR)
  std::string split;      // "", "train", "val", "test"
  std::string mask_path;
  bool discarded = false;
  std::string flag;  // e.g. "no_pillar"

  bool operator==(const ManifestRecord&) const = default;
};

struct DatasetManifest {
  std::uint64_t seed = 0;
  std::string config_hash;
  std::vector<ManifestRecord> records;

  std::size_t count_label(int label) const;
  // Records that are neither discarded nor flagged.
  std::vector<ManifestRecord> usable() const;
};

// One JSON object per line; the first line is a header carrying seed and
// config hash. Keys are written sorted so identical manifests are identical bytes.
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest read_manifest(const std::filesystem::path& path);

// "seed=<seed> config_hash=<hash>", embedded in image headers.
std::string provenance_comment(std::uint64_t seed, const std::string& config_hash);

std::filesystem::path resolve_path(const std::filesystem::path& manifest_path, const std::string& relative);

}  // namespace vdcnet

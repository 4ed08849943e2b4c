#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "vdcnet/imaging.hpp"
#include "vdcnet/manifest.hpp"

namespace vdcnet {

struct PreprocessConfig {
  std::size_t crop_size = 700;
  std::size_t tile = 352;
  BoxSource box_source = BoxSource::detector;
  DetectorParams detector;
  std::filesystem::path annotations;  // VIA export, needed for BoxSource::annotation

  void validate() const;  // throws ConfigError
};

struct PreprocessSummary {
  std::size_t images = 0, tiles = 0, no_pillar = 0;
};

// Locates (or looks up) each pillar, crops around it, splits the crop into
// four tiles and writes tiles/, tile masks and tiles.jsonl under out_dir.
// Images where no pillar is found keep a whole-image record flagged
// "no_pillar" and produce no tiles. Records of the input that are already
// discarded are skipped.
PreprocessSummary preprocess_dataset(const DatasetManifest& input, const std::filesystem::path& input_manifest,
                                     const std::filesystem::path& out_dir, const PreprocessConfig& config);

inline constexpr const char* kTileManifestName = "tiles.jsonl";
inline constexpr const char* kNoPillarFlag = "no_pillar";

}  // namespace vdcnet

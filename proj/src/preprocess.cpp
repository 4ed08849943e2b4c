#include "vdcnet/preprocess.hpp"

#include <exception>
#include <optional>
#include <vector>

#include "vdcnet/errors.hpp"

namespace vdcnet {

void PreprocessConfig::validate() const {
  if (crop_size == 0 || crop_size % 2 != 0) throw ConfigError("crop size must be even and positive");
  if (tile > crop_size || 2 * tile < crop_size) {
    throw ConfigError("tile " + std::to_string(tile) + " cannot cover a " + std::to_string(crop_size) + " crop with 4 tiles");
  }
  if (box_source == BoxSource::annotation && annotations.empty()) {
    throw ConfigError("annotation box source needs an annotation file");
  }
}

namespace {

struct ImageOutcome {
  std::vector<ManifestRecord> records;
  bool no_pillar = false;
};

ImageOutcome process_one(const ManifestRecord& r, const std::filesystem::path& input_manifest,
                         const std::filesystem::path& out_dir, const PreprocessConfig& config,
                         const std::map<std::string, BBox>& annotations, const std::string& tag) {
  ImageOutcome out;
  const auto image_path = resolve_path(input_manifest, r.path);
  const Image image = load_image(image_path);
  std::optional<BBox> box;
  switch (config.box_source) {
    case BoxSource::truth:
      if (!r.bbox) throw DataError("record " + r.id + " has no box for the truth box source");
      box = r.bbox;
      break;
    case BoxSource::annotation: {
      const auto it = annotations.find(image_path.filename().string());
      if (it == annotations.end()) throw DataError("no annotation for " + image_path.filename().string());
      box = it->second;
      break;
    }
    case BoxSource::detector:
      try {
        box = locate_pillar(image, config.detector);
      } catch (const NoPillarFound&) {
      }
      break;
  }
  if (!box) {
    ManifestRecord flagged = r;
    flagged.flag = kNoPillarFlag;
    out.records.push_back(flagged);
    out.no_pillar = true;
    return out;
  }

  const Image crop = crop_centered(image, *box, config.crop_size);
  const QuadrantSet q = quadrant_split(crop, config.tile, r.id, r.label);
  std::optional<std::array<GrayImage, 4>> mask_tiles;
  if (!r.mask_path.empty()) {
    const GrayImage mask = load_gray(resolve_path(input_manifest, r.mask_path));
    mask_tiles = quadrant_split(crop_centered(mask, *box, config.crop_size), config.tile);
  }
  for (int k = 0; k < 4; ++k) {
    ManifestRecord t;
    t.id = r.id + "_q" + std::to_string(k);
    t.path = "tiles/" + t.id + ".ppm";
    t.label = r.label;
    t.bbox = box;
    t.parent_id = r.id;
    t.quadrant = k;
    save_image(q.tiles[std::size_t(k)], out_dir / t.path, tag);
    if (mask_tiles) {
      t.mask_path = "tiles/" + t.id + "_mask.pgm";
      save_gray((*mask_tiles)[std::size_t(k)], out_dir / t.mask_path, tag);
    }
    out.records.push_back(std::move(t));
  }
  return out;
}

}  // namespace

PreprocessSummary preprocess_dataset(const DatasetManifest& input, const std::filesystem::path& input_manifest,
                                     const std::filesystem::path& out_dir, const PreprocessConfig& config) {
  config.validate();
  std::map<std::string, BBox> annotations;
  if (config.box_source == BoxSource::annotation) annotations = read_via_annotations(config.annotations);
  std::filesystem::create_directories(out_dir / "tiles");
  const std::string tag = provenance_comment(input.seed, input.config_hash);

  std::vector<const ManifestRecord*> todo;
  for (const auto& r : input.records)
    if (!r.discarded) todo.push_back(&r);
  std::vector<ImageOutcome> outcomes(todo.size());
  std::vector<std::exception_ptr> errors(todo.size());
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < long(todo.size()); ++i) {
    try {
      outcomes[std::size_t(i)] = process_one(*todo[std::size_t(i)], input_manifest, out_dir, config, annotations, tag);
    } catch (...) {
      errors[std::size_t(i)] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  DatasetManifest tiles;
  tiles.seed = input.seed;
  tiles.config_hash = input.config_hash;
  PreprocessSummary summary;
  for (auto& o : outcomes) {
    ++summary.images;
    if (o.no_pillar) ++summary.no_pillar;
    for (auto& rec : o.records) {
      if (rec.quadrant >= 0) ++summary.tiles;
      tiles.records.push_back(std::move(rec));
    }
  }
  write_manifest(tiles, out_dir / kTileManifestName);
  return summary;
}

}  // namespace vdcnet

#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include <json.hpp>

#include "vdcnet/config.hpp"

namespace vdcnet {

// One run directory bound to one configuration. Every command reads and
// writes under run_dir; reruns with the same config and seed rewrite
// byte-identical artifacts.
//
//   config.ini            snapshot; a different config in an existing run is an error
//   data/                 synth: images/, masks/, manifest.jsonl, truth.jsonl
//   tiles/                preprocess: tiles/, tiles.jsonl
//   split.json            train/test tile ids
//   train/                weights.bin, weights.json, history.jsonl, metrics.json, scores.jsonl
//   crossval/fold_<k>/    same per fold; crossval/report.json
//   evaluate/metrics.json
//   cam/<method>/         overlays/, native/, energy.jsonl, contact_sheet.ppm, summary.json
//   benchmark/cam_timing.json
//   preview/augment_sheet.ppm
class Runner {
 public:
  Runner(RunConfig config, std::filesystem::path run_dir, std::ostream* log = nullptr);

  const RunConfig& config() const noexcept { return config_; }
  const std::string& hash() const noexcept { return hash_; }
  const std::filesystem::path& run_dir() const noexcept { return run_dir_; }
  void set_jobs(int jobs) { jobs_ = jobs < 1 ? 1 : jobs; }

  // Each returns the command's summary object (seed and config hash included).
  nlohmann::ordered_json synth();
  nlohmann::ordered_json preprocess();
  nlohmann::ordered_json train();
  nlohmann::ordered_json crossval();
  nlohmann::ordered_json evaluate();
  nlohmann::ordered_json cam(CamMethod method, bool all_tiles = false);
  nlohmann::ordered_json benchmark_cam(std::size_t samples = 8);
  nlohmann::ordered_json augment_preview(std::size_t samples = 6, std::size_t variants = 6);

  std::filesystem::path data_manifest() const { return run_dir_ / "data" / "manifest.jsonl"; }
  std::filesystem::path tile_manifest() const { return run_dir_ / "tiles" / kTileManifestName; }
  std::filesystem::path train_dir() const { return run_dir_ / "train"; }

  // Usable tile records and the parent-grouped train/test split over them.
  struct SplitTiles {
    std::vector<ManifestRecord> records;
    std::vector<std::size_t> train, test;
  };
  SplitTiles split_tiles();

  nlohmann::ordered_json stamp() const;  // {"seed": .., "config_hash": ..}

 private:
  void snapshot_config();
  void log(const std::string& line) const;
  std::uint64_t seed_for(const std::string& purpose, std::uint64_t index = 0) const;

  RunConfig config_;
  std::filesystem::path run_dir_;
  std::ostream* log_;
  std::string hash_;
  int jobs_ = 1;
};

void write_json(const nlohmann::ordered_json& j, const std::filesystem::path& path);
nlohmann::ordered_json read_json(const std::filesystem::path& path);

}  // namespace vdcnet

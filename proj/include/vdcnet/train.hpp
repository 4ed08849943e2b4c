#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "vdcnet/augment.hpp"
#include "vdcnet/callbacks.hpp"
#include "vdcnet/manifest.hpp"
#include "vdcnet/metrics.hpp"
#include "vdcnet/model.hpp"

namespace vdcnet {

// In-memory tiles with labels; masks are optional (empty vector if absent).
struct TileSet {
  std::vector<std::string> ids;
  std::vector<Image> images;
  std::vector<int> labels;
  std::vector<GrayImage> masks;

  std::size_t size() const noexcept { return images.size(); }
  TileSet subset(const std::vector<std::size_t>& indices) const;
};

// Loads every usable record; masks are read when present and requested.
TileSet load_tiles(const std::vector<ManifestRecord>& records, const std::filesystem::path& manifest_path,
                   bool with_masks = false);

struct TrainConfig {
  CallbackConfig callbacks;
  std::size_t batch_size = 6;
  bool augment = true;
  AugmentConfig augmentation;
  std::uint64_t seed = 0;
  std::size_t eval_batch = 32;

  void validate() const;  // throws ConfigError
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0, val_loss = 0, lr = 0;
  bool improved = false;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_val_loss = 0;
  bool stopped_early = false;
  std::string abort_reason;  // non-empty if a non-finite loss ended training
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Shuffled mini-batches with per-sample augmentation streams derived from
// (seed, sample id, epoch); validation loss in infer mode after each epoch;
// on return the session holds the weights of the best validation epoch.
TrainResult train_model(Session& session, const TileSet& train, const TileSet& val, const TrainConfig& config,
                        const EpochCallback& on_epoch = {});

// Infer-mode class-1 probabilities.
std::vector<double> predict(Session& session, const TileSet& tiles, std::size_t batch = 32);

MetricsReport evaluate_model(Session& session, const TileSet& tiles, std::size_t batch = 32);

nlohmann::ordered_json to_json(const EpochRecord& record);

struct FoldSummary {
  std::size_t fold = 0;
  int epochs = 0;  // epochs actually run
  int best_epoch = 0;
  MetricsReport test;
};

// Per-fold rows plus mean epochs, min AUC, FN@95 mean/max, FP@10 mean/max,
// mean precision at full recall, min accuracy and mean loss.
nlohmann::ordered_json crossval_report(const std::vector<FoldSummary>& folds);

}  // namespace vdcnet

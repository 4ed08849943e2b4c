#include "vdcnet/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>

#include "vdcnet/errors.hpp"
#include "vdcnet/optimizer.hpp"
#include "vdcnet/rng.hpp"

namespace vdcnet {

TileSet TileSet::subset(const std::vector<std::size_t>& indices) const {
  TileSet out;
  for (std::size_t i : indices) {
    out.ids.push_back(ids.at(i));
    out.images.push_back(images.at(i));
    out.labels.push_back(labels.at(i));
    if (!masks.empty()) out.masks.push_back(masks.at(i));
  }
  return out;
}

TileSet load_tiles(const std::vector<ManifestRecord>& records, const std::filesystem::path& manifest_path,
                   bool with_masks) {
  TileSet t;
  for (const auto& r : records) {
    if (r.discarded || !r.flag.empty()) continue;
    t.ids.push_back(r.id);
    t.images.push_back(load_image(resolve_path(manifest_path, r.path)));
    t.labels.push_back(r.label);
    if (with_masks) {
      if (r.mask_path.empty()) {
        t.masks.emplace_back(t.images.back().width, t.images.back().height);
      } else {
        t.masks.push_back(load_gray(resolve_path(manifest_path, r.mask_path)));
      }
    }
  }
  return t;
}

void TrainConfig::validate() const {
  callbacks.validate();
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (eval_batch == 0) throw ConfigError("evaluation batch size must be positive");
  try {
    augmentation.validate();
  } catch (const ArgumentError& e) {
    throw ConfigError(e.what());
  }
}

namespace {

Tensor<float> batch_tensor(const TileSet& tiles, const std::size_t* idx, std::size_t n, const TrainConfig* aug,
                           int epoch) {
  std::vector<Image> holder;
  std::vector<const Image*> ptrs;
  holder.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t i = idx[k];
    if (aug) {
      Rng rng = augment_stream(aug->seed, fnv1a(tiles.ids[i]), std::uint64_t(epoch));
      holder.push_back(augment(tiles.images[i], tiles.labels[i], aug->augmentation, rng).image);
      ptrs.push_back(&holder.back());
    } else {
      ptrs.push_back(&tiles.images[i]);
    }
  }
  return to_tensor(ptrs);
}

Tensor<float> label_tensor(const TileSet& tiles, const std::size_t* idx, std::size_t n) {
  Tensor<float> y({n, 1});
  for (std::size_t k = 0; k < n; ++k) y[k] = float(tiles.labels[idx[k]]);
  return y;
}

}  // namespace

std::vector<double> predict(Session& session, const TileSet& tiles, std::size_t batch) {
  std::vector<double> out;
  out.reserve(tiles.size());
  std::vector<std::size_t> idx(tiles.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t start = 0; start < tiles.size(); start += batch) {
    const std::size_t n = std::min(batch, tiles.size() - start);
    Tape<float> tape;
    tape.set_accumulate_parameters(false);
    const auto r = session.forward(tape, batch_tensor(tiles, idx.data() + start, n, nullptr, 0), Mode::infer);
    for (float p : tape.value(r.probs).values()) out.push_back(double(p));
  }
  return out;
}

MetricsReport evaluate_model(Session& session, const TileSet& tiles, std::size_t batch) {
  if (tiles.size() == 0) throw ArgumentError("evaluation set is empty");
  const auto scores = predict(session, tiles, batch);
  return evaluate_scores(scores, tiles.labels);
}

TrainResult train_model(Session& session, const TileSet& train, const TileSet& val, const TrainConfig& config,
                        const EpochCallback& on_epoch) {
  config.validate();
  if (train.size() == 0 || val.size() == 0) throw ArgumentError("training and validation sets must be non-empty");
  TrainingMonitor monitor(config.callbacks);
  Adam<float> opt(AdamConfig{config.callbacks.base_lr});
  auto params = session.trainable();
  std::vector<NamedTensor<float>> best_weights = session.export_weights();
  TrainResult result;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= config.callbacks.max_epochs; ++epoch) {
    Rng shuffle_rng = make_rng(config.seed, {fnv1a("shuffle"), std::uint64_t(epoch)});
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t n = std::min(config.batch_size, order.size() - start);
      const Tensor<float> x =
          batch_tensor(train, order.data() + start, n, config.augment ? &config : nullptr, epoch);
      const Tensor<float> y = label_tensor(train, order.data() + start, n);
      zero_grads(params);
      Tape<float> tape;
      const auto fwd = session.forward(tape, x, Mode::train);
      const auto bce = ops::sigmoid_bce(tape, fwd.logits, y);
      const double loss = double(tape.value(bce.loss)[0]);
      if (!std::isfinite(loss)) {
        result.abort_reason = "non-finite training loss at epoch " + std::to_string(epoch);
        break;
      }
      tape.backward(bce.loss);
      opt.step(params);
      loss_sum += loss * double(n);
    }
    if (!result.abort_reason.empty()) break;

    const auto val_scores = predict(session, val, config.eval_batch);
    double val_loss = 0;
    for (std::size_t i = 0; i < val.size(); ++i) val_loss += bce_value(val_scores[i], double(val.labels[i]));
    val_loss /= double(val.size());
    if (!std::isfinite(val_loss)) {
      result.abort_reason = "non-finite validation loss at epoch " + std::to_string(epoch);
      break;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / double(train.size());
    rec.val_loss = val_loss;
    rec.lr = opt.learning_rate();
    const CallbackDecision d = monitor.end_epoch(epoch, val_loss);
    rec.improved = d.improved;
    if (d.improved) best_weights = session.export_weights();
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (d.stop) {
      result.stopped_early = epoch < config.callbacks.max_epochs;
      break;
    }
    opt.set_learning_rate(d.lr);
  }
  session.import_weights(best_weights);
  result.best_epoch = monitor.best_epoch();
  result.best_val_loss = monitor.best_loss();
  return result;
}

nlohmann::ordered_json to_json(const EpochRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["train_loss"] = r.train_loss;
  j["val_loss"] = r.val_loss;
  j["lr"] = r.lr;
  j["improved"] = r.improved;
  return j;
}

nlohmann::ordered_json crossval_report(const std::vector<FoldSummary>& folds) {
  if (folds.empty()) throw ArgumentError("crossval report needs at least one fold");
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  double epochs = 0, fn_sum = 0, fp_sum = 0, loss = 0, prec_sum = 0;
  std::size_t fn_max = 0, fp_max = 0, prec_n = 0;
  std::optional<double> min_auc;
  double min_acc = 1;
  for (const auto& f : folds) {
    nlohmann::ordered_json row;
    row["fold"] = f.fold;
    row["epochs"] = f.epochs;
    row["best_epoch"] = f.best_epoch;
    row["metrics"] = to_json(f.test);
    rows.push_back(std::move(row));
    epochs += f.epochs;
    fn_sum += double(f.test.fn_at_95);
    fp_sum += double(f.test.fp_at_10);
    fn_max = std::max(fn_max, f.test.fn_at_95);
    fp_max = std::max(fp_max, f.test.fp_at_10);
    loss += f.test.mean_bce;
    min_acc = std::min(min_acc, f.test.accuracy);
    if (f.test.auc) min_auc = min_auc ? std::min(*min_auc, *f.test.auc) : *f.test.auc;
    if (f.test.precision_at_full_recall) {
      prec_sum += *f.test.precision_at_full_recall;
      ++prec_n;
    }
  }
  const double n = double(folds.size());
  nlohmann::ordered_json agg;
  agg["mean_epochs"] = epochs / n;
  agg["min_auc"] = min_auc ? nlohmann::ordered_json(*min_auc) : nlohmann::ordered_json(nullptr);
  agg["fn_at_95_mean"] = fn_sum / n;
  agg["fn_at_95_max"] = fn_max;
  agg["fp_at_10_mean"] = fp_sum / n;
  agg["fp_at_10_max"] = fp_max;
  agg["mean_precision_at_full_recall"] =
      prec_n ? nlohmann::ordered_json(prec_sum / double(prec_n)) : nlohmann::ordered_json(nullptr);
  agg["min_accuracy"] = min_acc;
  agg["mean_loss"] = loss / n;
  nlohmann::ordered_json out;
  out["folds"] = std::move(rows);
  out["aggregate"] = std::move(agg);
  return out;
}

}  // namespace vdcnet

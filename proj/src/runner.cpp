#include "vdcnet/runner.hpp"

#include <chrono>
#include <cstdio>
#include <exception>
#include <fstream>
#include <ostream>
#include <sstream>

#include "vdcnet/errors.hpp"
#include "vdcnet/kernels.hpp"
#include "vdcnet/rng.hpp"
#include "vdcnet/split.hpp"

namespace vdcnet {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

void write_json(const ojson& j, const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << j.dump(2) << '\n';
  if (!f) throw IoError("failed writing " + path.string());
}

ojson read_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read " + path.string());
  try {
    return ojson::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

namespace {

void write_lines(const std::vector<ojson>& lines, const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& l : lines) f << l.dump() << '\n';
  if (!f) throw IoError("failed writing " + path.string());
}

std::vector<ojson> read_lines(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read " + path.string());
  std::vector<ojson> out;
  std::string line;
  while (std::getline(f, line))
    if (!line.empty()) out.push_back(ojson::parse(line));
  return out;
}

std::vector<ManifestRecord> pick(const std::vector<ManifestRecord>& recs, const std::vector<std::size_t>& idx) {
  std::vector<ManifestRecord> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(recs[i]);
  return out;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

Runner::Runner(RunConfig config, fs::path run_dir, std::ostream* log)
    : config_(std::move(config)), run_dir_(std::move(run_dir)), log_(log) {
  config_.validate();
  hash_ = config_hash(config_);
}

ojson Runner::stamp() const {
  ojson j;
  j["seed"] = config_.seed;
  j["config_hash"] = hash_;
  return j;
}

void Runner::log(const std::string& line) const {
  if (log_) *log_ << line << std::endl;
}

std::uint64_t Runner::seed_for(const std::string& purpose, std::uint64_t index) const {
  return derive_seed(config_.seed, {fnv1a(purpose), index});
}

void Runner::snapshot_config() {
  fs::create_directories(run_dir_);
  const fs::path path = run_dir_ / "config.ini";
  const std::string text = to_ini(config_);
  if (fs::exists(path)) {
    std::ifstream f(path);
    std::stringstream ss;
    ss << f.rdbuf();
    if (ss.str() != text) {
      throw ConfigError("run directory " + run_dir_.string() +
                        " was created with a different configuration or seed; use a new run directory");
    }
    return;
  }
  std::ofstream f(path, std::ios::binary);
  f << text;
  if (!f) throw IoError("cannot write " + path.string());
}

ojson Runner::synth() {
  snapshot_config();
  const auto t0 = std::chrono::steady_clock::now();
  const DatasetManifest m = generate_dataset(config_.synth_count, config_.damaged_fraction, config_.synth,
                                             config_.seed, run_dir_ / "data", hash_);
  ojson s = stamp();
  s["command"] = "synth";
  s["images"] = m.records.size();
  s["damaged"] = m.count_label(1);
  s["manifest"] = data_manifest().string();
  log("synth: " + std::to_string(m.records.size()) + " images in " + std::to_string(seconds_since(t0)) + " s");
  return s;
}

ojson Runner::preprocess() {
  snapshot_config();
  if (!fs::exists(data_manifest())) throw DataError("no dataset at " + data_manifest().string() + "; run synth first");
  DatasetManifest input = read_manifest(data_manifest());
  input.config_hash = hash_;
  input.seed = config_.seed;
  const auto summary = preprocess_dataset(input, data_manifest(), run_dir_ / "tiles", config_.preprocess);
  ojson s = stamp();
  s["command"] = "preprocess";
  s["images"] = summary.images;
  s["tiles"] = summary.tiles;
  s["no_pillar"] = summary.no_pillar;
  s["manifest"] = tile_manifest().string();
  return s;
}

Runner::SplitTiles Runner::split_tiles() {
  if (!fs::exists(tile_manifest())) throw DataError("no tiles at " + tile_manifest().string() + "; run preprocess first");
  SplitTiles st;
  st.records = read_manifest(tile_manifest()).usable();
  const SplitResult s = split_train_test(st.records, config_.test_fraction, seed_for("split"));
  st.train = s.train;
  st.test = s.test;
  ojson j = stamp();
  ojson train = ojson::array(), test = ojson::array();
  for (auto i : st.train) train.push_back(st.records[i].id);
  for (auto i : st.test) test.push_back(st.records[i].id);
  j["train"] = std::move(train);
  j["test"] = std::move(test);
  write_json(j, run_dir_ / "split.json");
  return st;
}

namespace {

struct TrainOutcome {
  TrainResult result;
  MetricsReport test;
};

}  // namespace

// Trains one model on (train, val), writes weights, history, scores and
// metrics into `dir`, and evaluates on `test`.
static TrainOutcome train_into(const fs::path& dir, const RunConfig& cfg, const ojson& stamp, std::uint64_t init_seed,
                               std::uint64_t train_seed, const TileSet& train, const TileSet& val, const TileSet& test,
                               std::ostream* log, const std::string& tag) {
  fs::create_directories(dir);
  Session session(build_model(cfg), init_seed);
  TrainConfig tc = cfg.train;
  tc.seed = train_seed;
  std::vector<ojson> history{stamp};
  const auto t0 = std::chrono::steady_clock::now();
  TrainOutcome out;
  out.result = train_model(session, train, val, tc, [&](const EpochRecord& r) {
    history.push_back(to_json(r));
    if (log) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "%s epoch %3d  train %.5f  val %.5f  lr %.1e%s  (%.0f s)", tag.c_str(), r.epoch,
                    r.train_loss, r.val_loss, r.lr, r.improved ? "  *" : "", seconds_since(t0));
      *log << buf << std::endl;
    }
  });
  write_lines(history, dir / "history.jsonl");
  session.save(dir / "weights.bin");
  ojson w = stamp;
  w["architecture"] = to_string(cfg.architecture);
  w["best_epoch"] = out.result.best_epoch;
  w["best_val_loss"] = out.result.best_val_loss;
  w["epochs"] = out.result.history.size();
  w["stopped_early"] = out.result.stopped_early;
  w["abort_reason"] = out.result.abort_reason;
  write_json(w, dir / "weights.json");
  if (!out.result.abort_reason.empty()) {
    throw NumericError(out.result.abort_reason + "; best finite weights kept in " + (dir / "weights.bin").string());
  }

  const auto scores = predict(session, test, cfg.train.eval_batch);
  std::vector<ojson> lines{stamp};
  for (std::size_t i = 0; i < test.size(); ++i)
    lines.push_back(ojson{{"id", test.ids[i]}, {"label", test.labels[i]}, {"score", scores[i]}});
  write_lines(lines, dir / "scores.jsonl");
  out.test = evaluate_scores(scores, test.labels);
  ojson m = stamp;
  m["set"] = "test";
  m["metrics"] = to_json(out.test);
  write_json(m, dir / "metrics.json");
  return out;
}

ojson Runner::train() {
  snapshot_config();
  const SplitTiles st = split_tiles();
  const auto train_recs = pick(st.records, st.train);
  const SplitResult tv = split_train_test(train_recs, config_.val_fraction, seed_for("val"));
  const TileSet train = load_tiles(pick(train_recs, tv.train), tile_manifest());
  const TileSet val = load_tiles(pick(train_recs, tv.test), tile_manifest());
  const TileSet test = load_tiles(pick(st.records, st.test), tile_manifest());
  log("train: " + std::to_string(train.size()) + " train / " + std::to_string(val.size()) + " val / " +
      std::to_string(test.size()) + " test tiles");
  const auto t0 = std::chrono::steady_clock::now();
  const TrainOutcome o = train_into(train_dir(), config_, stamp(), seed_for("init"), seed_for("train"), train, val,
                                    test, log_, "train");
  ojson s = stamp();
  s["command"] = "train";
  s["epochs"] = o.result.history.size();
  s["best_epoch"] = o.result.best_epoch;
  s["test_auc"] = o.test.auc ? ojson(*o.test.auc) : ojson(nullptr);
  s["test_precision_at_full_recall"] =
      o.test.precision_at_full_recall ? ojson(*o.test.precision_at_full_recall) : ojson(nullptr);
  s["test_accuracy"] = o.test.accuracy;
  s["seconds"] = seconds_since(t0);
  return s;
}

ojson Runner::crossval() {
  snapshot_config();
  const SplitTiles st = split_tiles();
  const auto train_recs = pick(st.records, st.train);
  const FoldPlan plan = stratified_kfold(train_recs, config_.folds, seed_for("kfold"));
  const TileSet test = load_tiles(pick(st.records, st.test), tile_manifest());
  std::vector<FoldSummary> folds(plan.k);
  std::vector<std::exception_ptr> errors(plan.k);
  const int previous_threads = kernels::num_threads();
  if (jobs_ > 1) kernels::set_num_threads(1);
#pragma omp parallel for schedule(dynamic) num_threads(jobs_) if (jobs_ > 1)
  for (long k = 0; k < long(plan.k); ++k) {
    try {
      const fs::path dir = run_dir_ / "crossval" / ("fold_" + std::to_string(k));
      FoldSummary& f = folds[std::size_t(k)];
      f.fold = std::size_t(k);
      const bool done = fs::exists(dir / "metrics.json") && fs::exists(dir / "scores.jsonl") &&
                        read_json(dir / "metrics.json").value("config_hash", "") == hash_ &&
                        read_json(dir / "metrics.json").value("seed", std::uint64_t(0)) == config_.seed;
      if (done) {
        const ojson w = read_json(dir / "weights.json");
        f.epochs = w.at("epochs").get<int>();
        f.best_epoch = w.at("best_epoch").get<int>();
        std::vector<double> scores;
        std::vector<int> labels;
        const auto lines = read_lines(dir / "scores.jsonl");
        for (std::size_t i = 1; i < lines.size(); ++i) {
          scores.push_back(lines[i].at("score").get<double>());
          labels.push_back(lines[i].at("label").get<int>());
        }
        f.test = evaluate_scores(scores, labels);
        log("crossval: fold " + std::to_string(k) + " already complete, skipped");
        continue;
      }
      const TileSet train = load_tiles(pick(train_recs, plan.training_indices(std::size_t(k))), tile_manifest());
      const TileSet val = load_tiles(pick(train_recs, plan.folds[std::size_t(k)]), tile_manifest());
      const TrainOutcome o = train_into(dir, config_, stamp(), seed_for("init", std::uint64_t(k)),
                                        seed_for("train", std::uint64_t(k)), train, val, test, log_,
                                        "fold " + std::to_string(k));
      f.epochs = int(o.result.history.size());
      f.best_epoch = o.result.best_epoch;
      f.test = o.test;
    } catch (...) {
      errors[std::size_t(k)] = std::current_exception();
    }
  }
  kernels::set_num_threads(previous_threads);
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  ojson report = stamp();
  const ojson body = crossval_report(folds);
  report["folds"] = body["folds"];
  report["aggregate"] = body["aggregate"];
  write_json(report, run_dir_ / "crossval" / "report.json");
  ojson s = stamp();
  s["command"] = "crossval";
  s["folds"] = plan.k;
  s["aggregate"] = body["aggregate"];
  return s;
}

ojson Runner::evaluate() {
  snapshot_config();
  const fs::path weights = train_dir() / "weights.bin";
  if (!fs::exists(weights)) throw DataError("no trained weights at " + weights.string() + "; run train first");
  const SplitTiles st = split_tiles();
  const TileSet test = load_tiles(pick(st.records, st.test), tile_manifest());
  Session session(build_model(config_), 0);
  session.load(weights);
  const MetricsReport r = evaluate_model(session, test, config_.train.eval_batch);
  ojson m = stamp();
  m["set"] = "test";
  m["metrics"] = to_json(r);
  write_json(m, run_dir_ / "evaluate" / "metrics.json");
  ojson s = stamp();
  s["command"] = "evaluate";
  s["n"] = r.n;
  s["auc"] = r.auc ? ojson(*r.auc) : ojson(nullptr);
  s["precision_at_full_recall"] = r.precision_at_full_recall ? ojson(*r.precision_at_full_recall) : ojson(nullptr);
  s["accuracy"] = r.accuracy;
  s["fn_at_95"] = r.fn_at_95;
  s["fp_at_10"] = r.fp_at_10;
  s["mean_bce"] = r.mean_bce;
  return s;
}

ojson Runner::cam(CamMethod method, bool all_tiles) {
  snapshot_config();
  const fs::path weights = train_dir() / "weights.bin";
  if (!fs::exists(weights)) throw DataError("no trained weights at " + weights.string() + "; run train first");
  const SplitTiles st = split_tiles();
  std::vector<ManifestRecord> recs = all_tiles ? st.records : pick(st.records, st.test);
  const TileSet tiles = load_tiles(recs, tile_manifest(), true);
  Session session(build_model(config_), 0);
  session.load(weights);
  CamOptions opt;
  opt.score_batch = config_.score_batch;

  const fs::path dir = run_dir_ / "cam" / to_string(method);
  fs::create_directories(dir / "overlays");
  fs::create_directories(dir / "native");
  const std::string tag = provenance_comment(config_.seed, hash_);
  std::vector<ojson> lines{stamp()};
  std::vector<Image> sheet_damaged, sheet_clean;
  double energy_sum = 0, native_damaged = 0, native_clean = 0;
  std::size_t n_damaged = 0, n_clean = 0, localized = 0;
  const std::size_t chunk = 16;
  for (std::size_t start = 0; start < tiles.size(); start += chunk) {
    const std::size_t n = std::min(chunk, tiles.size() - start);
    std::vector<const Image*> ptrs;
    for (std::size_t i = 0; i < n; ++i) ptrs.push_back(&tiles.images[start + i]);
    auto maps = compute_cam(method, session, to_tensor(ptrs), opt);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t t = start + i;
      Heatmap& hm = maps[i];
      hm.sample_id = tiles.ids[t];
      const Image overlay = render_overlay(hm.upsampled, tiles.images[t], config_.cam_alpha);
      save_image(overlay, dir / "overlays" / (hm.sample_id + ".ppm"), tag);
      ojson native = stamp();
      native["id"] = hm.sample_id;
      native["method"] = to_string(method);
      native["shape"] = hm.native.shape();
      native["values"] = hm.native.storage();
      write_json(native, dir / "native" / (hm.sample_id + ".json"));
      double mean_native = 0;
      for (float v : hm.native.values()) mean_native += v;
      mean_native /= double(hm.native.size());
      const double energy = localization_energy(hm.upsampled, tiles.masks[t], config_.cam_dilation);
      if (tiles.labels[t] == 1) {
        ++n_damaged;
        energy_sum += energy;
        native_damaged += mean_native;
        if (energy >= 0.7) ++localized;
        if (sheet_damaged.size() < 32) sheet_damaged.push_back(overlay);
      } else {
        ++n_clean;
        native_clean += mean_native;
        if (sheet_clean.size() < 32) sheet_clean.push_back(overlay);
      }
      lines.push_back(ojson{{"id", hm.sample_id},
                            {"label", tiles.labels[t]},
                            {"probability", hm.probability},
                            {"energy", energy},
                            {"mean_native", mean_native}});
    }
  }
  write_lines(lines, dir / "energy.jsonl");
  std::vector<Image> sheet = sheet_damaged;
  sheet.insert(sheet.end(), sheet_clean.begin(), sheet_clean.end());
  if (!sheet.empty()) save_image(contact_sheet(sheet, 8), dir / "contact_sheet.ppm", tag);
  ojson s = stamp();
  s["command"] = "cam";
  s["method"] = to_string(method);
  s["tiles"] = tiles.size();
  s["damaged"] = n_damaged;
  s["mean_energy_damaged"] = n_damaged ? ojson(energy_sum / double(n_damaged)) : ojson(nullptr);
  s["localized_fraction"] = n_damaged ? ojson(double(localized) / double(n_damaged)) : ojson(nullptr);
  s["mean_native_damaged"] = n_damaged ? ojson(native_damaged / double(n_damaged)) : ojson(nullptr);
  s["mean_native_undamaged"] = n_clean ? ojson(native_clean / double(n_clean)) : ojson(nullptr);
  write_json(s, dir / "summary.json");
  return s;
}

ojson Runner::benchmark_cam(std::size_t samples) {
  snapshot_config();
  const fs::path weights = train_dir() / "weights.bin";
  if (!fs::exists(weights)) throw DataError("no trained weights at " + weights.string() + "; run train first");
  const SplitTiles st = split_tiles();
  auto recs = pick(st.records, st.test);
  if (recs.size() > samples) recs.resize(samples);
  const TileSet tiles = load_tiles(recs, tile_manifest());
  Session session(build_model(config_), 0);
  session.load(weights);
  CamOptions opt;
  opt.score_batch = config_.score_batch;
  ojson rows = ojson::array();
  double grad_total = 0, score_total = 0;
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    const Tensor<float> x = to_tensor(tiles.images[i]);
    auto t0 = std::chrono::steady_clock::now();
    grad_cam(session, x, opt);
    const double g = seconds_since(t0);
    t0 = std::chrono::steady_clock::now();
    score_cam(session, x, opt);
    const double sc = seconds_since(t0);
    grad_total += g;
    score_total += sc;
    rows.push_back(ojson{{"id", tiles.ids[i]}, {"grad_cam_s", g}, {"score_cam_s", sc}});
  }
  ojson s = stamp();
  s["command"] = "benchmark-cam";
  s["samples"] = tiles.size();
  s["grad_cam_mean_s"] = grad_total / double(std::max<std::size_t>(1, tiles.size()));
  s["score_cam_mean_s"] = score_total / double(std::max<std::size_t>(1, tiles.size()));
  s["ratio"] = grad_total > 0 ? ojson(score_total / grad_total) : ojson(nullptr);
  ojson file = s;
  file["per_sample"] = rows;
  write_json(file, run_dir_ / "benchmark" / "cam_timing.json");
  return s;
}

ojson Runner::augment_preview(std::size_t samples, std::size_t variants) {
  snapshot_config();
  auto recs = read_manifest(tile_manifest()).usable();
  if (recs.size() > samples) recs.resize(samples);
  const TileSet tiles = load_tiles(recs, tile_manifest());
  std::vector<Image> cells;
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    cells.push_back(tiles.images[i]);
    for (std::size_t v = 0; v < variants; ++v) {
      Rng rng = augment_stream(seed_for("train"), fnv1a(tiles.ids[i]), v + 1);
      cells.push_back(augment(tiles.images[i], tiles.labels[i], config_.train.augmentation, rng).image);
    }
  }
  const fs::path out = run_dir_ / "preview" / "augment_sheet.ppm";
  fs::create_directories(out.parent_path());
  save_image(contact_sheet(cells, variants + 1), out, provenance_comment(config_.seed, hash_));
  ojson s = stamp();
  s["command"] = "augment-preview";
  s["samples"] = tiles.size();
  s["variants"] = variants;
  s["sheet"] = out.string();
  return s;
}

}  // namespace vdcnet

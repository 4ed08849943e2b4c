#include <doctest.h>

#include <fstream>
#include <sstream>

#include "vdcnet/config.hpp"
#include "vdcnet/errors.hpp"
#include "vdcnet/runner.hpp"

using namespace vdcnet;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

RunConfig tiny() {
  RunConfig c = parse_config("[synth]\ncount = 20\n[train]\nmax_epochs = 1\nfolds = 2\n");
  c.seed = 5;
  return c;
}

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("to_ini round-trips through the parser") {
    for (Preset p : {Preset::half, Preset::full}) {
      RunConfig c;
      c.apply_preset(p);
      c.seed = 1234;
      c.cam_method = CamMethod::score_cam;
      c.train.augmentation.erase_prob = 0.25;
      c.head_pool = PoolMode::max;
      const std::string text = to_ini(c);
      const RunConfig back = parse_config(text);
      CHECK(to_ini(back) == text);
      CHECK(back.seed == 1234);
      CHECK(back.preset == p);
      CHECK(back.head_pool == PoolMode::max);
    }
  }

  TEST_CASE("presets set geometry and width") {
    const RunConfig half = parse_config("");
    CHECK(half.preset == Preset::half);
    CHECK(half.preprocess.crop_size == 350);
    CHECK(half.input_size() == 176);
    CHECK(half.width_multiplier == doctest::Approx(1.0 / 16));
    const RunConfig full = parse_config("[run]\npreset = full\n");
    CHECK(full.preprocess.crop_size == 700);
    CHECK(full.input_size() == 352);
    CHECK(full.width_multiplier == 1.0);
  }

  TEST_CASE("command-line preset beats the file, file keys beat the preset") {
    const RunConfig c = parse_config("[run]\npreset = half\n[model]\nwidth_multiplier = 0.5\n", Preset::full);
    CHECK(c.preset == Preset::full);
    CHECK(c.input_size() == 352);
    CHECK(c.width_multiplier == 0.5);
  }

  TEST_CASE("unknown sections, keys and bad values are config errors") {
    CHECK_THROWS_AS(parse_config("[bogus]\nx = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[train]\nlearnin_rate = 0.1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[train]\nbatch_size = six\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[train]\nbatch_size = 0\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[model]\narchitecture = resnet\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[run]\npreset = quarter\n"), ConfigError);
    CHECK_THROWS_AS(load_config("/nonexistent/vdcnet.ini"), ConfigError);
  }

  TEST_CASE("config hash ignores the seed and tracks everything else") {
    RunConfig a, b;
    b.seed = a.seed + 1;
    CHECK(config_hash(a) == config_hash(b));
    CHECK(config_hash(a).size() == 16);
    b.train.batch_size = 7;
    CHECK(config_hash(a) != config_hash(b));
  }

  TEST_CASE("build_model follows the architecture setting") {
    RunConfig c;
    CHECK(build_model(c)->name() == "vdcnet");
    c.architecture = Architecture::reference;
    CHECK_THROWS_AS(build_model(c), ConfigError);  // 176 is not a multiple of 32
    c.apply_preset(Preset::full);
    CHECK(build_model(c)->count(LayerKind::add) > 0);
  }
}

TEST_SUITE("runner") {
  TEST_CASE("pipeline smoke run is reproducible and stamps its artifacts") {
    const fs::path root = fs::temp_directory_path() / "vdcnet_test_runner";
    fs::remove_all(root);
    const RunConfig c = tiny();
    for (const char* name : {"a", "b"}) {
      Runner r(c, root / name);
      const auto s = r.synth();
      CHECK(s["images"] == 20);
      CHECK(r.preprocess()["tiles"] == 80);
      const auto t = r.train();
      CHECK(t["epochs"] == 1);
      CHECK(t["seed"] == 5);
      CHECK(t["config_hash"] == r.hash());
      const auto e = r.evaluate();
      CHECK(e["n"].get<std::size_t>() > 0);
      const auto cam = r.cam(CamMethod::grad_cam);
      CHECK(cam["tiles"] == e["n"]);
    }
    for (const char* f : {"config.ini", "data/manifest.jsonl", "tiles/tiles.jsonl", "split.json", "train/history.jsonl",
                          "train/metrics.json", "train/scores.jsonl", "train/weights.bin", "evaluate/metrics.json",
                          "cam/grad-cam/energy.jsonl"}) {
      INFO(f);
      CHECK(slurp(root / "a" / f) == slurp(root / "b" / f));
    }
    const auto metrics = read_json(root / "a" / "train" / "metrics.json");
    CHECK(metrics["seed"] == 5);
    CHECK(metrics["config_hash"] == config_hash(c));
    const std::string image = slurp(root / "a" / "data" / "images" / "pillar_0000.ppm");
    CHECK(image.find("seed=5 config_hash=" + config_hash(c)) != std::string::npos);
    fs::remove_all(root);
  }

  TEST_CASE("a run directory refuses a different configuration or seed") {
    const fs::path root = fs::temp_directory_path() / "vdcnet_test_runner_lock";
    fs::remove_all(root);
    RunConfig c = tiny();
    Runner(c, root).synth();
    c.seed = 6;
    CHECK_THROWS_AS(Runner(c, root).synth(), ConfigError);
    fs::remove_all(root);
  }

  TEST_CASE("commands out of order report missing inputs as data errors") {
    const fs::path root = fs::temp_directory_path() / "vdcnet_test_runner_order";
    fs::remove_all(root);
    Runner r(tiny(), root);
    CHECK_THROWS_AS(r.preprocess(), DataError);
    CHECK_THROWS_AS(r.train(), DataError);
    CHECK_THROWS_AS(r.evaluate(), DataError);
    fs::remove_all(root);
  }

  TEST_CASE("crossval resumes completed folds") {
    const fs::path root = fs::temp_directory_path() / "vdcnet_test_runner_cv";
    fs::remove_all(root);
    Runner r(tiny(), root);
    r.synth();
    r.preprocess();
    const auto first = r.crossval();
    const std::string report = slurp(root / "crossval" / "report.json");
    const auto fold0 = fs::last_write_time(root / "crossval" / "fold_0" / "weights.bin");
    fs::remove(root / "crossval" / "fold_1" / "metrics.json");
    const auto second = r.crossval();
    CHECK(fs::last_write_time(root / "crossval" / "fold_0" / "weights.bin") == fold0);
    CHECK(slurp(root / "crossval" / "report.json") == report);
    CHECK(first == second);
    const auto j = read_json(root / "crossval" / "report.json");
    CHECK(j["folds"].size() == 2);
    for (const char* k : {"mean_epochs", "min_auc", "fn_at_95_mean", "fn_at_95_max", "fp_at_10_mean", "fp_at_10_max",
                          "mean_precision_at_full_recall", "min_accuracy", "mean_loss"})
      CHECK(j["aggregate"].contains(k));
    fs::remove_all(root);
  }
}

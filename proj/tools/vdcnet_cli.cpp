// vdcnet: command-line driver for the pillar damage pipeline.
//
//   vdcnet synth|preprocess|train|crossval|evaluate|cam|benchmark-cam|augment-preview
//          [--config FILE] [--seed N] [--run-dir DIR] [--preset full|half] [--jobs N]
//   vdcnet describe-model [--config FILE] [--preset full|half]
//
// Each command prints one JSON summary line on stdout; progress goes to
// stderr. Without --run-dir the run lives in $VDCNET_RUN_ROOT (or ./runs)
// under <preset>-<config hash>-s<seed>.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "vdcnet/config.hpp"
#include "vdcnet/errors.hpp"
#include "vdcnet/kernels.hpp"
#include "vdcnet/runner.hpp"

namespace {

using namespace vdcnet;
using ojson = nlohmann::ordered_json;

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string run_dir;
  std::string preset;
  std::string method;
  int jobs = 0;
  bool all_tiles = false;
  std::size_t samples = 0;  // 0: command default
  std::size_t variants = 6;
  bool quiet = false;
};

RunConfig resolve_config(const Options& o) {
  std::optional<Preset> preset;
  if (!o.preset.empty()) preset = parse_preset(o.preset);
  RunConfig c = o.config_path.empty() ? parse_config("", preset) : load_config(o.config_path, preset);
  if (o.seed) c.seed = *o.seed;
  c.validate();
  return c;
}

std::filesystem::path resolve_run_dir(const Options& o, const RunConfig& c) {
  if (!o.run_dir.empty()) return o.run_dir;
  const char* root = std::getenv("VDCNET_RUN_ROOT");
  const std::filesystem::path base = root && *root ? root : "runs";
  return base / (std::string(to_string(c.preset)) + "-" + config_hash(c) + "-s" + std::to_string(c.seed));
}

ojson describe_model(const Options& o) {
  // Without a config file this is the published network at full input size.
  RunConfig c = o.config_path.empty() && o.preset.empty() ? RunConfig() : resolve_config(o);
  if (o.config_path.empty() && o.preset.empty()) {
    c.apply_preset(Preset::full);
  }
  const auto graph = build_model(c);
  if (!o.quiet) std::cerr << describe(*graph);
  const HeadSummary head = head_summary(*graph);
  ojson s;
  s["command"] = "describe-model";
  s["model"] = graph->name();
  s["input_size"] = graph->input_size();
  s["width_multiplier"] = c.width_multiplier;
  s["conv_layers"] = graph->conv_count();
  s["maxpool_layers"] = graph->maxpool_count();
  s["concat_skips"] = graph->count(LayerKind::concat);
  s["add_skips"] = graph->count(LayerKind::add);
  s["head"] = head.valid ? std::string("global_") + to_string(head.pool) + "_pool-dense(" +
                               std::to_string(head.dense_units) + ")-sigmoid"
                         : std::string("other");
  s["params"] = count_params(*graph);
  s["config_hash"] = config_hash(c);
  return s;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ArgumentError*>(&e)) return 1;
  if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const IoError*>(&e)) return 2;
  if (dynamic_cast<const NumericError*>(&e)) return 3;
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"VIG pillar damage classification: synthetic data, VDCNet training, CAM localization"};
  app.require_subcommand(1, 1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "INI configuration file")->check(CLI::ExistingFile);
    sub->add_option("--preset", o.preset, "Scale preset")->check(CLI::IsMember({"full", "half"}));
  };
  auto run_opts = [&](CLI::App* sub) {
    common(sub);
    sub->add_option("--seed", o.seed, "Global seed (overrides the config file)");
    sub->add_option("--run-dir", o.run_dir, "Run directory (default: $VDCNET_RUN_ROOT or ./runs)");
    sub->add_option("--jobs", o.jobs, "Worker threads (0: OpenMP default)")->check(CLI::NonNegativeNumber);
    sub->add_flag("--quiet", o.quiet, "No progress on stderr");
  };

  auto* synth = app.add_subcommand("synth", "Generate the synthetic pillar dataset");
  auto* prep = app.add_subcommand("preprocess", "Locate pillars, crop and split into quadrant tiles");
  auto* train = app.add_subcommand("train", "Train on the 90/10 split and evaluate on the test tiles");
  auto* crossval = app.add_subcommand("crossval", "Stratified k-fold training with a per-fold report");
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate trained weights on the test tiles");
  auto* cam = app.add_subcommand("cam", "Class activation maps, overlays and localization energy");
  auto* bench = app.add_subcommand("benchmark-cam", "Per-sample wall time of Grad-CAM and Score-CAM");
  auto* preview = app.add_subcommand("augment-preview", "Contact sheet of augmented variants");
  auto* describe_cmd = app.add_subcommand("describe-model", "Layer table and structural summary");

  for (auto* s : {synth, prep, train, crossval, evaluate, cam, bench, preview}) run_opts(s);
  common(describe_cmd);
  describe_cmd->add_flag("--quiet", o.quiet, "Summary line only");
  cam->add_option("--method", o.method, "CAM method")->check(CLI::IsMember({"cam", "grad-cam", "score-cam"}));
  cam->add_flag("--all", o.all_tiles, "All tiles instead of the test split");
  bench->add_option("--samples", o.samples, "Test tiles to time")->check(CLI::PositiveNumber);
  preview->add_option("--samples", o.samples, "Tiles (rows)")->check(CLI::PositiveNumber);
  preview->add_option("--variants", o.variants, "Variants per tile")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    ojson summary;
    if (describe_cmd->parsed()) {
      summary = describe_model(o);
    } else {
      const RunConfig config = resolve_config(o);
      if (o.jobs > 0) kernels::set_num_threads(o.jobs);
      Runner runner(config, resolve_run_dir(o, config), o.quiet ? nullptr : &std::cerr);
      runner.set_jobs(o.jobs);
      if (synth->parsed()) summary = runner.synth();
      else if (prep->parsed()) summary = runner.preprocess();
      else if (train->parsed()) summary = runner.train();
      else if (crossval->parsed()) summary = runner.crossval();
      else if (evaluate->parsed()) summary = runner.evaluate();
      else if (cam->parsed())
        summary = runner.cam(o.method.empty() ? config.cam_method : parse_cam_method(o.method), o.all_tiles);
      else if (bench->parsed()) summary = runner.benchmark_cam(o.samples ? o.samples : 8);
      else summary = runner.augment_preview(o.samples ? o.samples : 6, o.variants);
      summary["run_dir"] = runner.run_dir().string();
    }
    std::cout << summary.dump() << std::endl;
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "vdcnet: " << e.what() << '\n';
    return exit_code_for(e);
  }
}

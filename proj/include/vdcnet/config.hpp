#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "vdcnet/cam.hpp"
#include "vdcnet/preprocess.hpp"
#include "vdcnet/synth.hpp"
#include "vdcnet/train.hpp"

namespace vdcnet {

enum class Preset { full, half };
const char* to_string(Preset preset);
Preset parse_preset(const std::string& text);

enum class Architecture { vdcnet, reference };
const char* to_string(Architecture arch);
Architecture parse_architecture(const std::string& text);

struct RunConfig {
  std::uint64_t seed = 42;
  Preset preset = Preset::half;

  // [synth]
  std::size_t synth_count = 322;
  double damaged_fraction = 0.5;
  SynthParams synth = SynthParams::half_scale();

  // [preprocess]
  PreprocessConfig preprocess;

  // [model]
  Architecture architecture = Architecture::vdcnet;
  double width_multiplier = 1.0 / 16;
  PoolMode head_pool = PoolMode::avg;

  // [train] and [augment]
  TrainConfig train;
  double test_fraction = 0.1;
  double val_fraction = 0.1;  // hold-out from the training split for the train command
  std::size_t folds = 5;

  // [cam]
  CamMethod cam_method = CamMethod::grad_cam;
  double cam_alpha = 0.5;
  std::size_t cam_dilation = 5;
  std::size_t score_batch = 32;

  RunConfig();  // half preset
  void apply_preset(Preset p);
  std::size_t input_size() const noexcept { return preprocess.tile; }
  void validate() const;  // throws ConfigError
};

// Defaults, then the preset (override > file > half), then every key in the
// file. Unknown sections or keys are a ConfigError.
RunConfig parse_config(const std::string& ini_text, std::optional<Preset> preset_override = {});
RunConfig load_config(const std::filesystem::path& path, std::optional<Preset> preset_override = {});

// Canonical INI with every key, in a fixed order; parse_config(to_ini(c)) == c.
std::string to_ini(const RunConfig& config);
// 16 hex digits of FNV-1a over to_ini without the seed line, so one hash
// names a configuration across seeds.
std::string config_hash(const RunConfig& config);

std::shared_ptr<const ModelGraph> build_model(const RunConfig& config);

}  // namespace vdcnet

#include "vdcnet/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "vdcnet/errors.hpp"
#include "vdcnet/rng.hpp"

namespace vdcnet {

const char* to_string(Preset preset) { return preset == Preset::full ? "full" : "half"; }

Preset parse_preset(const std::string& text) {
  if (text == "full") return Preset::full;
  if (text == "half") return Preset::half;
  throw ConfigError("unknown preset '" + text + "' (expected full or half)");
}

const char* to_string(Architecture arch) { return arch == Architecture::vdcnet ? "vdcnet" : "reference"; }

Architecture parse_architecture(const std::string& text) {
  if (text == "vdcnet") return Architecture::vdcnet;
  if (text == "reference") return Architecture::reference;
  throw ConfigError("unknown architecture '" + text + "' (expected vdcnet or reference)");
}

RunConfig::RunConfig() { apply_preset(Preset::half); }

void RunConfig::apply_preset(Preset p) {
  preset = p;
  if (p == Preset::full) {
    synth = SynthParams::full_scale();
    preprocess.crop_size = 700;
    preprocess.tile = 352;
    width_multiplier = 1.0;
  } else {
    synth = SynthParams::half_scale();
    preprocess.crop_size = 350;
    preprocess.tile = 176;
    width_multiplier = 1.0 / 16;
  }
}

void RunConfig::validate() const {
  try {
    synth.validate();
  } catch (const ArgumentError& e) {
    throw ConfigError(std::string("[synth] ") + e.what());
  }
  if (synth_count < 2) throw ConfigError("[synth] count must be at least 2");
  if (!(damaged_fraction > 0 && damaged_fraction < 1)) throw ConfigError("[synth] damaged_fraction must lie in (0, 1)");
  preprocess.validate();
  if (!(width_multiplier > 0)) throw ConfigError("[model] width_multiplier must be positive");
  if (preprocess.tile % 32 != 0 && architecture == Architecture::reference) {
    throw ConfigError("[preprocess] tile must be a multiple of 32 for the reference net");
  }
  if (preprocess.tile % 16 != 0) throw ConfigError("[preprocess] tile must be a multiple of 16");
  train.validate();
  if (!(test_fraction > 0 && test_fraction < 1)) throw ConfigError("[train] test_fraction must lie in (0, 1)");
  if (!(val_fraction > 0 && val_fraction < 1)) throw ConfigError("[train] val_fraction must lie in (0, 1)");
  if (folds < 2) throw ConfigError("[train] folds must be at least 2");
  if (!(cam_alpha >= 0 && cam_alpha <= 1)) throw ConfigError("[cam] alpha must lie in [0, 1]");
  if (score_batch == 0) throw ConfigError("[cam] score_batch must be positive");
}

namespace {

// Shortest text that parses back to the same double.
std::string fmt_double(double v) {
  char buf[40];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw ConfigError(key + ": '" + v + "' is not a number");
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    if (!v.empty() && v[0] != '-') {
      const auto n = std::stoull(v, &used);
      if (used == v.size()) return n;
    }
  } catch (const std::exception&) {
  }
  throw ConfigError(key + ": '" + v + "' is not a non-negative integer");
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": '" + v + "' is not a boolean");
}

struct Field {
  std::string section, key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define VDC_DOUBLE(sec, name, member)                                                                          \
  Field {                                                                                                      \
    sec, name, [](const RunConfig& c) { return fmt_double(c.member); },                                        \
        [](RunConfig& c, const std::string& v) { c.member = to_double(std::string(sec) + "." + name, v); }    \
  }
#define VDC_SIZE(sec, name, member)                                                                              \
  Field {                                                                                                        \
    sec, name, [](const RunConfig& c) { return std::to_string(c.member); },                                      \
        [](RunConfig& c, const std::string& v) {                                                                 \
          c.member = static_cast<decltype(c.member)>(to_uint(std::string(sec) + "." + name, v));                 \
        }                                                                                                        \
  }
#define VDC_BOOL(sec, name, member)                                                                              \
  Field {                                                                                                        \
    sec, name, [](const RunConfig& c) { return std::string(c.member ? "true" : "false"); },                     \
        [](RunConfig& c, const std::string& v) { c.member = to_bool(std::string(sec) + "." + name, v); }        \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      VDC_SIZE("run", "seed", seed),
      Field{"run", "preset", [](const RunConfig& c) { return std::string(to_string(c.preset)); },
            [](RunConfig& c, const std::string& v) { c.preset = parse_preset(v); }},

      VDC_SIZE("synth", "count", synth_count),
      VDC_DOUBLE("synth", "damaged_fraction", damaged_fraction),
      VDC_SIZE("synth", "image_size", synth.image_size),
      VDC_DOUBLE("synth", "radius_min", synth.radius_min),
      VDC_DOUBLE("synth", "radius_max", synth.radius_max),
      VDC_DOUBLE("synth", "center_jitter", synth.center_jitter),
      VDC_DOUBLE("synth", "ring_fraction", synth.ring_fraction),
      VDC_DOUBLE("synth", "ring_brightness_min", synth.ring_brightness_min),
      VDC_DOUBLE("synth", "ring_brightness_max", synth.ring_brightness_max),
      VDC_DOUBLE("synth", "interior_brightness_min", synth.interior_brightness_min),
      VDC_DOUBLE("synth", "interior_brightness_max", synth.interior_brightness_max),
      VDC_DOUBLE("synth", "background_min", synth.background_min),
      VDC_DOUBLE("synth", "background_max", synth.background_max),
      VDC_DOUBLE("synth", "background_gradient", synth.background_gradient),
      VDC_DOUBLE("synth", "noise_sigma", synth.noise_sigma),
      VDC_SIZE("synth", "crack_count_min", synth.crack_count_min),
      VDC_SIZE("synth", "crack_count_max", synth.crack_count_max),
      VDC_DOUBLE("synth", "zone_inner", synth.zone_inner),
      VDC_DOUBLE("synth", "zone_outer", synth.zone_outer),
      VDC_DOUBLE("synth", "arc_span_min_deg", synth.arc_span_min_deg),
      VDC_DOUBLE("synth", "arc_span_max_deg", synth.arc_span_max_deg),
      VDC_DOUBLE("synth", "thickness_min", synth.thickness_min),
      VDC_DOUBLE("synth", "thickness_max", synth.thickness_max),
      VDC_DOUBLE("synth", "crack_brightness_min", synth.crack_brightness_min),
      VDC_DOUBLE("synth", "crack_brightness_max", synth.crack_brightness_max),
      VDC_DOUBLE("synth", "dark_crack_prob", synth.dark_crack_prob),
      VDC_DOUBLE("synth", "dark_brightness_min", synth.dark_brightness_min),
      VDC_DOUBLE("synth", "dark_brightness_max", synth.dark_brightness_max),
      VDC_SIZE("synth", "min_quadrant_pixels", synth.min_quadrant_pixels),
      VDC_BOOL("synth", "energy_neutral_cracks", synth.energy_neutral_cracks),
      VDC_DOUBLE("synth", "scratch_rate", synth.scratch_rate),
      VDC_DOUBLE("synth", "debris_rate", synth.debris_rate),

      VDC_SIZE("preprocess", "crop_size", preprocess.crop_size),
      VDC_SIZE("preprocess", "tile", preprocess.tile),
      Field{"preprocess", "box_source",
            [](const RunConfig& c) { return std::string(to_string(c.preprocess.box_source)); },
            [](RunConfig& c, const std::string& v) {
              try {
                c.preprocess.box_source = parse_box_source(v);
              } catch (const ArgumentError& e) {
                throw ConfigError(std::string("preprocess.box_source: ") + e.what());
              }
            }},
      Field{"preprocess", "annotations", [](const RunConfig& c) { return c.preprocess.annotations.string(); },
            [](RunConfig& c, const std::string& v) { c.preprocess.annotations = v; }},
      VDC_DOUBLE("preprocess", "detector_quantile", preprocess.detector.quantile),
      VDC_SIZE("preprocess", "detector_min_area", preprocess.detector.min_area),
      VDC_SIZE("preprocess", "detector_blur", preprocess.detector.blur),

      Field{"model", "architecture", [](const RunConfig& c) { return std::string(to_string(c.architecture)); },
            [](RunConfig& c, const std::string& v) { c.architecture = parse_architecture(v); }},
      VDC_DOUBLE("model", "width_multiplier", width_multiplier),
      Field{"model", "head_pool", [](const RunConfig& c) { return std::string(to_string(c.head_pool)); },
            [](RunConfig& c, const std::string& v) {
              try {
                c.head_pool = parse_pool_mode(v);
              } catch (const ArgumentError& e) {
                throw ConfigError(std::string("model.head_pool: ") + e.what());
              }
            }},

      VDC_SIZE("train", "max_epochs", train.callbacks.max_epochs),
      VDC_SIZE("train", "batch_size", train.batch_size),
      VDC_SIZE("train", "early_stop_patience", train.callbacks.early_stop_patience),
      VDC_SIZE("train", "lr_patience", train.callbacks.lr_patience),
      VDC_DOUBLE("train", "lr_factor", train.callbacks.lr_factor),
      VDC_DOUBLE("train", "learning_rate", train.callbacks.base_lr),
      VDC_DOUBLE("train", "min_lr", train.callbacks.min_lr),
      VDC_DOUBLE("train", "min_delta", train.callbacks.min_delta),
      VDC_BOOL("train", "augment", train.augment),
      VDC_SIZE("train", "eval_batch", train.eval_batch),
      VDC_DOUBLE("train", "test_fraction", test_fraction),
      VDC_DOUBLE("train", "val_fraction", val_fraction),
      VDC_SIZE("train", "folds", folds),

      VDC_DOUBLE("augment", "rotation_deg", train.augmentation.rotation_deg),
      VDC_DOUBLE("augment", "channel_shift", train.augmentation.channel_shift),
      VDC_BOOL("augment", "h_flip", train.augmentation.h_flip),
      VDC_BOOL("augment", "v_flip", train.augmentation.v_flip),
      VDC_DOUBLE("augment", "brightness_min", train.augmentation.brightness_min),
      VDC_DOUBLE("augment", "brightness_max", train.augmentation.brightness_max),
      VDC_DOUBLE("augment", "erase_prob", train.augmentation.erase_prob),
      VDC_DOUBLE("augment", "erase_frac_min", train.augmentation.erase_frac_min),
      VDC_DOUBLE("augment", "erase_frac_max", train.augmentation.erase_frac_max),

      Field{"cam", "method", [](const RunConfig& c) { return std::string(to_string(c.cam_method)); },
            [](RunConfig& c, const std::string& v) { c.cam_method = parse_cam_method(v); }},
      VDC_DOUBLE("cam", "alpha", cam_alpha),
      VDC_SIZE("cam", "dilation", cam_dilation),
      VDC_SIZE("cam", "score_batch", score_batch),
  };
  return table;
}

#undef VDC_DOUBLE
#undef VDC_SIZE
#undef VDC_BOOL

}  // namespace

RunConfig parse_config(const std::string& ini_text, std::optional<Preset> preset_override) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(ini_text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  std::map<std::pair<std::string, std::string>, const Field*> index;
  for (const auto& f : fields()) index[{f.section, f.key}] = &f;

  RunConfig c;
  if (preset_override) {
    c.apply_preset(*preset_override);
  } else if (auto p = tree.get_optional<std::string>("run.preset")) {
    c.apply_preset(parse_preset(*p));
  }
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw ConfigError("config: key '" + section + "' outside a section");
    for (const auto& [key, value] : body) {
      const auto it = index.find({section, key});
      if (it == index.end()) throw ConfigError("config: unknown key [" + section + "] " + key);
      if (section == "run" && key == "preset") continue;
      it->second->set(c, value.data());
    }
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path, std::optional<Preset> preset_override) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str(), preset_override);
}

std::string to_ini(const RunConfig& config) {
  std::ostringstream out;
  std::string section;
  for (const auto& f : fields()) {
    if (f.section != section) {
      if (!section.empty()) out << '\n';
      section = f.section;
      out << '[' << section << "]\n";
    }
    out << f.key << " = " << f.get(config) << '\n';
  }
  return out.str();
}

std::string config_hash(const RunConfig& config) {
  RunConfig unseeded = config;
  unseeded.seed = 0;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(to_ini(unseeded))));
  return buf;
}

std::shared_ptr<const ModelGraph> build_model(const RunConfig& config) {
  if (config.architecture == Architecture::vdcnet) {
    VdcNetConfig m;
    m.width_multiplier = config.width_multiplier;
    m.input_size = config.input_size();
    m.head_pool = config.head_pool;
    return std::make_shared<const ModelGraph>(build_vdcnet(m));
  }
  ReferenceNetConfig m;
  m.width_multiplier = config.width_multiplier;
  m.input_size = config.input_size();
  m.head_pool = config.head_pool;
  try {
    return std::make_shared<const ModelGraph>(build_reference_net(m));
  } catch (const ArgumentError& e) {
    throw ConfigError(std::string("[model] ") + e.what());
  }
}

}  // namespace vdcnet

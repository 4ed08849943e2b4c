#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vdcnet/imaging.hpp"
#include "vdcnet/manifest.hpp"
#include "vdcnet/rng.hpp"

namespace vdcnet {

struct SynthParams {
  std::size_t image_size = 500;
  double radius_min = 40, radius_max = 48;
  double center_jitter = 30;  // px, uniform in each axis around the image center
  double ring_fraction = 0.14;  // ring width as a fraction of the radius
  double ring_brightness_min = 200, ring_brightness_max = 245;
  double interior_brightness_min = 90, interior_brightness_max = 130;
  double background_min = 10, background_max = 30;
  double background_gradient = 8;  // peak amplitude of a random linear ramp
  double noise_sigma = 6;
  std::size_t crack_count_min = 1, crack_count_max = 4;
  double zone_inner = 1.1, zone_outer = 1.5;  // crack radii in units of the pillar radius
  double arc_span_min_deg = 70, arc_span_max_deg = 220;
  double thickness_min = 2, thickness_max = 4;
  double crack_brightness_min = 150, crack_brightness_max = 220;
  double dark_crack_prob = 0.15;
  double dark_brightness_min = 55, dark_brightness_max = 80;
  std::size_t min_quadrant_pixels = 30;  // mask pixels required in each quadrant
  // Lower the background of damaged images by the light their cracks add, so
  // mean image brightness carries no label information.
  bool energy_neutral_cracks = true;
  double scratch_rate = 1.5;  // Poisson means, both classes
  double debris_rate = 4.0;

  static SynthParams half_scale();
  static SynthParams full_scale();
  void validate() const;  // throws ArgumentError
};

struct ArcRecord {
  double radius = 0, thickness = 0;
  double start = 0, span = 0;  // radians, counter-clockwise in image coordinates
  double brightness = 0;
  bool dark = false;
};

struct TruthRecord {
  std::string id;
  int label = 0;
  double cx = 0, cy = 0, radius = 0;
  double ring_brightness = 0, interior_brightness = 0, background = 0;
  std::vector<ArcRecord> arcs;
  std::size_t scratches = 0, debris = 0;
};

struct SynthSample {
  Image image;
  int label = 0;
  GrayImage crack_mask;  // 255 on the arc footprint
  TruthRecord truth;
};

SynthSample generate_sample(const SynthParams& params, int label, Rng& rng);

// Writes images/<id>.ppm, masks/<id>.pgm, manifest.jsonl and truth.jsonl
// under `out_dir`. Sample i uses the stream derived from (seed, i).
DatasetManifest generate_dataset(std::size_t n, double damaged_frac, const SynthParams& params, std::uint64_t seed,
                                 const std::filesystem::path& out_dir, const std::string& config_hash = {});

// Label assignment used by generate_dataset: exactly round(n * frac) ones.
std::vector<int> assign_labels(std::size_t n, double damaged_frac, std::uint64_t seed);

}  // namespace vdcnet

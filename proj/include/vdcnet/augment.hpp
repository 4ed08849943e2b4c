#pragma once

#include <array>
#include <cstdint>

#include "vdcnet/imaging.hpp"
#include "vdcnet/rng.hpp"

namespace vdcnet {

struct AugmentConfig {
  double rotation_deg = 10;
  double channel_shift = 25;  // on the 0-255 scale
  bool h_flip = true;
  bool v_flip = true;
  double brightness_min = 0.7, brightness_max = 1.3;
  double erase_prob = 0.5;
  double erase_frac_min = 0.25, erase_frac_max = 0.40;

  void validate() const;  // throws ArgumentError
  static AugmentConfig identity();
};

// Every random decision for one augmented sample.
struct AugmentDraw {
  double angle_deg = 0;
  std::array<double, 3> shift{};
  bool h_flip = false, v_flip = false;
  double brightness = 1;
  bool erase = false;
  std::size_t erase_x = 0, erase_y = 0, erase_w = 0, erase_h = 0;
  std::uint64_t erase_seed = 0;  // stream for the random fill

  double erase_fraction(std::size_t width, std::size_t height) const;
};

AugmentDraw draw_augment(const AugmentConfig& config, std::size_t width, std::size_t height, Rng& rng);

// Stages in fixed order: rotate (bilinear, zero fill), channel shift, h-flip,
// v-flip, brightness, erase. Values are clamped to [0, 255] after each stage.
Image apply_augment(const Image& image, const AugmentDraw& draw);

struct Augmented {
  Image image;
  int label = 0;
  AugmentDraw draw;
};

Augmented augment(const Image& image, int label, const AugmentConfig& config, Rng& rng);

// Per-sample stream so parallel workers reproduce a serial run.
inline Rng augment_stream(std::uint64_t seed, std::uint64_t sample_id, std::uint64_t epoch) {
  return make_rng(seed, {0x617567ULL, sample_id, epoch});
}

Image rotate_bilinear(const Image& image, double angle_deg);
Image flip_horizontal(const Image& image);
Image flip_vertical(const Image& image);

}  // namespace vdcnet

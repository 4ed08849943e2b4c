#include "vdcnet/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "vdcnet/errors.hpp"

namespace vdcnet {

void AugmentConfig::validate() const {
  if (rotation_deg < 0 || channel_shift < 0) throw ArgumentError("augment: ranges must be non-negative");
  if (!(brightness_min <= brightness_max) || brightness_min < 0) {
    throw ArgumentError("augment: brightness range is not ordered");
  }
  if (!(erase_frac_min <= erase_frac_max) || erase_frac_min < 0 || erase_frac_max > 1) {
    throw ArgumentError("augment: erase fraction range must be ordered inside [0, 1]");
  }
  if (erase_prob < 0 || erase_prob > 1) throw ArgumentError("augment: erase probability outside [0, 1]");
}

AugmentConfig AugmentConfig::identity() {
  AugmentConfig c;
  c.rotation_deg = 0;
  c.channel_shift = 0;
  c.h_flip = c.v_flip = false;
  c.brightness_min = c.brightness_max = 1;
  c.erase_prob = 0;
  return c;
}

double AugmentDraw::erase_fraction(std::size_t width, std::size_t height) const {
  if (!erase || width == 0 || height == 0) return 0;
  return double(erase_w * erase_h) / double(width * height);
}

namespace {

double uniform(Rng& rng, double lo, double hi) {
  return lo == hi ? lo : std::uniform_real_distribution<double>(lo, hi)(rng);
}

std::uint8_t to_u8(double v) { return std::uint8_t(std::clamp(std::lround(v), 0L, 255L)); }

bool degenerate(std::size_t w, std::size_t h) { return w < 4 || h < 4; }

}  // namespace

AugmentDraw draw_augment(const AugmentConfig& c, std::size_t width, std::size_t height, Rng& rng) {
  c.validate();
  AugmentDraw d;
  // Draw counts do not depend on outcomes, so one stage's setting never shifts another's stream.
  d.angle_deg = uniform(rng, -c.rotation_deg, c.rotation_deg);
  for (auto& s : d.shift) s = uniform(rng, -c.channel_shift, c.channel_shift);
  const double hf = uniform(rng, 0, 1), vf = uniform(rng, 0, 1);
  d.h_flip = c.h_flip && hf < 0.5;
  d.v_flip = c.v_flip && vf < 0.5;
  d.brightness = uniform(rng, c.brightness_min, c.brightness_max);
  const double ep = uniform(rng, 0, 1);
  const double frac = uniform(rng, c.erase_frac_min, c.erase_frac_max);
  const double log_aspect = uniform(rng, std::log(0.3), std::log(1 / 0.3));
  d.erase_seed = rng();
  d.erase = ep < c.erase_prob;
  if (degenerate(width, height)) {
    d.angle_deg = 0;
    d.shift = {0, 0, 0};
    d.erase = false;
    return d;
  }
  if (d.erase) {
    const double area = frac * double(width) * double(height);
    double aspect = std::exp(log_aspect);
    // Shrink the aspect towards 1 until the rectangle fits inside the image.
    for (int i = 0; i < 64; ++i) {
      const double w = std::sqrt(area * aspect), h = std::sqrt(area / aspect);
      if (w <= double(width) && h <= double(height)) break;
      aspect = std::pow(aspect, 0.8);
    }
    d.erase_w = std::clamp<std::size_t>(std::size_t(std::lround(std::sqrt(area * aspect))), 1, width);
    d.erase_h = std::clamp<std::size_t>(std::size_t(std::lround(area / double(d.erase_w))), 1, height);
    // Integer rounding may leave the fraction just outside the drawn range; nudge the height.
    const double lo = c.erase_frac_min * double(width * height), hi = c.erase_frac_max * double(width * height);
    while (double(d.erase_w * d.erase_h) < lo && d.erase_h < height) ++d.erase_h;
    while (double(d.erase_w * d.erase_h) > hi && d.erase_h > 1) --d.erase_h;
    d.erase_x = std::size_t(uniform(rng, 0, double(width - d.erase_w + 1)));
    d.erase_y = std::size_t(uniform(rng, 0, double(height - d.erase_h + 1)));
    d.erase_x = std::min(d.erase_x, width - d.erase_w);
    d.erase_y = std::min(d.erase_y, height - d.erase_h);
  }
  return d;
}

Image rotate_bilinear(const Image& src, double angle_deg) {
  if (angle_deg == 0) return src;
  const double a = angle_deg * std::numbers::pi / 180;
  const double ca = std::cos(a), sa = std::sin(a);
  const double cx = (double(src.width) - 1) / 2, cy = (double(src.height) - 1) / 2;
  Image out(src.width, src.height, 0);
  auto sample = [&](long x, long y, std::size_t c) -> double {
    if (x < 0 || y < 0 || x >= long(src.width) || y >= long(src.height)) return 0.0;
    return src.at(std::size_t(x), std::size_t(y), c);
  };
  for (std::size_t y = 0; y < src.height; ++y)
    for (std::size_t x = 0; x < src.width; ++x) {
      const double dx = double(x) - cx, dy = double(y) - cy;
      const double sx = ca * dx + sa * dy + cx, sy = -sa * dx + ca * dy + cy;
      if (sx <= -1 || sy <= -1 || sx >= double(src.width) || sy >= double(src.height)) continue;
      const long x0 = long(std::floor(sx)), y0 = long(std::floor(sy));
      const double fx = sx - double(x0), fy = sy - double(y0);
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = (1 - fx) * (1 - fy) * sample(x0, y0, c) + fx * (1 - fy) * sample(x0 + 1, y0, c) +
                         (1 - fx) * fy * sample(x0, y0 + 1, c) + fx * fy * sample(x0 + 1, y0 + 1, c);
        out.at(x, y, c) = to_u8(v);
      }
    }
  return out;
}

Image flip_horizontal(const Image& src) {
  Image out(src.width, src.height);
  for (std::size_t y = 0; y < src.height; ++y)
    for (std::size_t x = 0; x < src.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) out.at(src.width - 1 - x, y, c) = src.at(x, y, c);
  return out;
}

Image flip_vertical(const Image& src) {
  Image out(src.width, src.height);
  for (std::size_t y = 0; y < src.height; ++y)
    std::copy_n(src.pixels.begin() + std::ptrdiff_t(y * src.width * 3), src.width * 3,
                out.pixels.begin() + std::ptrdiff_t((src.height - 1 - y) * src.width * 3));
  return out;
}

Image apply_augment(const Image& image, const AugmentDraw& d) {
  Image img = rotate_bilinear(image, d.angle_deg);
  if (d.shift[0] != 0 || d.shift[1] != 0 || d.shift[2] != 0) {
    for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = to_u8(img.pixels[i] + d.shift[i % 3]);
  }
  if (d.h_flip) img = flip_horizontal(img);
  if (d.v_flip) img = flip_vertical(img);
  if (d.brightness != 1) {
    for (auto& v : img.pixels) v = to_u8(v * d.brightness);
  }
  if (d.erase) {
    Rng fill(d.erase_seed);
    std::uniform_int_distribution<int> u(0, 255);
    for (std::size_t y = d.erase_y; y < d.erase_y + d.erase_h; ++y)
      for (std::size_t x = d.erase_x; x < d.erase_x + d.erase_w; ++x)
        for (std::size_t c = 0; c < 3; ++c) img.at(x, y, c) = std::uint8_t(u(fill));
  }
  return img;
}

Augmented augment(const Image& image, int label, const AugmentConfig& config, Rng& rng) {
  Augmented out;
  out.draw = draw_augment(config, image.width, image.height, rng);
  out.image = apply_augment(image, out.draw);
  out.label = label;
  return out;
}

}  // namespace vdcnet

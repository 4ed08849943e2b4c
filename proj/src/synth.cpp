#include "vdcnet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "vdcnet/errors.hpp"

namespace vdcnet {

SynthParams SynthParams::half_scale() { return SynthParams{}; }

SynthParams SynthParams::full_scale() {
  SynthParams p;
  p.image_size = 1000;
  p.radius_min = 80;
  p.radius_max = 96;
  p.center_jitter = 60;
  p.background_gradient = 8;
  p.thickness_min = 3;
  p.thickness_max = 7;
  p.min_quadrant_pixels = 100;
  return p;
}

void SynthParams::validate() const {
  auto ordered = [](double lo, double hi, const char* what) {
    if (!(lo <= hi)) throw ArgumentError(std::string("synth: ") + what + " range is not ordered");
  };
  ordered(radius_min, radius_max, "radius");
  ordered(ring_brightness_min, ring_brightness_max, "ring brightness");
  ordered(interior_brightness_min, interior_brightness_max, "interior brightness");
  ordered(background_min, background_max, "background");
  ordered(double(crack_count_min), double(crack_count_max), "crack count");
  ordered(zone_inner, zone_outer, "crack zone");
  ordered(arc_span_min_deg, arc_span_max_deg, "arc span");
  ordered(thickness_min, thickness_max, "thickness");
  ordered(crack_brightness_min, crack_brightness_max, "crack brightness");
  ordered(dark_brightness_min, dark_brightness_max, "dark crack brightness");
  if (radius_min <= 0) throw ArgumentError("synth: radius must be positive");
  if (zone_inner <= 1.0) throw ArgumentError("synth: crack zone must start outside the pillar (inner bound > 1)");
  if (crack_count_min < 1) throw ArgumentError("synth: at least one crack per damaged image");
  if (double(image_size) < 4 * radius_max) throw ArgumentError("synth: image size must be at least 4x the radius");
  if (dark_crack_prob < 0 || dark_crack_prob > 1) throw ArgumentError("synth: dark crack probability outside [0, 1]");
  if (thickness_max >= (zone_outer - zone_inner) * radius_min) {
    throw ArgumentError("synth: crack thickness does not fit inside the crack zone");
  }
}

namespace {

constexpr double kPi = std::numbers::pi;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

// Fraction of a unit pixel inside a band of half-width `half` around 0,
// approximated by a 1-px linear ramp.
double band_coverage(double offset, double half) { return std::clamp(half + 0.5 - std::abs(offset), 0.0, 1.0); }

double wrap_angle(double a) {
  a = std::fmod(a, 2 * kPi);
  return a < 0 ? a + 2 * kPi : a;
}

bool angle_in_arc(double angle, const ArcRecord& arc) { return wrap_angle(angle - arc.start) <= arc.span; }

std::size_t quadrant_of(double dx, double dy) { return (dy >= 0 ? 2 : 0) + (dx >= 0 ? 1 : 0); }

struct Canvas {
  std::size_t size;
  std::vector<double> v;  // gray level per pixel
  explicit Canvas(std::size_t s) : size(s), v(s * s, 0.0) {}
  double& at(std::size_t x, std::size_t y) { return v[y * size + x]; }
};

void blend(double& dst, double value, double alpha) { dst = dst * (1 - alpha) + value * alpha; }

std::vector<ArcRecord> sample_arcs(const SynthParams& p, double radius, Rng& rng) {
  const auto count = std::uniform_int_distribution<std::size_t>(p.crack_count_min, p.crack_count_max)(rng);
  std::vector<ArcRecord> arcs(count);
  for (auto& a : arcs) {
    a.thickness = uniform(rng, p.thickness_min, p.thickness_max);
    a.radius = uniform(rng, p.zone_inner * radius + a.thickness / 2, p.zone_outer * radius - a.thickness / 2);
    a.start = uniform(rng, 0, 2 * kPi);
    a.span = uniform(rng, p.arc_span_min_deg, p.arc_span_max_deg) * kPi / 180;
    a.dark = std::bernoulli_distribution(p.dark_crack_prob)(rng);
    a.brightness = a.dark ? uniform(rng, p.dark_brightness_min, p.dark_brightness_max)
                          : uniform(rng, p.crack_brightness_min, p.crack_brightness_max);
  }
  return arcs;
}

// Pixel centers inside the footprint of any arc.
GrayImage rasterize_mask(std::size_t size, double cx, double cy, const std::vector<ArcRecord>& arcs) {
  GrayImage mask(size, size);
  double reach = 0;
  for (const auto& a : arcs) reach = std::max(reach, a.radius + a.thickness);
  const std::size_t x0 = std::size_t(std::clamp(cx - reach - 1, 0.0, double(size)));
  const std::size_t x1 = std::size_t(std::clamp(cx + reach + 2, 0.0, double(size)));
  const std::size_t y0 = std::size_t(std::clamp(cy - reach - 1, 0.0, double(size)));
  const std::size_t y1 = std::size_t(std::clamp(cy + reach + 2, 0.0, double(size)));
  for (std::size_t y = y0; y < y1; ++y)
    for (std::size_t x = x0; x < x1; ++x) {
      const double dx = double(x) - cx, dy = double(y) - cy;
      const double rho = std::hypot(dx, dy), ang = std::atan2(dy, dx);
      for (const auto& a : arcs)
        if (std::abs(rho - a.radius) <= a.thickness / 2 && angle_in_arc(ang, a)) {
          mask.at(x, y) = 255;
          break;
        }
    }
  return mask;
}

std::array<std::size_t, 4> quadrant_counts(const GrayImage& mask, double cx, double cy) {
  std::array<std::size_t, 4> counts{};
  for (std::size_t y = 0; y < mask.height; ++y)
    for (std::size_t x = 0; x < mask.width; ++x)
      if (mask.at(x, y)) ++counts[quadrant_of(double(x) - std::round(cx), double(y) - std::round(cy))];
  return counts;
}

}  // namespace

SynthSample generate_sample(const SynthParams& p, int label, Rng& rng) {
  p.validate();
  if (label != 0 && label != 1) throw ArgumentError("synth: label must be 0 or 1");
  const std::size_t S = p.image_size;
  SynthSample s;
  s.label = label;
  TruthRecord& t = s.truth;
  t.label = label;
  t.cx = double(S) / 2 + uniform(rng, -p.center_jitter, p.center_jitter);
  t.cy = double(S) / 2 + uniform(rng, -p.center_jitter, p.center_jitter);
  t.radius = uniform(rng, p.radius_min, p.radius_max);
  t.ring_brightness = uniform(rng, p.ring_brightness_min, p.ring_brightness_max);
  t.interior_brightness = uniform(rng, p.interior_brightness_min, p.interior_brightness_max);
  t.background = uniform(rng, p.background_min, p.background_max);
  const double grad_angle = uniform(rng, 0, 2 * kPi);
  const double grad_amp = uniform(rng, 0, p.background_gradient);
  std::array<double, 3> tint;
  for (auto& g : tint) g = uniform(rng, 0.94, 1.06);

  Canvas canvas(S);
  std::normal_distribution<double> noise(0.0, p.noise_sigma);
  for (std::size_t y = 0; y < S; ++y)
    for (std::size_t x = 0; x < S; ++x) {
      const double u = ((double(x) - S / 2.0) * std::cos(grad_angle) + (double(y) - S / 2.0) * std::sin(grad_angle)) /
                       (S / 2.0);
      canvas.at(x, y) = t.background + grad_amp * u + noise(rng);
    }

  // Pillar: dimmer interior disk with a bright contact ring.
  const double ring_inner = t.radius * (1 - p.ring_fraction);
  const long r_ext = long(t.radius) + 2;
  for (long y = long(t.cy) - r_ext; y <= long(t.cy) + r_ext; ++y)
    for (long x = long(t.cx) - r_ext; x <= long(t.cx) + r_ext; ++x) {
      if (x < 0 || y < 0 || x >= long(S) || y >= long(S)) continue;
      const double rho = std::hypot(double(x) - t.cx, double(y) - t.cy);
      const double disk = std::clamp(t.radius + 0.5 - rho, 0.0, 1.0);
      if (disk <= 0) continue;
      const double ring = std::clamp(rho - ring_inner + 0.5, 0.0, 1.0);
      const double level = t.interior_brightness * (1 - ring) + t.ring_brightness * ring;
      blend(canvas.at(std::size_t(x), std::size_t(y)), level + 0.5 * noise(rng), disk);
    }

  s.crack_mask = GrayImage(S, S);
  if (label == 1) {
    constexpr int kTries = 64;
    bool covered = false;
    for (int attempt = 0; attempt < kTries && !covered; ++attempt) {
      t.arcs = sample_arcs(p, t.radius, rng);
      s.crack_mask = rasterize_mask(S, t.cx, t.cy, t.arcs);
      const auto counts = quadrant_counts(s.crack_mask, t.cx, t.cy);
      covered = std::all_of(counts.begin(), counts.end(), [&](std::size_t c) { return c >= p.min_quadrant_pixels; });
    }
    if (!covered) {
      // Fallback: one extra arc centered in each quadrant that is still missing.
      const auto counts = quadrant_counts(s.crack_mask, t.cx, t.cy);
      for (std::size_t q = 0; q < 4; ++q) {
        if (counts[q] >= p.min_quadrant_pixels) continue;
        static constexpr double mid[4] = {-0.75 * kPi, -0.25 * kPi, 0.75 * kPi, 0.25 * kPi};
        ArcRecord a = sample_arcs(p, t.radius, rng).front();
        a.span = kPi / 3;
        a.start = wrap_angle(mid[q] - a.span / 2);
        t.arcs.push_back(a);
      }
      s.crack_mask = rasterize_mask(S, t.cx, t.cy, t.arcs);
    }
    const std::vector<double> before = canvas.v;
    for (const auto& a : t.arcs) {
      const double phase = uniform(rng, 0, 2 * kPi), freq = uniform(rng, 2, 6);
      const long r_out = long(a.radius + a.thickness) + 2;
      for (long y = long(t.cy) - r_out; y <= long(t.cy) + r_out; ++y)
        for (long x = long(t.cx) - r_out; x <= long(t.cx) + r_out; ++x) {
          if (x < 0 || y < 0 || x >= long(S) || y >= long(S)) continue;
          const double dx = double(x) - t.cx, dy = double(y) - t.cy;
          const double ang = std::atan2(dy, dx);
          if (!angle_in_arc(ang, a)) continue;
          const double cov = band_coverage(std::hypot(dx, dy) - a.radius, a.thickness / 2);
          if (cov <= 0) continue;
          // Reflections vary along the crack; tips catch the most light.
          const double along = wrap_angle(ang - a.start) / std::max(a.span, 1e-9);
          const double tip = std::exp(-std::pow(std::min(along, 1 - along) * 8, 2));
          const double level = a.brightness * (0.8 + 0.15 * std::sin(freq * ang + phase) + 0.25 * tip);
          blend(canvas.at(std::size_t(x), std::size_t(y)), level, cov);
        }
    }
    if (p.energy_neutral_cracks) {
      // Take the light the cracks added back out of the untouched background.
      double added = 0;
      std::size_t free_pixels = 0;
      std::vector<char> is_free(S * S, 0);
      for (std::size_t y = 0; y < S; ++y)
        for (std::size_t x = 0; x < S; ++x) {
          const std::size_t i = y * S + x;
          added += canvas.v[i] - before[i];
          if (canvas.v[i] == before[i] && std::hypot(double(x) - t.cx, double(y) - t.cy) > t.radius + 1) {
            is_free[i] = 1;
            ++free_pixels;
          }
        }
      const double offset = free_pixels ? added / double(free_pixels) : 0.0;
      for (std::size_t i = 0; i < S * S; ++i)
        if (is_free[i]) canvas.v[i] -= offset;
    }
  }

  // Confounders, identical distribution for both classes.
  t.scratches = std::poisson_distribution<std::size_t>(p.scratch_rate)(rng);
  for (std::size_t i = 0; i < t.scratches; ++i) {
    const double x0 = uniform(rng, 0, double(S)), y0 = uniform(rng, 0, double(S));
    const double ang = uniform(rng, 0, kPi), len = uniform(rng, 0.08, 0.4) * double(S);
    const double half = uniform(rng, 0.4, 1.0), level = uniform(rng, 40, 110);
    const double ux = std::cos(ang), uy = std::sin(ang);
    const long steps = long(len);
    for (long k = 0; k <= steps; ++k) {
      const double px = x0 + ux * double(k), py = y0 + uy * double(k);
      for (long oy = -2; oy <= 2; ++oy)
        for (long ox = -2; ox <= 2; ++ox) {
          const long x = long(std::floor(px)) + ox, y = long(std::floor(py)) + oy;
          if (x < 0 || y < 0 || x >= long(S) || y >= long(S)) continue;
          const double d = std::abs(-(double(x) - x0) * uy + (double(y) - y0) * ux);
          const double cov = band_coverage(d, half);
          if (cov > 0) {
            double& v = canvas.at(std::size_t(x), std::size_t(y));
            v = std::max(v, v * (1 - cov) + level * cov);
          }
        }
    }
  }
  t.debris = std::poisson_distribution<std::size_t>(p.debris_rate)(rng);
  for (std::size_t i = 0; i < t.debris; ++i) {
    const double x0 = uniform(rng, 0, double(S)), y0 = uniform(rng, 0, double(S));
    const double r = uniform(rng, 1.0, 3.5), level = uniform(rng, 60, 180);
    for (long y = long(y0 - r) - 1; y <= long(y0 + r) + 1; ++y)
      for (long x = long(x0 - r) - 1; x <= long(x0 + r) + 1; ++x) {
        if (x < 0 || y < 0 || x >= long(S) || y >= long(S)) continue;
        const double cov = std::clamp(r + 0.5 - std::hypot(double(x) - x0, double(y) - y0), 0.0, 1.0);
        if (cov > 0) blend(canvas.at(std::size_t(x), std::size_t(y)), level, cov);
      }
  }

  s.image = Image(S, S);
  for (std::size_t i = 0; i < S * S; ++i)
    for (std::size_t c = 0; c < 3; ++c)
      s.image.pixels[i * 3 + c] = std::uint8_t(std::clamp(std::lround(canvas.v[i] * tint[c]), 0L, 255L));
  return s;
}

std::vector<int> assign_labels(std::size_t n, double damaged_frac, std::uint64_t seed) {
  if (n < 2) throw ArgumentError("dataset needs at least 2 samples");
  if (damaged_frac < 0 || damaged_frac > 1) throw ArgumentError("damaged fraction outside [0, 1]");
  const auto damaged = std::size_t(std::llround(double(n) * damaged_frac));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng = make_rng(seed, {fnv1a("labels")});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> labels(n, 0);
  for (std::size_t i = 0; i < damaged; ++i) labels[order[i]] = 1;
  return labels;
}

DatasetManifest generate_dataset(std::size_t n, double damaged_frac, const SynthParams& params, std::uint64_t seed,
                                 const std::filesystem::path& out_dir, const std::string& config_hash) {
  params.validate();
  const auto labels = assign_labels(n, damaged_frac, seed);
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  std::filesystem::create_directories(out_dir / "masks", ec);
  if (ec) throw IoError("cannot create dataset directory " + out_dir.string() + ": " + ec.message());

  DatasetManifest m;
  m.seed = seed;
  m.config_hash = config_hash;
  m.records.resize(n);
  std::vector<TruthRecord> truths(n);
  std::vector<std::string> errors(n);
#pragma omp parallel for schedule(dynamic)
  for (long li = 0; li < long(n); ++li) {
    const std::size_t i = std::size_t(li);
    try {
      char id[32];
      std::snprintf(id, sizeof id, "pillar_%04zu", i);
      Rng rng = make_rng(seed, {i});
      SynthSample s = generate_sample(params, labels[i], rng);
      s.truth.id = id;
      const std::string image_rel = std::string("images/") + id + ".ppm";
      const std::string mask_rel = std::string("masks/") + id + ".pgm";
      save_image(s.image, out_dir / image_rel, provenance_comment(seed, config_hash));
      save_gray(s.crack_mask, out_dir / mask_rel, provenance_comment(seed, config_hash));
      ManifestRecord& r = m.records[i];
      r.id = id;
      r.path = image_rel;
      r.label = labels[i];
      r.parent_id = id;
      r.mask_path = mask_rel;
      r.bbox = BBox{s.truth.cx, s.truth.cy, 2 * s.truth.radius, 2 * s.truth.radius, BoxSource::truth};
      truths[i] = std::move(s.truth);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw IoError("dataset generation failed: " + e);

  write_manifest(m, out_dir / "manifest.jsonl");
  std::ofstream f(out_dir / "truth.jsonl");
  if (!f) throw IoError("cannot write " + (out_dir / "truth.jsonl").string());
  f << nlohmann::json{{"seed", seed}, {"config_hash", config_hash}}.dump() << '\n';
  for (const auto& t : truths) {
    nlohmann::json arcs = nlohmann::json::array();
    for (const auto& a : t.arcs) {
      arcs.push_back({{"radius", a.radius},
                      {"thickness", a.thickness},
                      {"start", a.start},
                      {"span", a.span},
                      {"brightness", a.brightness},
                      {"dark", a.dark}});
    }
    f << nlohmann::json{{"id", t.id},
                        {"label", t.label},
                        {"cx", t.cx},
                        {"cy", t.cy},
                        {"radius", t.radius},
                        {"ring_brightness", t.ring_brightness},
                        {"interior_brightness", t.interior_brightness},
                        {"background", t.background},
                        {"scratches", t.scratches},
                        {"debris", t.debris},
                        {"arcs", arcs}}
             .dump()
      << '\n';
  }
  if (!f) throw IoError("failed writing truth records");
  return m;
}

}  // namespace vdcnet

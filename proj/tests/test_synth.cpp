#include <doctest.h>

#include <cmath>

#include "vdcnet/errors.hpp"
#include "vdcnet/synth.hpp"

using namespace vdcnet;
namespace fs = std::filesystem;

TEST_SUITE("synth") {
  TEST_CASE("undamaged samples have an empty mask") {
    for (std::uint64_t i = 0; i < 5; ++i) {
      Rng rng = make_rng(3, {i});
      const auto s = generate_sample(SynthParams{}, 0, rng);
      CHECK(std::all_of(s.crack_mask.pixels.begin(), s.crack_mask.pixels.end(), [](auto v) { return v == 0; }));
      CHECK(s.truth.arcs.empty());
    }
  }

  TEST_CASE("arc pixels stay inside the crack zone and cover all quadrants") {
    const SynthParams p;
    for (std::uint64_t i = 0; i < 20; ++i) {
      Rng rng = make_rng(8, {i});
      const auto s = generate_sample(p, 1, rng);
      const auto& t = s.truth;
      REQUIRE(!t.arcs.empty());
      std::array<std::size_t, 4> quad{};
      std::size_t outside = 0;
      for (std::size_t y = 0; y < p.image_size; ++y)
        for (std::size_t x = 0; x < p.image_size; ++x) {
          if (!s.crack_mask.at(x, y)) continue;
          const double dx = double(x) - t.cx, dy = double(y) - t.cy;
          const double rho = std::hypot(dx, dy);
          outside += rho < 1.1 * t.radius - 1 || rho > 1.5 * t.radius + 1;
          const double qx = double(x) - std::round(t.cx), qy = double(y) - std::round(t.cy);
          ++quad[(qy >= 0 ? 2 : 0) + (qx >= 0 ? 1 : 0)];
        }
      CHECK(outside == 0);
      for (auto q : quad) CHECK(q >= p.min_quadrant_pixels);
      for (const auto& a : t.arcs) {
        CHECK(a.radius - a.thickness / 2 >= 1.1 * t.radius - 1e-9);
        CHECK(a.radius + a.thickness / 2 <= 1.5 * t.radius + 1e-9);
      }
    }
  }

  TEST_CASE("same seed gives a bit-identical sample") {
    Rng a = make_rng(77, {5}), b = make_rng(77, {5}), c = make_rng(78, {5});
    const auto sa = generate_sample(SynthParams{}, 1, a);
    const auto sb = generate_sample(SynthParams{}, 1, b);
    const auto sc = generate_sample(SynthParams{}, 1, c);
    CHECK(sa.image == sb.image);
    CHECK(sa.crack_mask == sb.crack_mask);
    CHECK_FALSE(sa.image == sc.image);
  }

  TEST_CASE("class balance is exact") {
    auto count = [](const std::vector<int>& v) { return std::count(v.begin(), v.end(), 1); };
    CHECK(count(assign_labels(322, 0.5, 1)) == 161);
    CHECK(count(assign_labels(2, 0.5, 9)) == 1);
    CHECK(count(assign_labels(10, 0.3, 9)) == 3);
    CHECK(assign_labels(50, 0.5, 4) == assign_labels(50, 0.5, 4));
    CHECK_THROWS_AS(assign_labels(1, 0.5, 1), ArgumentError);
  }

  TEST_CASE("parameter validation") {
    SynthParams p;
    p.zone_inner = 0.9;
    CHECK_THROWS_AS(p.validate(), ArgumentError);
    p = SynthParams{};
    p.image_size = 150;
    CHECK_THROWS_AS(p.validate(), ArgumentError);
    p = SynthParams{};
    p.radius_min = 50;
    p.radius_max = 40;
    CHECK_THROWS_AS(p.validate(), ArgumentError);
    CHECK_NOTHROW(SynthParams::full_scale().validate());
  }

  TEST_CASE("dataset on disk") {
    const fs::path dir = fs::temp_directory_path() / "vdcnet_test_synth";
    fs::remove_all(dir);
    const auto m = generate_dataset(6, 0.5, SynthParams{}, 21, dir, "hash");
    CHECK(m.records.size() == 6);
    CHECK(m.count_label(1) == 3);
    const auto back = read_manifest(dir / "manifest.jsonl");
    CHECK(back.seed == 21);
    CHECK(back.records == m.records);
    CHECK(fs::exists(dir / "truth.jsonl"));
    for (const auto& r : back.records) {
      const Image img = load_image(dir / r.path);
      const GrayImage mask = load_gray(dir / r.mask_path);
      const bool any = std::any_of(mask.pixels.begin(), mask.pixels.end(), [](auto v) { return v != 0; });
      CHECK(any == (r.label == 1));
      CHECK(img.width == 500);
      REQUIRE(r.bbox);
      CHECK(r.bbox->source == BoxSource::truth);
    }
    fs::remove_all(dir);
  }

  TEST_CASE("detector recovers the center and classes have matching brightness") {
    const SynthParams p;
    const auto labels = assign_labels(322, 0.5, 2024);
    std::size_t hits = 0;
    double sum[2] = {0, 0};
    for (std::size_t i = 0; i < labels.size(); ++i) {
      Rng rng = make_rng(2024, {i});
      const auto s = generate_sample(p, labels[i], rng);
      const BBox b = locate_pillar(s.image);
      hits += std::abs(b.cx - s.truth.cx) <= 3 && std::abs(b.cy - s.truth.cy) <= 3;
      sum[labels[i]] += mean_brightness(s.image);
    }
    CHECK(double(hits) / double(labels.size()) >= 0.99);
    const double m0 = sum[0] / 161, m1 = sum[1] / 161;
    MESSAGE("mean brightness undamaged " << m0 << " damaged " << m1);
    CHECK(std::abs(m1 - m0) / m0 < 0.02);
  }
}

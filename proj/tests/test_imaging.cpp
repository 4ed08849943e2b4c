#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "vdcnet/errors.hpp"
#include "vdcnet/imaging.hpp"
#include "vdcnet/manifest.hpp"

using namespace vdcnet;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("vdcnet_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Image random_image(std::size_t w, std::size_t h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Image img(w, h);
  for (auto& v : img.pixels) v = std::uint8_t(rng() & 0xFF);
  return img;
}

// Anti-aliased uniform disk on a black background.
Image disk_image(std::size_t size, double cx, double cy, double r, std::uint8_t level = 200) {
  Image img(size, size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double cov = std::clamp(r + 0.5 - std::hypot(double(x) - cx, double(y) - cy), 0.0, 1.0);
      for (std::size_t c = 0; c < 3; ++c) img.at(x, y, c) = std::uint8_t(std::lround(level * cov));
    }
  return img;
}

}  // namespace

TEST_SUITE("image io") {
  TEST_CASE("save then load is bit-identical") {
    const auto dir = temp_dir("io");
    const Image img = random_image(37, 21, 4);
    save_image(img, dir / "a.ppm");
    CHECK(load_image(dir / "a.ppm") == img);
    const Image px(1, 1);
    save_image(px, dir / "b.ppm");
    CHECK(load_image(dir / "b.ppm") == px);
    GrayImage g(5, 3, 7);
    g.at(4, 2) = 255;
    save_gray(g, dir / "g.pgm");
    CHECK(load_gray(dir / "g.pgm") == g);
    fs::remove_all(dir);
  }

  TEST_CASE("corrupted or unsupported files are rejected with the path") {
    const auto dir = temp_dir("io_bad");
    {
      std::ofstream(dir / "bad.ppm") << "P6\n12 x\n255\n";
      std::ofstream(dir / "short.ppm") << "P6\n4 4\n255\nabc";
      std::ofstream(dir / "png.ppm") << "\x89PNG....";
    }
    CHECK_THROWS_AS(load_image(dir / "bad.ppm"), IoError);
    CHECK_THROWS_AS(load_image(dir / "short.ppm"), IoError);
    CHECK_THROWS_AS(load_image(dir / "png.ppm"), IoError);
    CHECK_THROWS_AS(load_image(dir / "missing.ppm"), IoError);
    try {
      load_image(dir / "bad.ppm");
    } catch (const IoError& e) {
      CHECK(std::string(e.what()).find("bad.ppm") != std::string::npos);
    }
    fs::remove_all(dir);
  }
}

TEST_SUITE("locate_pillar") {
  TEST_CASE("disk at (350, 350) radius 88") {
    const BBox b = locate_pillar(disk_image(700, 350, 350, 88));
    CHECK(std::abs(b.cx - 350) <= 3);
    CHECK(std::abs(b.cy - 350) <= 3);
    CHECK(std::abs(b.width - 176) <= 17.6);
    CHECK(b.source == BoxSource::detector);
  }

  TEST_CASE("black image has no pillar") {
    CHECK_THROWS_AS(locate_pillar(Image(64, 64)), NoPillarFound);
  }

  TEST_CASE("tiny bright speck is below the minimum area") {
    Image img(100, 100);
    for (std::size_t c = 0; c < 3; ++c) img.at(50, 50, c) = 255;
    CHECK_THROWS_AS(locate_pillar(img), NoPillarFound);
  }

  TEST_CASE("translation equivariance") {
    const BBox base = locate_pillar(disk_image(400, 180.3, 190.6, 40));
    for (auto [dx, dy] : std::vector<std::pair<double, double>>{{7, 0}, {0, -11}, {23.5, 15.25}, {-31, 4.7}}) {
      const BBox moved = locate_pillar(disk_image(400, 180.3 + dx, 190.6 + dy, 40));
      CHECK(std::abs(moved.cx - base.cx - dx) <= 1);
      CHECK(std::abs(moved.cy - base.cy - dy) <= 1);
    }
  }

  TEST_CASE("VIA annotation bypass returns the box verbatim") {
    const auto dir = temp_dir("via");
    {
      std::ofstream f(dir / "via.json");
      f << R"({"_via_img_metadata": {"a.ppm123": {"filename": "a.ppm", "size": 123, "regions": [
            {"shape_attributes": {"name": "rect", "x": 100, "y": 120, "width": 60, "height": 40},
             "region_attributes": {}}], "file_attributes": {}},
          "b.ppm9": {"filename": "b.ppm", "size": 9, "regions": []}}})";
    }
    const auto boxes = read_via_annotations(dir / "via.json");
    REQUIRE(boxes.size() == 1);
    const BBox& b = boxes.at("a.ppm");
    CHECK(b.cx == 130);
    CHECK(b.cy == 140);
    CHECK(b.width == 60);
    CHECK(b.height == 40);
    CHECK(b.source == BoxSource::annotation);
    fs::remove_all(dir);
  }
}

TEST_SUITE("crop_centered") {
  TEST_CASE("1000 to 700 halves the pixel count") {
    const Image img(1000, 1000, 9);
    const Image crop = crop_centered(img, BBox{500, 500, 176, 176});
    CHECK(crop.width == 700);
    CHECK(crop.height == 700);
    const double ratio = 1e6 / (700.0 * 700.0);
    CHECK(ratio == doctest::Approx(2.04).epsilon(0.01));
  }

  TEST_CASE("the pillar center lands at the crop center") {
    Image img(300, 260);
    img.at(123, 97, 1) = 200;
    const Image crop = crop_centered(img, BBox{123.2, 96.8, 10, 10}, 100);
    CHECK(crop.at(50, 50, 1) == 200);
  }

  TEST_CASE("corner pillar leaves at least one quadrant black") {
    const Image img(1000, 1000, 50);
    const Image crop = crop_centered(img, BBox{0, 0, 100, 100});
    CHECK(crop.width == 700);
    int black_quadrants = 0;
    for (std::size_t qy = 0; qy < 2; ++qy)
      for (std::size_t qx = 0; qx < 2; ++qx) {
        const Image q = extract_window(crop, long(qx * 350), long(qy * 350), 350, 350);
        black_quadrants += std::all_of(q.pixels.begin(), q.pixels.end(), [](auto v) { return v == 0; });
      }
    CHECK(black_quadrants == 3);
  }

  TEST_CASE("crop is about twice the diameter of a 350 px box") {
    CHECK(700.0 / 350.0 == doctest::Approx(2.0));
  }

  TEST_CASE("output size never depends on the pillar position") {
    const Image img(400, 300, 1);
    for (double cx : {0.0, 13.0, 200.0, 399.0})
      for (double cy : {0.0, 150.0, 299.0}) {
        const Image c = crop_centered(img, BBox{cx, cy, 20, 20}, 350);
        CHECK(c.width == 350);
        CHECK(c.height == 350);
      }
  }

  TEST_CASE("errors") {
    const Image img(100, 100);
    CHECK_THROWS_AS(crop_centered(img, BBox{-500, 50, 20, 20}, 50), ArgumentError);
    CHECK_THROWS_AS(crop_centered(img, BBox{50, 50, 20, 20}, 51), ArgumentError);
  }
}

TEST_SUITE("quadrant_split") {
  TEST_CASE("700 into 352 tiles overlaps by 4 px") {
    const auto a = quadrant_anchors(700, 352);
    CHECK(a[1][0] == 348);
    CHECK(a[0][0] + 352 - a[1][0] == 4);
    CHECK(a[2][1] == 348);
    CHECK(a[3][0] == 348);
    CHECK(a[3][1] == 348);
    const double ratio = 1e6 / (352.0 * 352.0);
    CHECK(ratio >= 7.9);
    CHECK(ratio <= 8.2);
  }

  TEST_CASE("704 is an exact partition") {
    const auto a = quadrant_anchors(704, 352);
    CHECK(a[1][0] == 352);
    CHECK(a[3][1] == 352);
  }

  TEST_CASE("reassembly is bit-exact and every pixel is covered") {
    for (auto [size, tile] : std::vector<std::pair<std::size_t, std::size_t>>{{700, 352}, {64, 33}, {350, 176}}) {
      const Image img = random_image(size, size, size);
      const auto set = quadrant_split(img, tile, "p", 1);
      for (const auto& t : set.tiles) {
        CHECK(t.width == tile);
        CHECK(t.height == tile);
      }
      CHECK(set.label == 1);
      CHECK(reassemble(set, size) == img);
    }
  }

  TEST_CASE("tile larger than the image or too small to cover") {
    const Image img(100, 100);
    CHECK_THROWS_AS(quadrant_split(img, 101), ArgumentError);
    CHECK_THROWS_AS(quadrant_split(img, 49), ArgumentError);
  }
}

TEST_SUITE("manifest") {
  TEST_CASE("round trip") {
    const auto dir = temp_dir("manifest");
    DatasetManifest m;
    m.seed = 42;
    m.config_hash = "abc";
    ManifestRecord r;
    r.id = "x_q1";
    r.path = "tiles/x_q1.ppm";
    r.label = 1;
    r.bbox = BBox{1.5, 2.25, 3, 4, BoxSource::truth};
    r.parent_id = "x";
    r.quadrant = 1;
    r.split = "test";
    r.mask_path = "tiles/x_q1_mask.pgm";
    m.records.push_back(r);
    r.id = "y";
    r.bbox.reset();
    r.discarded = true;
    r.flag = "no_pillar";
    m.records.push_back(r);
    write_manifest(m, dir / "m.jsonl");
    const auto back = read_manifest(dir / "m.jsonl");
    CHECK(back.seed == 42);
    CHECK(back.config_hash == "abc");
    REQUIRE(back.records.size() == 2);
    CHECK(back.records[0] == m.records[0]);
    CHECK(back.records[1] == m.records[1]);
    CHECK(back.usable().size() == 1);
    CHECK(resolve_path(dir / "m.jsonl", "a/b.ppm") == dir / "a/b.ppm");
    fs::remove_all(dir);
  }
}

TEST_SUITE("tensor conversion") {
  TEST_CASE("to_tensor is planar and scaled to [0, 1]") {
    Image img(2, 1);
    img.at(1, 0, 2) = 255;
    img.at(0, 0, 0) = 51;
    const auto t = to_tensor(img);
    CHECK(t.shape() == Shape{1, 3, 1, 2});
    CHECK(t.at(0, 0, 0, 0) == doctest::Approx(0.2));
    CHECK(t.at(0, 2, 0, 1) == 1.0f);
  }

  TEST_CASE("contact sheet layout") {
    const std::vector<Image> cells(5, Image(10, 8, 3));
    const Image s = contact_sheet(cells, 3, 2);
    CHECK(s.width == 34);
    CHECK(s.height == 18);
    CHECK(s.at(10, 0, 0) == 0);
    CHECK(s.at(12, 0, 0) == 3);
  }
}

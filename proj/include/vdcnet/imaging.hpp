#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vdcnet/tensor.hpp"

namespace vdcnet {

// 8-bit RGB raster, row-major, channels interleaved.
struct Image {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(std::size_t w, std::size_t h, std::uint8_t fill = 0);

  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c) { return pixels[(y * width + x) * 3 + c]; }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t c) const { return pixels[(y * width + x) * 3 + c]; }
  bool operator==(const Image&) const = default;
};

// 8-bit single-channel raster (crack masks, heatmap previews).
struct GrayImage {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> pixels;

  GrayImage() = default;
  GrayImage(std::size_t w, std::size_t h, std::uint8_t fill = 0);

  std::uint8_t& at(std::size_t x, std::size_t y) { return pixels[y * width + x]; }
  std::uint8_t at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }
  bool operator==(const GrayImage&) const = default;
};

// Binary PPM (P6) for RGB, binary PGM (P5) for gray. load_image also accepts
// P5 and replicates the channel. A non-empty comment is written as a header
// comment line (used for provenance).
Image load_image(const std::filesystem::path& path);
void save_image(const Image& image, const std::filesystem::path& path, const std::string& comment = {});
GrayImage load_gray(const std::filesystem::path& path);
void save_gray(const GrayImage& image, const std::filesystem::path& path, const std::string& comment = {});

enum class BoxSource { annotation, detector, truth };
const char* to_string(BoxSource source);
BoxSource parse_box_source(const std::string& text);

struct BBox {
  double cx = 0, cy = 0, width = 0, height = 0;
  BoxSource source = BoxSource::detector;
  bool operator==(const BBox&) const = default;
};

struct DetectorParams {
  double quantile = 0.98;
  std::size_t min_area = 200;
  std::size_t blur = 5;  // box filter side, odd
};

// Brightness quantile threshold on a blurred grayscale copy, largest
// 8-connected component, intensity-weighted centroid and tight box.
// Throws NoPillarFound.
BBox locate_pillar(const Image& image, const DetectorParams& params = {});

// Window of crop_size centered on round(bbox center); outside pixels are zero.
Image crop_centered(const Image& image, const BBox& bbox, std::size_t crop_size = 700);
GrayImage crop_centered(const GrayImage& image, const BBox& bbox, std::size_t crop_size = 700);

// Zero-filled sub-window with top-left (x0, y0); may extend past the borders.
Image extract_window(const Image& image, long x0, long y0, std::size_t w, std::size_t h);
GrayImage extract_window(const GrayImage& image, long x0, long y0, std::size_t w, std::size_t h);

struct QuadrantSet {
  std::array<Image, 4> tiles;  // TL, TR, BL, BR
  std::string parent_id;
  int label = 0;
};

// Top-left corners (x, y) of the four tiles in TL, TR, BL, BR order.
std::array<std::array<std::size_t, 2>, 4> quadrant_anchors(std::size_t size, std::size_t tile);
QuadrantSet quadrant_split(const Image& image, std::size_t tile = 352, std::string parent_id = {}, int label = 0);
std::array<GrayImage, 4> quadrant_split(const GrayImage& image, std::size_t tile = 352);
// Inverse of quadrant_split; overlap bands are taken from the first covering tile.
Image reassemble(const QuadrantSet& set, std::size_t size);

// (N, 3, H, W) in [0, 1]; all images must share dimensions.
Tensor<float> to_tensor(const std::vector<const Image*>& images);
Tensor<float> to_tensor(const Image& image);

double mean_brightness(const Image& image);

// Grid of equally sized images, `columns` per row, black gaps between cells.
Image contact_sheet(const std::vector<Image>& cells, std::size_t columns, std::size_t gap = 4);

// Reads VGG Image Annotator exports (plain export or project file with
// "_via_img_metadata"). Keyed by file name; rectangles only.
std::map<std::string, BBox> read_via_annotations(const std::filesystem::path& path);

}  // namespace vdcnet

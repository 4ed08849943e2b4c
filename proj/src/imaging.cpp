#include "vdcnet/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "vdcnet/errors.hpp"

namespace vdcnet {

Image::Image(std::size_t w, std::size_t h, std::uint8_t fill) : width(w), height(h), pixels(w * h * 3, fill) {}

GrayImage::GrayImage(std::size_t w, std::size_t h, std::uint8_t fill) : width(w), height(h), pixels(w * h, fill) {}

// ---------------------------------------------------------------------------
// Netpbm I/O

namespace {

struct Netpbm {
  char kind = 0;  // '5' or '6'
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> data;
};

Netpbm read_netpbm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open image " + path.string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  auto fail = [&](const std::string& why) -> Netpbm { throw IoError(path.string() + ": " + why); };
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    return fail("unsupported image format (expected binary PPM/PGM)");
  }
  std::size_t pos = 2;
  auto next_number = [&]() -> std::size_t {
    for (;;) {
      while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
      if (pos < bytes.size() && bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    if (pos >= bytes.size() || !std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      fail("corrupted header");
    }
    std::size_t v = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + std::size_t(bytes[pos++] - '0');
      if (v > (1u << 24)) fail("corrupted header");
    }
    return v;
  };
  Netpbm img;
  img.kind = bytes[1];
  img.width = next_number();
  img.height = next_number();
  const std::size_t maxval = next_number();
  if (img.width == 0 || img.height == 0) fail("empty image");
  if (maxval != 255) fail("only 8-bit images are supported (maxval " + std::to_string(maxval) + ")");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) fail("corrupted header");
  ++pos;
  const std::size_t channels = img.kind == '6' ? 3 : 1;
  const std::size_t need = img.width * img.height * channels;
  if (bytes.size() - pos < need) fail("truncated pixel data");
  img.data.assign(bytes.begin() + std::ptrdiff_t(pos), bytes.begin() + std::ptrdiff_t(pos + need));
  return img;
}

void write_netpbm(const std::filesystem::path& path, char kind, std::size_t w, std::size_t h,
                  const std::vector<std::uint8_t>& data, const std::string& comment) {
  if (comment.find('\n') != std::string::npos) throw ArgumentError("image comment must be a single line");
  if (w == 0 || h == 0) throw ArgumentError("cannot save an empty image to " + path.string());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << 'P' << kind << '\n';
  if (!comment.empty()) f << "# " << comment << '\n';
  f << w << ' ' << h << "\n255\n";
  f.write(reinterpret_cast<const char*>(data.data()), std::streamsize(data.size()));
  if (!f) throw IoError("failed writing " + path.string());
}

}  // namespace

Image load_image(const std::filesystem::path& path) {
  Netpbm raw = read_netpbm(path);
  Image img;
  img.width = raw.width;
  img.height = raw.height;
  if (raw.kind == '6') {
    img.pixels = std::move(raw.data);
  } else {
    img.pixels.resize(raw.data.size() * 3);
    for (std::size_t i = 0; i < raw.data.size(); ++i) img.pixels[3 * i] = img.pixels[3 * i + 1] = img.pixels[3 * i + 2] = raw.data[i];
  }
  return img;
}

void save_image(const Image& image, const std::filesystem::path& path, const std::string& comment) {
  write_netpbm(path, '6', image.width, image.height, image.pixels, comment);
}

GrayImage load_gray(const std::filesystem::path& path) {
  Netpbm raw = read_netpbm(path);
  if (raw.kind != '5') throw IoError(path.string() + ": expected a grayscale PGM");
  GrayImage img;
  img.width = raw.width;
  img.height = raw.height;
  img.pixels = std::move(raw.data);
  return img;
}

void save_gray(const GrayImage& image, const std::filesystem::path& path, const std::string& comment) {
  write_netpbm(path, '5', image.width, image.height, image.pixels, comment);
}

const char* to_string(BoxSource source) {
  switch (source) {
    case BoxSource::annotation: return "annotation";
    case BoxSource::detector: return "detector";
    case BoxSource::truth: return "truth";
  }
  return "?";
}

BoxSource parse_box_source(const std::string& text) {
  if (text == "annotation") return BoxSource::annotation;
  if (text == "detector") return BoxSource::detector;
  if (text == "truth") return BoxSource::truth;
  throw DataError("unknown bbox source '" + text + "'");
}

// ---------------------------------------------------------------------------
// Detector

namespace {

std::vector<double> box_blur_gray(const Image& img, std::size_t side) {
  const std::size_t w = img.width, h = img.height;
  std::vector<double> integral((w + 1) * (h + 1), 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    double row = 0;
    for (std::size_t x = 0; x < w; ++x) {
      row += (double(img.at(x, y, 0)) + img.at(x, y, 1) + img.at(x, y, 2)) / 3.0;
      integral[(y + 1) * (w + 1) + x + 1] = integral[y * (w + 1) + x + 1] + row;
    }
  }
  const long r = long(side / 2);
  std::vector<double> out(w * h);
  for (long y = 0; y < long(h); ++y) {
    const long y0 = std::max(0L, y - r), y1 = std::min(long(h), y + r + 1);
    for (long x = 0; x < long(w); ++x) {
      const long x0 = std::max(0L, x - r), x1 = std::min(long(w), x + r + 1);
      const double s = integral[y1 * (w + 1) + x1] - integral[y0 * (w + 1) + x1] - integral[y1 * (w + 1) + x0] +
                       integral[y0 * (w + 1) + x0];
      out[y * w + x] = s / double((y1 - y0) * (x1 - x0));
    }
  }
  return out;
}

}  // namespace

BBox locate_pillar(const Image& image, const DetectorParams& p) {
  if (image.width == 0 || image.height == 0) throw ArgumentError("locate_pillar on an empty image");
  if (p.quantile <= 0 || p.quantile >= 1) throw ArgumentError("detector quantile must lie in (0, 1)");
  const std::size_t w = image.width, h = image.height;
  const std::vector<double> gray = box_blur_gray(image, std::max<std::size_t>(1, p.blur | 1));

  std::vector<double> sorted = gray;
  const std::size_t k = std::min(sorted.size() - 1, std::size_t(std::floor(p.quantile * double(sorted.size()))));
  std::nth_element(sorted.begin(), sorted.begin() + std::ptrdiff_t(k), sorted.end());
  const double threshold = sorted[k];
  if (threshold <= 0) throw NoPillarFound("no pillar found: image is dark at the brightness quantile");

  std::vector<int> label(w * h, -1);
  struct Component {
    std::size_t area = 0;
    double weight = 0, sx = 0, sy = 0;
    std::size_t x0, y0, x1, y1;
  };
  std::vector<Component> comps;
  std::deque<std::size_t> queue;
  for (std::size_t start = 0; start < w * h; ++start) {
    if (label[start] >= 0 || gray[start] < threshold) continue;
    Component c{0, 0, 0, 0, w, h, 0, 0};
    const int id = int(comps.size());
    label[start] = id;
    queue.push_back(start);
    while (!queue.empty()) {
      const std::size_t i = queue.front();
      queue.pop_front();
      const std::size_t x = i % w, y = i / w;
      ++c.area;
      c.weight += gray[i];
      c.sx += gray[i] * double(x);
      c.sy += gray[i] * double(y);
      c.x0 = std::min(c.x0, x);
      c.y0 = std::min(c.y0, y);
      c.x1 = std::max(c.x1, x);
      c.y1 = std::max(c.y1, y);
      for (long dy = -1; dy <= 1; ++dy)
        for (long dx = -1; dx <= 1; ++dx) {
          const long nx = long(x) + dx, ny = long(y) + dy;
          if (nx < 0 || ny < 0 || nx >= long(w) || ny >= long(h)) continue;
          const std::size_t j = std::size_t(ny) * w + std::size_t(nx);
          if (label[j] < 0 && gray[j] >= threshold) {
            label[j] = id;
            queue.push_back(j);
          }
        }
    }
    comps.push_back(c);
  }
  const auto best = std::max_element(comps.begin(), comps.end(),
                                     [](const Component& a, const Component& b) { return a.area < b.area; });
  if (best == comps.end() || best->area < p.min_area) {
    throw NoPillarFound("no pillar found: largest bright component has " +
                        std::to_string(best == comps.end() ? 0 : best->area) + " px (minimum " +
                        std::to_string(p.min_area) + ")");
  }
  BBox box;
  box.cx = best->sx / best->weight;
  box.cy = best->sy / best->weight;
  box.width = double(best->x1 - best->x0 + 1);
  box.height = double(best->y1 - best->y0 + 1);
  box.source = BoxSource::detector;
  return box;
}

// ---------------------------------------------------------------------------
// Crop / split

namespace {

template <class Img, std::size_t C>
Img window(const Img& src, long x0, long y0, std::size_t w, std::size_t h) {
  Img out(w, h, 0);
  for (std::size_t y = 0; y < h; ++y) {
    const long sy = y0 + long(y);
    if (sy < 0 || sy >= long(src.height)) continue;
    for (std::size_t x = 0; x < w; ++x) {
      const long sx = x0 + long(x);
      if (sx < 0 || sx >= long(src.width)) continue;
      const std::size_t from = (std::size_t(sy) * src.width + std::size_t(sx)) * C;
      std::copy_n(src.pixels.begin() + std::ptrdiff_t(from), C, out.pixels.begin() + std::ptrdiff_t((y * w + x) * C));
    }
  }
  return out;
}

void check_crop(std::size_t width, std::size_t height, const BBox& b, std::size_t crop) {
  if (crop == 0 || crop % 2) throw ArgumentError("crop size must be even and positive, got " + std::to_string(crop));
  const bool outside = b.cx + b.width / 2 < 0 || b.cy + b.height / 2 < 0 || b.cx - b.width / 2 >= double(width) ||
                       b.cy - b.height / 2 >= double(height);
  if (outside || !std::isfinite(b.cx) || !std::isfinite(b.cy)) {
    throw ArgumentError("bounding box lies entirely outside the image");
  }
}

}  // namespace

Image extract_window(const Image& image, long x0, long y0, std::size_t w, std::size_t h) {
  return window<Image, 3>(image, x0, y0, w, h);
}

GrayImage extract_window(const GrayImage& image, long x0, long y0, std::size_t w, std::size_t h) {
  return window<GrayImage, 1>(image, x0, y0, w, h);
}

Image crop_centered(const Image& image, const BBox& bbox, std::size_t crop) {
  check_crop(image.width, image.height, bbox, crop);
  return extract_window(image, long(std::lround(bbox.cx)) - long(crop / 2), long(std::lround(bbox.cy)) - long(crop / 2),
                        crop, crop);
}

GrayImage crop_centered(const GrayImage& image, const BBox& bbox, std::size_t crop) {
  check_crop(image.width, image.height, bbox, crop);
  return extract_window(image, long(std::lround(bbox.cx)) - long(crop / 2), long(std::lround(bbox.cy)) - long(crop / 2),
                        crop, crop);
}

std::array<std::array<std::size_t, 2>, 4> quadrant_anchors(std::size_t size, std::size_t tile) {
  if (tile == 0 || tile > size) {
    throw ArgumentError("tile " + std::to_string(tile) + " does not fit in image of size " + std::to_string(size));
  }
  if (2 * tile < size) {
    throw ArgumentError("four tiles of " + std::to_string(tile) + " px cannot cover " + std::to_string(size) + " px");
  }
  const std::size_t far = size - tile;
  return {{{0, 0}, {far, 0}, {0, far}, {far, far}}};
}

QuadrantSet quadrant_split(const Image& image, std::size_t tile, std::string parent_id, int label) {
  if (image.width != image.height) throw ArgumentError("quadrant_split needs a square image");
  QuadrantSet set;
  set.parent_id = std::move(parent_id);
  set.label = label;
  const auto anchors = quadrant_anchors(image.width, tile);
  for (std::size_t q = 0; q < 4; ++q)
    set.tiles[q] = extract_window(image, long(anchors[q][0]), long(anchors[q][1]), tile, tile);
  return set;
}

std::array<GrayImage, 4> quadrant_split(const GrayImage& image, std::size_t tile) {
  if (image.width != image.height) throw ArgumentError("quadrant_split needs a square image");
  std::array<GrayImage, 4> out;
  const auto anchors = quadrant_anchors(image.width, tile);
  for (std::size_t q = 0; q < 4; ++q)
    out[q] = extract_window(image, long(anchors[q][0]), long(anchors[q][1]), tile, tile);
  return out;
}

Image reassemble(const QuadrantSet& set, std::size_t size) {
  const std::size_t tile = set.tiles[0].width;
  const auto anchors = quadrant_anchors(size, tile);
  Image out(size, size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x)
      for (std::size_t q = 0; q < 4; ++q) {
        const auto [ax, ay] = anchors[q];
        if (x >= ax && x < ax + tile && y >= ay && y < ay + tile) {
          for (std::size_t c = 0; c < 3; ++c) out.at(x, y, c) = set.tiles[q].at(x - ax, y - ay, c);
          break;
        }
      }
  return out;
}

Tensor<float> to_tensor(const std::vector<const Image*>& images) {
  if (images.empty()) throw ArgumentError("to_tensor needs at least one image");
  const std::size_t w = images[0]->width, h = images[0]->height;
  Tensor<float> t({images.size(), 3, h, w});
  float* out = t.data();
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& img = *images[n];
    if (img.width != w || img.height != h) throw ShapeError("to_tensor: images differ in size");
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < w * h; ++i) *out++ = float(img.pixels[i * 3 + c]) / 255.0f;
  }
  return t;
}

Tensor<float> to_tensor(const Image& image) { return to_tensor(std::vector<const Image*>{&image}); }

double mean_brightness(const Image& image) {
  double s = 0;
  for (std::uint8_t v : image.pixels) s += v;
  return image.pixels.empty() ? 0.0 : s / double(image.pixels.size());
}

Image contact_sheet(const std::vector<Image>& cells, std::size_t columns, std::size_t gap) {
  if (cells.empty() || columns == 0) throw ArgumentError("contact sheet needs cells and at least one column");
  const std::size_t w = cells[0].width, h = cells[0].height;
  const std::size_t rows = (cells.size() + columns - 1) / columns;
  const std::size_t cols = std::min(columns, cells.size());
  Image sheet(cols * w + (cols - 1) * gap, rows * h + (rows - 1) * gap);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (cells[i].width != w || cells[i].height != h) throw ShapeError("contact sheet cells differ in size");
    const std::size_t ox = (i % columns) * (w + gap), oy = (i / columns) * (h + gap);
    for (std::size_t y = 0; y < h; ++y)
      std::copy_n(cells[i].pixels.begin() + std::ptrdiff_t(y * w * 3), w * 3,
                  sheet.pixels.begin() + std::ptrdiff_t(((oy + y) * sheet.width + ox) * 3));
  }
  return sheet;
}

// ---------------------------------------------------------------------------
// VIA annotations

std::map<std::string, BBox> read_via_annotations(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open annotation file " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": invalid JSON: " + e.what());
  }
  const nlohmann::json& meta = doc.contains("_via_img_metadata") ? doc["_via_img_metadata"] : doc;
  std::map<std::string, BBox> out;
  for (const auto& [key, entry] : meta.items()) {
    if (!entry.is_object() || !entry.contains("regions")) continue;
    const std::string file = entry.value("filename", key);
    std::vector<nlohmann::json> regions;
    if (entry["regions"].is_array()) {
      for (const auto& r : entry["regions"]) regions.push_back(r);
    } else {
      for (const auto& [_, r] : entry["regions"].items()) regions.push_back(r);
    }
    std::vector<BBox> boxes;
    for (const auto& r : regions) {
      const auto& s = r.value("shape_attributes", nlohmann::json::object());
      if (s.value("name", "") != "rect") continue;
      BBox b;
      const double x = s.at("x").get<double>(), y = s.at("y").get<double>();
      b.width = s.at("width").get<double>();
      b.height = s.at("height").get<double>();
      if (b.width <= 0 || b.height <= 0) throw DataError(path.string() + ": non-positive box for " + file);
      b.cx = x + b.width / 2;
      b.cy = y + b.height / 2;
      b.source = BoxSource::annotation;
      boxes.push_back(b);
    }
    if (boxes.size() > 1) throw DataError(path.string() + ": more than one pillar box for " + file);
    if (boxes.size() == 1) out[file] = boxes[0];
  }
  return out;
}

}  // namespace vdcnet

#include "vdcnet/cam.hpp"

#include <algorithm>
#include <cmath>

#include "vdcnet/errors.hpp"

namespace vdcnet {

namespace {

constexpr std::array<std::array<std::uint8_t, 3>, 256> kPlasma = {{
#include "plasma_lut.inc"
}};

Var require_tap(const ForwardResult& r, const std::string& tap) {
  const auto it = r.taps.find(tap);
  if (it == r.taps.end()) throw ConfigError("model has no tap named '" + tap + "'");
  return it->second;
}

void require_batch(const Tensor<float>& batch) {
  if (batch.rank() != 4 || batch.dim(0) == 0) {
    throw ShapeError("CAM input must be a non-empty (N, C, S, S) batch, got " + shape_to_string(batch.shape()));
  }
}

// Rectified sum over channels of weights[n][c] * activation[n][c], one {h, w} map per sample.
std::vector<Tensor<float>> weighted_maps(const Tensor<float>& act, const std::vector<std::vector<double>>& weights) {
  const std::size_t n_count = act.dim(0), channels = act.dim(1), h = act.dim(2), w = act.dim(3);
  const std::size_t plane = h * w;
  std::vector<Tensor<float>> out;
  for (std::size_t n = 0; n < n_count; ++n) {
    std::vector<double> acc(plane, 0.0);
    for (std::size_t c = 0; c < channels; ++c) {
      const double wc = weights[n][c];
      const float* a = act.data() + (n * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) acc[i] += wc * double(a[i]);
    }
    Tensor<float> map({h, w});
    for (std::size_t i = 0; i < plane; ++i) map[i] = float(std::max(acc[i], 0.0));
    out.push_back(std::move(map));
  }
  return out;
}

std::vector<Heatmap> finish(CamMethod method, std::vector<Tensor<float>> natives, const Tape<float>& tape,
                            Var probs, std::size_t size) {
  std::vector<Heatmap> out;
  const auto& p = tape.value(probs);
  for (std::size_t n = 0; n < natives.size(); ++n) {
    Heatmap hm;
    hm.method = method;
    hm.native = std::move(natives[n]);
    hm.normalized = minmax_normalize(hm.native);
    hm.upsampled = resize_bilinear(hm.normalized, size, size);
    hm.probability = double(p[n]);
    out.push_back(std::move(hm));
  }
  return out;
}

}  // namespace

const char* to_string(CamMethod method) {
  switch (method) {
    case CamMethod::cam: return "cam";
    case CamMethod::grad_cam: return "grad-cam";
    case CamMethod::score_cam: return "score-cam";
  }
  return "?";
}

CamMethod parse_cam_method(const std::string& text) {
  if (text == "cam") return CamMethod::cam;
  if (text == "grad-cam") return CamMethod::grad_cam;
  if (text == "score-cam") return CamMethod::score_cam;
  throw ConfigError("unknown CAM method '" + text + "' (expected cam, grad-cam or score-cam)");
}

std::vector<Heatmap> grad_cam(Session& session, const Tensor<float>& batch, const CamOptions& options) {
  require_batch(batch);
  Tape<float> tape;
  tape.set_accumulate_parameters(false);
  const ForwardResult r = session.forward(tape, batch, Mode::infer);
  const Var tap = require_tap(r, options.tap);
  // Samples are independent in inference mode, so the gradient of the summed
  // logits is each sample's own logit gradient.
  tape.backward(ops::sum(tape, r.logits));
  const Tensor<float>& act = tape.value(tap);
  const Tensor<float> grad = tape.grad(tap);
  const std::size_t n_count = act.dim(0), channels = act.dim(1), plane = act.dim(2) * act.dim(3);
  std::vector<std::vector<double>> weights(n_count, std::vector<double>(channels));
  for (std::size_t n = 0; n < n_count; ++n)
    for (std::size_t c = 0; c < channels; ++c) {
      const float* g = grad.data() + (n * channels + c) * plane;
      double s = 0;
      for (std::size_t i = 0; i < plane; ++i) s += double(g[i]);
      weights[n][c] = s / double(plane);
    }
  return finish(CamMethod::grad_cam, weighted_maps(act, weights), tape, r.probs, batch.dim(2));
}

std::vector<Heatmap> original_cam(Session& session, const Tensor<float>& batch, const CamOptions& options) {
  require_batch(batch);
  const ModelGraph& g = session.graph();
  const HeadSummary head = head_summary(g);
  if (!head.valid || head.pool != PoolMode::avg || head.dense_units != 1) {
    throw UnsupportedArchitecture("CAM needs a global-average-pool -> dense(1) head");
  }
  const auto tap_layer = g.find_tap(options.tap);
  if (!tap_layer) throw ConfigError("model has no tap named '" + options.tap + "'");
  const std::size_t pool_layer = g.layer(head.dense_layer).inputs[0];
  if (g.layer(pool_layer).inputs[0] != *tap_layer) {
    throw UnsupportedArchitecture("CAM needs the global pool to read the tap directly");
  }
  Tape<float> tape;
  tape.set_accumulate_parameters(false);
  const ForwardResult r = session.forward(tape, batch, Mode::infer);
  const Tensor<float>& act = tape.value(require_tap(r, options.tap));
  const auto& dense = session.dense_weights().value;
  std::vector<double> w(dense.values().begin(), dense.values().end());
  std::vector<std::vector<double>> weights(act.dim(0), w);
  return finish(CamMethod::cam, weighted_maps(act, weights), tape, r.probs, batch.dim(2));
}

std::vector<Heatmap> score_cam(Session& session, const Tensor<float>& batch, const CamOptions& options) {
  require_batch(batch);
  if (options.score_batch == 0) throw ConfigError("Score-CAM batch size must be positive");
  Tape<float> tape;
  tape.set_accumulate_parameters(false);
  const ForwardResult r = session.forward(tape, batch, Mode::infer);
  const Tensor<float>& act = tape.value(require_tap(r, options.tap));
  const std::size_t n_count = act.dim(0), channels = act.dim(1), h = act.dim(2), w = act.dim(3);
  const std::size_t in_c = batch.dim(1), size = batch.dim(2), in_plane = size * batch.dim(3);
  std::vector<std::vector<double>> weights(n_count, std::vector<double>(channels));

  for (std::size_t n = 0; n < n_count; ++n) {
    std::vector<double> scores(channels);
    for (std::size_t c0 = 0; c0 < channels; c0 += options.score_batch) {
      const std::size_t m = std::min(options.score_batch, channels - c0);
      Tensor<float> masked({m, in_c, size, batch.dim(3)});
      for (std::size_t k = 0; k < m; ++k) {
        Tensor<float> channel({h, w});
        std::copy_n(act.data() + (n * channels + c0 + k) * h * w, h * w, channel.data());
        const Tensor<float> mask = resize_bilinear(minmax_normalize(channel), size, batch.dim(3));
        for (std::size_t ch = 0; ch < in_c; ++ch) {
          const float* src = batch.data() + (n * in_c + ch) * in_plane;
          float* dst = masked.data() + (k * in_c + ch) * in_plane;
          for (std::size_t i = 0; i < in_plane; ++i) dst[i] = src[i] * mask[i];
        }
      }
      Tape<float> t;
      t.set_accumulate_parameters(false);
      const ForwardResult mr = session.forward(t, masked, Mode::infer);
      const auto& logits = t.value(mr.logits);
      for (std::size_t k = 0; k < m; ++k) scores[c0 + k] = double(logits[k]);
    }
    const double top = *std::max_element(scores.begin(), scores.end());
    double z = 0;
    for (double& s : scores) z += (s = std::exp(s - top));
    for (std::size_t c = 0; c < channels; ++c) weights[n][c] = scores[c] / z;
  }
  return finish(CamMethod::score_cam, weighted_maps(act, weights), tape, r.probs, size);
}

std::vector<Heatmap> compute_cam(CamMethod method, Session& session, const Tensor<float>& batch,
                                 const CamOptions& options) {
  switch (method) {
    case CamMethod::cam: return original_cam(session, batch, options);
    case CamMethod::grad_cam: return grad_cam(session, batch, options);
    case CamMethod::score_cam: return score_cam(session, batch, options);
  }
  throw ConfigError("unknown CAM method");
}

Tensor<float> minmax_normalize(const Tensor<float>& map) {
  Tensor<float> out(map.shape());
  if (map.empty()) return out;
  const auto [lo, hi] = std::minmax_element(map.values().begin(), map.values().end());
  const float low = *lo, range = *hi - *lo;
  if (!(range > 0)) return out;
  for (std::size_t i = 0; i < map.size(); ++i) out[i] = (map[i] - low) / range;
  return out;
}

Tensor<float> resize_bilinear(const Tensor<float>& map, std::size_t out_h, std::size_t out_w) {
  if (map.rank() != 2 || map.empty()) throw ShapeError("resize expects a non-empty {h, w} map");
  const std::size_t in_h = map.dim(0), in_w = map.dim(1);
  Tensor<float> out({out_h, out_w});
  const double sy = double(in_h) / double(out_h), sx = double(in_w) / double(out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double fy = std::clamp((double(y) + 0.5) * sy - 0.5, 0.0, double(in_h - 1));
    const std::size_t y0 = std::size_t(fy), y1 = std::min(y0 + 1, in_h - 1);
    const double wy = fy - double(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double fx = std::clamp((double(x) + 0.5) * sx - 0.5, 0.0, double(in_w - 1));
      const std::size_t x0 = std::size_t(fx), x1 = std::min(x0 + 1, in_w - 1);
      const double wx = fx - double(x0);
      const double top = (1 - wx) * map[y0 * in_w + x0] + wx * map[y0 * in_w + x1];
      const double bottom = (1 - wx) * map[y1 * in_w + x0] + wx * map[y1 * in_w + x1];
      out[y * out_w + x] = float((1 - wy) * top + wy * bottom);
    }
  }
  return out;
}

const std::array<std::array<std::uint8_t, 3>, 256>& plasma_lut() { return kPlasma; }

std::array<std::uint8_t, 3> plasma(double value) {
  const double v = std::isfinite(value) ? std::clamp(value, 0.0, 1.0) : 0.0;
  return kPlasma[std::size_t(std::lround(v * 255))];
}

Image render_overlay(const Tensor<float>& upsampled, const Image& image, double alpha) {
  if (upsampled.rank() != 2 || upsampled.dim(0) != image.height || upsampled.dim(1) != image.width) {
    throw ShapeError("overlay heatmap " + shape_to_string(upsampled.shape()) + " does not match image " +
                     std::to_string(image.width) + "x" + std::to_string(image.height));
  }
  if (!(alpha >= 0 && alpha <= 1)) throw ArgumentError("overlay alpha must lie in [0, 1]");
  Image out(image.width, image.height);
  for (std::size_t y = 0; y < image.height; ++y)
    for (std::size_t x = 0; x < image.width; ++x) {
      const double gray = 0.299 * image.at(x, y, 0) + 0.587 * image.at(x, y, 1) + 0.114 * image.at(x, y, 2);
      const auto c = plasma(upsampled[y * image.width + x]);
      for (std::size_t k = 0; k < 3; ++k)
        out.at(x, y, k) = std::uint8_t(std::lround(std::clamp((1 - alpha) * gray + alpha * c[k], 0.0, 255.0)));
    }
  return out;
}

Image render_heatmap(const Tensor<float>& map) {
  if (map.rank() != 2) throw ShapeError("heatmap must be {h, w}");
  Image out(map.dim(1), map.dim(0));
  for (std::size_t i = 0; i < map.size(); ++i) {
    const auto c = plasma(map[i]);
    for (std::size_t k = 0; k < 3; ++k) out.pixels[i * 3 + k] = c[k];
  }
  return out;
}

GrayImage dilate(const GrayImage& mask, std::size_t radius) {
  GrayImage out(mask.width, mask.height);
  const long r = long(radius), w = long(mask.width), h = long(mask.height);
  std::vector<std::pair<long, long>> offsets;
  for (long dy = -r; dy <= r; ++dy)
    for (long dx = -r; dx <= r; ++dx)
      if (dx * dx + dy * dy <= r * r) offsets.emplace_back(dx, dy);
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      if (!mask.at(std::size_t(x), std::size_t(y))) continue;
      for (auto [dx, dy] : offsets) {
        const long xx = x + dx, yy = y + dy;
        if (xx >= 0 && yy >= 0 && xx < w && yy < h) out.at(std::size_t(xx), std::size_t(yy)) = 255;
      }
    }
  return out;
}

double localization_energy(const Tensor<float>& upsampled, const GrayImage& mask, std::size_t dilation) {
  if (upsampled.rank() != 2 || upsampled.dim(0) != mask.height || upsampled.dim(1) != mask.width) {
    throw ShapeError("heatmap " + shape_to_string(upsampled.shape()) + " does not match mask " +
                     std::to_string(mask.width) + "x" + std::to_string(mask.height));
  }
  const GrayImage region = dilation ? dilate(mask, dilation) : mask;
  double inside = 0, total = 0;
  for (std::size_t i = 0; i < upsampled.size(); ++i) {
    const double v = upsampled[i];
    total += v;
    if (region.pixels[i]) inside += v;
  }
  return total > 0 ? inside / total : 0.0;
}

}  // namespace vdcnet

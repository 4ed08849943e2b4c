#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "vdcnet/imaging.hpp"
#include "vdcnet/model.hpp"

namespace vdcnet {

enum class CamMethod { cam, grad_cam, score_cam };
const char* to_string(CamMethod method);
CamMethod parse_cam_method(const std::string& text);  // "cam", "grad-cam", "score-cam"

struct Heatmap {
  CamMethod method = CamMethod::grad_cam;
  std::string sample_id;
  Tensor<float> native;      // {h, w} rectified weighted channel sum
  Tensor<float> normalized;  // {h, w} in [0, 1]
  Tensor<float> upsampled;   // {S, S} bilinear from `normalized`
  double probability = 0;    // class-1 score of the unmasked input
};

struct CamOptions {
  std::string tap = kLastConvTap;
  std::size_t score_batch = 32;  // Score-CAM masked inputs per forward pass
};

// `batch` is (N, C, S, S) in [0, 1]; one heatmap per sample. Inference mode.
std::vector<Heatmap> grad_cam(Session& session, const Tensor<float>& batch, const CamOptions& options = {});
std::vector<Heatmap> score_cam(Session& session, const Tensor<float>& batch, const CamOptions& options = {});
// Needs a global-average-pool -> dense(1) head; throws UnsupportedArchitecture otherwise.
std::vector<Heatmap> original_cam(Session& session, const Tensor<float>& batch, const CamOptions& options = {});
std::vector<Heatmap> compute_cam(CamMethod method, Session& session, const Tensor<float>& batch,
                                 const CamOptions& options = {});

// Per-map min-max scaling of an {h, w} map; constant maps become all-zero.
Tensor<float> minmax_normalize(const Tensor<float>& map);
// Half-pixel-centred bilinear resize of an {h, w} map, edges clamped.
Tensor<float> resize_bilinear(const Tensor<float>& map, std::size_t out_h, std::size_t out_w);

const std::array<std::array<std::uint8_t, 3>, 256>& plasma_lut();
std::array<std::uint8_t, 3> plasma(double value);  // value clamped to [0, 1]

// Heatmap colours alpha-blended over the luminance of `image`.
Image render_overlay(const Tensor<float>& upsampled, const Image& image, double alpha = 0.5);
// Heatmap alone through the colour table.
Image render_heatmap(const Tensor<float>& map);

// Disk dilation with the given pixel radius.
GrayImage dilate(const GrayImage& mask, std::size_t radius);
// Share of heatmap mass inside the dilated mask; 0 for an all-zero heatmap.
double localization_energy(const Tensor<float>& upsampled, const GrayImage& mask, std::size_t dilation = 5);

}  // namespace vdcnet

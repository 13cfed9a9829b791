// Copyright 2026 The sonoclass Authors
// SPDX-License-Identifier: Apache-2.0
//
// Stochastic image transforms. Every random draw comes from a caller-owned
// SampleRng, so a (seed, image id, epoch) key fixes the output.

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <json.hpp>

#include "sonoclass/image.hpp"
#include "sonoclass/rng.hpp"

namespace sono::augment {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  bool operator==(const Range&) const = default;
};

struct AugmentationConfig {
  Range gamma{0.7, 1.5};
  Range crop_scale{0.7, 1.0};
  Range crop_aspect{0.9, 1.1};
  double flip_h_prob = 0.5;
  double flip_v_prob = 0.2;
  double jitter_prob = 1.0;
  Range brightness{0.8, 1.2};
  Range contrast{0.8, 1.2};
  Range saturation{0.8, 1.2};
  Range hue{-0.05, 0.05};  // turns
  double grayscale_prob = 0.1;
  double blur_prob = 0.3;
  Range blur_sigma{0.1, 1.5};
  double translate_prob = 1.0;
  std::size_t translate_max_x = 6;
  std::size_t translate_max_y = 6;
  std::size_t target_h = 64;
  std::size_t target_w = 64;

  // Defaults with the target set and translation bounded by 10% of it.
  static AugmentationConfig for_target(std::size_t height, std::size_t width);
  // Everything off: probabilities 0 and unit gamma/scale/aspect ranges.
  static AugmentationConfig disabled(std::size_t height, std::size_t width);

  // Throws std::invalid_argument naming the field.
  void validate() const;
  bool operator==(const AugmentationConfig&) const = default;
};

nlohmann::json to_json(const AugmentationConfig& config);
AugmentationConfig augmentation_config_from_json(const nlohmann::json& j);

RasterImage gamma_correct(const RasterImage& img, double gamma);

// Area fraction from `scale`, log-uniform aspect (w/h) from `aspect`; up to
// ten draws, then a center crop clamped to the aspect range. The crop is
// resized to target with half-pixel-center bilinear sampling.
RasterImage random_crop_resize(const RasterImage& img, SampleRng& rng, Range scale, Range aspect,
                               std::size_t target_h, std::size_t target_w);

RasterImage flip_h(const RasterImage& img);
RasterImage flip_v(const RasterImage& img);

struct JitterParams {
  double brightness = 1.0;
  double contrast = 1.0;
  double saturation = 1.0;
  double hue = 0.0;
  // Application order as indices into (brightness, contrast, saturation, hue).
  std::vector<int> order{0, 1, 2, 3};
};

// Factors first in the field order above, then a shuffled order.
JitterParams draw_jitter(SampleRng& rng, const AugmentationConfig& config);
RasterImage color_jitter(const RasterImage& img, const JitterParams& params);
RasterImage color_jitter(const RasterImage& img, SampleRng& rng, const AugmentationConfig& config);

double luma(double r, double g, double b);
// One channel of BT.601 luma.
RasterImage to_grayscale(const RasterImage& img);

// h in turns [0,1), s and v in [0,1].
void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v);
void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b);

struct BlurKernel {
  std::size_t radius = 0;
  std::vector<double> weights;   // (2r+1)², row-major over (v, u)
  std::vector<double> weights1d;  // 2r+1; outer product equals `weights`

  std::size_t side() const { return 2 * radius + 1; }
  double at(std::ptrdiff_t u, std::ptrdiff_t v) const;
};

// r = ceil(3σ), weights ∝ exp(−(u²+v²)/(2σ²)) normalized to sum 1.
BlurKernel make_blur_kernel(double sigma);
// Separable, reflect-101 border.
RasterImage gaussian_blur(const RasterImage& img, double sigma);
// Direct 2-D convolution with the same kernel; the reference the separable
// path is tested against.
RasterImage gaussian_blur_2d(const RasterImage& img, double sigma);

// out(x, y) = in(x − dx, y − dy), zero outside.
RasterImage translate(const RasterImage& img, std::ptrdiff_t dx, std::ptrdiff_t dy);

// gamma → crop/resize → flips → jitter → grayscale → blur → translate.
// Gray output is replicated to the input's channel count. Single-channel
// inputs skip jitter and grayscale but consume the same gate draws.
RasterImage augment_sample(const RasterImage& img, const AugmentationConfig& config, SampleRng& rng);

}  // namespace sono::augment

// Copyright 2026 The sonoclass Authors
// SPDX-License-Identifier: Apache-2.0

#include "sonoclass/augment.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

#include "sonoclass/kernels.hpp"

namespace sono::augment {

namespace {

void check_range(const Range& r, const char* name, bool positive) {
  if (!(r.lo <= r.hi) || !std::isfinite(r.lo) || !std::isfinite(r.hi)) {
    throw std::invalid_argument(std::string("augment.") + name + ": need lo <= hi");
  }
  if (positive && !(r.lo > 0.0)) throw std::invalid_argument(std::string("augment.") + name + ": must be positive");
}

void check_prob(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument(std::string("augment.") + name + ": must be in [0,1]");
}

void require_rgb(const RasterImage& img, const char* op) {
  if (img.channels != 3) {
    throw std::invalid_argument(std::string(op) + " needs 3 channels, got " + std::to_string(img.channels));
  }
}

double clamp01(double x) { return std::clamp(x, 0.0, 1.0); }

}  // namespace

AugmentationConfig AugmentationConfig::for_target(std::size_t height, std::size_t width) {
  AugmentationConfig c;
  c.target_h = height;
  c.target_w = width;
  c.translate_max_x = width / 10;
  c.translate_max_y = height / 10;
  return c;
}

AugmentationConfig AugmentationConfig::disabled(std::size_t height, std::size_t width) {
  AugmentationConfig c = for_target(height, width);
  c.gamma = {1.0, 1.0};
  c.crop_scale = {1.0, 1.0};
  c.crop_aspect = {1.0, 1.0};
  c.flip_h_prob = c.flip_v_prob = c.jitter_prob = 0.0;
  c.grayscale_prob = c.blur_prob = c.translate_prob = 0.0;
  return c;
}

void AugmentationConfig::validate() const {
  check_range(gamma, "gamma", true);
  check_range(crop_scale, "crop_scale", true);
  if (crop_scale.hi > 1.0) throw std::invalid_argument("augment.crop_scale: must lie in (0,1]");
  check_range(crop_aspect, "crop_aspect", true);
  check_range(brightness, "brightness", false);
  check_range(contrast, "contrast", false);
  check_range(saturation, "saturation", false);
  check_range(hue, "hue", false);
  if (brightness.lo < 0.0 || contrast.lo < 0.0 || saturation.lo < 0.0) {
    throw std::invalid_argument("augment: jitter factors must be nonnegative");
  }
  check_range(blur_sigma, "blur_sigma", true);
  check_prob(flip_h_prob, "flip_h_prob");
  check_prob(flip_v_prob, "flip_v_prob");
  check_prob(jitter_prob, "jitter_prob");
  check_prob(grayscale_prob, "grayscale_prob");
  check_prob(blur_prob, "blur_prob");
  check_prob(translate_prob, "translate_prob");
  if (target_h == 0 || target_w == 0) throw std::invalid_argument("augment.target: extents must be positive");
}

nlohmann::json to_json(const AugmentationConfig& c) {
  auto r = [](const Range& x) { return nlohmann::json::array({x.lo, x.hi}); };
  return {{"gamma", r(c.gamma)},
          {"crop_scale", r(c.crop_scale)},
          {"crop_aspect", r(c.crop_aspect)},
          {"flip_h_prob", c.flip_h_prob},
          {"flip_v_prob", c.flip_v_prob},
          {"jitter_prob", c.jitter_prob},
          {"brightness", r(c.brightness)},
          {"contrast", r(c.contrast)},
          {"saturation", r(c.saturation)},
          {"hue", r(c.hue)},
          {"grayscale_prob", c.grayscale_prob},
          {"blur_prob", c.blur_prob},
          {"blur_sigma", r(c.blur_sigma)},
          {"translate_prob", c.translate_prob},
          {"translate_max", {c.translate_max_x, c.translate_max_y}},
          {"target", {c.target_h, c.target_w}}};
}

AugmentationConfig augmentation_config_from_json(const nlohmann::json& j) {
  auto r = [&](const char* key) { return Range{j.at(key).at(0).get<double>(), j.at(key).at(1).get<double>()}; };
  AugmentationConfig c;
  c.gamma = r("gamma");
  c.crop_scale = r("crop_scale");
  c.crop_aspect = r("crop_aspect");
  c.flip_h_prob = j.at("flip_h_prob").get<double>();
  c.flip_v_prob = j.at("flip_v_prob").get<double>();
  c.jitter_prob = j.at("jitter_prob").get<double>();
  c.brightness = r("brightness");
  c.contrast = r("contrast");
  c.saturation = r("saturation");
  c.hue = r("hue");
  c.grayscale_prob = j.at("grayscale_prob").get<double>();
  c.blur_prob = j.at("blur_prob").get<double>();
  c.blur_sigma = r("blur_sigma");
  c.translate_prob = j.at("translate_prob").get<double>();
  c.translate_max_x = j.at("translate_max").at(0).get<std::size_t>();
  c.translate_max_y = j.at("translate_max").at(1).get<std::size_t>();
  c.target_h = j.at("target").at(0).get<std::size_t>();
  c.target_w = j.at("target").at(1).get<std::size_t>();
  c.validate();
  return c;
}

RasterImage gamma_correct(const RasterImage& img, double gamma) {
  if (!(gamma > 0.0)) throw std::invalid_argument("gamma must be positive");
  RasterImage out = img;
  // Decoded 8-bit pixels are exactly k/255; memoize pow for those levels.
  // Any other value takes the direct path, so the output is pow either way.
  std::array<double, 256> lut;
  lut.fill(-1.0);
  for (auto& p : out.pixels) {
    const double q = p * 255.0;
    if (q >= 0.0 && q <= 255.0) {
      const auto k = static_cast<std::size_t>(q + 0.5);
      if (static_cast<double>(k) / 255.0 == p) {
        if (lut[k] < 0.0) lut[k] = clamp01(std::pow(p, gamma));
        p = lut[k];
        continue;
      }
    }
    p = clamp01(std::pow(p, gamma));
  }
  return out;
}

RasterImage random_crop_resize(const RasterImage& img, SampleRng& rng, Range scale, Range aspect,
                               std::size_t target_h, std::size_t target_w) {
  const double h = static_cast<double>(img.height), w = static_cast<double>(img.width);
  const double area = h * w;
  const double log_lo = std::log(aspect.lo), log_hi = std::log(aspect.hi);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double s = rng.uniform(scale.lo, scale.hi);
    const double ar = std::exp(rng.uniform(log_lo, log_hi));
    const auto cw = static_cast<std::int64_t>(std::lround(std::sqrt(area * s * ar)));
    const auto ch = static_cast<std::int64_t>(std::lround(std::sqrt(area * s / ar)));
    if (cw < 1 || ch < 1 || cw > static_cast<std::int64_t>(img.width) ||
        ch > static_cast<std::int64_t>(img.height)) {
      continue;
    }
    const auto x0 = rng.uniform_int(0, static_cast<std::int64_t>(img.width) - cw);
    const auto y0 = rng.uniform_int(0, static_cast<std::int64_t>(img.height) - ch);
    return resize_bilinear(crop(img, static_cast<std::size_t>(y0), static_cast<std::size_t>(x0),
                                static_cast<std::size_t>(ch), static_cast<std::size_t>(cw)),
                           target_h, target_w);
  }
  // Fallback: the largest centered region whose aspect is inside the range.
  std::size_t cw = img.width, ch = img.height;
  const double ratio = w / h;
  if (ratio < aspect.lo) {
    ch = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(w / aspect.lo)), 1, img.height);
  } else if (ratio > aspect.hi) {
    cw = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(h * aspect.hi)), 1, img.width);
  }
  return resize_bilinear(crop(img, (img.height - ch) / 2, (img.width - cw) / 2, ch, cw), target_h, target_w);
}

RasterImage flip_h(const RasterImage& img) {
  RasterImage out = img;
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      for (std::size_t c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(y, img.width - 1 - x, c);
    }
  }
  return out;
}

RasterImage flip_v(const RasterImage& img) {
  RasterImage out = img;
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      for (std::size_t c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(img.height - 1 - y, x, c);
    }
  }
  return out;
}

double luma(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const double d = mx - mn;
  v = mx;
  s = mx > 0.0 ? d / mx : 0.0;
  if (d == 0.0) {
    h = 0.0;
    return;
  }
  double sector;
  if (mx == r) {
    sector = (g - b) / d;
  } else if (mx == g) {
    sector = 2.0 + (b - r) / d;
  } else {
    sector = 4.0 + (r - g) / d;
  }
  h = sector / 6.0;
  if (h < 0.0) h += 1.0;
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  h -= std::floor(h);
  const double h6 = h * 6.0;
  const int sector = std::min(5, static_cast<int>(h6));
  const double f = h6 - sector;
  const double p = v * (1.0 - s), q = v * (1.0 - s * f), t = v * (1.0 - s * (1.0 - f));
  switch (sector) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
}

JitterParams draw_jitter(SampleRng& rng, const AugmentationConfig& config) {
  JitterParams p;
  p.brightness = rng.uniform(config.brightness.lo, config.brightness.hi);
  p.contrast = rng.uniform(config.contrast.lo, config.contrast.hi);
  p.saturation = rng.uniform(config.saturation.lo, config.saturation.hi);
  p.hue = rng.uniform(config.hue.lo, config.hue.hi);
  rng.shuffle(p.order);
  return p;
}

RasterImage color_jitter(const RasterImage& img, const JitterParams& params) {
  require_rgb(img, "color_jitter");
  RasterImage out = img;
  auto& px = out.pixels;
  const std::size_t n = img.height * img.width;
  for (const int step : params.order) {
    switch (step) {
      case 0:
        if (params.brightness == 1.0) break;
        for (auto& p : px) p = clamp01(params.brightness * p);
        break;
      case 1: {
        if (params.contrast == 1.0) break;
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += luma(px[3 * i], px[3 * i + 1], px[3 * i + 2]);
        mean /= static_cast<double>(n);
        for (auto& p : px) p = clamp01(mean + params.contrast * (p - mean));
        break;
      }
      case 2:
        if (params.saturation == 1.0) break;
        for (std::size_t i = 0; i < n; ++i) {
          const double l = luma(px[3 * i], px[3 * i + 1], px[3 * i + 2]);
          for (std::size_t c = 0; c < 3; ++c) px[3 * i + c] = clamp01(l + params.saturation * (px[3 * i + c] - l));
        }
        break;
      case 3:
        if (params.hue == 0.0) break;
        for (std::size_t i = 0; i < n; ++i) {
          double h, s, v;
          rgb_to_hsv(px[3 * i], px[3 * i + 1], px[3 * i + 2], h, s, v);
          hsv_to_rgb(h + params.hue, s, v, px[3 * i], px[3 * i + 1], px[3 * i + 2]);
          for (std::size_t c = 0; c < 3; ++c) px[3 * i + c] = clamp01(px[3 * i + c]);
        }
        break;
      default:
        throw std::invalid_argument("color_jitter: bad order index");
    }
  }
  return out;
}

RasterImage color_jitter(const RasterImage& img, SampleRng& rng, const AugmentationConfig& config) {
  return color_jitter(img, draw_jitter(rng, config));
}

RasterImage to_grayscale(const RasterImage& img) {
  require_rgb(img, "to_grayscale");
  RasterImage out(img.height, img.width, 1);
  for (std::size_t i = 0; i < img.height * img.width; ++i) {
    out.pixels[i] = clamp01(luma(img.pixels[3 * i], img.pixels[3 * i + 1], img.pixels[3 * i + 2]));
  }
  return out;
}

double BlurKernel::at(std::ptrdiff_t u, std::ptrdiff_t v) const {
  const auto r = static_cast<std::ptrdiff_t>(radius);
  return weights[static_cast<std::size_t>((v + r) * static_cast<std::ptrdiff_t>(side()) + (u + r))];
}

BlurKernel make_blur_kernel(double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("blur sigma must be positive");
  BlurKernel k;
  k.radius = static_cast<std::size_t>(std::ceil(3.0 * sigma));
  const auto r = static_cast<std::ptrdiff_t>(k.radius);
  const double two_s2 = 2.0 * sigma * sigma;
  double s1 = 0.0;
  for (std::ptrdiff_t u = -r; u <= r; ++u) {
    k.weights1d.push_back(std::exp(-static_cast<double>(u * u) / two_s2));
    s1 += k.weights1d.back();
  }
  for (auto& x : k.weights1d) x /= s1;
  double s2 = 0.0;
  for (std::ptrdiff_t v = -r; v <= r; ++v) {
    for (std::ptrdiff_t u = -r; u <= r; ++u) {
      k.weights.push_back(std::exp(-static_cast<double>(u * u + v * v) / two_s2));
      s2 += k.weights.back();
    }
  }
  for (auto& x : k.weights) x /= s2;
  return k;
}

RasterImage gaussian_blur(const RasterImage& img, double sigma) {
  const BlurKernel k = make_blur_kernel(sigma);
  RasterImage out(img.height, img.width, img.channels);
  kernels::parallel::blur_separable(img.pixels, img.height, img.width, img.channels, k.weights1d, k.radius,
                                    out.pixels);
  for (auto& p : out.pixels) p = clamp01(p);
  return out;
}

RasterImage gaussian_blur_2d(const RasterImage& img, double sigma) {
  const BlurKernel k = make_blur_kernel(sigma);
  RasterImage out(img.height, img.width, img.channels);
  kernels::reference::blur_2d(img.pixels, img.height, img.width, img.channels, k.weights, k.radius, out.pixels);
  for (auto& p : out.pixels) p = clamp01(p);
  return out;
}

RasterImage translate(const RasterImage& img, std::ptrdiff_t dx, std::ptrdiff_t dy) {
  RasterImage out(img.height, img.width, img.channels, 0.0);
  const auto h = static_cast<std::ptrdiff_t>(img.height), w = static_cast<std::ptrdiff_t>(img.width);
  for (std::ptrdiff_t y = 0; y < h; ++y) {
    const std::ptrdiff_t sy = y - dy;
    if (sy < 0 || sy >= h) continue;
    for (std::ptrdiff_t x = 0; x < w; ++x) {
      const std::ptrdiff_t sx = x - dx;
      if (sx < 0 || sx >= w) continue;
      for (std::size_t c = 0; c < img.channels; ++c) {
        out.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c) =
            img.at(static_cast<std::size_t>(sy), static_cast<std::size_t>(sx), c);
      }
    }
  }
  return out;
}

RasterImage augment_sample(const RasterImage& img, const AugmentationConfig& config, SampleRng& rng) {
  RasterImage out = gamma_correct(img, rng.uniform(config.gamma.lo, config.gamma.hi));
  out = random_crop_resize(out, rng, config.crop_scale, config.crop_aspect, config.target_h, config.target_w);
  if (rng.bernoulli(config.flip_h_prob)) out = flip_h(out);
  if (rng.bernoulli(config.flip_v_prob)) out = flip_v(out);
  const bool rgb = out.channels == 3;
  if (rng.bernoulli(config.jitter_prob)) {
    const JitterParams p = draw_jitter(rng, config);
    if (rgb) out = color_jitter(out, p);
  }
  if (rng.bernoulli(config.grayscale_prob) && rgb) out = replicate_channels(to_grayscale(out), 3);
  if (rng.bernoulli(config.blur_prob)) out = gaussian_blur(out, rng.uniform(config.blur_sigma.lo, config.blur_sigma.hi));
  if (rng.bernoulli(config.translate_prob)) {
    const auto mx = static_cast<std::int64_t>(config.translate_max_x);
    const auto my = static_cast<std::int64_t>(config.translate_max_y);
    const auto dx = rng.uniform_int(-mx, mx);
    const auto dy = rng.uniform_int(-my, my);
    out = translate(out, dx, dy);
  }
  return out;
}

}  // namespace sono::augment

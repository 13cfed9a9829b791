// Copyright 2026 The sonoclass Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace sono {

// H×W×C grid, row-major with interleaved channels, intensities in [0, 1].
struct RasterImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<double> pixels;

  RasterImage() = default;
  RasterImage(std::size_t h, std::size_t w, std::size_t c, double fill = 0.0)
      : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

  std::size_t index(std::size_t y, std::size_t x, std::size_t c) const {
    return (y * width + x) * channels + c;
  }
  double& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[index(y, x, c)]; }
  double at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[index(y, x, c)]; }

  bool empty() const { return pixels.empty(); }
  bool operator==(const RasterImage&) const = default;
};

class ImageError : public std::runtime_error {
 public:
  enum class Kind { kIo, kTruncated, kUnsupported, kMalformed };
  ImageError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// PNG, binary PPM (P6) or binary PGM (P5), 8-bit samples mapped by v/maxval.
RasterImage decode_image(const std::filesystem::path& path);

// Format chosen by extension (.ppm, .pgm, .png). Samples quantized as
// round(255·clamp(v)).
void encode_image(const RasterImage& image, const std::filesystem::path& path);

// Full-range BT.601 Y'CbCr -> RGB, clamped to [0, 1].
RasterImage ycbcr_to_rgb(const RasterImage& image);

// Bilinear interpolation with half-pixel centers and edge clamping.
RasterImage resize_bilinear(const RasterImage& image, std::size_t height, std::size_t width);

RasterImage crop(const RasterImage& image, std::size_t y0, std::size_t x0, std::size_t height,
                 std::size_t width);

// 1 -> n channels by copying the single plane.
RasterImage replicate_channels(const RasterImage& image, std::size_t channels);

bool pixels_in_unit_range(const RasterImage& image);

}  // namespace sono

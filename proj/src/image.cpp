// Copyright 2026 The sonoclass Authors
// SPDX-License-Identifier: Apache-2.0

#include "sonoclass/image.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

namespace sono {

namespace {

std::vector<std::uint8_t> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageError(ImageError::Kind::kIo, "cannot open image " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Netpbm header token, skipping whitespace and '#' comments.
bool next_token(const std::vector<std::uint8_t>& buf, std::size_t& pos, long& value) {
  while (pos < buf.size()) {
    if (buf[pos] == '#') {
      while (pos < buf.size() && buf[pos] != '\n') ++pos;
    } else if (std::isspace(buf[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  if (pos >= buf.size() || !std::isdigit(buf[pos])) return false;
  value = 0;
  while (pos < buf.size() && std::isdigit(buf[pos])) {
    value = value * 10 + (buf[pos] - '0');
    if (value > 1'000'000) return false;
    ++pos;
  }
  return true;
}

RasterImage decode_netpbm(const std::vector<std::uint8_t>& buf, const std::filesystem::path& path) {
  const std::size_t channels = buf[1] == '6' ? 3 : 1;
  std::size_t pos = 2;
  long w = 0, h = 0, maxval = 0;
  if (!next_token(buf, pos, w) || !next_token(buf, pos, h) || !next_token(buf, pos, maxval)) {
    throw ImageError(ImageError::Kind::kTruncated, "truncated or malformed header in " + path.string());
  }
  if (w <= 0 || h <= 0 || maxval <= 0) {
    throw ImageError(ImageError::Kind::kMalformed, "invalid dimensions in " + path.string());
  }
  if (maxval > 255) {
    throw ImageError(ImageError::Kind::kUnsupported, "16-bit netpbm not supported: " + path.string());
  }
  if (pos >= buf.size() || !std::isspace(buf[pos])) {
    throw ImageError(ImageError::Kind::kTruncated, "missing raster in " + path.string());
  }
  ++pos;
  RasterImage img(static_cast<std::size_t>(h), static_cast<std::size_t>(w), channels);
  if (buf.size() - pos < img.pixels.size()) {
    throw ImageError(ImageError::Kind::kTruncated, "truncated raster in " + path.string());
  }
  const double scale = static_cast<double>(maxval);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    img.pixels[i] = std::min(1.0, buf[pos + i] / scale);
  }
  return img;
}

RasterImage decode_png(const std::vector<std::uint8_t>& buf, const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, buf.data(), buf.size())) {
    throw ImageError(ImageError::Kind::kMalformed,
                     "cannot read png " + path.string() + ": " + image.message);
  }
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> raw(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, raw.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw ImageError(ImageError::Kind::kTruncated, "truncated or corrupt png " + path.string() + ": " + msg);
  }
  RasterImage img(image.height, image.width, color ? 3 : 1);
  for (std::size_t i = 0; i < raw.size(); ++i) img.pixels[i] = raw[i] / 255.0;
  return img;
}

std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

RasterImage decode_image(const std::filesystem::path& path) {
  const auto buf = read_all(path);
  if (buf.size() >= 2 && buf[0] == 'P' && (buf[1] == '5' || buf[1] == '6')) {
    return decode_netpbm(buf, path);
  }
  static constexpr std::uint8_t kPngMagic[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (buf.size() >= 8 && std::equal(kPngMagic, kPngMagic + 8, buf.begin())) {
    return decode_png(buf, path);
  }
  if (buf.empty()) throw ImageError(ImageError::Kind::kTruncated, "empty image file " + path.string());
  throw ImageError(ImageError::Kind::kUnsupported, "unsupported image format: " + path.string());
}

void encode_image(const RasterImage& image, const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  std::vector<std::uint8_t> raw(image.pixels.size());
  std::transform(image.pixels.begin(), image.pixels.end(), raw.begin(), quantize);

  if (ext == ".png") {
    png_image out;
    std::memset(&out, 0, sizeof out);
    out.version = PNG_IMAGE_VERSION;
    out.width = static_cast<png_uint_32>(image.width);
    out.height = static_cast<png_uint_32>(image.height);
    out.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    if (image.channels != 1 && image.channels != 3) {
      throw ImageError(ImageError::Kind::kUnsupported, "png needs 1 or 3 channels: " + path.string());
    }
    if (!png_image_write_to_file(&out, path.string().c_str(), 0, raw.data(), 0, nullptr)) {
      throw ImageError(ImageError::Kind::kIo, "cannot write " + path.string() + ": " + out.message);
    }
    return;
  }

  const bool ppm = ext == ".ppm";
  if (!ppm && ext != ".pgm") {
    throw ImageError(ImageError::Kind::kUnsupported, "unsupported output extension: " + path.string());
  }
  if (image.channels != (ppm ? 3u : 1u)) {
    throw ImageError(ImageError::Kind::kUnsupported,
                     "channel count " + std::to_string(image.channels) + " does not fit " + path.string());
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ImageError(ImageError::Kind::kIo, "cannot write " + path.string());
  os << (ppm ? "P6\n" : "P5\n") << image.width << ' ' << image.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!os) throw ImageError(ImageError::Kind::kIo, "short write to " + path.string());
}

RasterImage ycbcr_to_rgb(const RasterImage& image) {
  if (image.channels != 3) {
    throw std::invalid_argument("ycbcr_to_rgb: expected 3 channels, got " + std::to_string(image.channels));
  }
  RasterImage out(image.height, image.width, 3);
  for (std::size_t i = 0; i < image.pixels.size(); i += 3) {
    const double y = image.pixels[i];
    const double cb = image.pixels[i + 1] - 0.5;
    const double cr = image.pixels[i + 2] - 0.5;
    out.pixels[i] = std::clamp(y + 1.402 * cr, 0.0, 1.0);
    out.pixels[i + 1] = std::clamp(y - 0.344136 * cb - 0.714136 * cr, 0.0, 1.0);
    out.pixels[i + 2] = std::clamp(y + 1.772 * cb, 0.0, 1.0);
  }
  return out;
}

RasterImage resize_bilinear(const RasterImage& image, std::size_t height, std::size_t width) {
  if (image.empty() || height == 0 || width == 0) {
    throw std::invalid_argument("resize_bilinear: empty source or target");
  }
  RasterImage out(height, width, image.channels);
  const double sy = static_cast<double>(image.height) / static_cast<double>(height);
  const double sx = static_cast<double>(image.width) / static_cast<double>(width);
  const auto max_y = static_cast<double>(image.height - 1);
  const auto max_x = static_cast<double>(image.width - 1);

  std::vector<std::size_t> x0(width), x1(width);
  std::vector<double> fx(width);
  for (std::size_t x = 0; x < width; ++x) {
    const double src = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, max_x);
    x0[x] = static_cast<std::size_t>(src);
    x1[x] = std::min(x0[x] + 1, image.width - 1);
    fx[x] = src - static_cast<double>(x0[x]);
  }
  for (std::size_t y = 0; y < height; ++y) {
    const double src = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, max_y);
    const auto y0 = static_cast<std::size_t>(src);
    const std::size_t y1 = std::min(y0 + 1, image.height - 1);
    const double fy = src - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      for (std::size_t c = 0; c < image.channels; ++c) {
        const double top = image.at(y0, x0[x], c) * (1.0 - fx[x]) + image.at(y0, x1[x], c) * fx[x];
        const double bottom = image.at(y1, x0[x], c) * (1.0 - fx[x]) + image.at(y1, x1[x], c) * fx[x];
        out.at(y, x, c) = top * (1.0 - fy) + bottom * fy;
      }
    }
  }
  return out;
}

RasterImage crop(const RasterImage& image, std::size_t y0, std::size_t x0, std::size_t height,
                 std::size_t width) {
  if (y0 + height > image.height || x0 + width > image.width || height == 0 || width == 0) {
    throw std::invalid_argument("crop: region outside image");
  }
  RasterImage out(height, width, image.channels);
  for (std::size_t y = 0; y < height; ++y) {
    const auto* src = image.pixels.data() + image.index(y0 + y, x0, 0);
    std::copy(src, src + width * image.channels, out.pixels.data() + out.index(y, 0, 0));
  }
  return out;
}

RasterImage replicate_channels(const RasterImage& image, std::size_t channels) {
  if (image.channels == channels) return image;
  if (image.channels != 1) throw std::invalid_argument("replicate_channels: source must have 1 channel");
  RasterImage out(image.height, image.width, channels);
  for (std::size_t i = 0; i < image.height * image.width; ++i) {
    for (std::size_t c = 0; c < channels; ++c) out.pixels[i * channels + c] = image.pixels[i];
  }
  return out;
}

bool pixels_in_unit_range(const RasterImage& image) {
  return std::all_of(image.pixels.begin(), image.pixels.end(),
                     [](double v) { return v >= 0.0 && v <= 1.0; });
}

}  // namespace sono

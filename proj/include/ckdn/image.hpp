// Copyright 2026 The ckdn-iqa Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// RGB float images in [0,1] stored as (3, H, W) tensors, plus the classical
// image operations the data pipeline needs: PNG/JPEG codecs, bicubic
// resampling, linear and rank filters, PSNR.

#include <png.h>
// jpeglib.h needs FILE and size_t declared first.
#include <cstdio>
#include <jpeglib.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>
#include <vector>

#include "ckdn/error.hpp"
#include "ckdn/tensor.hpp"

namespace ckdn {

using Image = Tensor<float>;

inline std::uint8_t to_u8(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

inline std::vector<std::uint8_t> to_interleaved_rgb8(const Image& img) {
  detail::require(img.channels() == 3, "expected a 3-channel image, got " + img.shape_string());
  std::vector<std::uint8_t> px(img.size());
  for (std::size_t y = 0; y < img.height(); ++y)
    for (std::size_t x = 0; x < img.width(); ++x)
      for (std::size_t c = 0; c < 3; ++c) px[(y * img.width() + x) * 3 + c] = to_u8(img(c, y, x));
  return px;
}

inline Image from_interleaved_rgb8(const std::uint8_t* px, std::size_t h, std::size_t w) {
  Image img(3, h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) img(c, y, x) = static_cast<float>(px[(y * w + x) * 3 + c]) / 255.0f;
  return img;
}

/// Rounds every pixel to the nearest 8-bit level (what a PNG round trip does).
inline Image quantize8(const Image& img) {
  Image out = img;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(to_u8(out[i])) / 255.0f;
  return out;
}

inline std::vector<std::uint8_t> encode_png(const Image& img) {
  const auto px = to_interleaved_rgb8(img);
  png_image pimg{};
  pimg.version = PNG_IMAGE_VERSION;
  pimg.width = static_cast<png_uint_32>(img.width());
  pimg.height = static_cast<png_uint_32>(img.height());
  pimg.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&pimg, nullptr, &size, 0, px.data(), 0, nullptr)) {
    throw DataError(std::string("png encode failed: ") + pimg.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&pimg, out.data(), &size, 0, px.data(), 0, nullptr)) {
    throw DataError(std::string("png encode failed: ") + pimg.message);
  }
  out.resize(size);
  return out;
}

inline Image decode_png(const std::vector<std::uint8_t>& bytes) {
  png_image pimg{};
  pimg.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&pimg, bytes.data(), bytes.size())) {
    throw DataError(std::string("png decode failed: ") + pimg.message);
  }
  pimg.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(pimg));
  if (!png_image_finish_read(&pimg, nullptr, px.data(), 0, nullptr)) {
    png_image_free(&pimg);
    throw DataError(std::string("png decode failed: ") + pimg.message);
  }
  return from_interleaved_rgb8(px.data(), pimg.height, pimg.width);
}

namespace detail {

struct JpegErrorManager {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

inline void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

}  // namespace detail

/// Identifies the JPEG implementation compiled in; datasets record it since
/// the jpeg degradation is only bit-reproducible per codec build.
inline std::string jpeg_codec_identity() {
#ifdef LIBJPEG_TURBO_VERSION
#define CKDN_STR2(x) #x
#define CKDN_STR(x) CKDN_STR2(x)
  return std::string("libjpeg-turbo ") + CKDN_STR(LIBJPEG_TURBO_VERSION) + " (API " +
         std::to_string(JPEG_LIB_VERSION) + ")";
#undef CKDN_STR
#undef CKDN_STR2
#else
  return "libjpeg API " + std::to_string(JPEG_LIB_VERSION);
#endif
}

/// Baseline JPEG encode at `quality` (1..100) with the codec's default
/// chroma subsampling.
inline std::vector<std::uint8_t> encode_jpeg(const Image& img, int quality) {
  if (quality < 1 || quality > 100) throw ConfigError("jpeg quality must be in [1, 100]");
  const auto px = to_interleaved_rgb8(img);
  jpeg_compress_struct cinfo{};
  detail::JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = detail::jpeg_error_exit;
  unsigned char* buffer = nullptr;
  unsigned long size = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_compress(&cinfo);
    std::free(buffer);
    throw DataError(std::string("jpeg encode failed: ") + err.message);
  }
  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, &buffer, &size);
  cinfo.image_width = static_cast<JDIMENSION>(img.width());
  cinfo.image_height = static_cast<JDIMENSION>(img.height());
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  const std::size_t stride = img.width() * 3;
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW row = const_cast<JSAMPROW>(px.data() + cinfo.next_scanline * stride);
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  std::vector<std::uint8_t> out(buffer, buffer + size);
  jpeg_destroy_compress(&cinfo);
  std::free(buffer);
  return out;
}

inline Image decode_jpeg(const std::vector<std::uint8_t>& bytes) {
  jpeg_decompress_struct cinfo{};
  detail::JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = detail::jpeg_error_exit;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw DataError(std::string("jpeg decode failed: ") + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  const std::size_t w = cinfo.output_width, h = cinfo.output_height;
  std::vector<std::uint8_t> px(w * h * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = px.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return from_interleaved_rgb8(px.data(), h, w);
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

/// Loads a PNG or JPEG file (detected from its signature).
inline Image load_image(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() >= 8 && bytes[0] == 0x89 && bytes[1] == 'P' && bytes[2] == 'N' && bytes[3] == 'G') {
    return decode_png(bytes);
  }
  if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF) return decode_jpeg(bytes);
  throw DataError("unsupported image format: " + path.string() + " (expected PNG or JPEG)");
}

inline void save_png(const std::filesystem::path& path, const Image& img) { write_file_bytes(path, encode_png(img)); }

namespace detail {

/// Keys cubic convolution kernel with a = -0.5.
inline double cubic(double x) {
  const double ax = std::abs(x), ax2 = ax * ax, ax3 = ax2 * ax;
  if (ax <= 1.0) return 1.5 * ax3 - 2.5 * ax2 + 1.0;
  if (ax < 2.0) return -0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0;
  return 0.0;
}

struct Contribution {
  std::vector<std::size_t> index;
  std::vector<double> weight;
};

/// Resampling weights along one axis; the kernel widens by 1/scale when
/// shrinking (antialiasing), borders replicate.
inline std::vector<Contribution> resample_weights(std::size_t in, std::size_t out) {
  const double scale = static_cast<double>(out) / static_cast<double>(in);
  const double kscale = std::min(1.0, scale);
  const double width = 4.0 / kscale;
  std::vector<Contribution> contribs(out);
  for (std::size_t i = 0; i < out; ++i) {
    const double u = (static_cast<double>(i) + 0.5) / scale - 0.5;
    const long left = static_cast<long>(std::floor(u - width / 2.0));
    const long right = static_cast<long>(std::ceil(u + width / 2.0));
    double total = 0;
    auto& c = contribs[i];
    for (long j = left; j <= right; ++j) {
      const double wgt = kscale * cubic(kscale * (u - static_cast<double>(j)));
      if (wgt == 0.0) continue;
      c.index.push_back(static_cast<std::size_t>(std::clamp<long>(j, 0, static_cast<long>(in) - 1)));
      c.weight.push_back(wgt);
      total += wgt;
    }
    for (double& wv : c.weight) wv /= total;
  }
  return contribs;
}

}  // namespace detail

/// Separable bicubic resize (Keys a=-0.5, antialiased when shrinking).
/// Values are not clipped.
inline Image resize_bicubic(const Image& img, std::size_t out_h, std::size_t out_w) {
  if (out_h == 0 || out_w == 0 || img.empty()) throw ShapeError("resize_bicubic: empty size");
  const auto wx = detail::resample_weights(img.width(), out_w);
  const auto wy = detail::resample_weights(img.height(), out_h);
  Tensor<double> tmp(img.channels(), img.height(), out_w);
  for (std::size_t c = 0; c < img.channels(); ++c)
    for (std::size_t y = 0; y < img.height(); ++y)
      for (std::size_t x = 0; x < out_w; ++x) {
        double acc = 0;
        for (std::size_t k = 0; k < wx[x].index.size(); ++k) acc += wx[x].weight[k] * img(c, y, wx[x].index[k]);
        tmp(c, y, x) = acc;
      }
  Image out(img.channels(), out_h, out_w);
  for (std::size_t c = 0; c < img.channels(); ++c)
    for (std::size_t y = 0; y < out_h; ++y)
      for (std::size_t x = 0; x < out_w; ++x) {
        double acc = 0;
        for (std::size_t k = 0; k < wy[y].index.size(); ++k) acc += wy[y].weight[k] * tmp(c, wy[y].index[k], x);
        out(c, y, x) = static_cast<float>(acc);
      }
  return out;
}

inline Image clip01(Image img) {
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = std::clamp(img[i], 0.0f, 1.0f);
  return img;
}

inline Image center_crop(const Image& img, std::size_t size) {
  if (img.height() < size || img.width() < size) {
    throw DataError("center_crop: image " + img.shape_string() + " smaller than " + std::to_string(size));
  }
  const std::size_t y0 = (img.height() - size) / 2, x0 = (img.width() - size) / 2;
  Image out(img.channels(), size, size);
  for (std::size_t c = 0; c < img.channels(); ++c)
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) out(c, y, x) = img(c, y0 + y, x0 + x);
  return out;
}

inline Image crop(const Image& img, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
  detail::require(y0 + h <= img.height() && x0 + w <= img.width(), "crop window outside image");
  Image out(img.channels(), h, w);
  for (std::size_t c = 0; c < img.channels(); ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out(c, y, x) = img(c, y0 + y, x0 + x);
  return out;
}

inline Image flip_horizontal(const Image& img) {
  Image out(img.channels(), img.height(), img.width());
  for (std::size_t c = 0; c < img.channels(); ++c)
    for (std::size_t y = 0; y < img.height(); ++y)
      for (std::size_t x = 0; x < img.width(); ++x) out(c, y, x) = img(c, y, img.width() - 1 - x);
  return out;
}

namespace detail {

inline std::size_t clamp_index(long i, std::size_t n) {
  return static_cast<std::size_t>(std::clamp<long>(i, 0, static_cast<long>(n) - 1));
}

/// Separable 1-D kernel applied along x then y with replicated borders.
inline Image separable_filter(const Image& img, const std::vector<double>& kernel) {
  const long r = static_cast<long>(kernel.size() / 2);
  Image tmp(img.channels(), img.height(), img.width());
  for (std::size_t c = 0; c < img.channels(); ++c)
    for (std::size_t y = 0; y < img.height(); ++y)
      for (std::size_t x = 0; x < img.width(); ++x) {
        double acc = 0;
        for (long k = -r; k <= r; ++k)
          acc += kernel[static_cast<std::size_t>(k + r)] * img(c, y, clamp_index(static_cast<long>(x) + k, img.width()));
        tmp(c, y, x) = static_cast<float>(acc);
      }
  Image out(img.channels(), img.height(), img.width());
  for (std::size_t c = 0; c < img.channels(); ++c)
    for (std::size_t y = 0; y < img.height(); ++y)
      for (std::size_t x = 0; x < img.width(); ++x) {
        double acc = 0;
        for (long k = -r; k <= r; ++k)
          acc += kernel[static_cast<std::size_t>(k + r)] * tmp(c, clamp_index(static_cast<long>(y) + k, img.height()), x);
        out(c, y, x) = static_cast<float>(acc);
      }
  return out;
}

}  // namespace detail

inline Image box_blur(const Image& img, std::size_t radius) {
  if (radius == 0) return img;
  return detail::separable_filter(img, std::vector<double>(2 * radius + 1, 1.0 / static_cast<double>(2 * radius + 1)));
}

inline Image gaussian_blur(const Image& img, double sigma) {
  if (sigma <= 0) return img;
  const long r = static_cast<long>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  double total = 0;
  for (long i = -r; i <= r; ++i) {
    k[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    total += k[static_cast<std::size_t>(i + r)];
  }
  for (double& v : k) v /= total;
  return detail::separable_filter(img, k);
}

/// Per-channel median over a (2r+1)^2 window with replicated borders.
inline Image median_filter(const Image& img, std::size_t radius) {
  if (radius == 0) return img;
  const long r = static_cast<long>(radius);
  Image out(img.channels(), img.height(), img.width());
  std::vector<float> window;
  for (std::size_t c = 0; c < img.channels(); ++c)
    for (std::size_t y = 0; y < img.height(); ++y)
      for (std::size_t x = 0; x < img.width(); ++x) {
        window.clear();
        for (long dy = -r; dy <= r; ++dy)
          for (long dx = -r; dx <= r; ++dx)
            window.push_back(img(c, detail::clamp_index(static_cast<long>(y) + dy, img.height()),
                                 detail::clamp_index(static_cast<long>(x) + dx, img.width())));
        auto mid = window.begin() + static_cast<long>(window.size() / 2);
        std::nth_element(window.begin(), mid, window.end());
        out(c, y, x) = *mid;
      }
  return out;
}

/// x + amount * (x - gaussian_blur(x, sigma)), clipped to [0,1].
inline Image unsharp_mask(const Image& img, double sigma, double amount) {
  const Image blurred = gaussian_blur(img, sigma);
  Image out = img;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>(img[i] + amount * (static_cast<double>(img[i]) - blurred[i]));
  }
  return clip01(out);
}

/// Peak signal-to-noise ratio in dB for [0,1] images; +inf when identical.
inline double psnr(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw ShapeError("psnr: shape " + a.shape_string() + " vs " + b.shape_string());
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  const double mse = acc / static_cast<double>(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

}  // namespace ckdn

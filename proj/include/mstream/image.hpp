#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "mstream/tensor.hpp"

namespace mstream {

// 8-bit raster, row-major, interleaved channels (1 = gray, 3 = RGB).
struct RasterImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;
  std::vector<std::uint8_t> pixels;

  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c = 0) { return pixels[(y * width + x) * channels + c]; }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t c = 0) const { return pixels[(y * width + x) * channels + c]; }
};

// Decodes gray or colour PNG (alpha is composited on white). Throws
// FormatError on anything libpng cannot read.
RasterImage read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const RasterImage& image);

// Luma conversion, inversion (ink 1, background 0), aspect-preserving area
// resize of the longer side to S and symmetric zero padding. Returns 1 x S x S.
Tensor preprocess_image(const RasterImage& image, std::size_t target_size, DType dtype = DType::f64);

// Same pipeline for an already inverted 1 x H x W tensor: resize, pad and
// clamp to [0, 1]. Identity on a 1 x S x S tensor already in range.
Tensor preprocess_image(const Tensor& inked, std::size_t target_size);

struct ContentBox {
  std::size_t width, height, offset_x, offset_y;
};

// Placement of a W x H source inside the S x S canvas.
ContentBox content_box(std::size_t width, std::size_t height, std::size_t target_size);

// Fraction of pixels above threshold in a preprocessed image.
double ink_fraction(const Tensor& image, double threshold);

// Maps a 1 x S x S ink tensor back to an 8-bit gray page (ink dark).
RasterImage to_raster(const Tensor& image);

}  // namespace mstream

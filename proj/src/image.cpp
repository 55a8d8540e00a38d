#include "mstream/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace mstream {

namespace {

// Weights of a box filter mapping `src` samples onto `dst` samples: output
// sample j averages the source interval [j*src/dst, (j+1)*src/dst).
struct AxisWeights {
  std::vector<std::size_t> first;
  std::vector<std::vector<double>> weights;
};

AxisWeights area_weights(std::size_t src, std::size_t dst) {
  AxisWeights w;
  const double scale = static_cast<double>(src) / static_cast<double>(dst);
  for (std::size_t j = 0; j < dst; ++j) {
    const double lo = j * scale, hi = (j + 1) * scale;
    const auto first = static_cast<std::size_t>(std::floor(lo));
    const auto last = std::min(src, static_cast<std::size_t>(std::ceil(hi)));
    std::vector<double> ws;
    for (std::size_t i = first; i < last; ++i) {
      const double overlap = std::min(hi, i + 1.0) - std::max(lo, static_cast<double>(i));
      ws.push_back(overlap / scale);
    }
    w.first.push_back(first);
    w.weights.push_back(std::move(ws));
  }
  return w;
}

Tensor resize_and_pad(const std::vector<double>& ink, std::size_t width, std::size_t height, std::size_t target,
                      DType dtype) {
  const ContentBox box = content_box(width, height, target);
  std::vector<double> out(target * target, 0.0);
  if (box.width == width && box.height == height) {
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) out[(y + box.offset_y) * target + x + box.offset_x] = ink[y * width + x];
  } else {
    const AxisWeights wx = area_weights(width, box.width);
    const AxisWeights wy = area_weights(height, box.height);
    std::vector<double> rows(height * box.width, 0.0);
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t j = 0; j < box.width; ++j) {
        double s = 0;
        for (std::size_t k = 0; k < wx.weights[j].size(); ++k) s += wx.weights[j][k] * ink[y * width + wx.first[j] + k];
        rows[y * box.width + j] = s;
      }
    for (std::size_t i = 0; i < box.height; ++i)
      for (std::size_t j = 0; j < box.width; ++j) {
        double s = 0;
        for (std::size_t k = 0; k < wy.weights[i].size(); ++k) s += wy.weights[i][k] * rows[(wy.first[i] + k) * box.width + j];
        out[(i + box.offset_y) * target + j + box.offset_x] = s;
      }
  }
  for (auto& v : out) v = std::clamp(v, 0.0, 1.0);
  return Tensor::from({1, target, target}, out, dtype);
}

}  // namespace

RasterImage read_png(const std::filesystem::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw FormatError("cannot decode " + path.string() + ": " + img.message);
  }
  const bool colour = (img.format & PNG_FORMAT_FLAG_COLOR) != 0;
  img.format = colour ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  RasterImage out;
  out.width = img.width;
  out.height = img.height;
  out.channels = colour ? 3 : 1;
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  png_color white{255, 255, 255};
  if (!png_image_finish_read(&img, &white, out.pixels.data(), 0, nullptr)) {
    png_image_free(&img);
    throw FormatError("cannot decode " + path.string() + ": " + img.message);
  }
  return out;
}

void write_png(const std::filesystem::path& path, const RasterImage& image) {
  if (image.channels != 1 && image.channels != 3) throw ContractError("write_png: 1 or 3 channels expected");
  if (image.pixels.size() != image.width * image.height * image.channels) {
    throw ContractError("write_png: pixel buffer does not match the declared size");
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.c_str(), 0, image.pixels.data(), 0, nullptr)) {
    throw DataError("cannot write " + path.string() + ": " + img.message);
  }
}

ContentBox content_box(std::size_t width, std::size_t height, std::size_t target_size) {
  if (width == 0 || height == 0 || target_size == 0) throw DimensionError("content_box: empty image");
  const std::size_t longer = std::max(width, height);
  auto scaled = [&](std::size_t side) {
    if (side == longer) return target_size;
    const auto v = static_cast<std::size_t>(std::llround(static_cast<double>(side) * target_size / longer));
    return std::max<std::size_t>(1, v);
  };
  ContentBox box{scaled(width), scaled(height), 0, 0};
  box.offset_x = (target_size - box.width) / 2;
  box.offset_y = (target_size - box.height) / 2;
  return box;
}

Tensor preprocess_image(const RasterImage& image, std::size_t target_size, DType dtype) {
  if (image.width == 0 || image.height == 0) throw FormatError("preprocess: empty image");
  std::vector<double> ink(image.width * image.height);
  for (std::size_t i = 0; i < ink.size(); ++i) {
    double luma;
    if (image.channels == 3) {
      const auto* p = &image.pixels[i * 3];
      luma = (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]) / 255.0;
    } else {
      luma = image.pixels[i] / 255.0;
    }
    ink[i] = 1.0 - luma;
  }
  return resize_and_pad(ink, image.width, image.height, target_size, dtype);
}

Tensor preprocess_image(const Tensor& inked, std::size_t target_size) {
  if (inked.dim() != 3 || inked.size(0) != 1) throw DimensionError("preprocess expects 1 x H x W");
  return resize_and_pad(inked.values(), inked.size(2), inked.size(1), target_size, inked.dtype());
}

double ink_fraction(const Tensor& image, double threshold) {
  std::size_t inked = 0;
  const auto v = image.values();
  for (double x : v) inked += x > threshold;
  return static_cast<double>(inked) / static_cast<double>(v.size());
}

RasterImage to_raster(const Tensor& image) {
  if (image.dim() != 3 || image.size(0) != 1) throw DimensionError("to_raster expects 1 x H x W");
  RasterImage r;
  r.height = image.size(1);
  r.width = image.size(2);
  r.pixels.resize(r.width * r.height);
  for (std::size_t i = 0; i < r.pixels.size(); ++i) {
    r.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - std::clamp(image.at(i), 0.0, 1.0))));
  }
  return r;
}

}  // namespace mstream

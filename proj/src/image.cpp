#include "emofuse/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "emofuse/tensor_io.hpp"

namespace emofuse {

namespace fs = std::filesystem;

bool bbox_inside(const BBox& box, int height, int width) {
  return box.w > 0 && box.h > 0 && box.x >= 0 && box.y >= 0 && box.x + box.w <= width &&
         box.y + box.h <= height;
}

Image crop(const Image& image, const BBox& box) {
  if (!bbox_inside(box, image.height, image.width)) {
    throw std::out_of_range("crop: box outside " + std::to_string(image.height) + "x" +
                            std::to_string(image.width) + " image");
  }
  Image out(box.h, box.w, image.channels);
  for (int y = 0; y < box.h; ++y) {
    const float* src = &image.data[(static_cast<std::size_t>(box.y + y) * image.width + box.x) * image.channels];
    std::copy_n(src, static_cast<std::size_t>(box.w) * image.channels,
                &out.data[static_cast<std::size_t>(y) * box.w * image.channels]);
  }
  return out;
}

namespace {

struct Tap {
  int lo, hi;
  float frac;
};

std::vector<Tap> taps(int in, int out) {
  std::vector<Tap> t(static_cast<std::size_t>(out));
  const double ratio = static_cast<double>(in) / out;
  for (int i = 0; i < out; ++i) {
    double src = (i + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const int lo = static_cast<int>(std::floor(src));
    const int hi = std::min(lo + 1, in - 1);
    t[i] = {lo, hi, static_cast<float>(src - lo)};
  }
  return t;
}

}  // namespace

Image resize_bilinear(const Image& image, int height, int width) {
  if (image.empty() || height <= 0 || width <= 0) {
    throw std::invalid_argument("resize_bilinear: empty source or non-positive target size");
  }
  if (image.height == height && image.width == width) return image;
  const auto ty = taps(image.height, height);
  const auto tx = taps(image.width, width);
  Image out(height, width, image.channels);
  for (int y = 0; y < height; ++y) {
    const Tap& a = ty[y];
    for (int x = 0; x < width; ++x) {
      const Tap& b = tx[x];
      for (int c = 0; c < image.channels; ++c) {
        const float top = image.at(a.lo, b.lo, c) * (1.0f - b.frac) + image.at(a.lo, b.hi, c) * b.frac;
        const float bottom = image.at(a.hi, b.lo, c) * (1.0f - b.frac) + image.at(a.hi, b.hi, c) * b.frac;
        out.at(y, x, c) = top * (1.0f - a.frac) + bottom * a.frac;
      }
    }
  }
  return out;
}

Image blank_region(const Image& image, const BBox& box) {
  Image out = image;
  const int y0 = std::max(box.y, 0), y1 = std::min(box.y + box.h, image.height);
  const int x0 = std::max(box.x, 0), x1 = std::min(box.x + box.w, image.width);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x)
      for (int c = 0; c < image.channels; ++c) out.at(y, x, c) = 0.0f;
  return out;
}

Tensor to_chw(const Image& image) {
  std::vector<Real> v(image.data.size());
  const std::size_t plane = static_cast<std::size_t>(image.height) * image.width;
  for (int c = 0; c < image.channels; ++c)
    for (std::size_t p = 0; p < plane; ++p) v[c * plane + p] = image.data[p * image.channels + c];
  return Tensor(Shape{image.channels, image.height, image.width}, std::move(v));
}

namespace {

Image load_png(const fs::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw FormatError(path.string() + ": " + png.message);
  }
  const bool gray = (png.format & PNG_FORMAT_FLAG_COLOR) == 0;
  png.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<unsigned char> buffer(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
    throw FormatError(path.string() + ": " + png.message);
  }
  Image out(static_cast<int>(png.height), static_cast<int>(png.width), gray ? 1 : 3);
  for (std::size_t i = 0; i < buffer.size(); ++i) out.data[i] = buffer[i] / 255.0f;
  return out;
}

}  // namespace

Image load_image(const fs::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".png") return load_png(path);
  if (ext != ".f32") throw FormatError(path.string() + ": unsupported image type (want .png or .f32)");
  F32Array a = read_f32(path);
  if (a.shape.size() == 2) a.shape.push_back(1);
  if (a.shape.size() != 3) throw FormatError(path.string() + ": image must be [H, W] or [H, W, C]");
  Image out;
  out.height = static_cast<int>(a.shape[0]);
  out.width = static_cast<int>(a.shape[1]);
  out.channels = static_cast<int>(a.shape[2]);
  out.data = std::move(a.values);
  return out;
}

void save_image_f32(const fs::path& path, const Image& image) {
  write_f32(path, F32Array{Shape{image.height, image.width, image.channels}, image.data});
}

void save_png(const fs::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw FormatError("save_png: only 1 or 3 channels supported");
  }
  std::vector<unsigned char> buffer(image.data.size());
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    buffer[i] = static_cast<unsigned char>(std::lround(std::clamp(image.data[i], 0.0f, 1.0f) * 255.0f));
  }
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = image.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, buffer.data(), 0, nullptr)) {
    throw FormatError(path.string() + ": " + png.message);
  }
}

}  // namespace emofuse

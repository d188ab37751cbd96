#pragma once

#include <filesystem>
#include <vector>

#include "emofuse/tensor.hpp"

namespace emofuse {

/// Interleaved H x W x C image, values nominally in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> data;

  Image() = default;
  Image(int h, int w, int c, float fill = 0.0f)
      : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {}

  bool empty() const { return data.empty(); }
  float& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  float at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool operator==(const Image&) const = default;
};

/// Pixel rectangle, top-left corner plus extent.
struct BBox {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;
  bool operator==(const BBox&) const = default;
};

bool bbox_inside(const BBox& box, int height, int width);

Image crop(const Image& image, const BBox& box);

/// Bilinear resampling with half-pixel centers; edges are clamped, so the
/// output is a convex combination of input pixels.
Image resize_bilinear(const Image& image, int height, int width);

/// Zeroes the pixels inside `box` (clipped to the image).
Image blank_region(const Image& image, const BBox& box);

/// [C, H, W] tensor from an interleaved image.
Tensor to_chw(const Image& image);

/// Reads `.f32` (shape [H, W, C] or [H, W]) or 8-bit `.png` images.
Image load_image(const std::filesystem::path& path);
void save_image_f32(const std::filesystem::path& path, const Image& image);
/// 8-bit PNG, grayscale for one channel and RGB for three. Values are
/// clamped to [0, 1] before quantization.
void save_png(const std::filesystem::path& path, const Image& image);

}  // namespace emofuse

#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "blindrest/tensor.hpp"

namespace blindrest {

/// H x W x C pixels in [0,1], row-major, channels interleaved. C is 1 or 3.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c, float fill = 0.0f);

  float& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * channels + c]; }
  float at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * channels + c]; }

  std::size_t size() const { return pixels.size(); }
  void clamp();

  bool operator==(const Image&) const = default;
};

// Throws DimensionError naming the differing axis.
void require_same_dims(const Image& a, const Image& b, const char* what);

// BT.601 luma.
Image to_luma(const Image& rgb);

// Rounds every pixel to the nearest 8-bit level.
Image quantize8(const Image& image);

// Batch <-> [N,C,H,W] tensor. from_tensor clamps into [0,1].
Tensor to_tensor(const std::vector<Image>& images);
Tensor to_tensor(const Image& image);
std::vector<Image> from_tensor(const Tensor& t);

// 8-bit PNG, grayscale or RGB. Pixel p is stored as round(p * 255).
Image load_image(const std::filesystem::path& path);
void save_image(const Image& image, const std::filesystem::path& path);

}  // namespace blindrest

/**
 * @file image.hpp
 * @brief Image containers and the pixel-level primitives shared by every stage.
 *
 * Images hold single-precision values in [0,1], row-major with channels
 * interleaved (HWC). Border handling is clamp-to-edge throughout.
 */
#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace ear {

class GrayImage {
 public:
  GrayImage() = default;
  GrayImage(int height, int width, float fill = 0.0f);
  GrayImage(int height, int width, std::vector<float> data);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float& at(int y, int x) { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  float at(int y, int x) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  /// Clamp-to-edge read.
  float clamped(int y, int x) const;

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }

  friend bool operator==(const GrayImage&, const GrayImage&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<float> data_;
};

class Image {
 public:
  Image() = default;
  Image(int height, int width, int channels, float fill = 0.0f);
  Image(int height, int width, int channels, std::vector<float> data);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float& at(int y, int x, int c) {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }
  float at(int y, int x, int c) const {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }

  /// Extract one channel as a gray plane.
  GrayImage channel(int c) const;
  void set_channel(int c, const GrayImage& plane);

  friend bool operator==(const Image&, const Image&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<float> data_;
};

/// Throws ValueError unless every value is finite and inside [0,1].
void validate_unit_range(const Image& img);

// PNG I/O (8-bit gray or RGB). Values are byte/255 on load, round(v*255) on save.
Image load_image(const std::filesystem::path& path);
Image decode_png(std::span<const unsigned char> bytes);
void save_image(const Image& img, const std::filesystem::path& path);
void save_image(const GrayImage& img, const std::filesystem::path& path);

GrayImage to_gray(const Image& img);
Image from_gray(const GrayImage& gray);

GrayImage avg_pool(const GrayImage& img, int m);
Image avg_pool(const Image& img, int m);

GrayImage upscale_nearest(const GrayImage& img, int target_height, int target_width);
Image upscale_nearest(const Image& img, int target_height, int target_width);

/// Half-pixel-centred bilinear resampling, used to bring inputs to the working resolution.
Image resize_bilinear(const Image& img, int target_height, int target_width);

/// Normalised Gaussian taps for radius ceil(3*sigma).
std::vector<float> gaussian_kernel(float sigma);
GrayImage gaussian_blur(const GrayImage& img, float sigma);

/// Odd-length Gaussian window with explicit size (used by windowed SSIM).
std::vector<float> gaussian_window(int size, float sigma);

/// Separable correlation with the same odd-length taps on rows and columns, clamp-to-edge.
GrayImage separable_filter(const GrayImage& img, std::span<const float> taps);

struct Hessian {
  GrayImage dxx;
  GrayImage dyy;
  GrayImage dxy;
};

/// Central second differences; requires at least 3x3.
Hessian second_derivatives(const GrayImage& img);

/// Prewitt (1/3-normalised) gradient magnitude, clamp-to-edge; requires at least 3x3.
GrayImage prewitt_magnitude(const GrayImage& img);

}  // namespace ear

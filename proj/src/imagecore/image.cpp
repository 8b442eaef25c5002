#include "ear/image.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ear/error.hpp"

namespace ear {

namespace {

int clamp_index(int i, int n) { return std::clamp(i, 0, n - 1); }

void require_dims(int h, int w) {
  if (h <= 0 || w <= 0) throw DimensionError("image dimensions must be positive");
}

}  // namespace

GrayImage::GrayImage(int height, int width, float fill)
    : height_(height), width_(width), data_(static_cast<std::size_t>(height) * width, fill) {
  require_dims(height, width);
}

GrayImage::GrayImage(int height, int width, std::vector<float> data)
    : height_(height), width_(width), data_(std::move(data)) {
  require_dims(height, width);
  if (data_.size() != static_cast<std::size_t>(height) * width)
    throw DimensionError("gray image data length does not match dimensions");
}

float GrayImage::clamped(int y, int x) const {
  return at(clamp_index(y, height_), clamp_index(x, width_));
}

Image::Image(int height, int width, int channels, float fill)
    : height_(height),
      width_(width),
      channels_(channels),
      data_(static_cast<std::size_t>(height) * width * channels, fill) {
  require_dims(height, width);
  if (channels != 1 && channels != 3) throw DimensionError("image must have 1 or 3 channels");
}

Image::Image(int height, int width, int channels, std::vector<float> data)
    : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
  require_dims(height, width);
  if (channels != 1 && channels != 3) throw DimensionError("image must have 1 or 3 channels");
  if (data_.size() != static_cast<std::size_t>(height) * width * channels)
    throw DimensionError("image data length does not match dimensions");
}

GrayImage Image::channel(int c) const {
  GrayImage out(height_, width_);
  for (int y = 0; y < height_; ++y)
    for (int x = 0; x < width_; ++x) out.at(y, x) = at(y, x, c);
  return out;
}

void Image::set_channel(int c, const GrayImage& plane) {
  if (plane.height() != height_ || plane.width() != width_)
    throw DimensionError("channel plane does not match image dimensions");
  for (int y = 0; y < height_; ++y)
    for (int x = 0; x < width_; ++x) at(y, x, c) = plane.at(y, x);
}

void validate_unit_range(const Image& img) {
  for (float v : img.data()) {
    if (!std::isfinite(v) || v < 0.0f || v > 1.0f)
      throw ValueError("image value outside [0,1]: " + std::to_string(v));
  }
}

GrayImage to_gray(const Image& img) {
  if (img.channels() == 1) return img.channel(0);
  if (img.channels() != 3) throw DimensionError("to_gray expects 1 or 3 channels");
  GrayImage out(img.height(), img.width());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      out.at(y, x) = 0.299f * img.at(y, x, 0) + 0.587f * img.at(y, x, 1) + 0.114f * img.at(y, x, 2);
  return out;
}

Image from_gray(const GrayImage& gray) {
  Image out(gray.height(), gray.width(), 1);
  out.set_channel(0, gray);
  return out;
}

GrayImage avg_pool(const GrayImage& img, int m) {
  if (m < 1) throw ValueError("pooling scale must be >= 1");
  const int oh = (img.height() + m - 1) / m;
  const int ow = (img.width() + m - 1) / m;
  GrayImage out(oh, ow);
  for (int oy = 0; oy < oh; ++oy) {
    const int y0 = oy * m, y1 = std::min(y0 + m, img.height());
    for (int ox = 0; ox < ow; ++ox) {
      const int x0 = ox * m, x1 = std::min(x0 + m, img.width());
      double sum = 0.0;
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) sum += img.at(y, x);
      out.at(oy, ox) = static_cast<float>(sum / ((y1 - y0) * (x1 - x0)));
    }
  }
  return out;
}

Image avg_pool(const Image& img, int m) {
  if (m < 1) throw ValueError("pooling scale must be >= 1");
  const int oh = (img.height() + m - 1) / m;
  const int ow = (img.width() + m - 1) / m;
  Image out(oh, ow, img.channels());
  for (int c = 0; c < img.channels(); ++c) out.set_channel(c, avg_pool(img.channel(c), m));
  return out;
}

GrayImage upscale_nearest(const GrayImage& img, int target_height, int target_width) {
  if (target_height < 1 || target_width < 1) throw ValueError("target dimensions must be >= 1");
  GrayImage out(target_height, target_width);
  for (int y = 0; y < target_height; ++y) {
    const int sy = static_cast<int>(static_cast<long long>(y) * img.height() / target_height);
    for (int x = 0; x < target_width; ++x) {
      const int sx = static_cast<int>(static_cast<long long>(x) * img.width() / target_width);
      out.at(y, x) = img.at(sy, sx);
    }
  }
  return out;
}

Image upscale_nearest(const Image& img, int target_height, int target_width) {
  if (target_height < 1 || target_width < 1) throw ValueError("target dimensions must be >= 1");
  Image out(target_height, target_width, img.channels());
  for (int c = 0; c < img.channels(); ++c)
    out.set_channel(c, upscale_nearest(img.channel(c), target_height, target_width));
  return out;
}

Image resize_bilinear(const Image& img, int target_height, int target_width) {
  if (target_height < 1 || target_width < 1) throw ValueError("target dimensions must be >= 1");
  if (target_height == img.height() && target_width == img.width()) return img;
  Image out(target_height, target_width, img.channels());
  const double sy = static_cast<double>(img.height()) / target_height;
  const double sx = static_cast<double>(img.width()) / target_width;
  for (int y = 0; y < target_height; ++y) {
    const double fy = std::max(0.0, (y + 0.5) * sy - 0.5);
    const int y0 = std::min(static_cast<int>(fy), img.height() - 1);
    const int y1 = std::min(y0 + 1, img.height() - 1);
    const double wy = fy - y0;
    for (int x = 0; x < target_width; ++x) {
      const double fx = std::max(0.0, (x + 0.5) * sx - 0.5);
      const int x0 = std::min(static_cast<int>(fx), img.width() - 1);
      const int x1 = std::min(x0 + 1, img.width() - 1);
      const double wx = fx - x0;
      for (int c = 0; c < img.channels(); ++c) {
        const double top = (1 - wx) * img.at(y0, x0, c) + wx * img.at(y0, x1, c);
        const double bottom = (1 - wx) * img.at(y1, x0, c) + wx * img.at(y1, x1, c);
        out.at(y, x, c) = static_cast<float>(std::clamp((1 - wy) * top + wy * bottom, 0.0, 1.0));
      }
    }
  }
  return out;
}

std::vector<float> gaussian_kernel(float sigma) {
  if (!(sigma >= 0.0f)) throw ValueError("sigma must be non-negative");
  if (sigma == 0.0f) return {1.0f};
  return gaussian_window(2 * static_cast<int>(std::ceil(3.0f * sigma)) + 1, sigma);
}

std::vector<float> gaussian_window(int size, float sigma) {
  if (size < 1 || size % 2 == 0) throw ValueError("window size must be odd and positive");
  if (!(sigma > 0.0f)) throw ValueError("window sigma must be positive");
  const int radius = size / 2;
  std::vector<double> taps(size);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    taps[i + radius] = std::exp(-0.5 * i * i / (static_cast<double>(sigma) * sigma));
    sum += taps[i + radius];
  }
  std::vector<float> kernel(taps.size());
  for (std::size_t i = 0; i < taps.size(); ++i) kernel[i] = static_cast<float>(taps[i] / sum);
  return kernel;
}

GrayImage gaussian_blur(const GrayImage& img, float sigma) {
  if (!(sigma >= 0.0f)) throw ValueError("sigma must be non-negative");
  if (sigma == 0.0f) return img;
  return separable_filter(img, gaussian_kernel(sigma));
}

GrayImage separable_filter(const GrayImage& img, std::span<const float> kernel) {
  if (kernel.size() % 2 == 0) throw ValueError("filter taps must have odd length");
  const int radius = static_cast<int>(kernel.size() / 2);
  GrayImage tmp(img.height(), img.width());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      float acc = 0.0f;
      for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * img.clamped(y, x + k);
      tmp.at(y, x) = acc;
    }
  GrayImage out(img.height(), img.width());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      float acc = 0.0f;
      for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * tmp.clamped(y + k, x);
      out.at(y, x) = acc;
    }
  return out;
}

Hessian second_derivatives(const GrayImage& img) {
  if (img.height() < 3 || img.width() < 3)
    throw DimensionError("second derivatives need an image of at least 3x3");
  Hessian h{GrayImage(img.height(), img.width()), GrayImage(img.height(), img.width()),
            GrayImage(img.height(), img.width())};
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      const float c = img.at(y, x);
      h.dxx.at(y, x) = img.clamped(y, x + 1) - 2.0f * c + img.clamped(y, x - 1);
      h.dyy.at(y, x) = img.clamped(y + 1, x) - 2.0f * c + img.clamped(y - 1, x);
      h.dxy.at(y, x) = (img.clamped(y + 1, x + 1) - img.clamped(y + 1, x - 1) -
                        img.clamped(y - 1, x + 1) + img.clamped(y - 1, x - 1)) /
                       4.0f;
    }
  return h;
}

GrayImage prewitt_magnitude(const GrayImage& img) {
  if (img.height() < 3 || img.width() < 3)
    throw DimensionError("gradient magnitude needs an image of at least 3x3");
  GrayImage out(img.height(), img.width());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      float gx = 0.0f, gy = 0.0f;
      for (int k = -1; k <= 1; ++k) {
        gx += img.clamped(y + k, x + 1) - img.clamped(y + k, x - 1);
        gy += img.clamped(y + 1, x + k) - img.clamped(y - 1, x + k);
      }
      gx /= 3.0f;
      gy /= 3.0f;
      out.at(y, x) = std::sqrt(gx * gx + gy * gy);
    }
  return out;
}

}  // namespace ear

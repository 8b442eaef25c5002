/**
 * @file saliency.hpp
 * @brief Attention maps and the deterministic Q3 saliency mask.
 *
 * An attention map is thresholded once at mu + 0.674 sigma (population sigma,
 * strict inequality) on its own grid, then the binary grid is upscaled to the
 * image resolution with nearest interpolation.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "ear/image.hpp"

namespace ear {

/// Z-score of the upper quartile for a normal distribution.
inline constexpr double kUpperQuartileZ = 0.674;

struct AttentionMap {
  int height = 0;
  int width = 0;
  std::vector<float> scores;

  float at(int y, int x) const { return scores[static_cast<std::size_t>(y) * width + x]; }
};

/// Throws ValueError if any score is non-finite or negative, DimensionError on bad dims.
void validate_attention(const AttentionMap& map);

class SaliencyMask {
 public:
  SaliencyMask() = default;
  SaliencyMask(int height, int width, std::uint8_t fill = 0);

  int height() const { return height_; }
  int width() const { return width_; }
  std::uint8_t& at(int y, int x) { return bits_[static_cast<std::size_t>(y) * width_ + x]; }
  std::uint8_t at(int y, int x) const { return bits_[static_cast<std::size_t>(y) * width_ + x]; }
  std::span<const std::uint8_t> bits() const { return bits_; }

  SaliencyMask complement() const;
  std::size_t count() const;
  GrayImage as_gray() const;

  friend bool operator==(const SaliencyMask&, const SaliencyMask&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> bits_;
};

// EARATTN1: "EARATTN1", u32 height, u32 width (little endian), then h*w f32 LE, row-major.
AttentionMap read_attention(const std::filesystem::path& path);
AttentionMap parse_attention(std::span<const unsigned char> bytes);
std::vector<unsigned char> encode_attention(const AttentionMap& map);
void write_attention(const AttentionMap& map, const std::filesystem::path& path);

/// Q3 threshold value mu + 0.674 sigma (population sigma) over all cells.
double q3_threshold(const AttentionMap& map);

/// Binary mask at attention resolution; cells strictly above the Q3 threshold.
SaliencyMask binarize_grid(const AttentionMap& map);

SaliencyMask binarize_q3(const AttentionMap& map, int target_height, int target_width);

/// Attention substitute when no exported map exists: blurred Prewitt magnitude,
/// pooled by 8 and min-max normalised.
AttentionMap fallback_saliency(const Image& img);

}  // namespace ear

/**
 * @file obfuscate.hpp
 * @brief Mosaic obfuscation and hint compositing I' = M(I)*S + I*(1-S).
 */
#pragma once

#include <array>

#include "ear/image.hpp"
#include "ear/saliency.hpp"

namespace ear {

/// Mosaic patch side; always a power of two in [2, 64].
class MosaicScale {
 public:
  static constexpr std::array<int, 6> kLadder = {2, 4, 8, 16, 32, 64};

  explicit MosaicScale(int value);
  int value() const { return value_; }

  friend auto operator<=>(const MosaicScale&, const MosaicScale&) = default;

 private:
  int value_;
};

Image mosaic(const Image& img, MosaicScale m);

Image compose_hint(const Image& img, MosaicScale m, const SaliencyMask& mask);

/// Masked pixels set to zero (the no-hint ablation).
Image compose_blank(const Image& img, const SaliencyMask& mask);

}  // namespace ear

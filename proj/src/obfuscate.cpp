#include "ear/obfuscate.hpp"

#include <algorithm>
#include <string>

#include "ear/error.hpp"

namespace ear {

MosaicScale::MosaicScale(int value) : value_(value) {
  if (std::find(kLadder.begin(), kLadder.end(), value) == kLadder.end())
    throw ValueError("mosaic scale must be one of 2,4,8,16,32,64 (got " + std::to_string(value) + ")");
}

Image mosaic(const Image& img, MosaicScale m) {
  return upscale_nearest(avg_pool(img, m.value()), img.height(), img.width());
}

namespace {

void require_same_dims(const Image& img, const SaliencyMask& mask) {
  if (img.height() != mask.height() || img.width() != mask.width())
    throw DimensionError("saliency mask dimensions do not match the image");
}

}  // namespace

Image compose_hint(const Image& img, MosaicScale m, const SaliencyMask& mask) {
  require_same_dims(img, mask);
  const Image hint = mosaic(img, m);
  Image out = img;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      if (!mask.at(y, x)) continue;
      for (int c = 0; c < img.channels(); ++c) out.at(y, x, c) = hint.at(y, x, c);
    }
  return out;
}

Image compose_blank(const Image& img, const SaliencyMask& mask) {
  require_same_dims(img, mask);
  Image out = img;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      if (!mask.at(y, x)) continue;
      for (int c = 0; c < img.channels(); ++c) out.at(y, x, c) = 0.0f;
    }
  return out;
}

}  // namespace ear

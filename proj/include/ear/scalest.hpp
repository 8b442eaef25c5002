/**
 * @file scalest.hpp
 * @brief Mosaic-scale estimation from the Hessian edge response.
 *
 * r = Tr(H)^2 / Det(H) per pixel (valid only where Det(H) > 0); r10 is the mean
 * of the top tenth of valid responses inside the saliency mask; a per-category
 * linear model maps r10 to a scale which is snapped to the power-of-two ladder.
 */
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ear/image.hpp"
#include "ear/obfuscate.hpp"
#include "ear/saliency.hpp"

namespace ear {

inline constexpr float kDefaultPresmoothSigma = 1.0f;

struct EdgeResponseField {
  int height = 0;
  int width = 0;
  std::vector<double> r;
  std::vector<std::uint8_t> valid;

  double at(int y, int x) const { return r[static_cast<std::size_t>(y) * width + x]; }
  bool is_valid(int y, int x) const { return valid[static_cast<std::size_t>(y) * width + x] != 0; }
};

enum class CategoryKind { objects, textures };

std::string to_string(CategoryKind kind);
CategoryKind parse_category_kind(const std::string& text);

struct ScaleModel {
  double slope = 0.0;
  double intercept = 0.0;
  CategoryKind category = CategoryKind::objects;

  double predict(double r10) const { return slope * r10 + intercept; }
};

EdgeResponseField edge_response(const GrayImage& img, float presmooth_sigma);

/// Mean of the top ceil(n/10) valid edge responses inside the mask. Throws NoSignalError
/// when no masked pixel has a valid response.
double r10(const Image& img, const SaliencyMask& mask, float presmooth_sigma);

/// Mean of top-decile values; exposed for callers that already hold the responses.
double top_decile_mean(std::vector<double> values);

struct MaskedImage {
  const Image* image;
  const SaliencyMask* mask;
};

/// Product representative: mean of per-image r10, skipping images without signal.
double product_r10(std::span<const MaskedImage> images, float presmooth_sigma);

struct ScalePair {
  double r10;
  int m_star;
};

ScaleModel fit_scale_model(std::span<const ScalePair> pairs, CategoryKind category);

MosaicScale estimate_scale(const ScaleModel& model, double r10);

/// Snap a raw scale estimate to the ladder (floor of 2, log2-nearest, ties down, cap 64).
MosaicScale quantize_scale(double value);

struct GridSearchResult {
  MosaicScale best{2};
  std::map<int, double> auroc_by_scale;
};

using ScaleEvaluator = std::function<double(MosaicScale)>;

/// Evaluate every candidate and return the argmax (ties go to the smaller scale).
GridSearchResult grid_search_scale(std::span<const int> candidates, const ScaleEvaluator& evaluate);

}  // namespace ear

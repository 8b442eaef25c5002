#include "ear/scalest.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "ear/error.hpp"

namespace ear {

std::string to_string(CategoryKind kind) {
  return kind == CategoryKind::objects ? "objects" : "textures";
}

CategoryKind parse_category_kind(const std::string& text) {
  if (text == "objects" || text == "object") return CategoryKind::objects;
  if (text == "textures" || text == "texture") return CategoryKind::textures;
  throw ValueError("unknown category kind '" + text + "' (expected objects or textures)");
}

EdgeResponseField edge_response(const GrayImage& img, float presmooth_sigma) {
  if (img.height() < 3 || img.width() < 3)
    throw DimensionError("edge response needs an image of at least 3x3");
  const Hessian h = second_derivatives(gaussian_blur(img, presmooth_sigma));
  EdgeResponseField field;
  field.height = img.height();
  field.width = img.width();
  field.r.assign(img.size(), 0.0);
  field.valid.assign(img.size(), 0);
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double dxx = h.dxx.data()[i], dyy = h.dyy.data()[i], dxy = h.dxy.data()[i];
    const double det = dxx * dyy - dxy * dxy;
    if (det > 0.0) {
      const double tr = dxx + dyy;
      field.r[i] = tr * tr / det;
      field.valid[i] = 1;
    }
  }
  return field;
}

double top_decile_mean(std::vector<double> values) {
  if (values.empty()) throw NoSignalError("no valid edge responses inside the saliency mask");
  const std::size_t k = (values.size() + 9) / 10;
  std::partial_sort(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k), values.end(),
                    std::greater<>());
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) sum += values[i];
  return sum / static_cast<double>(k);
}

double r10(const Image& img, const SaliencyMask& mask, float presmooth_sigma) {
  if (img.height() != mask.height() || img.width() != mask.width())
    throw DimensionError("saliency mask dimensions do not match the image");
  const EdgeResponseField field = edge_response(to_gray(img), presmooth_sigma);
  std::vector<double> selected;
  for (int y = 0; y < field.height; ++y)
    for (int x = 0; x < field.width; ++x)
      if (mask.at(y, x) && field.is_valid(y, x)) selected.push_back(field.at(y, x));
  return top_decile_mean(std::move(selected));
}

double product_r10(std::span<const MaskedImage> images, float presmooth_sigma) {
  if (images.empty()) throw ValueError("product_r10 needs at least one image");
  double sum = 0.0;
  int used = 0;
  for (const auto& item : images) {
    try {
      sum += r10(*item.image, *item.mask, presmooth_sigma);
      ++used;
    } catch (const NoSignalError&) {
    }
  }
  if (used == 0) throw NoSignalError("no image in the product has a usable edge response");
  return sum / used;
}

ScaleModel fit_scale_model(std::span<const ScalePair> pairs, CategoryKind category) {
  if (pairs.size() < 2) throw ValueError("fitting a scale model needs at least two pairs");
  double mx = 0.0, my = 0.0;
  for (const auto& p : pairs) {
    if (!std::isfinite(p.r10)) throw ValueError("r10 must be finite");
    mx += p.r10;
    my += p.m_star;
  }
  mx /= static_cast<double>(pairs.size());
  my /= static_cast<double>(pairs.size());
  double sxx = 0.0, sxy = 0.0;
  for (const auto& p : pairs) {
    sxx += (p.r10 - mx) * (p.r10 - mx);
    sxy += (p.r10 - mx) * (p.m_star - my);
  }
  if (sxx == 0.0) throw ValueError("degenerate design: all r10 values are equal");
  ScaleModel model;
  model.slope = sxy / sxx;
  model.intercept = my - model.slope * mx;
  model.category = category;
  return model;
}

MosaicScale quantize_scale(double value) {
  if (std::isnan(value)) throw ValueError("scale estimate is not a number");
  if (value < 2.0) return MosaicScale(2);
  if (value >= 64.0) return MosaicScale(64);
  const int exponent = static_cast<int>(std::ceil(std::log2(value) - 0.5));
  return MosaicScale(1 << std::clamp(exponent, 1, 6));
}

MosaicScale estimate_scale(const ScaleModel& model, double r10) {
  if (!std::isfinite(r10)) throw ValueError("r10 must be finite");
  const double v = model.predict(r10);
  if (!std::isfinite(v)) throw ValueError("scale model produced a non-finite estimate");
  return quantize_scale(v);
}

GridSearchResult grid_search_scale(std::span<const int> candidates, const ScaleEvaluator& evaluate) {
  if (candidates.empty()) throw ValueError("grid search needs at least one candidate scale");
  std::vector<int> ordered(candidates.begin(), candidates.end());
  std::sort(ordered.begin(), ordered.end());
  GridSearchResult result;
  double best = -1.0;
  for (int m : ordered) {
    const MosaicScale scale(m);
    const double auroc = evaluate(scale);
    result.auroc_by_scale[m] = auroc;
    if (auroc > best) {
      best = auroc;
      result.best = scale;
    }
  }
  return result;
}

}  // namespace ear

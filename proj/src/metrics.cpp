#include "ear/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "ear/error.hpp"

namespace ear {

namespace {

void require_same_dims(const Image& a, const Image& b) {
  if (a.height() != b.height() || a.width() != b.width() || a.channels() != b.channels())
    throw DimensionError("images differ in shape");
}

}  // namespace

void MetricConfig::validate() const {
  if (scales < 1) throw ValueError("MSGMS needs at least one scale");
  if (!(c > 0.0)) throw ValueError("GMS stabiliser c must be positive");
  if (ssim_window < 1 || ssim_window % 2 == 0) throw ValueError("SSIM window must be odd");
  if (!(ssim_sigma > 0.0)) throw ValueError("SSIM sigma must be positive");
  if (!(lamp_epsilon > 0.0 && lamp_epsilon < 1.0)) throw ValueError("LAMP epsilon must be in (0,1)");
  if (score_smooth_radius < 0) throw ValueError("score smoothing radius must be >= 0");
}

void LossWeights::validate() const {
  if (l2 < 0.0 || ssim < 0.0 || msgms < 0.0) throw ValueError("loss weights must be non-negative");
  if (sum() <= 0.0) throw ValueError("loss weights must not all be zero");
}

GrayImage grad_magnitude(const GrayImage& img) { return prewitt_magnitude(img); }

GrayImage gms_map(const GrayImage& grad_a, const GrayImage& grad_b, double c) {
  if (grad_a.height() != grad_b.height() || grad_a.width() != grad_b.width())
    throw DimensionError("gradient fields differ in shape");
  GrayImage out(grad_a.height(), grad_a.width());
  // Evaluated in double; result lies in (0, 1].
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double ga = grad_a.data()[i], gb = grad_b.data()[i];
    out.data()[i] = static_cast<float>((2.0 * ga * gb + c) / (ga * ga + gb * gb + c));
  }
  return out;
}

DistanceMap msgms_distance(const Image& a, const Image& b, const MetricConfig& cfg) {
  require_same_dims(a, b);
  cfg.validate();
  const GrayImage ga = to_gray(a), gb = to_gray(b);
  const int h = a.height(), w = a.width();
  std::vector<float> acc(static_cast<std::size_t>(h) * w, 0.0f);
  for (int n = 0; n < cfg.scales; ++n) {
    const int factor = 1 << n;
    const GrayImage pa = factor == 1 ? ga : avg_pool(ga, factor);
    const GrayImage pb = factor == 1 ? gb : avg_pool(gb, factor);
    if (pa.height() < 3 || pa.width() < 3)
      throw DimensionError("image too small for the requested number of MSGMS scales");
    const GrayImage sim = upscale_nearest(gms_map(grad_magnitude(pa), grad_magnitude(pb), cfg.c), h, w);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += sim.data()[i];
  }
  GrayImage d(h, w);
  for (std::size_t i = 0; i < acc.size(); ++i)
    d.data()[i] = std::clamp(1.0f - acc[i] / static_cast<float>(cfg.scales), 0.0f, 1.0f);
  return DistanceMap{std::move(d)};
}

double msgms_loss(const Image& a, const Image& b, const MetricConfig& cfg) {
  const DistanceMap d = msgms_distance(a, b, cfg);
  double sum = 0.0;
  for (float v : d.values.data()) sum += v;
  return sum / static_cast<double>(d.values.size());
}

GrayImage ssim_map(const Image& a, const Image& b, const MetricConfig& cfg) {
  require_same_dims(a, b);
  cfg.validate();
  const std::vector<float> window = gaussian_window(cfg.ssim_window, static_cast<float>(cfg.ssim_sigma));
  const float c1 = static_cast<float>(cfg.ssim_k1 * cfg.ssim_k1);
  const float c2 = static_cast<float>(cfg.ssim_k2 * cfg.ssim_k2);
  const int h = a.height(), w = a.width();
  GrayImage out(h, w);
  for (int ch = 0; ch < a.channels(); ++ch) {
    const GrayImage x = a.channel(ch), y = b.channel(ch);
    GrayImage xx(h, w), yy(h, w), xy(h, w);
    for (std::size_t i = 0; i < x.size(); ++i) {
      xx.data()[i] = x.data()[i] * x.data()[i];
      yy.data()[i] = y.data()[i] * y.data()[i];
      xy.data()[i] = x.data()[i] * y.data()[i];
    }
    const GrayImage mx = separable_filter(x, window), my = separable_filter(y, window);
    const GrayImage exx = separable_filter(xx, window), eyy = separable_filter(yy, window),
                    exy = separable_filter(xy, window);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const float ux = mx.data()[i], uy = my.data()[i];
      const float vx = exx.data()[i] - ux * ux, vy = eyy.data()[i] - uy * uy;
      const float cov = exy.data()[i] - ux * uy;
      const float s = ((2.0f * ux * uy + c1) * (2.0f * cov + c2)) /
                      ((ux * ux + uy * uy + c1) * (vx + vy + c2));
      out.data()[i] += s / static_cast<float>(a.channels());
    }
  }
  return out;
}

double ssim_loss(const Image& a, const Image& b, const MetricConfig& cfg) {
  const GrayImage s = ssim_map(a, b, cfg);
  double sum = 0.0;
  for (float v : s.data()) sum += v;
  return std::clamp(1.0 - sum / static_cast<double>(s.size()), 0.0, 1.0);
}

double l2_loss(const Image& a, const Image& b) {
  require_same_dims(a, b);
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.data()[i]) - b.data()[i];
    sum += d * d;
  }
  return sum / static_cast<double>(a.size());
}

double combined_loss(const Image& a, const Image& b, const LossWeights& w, const MetricConfig& cfg) {
  w.validate();
  double total = 0.0;
  if (w.l2 > 0.0) total += w.l2 * l2_loss(a, b);
  if (w.ssim > 0.0) total += w.ssim * ssim_loss(a, b, cfg);
  if (w.msgms > 0.0) total += w.msgms * msgms_loss(a, b, cfg);
  return total / w.sum();
}

double lamp(double l, double eps) {
  if (!(l >= 0.0)) throw ValueError("LAMP input must be non-negative");
  return -std::log(1.0 - std::min(l, 1.0 - eps));
}

double anomaly_score(const DistanceMap& d, const MetricConfig& cfg) {
  if (d.values.empty()) throw DimensionError("distance map is empty");
  const int r = cfg.score_smooth_radius;
  if (r < 0) throw ValueError("score smoothing radius must be >= 0");
  if (r == 0) return *std::max_element(d.values.data().begin(), d.values.data().end());
  const std::vector<float> box(static_cast<std::size_t>(2 * r + 1), 1.0f / static_cast<float>(2 * r + 1));
  const GrayImage smoothed = separable_filter(d.values, box);
  return *std::max_element(smoothed.data().begin(), smoothed.data().end());
}

double auroc(std::span<const double> normal_scores, std::span<const double> anomaly_scores) {
  if (normal_scores.empty() || anomaly_scores.empty())
    throw ValueError("AUROC needs at least one score in each class");
  std::vector<double> normals(normal_scores.begin(), normal_scores.end());
  std::sort(normals.begin(), normals.end());
  // Twice the Mann-Whitney U statistic as an integer.
  std::uint64_t twice_u = 0;
  for (double s : anomaly_scores) {
    const auto [lo, hi] = std::equal_range(normals.begin(), normals.end(), s);
    twice_u += 2 * static_cast<std::uint64_t>(lo - normals.begin()) + static_cast<std::uint64_t>(hi - lo);
  }
  return static_cast<double>(twice_u) /
         (2.0 * static_cast<double>(normals.size()) * static_cast<double>(anomaly_scores.size()));
}

}  // namespace ear

/**
 * @file metrics.hpp
 * @brief Reconstruction losses, the MSGMS distance map, anomaly score and AUROC.
 *
 * These are the plain (non-differentiable) evaluations used for scoring and as
 * the reference for the differentiable versions in reconnet.
 */
#pragma once

#include <span>

#include "ear/image.hpp"

namespace ear {

struct MetricConfig {
  int scales = 3;
  double c = 0.0026;
  int ssim_window = 11;
  double ssim_sigma = 1.5;
  double ssim_k1 = 0.01;
  double ssim_k2 = 0.03;
  double lamp_epsilon = 1e-6;
  int score_smooth_radius = 0;

  void validate() const;
};

struct LossWeights {
  double l2 = 1.0;
  double ssim = 1.0;
  double msgms = 1.0;

  void validate() const;
  double sum() const { return l2 + ssim + msgms; }
};

/// Per-pixel MSGMS dissimilarity in [0,1].
struct DistanceMap {
  GrayImage values;

  int height() const { return values.height(); }
  int width() const { return values.width(); }
};

GrayImage grad_magnitude(const GrayImage& img);

/// (2 a b + c) / (a^2 + b^2 + c) on two gradient-magnitude fields.
GrayImage gms_map(const GrayImage& grad_a, const GrayImage& grad_b, double c);

DistanceMap msgms_distance(const Image& a, const Image& b, const MetricConfig& cfg);
double msgms_loss(const Image& a, const Image& b, const MetricConfig& cfg);

/// Per-channel windowed SSIM map averaged over channels.
GrayImage ssim_map(const Image& a, const Image& b, const MetricConfig& cfg);
double ssim_loss(const Image& a, const Image& b, const MetricConfig& cfg);
double l2_loss(const Image& a, const Image& b);

double combined_loss(const Image& a, const Image& b, const LossWeights& w, const MetricConfig& cfg);

/// -log(1 - min(l, 1 - eps)); l must be non-negative.
double lamp(double l, double eps);

/// Max of the (optionally box-smoothed) distance map.
double anomaly_score(const DistanceMap& d, const MetricConfig& cfg);

/// Probability that an anomalous score outranks a normal one, ties counted half.
double auroc(std::span<const double> normal_scores, std::span<const double> anomaly_scores);

}  // namespace ear

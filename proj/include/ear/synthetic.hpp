#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "ear/image.hpp"

namespace ear {

enum class DefectKind { none, stripe, hole };

/// Textured disc on a dark noisy background, the toy product used for desk-scale experiments.
struct SyntheticOptions {
  int size = 64;
  int train_count = 40;
  int normal_count = 20;
  int anomalous_count = 20;
  double disc_radius = 20.0;
  /// Period of the sinusoidal surface texture, in pixels.
  double texture_period = 8.0;
  double texture_amplitude = 0.2;
  double noise_sigma = 0.02;
  std::uint64_t seed = 1;
};

Image synthesize_disc(const SyntheticOptions& opt, DefectKind defect, std::uint64_t image_seed);

/// Writes <root>/<category>/{train/good, test/good, test/stripe, test/hole}. Anomalous images
/// alternate stripe and hole. Returns the category directory.
std::filesystem::path write_synthetic_dataset(const std::filesystem::path& root, const std::string& category,
                                              const SyntheticOptions& opt);

}  // namespace ear

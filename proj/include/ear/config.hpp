/**
 * @file config.hpp
 * @brief Experiment configuration loaded from a TOML file.
 *
 * The reader covers the subset the experiment files use: [tables] and
 * [dotted.tables], bare or quoted keys, strings, integers, floats, booleans
 * and (possibly multi-line) arrays of those. Inline tables and dates are rejected.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ear/metrics.hpp"
#include "ear/reconnet.hpp"
#include "ear/scalest.hpp"

namespace ear {

/// Parse TOML text into a JSON object tree.
nlohmann::json parse_toml(const std::string& text);

enum class ScaleMode { estimate, fixed, grid };

std::string to_string(ScaleMode mode);
ScaleMode parse_scale_mode(const std::string& text);

struct ExperimentConfig {
  std::uint64_t seed = 0;

  std::filesystem::path data_root;
  std::string category;
  CategoryKind kind = CategoryKind::objects;
  std::optional<std::filesystem::path> attention_dir;
  int resolution = 256;

  // Hyperparameter grid; every combination is one run.
  std::vector<int> kernels = {3};
  std::vector<double> learning_rates = {1e-3};
  std::vector<nn::Schedule> schedules = {nn::Schedule::fixed};
  nn::TrainConfig train;

  MetricConfig metric;
  LossWeights weights;
  nn::AblationFlags ablation;

  ScaleMode scale_mode = ScaleMode::estimate;
  int fixed_scale = 8;
  float presmooth_sigma = kDefaultPresmoothSigma;
  std::optional<std::filesystem::path> scale_model;
  std::vector<int> scale_candidates = {2, 4, 8, 16, 32, 64};

  std::filesystem::path output_dir = "runs";

  /// Every combination of the grid as a concrete TrainConfig, in kernel-lr-schedule order.
  std::vector<nn::TrainConfig> expand_grid() const;
  void validate() const;
};

/// Relative paths resolve against base_dir.
ExperimentConfig parse_experiment_config(const std::string& toml_text, const std::filesystem::path& base_dir);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// EAR_SEED, when set, replaces the configured seed.
void apply_env_overrides(ExperimentConfig& cfg);

}  // namespace ear

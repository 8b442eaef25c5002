/**
 * @file experiment.hpp
 * @brief Experiment orchestration: training over the hyperparameter grid, test scoring,
 *        checkpoint evaluation, JSON-lines reports and heatmaps.
 *
 * Report lines are JSON objects. Fields named "wall_clock_s" carry timing and are the only
 * non-reproducible content; strip_timing() removes them for comparisons.
 */
#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ear/config.hpp"
#include "ear/dataset.hpp"
#include "ear/metrics.hpp"
#include "ear/reconnet.hpp"

namespace ear {

/// Built-in per-category regression used when no scale model file is configured.
ScaleModel default_scale_model(CategoryKind kind);

/// Reads a model file written by `ear fit-scale-model` and picks the entry for `kind`.
ScaleModel load_scale_model(const std::filesystem::path& path, CategoryKind kind);

struct ImageScore {
  double score = 0.0;
  DistanceMap distance;
  Image reconstruction;
};

/// Corrupts, reconstructs and scores one prepared image.
ImageScore score_image(nn::ReconNet<float>& net, const PreparedImage& item, MosaicScale scale,
                       const nn::AblationFlags& flags, const MetricConfig& metric);

struct RunRecord {
  int run_id = 0;
  nn::TrainConfig train;
  int mosaic_scale = 2;
  std::string scale_source;
  double auroc = 0.0;
  std::vector<double> epoch_losses;
  double train_score_max = 0.0;
  double anomalous_score_max = 0.0;
  double wall_clock_s = 0.0;
};

struct ExperimentReport {
  std::string category;
  std::uint64_t seed = 0;
  nn::AblationFlags ablation;
  ScaleMode scale_mode = ScaleMode::estimate;
  std::optional<double> r10;
  std::optional<ScaleModel> scale_model;
  std::optional<int> estimated_scale;
  std::optional<int> best_grid_scale;
  std::map<int, double> auroc_by_scale;
  std::vector<RunRecord> runs;
  int best_run = 0;
  int attention_fallbacks = 0;
  int attention_missing_warnings = 0;
  double wall_clock_s = 0.0;

  const RunRecord& best() const { return runs.at(static_cast<std::size_t>(best_run)); }
};

struct ExperimentOutcome {
  ExperimentReport report;
  nn::Checkpoint best_checkpoint;
};

using ProgressSink = std::function<void(const std::string&)>;

/// Trains every grid configuration (times every candidate scale in grid mode), scores the test split
/// and keeps the best run. Ties keep the earlier run, which in grid mode is the smaller scale.
ExperimentOutcome run_experiment(const ExperimentConfig& cfg, const DatasetSpec& spec,
                                 const ProgressSink& progress = {});

/// One JSON object per run, then a summary object.
std::vector<nlohmann::json> report_lines(const ExperimentReport& report);
std::string to_jsonl(const std::vector<nlohmann::json>& lines);

/// Recursively drops every "wall_clock_s" key.
nlohmann::json strip_timing(nlohmann::json j);

struct EvalEntry {
  std::string relative;
  Label label = Label::normal;
  double score = 0.0;
};

struct EvalResult {
  std::vector<EvalEntry> entries;
  double auroc = 0.0;
  int attention_fallbacks = 0;
  double wall_clock_s = 0.0;
};

EvalResult evaluate_checkpoint(const nn::Checkpoint& ckpt, const DatasetSpec& spec);
std::vector<nlohmann::json> eval_lines(const EvalResult& result, const DatasetSpec& spec);

/// Rebuilds the network held by a checkpoint.
nn::ReconNet<float> network_from_checkpoint(const nn::Checkpoint& ckpt);

/// Blend of the image with red through a 256-entry alpha table: D=0 leaves the pixel unchanged,
/// D=1 gives pure red. Gray images are expanded to RGB.
Image heatmap_image(const Image& img, const DistanceMap& d);
void emit_heatmap(const Image& img, const DistanceMap& d, const std::filesystem::path& path);

}  // namespace ear

#include "ear/experiment.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "ear/error.hpp"
#include "ear/json_io.hpp"

namespace ear {

using nlohmann::json;
namespace fs = std::filesystem;

ScaleModel default_scale_model(CategoryKind kind) {
  // Least-squares fit of grid-search optima over synthetic disc products with
  // periods {4,6,8,12,16,24} (tools/calibrate_scale_model.sh, 20 epochs).
  constexpr double kSlope = -0.07065265730342388;
  constexpr double kIntercept = 29.28448624129387;
  // TODO(textures): add a tiled-texture generator to synth and fit a separate texture row.
  return ScaleModel{kSlope, kIntercept, kind};
}

ScaleModel load_scale_model(const fs::path& path, CategoryKind kind) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scale model " + path.string());
  json doc;
  try {
    in >> doc;
    const json models = doc.contains("models") ? doc.at("models") : json::array({doc});
    for (const auto& entry : models) {
      const auto model = entry.get<ScaleModel>();
      if (model.category == kind) return model;
    }
  } catch (const json::exception& e) {
    throw FormatError("malformed scale model " + path.string() + ": " + e.what());
  }
  throw ValueError("scale model " + path.string() + " has no entry for category " + to_string(kind));
}

ImageScore score_image(nn::ReconNet<float>& net, const PreparedImage& item, MosaicScale scale,
                       const nn::AblationFlags& flags, const MetricConfig& metric) {
  ImageScore out;
  out.reconstruction = nn::reconstruct(net, nn::corrupt_input(item.image, item.mask, scale, flags));
  out.distance = msgms_distance(item.image, out.reconstruction, metric);
  out.score = anomaly_score(out.distance, metric);
  return out;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

Image match_channels(const Image& img, int channels) {
  if (img.channels() == channels) return img;
  if (channels == 1) return from_gray(to_gray(img));
  const GrayImage g = img.channel(0);
  Image out(img.height(), img.width(), 3);
  for (int c = 0; c < 3; ++c) out.set_channel(c, g);
  return out;
}

struct PreparedSplit {
  std::vector<PreparedImage> items;
  int fallbacks = 0;
  int missing = 0;
};

PreparedSplit prepare_split(const DatasetSpec& spec, const std::vector<Sample>& samples, int resolution,
                            int channels) {
  PreparedSplit out;
  for (const auto& s : samples) {
    const auto attn = attention_path(spec, s);
    PreparedImage item = prepare_image(s.path, attn, resolution);
    if (channels > 0) item.image = match_channels(item.image, channels);
    if (item.used_fallback) {
      ++out.fallbacks;
      if (attn) ++out.missing;
    }
    out.items.push_back(std::move(item));
  }
  return out;
}

void check_divisible(const PreparedImage& item, const nn::ReconNetConfig& net) {
  const int d = net.divisor();
  if (item.image.height() % d != 0 || item.image.width() % d != 0)
    throw DimensionError("image size " + std::to_string(item.image.height()) + "x" +
                         std::to_string(item.image.width()) + " is not divisible by " + std::to_string(d) +
                         "; set data.resolution");
}

struct SplitScores {
  std::vector<double> normal;
  std::vector<double> anomalous;
  std::vector<double> all;
};

SplitScores score_split(nn::ReconNet<float>& net, const std::vector<PreparedImage>& items,
                        const std::vector<Sample>& samples, MosaicScale scale, const nn::AblationFlags& flags,
                        const MetricConfig& metric) {
  SplitScores out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const double s = score_image(net, items[i], scale, flags, metric).score;
    out.all.push_back(s);
    (samples[i].label == Label::normal ? out.normal : out.anomalous).push_back(s);
  }
  return out;
}

nn::ReconNetConfig net_config_for(const nn::TrainConfig& tc, int channels) {
  nn::ReconNetConfig nc;
  nc.in_channels = channels;
  nc.base_width = tc.base_width;
  nc.kernel = tc.kernel;
  nc.validate();
  return nc;
}

json train_json(const nn::TrainConfig& tc) { return json(tc); }

}  // namespace

ExperimentOutcome run_experiment(const ExperimentConfig& cfg, const DatasetSpec& spec, const ProgressSink& progress) {
  cfg.validate();
  const auto start = Clock::now();
  auto say = [&](const std::string& msg) {
    if (progress) progress(msg);
  };

  ExperimentOutcome outcome;
  ExperimentReport& report = outcome.report;
  report.category = spec.category;
  report.seed = cfg.seed;
  report.ablation = cfg.ablation;
  report.scale_mode = cfg.scale_mode;

  PreparedSplit train_split = prepare_split(spec, spec.train, cfg.resolution, 0);
  const int channels = train_split.items.front().image.channels();
  for (auto& item : train_split.items) item.image = match_channels(item.image, channels);
  PreparedSplit test_split = prepare_split(spec, spec.test, cfg.resolution, channels);
  report.attention_fallbacks = train_split.fallbacks + test_split.fallbacks;
  report.attention_missing_warnings = train_split.missing + test_split.missing;
  if (report.attention_missing_warnings > 0)
    say("warning: " + std::to_string(report.attention_missing_warnings) +
        " images have no attention file and use the fallback saliency");

  std::vector<nn::TrainingExample> examples;
  examples.reserve(train_split.items.size());
  for (const auto& item : train_split.items) examples.push_back({item.image, item.mask});

  std::vector<int> scales;
  std::string source = to_string(cfg.scale_mode);
  switch (cfg.scale_mode) {
    case ScaleMode::fixed:
      scales = {MosaicScale{cfg.fixed_scale}.value()};
      break;
    case ScaleMode::estimate: {
      std::vector<MaskedImage> masked;
      for (const auto& item : train_split.items) masked.push_back({&item.image, &item.mask});
      const double r = product_r10(masked, cfg.presmooth_sigma);
      const ScaleModel model = cfg.scale_model ? load_scale_model(*cfg.scale_model, spec.kind)
                                               : default_scale_model(spec.kind);
      const int m = estimate_scale(model, r).value();
      report.r10 = r;
      report.scale_model = model;
      report.estimated_scale = m;
      scales = {m};
      std::ostringstream msg;
      msg << "r10 = " << r << ", estimated mosaic scale = " << m;
      say(msg.str());
      break;
    }
    case ScaleMode::grid:
      scales = cfg.scale_candidates;
      break;
  }

  double best_auroc = -1.0;
  int run_id = 0;

  auto run_one = [&](const nn::TrainConfig& tc, MosaicScale scale) {
    const auto run_start = Clock::now();
    const nn::ReconNetConfig nc = net_config_for(tc, channels);
    check_divisible(train_split.items.front(), nc);
    nn::ReconNet<float> net(nc, tc.seed);
    const nn::TrainResult tr = nn::train(net, examples, scale, tc, cfg.metric, cfg.weights, cfg.ablation);
    const SplitScores test = score_split(net, test_split.items, spec.test, scale, cfg.ablation, cfg.metric);
    const SplitScores train = score_split(net, train_split.items, spec.train, scale, cfg.ablation, cfg.metric);

    RunRecord rec;
    rec.run_id = run_id++;
    rec.train = tc;
    rec.mosaic_scale = scale.value();
    rec.scale_source = source;
    rec.auroc = auroc(test.normal, test.anomalous);
    rec.epoch_losses = tr.epoch_losses;
    rec.train_score_max = *std::max_element(train.all.begin(), train.all.end());
    rec.anomalous_score_max = *std::max_element(test.anomalous.begin(), test.anomalous.end());
    rec.wall_clock_s = seconds_since(run_start);

    if (rec.auroc > best_auroc) {
      best_auroc = rec.auroc;
      report.best_run = rec.run_id;
      nn::Checkpoint& ck = outcome.best_checkpoint;
      ck.net = nc;
      ck.train = tc;
      ck.metric = cfg.metric;
      ck.weights = cfg.weights;
      ck.ablation = cfg.ablation;
      ck.mosaic_scale = scale.value();
      ck.resolution = cfg.resolution;
      ck.tensors = net.state();
    }
    std::ostringstream msg;
    msg << "run " << rec.run_id << ": kernel=" << tc.kernel << " lr=" << tc.lr
        << " schedule=" << nn::to_string(tc.schedule) << " m=" << scale.value() << " auroc=" << rec.auroc
        << " (" << rec.wall_clock_s << " s)";
    say(msg.str());
    report.runs.push_back(std::move(rec));
    return report.runs.back().auroc;
  };

  std::optional<double> best_grid_auroc;
  for (const nn::TrainConfig& tc : cfg.expand_grid()) {
    if (cfg.scale_mode == ScaleMode::grid) {
      const GridSearchResult gs = grid_search_scale(scales, [&](MosaicScale m) { return run_one(tc, m); });
      const double top = gs.auroc_by_scale.at(gs.best.value());
      if (!best_grid_auroc || top > *best_grid_auroc) {
        best_grid_auroc = top;
        report.best_grid_scale = gs.best.value();
        report.auroc_by_scale = gs.auroc_by_scale;
      }
    } else {
      run_one(tc, MosaicScale{scales.front()});
    }
  }
  report.wall_clock_s = seconds_since(start);
  return outcome;
}

std::vector<json> report_lines(const ExperimentReport& report) {
  std::vector<json> lines;
  for (const auto& r : report.runs) {
    lines.push_back(json{{"type", "run"},
                         {"run_id", r.run_id},
                         {"train", train_json(r.train)},
                         {"mosaic_scale", r.mosaic_scale},
                         {"scale_source", r.scale_source},
                         {"auroc", r.auroc},
                         {"epoch_losses", r.epoch_losses},
                         {"train_score_max", r.train_score_max},
                         {"anomalous_score_max", r.anomalous_score_max},
                         {"wall_clock_s", r.wall_clock_s}});
  }
  json summary{{"type", "summary"},
               {"category", report.category},
               {"seed", report.seed},
               {"ablation", report.ablation},
               {"scale_mode", to_string(report.scale_mode)},
               {"runs", report.runs.size()},
               {"attention_fallbacks", report.attention_fallbacks},
               {"attention_missing_warnings", report.attention_missing_warnings},
               {"wall_clock_s", report.wall_clock_s}};
  if (report.r10) summary["r10"] = *report.r10;
  if (report.scale_model) summary["scale_model"] = *report.scale_model;
  if (report.estimated_scale) summary["estimated_scale"] = *report.estimated_scale;
  if (report.best_grid_scale) summary["best_grid_scale"] = *report.best_grid_scale;
  if (!report.auroc_by_scale.empty()) {
    json table = json::object();
    for (const auto& [m, a] : report.auroc_by_scale) table[std::to_string(m)] = a;
    summary["auroc_by_scale"] = table;
  }
  if (!report.runs.empty()) {
    const RunRecord& best = report.best();
    summary["best_run"] = best.run_id;
    summary["best_auroc"] = best.auroc;
    summary["best_train"] = train_json(best.train);
    summary["best_mosaic_scale"] = best.mosaic_scale;
  }
  lines.push_back(std::move(summary));
  return lines;
}

std::string to_jsonl(const std::vector<json>& lines) {
  std::string out;
  for (const auto& l : lines) out += l.dump() + "\n";
  return out;
}

json strip_timing(json j) {
  if (j.is_object()) {
    j.erase("wall_clock_s");
    for (auto& [key, value] : j.items()) value = strip_timing(value);
  } else if (j.is_array()) {
    for (auto& value : j) value = strip_timing(value);
  }
  return j;
}

nn::ReconNet<float> network_from_checkpoint(const nn::Checkpoint& ckpt) {
  nn::ReconNet<float> net(ckpt.net, 0);
  net.load_state(ckpt.tensors);
  return net;
}

EvalResult evaluate_checkpoint(const nn::Checkpoint& ckpt, const DatasetSpec& spec) {
  const auto start = Clock::now();
  nn::ReconNet<float> net = network_from_checkpoint(ckpt);
  const PreparedSplit test = prepare_split(spec, spec.test, ckpt.resolution, ckpt.net.in_channels);
  EvalResult result;
  result.attention_fallbacks = test.fallbacks;
  std::vector<double> normal, anomalous;
  const MosaicScale scale{ckpt.mosaic_scale};
  for (std::size_t i = 0; i < test.items.size(); ++i) {
    check_divisible(test.items[i], ckpt.net);
    const double s = score_image(net, test.items[i], scale, ckpt.ablation, ckpt.metric).score;
    result.entries.push_back({spec.test[i].relative, spec.test[i].label, s});
    (spec.test[i].label == Label::normal ? normal : anomalous).push_back(s);
  }
  result.auroc = auroc(normal, anomalous);
  result.wall_clock_s = seconds_since(start);
  return result;
}

std::vector<json> eval_lines(const EvalResult& result, const DatasetSpec& spec) {
  std::vector<json> lines;
  for (const auto& e : result.entries)
    lines.push_back(json{{"type", "image"}, {"path", e.relative}, {"label", to_string(e.label)}, {"score", e.score}});
  lines.push_back(json{{"type", "eval"},
                       {"category", spec.category},
                       {"normal", spec.count(Label::normal)},
                       {"anomalous", spec.count(Label::anomalous)},
                       {"auroc", result.auroc},
                       {"attention_fallbacks", result.attention_fallbacks},
                       {"wall_clock_s", result.wall_clock_s}});
  return lines;
}

namespace {

const std::array<float, 256>& alpha_table() {
  static const std::array<float, 256> table = [] {
    std::array<float, 256> t{};
    for (int i = 0; i < 256; ++i) t[i] = static_cast<float>(i) / 255.0f;
    return t;
  }();
  return table;
}

}  // namespace

Image heatmap_image(const Image& img, const DistanceMap& d) {
  if (img.height() != d.height() || img.width() != d.width())
    throw DimensionError("heatmap: image and distance map sizes differ");
  const auto& table = alpha_table();
  const float red[3] = {1.0f, 0.0f, 0.0f};
  Image out(img.height(), img.width(), 3);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const float v = std::clamp(d.values.at(y, x), 0.0f, 1.0f);
      const float a = table[static_cast<std::size_t>(std::lround(v * 255.0f))];
      for (int c = 0; c < 3; ++c) {
        const float base = img.at(y, x, img.channels() == 1 ? 0 : c);
        out.at(y, x, c) = a == 0.0f ? base : a == 1.0f ? red[c] : (1.0f - a) * base + a * red[c];
      }
    }
  }
  return out;
}

void emit_heatmap(const Image& img, const DistanceMap& d, const fs::path& path) {
  save_image(heatmap_image(img, d), path);
}

}  // namespace ear

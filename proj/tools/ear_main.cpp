#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ear/config.hpp"
#include "ear/dataset.hpp"
#include "ear/error.hpp"
#include "ear/experiment.hpp"
#include "ear/gradcheck.hpp"
#include "ear/json_io.hpp"
#include "ear/obfuscate.hpp"
#include "ear/synthetic.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// A category directory such as data/bottle splits into root data and category bottle.
ear::DatasetSpec scan_category_dir(const fs::path& dir, ear::CategoryKind kind, const std::string& attn) {
  const fs::path clean = fs::weakly_canonical(dir);
  std::optional<fs::path> attn_dir;
  if (!attn.empty()) attn_dir = fs::path(attn);
  return ear::scan_dataset(clean.parent_path(), clean.filename().string(), kind, attn_dir);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ear::IoError("cannot write " + path.string());
  out << text;
  if (!out) throw ear::IoError("failed writing " + path.string());
}

void progress(const std::string& msg) { std::cerr << msg << std::endl; }

int cmd_estimate_scale(const std::string& data, const std::string& attn, float sigma, const std::string& model_path,
                       const std::string& kind_text, int resolution) {
  const auto kind = ear::parse_category_kind(kind_text);
  const auto spec = scan_category_dir(data, kind, attn);
  std::vector<ear::PreparedImage> items;
  for (const auto& s : spec.train) items.push_back(ear::prepare_image(s.path, ear::attention_path(spec, s), resolution));
  std::vector<ear::MaskedImage> masked;
  for (const auto& item : items) masked.push_back({&item.image, &item.mask});
  const double r = ear::product_r10(masked, sigma);
  const ear::ScaleModel model =
      model_path.empty() ? ear::default_scale_model(kind) : ear::load_scale_model(model_path, kind);
  const int m = ear::estimate_scale(model, r).value();
  std::cout << json{{"r10", r}, {"estimated_scale", m}, {"prediction", model.predict(r)}, {"model", model}}.dump()
            << "\n";
  return 0;
}

int cmd_fit_scale_model(const std::string& pairs_path, const std::string& out_path) {
  std::ifstream in(pairs_path);
  if (!in) throw ear::IoError("cannot open " + pairs_path);
  std::map<ear::CategoryKind, std::vector<ear::ScalePair>> by_kind;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (line_no == 1 && !fields.empty() && fields[0] == "product") continue;
    if (fields.size() != 4) throw ear::FormatError("line " + std::to_string(line_no) + ": expected 4 fields");
    try {
      by_kind[ear::parse_category_kind(fields[1])].push_back({std::stod(fields[2]), std::stoi(fields[3])});
    } catch (const std::invalid_argument&) {
      throw ear::FormatError("line " + std::to_string(line_no) + ": non-numeric r10 or mStar");
    }
  }
  if (by_kind.empty()) throw ear::ValueError("no (r10, mStar) pairs in " + pairs_path);
  json models = json::array();
  for (const auto& [kind, pairs] : by_kind) models.push_back(ear::fit_scale_model(pairs, kind));
  const json doc{{"models", models}};
  write_text(out_path, doc.dump(2) + "\n");
  std::cout << doc.dump() << "\n";
  return 0;
}

int cmd_preprocess(const std::string& image, const std::string& attn, int scale, const std::string& out_dir,
                   int resolution) {
  std::optional<fs::path> attn_file;
  if (!attn.empty()) {
    if (!fs::is_regular_file(attn)) throw ear::IoError("attention file not found: " + attn);
    attn_file = fs::path(attn);
  }
  const auto item = ear::prepare_image(image, attn_file, resolution);
  const ear::Image hinted = ear::compose_hint(item.image, ear::MosaicScale{scale}, item.mask);
  fs::create_directories(out_dir);
  const std::string stem = fs::path(image).stem().string();
  ear::save_image(hinted, fs::path(out_dir) / (stem + "_hint.png"));
  ear::save_image(item.mask.as_gray(), fs::path(out_dir) / (stem + "_mask.png"));
  std::cout << json{{"image", image},
                    {"hint", (fs::path(out_dir) / (stem + "_hint.png")).string()},
                    {"mask", (fs::path(out_dir) / (stem + "_mask.png")).string()},
                    {"masked_fraction", static_cast<double>(item.mask.count()) /
                                            (static_cast<double>(item.mask.height()) * item.mask.width())},
                    {"used_fallback", item.used_fallback}}
                   .dump()
            << "\n";
  return 0;
}

ear::ExperimentConfig load_config(const std::string& path, const std::string& out_override) {
  ear::ExperimentConfig cfg = ear::load_experiment_config(path);
  ear::apply_env_overrides(cfg);
  if (!out_override.empty()) cfg.output_dir = out_override;
  return cfg;
}

ear::DatasetSpec spec_for(const ear::ExperimentConfig& cfg) {
  return ear::scan_dataset(cfg.data_root, cfg.category, cfg.kind, cfg.attention_dir);
}

int cmd_train(const std::string& config_path, const std::string& out_override) {
  const auto cfg = load_config(config_path, out_override);
  const auto outcome = ear::run_experiment(cfg, spec_for(cfg), progress);
  const std::string report = ear::to_jsonl(ear::report_lines(outcome.report));
  write_text(cfg.output_dir / "report.jsonl", report);
  ear::nn::save_checkpoint(outcome.best_checkpoint, cfg.output_dir / "best.ckpt");
  std::cout << report;
  return 0;
}

int cmd_grid_search(const std::string& config_path, const std::string& out_override) {
  auto cfg = load_config(config_path, out_override);
  cfg.scale_mode = ear::ScaleMode::grid;
  const auto outcome = ear::run_experiment(cfg, spec_for(cfg), progress);
  const std::string report = ear::to_jsonl(ear::report_lines(outcome.report));
  write_text(cfg.output_dir / "grid_report.jsonl", report);
  std::cout << report;
  return 0;
}

int cmd_score(const std::string& ckpt_path, const std::string& image, const std::string& attn,
              const std::string& heatmap) {
  const auto ckpt = ear::nn::load_checkpoint(ckpt_path);
  auto net = ear::network_from_checkpoint(ckpt);
  std::optional<fs::path> attn_file;
  if (!attn.empty()) attn_file = fs::path(attn);
  auto item = ear::prepare_image(image, attn_file, ckpt.resolution);
  if (item.image.channels() != ckpt.net.in_channels) {
    if (ckpt.net.in_channels == 1) {
      item.image = ear::from_gray(ear::to_gray(item.image));
    } else {
      const auto g = item.image.channel(0);
      ear::Image rgb(item.image.height(), item.image.width(), 3);
      for (int c = 0; c < 3; ++c) rgb.set_channel(c, g);
      item.image = rgb;
    }
  }
  const auto scored = ear::score_image(net, item, ear::MosaicScale{ckpt.mosaic_scale}, ckpt.ablation, ckpt.metric);
  if (!heatmap.empty()) ear::emit_heatmap(item.image, scored.distance, heatmap);
  std::cout << json{{"path", image}, {"score", scored.score}}.dump() << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data, const std::string& attn, const std::string& out) {
  const auto ckpt = ear::nn::load_checkpoint(ckpt_path);
  const auto spec = scan_category_dir(data, ear::CategoryKind::objects, attn);
  const auto result = ear::evaluate_checkpoint(ckpt, spec);
  const std::string text = ear::to_jsonl(ear::eval_lines(result, spec));
  if (!out.empty()) write_text(out, text);
  std::cout << text;
  return 0;
}

int cmd_gradcheck(int configurations, std::uint64_t seed) {
  const auto report = ear::nn::run_gradcheck(configurations, seed);
  for (const auto& c : report.worst_per_op())
    std::cout << json{{"op", c.op}, {"max_rel_error", c.max_rel_error}, {"tolerance", c.tolerance},
                      {"passed", c.passed()}}
                     .dump()
              << "\n";
  std::cout << json{{"configurations", report.configurations}, {"cases", report.cases.size()},
                    {"passed", report.passed()}}
                   .dump()
            << "\n";
  return report.passed() ? 0 : 1;
}

int cmd_synth(const std::string& out, const std::string& category, ear::SyntheticOptions opt) {
  const auto dir = ear::write_synthetic_dataset(out, category, opt);
  std::cout << json{{"dataset", dir.string()}, {"train", opt.train_count}, {"normal", opt.normal_count},
                    {"anomalous", opt.anomalous_count}}
                   .dump()
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Excision-and-recovery anomaly detection"};
  app.require_subcommand(1);

  std::string data, attn, model, kind = "objects", pairs, out, image, config, ckpt, heatmap, out_dir, category = "disc";
  float sigma = ear::kDefaultPresmoothSigma;
  int resolution = 0, scale = 8, configurations = 20;
  std::uint64_t seed = 1;
  ear::SyntheticOptions synth;

  auto* est = app.add_subcommand("estimate-scale", "Print the product r10 and the estimated mosaic scale");
  est->add_option("--data", data, "Category directory (contains train/good)")->required();
  est->add_option("--attn", attn, "Attention directory mirroring the category layout");
  est->add_option("--sigma", sigma, "Gaussian pre-smoothing before the Hessian")->capture_default_str();
  est->add_option("--model", model, "Scale model JSON from fit-scale-model");
  est->add_option("--kind", kind, "objects or textures")->capture_default_str();
  est->add_option("--resolution", resolution, "Working resolution, 0 keeps the native size")->capture_default_str();

  auto* fit = app.add_subcommand("fit-scale-model", "Fit m* = a * r10 + b per category from a CSV");
  fit->add_option("--pairs", pairs, "CSV with product,category,r10,mStar")->required();
  fit->add_option("--out", out, "Output JSON")->required();

  auto* pre = app.add_subcommand("preprocess", "Write the hinted input and the saliency mask");
  pre->add_option("--image", image)->required();
  pre->add_option("--attn", attn, "EARATTN1 file; fallback saliency when omitted");
  pre->add_option("--scale", scale)->required();
  pre->add_option("--out-dir", out_dir)->required();
  pre->add_option("--resolution", resolution)->capture_default_str();

  auto* tr = app.add_subcommand("train", "Run the configured experiment and keep the best checkpoint");
  tr->add_option("--config", config)->required();
  tr->add_option("--out", out_dir, "Override the output directory");

  auto* sc = app.add_subcommand("score", "Anomaly score of one image");
  sc->add_option("--ckpt", ckpt)->required();
  sc->add_option("--image", image)->required();
  sc->add_option("--attn", attn);
  sc->add_option("--heatmap", heatmap, "Write a heatmap PNG");

  auto* ev = app.add_subcommand("eval", "Score a test split and report AUROC");
  ev->add_option("--ckpt", ckpt)->required();
  ev->add_option("--data", data, "Category directory (contains test/)")->required();
  ev->add_option("--attn", attn);
  ev->add_option("--out", out, "Also write the report to this file");

  auto* gs = app.add_subcommand("grid-search-mosaic", "Train once per candidate scale and pick m*");
  gs->add_option("--config", config)->required();
  gs->add_option("--out", out_dir, "Override the output directory");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");
  gc->add_option("--configs", configurations)->capture_default_str();
  gc->add_option("--seed", seed)->capture_default_str();

  auto* sy = app.add_subcommand("synth", "Generate the synthetic textured-disc dataset");
  sy->add_option("--out", out, "Dataset root")->required();
  sy->add_option("--category", category)->capture_default_str();
  sy->add_option("--seed", synth.seed)->capture_default_str();
  sy->add_option("--size", synth.size)->capture_default_str();
  sy->add_option("--period", synth.texture_period, "Texture period in pixels")->capture_default_str();
  sy->add_option("--train", synth.train_count)->capture_default_str();
  sy->add_option("--normal", synth.normal_count)->capture_default_str();
  sy->add_option("--anomalous", synth.anomalous_count)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*est) return cmd_estimate_scale(data, attn, sigma, model, kind, resolution);
    if (*fit) return cmd_fit_scale_model(pairs, out);
    if (*pre) return cmd_preprocess(image, attn, scale, out_dir, resolution);
    if (*tr) return cmd_train(config, out_dir);
    if (*sc) return cmd_score(ckpt, image, attn, heatmap);
    if (*ev) return cmd_eval(ckpt, data, attn, out);
    if (*gs) return cmd_grid_search(config, out_dir);
    if (*gc) return cmd_gradcheck(configurations, seed);
    if (*sy) return cmd_synth(out, category, synth);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

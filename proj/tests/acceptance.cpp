// Acceptance suite: one PASS/FAIL line per primary criterion, each with its runtime budget.
// Usage: ear_acceptance <path-to-ear-binary> [work-dir|-] [report-file]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <sys/resource.h>

#include <json.hpp>

#include "ear/experiment.hpp"
#include "ear/gradcheck.hpp"
#include "ear/metrics.hpp"
#include "ear/obfuscate.hpp"
#include "ear/saliency.hpp"
#include "ear/scalest.hpp"
#include "ear/synthetic.hpp"
#include "support/helpers.hpp"
#include "support/process.hpp"

using namespace ear;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string name;
  double budget_s;
  bool budget_is_cpu;  // CPU time of this process plus its children, otherwise wall clock
  std::function<Outcome()> check;
};

double cpu_seconds() {
  auto secs = [](const rusage& u) {
    return static_cast<double>(u.ru_utime.tv_sec + u.ru_stime.tv_sec) +
           static_cast<double>(u.ru_utime.tv_usec + u.ru_stime.tv_usec) * 1e-6;
  };
  rusage self{}, children{};
  getrusage(RUSAGE_SELF, &self);
  getrusage(RUSAGE_CHILDREN, &children);
  return secs(self) + secs(children);
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<json> parse_lines(const std::string& text) {
  std::vector<json> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) out.push_back(json::parse(line));
  return out;
}

std::string without_timing(const std::string& jsonl) {
  std::vector<json> lines = parse_lines(jsonl);
  for (auto& l : lines) l = strip_timing(l);
  return to_jsonl(lines);
}

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

Image random_image(std::mt19937_64& rng) {
  const int h = 8 + static_cast<int>(rng() % 40), w = 8 + static_cast<int>(rng() % 40);
  return test::random_image(h, w, rng() % 2 ? 3 : 1, rng);
}

// ---------------------------------------------------------------------------

Outcome compositing_identities() {
  std::mt19937_64 rng(101);
  int failures = 0;
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const Image img = random_image(rng);
    const MosaicScale m{MosaicScale::kLadder[rng() % 4]};
    const Image blurred = mosaic(img, m);
    if (!(compose_hint(img, m, SaliencyMask(img.height(), img.width(), 0)) == img)) ++failures;
    if (!(compose_hint(img, m, SaliencyMask(img.height(), img.width(), 1)) == blurred)) ++failures;
    const SaliencyMask s = test::random_mask(img.height(), img.width(), rng);
    const Image a = compose_hint(img, m, s), b = compose_hint(img, m, s.complement());
    for (std::size_t i = 0; i < a.data().size(); ++i)
      worst = std::max(worst, std::abs(static_cast<double>(a.data()[i]) + b.data()[i] - img.data()[i] -
                                       blurred.data()[i]));
  }
  return {failures == 0 && worst <= 1e-6,
          "exact-identity failures " + std::to_string(failures) + ", max partition error " + fmt(worst)};
}

Outcome mask_determinism() {
  std::mt19937_64 rng(202);
  std::uniform_real_distribution<float> unit(0.0f, 1.0f), scale(0.1f, 10.0f), shift(0.0f, 5.0f);
  int unstable = 0, variant = 0;
  for (int t = 0; t < 100; ++t) {
    const int h = 2 + static_cast<int>(rng() % 31), w = 2 + static_cast<int>(rng() % 31);
    AttentionMap map{h, w, std::vector<float>(static_cast<std::size_t>(h) * w)};
    for (float& v : map.scores) v = unit(rng);
    const SaliencyMask s = binarize_q3(map, 8 * h, 8 * w);
    for (int k = 0; k < 3; ++k) unstable += !(binarize_q3(map, 8 * h, 8 * w) == s);
    AttentionMap moved = map;
    const float a = scale(rng), b = shift(rng);
    for (float& v : moved.scores) v = a * v + b;
    variant += !(binarize_q3(moved, 8 * h, 8 * w) == s);
  }
  return {unstable == 0 && variant == 0,
          "unstable " + std::to_string(unstable) + ", affine mismatches " + std::to_string(variant) + " of 100"};
}

Outcome edge_analytics() {
  const int n = 17;
  auto surface = [&](auto f) {
    GrayImage g(n, n);
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) g.at(y, x) = static_cast<float>(f(x - n / 2, y - n / 2));
    return g;
  };
  const auto bowl = edge_response(surface([](int x, int y) { return x * x + y * y; }), 0.0f);
  const auto saddle = edge_response(surface([](int x, int y) { return x * y; }), 0.0f);
  const auto ridge = edge_response(surface([](int x, int) { return x * x; }), 0.0f);
  int bad = 0, checked = 0;
  for (int y = 1; y < n - 1; ++y)
    for (int x = 1; x < n - 1; ++x, ++checked) {
      bad += !(bowl.is_valid(y, x) && bowl.at(y, x) == 4.0);
      bad += saddle.is_valid(y, x);
      bad += ridge.is_valid(y, x);
    }
  return {bad == 0, std::to_string(checked) + " interior pixels per surface, mismatches " + std::to_string(bad)};
}

Outcome quantization_regression() {
  std::vector<std::string> errors;
  const std::vector<ScalePair> two{{10.0, 40}, {30.0, 8}};
  const ScaleModel f = fit_scale_model(two, CategoryKind::objects);
  if (!(f.predict(10.0) == 40.0 && f.predict(30.0) == 8.0)) errors.push_back("two-point fit not exact");
  const ScaleModel negative{-1.0, 5.0, CategoryKind::textures};
  if (estimate_scale(negative, 10.0).value() != 2) errors.push_back("negative estimate not floored to 2");
  if (estimate_scale(ScaleModel{0.0, 1.5, CategoryKind::objects}, 0.0).value() != 2)
    errors.push_back("estimate 1.5 not floored to 2");
  if (quantize_scale(20.0).value() != 16) errors.push_back("20 -> " + std::to_string(quantize_scale(20.0).value()));
  if (quantize_scale(100.0).value() != 64) errors.push_back("100 -> " + std::to_string(quantize_scale(100.0).value()));
  std::string detail = "fit slope " + fmt(f.slope) + " intercept " + fmt(f.intercept);
  for (const auto& e : errors) detail += "; " + e;
  return {errors.empty(), detail};
}

Outcome metric_suite() {
  std::mt19937_64 rng(303);
  MetricConfig cfg;
  int gms_bad = 0, self_bad = 0;
  for (int t = 0; t < 50; ++t) {
    const int h = 12 + static_cast<int>(rng() % 30), w = 12 + static_cast<int>(rng() % 30);
    const Image a = test::random_image(h, w, 3, rng), b = test::random_image(h, w, 3, rng);
    const GrayImage ga = grad_magnitude(to_gray(a)), gb = grad_magnitude(to_gray(b));
    const GrayImage ab = gms_map(ga, gb, cfg.c), ba = gms_map(gb, ga, cfg.c);
    for (std::size_t i = 0; i < ab.data().size(); ++i)
      gms_bad += !(ab.data()[i] == ba.data()[i] && ab.data()[i] > 0.0f && ab.data()[i] <= 1.0f);
    for (float v : test::values(msgms_distance(a, a, cfg).values)) self_bad += v != 0.0f;
  }
  const double l_half = lamp(0.5, 1e-6), l_cap = lamp(1.0, 1e-6);
  const bool lamp_ok = std::abs(l_half - 0.693147) <= 1e-6 && std::abs(l_cap - 13.815511) <= 1e-4;

  double worst = 0.0;
  std::uniform_int_distribution<int> levels(0, 20);
  for (int t = 0; t < 1000; ++t) {
    const int n = 1 + static_cast<int>(rng() % 200), m = 1 + static_cast<int>(rng() % 200);
    std::vector<double> normal(n), anomalous(m);
    const bool coarse = t % 2 == 0;  // coarse levels force ties
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (double& v : normal) v = coarse ? levels(rng) : u(rng);
    for (double& v : anomalous) v = coarse ? levels(rng) : u(rng);
    double wins = 0.0;
    for (double a : anomalous)
      for (double b : normal) wins += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
    worst = std::max(worst, std::abs(auroc(normal, anomalous) - wins / (static_cast<double>(n) * m)));
  }
  return {gms_bad == 0 && self_bad == 0 && lamp_ok && worst <= 1e-12,
          "gms violations " + std::to_string(gms_bad) + ", nonzero self-distance pixels " + std::to_string(self_bad) +
              ", lamp(0.5)=" + fmt(l_half, 9) + ", lamp cap=" + fmt(l_cap, 9) + ", auroc max error " + fmt(worst)};
}

Outcome gradcheck() {
  const nn::GradcheckReport report = nn::run_gradcheck(20, 1);
  std::string worst_op;
  double worst_ratio = 0.0;
  for (const auto& c : report.worst_per_op()) {
    const double ratio = c.max_rel_error / c.tolerance;
    if (ratio > worst_ratio) worst_ratio = ratio, worst_op = c.op + " " + fmt(c.max_rel_error, 3);
  }
  return {report.passed() && report.configurations >= 20,
          std::to_string(report.worst_per_op().size()) + " ops x " + std::to_string(report.configurations) +
              " configurations, closest to tolerance: " + worst_op};
}

// End-to-end pieces drive the CLI the way a user would.

struct Workspace {
  fs::path ear_bin;
  fs::path root;
  fs::path data() const { return root / "data"; }
};

void write_config(const fs::path& path, const Workspace& ws, std::uint64_t seed, bool hint, int epochs,
                  const fs::path& out_dir) {
  std::ofstream(path) << "seed = " << seed << "\n"
                      << "[data]\nroot = " << json(ws.data().string()).dump()
                      << "\ncategory = \"disc\"\nresolution = 64\n"
                      << "[train]\nlr = 0.01\nepochs = " << epochs << "\nbatch = 8\nbase_width = 8\n"
                      << "[ablation]\nhint = " << (hint ? "true" : "false") << "\n"
                      << "[scale]\nmode = \"estimate\"\n"
                      << "[output]\ndir = " << json(out_dir.string()).dump() << "\n";
}

test::ProcessResult ear_cli(const Workspace& ws, const std::string& args, const std::string& env = "") {
  return test::run_command(env + test::quote(ws.ear_bin.string()) + " " + args);
}

Outcome desk_scale(const Workspace& ws) {
  std::vector<double> full, no_hint, train_max, anomalous_max;
  int scale = 0;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    for (bool hint : {true, false}) {
      const std::string tag = std::string(hint ? "ear" : "noobf") + std::to_string(seed);
      const fs::path cfg = ws.root / (tag + ".toml"), out = ws.root / tag;
      write_config(cfg, ws, seed, hint, 30, out);
      const auto r = ear_cli(ws, "train --config " + test::quote(cfg.string()));
      if (r.exit_code != 0) return {false, "ear train failed for " + tag};
      const auto lines = parse_lines(slurp(out / "report.jsonl"));
      const json& summary = lines.back();
      scale = summary.at("estimated_scale").get<int>();
      (hint ? full : no_hint).push_back(summary.at("best_auroc").get<double>());
      if (hint) {
        train_max.push_back(lines.front().at("train_score_max").get<double>());
        anomalous_max.push_back(lines.front().at("anomalous_score_max").get<double>());
      }
    }
  }
  const double med = median3(full), med_no_hint = median3(no_hint);
  std::string detail = "estimated m=" + std::to_string(scale) + ", EAR AUROC " + fmt(full[0]) + "/" + fmt(full[1]) +
                       "/" + fmt(full[2]) + " median " + fmt(med) + ", without obfuscation median " +
                       fmt(med_no_hint) + "; median train max score " + fmt(median3(train_max)) +
                       " vs anomalous max " + fmt(median3(anomalous_max));
  return {med >= 0.90 && med >= med_no_hint, detail};
}

Outcome determinism(const Workspace& ws) {
  std::string first_train, first_eval;
  for (int rep = 0; rep < 2; ++rep) {
    const fs::path out = ws.root / ("det" + std::to_string(rep));
    const fs::path cfg = ws.root / ("det" + std::to_string(rep) + ".toml");
    write_config(cfg, ws, 0, true, 5, out);
    const auto tr = ear_cli(ws, "train --config " + test::quote(cfg.string()), "EAR_SEED=20261016 ");
    if (tr.exit_code != 0) return {false, "ear train failed"};
    const auto ev = ear_cli(ws, "eval --ckpt " + test::quote((out / "best.ckpt").string()) + " --data " +
                                    test::quote((ws.data() / "disc").string()));
    if (ev.exit_code != 0) return {false, "ear eval failed"};
    const std::string train_text = without_timing(slurp(out / "report.jsonl"));
    const std::string eval_text = without_timing(ev.out);
    if (parse_lines(train_text).back().at("seed") != 20261016) return {false, "EAR_SEED not applied"};
    if (rep == 0) {
      first_train = train_text;
      first_eval = eval_text;
    } else {
      const bool same = train_text == first_train && eval_text == first_eval &&
                        slurp(ws.root / "det0/best.ckpt") == slurp(ws.root / "det1/best.ckpt");
      return {same, same ? "train report, eval report and checkpoint identical across two runs"
                         : "outputs differ between runs"};
    }
  }
  return {false, "unreachable"};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: ear_acceptance <ear-binary> [work-dir|-] [report-file]\n";
    return 2;
  }
  Workspace ws;
  ws.ear_bin = argv[1];
  std::optional<test::TempDir> scratch;
  if (argc >= 3 && std::string(argv[2]) != "-") {
    ws.root = argv[2];
    fs::create_directories(ws.root);
  } else {
    scratch.emplace("acceptance");
    ws.root = scratch->path();
  }
  write_synthetic_dataset(ws.data(), "disc", SyntheticOptions{});

  const std::vector<Criterion> criteria = {
      {"compositing identities", 1.0, false, compositing_identities},
      {"mask determinism and affine invariance", 1.0, false, mask_determinism},
      {"edge-response analytics", 1.0, false, edge_analytics},
      {"quantization and regression", 1.0, false, quantization_regression},
      {"metric suite", 30.0, false, metric_suite},
      {"gradcheck", 120.0, false, gradcheck},
      {"desk-scale end-to-end", 600.0, true, [&] { return desk_scale(ws); }},
      {"determinism", 600.0, false, [&] { return determinism(ws); }},
  };

  std::ofstream report;
  if (argc >= 4) report.open(argv[3]);
  auto emit = [&](const std::string& line) {
    std::cout << line << std::endl;
    if (report) report << line << std::endl;
  };

  int failed = 0;
  for (const auto& c : criteria) {
    const double cpu0 = cpu_seconds();
    const auto wall0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
    const double spent = c.budget_is_cpu ? cpu_seconds() - cpu0 : wall;
    const bool in_budget = spent <= c.budget_s;
    const bool pass = o.pass && in_budget;
    failed += !pass;
    std::ostringstream line;
    line << (pass ? "PASS" : "FAIL") << "  " << c.name << "  [" << fmt(spent, 3) << " s "
         << (c.budget_is_cpu ? "cpu" : "wall") << ", budget " << fmt(c.budget_s, 3) << " s"
         << (in_budget ? "" : ", OVER BUDGET") << "]  " << o.detail;
    emit(line.str());
  }
  emit(failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed");
  return failed == 0 ? 0 : 1;
}

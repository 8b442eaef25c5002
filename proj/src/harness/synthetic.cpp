#include "ear/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "ear/error.hpp"

namespace ear {

namespace fs = std::filesystem;

Image synthesize_disc(const SyntheticOptions& opt, DefectKind defect, std::uint64_t image_seed) {
  if (opt.size < 16) throw ValueError("synthetic image size must be at least 16");
  std::mt19937_64 rng(opt.seed * 0x100000001B3ULL + image_seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, opt.noise_sigma);

  const double n = opt.size;
  const double cx = n / 2 + (uni(rng) - 0.5) * 4.0;
  const double cy = n / 2 + (uni(rng) - 0.5) * 4.0;
  const double radius = opt.disc_radius * (n / 64.0) * (0.95 + 0.1 * uni(rng));
  const double phase = uni(rng) * 2 * std::numbers::pi;
  const double tint[3] = {0.85, 0.65, 0.35};

  // Defect geometry is drawn for every image, normal ones included.
  const double angle = uni(rng) * std::numbers::pi;
  const double offset = (uni(rng) - 0.5) * radius;
  const double hole_r = radius * (0.2 + 0.1 * uni(rng));
  const double hole_a = uni(rng) * 2 * std::numbers::pi;
  const double hole_d = uni(rng) * (radius - hole_r) * 0.7;
  const double hx = cx + hole_d * std::cos(hole_a);
  const double hy = cy + hole_d * std::sin(hole_a);
  const double stripe_half = 1.5 * (n / 64.0);

  Image img(opt.size, opt.size, 3);
  for (int y = 0; y < opt.size; ++y) {
    for (int x = 0; x < opt.size; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const double dist = std::hypot(px - cx, py - cy);
      const bool inside = dist <= radius;
      double rgb[3];
      if (inside) {
        const double t = 0.65 + opt.texture_amplitude * std::sin(2 * std::numbers::pi * px / opt.texture_period + phase) *
                                    std::cos(2 * std::numbers::pi * py / opt.texture_period);
        for (int c = 0; c < 3; ++c) rgb[c] = tint[c] * t;
        bool damaged = false;
        if (defect == DefectKind::stripe) {
          const double along = (px - cx) * std::sin(angle) - (py - cy) * std::cos(angle);
          damaged = std::abs(along - offset) <= stripe_half;
        } else if (defect == DefectKind::hole) {
          damaged = std::hypot(px - hx, py - hy) <= hole_r;
        }
        if (damaged) {
          if (defect == DefectKind::stripe) {
            rgb[0] = 0.15, rgb[1] = 0.3, rgb[2] = 0.6;
          } else {
            rgb[0] = rgb[1] = rgb[2] = 0.08;
          }
        }
      } else {
        for (double& v : rgb) v = 0.1;
      }
      const double grain = noise(rng);
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>(std::clamp(rgb[c] + grain, 0.0, 1.0));
    }
  }
  return img;
}

fs::path write_synthetic_dataset(const fs::path& root, const std::string& category, const SyntheticOptions& opt) {
  const fs::path base = root / category;
  const fs::path train_dir = base / "train" / "good";
  const fs::path good_dir = base / "test" / "good";
  const fs::path stripe_dir = base / "test" / "stripe";
  const fs::path hole_dir = base / "test" / "hole";
  for (const auto& d : {train_dir, good_dir, stripe_dir, hole_dir}) fs::create_directories(d);

  auto name = [](int i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%03d.png", i);
    return std::string(buf);
  };
  std::uint64_t next_seed = 0;
  for (int i = 0; i < opt.train_count; ++i)
    save_image(synthesize_disc(opt, DefectKind::none, next_seed++), train_dir / name(i));
  for (int i = 0; i < opt.normal_count; ++i)
    save_image(synthesize_disc(opt, DefectKind::none, next_seed++), good_dir / name(i));
  for (int i = 0; i < opt.anomalous_count; ++i) {
    const bool stripe = i % 2 == 0;
    save_image(synthesize_disc(opt, stripe ? DefectKind::stripe : DefectKind::hole, next_seed++),
               (stripe ? stripe_dir : hole_dir) / name(i / 2));
  }
  return base;
}

}  // namespace ear

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "ear/error.hpp"
#include "ear/reconnet.hpp"

namespace ear::nn {

std::string to_string(Schedule s) {
  switch (s) {
    case Schedule::fixed: return "fixed";
    case Schedule::warmup: return "warmup";
    case Schedule::sgdr: return "sgdr";
  }
  return "fixed";
}

Schedule parse_schedule(const std::string& text) {
  if (text == "fixed") return Schedule::fixed;
  if (text == "warmup" || text == "warm-up") return Schedule::warmup;
  if (text == "sgdr") return Schedule::sgdr;
  throw ValueError("unknown learning-rate schedule '" + text + "'");
}

void TrainConfig::validate() const {
  if (kernel < 1 || kernel % 2 == 0) throw ValueError("kernel size must be odd");
  if (!(lr > 0.0)) throw ValueError("learning rate must be positive");
  if (warmup_steps < 1) throw ValueError("warmup_steps must be >= 1");
  if (sgdr_t0 < 0 || sgdr_tmult < 1) throw ValueError("invalid SGDR period");
  if (epochs < 0 || batch < 1) throw ValueError("epochs must be >= 0 and batch >= 1");
  if (momentum < 0.0 || momentum >= 1.0) throw ValueError("momentum must be in [0,1)");
  if (base_width < 1) throw ValueError("base width must be >= 1");
}

double lr_at(const TrainConfig& cfg, long step) {
  if (step < 0) throw ValueError("step must be non-negative");
  switch (cfg.schedule) {
    case Schedule::fixed:
      return cfg.lr;
    case Schedule::warmup:
      if (step < cfg.warmup_steps) return cfg.lr * static_cast<double>(step + 1) / cfg.warmup_steps;
      return cfg.lr;
    case Schedule::sgdr: {
      if (cfg.sgdr_t0 < 1) throw ValueError("SGDR period must be resolved to >= 1 step");
      const double eta_min = cfg.lr / 100.0;
      long t = step, period = cfg.sgdr_t0;
      while (t >= period) {
        t -= period;
        period *= cfg.sgdr_tmult;
      }
      return eta_min + 0.5 * (cfg.lr - eta_min) *
                           (1.0 + std::cos(std::numbers::pi * static_cast<double>(t) / static_cast<double>(period)));
    }
  }
  throw ValueError("invalid schedule");
}

Image corrupt_input(const Image& img, const SaliencyMask& mask, MosaicScale scale, const AblationFlags& flags) {
  if (!flags.attention) return mosaic(img, scale);
  if (!flags.hint) return compose_blank(img, mask);
  return compose_hint(img, scale, mask);
}

template <class T>
Tensor4<T> to_tensor(std::span<const Image> images) {
  if (images.empty()) throw DimensionError("cannot pack an empty image batch");
  const Image& first = images.front();
  Tensor4<T> out(Shape4{static_cast<int>(images.size()), first.channels(), first.height(), first.width()});
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& img = images[n];
    if (img.height() != first.height() || img.width() != first.width() || img.channels() != first.channels())
      throw DimensionError("images in a batch must share a shape");
    for (int c = 0; c < img.channels(); ++c) {
      T* plane = out.plane(static_cast<int>(n), c);
      for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x) plane[y * img.width() + x] = static_cast<T>(img.at(y, x, c));
    }
  }
  return out;
}

template <class T>
Tensor4<T> to_tensor(const Image& image) {
  return to_tensor<T>(std::span<const Image>(&image, 1));
}

template Tensor4<float> to_tensor<float>(std::span<const Image>);
template Tensor4<double> to_tensor<double>(std::span<const Image>);
template Tensor4<float> to_tensor<float>(const Image&);
template Tensor4<double> to_tensor<double>(const Image&);

Image to_image(const Tensor4<float>& t, int n) {
  const Shape4 s = t.shape();
  Image out(s.h, s.w, s.c);
  for (int c = 0; c < s.c; ++c) {
    const float* plane = t.plane(n, c);
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) out.at(y, x, c) = std::clamp(plane[y * s.w + x], 0.0f, 1.0f);
  }
  return out;
}

TrainResult train(ReconNet<float>& net, std::span<const TrainingExample> examples, MosaicScale scale,
                  const TrainConfig& cfg, const MetricConfig& metric, const LossWeights& weights,
                  const AblationFlags& flags) {
  cfg.validate();
  metric.validate();
  weights.validate();
  if (examples.empty()) throw ValueError("training set is empty");

  std::vector<Image> targets, inputs;
  targets.reserve(examples.size());
  inputs.reserve(examples.size());
  for (const auto& ex : examples) {
    targets.push_back(ex.image);
    inputs.push_back(corrupt_input(ex.image, ex.mask, scale, flags));
  }

  const int n = static_cast<int>(examples.size());
  const int steps_per_epoch = (n + cfg.batch - 1) / cfg.batch;
  TrainConfig schedule_cfg = cfg;
  if (schedule_cfg.sgdr_t0 == 0) schedule_cfg.sgdr_t0 = steps_per_epoch;

  std::mt19937_64 rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Fisher-Yates with explicit draws from the shuffle stream.
    for (int i = n - 1; i > 0; --i) std::swap(order[i], order[static_cast<int>(rng() % static_cast<std::uint64_t>(i + 1))]);
    double epoch_sum = 0.0;
    int epoch_batches = 0;
    for (int start = 0; start < n; start += cfg.batch) {
      const int stop = std::min(start + cfg.batch, n);
      std::vector<Image> batch_in, batch_target;
      for (int i = start; i < stop; ++i) {
        batch_in.push_back(inputs[order[i]]);
        batch_target.push_back(targets[order[i]]);
      }
      Tape<float> tape;
      const Var x = tape.leaf(to_tensor<float>(batch_in));
      const Var target = tape.leaf(to_tensor<float>(batch_target));
      const Var out = net.forward(tape, x, true);
      const Var loss = training_loss(tape, target, out, weights, metric);
      const double value = tape.value(loss)[0];
      if (!std::isfinite(value)) {
        std::ostringstream msg;
        msg << "non-finite training loss at step " << result.steps << " (epoch " << epoch << ")";
        throw Error(msg.str());
      }
      tape.backward(loss);
      net.collect_gradients(tape);

      const float lr = static_cast<float>(lr_at(schedule_cfg, result.steps));
      const float mom = static_cast<float>(cfg.momentum);
      for (auto& p : net.parameters()) {
        for (std::size_t i = 0; i < p.value.size(); ++i) {
          p.velocity[i] = mom * p.velocity[i] + p.grad[i];
          p.value[i] -= lr * p.velocity[i];
        }
      }
      result.step_losses.push_back(value);
      epoch_sum += value;
      ++epoch_batches;
      ++result.steps;
    }
    result.epoch_losses.push_back(epoch_sum / epoch_batches);
  }
  return result;
}

Image reconstruct(ReconNet<float>& net, const Image& corrupted) {
  return to_image(net.predict(to_tensor<float>(corrupted)), 0);
}

}  // namespace ear::nn

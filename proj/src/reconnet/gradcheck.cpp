#include "ear/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <random>

#include "ear/autograd.hpp"

namespace ear::nn {

namespace {

using Fn = std::function<Var(Tape<double>&, const std::vector<Var>&)>;

struct Probe {
  std::vector<Tensor4<double>> inputs;
  Fn fn;
};

// Projects the op output onto fixed random weights so every output element contributes.
double eval_scalar(const Probe& p, const std::vector<Tensor4<double>>& inputs, const Tensor4<double>* weights,
                   Tensor4<double>* out_shape_weights, std::mt19937_64* rng) {
  Tape<double> tape;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.leaf(t, false));
  const Var out = p.fn(tape, vars);
  const auto& v = tape.value(out);
  if (out_shape_weights) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    *out_shape_weights = Tensor4<double>(v.shape());
    for (std::size_t i = 0; i < v.size(); ++i) (*out_shape_weights)[i] = u(*rng);
    weights = out_shape_weights;
  }
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) s += v[i] * (*weights)[i];
  return s;
}

double check(const Probe& p, std::mt19937_64& rng) {
  Tensor4<double> weights;
  eval_scalar(p, p.inputs, nullptr, &weights, &rng);

  Tape<double> tape;
  std::vector<Var> vars;
  for (const auto& t : p.inputs) vars.push_back(tape.leaf(t, true));
  const Var out = p.fn(tape, vars);
  const Var w = tape.leaf(weights, false);
  const Var loss = mean(tape, mul(tape, out, w));
  tape.backward(loss);
  const double count = static_cast<double>(weights.size());

  double max_diff = 0.0, max_num = 0.0;
  constexpr double h = 1e-6;
  for (std::size_t k = 0; k < p.inputs.size(); ++k) {
    const Tensor4<double> analytic = tape.grad(vars[k]);
    for (std::size_t i = 0; i < p.inputs[k].size(); ++i) {
      auto plus = p.inputs, minus = p.inputs;
      plus[k][i] += h;
      minus[k][i] -= h;
      const double numeric =
          (eval_scalar(p, plus, &weights, nullptr, nullptr) - eval_scalar(p, minus, &weights, nullptr, nullptr)) /
          (2 * h * count);
      max_diff = std::max(max_diff, std::abs(analytic[i] - numeric));
      max_num = std::max(max_num, std::abs(numeric));
    }
  }
  return max_diff / std::max(max_num, 1e-12);
}

Tensor4<double> random_tensor(Shape4 s, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor4<double> t(s);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

// Values drawn away from the listed kinks by at least `gap`.
Tensor4<double> away_from(Shape4 s, std::mt19937_64& rng, double lo, double hi, std::vector<double> kinks,
                          double gap) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor4<double> t(s);
  for (std::size_t i = 0; i < t.size(); ++i) {
    double v;
    do {
      v = u(rng);
    } while (std::any_of(kinks.begin(), kinks.end(), [&](double k) { return std::abs(v - k) < gap; }));
    t[i] = v;
  }
  return t;
}

}  // namespace

bool GradcheckReport::passed() const {
  return !cases.empty() && std::all_of(cases.begin(), cases.end(), [](const GradcheckCase& c) { return c.passed(); });
}

std::vector<GradcheckCase> GradcheckReport::worst_per_op() const {
  std::map<std::string, GradcheckCase> worst;
  std::vector<std::string> order;
  for (const auto& c : cases) {
    auto it = worst.find(c.op);
    if (it == worst.end()) {
      worst.emplace(c.op, c);
      order.push_back(c.op);
    } else if (c.max_rel_error / c.tolerance > it->second.max_rel_error / it->second.tolerance) {
      it->second = c;
    }
  }
  std::vector<GradcheckCase> out;
  for (const auto& name : order) out.push_back(worst.at(name));
  return out;
}

GradcheckReport run_gradcheck(int configurations, std::uint64_t seed) {
  GradcheckReport report;
  report.configurations = configurations;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> dim(3, 6);

  for (int cfg_i = 0; cfg_i < configurations; ++cfg_i) {
    const int n = 1 + static_cast<int>(rng() % 2);
    const int c = 1 + static_cast<int>(rng() % 3);
    const int h = dim(rng), w = dim(rng);
    const Shape4 s{n, c, h, w};
    const Shape4 rgb{n, 3, h, w};
    const Shape4 scalar{1, 1, 1, 1};

    auto run = [&](const std::string& op, Probe probe, double tol) {
      report.cases.push_back({op, cfg_i, check(probe, rng), tol});
    };

    // conv2d with stride 1 and 2 and an odd kernel.
    {
      const int k = (rng() % 2) ? 3 : 5;
      const int cout = 1 + static_cast<int>(rng() % 3);
      for (int stride : {1, 2}) {
        run(stride == 1 ? "conv2d" : "conv2d_stride2",
            {{random_tensor(s, rng, -1, 1), random_tensor({cout, c, k, k}, rng, -0.5, 0.5),
              random_tensor({1, cout, 1, 1}, rng, -0.5, 0.5)},
             [stride](Tape<double>& t, const std::vector<Var>& v) { return conv2d(t, v[0], v[1], v[2], stride); }},
            kSmoothTolerance);
      }
    }
    {
      const Shape4 bn_shape{n + 1, c, h, w};
      run("batch_norm_train",
          {{random_tensor(bn_shape, rng, -1, 1), random_tensor({1, c, 1, 1}, rng, 0.5, 1.5),
            random_tensor({1, c, 1, 1}, rng, -0.5, 0.5)},
           [](Tape<double>& t, const std::vector<Var>& v) {
             return batch_norm<double>(t, v[0], v[1], v[2], nullptr, BatchNormOptions{true, 0.1, 1e-5});
           }},
          kSmoothTolerance);
      auto stats = std::make_shared<BatchNormStats<double>>();
      std::uniform_real_distribution<double> u(0.5, 1.5);
      for (int i = 0; i < c; ++i) {
        stats->running_mean.push_back(u(rng) - 1.0);
        stats->running_var.push_back(u(rng));
      }
      run("batch_norm_eval",
          {{random_tensor(s, rng, -1, 1), random_tensor({1, c, 1, 1}, rng, 0.5, 1.5),
            random_tensor({1, c, 1, 1}, rng, -0.5, 0.5)},
           [stats](Tape<double>& t, const std::vector<Var>& v) {
             return batch_norm<double>(t, v[0], v[1], v[2], stats.get(), BatchNormOptions{false, 0.1, 1e-5});
           }},
          kSmoothTolerance);
    }
    run("leaky_relu",
        {{away_from(s, rng, -1, 1, {0.0}, 1e-3)},
         [](Tape<double>& t, const std::vector<Var>& v) { return leaky_relu(t, v[0], 0.2); }},
        kPiecewiseTolerance);
    run("sigmoid",
        {{random_tensor(s, rng, -3, 3)}, [](Tape<double>& t, const std::vector<Var>& v) { return sigmoid(t, v[0]); }},
        kSmoothTolerance);
    run("upsample_nearest2x",
        {{random_tensor(s, rng, -1, 1)},
         [](Tape<double>& t, const std::vector<Var>& v) { return upsample_nearest2x(t, v[0]); }},
        kSmoothTolerance);
    run("concat",
        {{random_tensor(s, rng, -1, 1), random_tensor({n, 1 + static_cast<int>(rng() % 2), h, w}, rng, -1, 1)},
         [](Tape<double>& t, const std::vector<Var>& v) { return concat(t, v[0], v[1]); }},
        kSmoothTolerance);
    run("luma",
        {{random_tensor(rgb, rng, 0, 1)}, [](Tape<double>& t, const std::vector<Var>& v) { return luma(t, v[0]); }},
        kSmoothTolerance);
    {
      const int m = 2 + static_cast<int>(rng() % 2);
      run("avg_pool",
          {{random_tensor(s, rng, -1, 1)}, [m](Tape<double>& t, const std::vector<Var>& v) { return avg_pool(t, v[0], m); }},
          kSmoothTolerance);
      const int th = h + static_cast<int>(rng() % 4), tw = w + static_cast<int>(rng() % 4);
      run("upscale_nearest",
          {{random_tensor(s, rng, -1, 1)},
           [th, tw](Tape<double>& t, const std::vector<Var>& v) { return upscale_nearest(t, v[0], th, tw); }},
          kSmoothTolerance);
    }
    run("prewitt_magnitude",
        {{random_tensor(s, rng, 0, 1)},
         [](Tape<double>& t, const std::vector<Var>& v) { return prewitt_magnitude(t, v[0]); }},
        kPiecewiseTolerance);
    run("gms",
        {{random_tensor(s, rng, 0, 1), random_tensor(s, rng, 0, 1)},
         [](Tape<double>& t, const std::vector<Var>& v) { return gms(t, v[0], v[1], 0.0026); }},
        kSmoothTolerance);
    {
      const int size = 3 + 2 * static_cast<int>(rng() % 4);
      std::vector<double> taps;
      std::uniform_real_distribution<double> u(0.0, 1.0);
      for (int i = 0; i < size; ++i) taps.push_back(u(rng));
      run("window_filter",
          {{random_tensor(s, rng, -1, 1)},
           [taps](Tape<double>& t, const std::vector<Var>& v) {
             return window_filter<double>(t, v[0], std::span<const double>(taps));
           }},
          kSmoothTolerance);
    }
    auto binary = [&](const std::string& op, auto f, double lo_b) {
      run(op, {{random_tensor(s, rng, -1, 1), random_tensor(s, rng, lo_b, 1)}, f}, kSmoothTolerance);
    };
    binary("add", [](Tape<double>& t, const std::vector<Var>& v) { return add(t, v[0], v[1]); }, -1);
    binary("sub", [](Tape<double>& t, const std::vector<Var>& v) { return sub(t, v[0], v[1]); }, -1);
    binary("mul", [](Tape<double>& t, const std::vector<Var>& v) { return mul(t, v[0], v[1]); }, -1);
    binary("div", [](Tape<double>& t, const std::vector<Var>& v) { return div(t, v[0], v[1]); }, 0.3);
    run("scale",
        {{random_tensor(s, rng, -1, 1)}, [](Tape<double>& t, const std::vector<Var>& v) { return scale(t, v[0], -1.7); }},
        kSmoothTolerance);
    run("add_scalar",
        {{random_tensor(s, rng, -1, 1)},
         [](Tape<double>& t, const std::vector<Var>& v) { return add_scalar(t, v[0], 0.4); }},
        kSmoothTolerance);
    run("mean",
        {{random_tensor(s, rng, -1, 1)}, [](Tape<double>& t, const std::vector<Var>& v) { return mean(t, v[0]); }},
        kSmoothTolerance);
    run("clamp",
        {{away_from(s, rng, 0, 1, {0.2, 0.8}, 1e-3)},
         [](Tape<double>& t, const std::vector<Var>& v) { return clamp(t, v[0], 0.2, 0.8); }},
        kPiecewiseTolerance);
    run("lamp",
        {{random_tensor(scalar, rng, 0.05, 0.95)},
         [](Tape<double>& t, const std::vector<Var>& v) { return lamp(t, v[0], 1e-6); }},
        kSmoothTolerance);

    MetricConfig metric;
    metric.scales = 1 + static_cast<int>(rng() % 3);
    metric.ssim_window = 3 + 2 * static_cast<int>(rng() % 5);
    LossWeights weights{0.5 + (rng() % 100) / 100.0, 0.5 + (rng() % 100) / 100.0, 0.5 + (rng() % 100) / 100.0};
    const Shape4 img{n, (rng() % 2) ? 3 : 1, h + 6, w + 6};
    auto pair = [&] {
      return std::vector<Tensor4<double>>{random_tensor(img, rng, 0.05, 0.95), random_tensor(img, rng, 0.05, 0.95)};
    };
    run("l2_loss", {pair(), [](Tape<double>& t, const std::vector<Var>& v) { return l2_loss(t, v[0], v[1]); }},
        kSmoothTolerance);
    run("ssim_loss",
        {pair(), [metric](Tape<double>& t, const std::vector<Var>& v) { return ssim_loss(t, v[0], v[1], metric); }},
        kSmoothTolerance);
    run("msgms_loss",
        {pair(), [metric](Tape<double>& t, const std::vector<Var>& v) { return msgms_loss(t, v[0], v[1], metric); }},
        kPiecewiseTolerance);
    run("combined_loss",
        {pair(), [metric, weights](Tape<double>& t, const std::vector<Var>& v) {
           return combined_loss(t, v[0], v[1], weights, metric);
         }},
        kPiecewiseTolerance);
    run("lamp_combined_loss",
        {pair(), [metric, weights](Tape<double>& t, const std::vector<Var>& v) {
           return training_loss(t, v[0], v[1], weights, metric);
         }},
        kPiecewiseTolerance);
  }
  return report;
}

}  // namespace ear::nn

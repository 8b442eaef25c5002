#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "ear/autograd.hpp"
#include "ear/error.hpp"
#include "ear/reconnet.hpp"
#include "ear/synthetic.hpp"
#include "support/helpers.hpp"

using namespace ear;
using namespace ear::nn;

namespace {

template <class T>
Tensor4<T> random_tensor(Shape4 s, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor4<T> t(s);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(u(rng));
  return t;
}

ReconNetConfig toy_config(int base = 2, int channels = 3) {
  ReconNetConfig c;
  c.base_width = base;
  c.in_channels = channels;
  return c;
}

Parameter<double>& param(ReconNet<double>& net, const std::string& name) {
  for (auto& p : net.parameters())
    if (p.name == name) return p;
  FAIL("no parameter " << name);
  throw 0;
}

std::vector<TrainingExample> disc_examples(int count, int size, std::uint64_t seed) {
  SyntheticOptions opt;
  opt.size = size;
  opt.seed = seed;
  std::vector<TrainingExample> out;
  for (int i = 0; i < count; ++i) {
    Image img = synthesize_disc(opt, DefectKind::none, static_cast<std::uint64_t>(i));
    SaliencyMask mask = binarize_q3(fallback_saliency(img), size, size);
    out.push_back({std::move(img), std::move(mask)});
  }
  return out;
}

}  // namespace

TEST_CASE("forward preserves shape and stays in the unit range") {
  std::mt19937_64 rng(1);
  ReconNet<float> net(toy_config(4), 7);
  const Tensor4<float> x = random_tensor<float>({2, 3, 64, 64}, rng);
  const Tensor4<float> y = net.predict(x);
  CHECK(y.shape() == x.shape());
  for (std::size_t i = 0; i < y.size(); ++i) CHECK((y[i] >= 0.0f && y[i] <= 1.0f));

  ReconNet<float> wide(toy_config(2), 7);
  const Tensor4<float> z = random_tensor<float>({1, 3, 64, 96}, rng);
  CHECK(wide.predict(z).shape() == z.shape());

  ReconNet<float> gray(toy_config(2, 1), 7);
  const Tensor4<float> g = random_tensor<float>({1, 1, 32, 32}, rng);
  CHECK(gray.predict(g).shape() == g.shape());
}

TEST_CASE("256x256 input has an 8x8 bottleneck") {
  std::mt19937_64 rng(2);
  ReconNet<float> net(toy_config(1), 1);
  Tape<float> tape;
  const Var x = tape.leaf(random_tensor<float>({1, 3, 256, 256}, rng));
  const Var y = net.forward(tape, x, false);
  CHECK(tape.value(y).shape() == Shape4{1, 3, 256, 256});
  // The input leaf is followed by one leaf per parameter; everything after is an activation.
  const std::size_t first_activation = 1 + net.parameters().size();
  int smallest = 256;
  for (std::size_t i = first_activation; i < tape.size(); ++i)
    smallest = std::min(smallest, tape.value(Var{static_cast<int>(i)}).shape().h);
  CHECK(smallest == 8);
}

TEST_CASE("indivisible input is rejected") {
  std::mt19937_64 rng(3);
  ReconNet<float> net(toy_config(2), 1);
  CHECK_THROWS_AS(net.predict(random_tensor<float>({1, 3, 100, 64}, rng)), DimensionError);
  CHECK_THROWS_AS(net.predict(random_tensor<float>({1, 1, 64, 64}, rng)), DimensionError);
}

TEST_CASE("network config validation") {
  ReconNetConfig c = toy_config();
  CHECK_NOTHROW(c.validate());
  c.kernel = 4;
  CHECK_THROWS(c.validate());
  c = toy_config();
  c.in_channels = 2;
  CHECK_THROWS(c.validate());
  c = toy_config();
  c.multipliers = {1, 2};
  CHECK_THROWS(c.validate());
  CHECK(toy_config().divisor() == 32);
}

TEST_CASE("parameter count matches the tensors") {
  ReconNet<float> net(toy_config(8), 1);
  std::size_t n = 0;
  for (const auto& p : net.parameters()) n += p.value.size();
  CHECK(net.parameter_count() == n);
  CHECK(n > 0u);
  // 5 encoder + 5 decoder blocks of 3 convs; all but the head carry batch-norm.
  std::size_t weights = 0, norms = 0;
  for (const auto& p : net.parameters()) {
    weights += p.name.ends_with(".weight");
    norms += p.name.ends_with(".bn.gamma");
  }
  CHECK(weights == 30u);
  CHECK(norms == 29u);
}

TEST_CASE("zero output layer still passes gradient to its bias") {
  std::mt19937_64 rng(4);
  ReconNet<double> net(toy_config(2), 3);
  param(net, "dec4.conv2.weight").value.fill(0.0);
  Tape<double> tape;
  const Var x = tape.leaf(random_tensor<double>({2, 3, 32, 32}, rng));
  const Var target = tape.leaf(random_tensor<double>({2, 3, 32, 32}, rng));
  const Var loss = l2_loss(tape, net.forward(tape, x, true), target);
  tape.backward(loss);
  net.collect_gradients(tape);
  const auto& g = param(net, "dec4.conv2.bias").grad;
  double mag = 0;
  for (std::size_t i = 0; i < g.size(); ++i) mag += std::abs(g[i]);
  CHECK(mag > 0.0);
}

TEST_CASE("two-layer toy net passes a finite-difference check") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<Tensor4<double>> leaves{
        random_tensor<double>({2, 2, 5, 6}, rng, -1, 1),   // x
        random_tensor<double>({3, 2, 3, 3}, rng, -0.5, 0.5),  // w1
        random_tensor<double>({1, 3, 1, 1}, rng, -0.2, 0.2),  // b1
        random_tensor<double>({1, 3, 1, 1}, rng, 0.5, 1.5),   // gamma
        random_tensor<double>({1, 3, 1, 1}, rng, -0.2, 0.2),  // beta
        random_tensor<double>({2, 3, 3, 3}, rng, -0.5, 0.5),  // w2
        random_tensor<double>({1, 2, 1, 1}, rng, -0.2, 0.2),  // b2
        random_tensor<double>({2, 2, 5, 6}, rng, 0, 1)};      // target
    auto build = [](Tape<double>& t, const std::vector<Var>& v) {
      Var h = conv2d(t, v[0], v[1], v[2], 1);
      h = batch_norm<double>(t, h, v[3], v[4], nullptr, BatchNormOptions{});
      h = leaky_relu(t, h, 0.2);
      h = sigmoid(t, conv2d(t, h, v[5], v[6], 1));
      return l2_loss(t, h, v[7]);
    };
    auto value = [&](const std::vector<Tensor4<double>>& in) {
      Tape<double> t;
      std::vector<Var> v;
      for (const auto& x : in) v.push_back(t.leaf(x));
      return t.value(build(t, v))[0];
    };
    Tape<double> tape;
    std::vector<Var> vars;
    for (std::size_t i = 0; i < leaves.size(); ++i) vars.push_back(tape.leaf(leaves[i], i < 7));
    tape.backward(build(tape, vars));
    double diff = 0, scale = 0;
    const double h = 1e-5;
    for (std::size_t k = 0; k < 7; ++k) {
      const Tensor4<double> g = tape.grad(vars[k]);
      for (std::size_t i = 0; i < leaves[k].size(); ++i) {
        auto p = leaves, m = leaves;
        p[k][i] += h;
        m[k][i] -= h;
        const double num = (value(p) - value(m)) / (2 * h);
        diff = std::max(diff, std::abs(num - g[i]));
        scale = std::max(scale, std::abs(num));
      }
    }
    CHECK(diff / scale < 1e-6);
  }
}

TEST_CASE("full network gradients agree with finite differences on sampled coordinates") {
  std::mt19937_64 rng(6);
  ReconNet<double> net(toy_config(1), 11);
  const Tensor4<double> x = random_tensor<double>({2, 3, 64, 64}, rng);
  const Tensor4<double> target = random_tensor<double>({2, 3, 64, 64}, rng);
  MetricConfig metric;
  LossWeights weights;
  auto loss_value = [&] {
    Tape<double> t;
    const Var out = net.forward(t, t.leaf(x), true);
    return t.value(training_loss(t, t.leaf(target), out, weights, metric))[0];
  };
  Tape<double> tape;
  const Var out = net.forward(tape, tape.leaf(x), true);
  tape.backward(training_loss(tape, tape.leaf(target), out, weights, metric));
  net.collect_gradients(tape);

  double worst = 0;
  for (auto& p : net.parameters()) {
    for (int s = 0; s < 2; ++s) {
      const std::size_t i = rng() % p.value.size();
      const double keep = p.value[i], h = 1e-6;
      p.value[i] = keep + h;
      const double up = loss_value();
      p.value[i] = keep - h;
      const double down = loss_value();
      p.value[i] = keep;
      const double num = (up - down) / (2 * h);
      const double err = std::abs(num - p.grad[i]) / std::max(std::abs(num), 1e-5);
      worst = std::max(worst, err);
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("lamp of the combined loss scales the gradient by 1/(1-L)") {
  std::mt19937_64 rng(7);
  MetricConfig metric;
  LossWeights weights{1, 2, 3};
  for (int t = 0; t < 5; ++t) {
    const Tensor4<double> a = random_tensor<double>({1, 3, 16, 16}, rng), b = random_tensor<double>({1, 3, 16, 16}, rng);
    Tape<double> plain;
    const Var pa = plain.leaf(a), pb = plain.leaf(b, true);
    const Var l = combined_loss(plain, pa, pb, weights, metric);
    const double lv = plain.value(l)[0];
    plain.backward(l);
    Tape<double> amp;
    const Var qa = amp.leaf(a), qb = amp.leaf(b, true);
    amp.backward(training_loss(amp, qa, qb, weights, metric));
    const auto& g0 = plain.grad(pb);
    const auto& g1 = amp.grad(qb);
    double worst = 0, scale = 0;
    for (std::size_t i = 0; i < g0.size(); ++i) {
      worst = std::max(worst, std::abs(g1[i] - g0[i] / (1.0 - lv)));
      scale = std::max(scale, std::abs(g1[i]));
    }
    CHECK(worst / scale < 1e-6);
  }
}

TEST_CASE("learning-rate schedules") {
  TrainConfig cfg;
  cfg.lr = 1e-3;
  SUBCASE("fixed") {
    for (long s : {0L, 1L, 50L, 100000L}) CHECK(lr_at(cfg, s) == 1e-3);
  }
  SUBCASE("warmup") {
    cfg.schedule = Schedule::warmup;
    cfg.warmup_steps = 100;
    CHECK(lr_at(cfg, 0) == doctest::Approx(1e-5));
    CHECK(lr_at(cfg, 49) == doctest::Approx(5e-4));
    CHECK(lr_at(cfg, 99) == 1e-3);
    CHECK(lr_at(cfg, 500) == 1e-3);
  }
  SUBCASE("sgdr") {
    cfg.schedule = Schedule::sgdr;
    cfg.sgdr_t0 = 10;
    cfg.sgdr_tmult = 2;
    const double eta_min = 1e-5;
    CHECK(lr_at(cfg, 0) == doctest::Approx(1e-3));
    CHECK(lr_at(cfg, 5) == doctest::Approx(eta_min + 0.5 * (1e-3 - eta_min)));
    CHECK(lr_at(cfg, 10) == doctest::Approx(1e-3));  // first restart
    CHECK(lr_at(cfg, 20) == doctest::Approx(eta_min + 0.5 * (1e-3 - eta_min)));  // middle of the 20-step period
    CHECK(lr_at(cfg, 30) == doctest::Approx(1e-3));  // second restart
    for (long s = 0; s < 2000; ++s) {
      const double v = lr_at(cfg, s);
      CHECK((v >= eta_min - 1e-18 && v <= 1e-3 + 1e-18));
    }
  }
  CHECK_THROWS(lr_at(cfg, -1));
  CHECK(parse_schedule("fixed") == Schedule::fixed);
  CHECK(parse_schedule("warmup") == Schedule::warmup);
  CHECK(parse_schedule("warm-up") == Schedule::warmup);
  CHECK(parse_schedule("sgdr") == Schedule::sgdr);
  CHECK_THROWS_AS(parse_schedule("cosine"), ValueError);
}

TEST_CASE("ablation inputs") {
  std::mt19937_64 rng(8);
  const Image img = test::random_image(16, 16, 3, rng);
  const SaliencyMask mask = test::random_mask(16, 16, rng);
  const MosaicScale m{4};
  CHECK(corrupt_input(img, mask, m, AblationFlags{}) == compose_hint(img, m, mask));
  CHECK(corrupt_input(img, mask, m, AblationFlags{false, true}) == compose_blank(img, mask));
  CHECK(corrupt_input(img, SaliencyMask(16, 16, 0), m, AblationFlags{false, true}) == img);
  CHECK(corrupt_input(img, mask, m, AblationFlags{true, false}) == mosaic(img, m));
}

TEST_CASE("training reduces the loss over 200 steps (median of 3 seeds)") {
  const auto examples = disc_examples(20, 32, 3);
  std::vector<double> ratios;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    TrainConfig cfg;
    cfg.lr = 0.01;
    cfg.batch = 4;
    cfg.epochs = 40;  // 5 steps per epoch
    cfg.seed = seed;
    cfg.base_width = 4;
    ReconNet<float> net(toy_config(4), seed);
    const TrainResult r = train(net, examples, MosaicScale{8}, cfg, MetricConfig{}, LossWeights{}, AblationFlags{});
    REQUIRE(r.steps == 200);
    REQUIRE(r.step_losses.size() == 200u);
    double first = 0, last = 0;
    for (int i = 0; i < 20; ++i) first += r.step_losses[i], last += r.step_losses[180 + i];
    ratios.push_back(last / first);
  }
  std::sort(ratios.begin(), ratios.end());
  CHECK(ratios[1] < 0.9);
}

TEST_CASE("training is deterministic for a fixed seed") {
  const auto examples = disc_examples(6, 32, 4);
  TrainConfig cfg;
  cfg.lr = 0.01;
  cfg.batch = 4;
  cfg.epochs = 2;
  cfg.seed = 42;
  cfg.schedule = Schedule::sgdr;
  auto run = [&] {
    ReconNet<float> net(toy_config(2), 42);
    const TrainResult r = train(net, examples, MosaicScale{4}, cfg, MetricConfig{}, LossWeights{}, AblationFlags{});
    return std::make_pair(r.step_losses, net.state());
  };
  const auto a = run(), b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("training argument checks") {
  ReconNet<float> net(toy_config(2), 1);
  TrainConfig cfg;
  CHECK_THROWS_AS(train(net, std::vector<TrainingExample>{}, MosaicScale{4}, cfg, MetricConfig{}, LossWeights{},
                        AblationFlags{}),
                  ValueError);
  cfg.kernel = 4;
  CHECK_THROWS(cfg.validate());
}

TEST_CASE("checkpoint round trip is bit exact") {
  std::mt19937_64 rng(9);
  ReconNet<float> net(toy_config(2), 5);
  // Move batch-norm running statistics away from their initial values.
  const auto examples = disc_examples(4, 32, 5);
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch = 4;
  train(net, examples, MosaicScale{4}, tc, MetricConfig{}, LossWeights{}, AblationFlags{});

  Checkpoint ck;
  ck.net = net.config();
  ck.train = tc;
  ck.train.schedule = Schedule::sgdr;
  ck.metric.score_smooth_radius = 2;
  ck.weights = LossWeights{1, 0.5, 2};
  ck.ablation = AblationFlags{false, true};
  ck.mosaic_scale = 16;
  ck.resolution = 64;
  ck.tensors = net.state();

  test::TempDir dir("ckpt");
  save_checkpoint(ck, dir.path() / "a.ckpt");
  const Checkpoint back = load_checkpoint(dir.path() / "a.ckpt");
  CHECK(back.tensors == ck.tensors);
  CHECK(back.mosaic_scale == 16);
  CHECK(back.resolution == 64);
  CHECK(back.train.schedule == Schedule::sgdr);
  CHECK(back.metric.score_smooth_radius == 2);
  CHECK(back.weights.msgms == 2.0);
  CHECK_FALSE(back.ablation.hint);
  CHECK(back.net.base_width == 2);
  CHECK(encode_checkpoint(back) == encode_checkpoint(ck));

  ReconNet<float> loaded(back.net, 999);
  loaded.load_state(back.tensors);
  const Tensor4<float> x = random_tensor<float>({1, 3, 32, 32}, rng);
  CHECK(loaded.predict(x) == net.predict(x));
}

TEST_CASE("checkpoint corruption is detected") {
  ReconNet<float> net(toy_config(1), 5);
  Checkpoint ck;
  ck.net = net.config();
  ck.tensors = net.state();
  const auto good = encode_checkpoint(ck);
  CHECK_NOTHROW(decode_checkpoint(good));
  SUBCASE("magic") {
    auto b = good;
    b[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(b), FormatError);
  }
  SUBCASE("version") {
    auto b = good;
    b[8] = 2;
    CHECK_THROWS_AS(decode_checkpoint(b), FormatError);
  }
  SUBCASE("truncated") {
    auto b = good;
    b.resize(b.size() / 2);
    CHECK_THROWS_AS(decode_checkpoint(b), FormatError);
  }
  SUBCASE("trailing bytes") {
    auto b = good;
    b.push_back(0);
    CHECK_THROWS_AS(decode_checkpoint(b), FormatError);
  }
  SUBCASE("tensor table does not fit the network") {
    Checkpoint other = ck;
    other.tensors.pop_back();
    ReconNet<float> fresh(ck.net, 1);
    CHECK_THROWS_AS(fresh.load_state(other.tensors), FormatError);
  }
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/x.ckpt"), IoError);
}

TEST_CASE("checkpoint header layout") {
  ReconNet<float> net(toy_config(1), 5);
  Checkpoint ck;
  ck.net = net.config();
  ck.tensors = net.state();
  const auto b = encode_checkpoint(ck);
  CHECK(std::string(b.begin(), b.begin() + 8) == "EARCKPT1");
  const auto u32 = [&](std::size_t at) {
    return static_cast<std::uint32_t>(b[at]) | static_cast<std::uint32_t>(b[at + 1]) << 8 |
           static_cast<std::uint32_t>(b[at + 2]) << 16 | static_cast<std::uint32_t>(b[at + 3]) << 24;
  };
  CHECK(u32(8) == 1u);
  CHECK(u32(12) == ck.tensors.size());
  const std::size_t name_len = static_cast<std::size_t>(b[16]) | static_cast<std::size_t>(b[17]) << 8;
  CHECK(std::string(b.begin() + 18, b.begin() + 18 + static_cast<long>(name_len)) == ck.tensors[0].name);
  CHECK(b[18 + name_len] == ck.tensors[0].dims.size());
}

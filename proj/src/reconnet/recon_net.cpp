#include <algorithm>
#include <cmath>
#include <map>

#include "ear/error.hpp"
#include "ear/reconnet.hpp"

namespace ear::nn {

void ReconNetConfig::validate() const {
  if (in_channels != 1 && in_channels != 3) throw ValueError("network input must have 1 or 3 channels");
  if (base_width < 1) throw ValueError("base width must be >= 1");
  if (kernel < 1 || kernel % 2 == 0) throw ValueError("kernel size must be odd");
  if (depth < 1 || depth > 8) throw ValueError("depth must be in [1,8]");
  if (static_cast<int>(multipliers.size()) < depth) throw ValueError("one width multiplier per encoder block is required");
  for (int b = 0; b < depth; ++b)
    if (multipliers[b] < 1) throw ValueError("width multipliers must be >= 1");
}

int ReconNetConfig::decoder_width(int block) const {
  return encoder_width(std::max(depth - 2 - block, 0));
}

template <class T>
ReconNet<T>::ReconNet(const ReconNetConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const int d = config_.depth;
  for (int b = 0; b < d; ++b) {
    const int cin = b == 0 ? config_.in_channels : config_.encoder_width(b - 1);
    const int cout = config_.encoder_width(b);
    const std::string prefix = "enc" + std::to_string(b);
    encoder_.push_back({make_unit(prefix + ".conv0", cin, cout, 1, true, rng),
                        make_unit(prefix + ".conv1", cout, cout, 1, true, rng),
                        make_unit(prefix + ".conv2", cout, cout, 2, true, rng)});
  }
  for (int j = 0; j < d; ++j) {
    const int cin = j == 0 ? config_.encoder_width(d - 1)
                           : config_.decoder_width(j - 1) + config_.encoder_width(d - 1 - j);
    const int width = config_.decoder_width(j);
    const bool last = j == d - 1;
    const std::string prefix = "dec" + std::to_string(j);
    decoder_.push_back({make_unit(prefix + ".conv0", cin, width, 1, true, rng),
                        make_unit(prefix + ".conv1", width, width, 1, true, rng),
                        make_unit(prefix + ".conv2", width, last ? config_.in_channels : width, 1, !last, rng)});
  }
}

template <class T>
int ReconNet<T>::add_param(const std::string& name, Shape4 shape) {
  params_.push_back(Parameter<T>{name, Tensor4<T>(shape), Tensor4<T>(shape), Tensor4<T>(shape)});
  return static_cast<int>(params_.size()) - 1;
}

template <class T>
typename ReconNet<T>::ConvUnit ReconNet<T>::make_unit(const std::string& prefix, int cin, int cout, int stride,
                                                      bool with_norm, std::mt19937_64& rng) {
  const int k = config_.kernel;
  ConvUnit unit;
  unit.stride = stride;
  unit.weight = add_param(prefix + ".weight", Shape4{cout, cin, k, k});
  unit.bias = add_param(prefix + ".bias", Shape4{1, cout, 1, 1});
  // Kaiming-uniform for leaky-ReLU.
  const double a = config_.leaky_slope;
  const double bound = std::sqrt(6.0 / ((1.0 + a * a) * cin * k * k));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (T& w : params_[unit.weight].value.span()) w = static_cast<T>(dist(rng));
  if (with_norm) {
    unit.gamma = add_param(prefix + ".bn.gamma", Shape4{1, cout, 1, 1});
    unit.beta = add_param(prefix + ".bn.beta", Shape4{1, cout, 1, 1});
    params_[unit.gamma].value.fill(T(1));
    stats_.push_back(BatchNormStats<T>{std::vector<T>(cout, T(0)), std::vector<T>(cout, T(1))});
    stats_names_.push_back(prefix + ".bn");
    unit.stats = static_cast<int>(stats_.size()) - 1;
  }
  return unit;
}

template <class T>
Var ReconNet<T>::run_unit(Tape<T>& tape, const ConvUnit& unit, Var x, bool training, bool head) {
  Var h = conv2d(tape, x, param_vars_[unit.weight], param_vars_[unit.bias], unit.stride);
  if (head) return sigmoid(tape, h);
  BatchNormOptions opts{training, config_.bn_momentum, config_.bn_eps};
  h = batch_norm(tape, h, param_vars_[unit.gamma], param_vars_[unit.beta], &stats_[unit.stats], opts);
  return leaky_relu(tape, h, static_cast<T>(config_.leaky_slope));
}

template <class T>
Var ReconNet<T>::forward(Tape<T>& tape, Var input, bool training) {
  const Shape4 s = tape.value(input).shape();
  if (s.c != config_.in_channels)
    throw DimensionError("network expects " + std::to_string(config_.in_channels) + " input channels, got " +
                         std::to_string(s.c));
  if (s.h % config_.divisor() != 0 || s.w % config_.divisor() != 0)
    throw DimensionError("input height and width must be divisible by " + std::to_string(config_.divisor()) +
                         ", got " + std::to_string(s.h) + "x" + std::to_string(s.w));
  param_vars_.clear();
  for (const auto& p : params_) param_vars_.push_back(tape.leaf(p.value, training));

  const int d = config_.depth;
  std::vector<Var> skips;
  Var h = input;
  for (int b = 0; b < d; ++b) {
    for (const ConvUnit& unit : encoder_[b]) h = run_unit(tape, unit, h, training, false);
    skips.push_back(h);
  }
  for (int j = 0; j < d; ++j) {
    if (j > 0) h = concat(tape, h, skips[d - 1 - j]);
    h = upsample_nearest2x(tape, h);
    for (int u = 0; u < 3; ++u) h = run_unit(tape, decoder_[j][u], h, training, j == d - 1 && u == 2);
  }
  return h;
}

template <class T>
Tensor4<T> ReconNet<T>::predict(const Tensor4<T>& input) {
  Tape<T> tape;
  const Var x = tape.leaf(input);
  const Var y = forward(tape, x, false);
  return tape.value(y);
}

template <class T>
void ReconNet<T>::collect_gradients(Tape<T>& tape) {
  if (param_vars_.size() != params_.size()) throw Error("collect_gradients called without a recorded forward pass");
  for (std::size_t i = 0; i < params_.size(); ++i) params_[i].grad = tape.grad(param_vars_[i]);
}

template <class T>
std::size_t ReconNet<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <class T>
std::vector<NamedTensor> ReconNet<T>::state() const {
  std::vector<NamedTensor> out;
  auto dims_of = [](const Shape4& s) {
    return std::vector<std::uint32_t>{static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c),
                                      static_cast<std::uint32_t>(s.h), static_cast<std::uint32_t>(s.w)};
  };
  for (const auto& p : params_)
    out.push_back(NamedTensor{p.name, dims_of(p.value.shape()),
                              std::vector<float>(p.value.span().begin(), p.value.span().end())});
  for (std::size_t i = 0; i < stats_.size(); ++i) {
    const auto n = static_cast<std::uint32_t>(stats_[i].running_mean.size());
    out.push_back(NamedTensor{stats_names_[i] + ".running_mean", {n},
                              std::vector<float>(stats_[i].running_mean.begin(), stats_[i].running_mean.end())});
    out.push_back(NamedTensor{stats_names_[i] + ".running_var", {n},
                              std::vector<float>(stats_[i].running_var.begin(), stats_[i].running_var.end())});
  }
  return out;
}

template <class T>
void ReconNet<T>::load_state(const std::vector<NamedTensor>& tensors) {
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t;
  auto fetch = [&](const std::string& name, std::size_t count) -> const NamedTensor& {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("checkpoint is missing tensor " + name);
    if (it->second->data.size() != count) throw FormatError("checkpoint tensor " + name + " has the wrong size");
    return *it->second;
  };
  for (auto& p : params_) {
    const NamedTensor& t = fetch(p.name, p.value.size());
    std::transform(t.data.begin(), t.data.end(), p.value.span().begin(), [](float v) { return static_cast<T>(v); });
  }
  for (std::size_t i = 0; i < stats_.size(); ++i) {
    const NamedTensor& m = fetch(stats_names_[i] + ".running_mean", stats_[i].running_mean.size());
    const NamedTensor& v = fetch(stats_names_[i] + ".running_var", stats_[i].running_var.size());
    std::transform(m.data.begin(), m.data.end(), stats_[i].running_mean.begin(), [](float x) { return static_cast<T>(x); });
    std::transform(v.data.begin(), v.data.end(), stats_[i].running_var.begin(), [](float x) { return static_cast<T>(x); });
  }
  if (tensors.size() != params_.size() + 2 * stats_.size())
    throw FormatError("checkpoint has tensors the network does not define");
}

template class ReconNet<float>;
template class ReconNet<double>;

}  // namespace ear::nn

/**
 * @file reconnet.hpp
 * @brief Encoder-decoder reconstruction network, learning-rate schedules,
 *        training loop and checkpoint format.
 *
 * Layout (depth D, default 5):
 *   encoder block b: 3 x (conv k x k -> batch-norm -> leaky-ReLU 0.2), the third conv with stride 2.
 *   decoder block j: nearest x2 upsample, then 3 convs. Block 0 consumes the deepest encoder
 *   output; block j > 0 consumes concat(decoder j-1, encoder D-1-j). Every conv is followed by
 *   batch-norm + leaky-ReLU except the last conv of the last block, which is followed by a sigmoid.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "ear/autograd.hpp"
#include "ear/image.hpp"
#include "ear/metrics.hpp"
#include "ear/obfuscate.hpp"
#include "ear/saliency.hpp"

namespace ear::nn {

struct ReconNetConfig {
  int in_channels = 3;
  int base_width = 8;
  int kernel = 3;
  int depth = 5;
  /// Encoder width of block b is base_width * multipliers[b].
  std::vector<int> multipliers = {1, 2, 4, 8, 8};
  double leaky_slope = 0.2;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;

  void validate() const;
  int encoder_width(int block) const { return base_width * multipliers[block]; }
  int decoder_width(int block) const;
  /// Spatial dimensions must be divisible by this.
  int divisor() const { return 1 << depth; }
};

template <class T>
struct Parameter {
  std::string name;
  Tensor4<T> value;
  Tensor4<T> grad;
  Tensor4<T> velocity;
};

/// Named tensor as stored in checkpoints (always float32 on disk).
struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

template <class T>
class ReconNet {
 public:
  ReconNet(const ReconNetConfig& config, std::uint64_t seed);

  const ReconNetConfig& config() const { return config_; }

  /// Records the forward pass on the tape. Parameters are added as leaves; their
  /// tape ids are remembered so collect_gradients() can read them back after backward().
  Var forward(Tape<T>& tape, Var input, bool training);

  /// Convenience inference pass (evaluation-mode batch-norm).
  Tensor4<T> predict(const Tensor4<T>& input);

  /// Copy d(loss)/d(param) from the tape into each Parameter::grad.
  void collect_gradients(Tape<T>& tape);

  std::vector<Parameter<T>>& parameters() { return params_; }
  const std::vector<Parameter<T>>& parameters() const { return params_; }
  std::size_t parameter_count() const;

  std::vector<NamedTensor> state() const;
  void load_state(const std::vector<NamedTensor>& tensors);

 private:
  struct ConvUnit {
    int weight = -1;
    int bias = -1;
    int gamma = -1;  // -1 for the sigmoid head (no batch-norm)
    int beta = -1;
    int stats = -1;
    int stride = 1;
  };

  int add_param(const std::string& name, Shape4 shape);
  ConvUnit make_unit(const std::string& prefix, int cin, int cout, int stride, bool with_norm,
                     std::mt19937_64& rng);
  Var run_unit(Tape<T>& tape, const ConvUnit& unit, Var x, bool training, bool head);

  ReconNetConfig config_;
  std::vector<Parameter<T>> params_;
  std::vector<BatchNormStats<T>> stats_;
  std::vector<std::string> stats_names_;
  std::vector<std::vector<ConvUnit>> encoder_;
  std::vector<std::vector<ConvUnit>> decoder_;
  std::vector<Var> param_vars_;
};

// Learning-rate schedules ---------------------------------------------------

enum class Schedule { fixed, warmup, sgdr };

std::string to_string(Schedule s);
Schedule parse_schedule(const std::string& text);

struct TrainConfig {
  int kernel = 3;
  double lr = 1e-3;
  Schedule schedule = Schedule::fixed;
  int warmup_steps = 100;
  /// SGDR first period in steps; 0 means one epoch.
  int sgdr_t0 = 0;
  int sgdr_tmult = 2;
  int epochs = 30;
  int batch = 8;
  std::uint64_t seed = 0;
  double momentum = 0.9;
  int base_width = 8;

  void validate() const;
};

/// Learning rate at a 0-based optimisation step. SGDR uses eta_min = lr / 100.
double lr_at(const TrainConfig& cfg, long step);

// Training ------------------------------------------------------------------

struct AblationFlags {
  /// false: masked pixels are blanked instead of mosaiced.
  bool hint = true;
  /// false: the whole image is mosaiced (no saliency mask).
  bool attention = true;
};

/// Builds I' for one image under the ablation flags.
Image corrupt_input(const Image& img, const SaliencyMask& mask, MosaicScale scale, const AblationFlags& flags);

struct TrainingExample {
  Image image;
  SaliencyMask mask;
};

struct TrainResult {
  std::vector<double> step_losses;
  std::vector<double> epoch_losses;
  long steps = 0;
};

/// Packs HWC images into an NCHW float tensor.
template <class T>
Tensor4<T> to_tensor(std::span<const Image> images);
template <class T>
Tensor4<T> to_tensor(const Image& image);
Image to_image(const Tensor4<float>& t, int n);

/// SGD with momentum on lamp(combined_loss(I, net(I'))). Single-threaded and deterministic.
TrainResult train(ReconNet<float>& net, std::span<const TrainingExample> examples, MosaicScale scale,
                  const TrainConfig& cfg, const MetricConfig& metric, const LossWeights& weights,
                  const AblationFlags& flags);

/// Reconstruct one corrupted input.
Image reconstruct(ReconNet<float>& net, const Image& corrupted);

// Checkpoints ---------------------------------------------------------------

struct Checkpoint {
  ReconNetConfig net;
  TrainConfig train;
  MetricConfig metric;
  LossWeights weights;
  AblationFlags ablation;
  int mosaic_scale = 2;
  int resolution = 0;
  std::vector<NamedTensor> tensors;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// "EARCKPT1", u32 version, u32 count, per tensor {u16 name length, name, u8 rank, u32 dims, f32 data},
// then u32 length + UTF-8 JSON of the configuration. All integers little-endian.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::vector<unsigned char> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const unsigned char> bytes);

}  // namespace ear::nn

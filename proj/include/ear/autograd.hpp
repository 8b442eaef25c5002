/**
 * @file autograd.hpp
 * @brief Minimal tape-based reverse-mode differentiation over NCHW tensors.
 *
 * Every op appends a node holding its value and a closure that scatters the
 * node's gradient into its inputs. Nodes are processed in reverse creation
 * order, so the tape is a valid topological order by construction.
 * Templated on the scalar so float drives training and double drives gradcheck.
 */
#pragma once

#include <functional>
#include <span>
#include <vector>

#include "ear/metrics.hpp"
#include "ear/tensor.hpp"

namespace ear::nn {

struct Var {
  int id = -1;
};

template <class T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, int node)>;

  Var leaf(Tensor4<T> value, bool requires_grad = false);

  /// Register an op result. The node requires grad iff any input does.
  Var push(Tensor4<T> value, std::initializer_list<Var> inputs, Backward backward);

  const Tensor4<T>& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  /// Gradient of the last backward() root with respect to v (zeros if unreached).
  const Tensor4<T>& grad(Var v);

  /// Mutable gradient slot, allocated on first touch; used by op closures.
  Tensor4<T>& grad_slot(Var v);
  bool has_grad(Var v) const { return !nodes_[v.id].grad.empty(); }

  /// Seed d(root)/d(root) = 1 for a single-element root and run the reverse sweep.
  void backward(Var root);

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    Tensor4<T> value;
    Tensor4<T> grad;
    bool requires_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

// Network primitives ------------------------------------------------------

/// Zero-padded ("same" for stride 1) 2-D convolution; weight is (Cout, Cin, k, k), bias (1, Cout, 1, 1).
template <class T>
Var conv2d(Tape<T>& tape, Var x, Var weight, Var bias, int stride);

template <class T>
struct BatchNormStats {
  std::vector<T> running_mean;
  std::vector<T> running_var;
};

struct BatchNormOptions {
  bool training = true;
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Per-channel batch normalisation; gamma and beta are (1, C, 1, 1). In training mode the
/// batch statistics are used and the running statistics (if given) are updated.
template <class T>
Var batch_norm(Tape<T>& tape, Var x, Var gamma, Var beta, BatchNormStats<T>* stats,
               const BatchNormOptions& options);

template <class T>
Var leaky_relu(Tape<T>& tape, Var x, T slope);

template <class T>
Var sigmoid(Tape<T>& tape, Var x);

template <class T>
Var upsample_nearest2x(Tape<T>& tape, Var x);

/// Channel-wise concatenation.
template <class T>
Var concat(Tape<T>& tape, Var a, Var b);

// Loss primitives ---------------------------------------------------------

/// (N,3,H,W) -> (N,1,H,W) with 0.299/0.587/0.114; single-channel input passes through.
template <class T>
Var luma(Tape<T>& tape, Var x);

/// Mean over m x m patches (partial edge patches average their actual members).
template <class T>
Var avg_pool(Tape<T>& tape, Var x, int m);

template <class T>
Var upscale_nearest(Tape<T>& tape, Var x, int height, int width);

/// Prewitt gradient magnitude per plane; the derivative at a zero magnitude is taken as 0.
template <class T>
Var prewitt_magnitude(Tape<T>& tape, Var x);

/// (2ab + c) / (a^2 + b^2 + c)
template <class T>
Var gms(Tape<T>& tape, Var a, Var b, T c);

/// Separable correlation with odd-length taps on every plane, clamp-to-edge.
template <class T>
Var window_filter(Tape<T>& tape, Var x, std::span<const T> taps);

template <class T>
Var add(Tape<T>& tape, Var a, Var b);
template <class T>
Var sub(Tape<T>& tape, Var a, Var b);
template <class T>
Var mul(Tape<T>& tape, Var a, Var b);
template <class T>
Var div(Tape<T>& tape, Var a, Var b);
template <class T>
Var scale(Tape<T>& tape, Var a, T factor);
template <class T>
Var add_scalar(Tape<T>& tape, Var a, T offset);

/// Mean of all elements as a (1,1,1,1) tensor.
template <class T>
Var mean(Tape<T>& tape, Var a);

template <class T>
Var clamp(Tape<T>& tape, Var a, T lo, T hi);

/// -log(1 - min(l, 1 - eps)) on a scalar node.
template <class T>
Var lamp(Tape<T>& tape, Var l, T eps);

// Composite losses (batch means) ------------------------------------------

template <class T>
Var l2_loss(Tape<T>& tape, Var a, Var b);

template <class T>
Var ssim_loss(Tape<T>& tape, Var a, Var b, const MetricConfig& cfg);

template <class T>
Var msgms_loss(Tape<T>& tape, Var a, Var b, const MetricConfig& cfg);

/// Weighted loss normalised by the weight sum.
template <class T>
Var combined_loss(Tape<T>& tape, Var a, Var b, const LossWeights& w, const MetricConfig& cfg);

/// lamp(combined_loss(a, b)).
template <class T>
Var training_loss(Tape<T>& tape, Var a, Var b, const LossWeights& w, const MetricConfig& cfg);

}  // namespace ear::nn

#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "ppsvae/kernels.hpp"
#include "ppsvae/tensor.hpp"

// Minimal tape-free reverse-mode autodiff. Each op allocates a node holding
// its value and a closure that pushes the node's gradient to its inputs.
namespace ppsvae::ag {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  Tensor& mutable_grad() { return node_->grad; }
  const Shape& shape() const { return node_->value.shape(); }
  int dim(std::size_t i) const { return node_->value.dim(i); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }
  const std::shared_ptr<Node>& node() const { return node_; }
  void zero_grad() { node_->grad = Tensor(); }

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Tensor value);
/// Leaf that accumulates gradients across backward passes until zero_grad().
Var parameter(Tensor value);

/// Seeds d(root)/d(root) = 1 for a single-element root and propagates.
void backward(const Var& root);

bool grad_enabled();
/// Disables graph construction on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// ---- elementwise ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var one_minus(const Var& a);
Var leaky_relu(const Var& x, double negative_slope);
Var relu(const Var& x);
/// softplus(x) + floor; the positive-scale link.
Var positive_scale(const Var& x, double floor);
Var exp(const Var& x);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }

// ---- layers ----
Var conv2d(const Var& x, const Var& weight, const Var& bias, const ConvGeometry& g);
/// x: N x F, weight: O x F, bias: O.
Var linear(const Var& x, const Var& weight, const Var& bias);
/// Normalizes each pixel's channel vector, then applies per-channel gain/bias.
Var channel_layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-6);
Var avg_pool2(const Var& x);

// ---- shape ----
Var reshape(const Var& x, Shape shape);
Var concat_channels(const std::vector<Var>& parts);
Var slice_channels(const Var& x, int start, int count);
/// N x D -> N x D x H x W, every location holding a copy of the row.
Var broadcast_spatial(const Var& a, int height, int width);
/// N x C x H x W -> N x C.
Var mean_spatial(const Var& x);
/// y: N x C x H x W times mask: N x 1 x H x W, broadcast over channels.
Var mul_channel_mask(const Var& y, const Var& mask);
/// Elementwise sum of equally shaped values.
Var sum_list(const std::vector<Var>& parts);

// ---- reductions, per batch row ----
/// Sum over all non-leading axes: N x ... -> N.
Var sum_rows(const Var& x);
/// Sum over all non-leading axes of a * b.
Var rows_dot(const Var& a, const Var& b);
/// Mean over every element, as a 1-element tensor.
Var mean_all(const Var& x);
/// N x K log-softmax along K.
Var log_softmax_rows(const Var& x);
Var softmax_rows(const Var& x);

// ---- probabilistic ----
/// Per row: sum_i weight_i * log N(x_i | mean_i, scale_i).
Var masked_gaussian_log_prob(const Var& x, const Var& mean, const Var& scale, const Var& weight);
/// Per row: KL[N(mean, scale^2) || N(0, 1)].
Var kl_std_normal(const Var& mean, const Var& scale);
/// Per row: sum_d log N(x_d | mean_d, scale_d).
Var gaussian_log_prob_rows(const Var& x, const Var& mean, const Var& scale);

/// Straight-through: value = hard + (soft - anchor), gradient flows to soft.
/// With anchor == soft the value is exactly hard.
Var straight_through(const Tensor& hard, const Var& soft, const Tensor& anchor);
/// value = indicator(round(counts) > 0) + (counts - round(counts)); identity gradient.
Var dedup_straight_through(const Var& counts);

}  // namespace ppsvae::ag

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mkr {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // sized on demand during backprop
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward;
};

}  // namespace detail

/// Dense double-precision tensor with reverse-mode gradient recording.
///
/// A Tensor is a shared handle: copies alias the same storage and graph
/// node, like the tensors of the usual deep-learning frameworks. Operations
/// never mutate their inputs; they return new tensors whose node records the
/// inputs and a backward closure whenever any input requires a gradient and
/// recording is enabled (see NoGradGuard).
///
/// Layout is row-major with the channel axis first: C×H×W for images and
/// C×D×H×W for volumes.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const { return shape().at(axis); }
  std::size_t size() const;

  std::span<const double> values() const;
  // In-place access for leaf tensors (parameter updates, test setup).
  std::span<double> mutable_values();
  double operator[](std::size_t i) const { return values()[i]; }
  double item() const;

  bool requires_grad() const;
  bool is_leaf() const;
  // Empty until a backprop reaches this tensor.
  std::span<const double> grad() const;
  void zero_grad();

  // Fresh leaf holding a copy of the values, outside any graph.
  Tensor detach(bool requires_grad = false) const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  static Tensor from_node(std::shared_ptr<detail::Node> node);

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_recording_enabled();

enum class Padding { valid, zero_same };

/// Cross-correlation with a centered kernel (no flip).
///
/// input:  [C_in, H, W] (dims = 2) or [C_in, D, H, W] (dims = 3)
/// kernel: [C_out, C_in, kH, kW] or [C_out, C_in, kD, kH, kW], odd extents
/// output: [C_out, ...]; valid shrinks each spatial extent by k - 1,
///         zero_same keeps it and reads zeros outside the input.
Tensor conv(const Tensor& input, const Tensor& kernel, Padding padding, int dims);

// Adds bias[c] to every element of channel c.
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);

// Block mean over every spatial axis (all axes after the channel axis).
Tensor pool_avg(const Tensor& x, std::size_t factor = 2);
// Replicates each cell into a factor^k block over every spatial axis.
Tensor upsample_nearest(const Tensor& x, std::size_t factor = 2);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor clamp01(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);
// x: [C, ...], gate: [1, ...] with the same spatial shape; gate broadcast over C.
Tensor mul_channel_broadcast(const Tensor& x, const Tensor& gate);

Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t count);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// (1/|Ω|) Σ w_v |a_v - b_v|, w ≡ 1 without a map. Returns a 1-element tensor.
/// The subgradient of |·| at 0 is 0.
Tensor reduce_mean_abs(const Tensor& a, const Tensor& b,
                       const std::optional<Tensor>& weight_map = std::nullopt);

/// Reverse pass from a 1-element tensor. Leaf gradients accumulate across
/// calls; call zero_grad() on parameters between steps.
void backprop(const Tensor& loss);

}  // namespace mkr

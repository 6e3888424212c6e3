#pragma once

// Dense row-major tensors with a reverse-mode differentiation record.
//
// A Tensor is a cheap handle to a shared node. Operations that consume at
// least one tensor with requires_grad() produce a node that remembers its
// inputs and a backward rule; backward() walks that record once in reverse
// topological order. Leaf gradients accumulate until zero_grad() is called.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace sgdet {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor();

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from_vector(Shape shape, std::vector<double> values);
  static Tensor scalar(double value);
  /// Matrix literal, one inner list per row.
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Direct write access; only meaningful on leaves (parameters, inputs).
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t i) const;
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  bool has_grad() const;
  /// Gradient buffer; empty span when no gradient has been accumulated.
  std::span<const double> grad() const;
  void zero_grad();

  /// Same values, no history, no gradient requirement.
  Tensor detach() const;
  /// Deep copy of the values into a fresh leaf.
  Tensor clone() const;

  bool is_leaf() const;

  // Extension hook used by ops; not intended for application code.
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs' grads.
  std::function<void(Node&)> backward;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

/// Builds the result of a custom operation. When recording is active and any
/// input requires a gradient, the backward rule is attached.
Tensor make_op_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                      std::function<void(detail::Node&)> backward);

/// True while no NoGradGuard is alive on this thread.
bool grad_mode_enabled();

/// Disables recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Tracks the smallest |pre-activation| seen by relu and add_bias_relu on this
/// thread while alive. Finite-difference checks use it to stay clear of kinks.
class ReluMarginProbe {
 public:
  ReluMarginProbe();
  ~ReluMarginProbe();
  ReluMarginProbe(const ReluMarginProbe&) = delete;
  ReluMarginProbe& operator=(const ReluMarginProbe&) = delete;

  double margin() const { return margin_; }

 private:
  double margin_;
  double* previous_;
};

// ---- operations ------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// Scalar-tensor product.
Tensor scale(const Tensor& x, double factor);
/// Multiplies every element by a 1-element tensor.
Tensor scale(const Tensor& x, const Tensor& factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor square(const Tensor& x);

/// Sum of all elements as a 1-element tensor of shape {1}.
Tensor sum(const Tensor& x);
/// Mean over one axis; the axis is removed from the shape.
Tensor mean(const Tensor& x, std::size_t axis);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
/// Half-open range [begin, end) along one axis.
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

/// Adds a vector along `axis` of a 2-D tensor: axis 0 adds bias[i] to row i,
/// axis 1 adds bias[j] to column j.
Tensor add_bias(const Tensor& x, const Tensor& bias, std::size_t axis);
/// relu(add_bias(x, bias, axis)) in one pass.
Tensor add_bias_relu(const Tensor& x, const Tensor& bias, std::size_t axis);

/// Grouped 1-D cross-correlation over the temporal axis.
///   x: [C_in x L], weight: [k x C_in/groups x C_out], output [C_out x L'].
/// Output channel o belongs to group o / (C_out/groups) and reads the input
/// channels of that group. Zero padding of `padding` samples on both sides.
Tensor grouped_conv1d(const Tensor& x, const Tensor& weight, std::size_t groups,
                      std::size_t padding);

/// Column-wise neighbour aggregation: out[:, i] = sum_k x[:, neighbors[i][k]].
/// Equals x . A for the adjacency with A[n, i] = 1 for each listed neighbour n.
Tensor gather_sum(const Tensor& x, const std::vector<std::vector<std::size_t>>& neighbors);

/// Same as gather_sum divided by each node's neighbour count.
Tensor gather_mean(const Tensor& x, const std::vector<std::vector<std::size_t>>& neighbors);

// ---- differentiation -------------------------------------------------------

/// Accumulates d(loss)/d(leaf) into every reachable leaf that requires grad.
void backward(const Tensor& loss);

/// Central-difference audit of d f / d theta.
/// Returns max_i |analytic_i - numeric_i| / max(1e-8, |analytic_i| + |numeric_i|).
/// Clears theta's gradient before and after.
double grad_check(const std::function<Tensor()>& f, Tensor& theta, double step = 1e-4);

}  // namespace sgdet

#pragma once

// Dense float64 tensors with tape-free reverse-mode differentiation.
//
// Every op returns a fresh Tensor whose node remembers its parents and a
// closure that pushes the output gradient back to them. Calling backward()
// on a scalar walks the reachable subgraph in reverse topological order.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cvcrf {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Raised by ops whose operand shapes do not conform.
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(const std::string& op, const Shape& lhs, const Shape& rhs, const std::string& detail = {});

  const std::string& op() const noexcept { return op_; }
  const Shape& lhs() const noexcept { return lhs_; }
  const Shape& rhs() const noexcept { return rhs_; }

 private:
  std::string op_;
  Shape lhs_;
  Shape rhs_;
};

/// Raised when finite checking is on and an op produced NaN or Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized iff requires_grad
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Node&)> backward;
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Only leaves may be written in place (parameters, optimizer updates).
  std::span<double> mutable_data();
  double item() const;

  bool requires_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Same values, cut from the graph.
  Tensor detach() const;
  /// Accumulates d(this)/d(leaf) into every reachable leaf that requires grad.
  void backward() const;

  bool same_node(const Tensor& other) const noexcept { return node_ == other.node_; }

  // Internal: used by the op implementations.
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// When on, every op checks its output for NaN/Inf and throws NumericError.
void set_check_finite(bool enabled);
bool check_finite_enabled();

namespace ops {

// Elementwise with NumPy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);

Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);

/// (M x K) * (K x N).
Tensor matmul(const Tensor& a, const Tensor& b);
/// x (.. x in) * weight (in x out) + bias (out).
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// NCHW input, OIHW weight, bias of length O (may be undefined).
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride, std::size_t padding);
/// Ties route the gradient to the first maximum in row-major window order.
Tensor max_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride);
/// N x C x H x W -> N x C.
Tensor global_avg_pool(const Tensor& x);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x, std::size_t axis);
/// Reduces `axis`. When `mask` is given (same numel as x) only entries with a
/// nonzero mask participate; every reduced slice needs at least one.
Tensor logsumexp(const Tensor& x, std::size_t axis, std::span<const std::uint8_t> mask = {});

Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, std::size_t axis);
Tensor mean(const Tensor& x);

Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
std::vector<Tensor> split(const Tensor& x, std::size_t axis, std::span<const std::size_t> sizes);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, std::span<const std::size_t> axes);
Tensor permute(const Tensor& x, std::initializer_list<std::size_t> axes);
Tensor transpose(const Tensor& x);

/// Rows along `axis` scaled to unit L2 norm. Slices with norm < eps become
/// zero (and get zero gradient); their count is written to `degenerate`.
Tensor l2_normalize(const Tensor& x, std::size_t axis, double eps = 1e-12, std::size_t* degenerate = nullptr);

/// q, k, v: G x T x D. softmax(q k^T / sqrt(D)) v per group.
Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v);

/// Mean over the batch of -log softmax(logits)[label].
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace ops
}  // namespace cvcrf

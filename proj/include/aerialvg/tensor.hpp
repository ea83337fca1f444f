#pragma once

// Dense row-major float64 tensors with tape-based reverse-mode autodiff.
//
// A Tensor is a cheap handle to a shared node. Operations record a node on the
// active Tape only when a Tape is installed on the current thread and at least
// one input requires grad; otherwise they run as plain value computations.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "aerialvg/rng.hpp"

namespace aerialvg {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until something flows into it
  bool requires_grad = false;
  bool is_leaf = true;
  // Propagates this node's grad into its inputs. Empty for leaves.
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor randn(Shape shape, RngState& rng, double stddev = 1.0, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t ndim() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  // Direct mutation is for leaves (parameters, optimizer updates, test probes).
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t i) const { return node_->data[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on);
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  // Value copy with no tape linkage.
  Tensor detach() const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  friend Tensor make_result(Shape, std::vector<double>, const std::vector<Tensor>&,
                            std::function<void(detail::Node&)>);
  std::shared_ptr<detail::Node> node_;
};

// Ordered record of differentiable operations. Constructing a Tape installs it
// as the current thread's recorder until it is destroyed.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Seeds d(root)/d(root) = 1 and runs every recorded node in reverse order.
  // Leaf gradients accumulate across calls; intermediate gradients are reset.
  void backward(const Tensor& root);
  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }

  static Tape* current();
  void record(std::shared_ptr<detail::Node> n) { nodes_.push_back(std::move(n)); }

 private:
  std::vector<std::shared_ptr<detail::Node>> nodes_;
  Tape* previous_;
};

// Builds an op result, wiring `backward` only when recording is active.
Tensor make_result(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                   std::function<void(detail::Node&)> backward);

// Elementwise. `b` may be a one-element tensor, broadcast against `a`.
enum class Elementwise { add, sub, mul, div, min, max };
Tensor elementwise(const Tensor& a, const Tensor& b, Elementwise kind);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);

// Unary.
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor log(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor square(const Tensor& x);

// Shape manipulation.
Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x);  // swaps the last two axes of a 2-D or 3-D tensor
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);

// Reductions to a one-element tensor, and mean over rows of a 2-D tensor.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor mean_rows(const Tensor& x);  // [N, D] -> [1, D]

// Linear algebra. matmul accepts [M,K]x[K,P] or batched [B,M,K]x[B,K,P].
Tensor matmul(const Tensor& a, const Tensor& b);
// x[N,in] * w[in,out] + bias[out]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

// Normalization over the last axis.
Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);
inline constexpr double kLayerNormEps = 1e-5;
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);

// Spatial ops on [C,H,W] maps.
// Depthwise strided conv with kernel size == stride and no padding.
// kernel is [C,s,s], or [1,s,s] to share one kernel across channels.
Tensor conv2d_down(const Tensor& x, const Tensor& kernel, std::size_t stride);
// Align-corners bilinear upsampling.
Tensor bilinear_resize(const Tensor& x, std::size_t out_h, std::size_t out_w);
// [C,H,W] -> [(H/k)*(W/k), C*k*k]; each row is one k x k patch, channel-major.
Tensor patchify(const Tensor& x, std::size_t k);

// Mean binary cross-entropy with logits against fixed 0/1 targets.
Tensor bce_with_logits(const Tensor& logits, std::span<const double> targets);
// -log_softmax(logits flattened)[index]
Tensor cross_entropy_at(const Tensor& logits, std::size_t index);

}  // namespace aerialvg

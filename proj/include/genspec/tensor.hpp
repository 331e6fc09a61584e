#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace genspec {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct Node;
}

// Dense row-major float64 tensor. Copies are shallow: two Tensor handles that
// compare equal by node() refer to the same storage and the same graph vertex.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  /// Extent along `axis`; negative axes count from the back.
  std::size_t size(int axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Direct write access. Only meaningful on leaves and untracked tensors.
  std::span<double> data_mut();
  double item() const;
  double at(std::size_t flat) const { return data()[flat]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> grad_mut();
  void zero_grad();

  /// Fresh leaf holding a copy of the values; no graph link.
  Tensor detach() const;
  Tensor clone() const { return detach(); }
  const char* op_name() const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Disables graph recording on the current thread for its lifetime.
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

// ---- elementwise (numpy-style broadcasting) ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor square(const Tensor& x);

Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
/// Rejects non-positive or non-finite inputs.
Tensor log(const Tensor& x);

// ---- linear algebra / structure ----
/// (M,K)x(K,N); (...,K)x(K,N) with leading dims flattened; (B,M,K)x(B,K,N).
Tensor matmul(const Tensor& a, const Tensor& b);
/// x: (N,C,H,W), weight: (O,C,kh,kw), bias: (O) or undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t pad);
/// Nearest-neighbour 2x spatial upsampling of (N,C,H,W).
Tensor upsample2x(const Tensor& x);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
/// Swaps the last two axes.
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t end);

// ---- reductions / normalization ----
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum(const Tensor& x, int axis);
Tensor mean(const Tensor& x, int axis);
Tensor softmax(const Tensor& x, int axis);
Tensor log_softmax(const Tensor& x, int axis);
/// Normalizes over the last axis; gamma/beta shaped (D) or undefined.
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// ---- indexing ----
/// Picks x[..., indices[r]] along the last axis; result drops that axis.
Tensor gather(const Tensor& x, const std::vector<std::size_t>& indices);
/// Rows of `table` (V,D) for each index; result shape = prefix + (D).
Tensor embed(const Tensor& table, const std::vector<std::size_t>& indices, Shape prefix);

// ---- gradient routing ----
/// Passes values, blocks gradients (sg[.]).
Tensor stop_gradient(const Tensor& x);
/// Forward value of `quantized`, gradient routed to `continuous` as identity.
Tensor straight_through(const Tensor& continuous, const Tensor& quantized);

/// Reverse-mode sweep from a single-element loss. Leaf gradients accumulate
/// across calls until zero_grad().
void backward(const Tensor& loss);

// ---- dispatch by kind, used by gradient checks and the selftest ----
enum class OpKind {
  Add, Sub, Mul, Matmul, Conv2d, Transpose, Reshape, Relu, Gelu, Sigmoid, Tanh, Exp, Log,
  Softmax, LogSoftmax, LayerNorm, Sum, Mean, SumAxis, MeanAxis, Gather, Embed, Concat, Slice,
  Upsample2x, StopGradient, StraightThrough
};

struct OpAttrs {
  int axis = -1;
  std::size_t stride = 1;
  std::size_t pad = 0;
  std::size_t start = 0;
  std::size_t end = 0;
  Shape shape;                        // reshape target / embed prefix
  std::vector<std::size_t> axes;      // permutation; empty = swap last two
  std::vector<std::size_t> indices;   // gather / embed
};

Tensor apply(OpKind kind, const std::vector<Tensor>& inputs, const OpAttrs& attrs = {});
const char* op_kind_name(OpKind kind);

}  // namespace genspec

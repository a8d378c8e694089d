#pragma once

// Dense float64 tensors with eager reverse-mode differentiation.
//
// Every op returns a fresh Tensor whose node remembers its parents and a
// closure computing the vector-Jacobian product. backward() orders the
// reachable graph into a Tape (inputs before outputs) and replays it in
// reverse. Nodes are not thread-safe; keep a graph on one thread.

#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace tsdf {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& s);
std::string shape_str(const Shape& s);

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  const char* op = "leaf";

  std::vector<double>& ensure_grad();
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(int i) const;  // negative indexes from the back
  std::size_t ndim() const { return node_->shape.size(); }
  std::size_t size() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  std::span<double> mutable_data() { return node_->data; }
  double item() const;
  double at(std::size_t flat) const { return node_->data[flat]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool r) { node_->requires_grad = r; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  /// Same values, no history.
  Tensor detach() const;
  /// Deep copy of values (and requires_grad flag), no history.
  Tensor clone() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Topologically ordered record of the graph reachable from a root.
class Tape {
 public:
  static Tape record(const Tensor& root);
  const std::vector<Node*>& nodes() const { return nodes_; }
  /// Seeds d(root)/d(root) = 1 and replays vector-Jacobian products in
  /// reverse. Intermediate grads are reset first; leaf grads accumulate.
  void run(const Tensor& root) const;

 private:
  std::vector<Node*> nodes_;
};

/// Populates grads of every requires_grad leaf reachable from `loss`.
/// Calling it again without zero_grad() accumulates into the leaves.
void backward(const Tensor& loss);

/// While alive, ops on this thread record no history.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};
bool grad_enabled();

bool all_finite(const Tensor& t);
/// Throws NumericError naming `what` if any entry is NaN or infinite.
void check_finite(const Tensor& t, const char* what);

// --- linear algebra and elementwise ----------------------------------------

/// [.., m, k] x [k, n] (shared right operand) or [b, m, k] x [b, k, n].
Tensor matmul(const Tensor& a, const Tensor& b);
/// Numpy-style broadcasting binary ops.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor square(const Tensor& a);
Tensor concat_last_dim(const std::vector<Tensor>& parts);
Tensor slice_last_dim(const Tensor& a, std::size_t start, std::size_t len);
/// Halves the last dimension; throws ShapeError when it is odd.
std::pair<Tensor, Tensor> split_last_dim(const Tensor& a);
/// Swaps the last two dimensions.
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Mean over the last dimension, keeping it as size 1.
Tensor mean_last_dim(const Tensor& a);
/// Rows of `table` ([vocab, dim]) picked by `index`; output shape index_shape + [dim].
Tensor embedding(const Tensor& table, std::span<const std::size_t> index, const Shape& index_shape);

// --- activations and normalization -----------------------------------------

Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor softmax_last_dim(const Tensor& a);
/// 1.5-entmax along the last dimension.
Tensor entmax15(const Tensor& a);
/// value half times sigmoid(gate half) of the last dimension.
Tensor glu(const Tensor& a);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
/// Inverted dropout. Identity when !train or p == 0.
Tensor dropout(const Tensor& a, double p, bool train, std::mt19937_64& rng);

Tensor mse_loss(const Tensor& pred, const Tensor& target);

/// Closed-form forward of 1.5-entmax on one row (used by the op and by reports).
void entmax15_row(std::span<const double> logits, std::span<double> out);

}  // namespace tsdf

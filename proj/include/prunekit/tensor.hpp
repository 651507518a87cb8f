#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "prunekit/errors.hpp"

namespace prunekit {

class Rng;

namespace detail {

// One record in the autograd graph. Non-leaf nodes own their parents through
// shared_ptr, so holding the loss tensor keeps the whole graph alive.
struct Node {
  std::vector<int> shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until backward() touches this node
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::size_t numel() const { return data.size(); }
  bool is_leaf() const { return parents.empty(); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

std::size_t shape_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

// Dense row-major tensor of doubles with reverse-mode autodiff. Copying a
// Tensor copies the handle, not the storage; use detached_copy() for a deep
// copy. A default-constructed Tensor is undefined and unusable until assigned.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
  static Tensor from_data(std::vector<int> shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor gaussian(std::vector<int> shape, Rng& rng, double mean, double stddev,
                         bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return checked().shape; }
  int rank() const { return static_cast<int>(checked().shape.size()); }
  int dim(int axis) const;
  std::size_t numel() const { return checked().numel(); }
  bool requires_grad() const { return checked().requires_grad; }
  bool is_leaf() const { return checked().is_leaf(); }

  // Value of a single-element tensor. ContractError otherwise.
  double item() const;

  const std::vector<double>& data() const { return checked().data; }
  // Mutable view, meant for in-place updates of leaf parameters.
  std::vector<double>& data() { return checked().data; }

  // Empty until backward() has deposited a gradient here.
  const std::vector<double>& grad() const { return checked().grad; }
  bool has_grad() const { return !checked().grad.empty(); }
  void zero_grad() { checked().grad.clear(); }

  // Fresh leaf with copied data and no lineage.
  Tensor detached_copy() const;

  std::shared_ptr<detail::Node> node() const { return node_; }

 private:
  detail::Node& checked() const;
  std::shared_ptr<detail::Node> node_;
};

// Scoped switch that stops operations from recording lineage. Forward values
// are unchanged; backward() through results computed under the guard is
// impossible. Evaluation code uses this so it never grows a graph.
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

// Topologically ordered operation records reachable from a root: every node
// appears after all of its parents.
using Graph = std::vector<std::shared_ptr<detail::Node>>;
Graph graph_of(const Tensor& root);

// ---- differentiable operations -------------------------------------------
// All operations validate shapes up front and raise DimensionError naming the
// offending shapes. Results require grad iff some input does (and lineage
// recording is enabled).

// C = op(a) * op(b) for rank-2 tensors, where op transposes when the
// corresponding flag is set. The transpose is logical; no data is moved.
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a = false,
              bool transpose_b = false);

// Elementwise sum of two same-shape tensors.
Tensor add(const Tensor& a, const Tensor& b);

// Adds a rank-1 bias along the last axis of x.
Tensor add_bias(const Tensor& x, const Tensor& bias);

// Elementwise product of two same-shape tensors.
Tensor mul(const Tensor& a, const Tensor& b);

// c * x for a plain double c.
Tensor scale(const Tensor& x, double c);

// gelu(x) = x * sigmoid(1.702 x), the tanh-free approximation.
Tensor gelu(const Tensor& x);

// Softmax along `axis`. Shifts by the axis max before exponentiating.
Tensor softmax(const Tensor& x, int axis);

// For square rank-2 scores, keeps entries with col <= row and replaces the
// rest with -1e30. Masked entries are constants: no gradient flows into them.
Tensor causal_mask(const Tensor& scores);

// Normalizes the last axis to zero mean and unit variance (population
// variance, epsilon inside the sqrt), then applies elementwise gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

// Gathers rows of a rank-2 table: out[i, :] = table[ids[i], :].
Tensor embedding_rows(const Tensor& table, std::span<const int> ids);

// Columns [start, start+width) of a rank-2 tensor.
Tensor slice_cols(const Tensor& x, int start, int width);

// Horizontal concatenation of rank-2 tensors with equal row counts.
Tensor concat_cols(const std::vector<Tensor>& parts);

// Mean over rows of -log softmax(logits)[row, target[row]]. Scalar result.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);

// Sum of all elements. Scalar result.
Tensor sum(const Tensor& x);

// Sum of |x_i| over positions where keep[i] is true. Scalar result. The
// subgradient at x_i == 0 is taken to be 0.
Tensor masked_l1(const Tensor& x, const std::vector<std::uint8_t>& keep);

// Reverse-mode sweep from a scalar loss. Gradients accumulate (+=) into every
// reachable node that requires grad, in a deterministic topological order.
void backward(const Tensor& loss);

}  // namespace prunekit

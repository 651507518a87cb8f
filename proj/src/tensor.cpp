#include "prunekit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <unordered_set>
#include <utility>

#include "prunekit/rng.hpp"

namespace prunekit {

namespace {

thread_local bool g_grad_enabled = true;

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

NodePtr make_node(std::vector<int> shape, std::vector<double> data) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  return n;
}

// Wraps an op result. Lineage is recorded only when grad mode is on and some
// parent requires grad; otherwise the result is a plain leaf-like value.
Tensor make_result(std::vector<int> shape, std::vector<double> data, const char* op,
                   std::vector<NodePtr> parents, std::function<void(Node&)> backward_fn) {
  auto n = make_node(std::move(shape), std::move(data));
  bool needs_grad = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) {
      if (p->requires_grad) {
        needs_grad = true;
        break;
      }
    }
  }
  if (needs_grad) {
    n->requires_grad = true;
    n->op = op;
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(n));
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + " expects a rank-2 tensor, got shape " +
                         shape_str(t.shape()));
  }
}

// C(M x N) = op(A) * op(B) over physical row-major buffers, accumulating into
// C when `accumulate` is set. Physical A is (K x M) when ta else (M x K);
// physical B is (N x K) when tb else (K x N).
void gemm(int m, int n, int k, const double* a, bool ta, const double* b, bool tb, double* c,
          bool accumulate) {
  if (!accumulate) std::fill(c, c + static_cast<std::size_t>(m) * n, 0.0);
  if (!ta && !tb) {
    for (int i = 0; i < m; ++i) {
      const double* arow = a + static_cast<std::size_t>(i) * k;
      double* crow = c + static_cast<std::size_t>(i) * n;
      for (int kk = 0; kk < k; ++kk) {
        const double av = arow[kk];
        const double* brow = b + static_cast<std::size_t>(kk) * n;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else if (!ta && tb) {
    for (int i = 0; i < m; ++i) {
      const double* arow = a + static_cast<std::size_t>(i) * k;
      double* crow = c + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) {
        const double* brow = b + static_cast<std::size_t>(j) * k;
        double acc = 0.0;
        for (int kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
        crow[j] += acc;
      }
    }
  } else if (ta && !tb) {
    for (int kk = 0; kk < k; ++kk) {
      const double* arow = a + static_cast<std::size_t>(kk) * m;
      const double* brow = b + static_cast<std::size_t>(kk) * n;
      for (int i = 0; i < m; ++i) {
        const double av = arow[i];
        double* crow = c + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else {
    for (int i = 0; i < m; ++i) {
      double* crow = c + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) {
        const double* brow = b + static_cast<std::size_t>(j) * k;
        double acc = 0.0;
        for (int kk = 0; kk < k; ++kk) acc += a[static_cast<std::size_t>(kk) * m + i] * brow[kk];
        crow[j] += acc;
      }
    }
  }
}

// Post-order DFS over parent edges. With `grad_only`, the walk is restricted
// to nodes that require grad (others cannot propagate anything).
Graph topo_order(const NodePtr& root, bool grad_only) {
  Graph out;
  if (!root) return out;
  if (grad_only && !root->requires_grad) return out;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<NodePtr, std::size_t>> stack;
  visited.insert(root.get());
  stack.emplace_back(root, 0);
  while (!stack.empty()) {
    auto& [node, next_parent] = stack.back();
    if (next_parent < node->parents.size()) {
      NodePtr parent = node->parents[next_parent++];
      if (grad_only && !parent->requires_grad) continue;
      if (visited.insert(parent.get()).second) stack.emplace_back(std::move(parent), 0);
    } else {
      out.push_back(node);
      stack.pop_back();
    }
  }
  return out;
}

}  // namespace

std::size_t shape_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw DimensionError("shape dimensions must be positive, got " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

detail::Node& Tensor::checked() const {
  if (!node_) throw ContractError("operation on a default-constructed Tensor");
  return *node_;
}

int Tensor::dim(int axis) const {
  const auto& s = checked().shape;
  if (axis < 0 || axis >= static_cast<int>(s.size())) {
    throw IndexError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  }
  return s[static_cast<std::size_t>(axis)];
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item() requires a single-element tensor, got shape " +
                        shape_str(shape()));
  }
  return checked().data[0];
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  auto node = make_node(std::move(shape), std::vector<double>(n, value));
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  if (data.size() != n) {
    throw DimensionError("data of size " + std::to_string(data.size()) +
                         " does not fill shape " + shape_str(shape));
  }
  auto node = make_node(std::move(shape), std::move(data));
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::gaussian(std::vector<int> shape, Rng& rng, double mean, double stddev,
                        bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i) data[i] = rng.gaussian(mean, stddev);
  auto node = make_node(std::move(shape), std::move(data));
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return full({1}, value, requires_grad);
}

Tensor Tensor::detached_copy() const {
  auto& n = checked();
  auto copy = make_node(n.shape, n.data);
  copy->requires_grad = n.requires_grad;
  return Tensor(std::move(copy));
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

bool grad_enabled() { return g_grad_enabled; }

Graph graph_of(const Tensor& root) { return topo_order(root.node(), /*grad_only=*/false); }

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a, bool transpose_b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const int m = transpose_a ? a.dim(1) : a.dim(0);
  const int ka = transpose_a ? a.dim(0) : a.dim(1);
  const int kb = transpose_b ? b.dim(1) : b.dim(0);
  const int n = transpose_b ? b.dim(0) : b.dim(1);
  if (ka != kb) {
    throw DimensionError("matmul: inner dimensions do not match: " + shape_str(a.shape()) +
                         (transpose_a ? "^T" : "") + " x " + shape_str(b.shape()) +
                         (transpose_b ? "^T" : ""));
  }
  const int k = ka;
  std::vector<double> out(static_cast<std::size_t>(m) * n);
  gemm(m, n, k, a.data().data(), transpose_a, b.data().data(), transpose_b, out.data(), false);

  NodePtr pa = a.node();
  NodePtr pb = b.node();
  auto fn = [pa, pb, transpose_a, transpose_b, m, n, k](Node& self) {
    const double* dc = self.grad.data();
    if (pa->requires_grad) {
      pa->ensure_grad();
      // dA_logical = dC * B_logical^T; transpose once more when A is stored
      // transposed so the accumulation lands in physical layout.
      if (!transpose_a) {
        gemm(m, k, n, dc, false, pb->data.data(), !transpose_b, pa->grad.data(), true);
      } else {
        gemm(k, m, n, pb->data.data(), transpose_b, dc, true, pa->grad.data(), true);
      }
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      if (!transpose_b) {
        gemm(k, n, m, pa->data.data(), !transpose_a, dc, false, pb->grad.data(), true);
      } else {
        gemm(n, k, m, dc, true, pa->data.data(), transpose_a, pb->grad.data(), true);
      }
    }
  };
  return make_result({m, n}, std::move(out), "matmul", {pa, pb}, std::move(fn));
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: shapes differ: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(a.numel());
  const auto& da = a.data();
  const auto& db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] + db[i];

  NodePtr pa = a.node();
  NodePtr pb = b.node();
  auto fn = [pa, pb](Node& self) {
    for (const NodePtr& p : {pa, pb}) {
      if (!p->requires_grad) continue;
      p->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
    }
  };
  return make_result(a.shape(), std::move(out), "add", {pa, pb}, std::move(fn));
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (bias.rank() != 1 || x.rank() < 1 || bias.dim(0) != x.shape().back()) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) +
                         " does not match last axis of " + shape_str(x.shape()));
  }
  const std::size_t d = static_cast<std::size_t>(bias.dim(0));
  const std::size_t rows = x.numel() / d;
  std::vector<double> out(x.numel());
  const auto& dx = x.data();
  const auto& db = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = dx[r * d + j] + db[j];
  }

  NodePtr px = x.node();
  NodePtr pb = bias.node();
  auto fn = [px, pb, rows, d](Node& self) {
    if (px->requires_grad) {
      px->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) px->grad[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < d; ++j) pb->grad[j] += self.grad[r * d + j];
      }
    }
  };
  return make_result(x.shape(), std::move(out), "add_bias", {px, pb}, std::move(fn));
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("mul: shapes differ: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(a.numel());
  const auto& da = a.data();
  const auto& db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] * db[i];

  NodePtr pa = a.node();
  NodePtr pb = b.node();
  auto fn = [pa, pb](Node& self) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] * pb->data[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] += self.grad[i] * pa->data[i];
    }
  };
  return make_result(a.shape(), std::move(out), "mul", {pa, pb}, std::move(fn));
}

Tensor scale(const Tensor& x, double c) {
  std::vector<double> out(x.numel());
  const auto& dx = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * dx[i];

  NodePtr px = x.node();
  auto fn = [px, c](Node& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) px->grad[i] += c * self.grad[i];
  };
  return make_result(x.shape(), std::move(out), "scale", {px}, std::move(fn));
}

Tensor gelu(const Tensor& x) {
  std::vector<double> out(x.numel());
  const auto& dx = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double s = 1.0 / (1.0 + std::exp(-1.702 * dx[i]));
    out[i] = dx[i] * s;
  }

  NodePtr px = x.node();
  auto fn = [px](Node& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double v = px->data[i];
      const double s = 1.0 / (1.0 + std::exp(-1.702 * v));
      px->grad[i] += self.grad[i] * (s + v * 1.702 * s * (1.0 - s));
    }
  };
  return make_result(x.shape(), std::move(out), "gelu", {px}, std::move(fn));
}

Tensor softmax(const Tensor& x, int axis) {
  if (axis < 0 || axis >= x.rank()) {
    throw ContractError("softmax: axis " + std::to_string(axis) + " out of range for shape " +
                        shape_str(x.shape()));
  }
  const auto& shape = x.shape();
  const std::size_t n_axis = static_cast<std::size_t>(shape[static_cast<std::size_t>(axis)]);
  std::size_t inner = 1;
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) {
    inner *= static_cast<std::size_t>(shape[i]);
  }
  const std::size_t outer = x.numel() / (n_axis * inner);
  std::vector<double> out(x.numel());
  const auto& dx = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n_axis * inner + in;
      double mx = dx[base];
      for (std::size_t j = 1; j < n_axis; ++j) mx = std::max(mx, dx[base + j * inner]);
      double denom = 0.0;
      for (std::size_t j = 0; j < n_axis; ++j) {
        const double e = std::exp(dx[base + j * inner] - mx);
        out[base + j * inner] = e;
        denom += e;
      }
      for (std::size_t j = 0; j < n_axis; ++j) out[base + j * inner] /= denom;
    }
  }

  NodePtr px = x.node();
  auto fn = [px, n_axis, inner, outer](Node& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    // dx_j = y_j * (g_j - sum_k y_k g_k) per softmax lane.
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n_axis * inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < n_axis; ++j) {
          dot += self.data[base + j * inner] * self.grad[base + j * inner];
        }
        for (std::size_t j = 0; j < n_axis; ++j) {
          const std::size_t idx = base + j * inner;
          px->grad[idx] += self.data[idx] * (self.grad[idx] - dot);
        }
      }
    }
  };
  return make_result(shape, std::move(out), "softmax", {px}, std::move(fn));
}

Tensor causal_mask(const Tensor& scores) {
  require_rank2(scores, "causal_mask");
  if (scores.dim(0) != scores.dim(1)) {
    throw ContractError("causal_mask requires a square score matrix, got shape " +
                        shape_str(scores.shape()));
  }
  const std::size_t n = static_cast<std::size_t>(scores.dim(0));
  std::vector<double> out(scores.numel());
  const auto& dx = scores.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] = (j <= i) ? dx[i * n + j] : -1e30;
    }
  }

  NodePtr px = scores.node();
  auto fn = [px, n](Node& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j <= i; ++j) px->grad[i * n + j] += self.grad[i * n + j];
    }
  };
  return make_result(scores.shape(), std::move(out), "causal_mask", {px}, std::move(fn));
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() < 1) throw DimensionError("layer_norm: input must have rank >= 1");
  const int d_last = x.shape().back();
  if (gain.rank() != 1 || bias.rank() != 1 || gain.dim(0) != d_last || bias.dim(0) != d_last) {
    throw DimensionError("layer_norm: gain " + shape_str(gain.shape()) + " and bias " +
                         shape_str(bias.shape()) + " must match last axis of " +
                         shape_str(x.shape()));
  }
  const std::size_t d = static_cast<std::size_t>(d_last);
  const std::size_t rows = x.numel() / d;
  std::vector<double> out(x.numel());
  std::vector<double> inv_stddev(rows);
  std::vector<double> mean(rows);
  const auto& dx = x.data();
  const auto& dg = gain.data();
  const auto& db = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = dx.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    mean[r] = mu;
    inv_stddev[r] = inv;
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = dg[j] * (row[j] - mu) * inv + db[j];
  }

  NodePtr px = x.node();
  NodePtr pg = gain.node();
  NodePtr pb = bias.node();
  auto fn = [px, pg, pb, rows, d, mean = std::move(mean),
             inv_stddev = std::move(inv_stddev)](Node& self) {
    std::vector<double> xhat(d);
    std::vector<double> dxhat(d);
    if (px->requires_grad) px->ensure_grad();
    if (pg->requires_grad) pg->ensure_grad();
    if (pb->requires_grad) pb->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* row = px->data.data() + r * d;
      const double* g_out = self.grad.data() + r * d;
      const double inv = inv_stddev[r];
      for (std::size_t j = 0; j < d; ++j) {
        xhat[j] = (row[j] - mean[r]) * inv;
        dxhat[j] = g_out[j] * pg->data[j];
      }
      if (pg->requires_grad) {
        for (std::size_t j = 0; j < d; ++j) pg->grad[j] += g_out[j] * xhat[j];
      }
      if (pb->requires_grad) {
        for (std::size_t j = 0; j < d; ++j) pb->grad[j] += g_out[j];
      }
      if (px->requires_grad) {
        double sum1 = 0.0;
        double sum2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          sum1 += dxhat[j];
          sum2 += dxhat[j] * xhat[j];
        }
        const double inv_d = 1.0 / static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j) {
          px->grad[r * d + j] += inv * (dxhat[j] - sum1 * inv_d - xhat[j] * sum2 * inv_d);
        }
      }
    }
  };
  return make_result(x.shape(), std::move(out), "layer_norm", {px, pg, pb}, std::move(fn));
}

Tensor embedding_rows(const Tensor& table, std::span<const int> ids) {
  require_rank2(table, "embedding_rows");
  const int v = table.dim(0);
  const std::size_t d = static_cast<std::size_t>(table.dim(1));
  std::vector<int> ids_copy(ids.begin(), ids.end());
  for (int id : ids_copy) {
    if (id < 0 || id >= v) {
      throw IndexError("embedding_rows: id " + std::to_string(id) + " out of range [0," +
                       std::to_string(v) + ")");
    }
  }
  const std::size_t n = ids_copy.size();
  std::vector<double> out(n * d);
  const auto& dt = table.data();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t src = static_cast<std::size_t>(ids_copy[i]) * d;
    std::copy(dt.begin() + src, dt.begin() + src + d, out.begin() + i * d);
  }

  NodePtr pt = table.node();
  auto fn = [pt, ids_copy = std::move(ids_copy), d](Node& self) {
    if (!pt->requires_grad) return;
    pt->ensure_grad();
    for (std::size_t i = 0; i < ids_copy.size(); ++i) {
      const std::size_t dst = static_cast<std::size_t>(ids_copy[i]) * d;
      for (std::size_t j = 0; j < d; ++j) pt->grad[dst + j] += self.grad[i * d + j];
    }
  };
  return make_result({static_cast<int>(n), static_cast<int>(d)}, std::move(out),
                     "embedding_rows", {pt}, std::move(fn));
}

Tensor slice_cols(const Tensor& x, int start, int width) {
  require_rank2(x, "slice_cols");
  const int rows = x.dim(0);
  const int cols = x.dim(1);
  if (start < 0 || width <= 0 || start + width > cols) {
    throw ContractError("slice_cols: columns [" + std::to_string(start) + "," +
                        std::to_string(start + width) + ") out of range for shape " +
                        shape_str(x.shape()));
  }
  std::vector<double> out(static_cast<std::size_t>(rows) * width);
  const auto& dx = x.data();
  for (int r = 0; r < rows; ++r) {
    const std::size_t src = static_cast<std::size_t>(r) * cols + start;
    std::copy(dx.begin() + src, dx.begin() + src + width,
              out.begin() + static_cast<std::size_t>(r) * width);
  }

  NodePtr px = x.node();
  auto fn = [px, rows, cols, start, width](Node& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    for (int r = 0; r < rows; ++r) {
      for (int j = 0; j < width; ++j) {
        px->grad[static_cast<std::size_t>(r) * cols + start + j] +=
            self.grad[static_cast<std::size_t>(r) * width + j];
      }
    }
  };
  return make_result({rows, width}, std::move(out), "slice_cols", {px}, std::move(fn));
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: empty part list");
  const int rows = parts.front().dim(0);
  int cols = 0;
  for (const Tensor& p : parts) {
    require_rank2(p, "concat_cols");
    if (p.dim(0) != rows) {
      throw DimensionError("concat_cols: row counts differ: " + shape_str(parts.front().shape()) +
                           " vs " + shape_str(p.shape()));
    }
    cols += p.dim(1);
  }
  std::vector<double> out(static_cast<std::size_t>(rows) * cols);
  std::vector<int> widths;
  std::vector<NodePtr> parents;
  int offset = 0;
  for (const Tensor& p : parts) {
    const int w = p.dim(1);
    const auto& dp = p.data();
    for (int r = 0; r < rows; ++r) {
      std::copy(dp.begin() + static_cast<std::size_t>(r) * w,
                dp.begin() + static_cast<std::size_t>(r) * w + w,
                out.begin() + static_cast<std::size_t>(r) * cols + offset);
    }
    widths.push_back(w);
    parents.push_back(p.node());
    offset += w;
  }

  auto fn = [parents, widths, rows, cols](Node& self) {
    int off = 0;
    for (std::size_t pi = 0; pi < parents.size(); ++pi) {
      const int w = widths[pi];
      const NodePtr& p = parents[pi];
      if (p->requires_grad) {
        p->ensure_grad();
        for (int r = 0; r < rows; ++r) {
          for (int j = 0; j < w; ++j) {
            p->grad[static_cast<std::size_t>(r) * w + j] +=
                self.grad[static_cast<std::size_t>(r) * cols + off + j];
          }
        }
      }
      off += w;
    }
  };
  return make_result({rows, cols}, std::move(out), "concat_cols", parents, std::move(fn));
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  require_rank2(logits, "cross_entropy");
  const int n = logits.dim(0);
  const int v = logits.dim(1);
  if (static_cast<std::size_t>(n) != targets.size()) {
    throw ContractError("cross_entropy: " + std::to_string(n) + " logit rows vs " +
                        std::to_string(targets.size()) + " targets");
  }
  std::vector<int> tgt(targets.begin(), targets.end());
  for (int t : tgt) {
    if (t < 0 || t >= v) {
      throw IndexError("cross_entropy: target " + std::to_string(t) + " out of range [0," +
                       std::to_string(v) + ")");
    }
  }
  const auto& dl = logits.data();
  double total = 0.0;
  for (int r = 0; r < n; ++r) {
    const double* row = dl.data() + static_cast<std::size_t>(r) * v;
    double mx = row[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int j = 0; j < v; ++j) denom += std::exp(row[j] - mx);
    total += std::log(denom) + mx - row[tgt[static_cast<std::size_t>(r)]];
  }
  total /= static_cast<double>(n);

  NodePtr pl = logits.node();
  auto fn = [pl, tgt = std::move(tgt), n, v](Node& self) {
    if (!pl->requires_grad) return;
    pl->ensure_grad();
    const double g = self.grad[0] / static_cast<double>(n);
    for (int r = 0; r < n; ++r) {
      const double* row = pl->data.data() + static_cast<std::size_t>(r) * v;
      double* grow = pl->grad.data() + static_cast<std::size_t>(r) * v;
      double mx = row[0];
      for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
      double denom = 0.0;
      for (int j = 0; j < v; ++j) denom += std::exp(row[j] - mx);
      for (int j = 0; j < v; ++j) {
        const double p = std::exp(row[j] - mx) / denom;
        grow[j] += g * (p - (j == tgt[static_cast<std::size_t>(r)] ? 1.0 : 0.0));
      }
    }
  };
  return make_result({1}, {total}, "cross_entropy", {pl}, std::move(fn));
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;

  NodePtr px = x.node();
  auto fn = [px](Node& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    const double g = self.grad[0];
    for (double& gv : px->grad) gv += g;
  };
  return make_result({1}, {total}, "sum", {px}, std::move(fn));
}

Tensor masked_l1(const Tensor& x, const std::vector<std::uint8_t>& keep) {
  if (keep.size() != x.numel()) {
    throw ContractError("masked_l1: mask of size " + std::to_string(keep.size()) +
                        " does not cover shape " + shape_str(x.shape()));
  }
  const auto& dx = x.data();
  double total = 0.0;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    if (keep[i]) total += std::abs(dx[i]);
  }

  NodePtr px = x.node();
  auto fn = [px, keep](Node& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    const double g = self.grad[0];
    for (std::size_t i = 0; i < keep.size(); ++i) {
      if (!keep[i]) continue;
      const double v = px->data[i];
      if (v > 0.0) {
        px->grad[i] += g;
      } else if (v < 0.0) {
        px->grad[i] -= g;
      }
      // subgradient at 0 is 0: nothing to add
    }
  };
  return make_result({1}, {total}, "masked_l1", {px}, std::move(fn));
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw ContractError("backward: undefined tensor");
  if (loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  NodePtr root = loss.node();
  if (!root->requires_grad) return;  // nothing reachable wants a gradient
  Graph order = topo_order(root, /*grad_only=*/true);
  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
}

}  // namespace prunekit

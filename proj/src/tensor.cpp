// cyclevc/tensor.cpp

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include "cyclevc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace cyclevc {

namespace {

using NodeRef = std::shared_ptr<TensorNode>;

NodeRef make_node(std::vector<int> shape, std::vector<double> v) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->v = std::move(v);
  return n;
}

int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

void check(bool cond, const std::string& msg) {
  if (!cond) throw std::runtime_error(msg);
}

// Builds a result node wired to its parents; requires_grad is inherited.
Tensor wire(std::vector<int> shape, std::vector<double> v,
            std::vector<Tensor> parents,
            std::function<void(TensorNode&)> backward_fn) {
  auto n = make_node(std::move(shape), std::move(v));
  for (const auto& p : parents) {
    n->parents.push_back(p.node());
    if (p.node()->requires_grad) n->requires_grad = true;
  }
  if (n->requires_grad) n->backward_fn = std::move(backward_fn);
  return Tensor(n);
}

// Gradient accumulation helper: only touches parents that track gradients.
bool wants_grad(const NodeRef& p) { return p->requires_grad; }

constexpr double kLogZero = -1e30;

double log_add(double a, double b) {
  if (a <= kLogZero / 2) return b;
  if (b <= kLogZero / 2) return a;
  double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

}  // namespace

// ---------------------------------------------------------------- Tensor

Tensor Tensor::zeros(int rows, int cols, bool requires_grad) {
  auto n = make_node({rows, cols},
                     std::vector<double>(static_cast<size_t>(rows) * cols, 0.0));
  n->requires_grad = requires_grad;
  n->leaf = true;
  return Tensor(n);
}

Tensor Tensor::full(int rows, int cols, double value) {
  auto n = make_node({rows, cols},
                     std::vector<double>(static_cast<size_t>(rows) * cols, value));
  n->leaf = true;
  return Tensor(n);
}

Tensor Tensor::from(std::vector<double> values, int rows, int cols,
                    bool requires_grad) {
  check(static_cast<int64_t>(values.size()) == int64_t(rows) * cols,
        "Tensor::from: value count does not match shape");
  auto n = make_node({rows, cols}, std::move(values));
  n->requires_grad = requires_grad;
  n->leaf = true;
  return Tensor(n);
}

Tensor Tensor::from_shape(std::vector<double> values, std::vector<int> shape) {
  check(static_cast<int64_t>(values.size()) == shape_numel(shape),
        "Tensor::from_shape: value count does not match shape");
  auto n = make_node(std::move(shape), std::move(values));
  n->leaf = true;
  return Tensor(n);
}

Tensor Tensor::scalar(double value) { return from({value}, 1, 1); }

Tensor Tensor::param(std::vector<double> values, int rows, int cols) {
  Tensor t = from(std::move(values), rows, cols, true);
  return t;
}

int Tensor::rows() const {
  check(node_->shape.size() == 2, "rows(): tensor is not 2-D");
  return node_->shape[0];
}

int Tensor::cols() const {
  check(node_->shape.size() == 2, "cols(): tensor is not 2-D");
  return node_->shape[1];
}

double Tensor::operator()(int r, int c) const {
  return node_->v[static_cast<size_t>(r) * cols() + c];
}

double Tensor::item() const {
  check(node_->numel() == 1, "item(): tensor is not a scalar");
  return node_->v[0];
}

void Tensor::set_requires_grad(bool rg) { node_->requires_grad = rg; }

double Tensor::grad_at(int r, int c) const {
  check(node_->g.size() == node_->v.size(), "grad_at(): gradient not computed");
  return node_->g[static_cast<size_t>(r) * cols() + c];
}

void Tensor::zero_grad() { node_->g.assign(node_->v.size(), 0.0); }

void Tensor::backward(bool free_graph) {
  check(node_->numel() == 1, "backward(): root must be a scalar");
  // Iterative topo sort.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  std::vector<std::pair<TensorNode*, size_t>> stack;
  stack.push_back({node_.get(), 0});
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      TensorNode* p = n->parents[idx].get();
      ++idx;
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (TensorNode* n : order) n->ensure_grad();
  node_->g[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
  if (free_graph) {
    for (TensorNode* n : order) {
      if (!n->leaf) {
        n->parents.clear();
        n->backward_fn = nullptr;
      }
    }
  }
}

// ---------------------------------------------------------------- elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  check(a.shape() == b.shape(), "add: shape mismatch");
  std::vector<double> v(a.values());
  const auto& bv = b.values();
  for (size_t i = 0; i < v.size(); ++i) v[i] += bv[i];
  return wire(a.shape(), std::move(v), {a, b}, [](TensorNode& n) {
    for (int side = 0; side < 2; ++side) {
      auto& p = n.parents[side];
      if (!wants_grad(p)) continue;
      p->ensure_grad();
      for (size_t i = 0; i < n.g.size(); ++i) p->g[i] += n.g[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check(a.shape() == b.shape(), "sub: shape mismatch");
  std::vector<double> v(a.values());
  const auto& bv = b.values();
  for (size_t i = 0; i < v.size(); ++i) v[i] -= bv[i];
  return wire(a.shape(), std::move(v), {a, b}, [](TensorNode& n) {
    auto& pa = n.parents[0];
    auto& pb = n.parents[1];
    if (wants_grad(pa)) {
      pa->ensure_grad();
      for (size_t i = 0; i < n.g.size(); ++i) pa->g[i] += n.g[i];
    }
    if (wants_grad(pb)) {
      pb->ensure_grad();
      for (size_t i = 0; i < n.g.size(); ++i) pb->g[i] -= n.g[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check(a.shape() == b.shape(), "mul: shape mismatch");
  std::vector<double> v(a.values());
  const auto& bv = b.values();
  for (size_t i = 0; i < v.size(); ++i) v[i] *= bv[i];
  return wire(a.shape(), std::move(v), {a, b}, [](TensorNode& n) {
    auto& pa = n.parents[0];
    auto& pb = n.parents[1];
    if (wants_grad(pa)) {
      pa->ensure_grad();
      for (size_t i = 0; i < n.g.size(); ++i) pa->g[i] += n.g[i] * pb->v[i];
    }
    if (wants_grad(pb)) {
      pb->ensure_grad();
      for (size_t i = 0; i < n.g.size(); ++i) pb->g[i] += n.g[i] * pa->v[i];
    }
  });
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> v(a.values());
  for (double& x : v) x *= c;
  return wire(a.shape(), std::move(v), {a}, [c](TensorNode& n) {
    auto& p = n.parents[0];
    if (!wants_grad(p)) return;
    p->ensure_grad();
    for (size_t i = 0; i < n.g.size(); ++i) p->g[i] += c * n.g[i];
  });
}

Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> v(a.values());
  for (double& x : v) x += c;
  return wire(a.shape(), std::move(v), {a}, [](TensorNode& n) {
    auto& p = n.parents[0];
    if (!wants_grad(p)) return;
    p->ensure_grad();
    for (size_t i = 0; i < n.g.size(); ++i) p->g[i] += n.g[i];
  });
}

Tensor silu(const Tensor& a) {
  std::vector<double> v(a.values());
  for (double& x : v) x = x / (1.0 + std::exp(-x));
  return wire(a.shape(), std::move(v), {a}, [](TensorNode& n) {
    auto& p = n.parents[0];
    if (!wants_grad(p)) return;
    p->ensure_grad();
    for (size_t i = 0; i < n.g.size(); ++i) {
      double x = p->v[i];
      double s = 1.0 / (1.0 + std::exp(-x));
      p->g[i] += n.g[i] * s * (1.0 + x * (1.0 - s));
    }
  });
}

Tensor sigmoid(const Tensor& a) {
  std::vector<double> v(a.values());
  for (double& x : v) x = 1.0 / (1.0 + std::exp(-x));
  return wire(a.shape(), std::move(v), {a}, [](TensorNode& n) {
    auto& p = n.parents[0];
    if (!wants_grad(p)) return;
    p->ensure_grad();
    for (size_t i = 0; i < n.g.size(); ++i) {
      double s = n.v[i];
      p->g[i] += n.g[i] * s * (1.0 - s);
    }
  });
}

Tensor add_rowvec(const Tensor& x, const Tensor& b) {
  check(b.rows() == 1 && b.cols() == x.cols(), "add_rowvec: shape mismatch");
  const int rows = x.rows(), cols = x.cols();
  std::vector<double> v(x.values());
  const auto& bv = b.values();
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) v[static_cast<size_t>(r) * cols + c] += bv[c];
  return wire(x.shape(), std::move(v), {x, b}, [rows, cols](TensorNode& n) {
    auto& px = n.parents[0];
    auto& pb = n.parents[1];
    if (wants_grad(px)) {
      px->ensure_grad();
      for (size_t i = 0; i < n.g.size(); ++i) px->g[i] += n.g[i];
    }
    if (wants_grad(pb)) {
      pb->ensure_grad();
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
          pb->g[c] += n.g[static_cast<size_t>(r) * cols + c];
    }
  });
}

// ---------------------------------------------------------------- matrix

Tensor matmul(const Tensor& a, const Tensor& b) {
  check(a.cols() == b.rows(), "matmul: inner dimension mismatch");
  const int m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> v(static_cast<size_t>(m) * n, 0.0);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      double aip = av[static_cast<size_t>(i) * k + p];
      if (aip == 0.0) continue;
      const double* brow = &bv[static_cast<size_t>(p) * n];
      double* vrow = &v[static_cast<size_t>(i) * n];
      for (int j = 0; j < n; ++j) vrow[j] += aip * brow[j];
    }
  return wire({m, n}, std::move(v), {a, b}, [m, k, n](TensorNode& nd) {
    auto& pa = nd.parents[0];
    auto& pb = nd.parents[1];
    if (wants_grad(pa)) {
      pa->ensure_grad();
      // gA = gO * B^T
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          double go = nd.g[static_cast<size_t>(i) * n + j];
          if (go == 0.0) continue;
          const double* bcol = &pb->v[j];
          double* garow = &pa->g[static_cast<size_t>(i) * k];
          for (int p = 0; p < k; ++p) garow[p] += go * bcol[static_cast<size_t>(p) * n];
        }
    }
    if (wants_grad(pb)) {
      pb->ensure_grad();
      // gB = A^T * gO
      for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
          double aip = pa->v[static_cast<size_t>(i) * k + p];
          if (aip == 0.0) continue;
          const double* grow = &nd.g[static_cast<size_t>(i) * n];
          double* gbrow = &pb->g[static_cast<size_t>(p) * n];
          for (int j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
        }
    }
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  check(a.cols() == b.cols(), "matmul_nt: inner dimension mismatch");
  const int m = a.rows(), k = a.cols(), n = b.rows();
  std::vector<double> v(static_cast<size_t>(m) * n, 0.0);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      const double* arow = &av[static_cast<size_t>(i) * k];
      const double* brow = &bv[static_cast<size_t>(j) * k];
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
      v[static_cast<size_t>(i) * n + j] = s;
    }
  return wire({m, n}, std::move(v), {a, b}, [m, k, n](TensorNode& nd) {
    auto& pa = nd.parents[0];
    auto& pb = nd.parents[1];
    if (wants_grad(pa)) {
      pa->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          double go = nd.g[static_cast<size_t>(i) * n + j];
          if (go == 0.0) continue;
          const double* brow = &pb->v[static_cast<size_t>(j) * k];
          double* garow = &pa->g[static_cast<size_t>(i) * k];
          for (int p = 0; p < k; ++p) garow[p] += go * brow[p];
        }
    }
    if (wants_grad(pb)) {
      pb->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          double go = nd.g[static_cast<size_t>(i) * n + j];
          if (go == 0.0) continue;
          const double* arow = &pa->v[static_cast<size_t>(i) * k];
          double* gbrow = &pb->g[static_cast<size_t>(j) * k];
          for (int p = 0; p < k; ++p) gbrow[p] += go * arow[p];
        }
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_rowvec(matmul(x, w), b);
}

// ------------------------------------------------------- normalization etc.

Tensor softmax_rows(const Tensor& x) {
  const int rows = x.rows(), cols = x.cols();
  std::vector<double> v(x.values());
  for (int r = 0; r < rows; ++r) {
    double* row = &v[static_cast<size_t>(r) * cols];
    double m = row[0];
    for (int c = 1; c < cols; ++c) m = std::max(m, row[c]);
    double s = 0.0;
    for (int c = 0; c < cols; ++c) {
      row[c] = std::exp(row[c] - m);
      s += row[c];
    }
    for (int c = 0; c < cols; ++c) row[c] /= s;
  }
  return wire(x.shape(), std::move(v), {x}, [rows, cols](TensorNode& n) {
    auto& p = n.parents[0];
    if (!wants_grad(p)) return;
    p->ensure_grad();
    for (int r = 0; r < rows; ++r) {
      const double* y = &n.v[static_cast<size_t>(r) * cols];
      const double* gy = &n.g[static_cast<size_t>(r) * cols];
      double dot = 0.0;
      for (int c = 0; c < cols; ++c) dot += y[c] * gy[c];
      double* gx = &p->g[static_cast<size_t>(r) * cols];
      for (int c = 0; c < cols; ++c) gx[c] += (gy[c] - dot) * y[c];
    }
  });
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       double eps) {
  const int rows = x.rows(), cols = x.cols();
  check(gamma.rows() == 1 && gamma.cols() == cols, "layer_norm: gamma shape");
  check(beta.rows() == 1 && beta.cols() == cols, "layer_norm: beta shape");
  std::vector<double> v(static_cast<size_t>(rows) * cols);
  const auto& xv = x.values();
  const auto& gv = gamma.values();
  const auto& bv = beta.values();
  for (int r = 0; r < rows; ++r) {
    const double* row = &xv[static_cast<size_t>(r) * cols];
    double mean = 0.0;
    for (int c = 0; c < cols; ++c) mean += row[c];
    mean /= cols;
    double var = 0.0;
    for (int c = 0; c < cols; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= cols;
    double inv = 1.0 / std::sqrt(var + eps);
    double* out = &v[static_cast<size_t>(r) * cols];
    for (int c = 0; c < cols; ++c)
      out[c] = gv[c] * (row[c] - mean) * inv + bv[c];
  }
  return wire(x.shape(), std::move(v), {x, gamma, beta},
              [rows, cols, eps](TensorNode& n) {
    auto& px = n.parents[0];
    auto& pg = n.parents[1];
    auto& pb = n.parents[2];
    if (wants_grad(px)) px->ensure_grad();
    if (wants_grad(pg)) pg->ensure_grad();
    if (wants_grad(pb)) pb->ensure_grad();
    for (int r = 0; r < rows; ++r) {
      const double* row = &px->v[static_cast<size_t>(r) * cols];
      const double* gy = &n.g[static_cast<size_t>(r) * cols];
      double mean = 0.0;
      for (int c = 0; c < cols; ++c) mean += row[c];
      mean /= cols;
      double var = 0.0;
      for (int c = 0; c < cols; ++c) var += (row[c] - mean) * (row[c] - mean);
      var /= cols;
      double inv = 1.0 / std::sqrt(var + eps);
      if (wants_grad(pg) || wants_grad(pb)) {
        for (int c = 0; c < cols; ++c) {
          if (wants_grad(pg)) pg->g[c] += gy[c] * (row[c] - mean) * inv;
          if (wants_grad(pb)) pb->g[c] += gy[c];
        }
      }
      if (wants_grad(px)) {
        // dxhat = gy * gamma; classic layer-norm backward per row.
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (int c = 0; c < cols; ++c) {
          double xhat = (row[c] - mean) * inv;
          double dxhat = gy[c] * pg->v[c];
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * xhat;
        }
        double* gx = &px->g[static_cast<size_t>(r) * cols];
        for (int c = 0; c < cols; ++c) {
          double xhat = (row[c] - mean) * inv;
          double dxhat = gy[c] * pg->v[c];
          gx[c] += inv * (dxhat - sum_dxhat / cols - xhat * sum_dxhat_xhat / cols);
        }
      }
    }
  });
}

Tensor instance_norm_cols(const Tensor& x, double eps) {
  const int rows = x.rows(), cols = x.cols();
  std::vector<double> v(static_cast<size_t>(rows) * cols);
  const auto& xv = x.values();
  for (int c = 0; c < cols; ++c) {
    double mean = 0.0;
    for (int r = 0; r < rows; ++r) mean += xv[static_cast<size_t>(r) * cols + c];
    mean /= rows;
    double var = 0.0;
    for (int r = 0; r < rows; ++r) {
      double d = xv[static_cast<size_t>(r) * cols + c] - mean;
      var += d * d;
    }
    var /= rows;
    double inv = 1.0 / std::sqrt(var + eps);
    for (int r = 0; r < rows; ++r)
      v[static_cast<size_t>(r) * cols + c] =
          (xv[static_cast<size_t>(r) * cols + c] - mean) * inv;
  }
  return wire(x.shape(), std::move(v), {x}, [rows, cols, eps](TensorNode& n) {
    auto& p = n.parents[0];
    if (!wants_grad(p)) return;
    p->ensure_grad();
    for (int c = 0; c < cols; ++c) {
      double mean = 0.0;
      for (int r = 0; r < rows; ++r) mean += p->v[static_cast<size_t>(r) * cols + c];
      mean /= rows;
      double var = 0.0;
      for (int r = 0; r < rows; ++r) {
        double d = p->v[static_cast<size_t>(r) * cols + c] - mean;
        var += d * d;
      }
      var /= rows;
      double inv = 1.0 / std::sqrt(var + eps);
      double sum_g = 0.0, sum_g_xhat = 0.0;
      for (int r = 0; r < rows; ++r) {
        double gy = n.g[static_cast<size_t>(r) * cols + c];
        double xhat = (p->v[static_cast<size_t>(r) * cols + c] - mean) * inv;
        sum_g += gy;
        sum_g_xhat += gy * xhat;
      }
      for (int r = 0; r < rows; ++r) {
        double gy = n.g[static_cast<size_t>(r) * cols + c];
        double xhat = (p->v[static_cast<size_t>(r) * cols + c] - mean) * inv;
        p->g[static_cast<size_t>(r) * cols + c] +=
            inv * (gy - sum_g / rows - xhat * sum_g_xhat / rows);
      }
    }
  });
}

Tensor relpos_bias(const Tensor& table, int head, int t_query, int t_key) {
  check(table.shape().size() == 2, "relpos_bias: table must be 2-D");
  const int window = table.cols();
  check(window % 2 == 1, "relpos_bias: table width must be odd");
  const int radius = (window - 1) / 2;
  check(head >= 0 && head < table.rows(), "relpos_bias: head out of range");
  std::vector<double> v(static_cast<size_t>(t_query) * t_key);
  const auto& tv = table.values();
  for (int i = 0; i < t_query; ++i)
    for (int j = 0; j < t_key; ++j) {
      int rel = std::clamp(j - i, -radius, radius) + radius;
      v[static_cast<size_t>(i) * t_key + j] =
          tv[static_cast<size_t>(head) * window + rel];
    }
  return wire({t_query, t_key}, std::move(v), {table},
              [head, t_query, t_key, radius, window](TensorNode& n) {
    auto& p = n.parents[0];
    if (!wants_grad(p)) return;
    p->ensure_grad();
    for (int i = 0; i < t_query; ++i)
      for (int j = 0; j < t_key; ++j) {
        int rel = std::clamp(j - i, -radius, radius) + radius;
        p->g[static_cast<size_t>(head) * window + rel] +=
            n.g[static_cast<size_t>(i) * t_key + j];
      }
  });
}

// ---------------------------------------------------------------- conv

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, int c_in,
              int kernel, int stride) {
  check(kernel % 2 == 1, "conv1d: kernel must be odd");
  check(x.cols() == c_in, "conv1d: input channel mismatch");
  const int t_in = x.rows();
  const int c_out = w.rows();
  check(w.cols() == c_in * kernel, "conv1d: weight shape mismatch");
  check(b.rows() == 1 && b.cols() == c_out, "conv1d: bias shape mismatch");
  const int pad = (kernel - 1) / 2;
  const int t_out = (t_in + 2 * pad - kernel) / stride + 1;
  check(t_out >= 1, "conv1d: empty output");
  std::vector<double> v(static_cast<size_t>(t_out) * c_out);
  const auto& xv = x.values();
  const auto& wv = w.values();
  const auto& bv = b.values();
  for (int t = 0; t < t_out; ++t) {
    double* out = &v[static_cast<size_t>(t) * c_out];
    for (int o = 0; o < c_out; ++o) out[o] = bv[o];
    for (int k = 0; k < kernel; ++k) {
      int s = t * stride + k - pad;
      if (s < 0 || s >= t_in) continue;
      const double* xrow = &xv[static_cast<size_t>(s) * c_in];
      for (int o = 0; o < c_out; ++o) {
        const double* wrow = &wv[static_cast<size_t>(o) * c_in * kernel + static_cast<size_t>(k) * c_in];
        double acc = 0.0;
        for (int ci = 0; ci < c_in; ++ci) acc += wrow[ci] * xrow[ci];
        out[o] += acc;
      }
    }
  }
  return wire({t_out, c_out}, std::move(v), {x, w, b},
              [t_in, t_out, c_in, c_out, kernel, stride](TensorNode& n) {
    const int pad = (kernel - 1) / 2;
    auto& px = n.parents[0];
    auto& pw = n.parents[1];
    auto& pb = n.parents[2];
    if (wants_grad(px)) px->ensure_grad();
    if (wants_grad(pw)) pw->ensure_grad();
    if (wants_grad(pb)) pb->ensure_grad();
    for (int t = 0; t < t_out; ++t) {
      const double* gout = &n.g[static_cast<size_t>(t) * c_out];
      if (wants_grad(pb))
        for (int o = 0; o < c_out; ++o) pb->g[o] += gout[o];
      for (int k = 0; k < kernel; ++k) {
        int s = t * stride + k - pad;
        if (s < 0 || s >= t_in) continue;
        const double* xrow = &px->v[static_cast<size_t>(s) * c_in];
        double* gxrow = wants_grad(px) ? &px->g[static_cast<size_t>(s) * c_in] : nullptr;
        for (int o = 0; o < c_out; ++o) {
          double go = gout[o];
          if (go == 0.0) continue;
          size_t wbase = static_cast<size_t>(o) * c_in * kernel + static_cast<size_t>(k) * c_in;
          if (wants_grad(pw)) {
            double* gwrow = &pw->g[wbase];
            for (int ci = 0; ci < c_in; ++ci) gwrow[ci] += go * xrow[ci];
          }
          if (gxrow) {
            const double* wrow = &pw->v[wbase];
            for (int ci = 0; ci < c_in; ++ci) gxrow[ci] += go * wrow[ci];
          }
        }
      }
    }
  });
}

Tensor depthwise_conv1d(const Tensor& x, const Tensor& w, int kernel) {
  check(kernel % 2 == 1, "depthwise_conv1d: kernel must be odd");
  const int t_in = x.rows(), ch = x.cols();
  check(w.rows() == ch && w.cols() == kernel, "depthwise_conv1d: weight shape");
  const int pad = (kernel - 1) / 2;
  std::vector<double> v(static_cast<size_t>(t_in) * ch, 0.0);
  const auto& xv = x.values();
  const auto& wv = w.values();
  for (int t = 0; t < t_in; ++t)
    for (int k = 0; k < kernel; ++k) {
      int s = t + k - pad;
      if (s < 0 || s >= t_in) continue;
      const double* xrow = &xv[static_cast<size_t>(s) * ch];
      double* out = &v[static_cast<size_t>(t) * ch];
      for (int c = 0; c < ch; ++c) out[c] += wv[static_cast<size_t>(c) * kernel + k] * xrow[c];
    }
  return wire(x.shape(), std::move(v), {x, w}, [t_in, ch, kernel](TensorNode& n) {
    const int pad = (kernel - 1) / 2;
    auto& px = n.parents[0];
    auto& pw = n.parents[1];
    if (wants_grad(px)) px->ensure_grad();
    if (wants_grad(pw)) pw->ensure_grad();
    for (int t = 0; t < t_in; ++t)
      for (int k = 0; k < kernel; ++k) {
        int s = t + k - pad;
        if (s < 0 || s >= t_in) continue;
        const double* gout = &n.g[static_cast<size_t>(t) * ch];
        for (int c = 0; c < ch; ++c) {
          double go = gout[c];
          if (go == 0.0) continue;
          if (wants_grad(pw))
            pw->g[static_cast<size_t>(c) * kernel + k] += go * px->v[static_cast<size_t>(s) * ch + c];
          if (wants_grad(px))
            px->g[static_cast<size_t>(s) * ch + c] += go * pw->v[static_cast<size_t>(c) * kernel + k];
        }
      }
  });
}

Tensor freq_conv1d(const Tensor& x, const Tensor& w, const Tensor& b,
                   int positions, int c_in, int kernel, int stride) {
  check(kernel % 2 == 1, "freq_conv1d: kernel must be odd");
  check(x.cols() == positions * c_in, "freq_conv1d: column layout mismatch");
  const int rows = x.rows();
  const int c_out = w.rows();
  check(w.cols() == c_in * kernel, "freq_conv1d: weight shape mismatch");
  check(b.rows() == 1 && b.cols() == c_out, "freq_conv1d: bias shape mismatch");
  const int pad = (kernel - 1) / 2;
  const int p_out = (positions + 2 * pad - kernel) / stride + 1;
  check(p_out >= 1, "freq_conv1d: empty output");
  std::vector<double> v(static_cast<size_t>(rows) * p_out * c_out);
  const auto& xv = x.values();
  const auto& wv = w.values();
  const auto& bv = b.values();
  for (int r = 0; r < rows; ++r) {
    const double* xrow = &xv[static_cast<size_t>(r) * positions * c_in];
    double* orow = &v[static_cast<size_t>(r) * p_out * c_out];
    for (int p = 0; p < p_out; ++p) {
      double* out = &orow[static_cast<size_t>(p) * c_out];
      for (int o = 0; o < c_out; ++o) out[o] = bv[o];
      for (int k = 0; k < kernel; ++k) {
        int s = p * stride + k - pad;
        if (s < 0 || s >= positions) continue;
        const double* xin = &xrow[static_cast<size_t>(s) * c_in];
        for (int o = 0; o < c_out; ++o) {
          const double* wrow = &wv[static_cast<size_t>(o) * c_in * kernel + static_cast<size_t>(k) * c_in];
          double acc = 0.0;
          for (int ci = 0; ci < c_in; ++ci) acc += wrow[ci] * xin[ci];
          out[o] += acc;
        }
      }
    }
  }
  return wire({rows, p_out * c_out}, std::move(v), {x, w, b},
              [rows, positions, p_out, c_in, c_out, kernel, stride](TensorNode& n) {
    const int pad = (kernel - 1) / 2;
    auto& px = n.parents[0];
    auto& pw = n.parents[1];
    auto& pb = n.parents[2];
    if (wants_grad(px)) px->ensure_grad();
    if (wants_grad(pw)) pw->ensure_grad();
    if (wants_grad(pb)) pb->ensure_grad();
    for (int r = 0; r < rows; ++r) {
      const double* grow = &n.g[static_cast<size_t>(r) * p_out * c_out];
      const double* xrow = &px->v[static_cast<size_t>(r) * positions * c_in];
      double* gxrow = wants_grad(px) ? &px->g[static_cast<size_t>(r) * positions * c_in] : nullptr;
      for (int p = 0; p < p_out; ++p) {
        const double* gout = &grow[static_cast<size_t>(p) * c_out];
        if (wants_grad(pb))
          for (int o = 0; o < c_out; ++o) pb->g[o] += gout[o];
        for (int k = 0; k < kernel; ++k) {
          int s = p * stride + k - pad;
          if (s < 0 || s >= positions) continue;
          const double* xin = &xrow[static_cast<size_t>(s) * c_in];
          for (int o = 0; o < c_out; ++o) {
            double go = gout[o];
            if (go == 0.0) continue;
            size_t wbase = static_cast<size_t>(o) * c_in * kernel + static_cast<size_t>(k) * c_in;
            if (wants_grad(pw)) {
              double* gwrow = &pw->g[wbase];
              for (int ci = 0; ci < c_in; ++ci) gwrow[ci] += go * xin[ci];
            }
            if (gxrow) {
              const double* wrow = &pw->v[wbase];
              double* gxin = &gxrow[static_cast<size_t>(s) * c_in];
              for (int ci = 0; ci < c_in; ++ci) gxin[ci] += go * wrow[ci];
            }
          }
        }
      }
    }
  });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int kernel,
              int stride, int pad) {
  check(x.shape().size() == 3, "conv2d: input must be {C,H,W}");
  const int c_in = x.shape()[0], h_in = x.shape()[1], w_in = x.shape()[2];
  const int c_out = w.rows();
  check(w.cols() == c_in * kernel * kernel, "conv2d: weight shape mismatch");
  check(b.rows() == 1 && b.cols() == c_out, "conv2d: bias shape mismatch");
  const int h_out = (h_in + 2 * pad - kernel) / stride + 1;
  const int w_out = (w_in + 2 * pad - kernel) / stride + 1;
  check(h_out >= 1 && w_out >= 1, "conv2d: empty output");
  auto xat = [&](const std::vector<double>& buf, int c, int y, int z) {
    return buf[(static_cast<size_t>(c) * h_in + y) * w_in + z];
  };
  std::vector<double> v(static_cast<size_t>(c_out) * h_out * w_out, 0.0);
  const auto& xv = x.values();
  const auto& wv = w.values();
  const auto& bv = b.values();
  for (int o = 0; o < c_out; ++o)
    for (int y = 0; y < h_out; ++y)
      for (int z = 0; z < w_out; ++z) {
        double acc = bv[o];
        for (int ci = 0; ci < c_in; ++ci)
          for (int ky = 0; ky < kernel; ++ky) {
            int sy = y * stride + ky - pad;
            if (sy < 0 || sy >= h_in) continue;
            for (int kz = 0; kz < kernel; ++kz) {
              int sz = z * stride + kz - pad;
              if (sz < 0 || sz >= w_in) continue;
              acc += wv[(static_cast<size_t>(o) * c_in + ci) * kernel * kernel +
                        static_cast<size_t>(ky) * kernel + kz] *
                     xat(xv, ci, sy, sz);
            }
          }
        v[(static_cast<size_t>(o) * h_out + y) * w_out + z] = acc;
      }
  return wire({c_out, h_out, w_out}, std::move(v), {x, w, b},
              [c_in, h_in, w_in, c_out, h_out, w_out, kernel, stride, pad](TensorNode& n) {
    auto& px = n.parents[0];
    auto& pw = n.parents[1];
    auto& pb = n.parents[2];
    if (wants_grad(px)) px->ensure_grad();
    if (wants_grad(pw)) pw->ensure_grad();
    if (wants_grad(pb)) pb->ensure_grad();
    for (int o = 0; o < c_out; ++o)
      for (int y = 0; y < h_out; ++y)
        for (int z = 0; z < w_out; ++z) {
          double go = n.g[(static_cast<size_t>(o) * h_out + y) * w_out + z];
          if (go == 0.0) continue;
          if (wants_grad(pb)) pb->g[o] += go;
          for (int ci = 0; ci < c_in; ++ci)
            for (int ky = 0; ky < kernel; ++ky) {
              int sy = y * stride + ky - pad;
              if (sy < 0 || sy >= h_in) continue;
              for (int kz = 0; kz < kernel; ++kz) {
                int sz = z * stride + kz - pad;
                if (sz < 0 || sz >= w_in) continue;
                size_t wi = (static_cast<size_t>(o) * c_in + ci) * kernel * kernel +
                            static_cast<size_t>(ky) * kernel + kz;
                size_t xi = (static_cast<size_t>(ci) * h_in + sy) * w_in + sz;
                if (wants_grad(pw)) pw->g[wi] += go * px->v[xi];
                if (wants_grad(px)) px->g[xi] += go * pw->v[wi];
              }
            }
        }
  });
}

// ---------------------------------------------------------------- shape

Tensor mean_rows(const Tensor& x) {
  const int rows = x.rows(), cols = x.cols();
  std::vector<double> v(cols, 0.0);
  const auto& xv = x.values();
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) v[c] += xv[static_cast<size_t>(r) * cols + c];
  for (int c = 0; c < cols; ++c) v[c] /= rows;
  return wire({1, cols}, std::move(v), {x}, [rows, cols](TensorNode& n) {
    auto& p = n.parents[0];
    if (!wants_grad(p)) return;
    p->ensure_grad();
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c)
        p->g[static_cast<size_t>(r) * cols + c] += n.g[c] / rows;
  });
}

Tensor repeat_rows(const Tensor& x, int times) {
  check(x.rows() == 1, "repeat_rows: input must have one row");
  const int cols = x.cols();
  std::vector<double> v(static_cast<size_t>(times) * cols);
  const auto& xv = x.values();
  for (int r = 0; r < times; ++r)
    std::copy(xv.begin(), xv.end(), v.begin() + static_cast<size_t>(r) * cols);
  return wire({times, cols}, std::move(v), {x}, [times, cols](TensorNode& n) {
    auto& p = n.parents[0];
    if (!wants_grad(p)) return;
    p->ensure_grad();
    for (int r = 0; r < times; ++r)
      for (int c = 0; c < cols; ++c)
        p->g[c] += n.g[static_cast<size_t>(r) * cols + c];
  });
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  check(a.cols() == b.cols(), "concat_rows: column mismatch");
  const int ra = a.rows(), rb = b.rows(), cols = a.cols();
  std::vector<double> v;
  v.reserve(static_cast<size_t>(ra + rb) * cols);
  v.insert(v.end(), a.values().begin(), a.values().end());
  v.insert(v.end(), b.values().begin(), b.values().end());
  return wire({ra + rb, cols}, std::move(v), {a, b}, [ra, rb, cols](TensorNode& n) {
    auto& pa = n.parents[0];
    auto& pb = n.parents[1];
    size_t na = static_cast<size_t>(ra) * cols;
    if (wants_grad(pa)) {
      pa->ensure_grad();
      for (size_t i = 0; i < na; ++i) pa->g[i] += n.g[i];
    }
    if (wants_grad(pb)) {
      pb->ensure_grad();
      for (size_t i = 0; i < static_cast<size_t>(rb) * cols; ++i)
        pb->g[i] += n.g[na + i];
    }
  });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  check(a.rows() == b.rows(), "concat_cols: row mismatch");
  const int rows = a.rows(), ca = a.cols(), cb = b.cols();
  std::vector<double> v(static_cast<size_t>(rows) * (ca + cb));
  const auto& av = a.values();
  const auto& bv = b.values();
  for (int r = 0; r < rows; ++r) {
    std::copy(av.begin() + static_cast<size_t>(r) * ca,
              av.begin() + static_cast<size_t>(r + 1) * ca,
              v.begin() + static_cast<size_t>(r) * (ca + cb));
    std::copy(bv.begin() + static_cast<size_t>(r) * cb,
              bv.begin() + static_cast<size_t>(r + 1) * cb,
              v.begin() + static_cast<size_t>(r) * (ca + cb) + ca);
  }
  return wire({rows, ca + cb}, std::move(v), {a, b}, [rows, ca, cb](TensorNode& n) {
    auto& pa = n.parents[0];
    auto& pb = n.parents[1];
    if (wants_grad(pa)) pa->ensure_grad();
    if (wants_grad(pb)) pb->ensure_grad();
    for (int r = 0; r < rows; ++r) {
      const double* grow = &n.g[static_cast<size_t>(r) * (ca + cb)];
      if (wants_grad(pa))
        for (int c = 0; c < ca; ++c) pa->g[static_cast<size_t>(r) * ca + c] += grow[c];
      if (wants_grad(pb))
        for (int c = 0; c < cb; ++c) pb->g[static_cast<size_t>(r) * cb + c] += grow[ca + c];
    }
  });
}

Tensor slice_rows(const Tensor& x, int start, int len) {
  check(start >= 0 && len >= 1 && start + len <= x.rows(),
        "slice_rows: range out of bounds");
  const int cols = x.cols();
  std::vector<double> v(x.values().begin() + static_cast<size_t>(start) * cols,
                        x.values().begin() + static_cast<size_t>(start + len) * cols);
  return wire({len, cols}, std::move(v), {x}, [start, len, cols](TensorNode& n) {
    auto& p = n.parents[0];
    if (!wants_grad(p)) return;
    p->ensure_grad();
    for (size_t i = 0; i < static_cast<size_t>(len) * cols; ++i)
      p->g[static_cast<size_t>(start) * cols + i] += n.g[i];
  });
}

Tensor slice_cols(const Tensor& x, int start, int len) {
  check(start >= 0 && len >= 1 && start + len <= x.cols(),
        "slice_cols: range out of bounds");
  const int rows = x.rows(), cols = x.cols();
  std::vector<double> v(static_cast<size_t>(rows) * len);
  const auto& xv = x.values();
  for (int r = 0; r < rows; ++r)
    std::copy(xv.begin() + static_cast<size_t>(r) * cols + start,
              xv.begin() + static_cast<size_t>(r) * cols + start + len,
              v.begin() + static_cast<size_t>(r) * len);
  return wire({rows, len}, std::move(v), {x}, [rows, cols, start, len](TensorNode& n) {
    auto& p = n.parents[0];
    if (!wants_grad(p)) return;
    p->ensure_grad();
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < len; ++c)
        p->g[static_cast<size_t>(r) * cols + start + c] +=
            n.g[static_cast<size_t>(r) * len + c];
  });
}

Tensor stack_rows(const Tensor& x, int group) {
  check(group >= 1, "stack_rows: group must be >= 1");
  const int rows = x.rows(), cols = x.cols();
  const int out_rows = (rows + group - 1) / group;
  std::vector<double> v(static_cast<size_t>(out_rows) * group * cols, 0.0);
  const auto& xv = x.values();
  for (int r = 0; r < rows; ++r) {
    int gr = r / group, gi = r % group;
    std::copy(xv.begin() + static_cast<size_t>(r) * cols,
              xv.begin() + static_cast<size_t>(r + 1) * cols,
              v.begin() + (static_cast<size_t>(gr) * group + gi) * cols);
  }
  return wire({out_rows, group * cols}, std::move(v), {x},
              [rows, cols, group](TensorNode& n) {
    auto& p = n.parents[0];
    if (!wants_grad(p)) return;
    p->ensure_grad();
    for (int r = 0; r < rows; ++r) {
      int gr = r / group, gi = r % group;
      for (int c = 0; c < cols; ++c)
        p->g[static_cast<size_t>(r) * cols + c] +=
            n.g[(static_cast<size_t>(gr) * group + gi) * cols + c];
    }
  });
}

Tensor reshape(const Tensor& x, std::vector<int> shape) {
  check(shape_numel(shape) == x.numel(), "reshape: element count mismatch");
  return wire(std::move(shape), x.values(), {x}, [](TensorNode& n) {
    auto& p = n.parents[0];
    if (!wants_grad(p)) return;
    p->ensure_grad();
    for (size_t i = 0; i < n.g.size(); ++i) p->g[i] += n.g[i];
  });
}

Tensor resample_rows(const Tensor& x, int new_rows) {
  check(new_rows >= 1, "resample_rows: new_rows must be >= 1");
  const int rows = x.rows(), cols = x.cols();
  if (new_rows == rows) return reshape(x, x.shape());
  std::vector<int> src(new_rows);
  for (int r = 0; r < new_rows; ++r)
    src[r] = std::min(rows - 1, static_cast<int>((r + 0.5) * rows / new_rows));
  std::vector<double> v(static_cast<size_t>(new_rows) * cols);
  const auto& xv = x.values();
  for (int r = 0; r < new_rows; ++r)
    std::copy(xv.begin() + static_cast<size_t>(src[r]) * cols,
              xv.begin() + static_cast<size_t>(src[r] + 1) * cols,
              v.begin() + static_cast<size_t>(r) * cols);
  return wire({new_rows, cols}, std::move(v), {x}, [src, cols](TensorNode& n) {
    auto& p = n.parents[0];
    if (!wants_grad(p)) return;
    p->ensure_grad();
    for (size_t r = 0; r < src.size(); ++r)
      for (int c = 0; c < cols; ++c)
        p->g[static_cast<size_t>(src[r]) * cols + c] += n.g[r * cols + c];
  });
}

Tensor detach(const Tensor& x) {
  auto n = make_node(x.shape(), x.values());
  n->leaf = true;
  return Tensor(n);
}

// ---------------------------------------------------------------- losses

Tensor l2_normalize_rows(const Tensor& x, double eps) {
  const int rows = x.rows(), cols = x.cols();
  std::vector<double> v(x.values());
  for (int r = 0; r < rows; ++r) {
    double* row = &v[static_cast<size_t>(r) * cols];
    double s = 0.0;
    for (int c = 0; c < cols; ++c) s += row[c] * row[c];
    double inv = 1.0 / std::sqrt(s + eps);
    for (int c = 0; c < cols; ++c) row[c] *= inv;
  }
  return wire(x.shape(), std::move(v), {x}, [rows, cols, eps](TensorNode& n) {
    auto& p = n.parents[0];
    if (!wants_grad(p)) return;
    p->ensure_grad();
    for (int r = 0; r < rows; ++r) {
      const double* row = &p->v[static_cast<size_t>(r) * cols];
      const double* gy = &n.g[static_cast<size_t>(r) * cols];
      double s = 0.0, dot = 0.0;
      for (int c = 0; c < cols; ++c) s += row[c] * row[c];
      double norm = std::sqrt(s + eps);
      for (int c = 0; c < cols; ++c) dot += gy[c] * row[c];
      double* gx = &p->g[static_cast<size_t>(r) * cols];
      for (int c = 0; c < cols; ++c)
        gx[c] += gy[c] / norm - row[c] * dot / (norm * norm * norm);
    }
  });
}

Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& targets) {
  const int rows = logits.rows(), cols = logits.cols();
  check(static_cast<int>(targets.size()) == rows,
        "cross_entropy_rows: target count mismatch");
  for (int t : targets)
    check(t >= 0 && t < cols, "cross_entropy_rows: target out of range");
  const auto& lv = logits.values();
  double loss = 0.0;
  for (int r = 0; r < rows; ++r) {
    const double* row = &lv[static_cast<size_t>(r) * cols];
    double m = row[0];
    for (int c = 1; c < cols; ++c) m = std::max(m, row[c]);
    double z = 0.0;
    for (int c = 0; c < cols; ++c) z += std::exp(row[c] - m);
    loss += m + std::log(z) - row[targets[r]];
  }
  loss /= rows;
  return wire({1, 1}, {loss}, {logits}, [rows, cols, targets](TensorNode& n) {
    auto& p = n.parents[0];
    if (!wants_grad(p)) return;
    p->ensure_grad();
    double g = n.g[0] / rows;
    for (int r = 0; r < rows; ++r) {
      const double* row = &p->v[static_cast<size_t>(r) * cols];
      double m = row[0];
      for (int c = 1; c < cols; ++c) m = std::max(m, row[c]);
      double z = 0.0;
      for (int c = 0; c < cols; ++c) z += std::exp(row[c] - m);
      for (int c = 0; c < cols; ++c) {
        double soft = std::exp(row[c] - m) / z;
        p->g[static_cast<size_t>(r) * cols + c] +=
            g * (soft - (c == targets[r] ? 1.0 : 0.0));
      }
    }
  });
}

Tensor mean_all(const Tensor& x) {
  const int64_t n_elem = x.numel();
  double s = 0.0;
  for (double v : x.values()) s += v;
  return wire({1, 1}, {s / n_elem}, {x}, [n_elem](TensorNode& n) {
    auto& p = n.parents[0];
    if (!wants_grad(p)) return;
    p->ensure_grad();
    double g = n.g[0] / n_elem;
    for (size_t i = 0; i < p->g.size(); ++i) p->g[i] += g;
  });
}

Tensor mse(const Tensor& a, const Tensor& b) {
  check(a.shape() == b.shape(), "mse: shape mismatch");
  const int64_t n_elem = a.numel();
  const auto& av = a.values();
  const auto& bv = b.values();
  double s = 0.0;
  for (size_t i = 0; i < av.size(); ++i) {
    double d = av[i] - bv[i];
    s += d * d;
  }
  return wire({1, 1}, {s / n_elem}, {a, b}, [n_elem](TensorNode& n) {
    auto& pa = n.parents[0];
    auto& pb = n.parents[1];
    double g = 2.0 * n.g[0] / n_elem;
    if (wants_grad(pa)) pa->ensure_grad();
    if (wants_grad(pb)) pb->ensure_grad();
    for (size_t i = 0; i < pa->v.size(); ++i) {
      double d = pa->v[i] - pb->v[i];
      if (wants_grad(pa)) pa->g[i] += g * d;
      if (wants_grad(pb)) pb->g[i] -= g * d;
    }
  });
}

Tensor mse_const(const Tensor& a, double target) {
  const int64_t n_elem = a.numel();
  double s = 0.0;
  for (double v : a.values()) {
    double d = v - target;
    s += d * d;
  }
  return wire({1, 1}, {s / n_elem}, {a}, [n_elem, target](TensorNode& n) {
    auto& p = n.parents[0];
    if (!wants_grad(p)) return;
    p->ensure_grad();
    double g = 2.0 * n.g[0] / n_elem;
    for (size_t i = 0; i < p->v.size(); ++i) p->g[i] += g * (p->v[i] - target);
  });
}

Tensor cosine(const Tensor& a, const Tensor& b) {
  check(a.numel() == b.numel(), "cosine: size mismatch");
  const auto& av = a.values();
  const auto& bv = b.values();
  double dot = 0.0, na2 = 0.0, nb2 = 0.0;
  for (size_t i = 0; i < av.size(); ++i) {
    dot += av[i] * bv[i];
    na2 += av[i] * av[i];
    nb2 += bv[i] * bv[i];
  }
  check(na2 > 0.0 && nb2 > 0.0, "cosine: zero-norm vector");
  double na = std::sqrt(na2), nb = std::sqrt(nb2);
  double c = dot / (na * nb);
  return wire({1, 1}, {c}, {a, b}, [dot, na, nb](TensorNode& n) {
    auto& pa = n.parents[0];
    auto& pb = n.parents[1];
    double g = n.g[0];
    double c = n.v[0];
    if (wants_grad(pa)) {
      pa->ensure_grad();
      for (size_t i = 0; i < pa->v.size(); ++i)
        pa->g[i] += g * (pb->v[i] / (na * nb) - c * pa->v[i] / (na * na));
    }
    if (wants_grad(pb)) {
      pb->ensure_grad();
      for (size_t i = 0; i < pb->v.size(); ++i)
        pb->g[i] += g * (pa->v[i] / (na * nb) - c * pb->v[i] / (nb * nb));
    }
    (void)dot;
  });
}

Tensor weighted_sum(const std::vector<double>& weights,
                    const std::vector<Tensor>& terms) {
  check(!terms.empty() && weights.size() == terms.size(),
        "weighted_sum: weight/term count mismatch");
  Tensor acc = scale(terms[0], weights[0]);
  for (size_t i = 1; i < terms.size(); ++i)
    acc = add(acc, scale(terms[i], weights[i]));
  return acc;
}

// ---------------------------------------------------------------- CTC

Tensor ctc_loss(const Tensor& logits, const std::vector<int>& labels) {
  const int t_len = logits.rows();
  const int n_sym = logits.cols();  // V + 1, blank at V
  const int blank = n_sym - 1;
  for (int l : labels)
    check(l >= 0 && l < blank, "ctc_loss: label out of vocabulary");
  const int l_len = static_cast<int>(labels.size());
  int repeats = 0;
  for (int i = 1; i < l_len; ++i)
    if (labels[i] == labels[i - 1]) ++repeats;
  if (t_len < l_len + repeats) {
    // Defined large-value signal for infeasible label lengths; carries no
    // gradient so callers may skip such samples without special casing.
    return Tensor::scalar(kCtcInfeasibleLoss);
  }

  // Extended label sequence with interleaved blanks.
  const int s_len = 2 * l_len + 1;
  std::vector<int> ext(s_len, blank);
  for (int i = 0; i < l_len; ++i) ext[2 * i + 1] = labels[i];

  // Log-softmax rows.
  std::vector<double> lp(static_cast<size_t>(t_len) * n_sym);
  const auto& lv = logits.values();
  for (int t = 0; t < t_len; ++t) {
    const double* row = &lv[static_cast<size_t>(t) * n_sym];
    double m = row[0];
    for (int k = 1; k < n_sym; ++k) m = std::max(m, row[k]);
    double z = 0.0;
    for (int k = 0; k < n_sym; ++k) z += std::exp(row[k] - m);
    double logz = m + std::log(z);
    for (int k = 0; k < n_sym; ++k)
      lp[static_cast<size_t>(t) * n_sym + k] = row[k] - logz;
  }

  auto lp_at = [&](int t, int s) { return lp[static_cast<size_t>(t) * n_sym + ext[s]]; };
  std::vector<double> alpha(static_cast<size_t>(t_len) * s_len, kLogZero);
  alpha[0] = lp_at(0, 0);
  if (s_len > 1) alpha[1] = lp_at(0, 1);
  for (int t = 1; t < t_len; ++t)
    for (int s = 0; s < s_len; ++s) {
      double best = alpha[static_cast<size_t>(t - 1) * s_len + s];
      if (s >= 1) best = log_add(best, alpha[static_cast<size_t>(t - 1) * s_len + s - 1]);
      if (s >= 2 && ext[s] != blank && ext[s] != ext[s - 2])
        best = log_add(best, alpha[static_cast<size_t>(t - 1) * s_len + s - 2]);
      alpha[static_cast<size_t>(t) * s_len + s] =
          best <= kLogZero / 2 ? kLogZero : best + lp_at(t, s);
    }
  double log_p = alpha[static_cast<size_t>(t_len - 1) * s_len + s_len - 1];
  if (s_len > 1)
    log_p = log_add(log_p, alpha[static_cast<size_t>(t_len - 1) * s_len + s_len - 2]);
  double loss = -log_p;

  // Beta pass + posteriors for the analytic gradient.
  std::vector<double> beta(static_cast<size_t>(t_len) * s_len, kLogZero);
  beta[static_cast<size_t>(t_len - 1) * s_len + s_len - 1] = lp_at(t_len - 1, s_len - 1);
  if (s_len > 1)
    beta[static_cast<size_t>(t_len - 1) * s_len + s_len - 2] = lp_at(t_len - 1, s_len - 2);
  for (int t = t_len - 2; t >= 0; --t)
    for (int s = s_len - 1; s >= 0; --s) {
      double best = beta[static_cast<size_t>(t + 1) * s_len + s];
      if (s + 1 < s_len) best = log_add(best, beta[static_cast<size_t>(t + 1) * s_len + s + 1]);
      if (s + 2 < s_len && ext[s] != blank && ext[s] != ext[s + 2])
        best = log_add(best, beta[static_cast<size_t>(t + 1) * s_len + s + 2]);
      beta[static_cast<size_t>(t) * s_len + s] =
          best <= kLogZero / 2 ? kLogZero : best + lp_at(t, s);
    }

  // grad wrt logits u: softmax(u) - sum of symbol posteriors.
  std::vector<double> grad(static_cast<size_t>(t_len) * n_sym);
  for (int t = 0; t < t_len; ++t) {
    for (int k = 0; k < n_sym; ++k)
      grad[static_cast<size_t>(t) * n_sym + k] =
          std::exp(lp[static_cast<size_t>(t) * n_sym + k]);
    for (int s = 0; s < s_len; ++s) {
      double a = alpha[static_cast<size_t>(t) * s_len + s];
      double b = beta[static_cast<size_t>(t) * s_len + s];
      if (a <= kLogZero / 2 || b <= kLogZero / 2) continue;
      // alpha and beta both include lp(t, s); divide once out.
      double post = std::exp(a + b - lp_at(t, s) - log_p);
      grad[static_cast<size_t>(t) * n_sym + ext[s]] -= post;
    }
  }

  return wire({1, 1}, {loss}, {logits}, [grad](TensorNode& n) {
    auto& p = n.parents[0];
    if (!wants_grad(p)) return;
    p->ensure_grad();
    for (size_t i = 0; i < grad.size(); ++i) p->g[i] += n.g[0] * grad[i];
  });
}

// ---------------------------------------------------------------- registry

void ParamRegistry::add(const std::string& name, const Tensor& t) {
  for (auto& [n, _] : items)
    check(n != name, "ParamRegistry: duplicate parameter name " + name);
  items.emplace_back(name, t);
}

void ParamRegistry::merge(const std::string& prefix, const ParamRegistry& other) {
  for (const auto& [n, t] : other.items) add(prefix + n, t);
}

Tensor* ParamRegistry::find(const std::string& name) {
  for (auto& [n, t] : items)
    if (n == name) return &t;
  return nullptr;
}

void ParamRegistry::zero_grad() {
  for (auto& [n, t] : items) t.zero_grad();
}

void ParamRegistry::set_requires_grad(bool rg) {
  for (auto& [n, t] : items) t.set_requires_grad(rg);
}

int64_t ParamRegistry::total_params() const {
  int64_t s = 0;
  for (const auto& [n, t] : items) s += t.numel();
  return s;
}

}  // namespace cyclevc

// cyclevc/tensor.hpp

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

#ifndef CYCLEVC_TENSOR_HPP
#define CYCLEVC_TENSOR_HPP

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace cyclevc {

// Reverse-mode autodiff over dense double tensors. Shapes are small int
// vectors; most ops treat tensors as 2-D (rows = time, cols = channels).
// The discriminator path uses 3-D {channels, height, width} tensors.
//
// Nodes form a dynamically built tape. backward() releases interior graph
// edges by default so deep graphs never unwind recursively in destructors.

struct TensorNode {
  std::vector<int> shape;
  std::vector<double> v;
  std::vector<double> g;  // allocated on demand during backward
  bool requires_grad = false;
  bool leaf = false;  // parameters and constants; never cleared by backward
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  int64_t numel() const { return static_cast<int64_t>(v.size()); }
  void ensure_grad() {
    if (g.size() != v.size()) g.assign(v.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}

  static Tensor zeros(int rows, int cols, bool requires_grad = false);
  static Tensor full(int rows, int cols, double value);
  static Tensor from(std::vector<double> values, int rows, int cols,
                     bool requires_grad = false);
  static Tensor from_shape(std::vector<double> values, std::vector<int> shape);
  static Tensor scalar(double value);
  // Trainable leaf.
  static Tensor param(std::vector<double> values, int rows, int cols);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int rows() const;
  int cols() const;
  int64_t numel() const { return node_->numel(); }

  std::vector<double>& values() { return node_->v; }
  const std::vector<double>& values() const { return node_->v; }
  double operator()(int r, int c) const;
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg);
  std::vector<double>& grad() { return node_->g; }
  const std::vector<double>& grad() const { return node_->g; }
  double grad_at(int r, int c) const;
  void zero_grad();

  // Backprop from a scalar. With free_graph the interior tape edges are
  // dropped afterwards; leaves (params, constants) are untouched.
  void backward(bool free_graph = true);

  std::shared_ptr<TensorNode> node() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor silu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor add_rowvec(const Tensor& x, const Tensor& b);  // x T*C, b 1*C

// ---- matrix ----
Tensor matmul(const Tensor& a, const Tensor& b);     // (m*k)·(k*n)
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // (m*k)·(n*k)^T -> m*n
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);  // w in*out

// ---- normalization / attention ----
Tensor softmax_rows(const Tensor& x);
Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       double eps = 1e-5);
Tensor instance_norm_cols(const Tensor& x, double eps = 1e-5);
// Relative-position bias grid B[i,j] = table[head, clamp(j-i,-R,R)+R].
Tensor relpos_bias(const Tensor& table, int head, int t_query, int t_key);

// ---- convolution ----
// x: T*Cin, w: Cout*(Cin*K), b: 1*Cout; same padding (K odd), given stride.
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, int c_in,
              int kernel, int stride = 1);
Tensor depthwise_conv1d(const Tensor& x, const Tensor& w, int kernel);
// Per-row frequency conv: each row holds `positions` groups of c_in channels
// (position-major). Applies the same 1-D conv along the position axis of
// every row. Output rows hold out_positions groups of c_out channels.
Tensor freq_conv1d(const Tensor& x, const Tensor& w, const Tensor& b,
                   int positions, int c_in, int kernel, int stride = 1);
// x: {Cin,H,W}, w: Cout*(Cin*K*K), b: 1*Cout, stride 2, pad 1 style.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int kernel,
              int stride, int pad);

// ---- shape ----
Tensor mean_rows(const Tensor& x);             // T*C -> 1*C
Tensor repeat_rows(const Tensor& x, int times);  // 1*C -> times*C
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor slice_rows(const Tensor& x, int start, int len);
Tensor slice_cols(const Tensor& x, int start, int len);
// Stack groups of `group` consecutive rows into single rows, zero-padding the
// tail: T*D -> ceil(T/group) * (group*D).
Tensor stack_rows(const Tensor& x, int group);
// Same element count, same layout, new shape.
Tensor reshape(const Tensor& x, std::vector<int> shape);
// Nearest-neighbor resampling along the row axis.
Tensor resample_rows(const Tensor& x, int new_rows);
Tensor detach(const Tensor& x);

// ---- reductions / losses ----
Tensor l2_normalize_rows(const Tensor& x, double eps = 1e-12);
// Mean over rows of -log softmax(row)[target]; one target per row.
Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& targets);
Tensor mean_all(const Tensor& x);
Tensor mse(const Tensor& a, const Tensor& b);       // element-mean squared diff
Tensor mse_const(const Tensor& a, double target);   // mean((a-target)^2)
Tensor cosine(const Tensor& a, const Tensor& b);    // flattened vectors
// weights.size() == terms.size(); result = sum_i w_i * terms_i (scalars).
Tensor weighted_sum(const std::vector<double>& weights,
                    const std::vector<Tensor>& terms);

// CTC negative log likelihood. logits: T*(V+1) with blank at index V.
// Labels are token ids in [0, V). An infeasible label length yields the
// defined large-value signal (no gradient) instead of an error.
constexpr double kCtcInfeasibleLoss = 1e6;
Tensor ctc_loss(const Tensor& logits, const std::vector<int>& labels);

// Named parameter collection used by optimizers and checkpoints.
struct ParamRegistry {
  std::vector<std::pair<std::string, Tensor>> items;
  void add(const std::string& name, const Tensor& t);
  void merge(const std::string& prefix, const ParamRegistry& other);
  Tensor* find(const std::string& name);
  void zero_grad();
  void set_requires_grad(bool rg);
  int64_t total_params() const;
};

}  // namespace cyclevc

#endif  // CYCLEVC_TENSOR_HPP

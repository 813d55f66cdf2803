// Copyright 2026 The bevsim Authors
// SPDX-License-Identifier: Apache-2.0

// Dense 64-bit tensors with define-by-run reverse-mode differentiation.
//
// Every op executed while grad mode is enabled and at least one input
// requires a gradient is appended to the calling thread's Graph. backward()
// walks that record in exact reverse execution order, accumulating into
// input gradients additively, and then discards it. A Graph and the tensors
// it references belong to one thread; tensors that do not require gradients
// may be read from several threads at once.

#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "bevsim/common.hpp"

namespace bevsim::ad {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until populated
  bool requires_grad = false;
  bool is_leaf = true;
  uint64_t epoch = 0;  // graph generation that produced a non-leaf tensor

  double* ensure_grad();
};
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(const Shape& shape);
  static Tensor full(const Shape& shape, double value);
  static Tensor scalar(double value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int64_t dim(size_t axis) const { return impl_->shape.at(axis); }
  size_t rank() const { return impl_->shape.size(); }
  int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }

  std::span<const double> data() const { return impl_->data; }
  // Writes bypass the graph; only use on leaves or outside a recorded pass.
  std::span<double> mutable_data() { return impl_->data; }
  double item() const;
  double operator[](int64_t i) const { return impl_->data[static_cast<size_t>(i)]; }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool value);
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  std::span<double> mutable_grad() { return impl_->grad; }
  void clear_grad() { impl_->grad.clear(); impl_->grad.shrink_to_fit(); }
  void zero_grad();

  // Copy of the values with no graph history and no gradient.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;

  friend Tensor wrap(std::shared_ptr<detail::TensorImpl> impl);
};

Tensor wrap(std::shared_ptr<detail::TensorImpl> impl);

// One recorded operation.
struct Node {
  std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
  std::shared_ptr<detail::TensorImpl> output;
  std::function<void(const Node&)> backward;

  std::span<const double> grad_out() const { return output->grad; }
  // Gradient buffer of input i, or nullptr when that input needs none.
  double* grad_in(size_t i) const {
    auto& in = inputs[i];
    return in->requires_grad ? in->ensure_grad() : nullptr;
  }
};

class Graph {
 public:
  static Graph& current();

  size_t size() const { return nodes_.size(); }
  uint64_t epoch() const { return epoch_; }
  void record(Node node) { nodes_.push_back(std::move(node)); }
  // Drops the record without running backward.
  void clear();

 private:
  friend void backward(const Tensor& loss);
  std::vector<Node> nodes_;
  uint64_t epoch_ = 1;
};

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Builds the output tensor of a custom op and records it when needed. The
// backward callback reads node.grad_out() and adds into node.grad_in(i).
Tensor make_result(Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs,
                   std::function<void(const Node&)> backward);

void backward(const Tensor& loss);

// ---------------------------------------------------------------- elementwise

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double b);
Tensor mul(const Tensor& a, double b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double b) { return mul(a, b); }
inline Tensor operator*(double a, const Tensor& b) { return mul(b, a); }

Tensor neg(const Tensor& x);
Tensor square(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor abs(const Tensor& x);
// |x|^p for p >= 1.
Tensor pow_abs(const Tensor& x, double p);
Tensor clamp(const Tensor& x, double lo, double hi);
// 0.5 d^2 for |d| < 1, |d| - 0.5 otherwise.
Tensor smooth_l1(const Tensor& d);

// ----------------------------------------------------------------- reductions

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_axis(const Tensor& x, size_t axis);
Tensor mean_axis(const Tensor& x, size_t axis);

// ---------------------------------------------------------------- shape / layout

Tensor reshape(const Tensor& x, const Shape& shape);
Tensor transpose(const Tensor& x);  // rank 2
Tensor slice(const Tensor& x, size_t axis, int64_t begin, int64_t end);
Tensor concat(const std::vector<Tensor>& parts, size_t axis);
// Adds bias (length shape[axis]) along the given axis.
Tensor add_bias(const Tensor& x, const Tensor& bias, size_t axis);
// rows of a [N x C] matrix; output [idx.size() x C].
Tensor gather_rows(const Tensor& x, std::span<const int64_t> idx);
// x viewed as [C x N]; output [idx.size() x C] with row r = column idx[r].
Tensor gather_columns(const Tensor& x, std::span<const int64_t> idx);

// ------------------------------------------------------------------ linear algebra

Tensor matmul(const Tensor& a, const Tensor& b);
// x: [C_in x H x W], w: [C_out x C_in x k x k], bias: [C_out] or undefined.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad);
// Non-overlapping 2x2 mean pooling of [C x H x W] with even H, W.
Tensor avg_pool2(const Tensor& x);
// out[n*D + d, c] = a[n, d] * b[n, c] for a [N x D], b [N x C].
Tensor row_outer(const Tensor& a, const Tensor& b);
// out[n, c] = sum_k w[n, k] * s[n*K + k, c] for s [N*K x C], w [N x K].
Tensor group_weighted_sum(const Tensor& samples, const Tensor& weights);

// ------------------------------------------------------------------ normalisation

Tensor softmax(const Tensor& x, size_t axis);

// ------------------------------------------------------------------ sampling / scatter

// f: [C x H x W]; pts: [P x 2] of normalised (row, col) coordinates where
// cell (i, j) has its centre at ((i + 0.5) / H, (j + 0.5) / W). Coordinates
// are clamped to [0, 1]; beyond the outermost centres the border value
// repeats. Output [P x C].
Tensor bilinear_sample(const Tensor& f, const Tensor& pts);

// values: [P x C]; out has shape {C, spatial...} and
// out[c, cell_index[p]] += values[p, c], summed in increasing p.
Tensor scatter_add(const Tensor& values, std::span<const int64_t> cell_index, const Shape& out_shape);

// values: [P x C]; out [n_segments x C] holds the per-segment maximum;
// segments without members are zero.
Tensor segment_max(const Tensor& values, std::span<const int64_t> segment, int64_t n_segments);

}  // namespace bevsim::ad

// Copyright 2026 The bevsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "bevsim/tensor.hpp"

#include <fmt/format.h>

#include <algorithm>

namespace bevsim::ad {

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) { return fmt::format("[{}]", fmt::join(shape, ", ")); }

double* detail::TensorImpl::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad.data();
}

Tensor::Tensor(Shape shape, std::vector<double> data) {
  for (int64_t e : shape) require(e > 0, "tensor extents must be positive, got {}", to_string(shape));
  require(ad::numel(shape) == static_cast<int64_t>(data.size()), "shape {} needs {} values, got {}",
          to_string(shape), ad::numel(shape), data.size());
  impl_ = std::make_shared<detail::TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
}

Tensor Tensor::zeros(const Shape& shape) { return Tensor(shape, std::vector<double>(ad::numel(shape), 0.0)); }

Tensor Tensor::full(const Shape& shape, double value) {
  return Tensor(shape, std::vector<double>(ad::numel(shape), value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

double Tensor::item() const {
  require(numel() == 1, "item() needs a single-element tensor, got {}", to_string(shape()));
  return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool value) {
  require(impl_->is_leaf, "requires_grad can only be set on leaf tensors");
  impl_->requires_grad = value;
  if (!value) clear_grad();
  return *this;
}

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return Tensor(impl_->shape, impl_->data); }

Tensor wrap(std::shared_ptr<detail::TensorImpl> impl) { return Tensor(std::move(impl)); }

namespace {
thread_local bool t_grad_enabled = true;
}

Graph& Graph::current() {
  thread_local Graph graph;
  return graph;
}

void Graph::clear() {
  nodes_.clear();
  ++epoch_;
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

Tensor make_result(Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs,
                   std::function<void(const Node&)> backward_fn) {
  Tensor out(std::move(shape), std::move(data));
  if (!t_grad_enabled) return out;
  bool needs = false;
  for (const auto& t : inputs) needs = needs || t.requires_grad();
  if (!needs) return out;

  auto& graph = Graph::current();
  auto impl = out.impl();
  impl->requires_grad = true;
  impl->is_leaf = false;
  impl->epoch = graph.epoch();
  Node node;
  node.inputs.reserve(inputs.size());
  for (const auto& t : inputs) node.inputs.push_back(t.impl());
  node.output = impl;
  node.backward = std::move(backward_fn);
  graph.record(std::move(node));
  return out;
}

void backward(const Tensor& loss) {
  require(loss.defined(), "backward on an undefined tensor");
  require(loss.numel() == 1, "backward needs a scalar loss, got shape {}", to_string(loss.shape()));
  auto& graph = Graph::current();
  auto impl = loss.impl();
  if (!impl->requires_grad) return;
  if (impl->is_leaf) {
    impl->ensure_grad()[0] += 1.0;
    return;
  }
  require(impl->epoch == graph.epoch(), "backward called twice on the same graph");
  impl->ensure_grad()[0] += 1.0;

  for (auto it = graph.nodes_.rbegin(); it != graph.nodes_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->backward(*it);
  }
  graph.clear();
}

}  // namespace bevsim::ad

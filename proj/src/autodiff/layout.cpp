// Copyright 2026 The bevsim Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <limits>

#include "bevsim/tensor.hpp"

namespace bevsim::ad {

namespace {

// Views a shape as [outer, extent(axis), inner].
struct AxisSplit {
  int64_t outer = 1;
  int64_t extent = 1;
  int64_t inner = 1;
};

AxisSplit split_at(const Shape& shape, size_t axis) {
  require(axis < shape.size(), "axis {} out of range for shape {}", axis, to_string(shape));
  AxisSplit s;
  for (size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  const int64_t n = x.numel();
  return make_result({1}, {acc}, {x}, [n](const Node& node) {
    double* gx = node.grad_in(0);
    if (!gx) return;
    const double g = node.grad_out()[0];
    for (int64_t i = 0; i < n; ++i) gx[i] += g;
  });
}

Tensor mean(const Tensor& x) { return mul(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor sum_axis(const Tensor& x, size_t axis) {
  const AxisSplit s = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (out_shape.empty()) out_shape = {1};
  std::vector<double> out(s.outer * s.inner, 0.0);
  const auto xd = x.data();
  for (int64_t o = 0; o < s.outer; ++o)
    for (int64_t e = 0; e < s.extent; ++e) {
      const double* src = xd.data() + (o * s.extent + e) * s.inner;
      double* dst = out.data() + o * s.inner;
      for (int64_t i = 0; i < s.inner; ++i) dst[i] += src[i];
    }
  return make_result(out_shape, std::move(out), {x}, [s](const Node& node) {
    double* gx = node.grad_in(0);
    if (!gx) return;
    const auto g = node.grad_out();
    for (int64_t o = 0; o < s.outer; ++o)
      for (int64_t e = 0; e < s.extent; ++e) {
        double* dst = gx + (o * s.extent + e) * s.inner;
        const double* src = g.data() + o * s.inner;
        for (int64_t i = 0; i < s.inner; ++i) dst[i] += src[i];
      }
  });
}

Tensor mean_axis(const Tensor& x, size_t axis) {
  return mul(sum_axis(x, axis), 1.0 / static_cast<double>(x.shape().at(axis)));
}

Tensor reshape(const Tensor& x, const Shape& shape) {
  require(numel(shape) == x.numel(), "reshape {} -> {} changes element count", to_string(x.shape()),
          to_string(shape));
  const auto xd = x.data();
  return make_result(shape, std::vector<double>(xd.begin(), xd.end()), {x}, [](const Node& node) {
    double* gx = node.grad_in(0);
    if (!gx) return;
    const auto g = node.grad_out();
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Tensor transpose(const Tensor& x) {
  require(x.rank() == 2, "transpose needs a rank-2 tensor, got {}", to_string(x.shape()));
  const int64_t r = x.dim(0);
  const int64_t c = x.dim(1);
  const auto xd = x.data();
  std::vector<double> out(r * c);
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) out[j * r + i] = xd[i * c + j];
  return make_result({c, r}, std::move(out), {x}, [r, c](const Node& node) {
    double* gx = node.grad_in(0);
    if (!gx) return;
    const auto g = node.grad_out();
    for (int64_t i = 0; i < r; ++i)
      for (int64_t j = 0; j < c; ++j) gx[i * c + j] += g[j * r + i];
  });
}

Tensor slice(const Tensor& x, size_t axis, int64_t begin, int64_t end) {
  const AxisSplit s = split_at(x.shape(), axis);
  require(0 <= begin && begin < end && end <= s.extent, "slice [{}, {}) out of range for axis {} of {}", begin,
          end, axis, to_string(x.shape()));
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  const int64_t len = end - begin;
  const auto xd = x.data();
  std::vector<double> out(s.outer * len * s.inner);
  for (int64_t o = 0; o < s.outer; ++o)
    std::copy_n(xd.data() + (o * s.extent + begin) * s.inner, len * s.inner, out.data() + o * len * s.inner);
  return make_result(out_shape, std::move(out), {x}, [s, begin, len](const Node& node) {
    double* gx = node.grad_in(0);
    if (!gx) return;
    const auto g = node.grad_out();
    for (int64_t o = 0; o < s.outer; ++o) {
      double* dst = gx + (o * s.extent + begin) * s.inner;
      const double* src = g.data() + o * len * s.inner;
      for (int64_t i = 0; i < len * s.inner; ++i) dst[i] += src[i];
    }
  });
}

Tensor concat(const std::vector<Tensor>& parts, size_t axis) {
  require(!parts.empty(), "concat of zero tensors");
  const Shape& first = parts[0].shape();
  require(axis < first.size(), "concat axis {} out of range for {}", axis, to_string(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<int64_t> extents;
  for (const auto& p : parts) {
    Shape probe = p.shape();
    require(probe.size() == first.size(), "concat rank mismatch {} vs {}", to_string(probe), to_string(first));
    extents.push_back(probe[axis]);
    out_shape[axis] += probe[axis];
    probe[axis] = first[axis];
    require(probe == first, "concat shape mismatch {} vs {} off axis {}", to_string(p.shape()), to_string(first),
            axis);
  }
  const AxisSplit s = split_at(out_shape, axis);
  std::vector<double> out(numel(out_shape));
  int64_t offset = 0;
  for (size_t k = 0; k < parts.size(); ++k) {
    const auto pd = parts[k].data();
    const int64_t len = extents[k];
    for (int64_t o = 0; o < s.outer; ++o)
      std::copy_n(pd.data() + o * len * s.inner, len * s.inner, out.data() + (o * s.extent + offset) * s.inner);
    offset += len;
  }
  return make_result(out_shape, std::move(out), parts, [s, extents](const Node& node) {
    const auto g = node.grad_out();
    int64_t off = 0;
    for (size_t k = 0; k < extents.size(); ++k) {
      const int64_t len = extents[k];
      if (double* gp = node.grad_in(k)) {
        for (int64_t o = 0; o < s.outer; ++o) {
          const double* src = g.data() + (o * s.extent + off) * s.inner;
          double* dst = gp + o * len * s.inner;
          for (int64_t i = 0; i < len * s.inner; ++i) dst[i] += src[i];
        }
      }
      off += len;
    }
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias, size_t axis) {
  const AxisSplit s = split_at(x.shape(), axis);
  require(bias.numel() == s.extent, "add_bias: bias of {} elements for axis extent {}", bias.numel(), s.extent);
  const auto xd = x.data();
  const auto bd = bias.data();
  std::vector<double> out(xd.begin(), xd.end());
  for (int64_t o = 0; o < s.outer; ++o)
    for (int64_t e = 0; e < s.extent; ++e) {
      double* dst = out.data() + (o * s.extent + e) * s.inner;
      for (int64_t i = 0; i < s.inner; ++i) dst[i] += bd[e];
    }
  return make_result(x.shape(), std::move(out), {x, bias}, [s](const Node& node) {
    const auto g = node.grad_out();
    if (double* gx = node.grad_in(0))
      for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    if (double* gb = node.grad_in(1))
      for (int64_t o = 0; o < s.outer; ++o)
        for (int64_t e = 0; e < s.extent; ++e) {
          const double* src = g.data() + (o * s.extent + e) * s.inner;
          double acc = 0.0;
          for (int64_t i = 0; i < s.inner; ++i) acc += src[i];
          gb[e] += acc;
        }
  });
}

Tensor gather_rows(const Tensor& x, std::span<const int64_t> idx) {
  require(x.rank() == 2, "gather_rows needs a rank-2 tensor, got {}", to_string(x.shape()));
  require(!idx.empty(), "gather_rows with an empty index list");
  const int64_t rows = x.dim(0);
  const int64_t c = x.dim(1);
  const auto xd = x.data();
  std::vector<double> out(idx.size() * c);
  for (size_t r = 0; r < idx.size(); ++r) {
    require(idx[r] >= 0 && idx[r] < rows, "gather_rows index {} out of range [0, {})", idx[r], rows);
    std::copy_n(xd.data() + idx[r] * c, c, out.data() + r * c);
  }
  std::vector<int64_t> saved(idx.begin(), idx.end());
  return make_result({static_cast<int64_t>(idx.size()), c}, std::move(out), {x},
                     [saved = std::move(saved), c](const Node& node) {
                       double* gx = node.grad_in(0);
                       if (!gx) return;
                       const auto g = node.grad_out();
                       for (size_t r = 0; r < saved.size(); ++r)
                         for (int64_t j = 0; j < c; ++j) gx[saved[r] * c + j] += g[r * c + j];
                     });
}

Tensor gather_columns(const Tensor& x, std::span<const int64_t> idx) {
  require(x.rank() >= 2, "gather_columns needs rank >= 2, got {}", to_string(x.shape()));
  require(!idx.empty(), "gather_columns with an empty index list");
  const int64_t c = x.dim(0);
  const int64_t n = x.numel() / c;
  const auto xd = x.data();
  std::vector<double> out(idx.size() * c);
  for (size_t r = 0; r < idx.size(); ++r) {
    require(idx[r] >= 0 && idx[r] < n, "gather_columns index {} out of range [0, {})", idx[r], n);
    for (int64_t j = 0; j < c; ++j) out[r * c + j] = xd[j * n + idx[r]];
  }
  std::vector<int64_t> saved(idx.begin(), idx.end());
  return make_result({static_cast<int64_t>(idx.size()), c}, std::move(out), {x},
                     [saved = std::move(saved), c, n](const Node& node) {
                       double* gx = node.grad_in(0);
                       if (!gx) return;
                       const auto g = node.grad_out();
                       for (size_t r = 0; r < saved.size(); ++r)
                         for (int64_t j = 0; j < c; ++j) gx[j * n + saved[r]] += g[r * c + j];
                     });
}

Tensor softmax(const Tensor& x, size_t axis) {
  const AxisSplit s = split_at(x.shape(), axis);
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (int64_t o = 0; o < s.outer; ++o)
    for (int64_t i = 0; i < s.inner; ++i) {
      const int64_t base = o * s.extent * s.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (int64_t e = 0; e < s.extent; ++e) mx = std::max(mx, xd[base + e * s.inner]);
      double z = 0.0;
      for (int64_t e = 0; e < s.extent; ++e) {
        const double v = std::exp(xd[base + e * s.inner] - mx);
        out[base + e * s.inner] = v;
        z += v;
      }
      for (int64_t e = 0; e < s.extent; ++e) out[base + e * s.inner] /= z;
    }
  return make_result(x.shape(), std::move(out), {x}, [s](const Node& node) {
    double* gx = node.grad_in(0);
    if (!gx) return;
    const auto g = node.grad_out();
    const auto& y = node.output->data;
    for (int64_t o = 0; o < s.outer; ++o)
      for (int64_t i = 0; i < s.inner; ++i) {
        const int64_t base = o * s.extent * s.inner + i;
        double dot = 0.0;
        for (int64_t e = 0; e < s.extent; ++e) dot += g[base + e * s.inner] * y[base + e * s.inner];
        for (int64_t e = 0; e < s.extent; ++e) {
          const int64_t k = base + e * s.inner;
          gx[k] += y[k] * (g[k] - dot);
        }
      }
  });
}

}  // namespace bevsim::ad

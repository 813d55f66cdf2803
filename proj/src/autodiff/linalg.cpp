// Copyright 2026 The bevsim Authors
// SPDX-License-Identifier: Apache-2.0

#include <Eigen/Core>

#include "bevsim/tensor.hpp"

namespace bevsim::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMapM = Eigen::Map<const RowMat>;

// Eigen chooses vectorised paths from operand addresses, which would make
// the summation order depend on where a std::vector was allocated. Products
// therefore run on Eigen-owned, always-aligned copies.
RowMat copy_mat(const double* p, int64_t rows, int64_t cols) { return CMapM(p, rows, cols); }

void store(const RowMat& m, double* dst) { std::copy(m.data(), m.data() + m.size(), dst); }

void accumulate(const RowMat& m, double* dst) {
  const double* src = m.data();
  for (int64_t i = 0; i < m.size(); ++i) dst[i] += src[i];
}

struct ConvGeom {
  int64_t cin, h, w, cout, k, stride, pad, oh, ow;
  int64_t patch() const { return cin * k * k; }
  int64_t pixels() const { return oh * ow; }
};

// cols [cin*k*k x oh*ow]
void im2col(const double* x, const ConvGeom& g, double* cols) {
  const int64_t p = g.pixels();
  for (int64_t c = 0; c < g.cin; ++c)
    for (int64_t ky = 0; ky < g.k; ++ky)
      for (int64_t kx = 0; kx < g.k; ++kx) {
        double* row = cols + ((c * g.k + ky) * g.k + kx) * p;
        for (int64_t oy = 0; oy < g.oh; ++oy) {
          const int64_t iy = oy * g.stride - g.pad + ky;
          double* dst = row + oy * g.ow;
          if (iy < 0 || iy >= g.h) {
            std::fill_n(dst, g.ow, 0.0);
            continue;
          }
          const double* src = x + (c * g.h + iy) * g.w;
          for (int64_t ox = 0; ox < g.ow; ++ox) {
            const int64_t ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0;
          }
        }
      }
}

void col2im_add(const double* cols, const ConvGeom& g, double* gx) {
  const int64_t p = g.pixels();
  for (int64_t c = 0; c < g.cin; ++c)
    for (int64_t ky = 0; ky < g.k; ++ky)
      for (int64_t kx = 0; kx < g.k; ++kx) {
        const double* row = cols + ((c * g.k + ky) * g.k + kx) * p;
        for (int64_t oy = 0; oy < g.oh; ++oy) {
          const int64_t iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          double* dst = gx + (c * g.h + iy) * g.w;
          const double* src = row + oy * g.ow;
          for (int64_t ox = 0; ox < g.ow; ++ox) {
            const int64_t ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, "matmul needs rank-2 operands, got {} and {}", to_string(a.shape()),
          to_string(b.shape()));
  require(a.dim(1) == b.dim(0), "matmul inner extents differ: {} vs {}", to_string(a.shape()),
          to_string(b.shape()));
  const int64_t m = a.dim(0);
  const int64_t k = a.dim(1);
  const int64_t n = b.dim(1);
  std::vector<double> out(m * n);
  const RowMat prod = copy_mat(a.data().data(), m, k) * copy_mat(b.data().data(), k, n);
  store(prod, out.data());
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](const Node& node) {
    const RowMat g = copy_mat(node.grad_out().data(), m, n);
    if (double* ga = node.grad_in(0)) {
      const RowMat bt = copy_mat(node.inputs[1]->data.data(), k, n).transpose();
      accumulate(g * bt, ga);
    }
    if (double* gb = node.grad_in(1)) {
      const RowMat at = copy_mat(node.inputs[0]->data.data(), m, k).transpose();
      accumulate(at * g, gb);
    }
  });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad) {
  require(x.rank() == 3, "conv2d input must be [C x H x W], got {}", to_string(x.shape()));
  require(w.rank() == 4, "conv2d weight must be [Cout x Cin x k x k], got {}", to_string(w.shape()));
  require(w.dim(1) == x.dim(0), "conv2d channel mismatch: input {} vs weight {}", to_string(x.shape()),
          to_string(w.shape()));
  require(w.dim(2) == w.dim(3) && w.dim(2) % 2 == 1, "conv2d kernel must be square and odd, got {}",
          to_string(w.shape()));
  require(stride >= 1 && pad >= 0, "conv2d stride {} / pad {} invalid", stride, pad);
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), w.dim(0), w.dim(2), stride, pad, 0, 0};
  const int64_t span_h = g.h + 2 * pad - g.k;
  const int64_t span_w = g.w + 2 * pad - g.k;
  require(span_h >= 0 && span_w >= 0 && span_h % stride == 0 && span_w % stride == 0,
          "conv2d output size is not an integer for input {}, kernel {}, stride {}, pad {}", to_string(x.shape()),
          g.k, stride, pad);
  g.oh = span_h / stride + 1;
  g.ow = span_w / stride + 1;
  if (bias.defined())
    require(bias.numel() == g.cout, "conv2d bias has {} elements for {} outputs", bias.numel(), g.cout);

  const bool pointwise = g.k == 1 && stride == 1 && pad == 0;
  std::vector<double> cols;
  const double* colp = x.data().data();
  if (!pointwise) {
    cols.resize(g.patch() * g.pixels());
    im2col(x.data().data(), g, cols.data());
    colp = cols.data();
  }
  std::vector<double> out(g.cout * g.pixels());
  const RowMat prod = copy_mat(w.data().data(), g.cout, g.patch()) * copy_mat(colp, g.patch(), g.pixels());
  store(prod, out.data());
  if (bias.defined()) {
    const auto bd = bias.data();
    for (int64_t c = 0; c < g.cout; ++c)
      for (int64_t i = 0; i < g.pixels(); ++i) out[c * g.pixels() + i] += bd[c];
  }

  std::vector<Tensor> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  const bool has_bias = bias.defined();
  return make_result({g.cout, g.oh, g.ow}, std::move(out), inputs,
                     [g, pointwise, has_bias, cols = std::move(cols)](const Node& node) {
                       const RowMat go = copy_mat(node.grad_out().data(), g.cout, g.pixels());
                       const double* colp = pointwise ? node.inputs[0]->data.data() : cols.data();
                       if (double* gw = node.grad_in(1)) {
                         const RowMat ct = copy_mat(colp, g.patch(), g.pixels()).transpose();
                         accumulate(go * ct, gw);
                       }
                       if (has_bias)
                         if (double* gb = node.grad_in(2))
                           for (int64_t c = 0; c < g.cout; ++c) {
                             double acc = 0.0;
                             for (int64_t i = 0; i < g.pixels(); ++i) acc += go(c, i);
                             gb[c] += acc;
                           }
                       if (double* gx = node.grad_in(0)) {
                         const RowMat wt = copy_mat(node.inputs[1]->data.data(), g.cout, g.patch()).transpose();
                         const RowMat gcols = wt * go;
                         if (pointwise)
                           accumulate(gcols, gx);
                         else
                           col2im_add(gcols.data(), g, gx);
                       }
                     });
}

Tensor avg_pool2(const Tensor& x) {
  require(x.rank() == 3 && x.dim(1) % 2 == 0 && x.dim(2) % 2 == 0,
          "avg_pool2 needs [C x H x W] with even H and W, got {}", to_string(x.shape()));
  const int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2), oh = h / 2, ow = w / 2;
  const auto xd = x.data();
  std::vector<double> out(c * oh * ow);
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = 0; y < oh; ++y)
      for (int64_t xx = 0; xx < ow; ++xx) {
        const double* p = xd.data() + (ch * h + 2 * y) * w + 2 * xx;
        out[(ch * oh + y) * ow + xx] = 0.25 * (p[0] + p[1] + p[w] + p[w + 1]);
      }
  return make_result({c, oh, ow}, std::move(out), {x}, [c, h, w, oh, ow](const Node& node) {
    double* gx = node.grad_in(0);
    if (!gx) return;
    const auto g = node.grad_out();
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t y = 0; y < oh; ++y)
        for (int64_t xx = 0; xx < ow; ++xx) {
          const double v = 0.25 * g[(ch * oh + y) * ow + xx];
          double* p = gx + (ch * h + 2 * y) * w + 2 * xx;
          p[0] += v;
          p[1] += v;
          p[w] += v;
          p[w + 1] += v;
        }
  });
}

Tensor row_outer(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.dim(0) == b.dim(0), "row_outer needs [N x D] and [N x C], got {} and {}",
          to_string(a.shape()), to_string(b.shape()));
  const int64_t n = a.dim(0), d = a.dim(1), c = b.dim(1);
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<double> out(n * d * c);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t k = 0; k < d; ++k) {
      const double s = ad[i * d + k];
      double* dst = out.data() + (i * d + k) * c;
      const double* src = bd.data() + i * c;
      for (int64_t j = 0; j < c; ++j) dst[j] = s * src[j];
    }
  return make_result({n * d, c}, std::move(out), {a, b}, [n, d, c](const Node& node) {
    const auto g = node.grad_out();
    const auto& av = node.inputs[0]->data;
    const auto& bv = node.inputs[1]->data;
    double* ga = node.grad_in(0);
    double* gb = node.grad_in(1);
    for (int64_t i = 0; i < n; ++i)
      for (int64_t k = 0; k < d; ++k) {
        const double* gr = g.data() + (i * d + k) * c;
        if (ga) {
          double acc = 0.0;
          for (int64_t j = 0; j < c; ++j) acc += gr[j] * bv[i * c + j];
          ga[i * d + k] += acc;
        }
        if (gb) {
          const double s = av[i * d + k];
          for (int64_t j = 0; j < c; ++j) gb[i * c + j] += s * gr[j];
        }
      }
  });
}

Tensor group_weighted_sum(const Tensor& samples, const Tensor& weights) {
  require(samples.rank() == 2 && weights.rank() == 2, "group_weighted_sum needs rank-2 operands");
  const int64_t n = weights.dim(0), k = weights.dim(1), c = samples.dim(1);
  require(samples.dim(0) == n * k, "group_weighted_sum: {} samples for {} groups of {}", samples.dim(0), n, k);
  const auto sd = samples.data();
  const auto wd = weights.data();
  std::vector<double> out(n * c, 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < k; ++j) {
      const double wv = wd[i * k + j];
      const double* src = sd.data() + (i * k + j) * c;
      double* dst = out.data() + i * c;
      for (int64_t ch = 0; ch < c; ++ch) dst[ch] += wv * src[ch];
    }
  return make_result({n, c}, std::move(out), {samples, weights}, [n, k, c](const Node& node) {
    const auto g = node.grad_out();
    const auto& sv = node.inputs[0]->data;
    const auto& wv = node.inputs[1]->data;
    double* gs = node.grad_in(0);
    double* gw = node.grad_in(1);
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < k; ++j) {
        const double* gr = g.data() + i * c;
        if (gw) {
          double acc = 0.0;
          for (int64_t ch = 0; ch < c; ++ch) acc += gr[ch] * sv[(i * k + j) * c + ch];
          gw[i * k + j] += acc;
        }
        if (gs) {
          const double w = wv[i * k + j];
          double* dst = gs + (i * k + j) * c;
          for (int64_t ch = 0; ch < c; ++ch) dst[ch] += w * gr[ch];
        }
      }
  });
}

}  // namespace bevsim::ad

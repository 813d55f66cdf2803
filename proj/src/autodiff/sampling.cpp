// Copyright 2026 The bevsim Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <limits>

#include "bevsim/tensor.hpp"

namespace bevsim::ad {

namespace {

// Continuous cell coordinate along one axis with border handling.
struct AxisWeight {
  int64_t i0 = 0;
  int64_t i1 = 0;
  double frac = 0.0;
  double dfrac = 0.0;  // d frac / d normalised coordinate
};

AxisWeight axis_weight(double coord, int64_t extent) {
  AxisWeight a;
  if (extent == 1) return a;
  const bool inside = coord > 0.0 && coord < 1.0;
  const double c = std::clamp(coord, 0.0, 1.0);
  double pos = c * static_cast<double>(extent) - 0.5;
  const double hi = static_cast<double>(extent - 1);
  const bool interior = pos > 0.0 && pos < hi;
  pos = std::clamp(pos, 0.0, hi);
  a.i0 = std::min(static_cast<int64_t>(std::floor(pos)), extent - 2);
  a.i1 = a.i0 + 1;
  a.frac = pos - static_cast<double>(a.i0);
  a.dfrac = (inside && interior) ? static_cast<double>(extent) : 0.0;
  return a;
}

}  // namespace

Tensor bilinear_sample(const Tensor& f, const Tensor& pts) {
  require(f.rank() == 3, "bilinear_sample feature map must be [C x H x W], got {}", to_string(f.shape()));
  require(pts.rank() == 2 && pts.dim(1) == 2, "bilinear_sample points must be [P x 2], got {}",
          to_string(pts.shape()));
  const int64_t c = f.dim(0), h = f.dim(1), w = f.dim(2), p = pts.dim(0);
  const int64_t plane = h * w;
  const auto fd = f.data();
  const auto pd = pts.data();
  std::vector<double> out(p * c);
  for (int64_t i = 0; i < p; ++i) {
    const AxisWeight r = axis_weight(pd[2 * i], h);
    const AxisWeight s = axis_weight(pd[2 * i + 1], w);
    const double w00 = (1 - r.frac) * (1 - s.frac), w01 = (1 - r.frac) * s.frac;
    const double w10 = r.frac * (1 - s.frac), w11 = r.frac * s.frac;
    const int64_t o00 = r.i0 * w + s.i0, o01 = r.i0 * w + s.i1, o10 = r.i1 * w + s.i0, o11 = r.i1 * w + s.i1;
    double* dst = out.data() + i * c;
    for (int64_t ch = 0; ch < c; ++ch) {
      const double* fp = fd.data() + ch * plane;
      dst[ch] = w00 * fp[o00] + w01 * fp[o01] + w10 * fp[o10] + w11 * fp[o11];
    }
  }
  return make_result({p, c}, std::move(out), {f, pts}, [c, h, w, p, plane](const Node& node) {
    const auto g = node.grad_out();
    const auto& fv = node.inputs[0]->data;
    const auto& pv = node.inputs[1]->data;
    double* gf = node.grad_in(0);
    double* gp = node.grad_in(1);
    for (int64_t i = 0; i < p; ++i) {
      const AxisWeight r = axis_weight(pv[2 * i], h);
      const AxisWeight s = axis_weight(pv[2 * i + 1], w);
      const double w00 = (1 - r.frac) * (1 - s.frac), w01 = (1 - r.frac) * s.frac;
      const double w10 = r.frac * (1 - s.frac), w11 = r.frac * s.frac;
      const int64_t o00 = r.i0 * w + s.i0, o01 = r.i0 * w + s.i1, o10 = r.i1 * w + s.i0, o11 = r.i1 * w + s.i1;
      const double* gr = g.data() + i * c;
      double du = 0.0;
      double dv = 0.0;
      for (int64_t ch = 0; ch < c; ++ch) {
        const double gc = gr[ch];
        if (gf) {
          double* fp = gf + ch * plane;
          fp[o00] += w00 * gc;
          fp[o01] += w01 * gc;
          fp[o10] += w10 * gc;
          fp[o11] += w11 * gc;
        }
        if (gp) {
          const double* fp = fv.data() + ch * plane;
          du += gc * ((1 - s.frac) * (fp[o10] - fp[o00]) + s.frac * (fp[o11] - fp[o01]));
          dv += gc * ((1 - r.frac) * (fp[o01] - fp[o00]) + r.frac * (fp[o11] - fp[o10]));
        }
      }
      if (gp) {
        gp[2 * i] += du * r.dfrac;
        gp[2 * i + 1] += dv * s.dfrac;
      }
    }
  });
}

Tensor scatter_add(const Tensor& values, std::span<const int64_t> cell_index, const Shape& out_shape) {
  // Extents are positive, so an empty point set arrives as an undefined tensor.
  if (!values.defined()) {
    require(cell_index.empty(), "scatter_add: {} indices without values", cell_index.size());
    return Tensor::zeros(out_shape);
  }
  require(values.rank() == 2, "scatter_add values must be [P x C], got {}", to_string(values.shape()));
  const int64_t p = values.dim(0), c = values.dim(1);
  require(static_cast<int64_t>(cell_index.size()) == p, "scatter_add: {} indices for {} values",
          cell_index.size(), p);
  require(!out_shape.empty() && out_shape[0] == c, "scatter_add: output shape {} must lead with {} channels",
          to_string(out_shape), c);
  const int64_t cells = numel(out_shape) / c;
  for (int64_t i = 0; i < p; ++i)
    require(cell_index[i] >= 0 && cell_index[i] < cells, "scatter_add: index {} at position {} outside [0, {})",
            cell_index[i], i, cells);
  const auto vd = values.data();
  std::vector<double> out(numel(out_shape), 0.0);
  for (int64_t i = 0; i < p; ++i) {
    const int64_t cell = cell_index[i];
    const double* src = vd.data() + i * c;
    for (int64_t ch = 0; ch < c; ++ch) out[ch * cells + cell] += src[ch];
  }
  std::vector<int64_t> saved(cell_index.begin(), cell_index.end());
  return make_result(out_shape, std::move(out), {values}, [saved = std::move(saved), c, cells](const Node& node) {
    double* gv = node.grad_in(0);
    if (!gv) return;
    const auto g = node.grad_out();
    for (size_t i = 0; i < saved.size(); ++i)
      for (int64_t ch = 0; ch < c; ++ch) gv[i * c + ch] += g[ch * cells + saved[i]];
  });
}

Tensor segment_max(const Tensor& values, std::span<const int64_t> segment, int64_t n_segments) {
  require(values.rank() == 2, "segment_max values must be [P x C], got {}", to_string(values.shape()));
  require(n_segments > 0, "segment_max needs at least one segment");
  const int64_t p = values.dim(0), c = values.dim(1);
  require(static_cast<int64_t>(segment.size()) == p, "segment_max: {} segment ids for {} rows", segment.size(), p);
  const auto vd = values.data();
  std::vector<double> out(n_segments * c, -std::numeric_limits<double>::infinity());
  std::vector<int64_t> arg(n_segments * c, -1);
  for (int64_t i = 0; i < p; ++i) {
    const int64_t s = segment[i];
    require(s >= 0 && s < n_segments, "segment_max: segment {} outside [0, {})", s, n_segments);
    for (int64_t ch = 0; ch < c; ++ch) {
      const double v = vd[i * c + ch];
      if (v > out[s * c + ch]) {
        out[s * c + ch] = v;
        arg[s * c + ch] = i;
      }
    }
  }
  for (size_t k = 0; k < out.size(); ++k)
    if (arg[k] < 0) out[k] = 0.0;
  return make_result({n_segments, c}, std::move(out), {values}, [arg = std::move(arg), c](const Node& node) {
    double* gv = node.grad_in(0);
    if (!gv) return;
    const auto g = node.grad_out();
    for (size_t k = 0; k < arg.size(); ++k)
      if (arg[k] >= 0) gv[arg[k] * c + static_cast<int64_t>(k) % c] += g[k];
  });
}

}  // namespace bevsim::ad

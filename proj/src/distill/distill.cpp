// Copyright 2026 The bevsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "bevsim/distill.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "bevsim/pnm.hpp"

namespace bevsim::distill {

double gaussian_radius(double h, double w, double min_overlap) {
  require(h > 0 && w > 0, "gaussian_radius needs a positive size, got {} x {}", h, w);
  require(min_overlap > 0 && min_overlap < 1, "min_overlap {} outside (0, 1)", min_overlap);
  const double o = min_overlap;
  // Both corners moved outward by r.
  const double b1 = h + w;
  const double c1 = w * h * (1 - o) / (1 + o);
  const double r1 = (b1 - std::sqrt(b1 * b1 - 4 * c1)) / 2;
  // Predicted box inside the ground truth.
  const double b2 = 2 * (h + w);
  const double c2 = (1 - o) * w * h;
  const double r2 = (b2 - std::sqrt(b2 * b2 - 16 * c2)) / 8;
  // Ground truth inside the predicted box.
  const double a3 = 4 * o;
  const double b3 = 2 * o * (h + w);
  const double c3 = (o - 1) * w * h;
  const double r3 = (-b3 + std::sqrt(b3 * b3 - 4 * a3 * c3)) / (2 * a3);
  return std::max(0.0, std::min({r1, r2, r3}));
}

double heatmap_sigma(double h_cells, double w_cells) {
  return std::max((2.0 * gaussian_radius(h_cells, w_cells, kRadiusOverlap) + 1.0) / 6.0, kMinSigma);
}

std::array<double, 2> cell_coords(const Box3D& b, const BevGrid& grid) {
  return {(b.center[0] - grid.x_min) / grid.cell_x() - 0.5, (b.center[1] - grid.y_min) / grid.cell_y() - 0.5};
}

namespace {

void add_gaussian(std::span<double> map, const Box3D& b, const BevGrid& grid) {
  const auto c = cell_coords(b, grid);
  const double sigma = heatmap_sigma(b.length / grid.cell_x(), b.width / grid.cell_y());
  const double denom = 2.0 * sigma * sigma;
  for (int iy = 0; iy < grid.ny; ++iy)
    for (int ix = 0; ix < grid.nx; ++ix) {
      const double dx = ix - c[0], dy = iy - c[1];
      map[static_cast<size_t>(iy) * grid.nx + ix] += std::exp(-(dx * dx + dy * dy) / denom);
    }
}

}  // namespace

Tensor class_heatmap(const std::vector<Box3D>& boxes, int class_id, const BevGrid& grid) {
  Tensor out = Tensor::zeros({grid.ny, grid.nx});
  for (const auto& b : boxes)
    if (b.class_id == class_id) add_gaussian(out.mutable_data(), b, grid);
  return out;
}

Tensor class_heatmaps(const std::vector<Box3D>& boxes, int n_classes, const BevGrid& grid) {
  Tensor out = Tensor::zeros({n_classes, grid.ny, grid.nx});
  const size_t plane = static_cast<size_t>(grid.cells());
  for (const auto& b : boxes) {
    require(b.class_id >= 0 && b.class_id < n_classes, "box class {} outside [0, {})", b.class_id, n_classes);
    add_gaussian(out.mutable_data().subspan(b.class_id * plane, plane), b, grid);
  }
  return out;
}

Tensor heatmap(const std::vector<Box3D>& boxes, const BevGrid& grid) {
  Tensor out = Tensor::zeros({grid.ny, grid.nx});
  for (const auto& b : boxes) add_gaussian(out.mutable_data(), b, grid);
  for (auto& v : out.mutable_data()) v = std::min(v, 1.0);
  return out;
}

Tensor box_binary_map(const std::vector<Box3D>& boxes, const BevGrid& grid) {
  Tensor out = Tensor::zeros({grid.ny, grid.nx});
  auto d = out.mutable_data();
  for (const auto& b : boxes) {
    for (int iy = 0; iy < grid.ny; ++iy)
      for (int ix = 0; ix < grid.nx; ++ix) {
        const auto ctr = grid.center(ix, iy);
        const auto local = b.to_local({ctr[0], ctr[1], b.center[2]});
        if (std::abs(local[0]) <= 0.5 * b.length && std::abs(local[1]) <= 0.5 * b.width)
          d[static_cast<size_t>(iy) * grid.nx + ix] = 1.0;
      }
  }
  return out;
}

ObjectMask object_mask(const Tensor& heat, const Tensor& binary) {
  require(heat.shape() == binary.shape(), "object mask: heatmap {} and box map {} differ",
          ad::to_string(heat.shape()), ad::to_string(binary.shape()));
  std::vector<double> m(static_cast<size_t>(heat.numel()));
  for (size_t i = 0; i < m.size(); ++i) m[i] = binary[i] * heat[i];
  return {heat, binary, Tensor(heat.shape(), std::move(m))};
}

ObjectMask object_mask(const std::vector<Box3D>& boxes, const BevGrid& grid) {
  return object_mask(heatmap(boxes, grid), box_binary_map(boxes, grid));
}

Tensor mse_loss(const Tensor& teacher, const Tensor& student) {
  require(teacher.shape() == student.shape(), "feature shapes differ: teacher {} vs student {}",
          ad::to_string(teacher.shape()), ad::to_string(student.shape()));
  return ad::mean(ad::square(ad::sub(student, teacher.detach())));
}

Tensor cmd_loss(const Tensor& teacher, const Tensor& student, const Tensor& mask) {
  require(teacher.shape() == student.shape(), "feature shapes differ: teacher {} vs student {}",
          ad::to_string(teacher.shape()), ad::to_string(student.shape()));
  require(student.rank() == 3 && mask.rank() == 2 && mask.dim(0) == student.dim(1) && mask.dim(1) == student.dim(2),
          "mask {} does not match features {}", ad::to_string(mask.shape()), ad::to_string(student.shape()));
  const auto md = mask.data();
  const double mass = std::accumulate(md.begin(), md.end(), 0.0);
  const Tensor per_cell = ad::mean_axis(ad::square(ad::sub(student, teacher.detach())), 0);
  return ad::mul(ad::sum(ad::mul(per_cell, mask.detach())), 1.0 / std::max(mass, kMaskEps));
}

double derotated_bev_iou(const Box3D& det, const Box3D& gt) {
  const auto local = gt.to_local(det.center);
  const double ix = std::max(0.0, std::min(local[0] + 0.5 * det.length, 0.5 * gt.length) -
                                      std::max(local[0] - 0.5 * det.length, -0.5 * gt.length));
  const double iy = std::max(0.0, std::min(local[1] + 0.5 * det.width, 0.5 * gt.width) -
                                      std::max(local[1] - 0.5 * det.width, -0.5 * gt.width));
  const double inter = ix * iy;
  const double uni = det.length * det.width + gt.length * gt.width - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

std::vector<QualityScore> quality_score(const std::vector<Detection>& dets, const std::vector<Box3D>& gt,
                                        double max_dist) {
  std::vector<QualityScore> out(dets.size());
  std::vector<size_t> order(dets.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return dets[a].confidence > dets[b].confidence; });
  std::vector<bool> used(gt.size(), false);
  for (size_t i : order) {
    const auto& d = dets[i];
    double best = std::numeric_limits<double>::infinity();
    std::optional<size_t> pick;
    for (size_t g = 0; g < gt.size(); ++g) {
      if (used[g] || gt[g].class_id != d.class_id) continue;
      const double dist = std::hypot(d.box.center[0] - gt[g].center[0], d.box.center[1] - gt[g].center[1]);
      if (dist <= max_dist && dist < best) {
        best = dist;
        pick = g;
      }
    }
    if (pick) {
      used[*pick] = true;
      out[i] = {derotated_bev_iou(d.box, gt[*pick]), pick};
    }
  }
  return out;
}

Tensor qfl(const Tensor& p, const Tensor& y, double beta) {
  require(p.shape() == y.shape(), "qfl: prediction {} and target {} differ", ad::to_string(p.shape()),
          ad::to_string(y.shape()));
  const Tensor pc = ad::clamp(p, kProbClip, 1.0 - kProbClip);
  const Tensor yd = y.detach();
  const Tensor one_minus_y = ad::add(ad::neg(yd), 1.0);
  const Tensor bce = ad::neg(ad::add(ad::mul(one_minus_y, ad::log(ad::add(ad::neg(pc), 1.0))), ad::mul(yd, ad::log(pc))));
  return ad::mean(ad::mul(ad::pow_abs(ad::sub(yd, pc), beta), bce));
}

Tensor mmdp_loss(const std::vector<Detection>& dets, const std::vector<QualityScore>& scores,
                 const Tensor& cls_logits, const Tensor& reg, double beta) {
  require(dets.size() == scores.size(), "mmdp: {} detections but {} quality scores", dets.size(), scores.size());
  require(cls_logits.rank() == 3 && reg.rank() == 3 && reg.dim(0) == kRegChannels &&
              cls_logits.dim(1) == reg.dim(1) && cls_logits.dim(2) == reg.dim(2),
          "mmdp: unexpected head shapes {} and {}", ad::to_string(cls_logits.shape()), ad::to_string(reg.shape()));
  const int64_t n_cls = cls_logits.dim(0), ny = reg.dim(1), nx = reg.dim(2);
  std::vector<int64_t> cells;
  std::vector<double> s, t_reg, t_cls;
  for (size_t i = 0; i < dets.size(); ++i) {
    if (!(scores[i].s > 0.0)) continue;
    const auto& d = dets[i];
    require(d.iy >= 0 && d.iy < ny && d.ix >= 0 && d.ix < nx, "mmdp: detection cell ({}, {}) outside the grid", d.iy,
            d.ix);
    require(static_cast<int64_t>(d.class_probs.size()) == n_cls, "mmdp: detection carries {} class scores, head has {}",
            d.class_probs.size(), n_cls);
    cells.push_back(int64_t{d.iy} * nx + d.ix);
    s.push_back(scores[i].s);
    t_reg.insert(t_reg.end(), d.reg.begin(), d.reg.end());
    t_cls.insert(t_cls.end(), d.class_probs.begin(), d.class_probs.end());
  }
  if (cells.empty()) return Tensor::scalar(0.0);
  const int64_t n = static_cast<int64_t>(cells.size());
  const double mass = std::accumulate(s.begin(), s.end(), 0.0);

  const Tensor s_reg = ad::gather_columns(ad::reshape(reg, {kRegChannels, ny * nx}), cells);  // [n x 8]
  const Tensor diff = ad::sub(s_reg, Tensor({n, kRegChannels}, std::move(t_reg)));
  std::vector<double> w_reg(static_cast<size_t>(n * kRegChannels));
  for (int64_t i = 0; i < n; ++i)
    for (int k = 0; k < kRegChannels; ++k) w_reg[i * kRegChannels + k] = s[i];
  const Tensor box_term = ad::sum(ad::mul(ad::smooth_l1(diff), Tensor({n, kRegChannels}, std::move(w_reg))));

  // Per-detection QFL over its class vector, weighted by s.
  const Tensor p = ad::clamp(ad::sigmoid(ad::gather_columns(ad::reshape(cls_logits, {n_cls, ny * nx}), cells)),
                             kProbClip, 1.0 - kProbClip);
  const Tensor y({n, n_cls}, std::move(t_cls));
  const Tensor one_minus_y = ad::add(ad::neg(y), 1.0);
  const Tensor bce = ad::neg(ad::add(ad::mul(one_minus_y, ad::log(ad::add(ad::neg(p), 1.0))), ad::mul(y, ad::log(p))));
  const Tensor focal = ad::mul(ad::pow_abs(ad::sub(y, p), beta), bce);
  std::vector<double> w_cls(static_cast<size_t>(n * n_cls));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t k = 0; k < n_cls; ++k) w_cls[i * n_cls + k] = s[i] / static_cast<double>(n_cls);
  const Tensor cls_term = ad::sum(ad::mul(focal, Tensor({n, n_cls}, std::move(w_cls))));

  return ad::mul(ad::add(box_term, cls_term), 1.0 / std::max(mass, kMaskEps));
}

void dump_masks(const ObjectMask& m, const std::filesystem::path& dir, const std::string& stem) {
  std::filesystem::create_directories(dir);
  const int h = static_cast<int>(m.mask.dim(0)), w = static_cast<int>(m.mask.dim(1));
  io::write_pgm(dir / (stem + "_heat.pgm"), w, h, io::to_gray8(m.heat.data()));
  io::write_pgm(dir / (stem + "_box.pgm"), w, h, io::to_gray8(m.binary.data()));
  io::write_pgm(dir / (stem + "_mask.pgm"), w, h, io::to_gray8(m.mask.data()));
}

}  // namespace bevsim::distill

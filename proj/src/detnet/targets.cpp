// Copyright 2026 The bevsim Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <set>

#include "bevsim/detnet.hpp"
#include "bevsim/distill.hpp"

namespace bevsim::detnet {

EncodedBox encode_box(const Box3D& b, const BevGrid& grid) {
  const auto cell = grid.cell_of(b.center[0], b.center[1]);
  require(cell.has_value(), "box centre ({}, {}) outside the BEV grid", b.center[0], b.center[1]);
  EncodedBox e;
  e.iy = static_cast<int>(*cell / grid.nx);
  e.ix = static_cast<int>(*cell % grid.nx);
  const auto c = distill::cell_coords(b, grid);
  e.reg = {c[0] - e.ix, c[1] - e.iy, b.center[2], std::log(b.length), std::log(b.width), std::log(b.height),
           std::sin(b.yaw), std::cos(b.yaw)};
  return e;
}

Box3D decode_box(int iy, int ix, const std::array<double, kRegChannels>& r, int class_id, const BevGrid& grid) {
  Box3D b;
  b.center = {grid.x_min + (ix + 0.5 + r[0]) * grid.cell_x(), grid.y_min + (iy + 0.5 + r[1]) * grid.cell_y(), r[2]};
  b.length = std::exp(r[3]);
  b.width = std::exp(r[4]);
  b.height = std::exp(r[5]);
  b.yaw = std::atan2(r[6], r[7]);
  b.class_id = class_id;
  return b;
}

DetTargets make_targets(const std::vector<Box3D>& boxes, int n_classes, const BevGrid& grid) {
  DetTargets t;
  t.heat = distill::class_heatmaps(boxes, n_classes, grid);
  std::set<int64_t> taken;
  std::vector<double> reg;
  for (const auto& b : boxes) {
    const auto cell = grid.cell_of(b.center[0], b.center[1]);
    if (!cell || !taken.insert(*cell).second) continue;
    const EncodedBox e = encode_box(b, grid);
    t.positives.push_back(int64_t{b.class_id} * grid.cells() + *cell);
    t.reg_cells.push_back(*cell);
    reg.insert(reg.end(), e.reg.begin(), e.reg.end());
  }
  if (!t.reg_cells.empty()) t.reg = Tensor({static_cast<int64_t>(t.reg_cells.size()), kRegChannels}, std::move(reg));
  return t;
}

DetLoss det_loss(const RawHead& head, const DetTargets& targets) {
  require(head.cls.shape() == targets.heat.shape(), "det_loss: class logits {} vs targets {}",
          ad::to_string(head.cls.shape()), ad::to_string(targets.heat.shape()));
  const int64_t n = head.cls.numel();
  std::vector<double> pos(static_cast<size_t>(n), 0.0), neg(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) neg[i] = std::pow(1.0 - std::min(targets.heat[i], 1.0), kFocalBeta);
  for (int64_t c : targets.positives) {
    pos[c] = 1.0;
    neg[c] = 0.0;
  }
  const double n_pos = std::max<double>(1.0, static_cast<double>(targets.positives.size()));

  const Tensor p = ad::clamp(ad::sigmoid(head.cls), kFocalClip, 1.0 - kFocalClip);
  const Tensor one_minus_p = ad::add(ad::neg(p), 1.0);
  const Tensor pos_term =
      ad::mul(ad::mul(ad::pow_abs(one_minus_p, kFocalAlpha), ad::log(p)), Tensor(head.cls.shape(), std::move(pos)));
  const Tensor neg_term =
      ad::mul(ad::mul(ad::pow_abs(p, kFocalAlpha), ad::log(one_minus_p)), Tensor(head.cls.shape(), std::move(neg)));
  DetLoss out;
  out.focal = ad::mul(ad::sum(ad::add(pos_term, neg_term)), -1.0 / n_pos);

  if (targets.reg_cells.empty()) {
    out.l1 = Tensor::scalar(0.0);
  } else {
    const int64_t cells = head.reg.dim(1) * head.reg.dim(2);
    const Tensor pred = ad::gather_columns(ad::reshape(head.reg, {kRegChannels, cells}), targets.reg_cells);
    out.l1 = ad::mul(ad::sum(ad::abs(ad::sub(pred, targets.reg))),
                     1.0 / static_cast<double>(targets.reg_cells.size()));
  }
  out.total = ad::add(out.focal, ad::mul(out.l1, kRegWeight));
  return out;
}

std::vector<Detection> decode(const RawHead& head, const BevGrid& grid, double score_thresh, int topk) {
  const int64_t n_cls = head.cls.dim(0), ny = head.cls.dim(1), nx = head.cls.dim(2);
  require(ny == grid.ny && nx == grid.nx && head.reg.shape() == ad::Shape{kRegChannels, ny, nx},
          "decode: head shapes {} / {} do not fit a {}x{} grid", ad::to_string(head.cls.shape()),
          ad::to_string(head.reg.shape()), grid.ny, grid.nx);
  const int64_t plane = ny * nx;
  std::vector<double> prob(static_cast<size_t>(head.cls.numel()));
  for (size_t i = 0; i < prob.size(); ++i) prob[i] = 1.0 / (1.0 + std::exp(-head.cls[static_cast<int64_t>(i)]));

  struct Peak {
    double score;
    int64_t c, iy, ix;
  };
  std::vector<Peak> peaks;
  for (int64_t c = 0; c < n_cls; ++c)
    for (int64_t iy = 0; iy < ny; ++iy)
      for (int64_t ix = 0; ix < nx; ++ix) {
        const double v = prob[c * plane + iy * nx + ix];
        if (!(v > score_thresh)) continue;
        bool is_max = true;
        for (int64_t dy = -1; dy <= 1 && is_max; ++dy)
          for (int64_t dx = -1; dx <= 1; ++dx) {
            const int64_t y = iy + dy, x = ix + dx;
            if ((dy || dx) && y >= 0 && y < ny && x >= 0 && x < nx && prob[c * plane + y * nx + x] > v) {
              is_max = false;
              break;
            }
          }
        if (is_max) peaks.push_back({v, c, iy, ix});
      }
  std::stable_sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) { return a.score > b.score; });
  if (static_cast<int64_t>(peaks.size()) > topk) peaks.resize(static_cast<size_t>(std::max(topk, 0)));

  std::vector<Detection> out;
  out.reserve(peaks.size());
  for (const auto& pk : peaks) {
    Detection d;
    d.class_id = static_cast<int>(pk.c);
    d.confidence = pk.score;
    d.iy = static_cast<int>(pk.iy);
    d.ix = static_cast<int>(pk.ix);
    for (int k = 0; k < kRegChannels; ++k) d.reg[k] = head.reg[k * plane + pk.iy * nx + pk.ix];
    for (int64_t c = 0; c < n_cls; ++c) d.class_probs.push_back(prob[c * plane + pk.iy * nx + pk.ix]);
    d.box = decode_box(d.iy, d.ix, d.reg, d.class_id, grid);
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace bevsim::detnet

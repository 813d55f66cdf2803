// Copyright 2026 The bevsim Authors
// SPDX-License-Identifier: Apache-2.0

// Object-aware masks and the distillation losses between teacher and
// student BEV features and predictions.

#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "bevsim/detection.hpp"
#include "bevsim/geometry.hpp"

namespace bevsim::distill {

using ad::Tensor;
using geom::BevGrid;
using scene::Box3D;

// Largest radius r such that a box of h x w shifted by r at a corner still
// overlaps the original with IoU >= min_overlap, over the three placements
// (both enlarged, one inside the other, both shrunk). Minimum of the three
// quadratic roots.
double gaussian_radius(double h, double w, double min_overlap);

inline constexpr double kMinSigma = 2.0;
inline constexpr double kRadiusOverlap = 0.1;

// Sigma in cells for a box footprint of h x w cells.
double heatmap_sigma(double h_cells, double w_cells);

// Box centre in continuous cell coordinates: cell (ix, iy) has centre (ix, iy).
std::array<double, 2> cell_coords(const Box3D& b, const BevGrid& grid);

// Gaussian sum for one class, [ny x nx], not clipped.
Tensor class_heatmap(const std::vector<Box3D>& boxes, int class_id, const BevGrid& grid);
// Per-class maps stacked, [n_classes x ny x nx], not clipped.
Tensor class_heatmaps(const std::vector<Box3D>& boxes, int n_classes, const BevGrid& grid);
// Sum over classes clipped to [0, 1], [ny x nx].
Tensor heatmap(const std::vector<Box3D>& boxes, const BevGrid& grid);

// 1 where the cell centre is inside a rotated box footprint, [ny x nx].
Tensor box_binary_map(const std::vector<Box3D>& boxes, const BevGrid& grid);

struct ObjectMask {
  Tensor heat;    // H
  Tensor binary;  // B
  Tensor mask;    // M_o = B * H
};
ObjectMask object_mask(const Tensor& heat, const Tensor& binary);
ObjectMask object_mask(const std::vector<Box3D>& boxes, const BevGrid& grid);

// Mean squared difference; the teacher side is detached.
Tensor mse_loss(const Tensor& teacher, const Tensor& student);
inline Tensor imd_loss(const Tensor& t, const Tensor& s) { return mse_loss(t, s); }
inline Tensor mmdf_loss(const Tensor& t, const Tensor& s) { return mse_loss(t, s); }

inline constexpr double kMaskEps = 1e-8;

// sum(M * mean_c (t - s)^2) / max(sum M, eps) for [C x ny x nx] features.
Tensor cmd_loss(const Tensor& teacher, const Tensor& student, const Tensor& mask);

struct QualityScore {
  double s = 0.0;
  std::optional<size_t> match;
};

// IoU of two footprints after expressing the detection centre in the
// ground-truth box frame; both are then treated as axis-aligned there.
double derotated_bev_iou(const Box3D& det, const Box3D& gt);

// Greedy by descending confidence; each detection takes the nearest unused
// same-class ground truth within max_dist metres.
std::vector<QualityScore> quality_score(const std::vector<Detection>& dets, const std::vector<Box3D>& gt,
                                        double max_dist = 2.0);

inline constexpr double kProbClip = 1e-6;

// Mean of |y - p|^beta * BCE(p, y) with p clipped to [1e-6, 1 - 1e-6].
Tensor qfl(const Tensor& p, const Tensor& y, double beta = 2.0);

// Quality-weighted prediction distillation. cls_logits [n_cls x ny x nx] and
// reg [8 x ny x nx] are raw student head outputs; teacher values come from
// the detections.
Tensor mmdp_loss(const std::vector<Detection>& teacher_dets, const std::vector<QualityScore>& scores,
                 const Tensor& cls_logits, const Tensor& reg, double beta = 2.0);

// Writes H, B and M_o as 8-bit PGMs (round(255 v)) into dir.
void dump_masks(const ObjectMask& m, const std::filesystem::path& dir, const std::string& stem);

}  // namespace bevsim::distill

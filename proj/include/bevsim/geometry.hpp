// Copyright 2026 The bevsim Authors
// SPDX-License-Identifier: Apache-2.0

// Shared BEV space, camera frustum lifting, BEV pooling and the LiDAR pillar
// encoder.
//
// BEV maps are [C x ny x nx]: row iy runs along ego y, column ix along ego x.
// Cell (iy, ix) spans [x_min + ix*cx, x_min + (ix+1)*cx) and likewise in y.

#pragma once

#include <array>
#include <optional>
#include <vector>

#include "bevsim/json_util.hpp"
#include "bevsim/nn.hpp"
#include "bevsim/scene.hpp"

namespace bevsim::geom {

using ad::Tensor;
using scene::Vec3;

struct BevGrid {
  double x_min = -20.0, x_max = 20.0, y_min = -20.0, y_max = 20.0;
  int nx = 40, ny = 40;

  double cell_x() const { return (x_max - x_min) / nx; }
  double cell_y() const { return (y_max - y_min) / ny; }
  int64_t cells() const { return static_cast<int64_t>(nx) * ny; }
  // Flat index iy * nx + ix, or nullopt outside the extent.
  std::optional<int64_t> cell_of(double x, double y) const;
  // Cell centre in ego metres.
  std::array<double, 2> center(int ix, int iy) const;
  void validate() const;
};

struct DepthBins {
  double d_min = 1.0, d_max = 28.0;
  int count = 16;

  double width() const { return (d_max - d_min) / count; }
  double center(int k) const { return d_min + (k + 0.5) * width(); }
  void validate() const;
};

json to_json(const BevGrid& g);
BevGrid grid_from_json(const json& j);
json to_json(const DepthBins& b);
DepthBins bins_from_json(const json& j);

struct Projection {
  std::vector<std::array<double, 2>> uv;  // pixel coordinates (u right, v down)
  std::vector<double> depth;              // camera-frame z
  std::vector<bool> valid;                // depth > 0
};

Projection project_points(const scene::CameraView& view, const std::vector<Vec3>& pts_ego);
Vec3 unproject(const scene::CameraView& view, double u, double v, double depth);

struct FrustumPoint {
  Vec3 ego{};
  int view = 0, v = 0, u = 0, bin = 0;
  double pixel_u = 0.0, pixel_v = 0.0, depth = 0.0;
};

// Points ordered (view, feature row, feature column, depth bin).
struct Frustum {
  int views = 0, height = 0, width = 0, bins = 0;
  std::vector<FrustumPoint> points;
};

// Feature pixel (i, j) sits at image position ((j + 0.5) W / W_f, (i + 0.5) H / H_f).
Frustum gen_frustum(const scene::CameraRig& rig, int feat_h, int feat_w, const DepthBins& bins);

// In-extent frustum points and their BEV cells, fixed for a rig and grid.
struct PoolIndex {
  std::vector<int64_t> point;
  std::vector<int64_t> cell;
  BevGrid grid;
};
PoolIndex make_pool_index(const Frustum& frustum, const BevGrid& grid);

// Two 3x3 conv + relu, then a 1x1 projection. Used for depth logits and
// context features alike.
struct ConvHead {
  nn::Conv2d c1, c2, out;

  ConvHead() = default;
  ConvHead(int64_t in, int64_t mid, int64_t out_channels, Rng& rng, bool zero_last = false);
  Tensor operator()(const Tensor& x) const;
  void params(const std::string& prefix, nn::ParamList& out) const;
};

// Per-view context [C x H_f x W_f] and depth logits [D x H_f x W_f] to
// lifted points [V*H_f*W_f*D x C] in frustum order.
Tensor lift(const std::vector<Tensor>& context, const std::vector<Tensor>& depth_logits);

// Sums lifted point features into a [C x ny x nx] map.
Tensor bev_pool(const Tensor& point_features, const PoolIndex& index);
// Same, for arbitrary point positions.
Tensor bev_pool(const Tensor& point_features, const std::vector<Vec3>& positions, const BevGrid& grid);

// LiDAR points binned to pillars; independent of learned parameters.
struct PillarInput {
  Tensor encoding;                 // [P x 4]: z, intensity, dx, dy to cell centre; undefined if P = 0
  std::vector<int64_t> segment;    // pillar id per point
  std::vector<int64_t> pillar_cell;  // flat cell per pillar, ascending
};
PillarInput prepare_pillars(const std::vector<scene::Point>& points, const BevGrid& grid);

struct PillarEncoder {
  nn::Linear point_mlp;  // 4 -> hidden
  nn::Linear proj;       // hidden -> C_L
  BevGrid grid;

  PillarEncoder() = default;
  PillarEncoder(int64_t hidden, int64_t out_channels, const BevGrid& grid, Rng& rng);
  int64_t out_channels() const { return proj.weight.dim(1); }
  Tensor operator()(const PillarInput& in) const;
  void params(const std::string& prefix, nn::ParamList& out) const;
};

}  // namespace bevsim::geom

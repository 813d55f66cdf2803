// Copyright 2026 The bevsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "bevsim/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace bevsim::geom {

std::optional<int64_t> BevGrid::cell_of(double x, double y) const {
  if (!(x >= x_min && x < x_max && y >= y_min && y < y_max)) return std::nullopt;
  const int ix = std::min(static_cast<int>(std::floor((x - x_min) / cell_x())), nx - 1);
  const int iy = std::min(static_cast<int>(std::floor((y - y_min) / cell_y())), ny - 1);
  return static_cast<int64_t>(iy) * nx + ix;
}

std::array<double, 2> BevGrid::center(int ix, int iy) const {
  return {x_min + (ix + 0.5) * cell_x(), y_min + (iy + 0.5) * cell_y()};
}

void BevGrid::validate() const {
  require(nx > 0 && ny > 0, "BEV grid needs positive cell counts, got {} x {}", nx, ny);
  require(x_max > x_min && y_max > y_min, "BEV grid extent must be positive");
}

void DepthBins::validate() const {
  require(d_min > 0.0 && d_max > d_min, "depth range [{}, {}] invalid", d_min, d_max);
  require(count >= 2, "need at least 2 depth bins, got {}", count);
}

json to_json(const BevGrid& g) {
  return {{"x_range", {g.x_min, g.x_max}}, {"y_range", {g.y_min, g.y_max}}, {"nx", g.nx}, {"ny", g.ny}};
}

BevGrid grid_from_json(const json& j) {
  BevGrid g;
  FieldReader r(j, "model.grid");
  std::array<double, 2> xr{g.x_min, g.x_max}, yr{g.y_min, g.y_max};
  r.get("x_range", xr);
  r.get("y_range", yr);
  r.get("nx", g.nx);
  r.get("ny", g.ny);
  r.finish();
  g.x_min = xr[0];
  g.x_max = xr[1];
  g.y_min = yr[0];
  g.y_max = yr[1];
  g.validate();
  return g;
}

json to_json(const DepthBins& b) { return {{"d_min", b.d_min}, {"d_max", b.d_max}, {"count", b.count}}; }

DepthBins bins_from_json(const json& j) {
  DepthBins b;
  FieldReader r(j, "model.depth");
  r.get("d_min", b.d_min);
  r.get("d_max", b.d_max);
  r.get("count", b.count);
  r.finish();
  b.validate();
  return b;
}

Projection project_points(const scene::CameraView& view, const std::vector<Vec3>& pts_ego) {
  Projection p;
  p.uv.reserve(pts_ego.size());
  p.depth.reserve(pts_ego.size());
  p.valid.reserve(pts_ego.size());
  for (const auto& e : pts_ego) {
    const Vec3 c = view.to_camera(e);
    const bool ok = c[2] > 0.0;
    p.valid.push_back(ok);
    p.depth.push_back(c[2]);
    if (ok)
      p.uv.push_back({view.fx * c[0] / c[2] + view.cx, view.fy * c[1] / c[2] + view.cy});
    else
      p.uv.push_back({0.0, 0.0});
  }
  return p;
}

Vec3 unproject(const scene::CameraView& view, double u, double v, double depth) {
  return view.to_ego({(u - view.cx) / view.fx * depth, (v - view.cy) / view.fy * depth, depth});
}

Frustum gen_frustum(const scene::CameraRig& rig, int feat_h, int feat_w, const DepthBins& bins) {
  bins.validate();
  require(feat_h > 0 && feat_w > 0, "feature size must be positive");
  Frustum f;
  f.views = static_cast<int>(rig.views.size());
  f.height = feat_h;
  f.width = feat_w;
  f.bins = bins.count;
  f.points.reserve(static_cast<size_t>(f.views) * feat_h * feat_w * bins.count);
  for (int vi = 0; vi < f.views; ++vi) {
    const auto& view = rig.views[vi];
    const double sy = static_cast<double>(view.height) / feat_h;
    const double sx = static_cast<double>(view.width) / feat_w;
    for (int i = 0; i < feat_h; ++i)
      for (int j = 0; j < feat_w; ++j)
        for (int k = 0; k < bins.count; ++k) {
          FrustumPoint p;
          p.view = vi;
          p.v = i;
          p.u = j;
          p.bin = k;
          p.pixel_u = (j + 0.5) * sx;
          p.pixel_v = (i + 0.5) * sy;
          p.depth = bins.center(k);
          p.ego = unproject(view, p.pixel_u, p.pixel_v, p.depth);
          f.points.push_back(p);
        }
  }
  return f;
}

PoolIndex make_pool_index(const Frustum& frustum, const BevGrid& grid) {
  grid.validate();
  PoolIndex idx;
  idx.grid = grid;
  for (size_t i = 0; i < frustum.points.size(); ++i) {
    const auto& e = frustum.points[i].ego;
    if (auto c = grid.cell_of(e[0], e[1])) {
      idx.point.push_back(static_cast<int64_t>(i));
      idx.cell.push_back(*c);
    }
  }
  return idx;
}

ConvHead::ConvHead(int64_t in, int64_t mid, int64_t out_channels, Rng& rng, bool zero_last)
    : c1(in, mid, 3, rng), c2(mid, mid, 3, rng) {
  out = zero_last ? nn::Conv2d::zeros(mid, out_channels, 1) : nn::Conv2d(mid, out_channels, 1, rng);
}

Tensor ConvHead::operator()(const Tensor& x) const { return out(ad::relu(c2(ad::relu(c1(x))))); }

void ConvHead::params(const std::string& prefix, nn::ParamList& list) const {
  c1.params(nn::join(prefix, "c1"), list);
  c2.params(nn::join(prefix, "c2"), list);
  out.params(nn::join(prefix, "out"), list);
}

Tensor lift(const std::vector<Tensor>& context, const std::vector<Tensor>& depth_logits) {
  require(context.size() == depth_logits.size() && !context.empty(), "lift: {} context maps for {} depth maps",
          context.size(), depth_logits.size());
  std::vector<Tensor> parts;
  parts.reserve(context.size());
  for (size_t v = 0; v < context.size(); ++v) {
    const Tensor& ctx = context[v];
    const Tensor& lg = depth_logits[v];
    require(ctx.rank() == 3 && lg.rank() == 3 && ctx.dim(1) == lg.dim(1) && ctx.dim(2) == lg.dim(2),
            "lift: context {} and depth logits {} disagree spatially", ad::to_string(ctx.shape()),
            ad::to_string(lg.shape()));
    const int64_t c = ctx.dim(0), d = lg.dim(0), hw = ctx.dim(1) * ctx.dim(2);
    const Tensor prob = ad::softmax(lg, 0);
    const Tensor prob_t = ad::transpose(ad::reshape(prob, {d, hw}));  // [HW x D]
    const Tensor ctx_t = ad::transpose(ad::reshape(ctx, {c, hw}));    // [HW x C]
    parts.push_back(ad::row_outer(prob_t, ctx_t));
  }
  return parts.size() == 1 ? parts[0] : ad::concat(parts, 0);
}

Tensor bev_pool(const Tensor& point_features, const PoolIndex& index) {
  const int64_t c = point_features.dim(1);
  const ad::Shape out{c, index.grid.ny, index.grid.nx};
  if (index.point.empty()) return ad::scatter_add(Tensor(), {}, out);
  return ad::scatter_add(ad::gather_rows(point_features, index.point), index.cell, out);
}

Tensor bev_pool(const Tensor& point_features, const std::vector<Vec3>& positions, const BevGrid& grid) {
  require(point_features.rank() == 2 && point_features.dim(0) == static_cast<int64_t>(positions.size()),
          "bev_pool: {} positions for features {}", positions.size(), ad::to_string(point_features.shape()));
  PoolIndex idx;
  idx.grid = grid;
  for (size_t i = 0; i < positions.size(); ++i)
    if (auto c = grid.cell_of(positions[i][0], positions[i][1])) {
      idx.point.push_back(static_cast<int64_t>(i));
      idx.cell.push_back(*c);
    }
  return bev_pool(point_features, idx);
}

PillarInput prepare_pillars(const std::vector<scene::Point>& points, const BevGrid& grid) {
  PillarInput in;
  std::vector<std::pair<size_t, int64_t>> kept;
  std::map<int64_t, int64_t> pillar_of;
  for (size_t i = 0; i < points.size(); ++i)
    if (auto c = grid.cell_of(points[i].x, points[i].y)) {
      kept.emplace_back(i, *c);
      pillar_of.emplace(*c, 0);
    }
  if (kept.empty()) return in;
  for (auto& [cell, id] : pillar_of) {
    id = static_cast<int64_t>(in.pillar_cell.size());
    in.pillar_cell.push_back(cell);
  }
  std::vector<double> enc;
  enc.reserve(kept.size() * 4);
  for (const auto& [i, cell] : kept) {
    const auto& p = points[i];
    const auto ctr = grid.center(static_cast<int>(cell % grid.nx), static_cast<int>(cell / grid.nx));
    enc.insert(enc.end(), {p.z, p.intensity, p.x - ctr[0], p.y - ctr[1]});
    in.segment.push_back(pillar_of[cell]);
  }
  in.encoding = Tensor({static_cast<int64_t>(kept.size()), 4}, std::move(enc));
  return in;
}

PillarEncoder::PillarEncoder(int64_t hidden, int64_t out_channels, const BevGrid& g, Rng& rng)
    : point_mlp(4, hidden, rng), proj(hidden, out_channels, rng), grid(g) {}

Tensor PillarEncoder::operator()(const PillarInput& in) const {
  const ad::Shape out{out_channels(), grid.ny, grid.nx};
  if (!in.encoding.defined()) return ad::scatter_add(Tensor(), {}, out);
  const Tensor h = ad::relu(point_mlp(in.encoding));
  const Tensor pooled = ad::segment_max(h, in.segment, static_cast<int64_t>(in.pillar_cell.size()));
  return ad::scatter_add(proj(pooled), in.pillar_cell, out);
}

void PillarEncoder::params(const std::string& prefix, nn::ParamList& list) const {
  point_mlp.params(nn::join(prefix, "point_mlp"), list);
  proj.params(nn::join(prefix, "proj"), list);
}

}  // namespace bevsim::geom

// Copyright 2026 The bevsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "bevsim/scene.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "bevsim/rng.hpp"

namespace bevsim::scene {

namespace {

Vec3 rotate_z(const Vec3& p, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]};
}

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

Vec3 normalised(const Vec3& v) {
  const double n = std::sqrt(dot(v, v));
  return {v[0] / n, v[1] / n, v[2] / n};
}

}  // namespace

std::array<std::array<double, 2>, 4> Box3D::bev_corners() const {
  const double c = std::cos(yaw), s = std::sin(yaw);
  const double hl = 0.5 * length, hw = 0.5 * width;
  const std::array<std::array<double, 2>, 4> local{{{hl, hw}, {-hl, hw}, {-hl, -hw}, {hl, -hw}}};
  std::array<std::array<double, 2>, 4> out{};
  for (int i = 0; i < 4; ++i) {
    out[i] = {center[0] + c * local[i][0] - s * local[i][1], center[1] + s * local[i][0] + c * local[i][1]};
  }
  return out;
}

Vec3 Box3D::to_local(const Vec3& p) const {
  return rotate_z({p[0] - center[0], p[1] - center[1], p[2] - center[2]}, -yaw);
}

Vec3 CameraView::to_camera(const Vec3& p) const {
  const auto& r = rotation;
  return {r[0] * p[0] + r[1] * p[1] + r[2] * p[2] + translation[0],
          r[3] * p[0] + r[4] * p[1] + r[5] * p[2] + translation[1],
          r[6] * p[0] + r[7] * p[1] + r[8] * p[2] + translation[2]};
}

Vec3 CameraView::to_ego(const Vec3& p) const {
  const auto& r = rotation;
  const Vec3 q{p[0] - translation[0], p[1] - translation[1], p[2] - translation[2]};
  return {r[0] * q[0] + r[3] * q[1] + r[6] * q[2], r[1] * q[0] + r[4] * q[1] + r[7] * q[2],
          r[2] * q[0] + r[5] * q[1] + r[8] * q[2]};
}

Vec3 CameraView::center_ego() const { return to_ego({0.0, 0.0, 0.0}); }

CameraView make_view(std::string name, double heading, const Vec3& position, int height, int width,
                     double hfov_deg) {
  CameraView v;
  v.name = std::move(name);
  v.height = height;
  v.width = width;
  v.fx = 0.5 * width / std::tan(0.5 * hfov_deg * kPi / 180.0);
  v.fy = v.fx;
  v.cx = 0.5 * width;
  v.cy = 0.5 * height;
  const double c = std::cos(heading), s = std::sin(heading);
  // rows: right, down, forward expressed in ego coordinates
  v.rotation = {s, -c, 0.0, 0.0, 0.0, -1.0, c, s, 0.0};
  const auto& r = v.rotation;
  for (int i = 0; i < 3; ++i)
    v.translation[i] = -(r[3 * i] * position[0] + r[3 * i + 1] * position[1] + r[3 * i + 2] * position[2]);
  return v;
}

CameraRig default_rig(int height, int width) {
  CameraRig rig;
  rig.views.push_back(make_view("front_left", kPi / 4, {0.3, 0.2, 0.0}, height, width, 90.0));
  rig.views.push_back(make_view("front_right", -kPi / 4, {0.3, -0.2, 0.0}, height, width, 90.0));
  return rig;
}

int image_channels(const SceneConfig& cfg) { return cfg.n_classes + 1; }

std::optional<Hit> intersect_box(const Box3D& box, const Vec3& origin, const Vec3& dir) {
  const Vec3 o = box.to_local(origin);
  const Vec3 d = rotate_z(dir, -box.yaw);
  const Vec3 half{0.5 * box.length, 0.5 * box.width, 0.5 * box.height};
  double t_near = -std::numeric_limits<double>::infinity();
  double t_far = std::numeric_limits<double>::infinity();
  int axis = -1;
  for (int i = 0; i < 3; ++i) {
    if (std::abs(d[i]) < 1e-15) {
      if (o[i] < -half[i] || o[i] > half[i]) return std::nullopt;
      continue;
    }
    double t1 = (-half[i] - o[i]) / d[i];
    double t2 = (half[i] - o[i]) / d[i];
    if (t1 > t2) std::swap(t1, t2);
    if (t1 > t_near) {
      t_near = t1;
      axis = i;
    }
    t_far = std::min(t_far, t2);
  }
  if (axis < 0 || t_near > t_far || t_near <= 1e-9) return std::nullopt;
  Vec3 n{0.0, 0.0, 0.0};
  n[axis] = d[axis] > 0 ? -1.0 : 1.0;
  return Hit{t_near, rotate_z(n, box.yaw), -1};
}

std::optional<Hit> intersect_boxes(const std::vector<Box3D>& boxes, const Vec3& origin, const Vec3& dir) {
  std::optional<Hit> best;
  for (size_t i = 0; i < boxes.size(); ++i) {
    auto h = intersect_box(boxes[i], origin, dir);
    if (h && (!best || h->t < best->t)) {
      best = h;
      best->box = static_cast<int>(i);
    }
  }
  return best;
}

bool footprints_overlap(const Box3D& a, const Box3D& b, double margin) {
  // Separating-axis test on the two rectangles' edge normals.
  const Box3D* boxes[2] = {&a, &b};
  for (const Box3D* ref : boxes) {
    for (int k = 0; k < 2; ++k) {
      const double ang = ref->yaw + (k == 0 ? 0.0 : kPi / 2);
      const double ax = std::cos(ang), ay = std::sin(ang);
      double lo[2], hi[2];
      for (int j = 0; j < 2; ++j) {
        const auto corners = boxes[j]->bev_corners();
        lo[j] = std::numeric_limits<double>::infinity();
        hi[j] = -lo[j];
        for (const auto& c : corners) {
          const double p = c[0] * ax + c[1] * ay;
          lo[j] = std::min(lo[j], p);
          hi[j] = std::max(hi[j], p);
        }
      }
      if (hi[0] + margin <= lo[1] || hi[1] + margin <= lo[0]) return false;
    }
  }
  return true;
}

Scene sample_scene(uint64_t seed, const SceneConfig& cfg) {
  require(cfg.x_max > cfg.x_min && cfg.y_max > cfg.y_min, "placement region must have positive extent");
  require(cfg.n_classes >= 1 && static_cast<int>(cfg.priors.size()) >= cfg.n_classes,
          "need a size prior for each of {} classes", cfg.n_classes);
  for (const auto& p : cfg.priors)
    require(p.length > 0 && p.width > 0 && p.height > 0, "size priors must be positive");
  require(cfg.min_boxes >= 0 && cfg.max_boxes >= cfg.min_boxes, "box count range [{}, {}] invalid", cfg.min_boxes,
          cfg.max_boxes);

  Rng rng = Rng(seed).split(0);
  Scene s;
  s.seed = seed;
  s.ground_z = cfg.ground_z;
  s.n_classes = cfg.n_classes;
  s.requested_boxes = cfg.min_boxes + static_cast<int>(rng.below(cfg.max_boxes - cfg.min_boxes + 1));
  const double max_az = cfg.max_azimuth_deg * kPi / 180.0;
  for (int n = 0; n < s.requested_boxes; ++n) {
    for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
      Box3D b;
      b.class_id = static_cast<int>(rng.below(cfg.n_classes));
      const SizePrior& p = cfg.priors[b.class_id];
      b.length = p.length * (1.0 + cfg.size_jitter * rng.uniform(-1.0, 1.0));
      b.width = p.width * (1.0 + cfg.size_jitter * rng.uniform(-1.0, 1.0));
      b.height = p.height * (1.0 + cfg.size_jitter * rng.uniform(-1.0, 1.0));
      b.center[0] = rng.uniform(cfg.x_min, cfg.x_max);
      b.center[1] = rng.uniform(cfg.y_min, cfg.y_max);
      b.center[2] = cfg.ground_z + 0.5 * b.height;
      b.yaw = kPi - 2.0 * kPi * rng.uniform();
      if (std::abs(std::atan2(b.center[1], b.center[0])) > max_az) continue;
      bool clear = true;
      for (const auto& other : s.boxes) clear = clear && !footprints_overlap(b, other, cfg.min_gap);
      if (!clear) continue;
      s.boxes.push_back(b);
      break;
    }
  }
  return s;
}

std::vector<ad::Tensor> render_views(const Scene& scene, const CameraRig& rig, const SceneConfig& cfg) {
  const int channels = image_channels(cfg);
  const Vec3 light = normalised({-0.4, 0.5, 0.8});
  std::vector<ad::Tensor> images;
  Rng view_rng = Rng(scene.seed).split(2);
  for (size_t vi = 0; vi < rig.views.size(); ++vi) {
    const CameraView& view = rig.views[vi];
    Rng rng = view_rng.split(vi);
    const double depth_scale = std::exp(cfg.depth_jitter * rng.normal());
    const int h = view.height, w = view.width;
    std::vector<double> img(static_cast<size_t>(channels) * h * w, 0.0);
    const Vec3 origin = view.center_ego();
    for (int v = 0; v < h; ++v) {
      const double bg = 0.15 + 0.35 * (v + 0.5) / h;
      for (int u = 0; u < w; ++u) {
        const Vec3 d_cam{(u + 0.5 - view.cx) / view.fx, (v + 0.5 - view.cy) / view.fy, 1.0};
        const Vec3 d_ego = view.to_ego(d_cam);
        const Vec3 dir{d_ego[0] - origin[0], d_ego[1] - origin[1], d_ego[2] - origin[2]};
        const size_t pix = static_cast<size_t>(v) * w + u;
        const auto hit = intersect_boxes(scene.boxes, origin, dir);
        if (!hit) {
          for (int c = 0; c < cfg.n_classes; ++c) img[c * h * w + pix] = bg;
          continue;
        }
        // camera-frame depth equals t because d_cam has unit z
        const double shade = 0.3 + 0.7 * std::max(0.0, dot(hit->normal, light));
        img[scene.boxes[hit->box].class_id * h * w + pix] = shade;
        img[cfg.n_classes * h * w + pix] = depth_scale / hit->t;
      }
    }
    images.emplace_back(ad::Shape{channels, h, w}, std::move(img));
  }
  return images;
}

std::vector<Point> sample_lidar(const Scene& scene, const LidarConfig& cfg, uint64_t seed) {
  require(cfg.n_beams >= 1 && cfg.azimuth_step_deg > 0.0, "lidar needs at least one beam and a positive step");
  require(cfg.dropout >= 0.0 && cfg.dropout < 1.0, "lidar dropout {} outside [0, 1)", cfg.dropout);
  const int n_az = cfg.n_azimuth > 0 ? cfg.n_azimuth : static_cast<int>(std::lround(360.0 / cfg.azimuth_step_deg));
  const Rng drop = Rng(seed).split(3);
  const Vec3 origin{0.0, 0.0, 0.0};
  std::vector<Point> pts;
  for (int b = 0; b < cfg.n_beams; ++b) {
    const double elev =
        cfg.n_beams == 1 ? cfg.elev_min_deg
                         : cfg.elev_min_deg + (cfg.elev_max_deg - cfg.elev_min_deg) * b / (cfg.n_beams - 1.0);
    const double el = elev * kPi / 180.0;
    for (int a = 0; a < n_az; ++a) {
      const uint64_t ray = static_cast<uint64_t>(b) * n_az + a;
      if (cfg.dropout > 0.0 && static_cast<double>(drop.at(ray) >> 11) * 0x1.0p-53 < cfg.dropout) continue;
      const double az = (cfg.azimuth_start_deg + a * cfg.azimuth_step_deg) * kPi / 180.0;
      const Vec3 dir{std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)};
      double best = cfg.max_range;
      double intensity = -1.0;
      if (auto hit = intersect_boxes(scene.boxes, origin, dir); hit && hit->t <= best) {
        best = hit->t;
        intensity = static_cast<double>(scene.boxes[hit->box].class_id) / scene.n_classes;
      }
      if (cfg.ground && dir[2] < 0.0) {
        const double tg = scene.ground_z / dir[2];
        if (tg > 0.0 && tg < best) {
          best = tg;
          intensity = 0.0;
        }
      }
      if (intensity < 0.0) continue;
      pts.push_back({best * dir[0], best * dir[1], best * dir[2], intensity});
    }
  }
  return pts;
}

uint64_t scene_seed(uint64_t global_seed, uint64_t index) { return Rng(global_seed).split(index).at(0); }

Scene generate_scene(uint64_t global_seed, uint64_t index, const SceneConfig& scfg, const LidarConfig& lcfg,
                     const CameraRig& rig) {
  Scene s = sample_scene(scene_seed(global_seed, index), scfg);
  s.n_classes = scfg.n_classes;
  s.rig = rig;
  s.images = render_views(s, rig, scfg);
  s.points = sample_lidar(s, lcfg, s.seed);
  return s;
}

}  // namespace bevsim::scene

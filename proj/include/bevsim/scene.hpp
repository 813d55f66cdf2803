// Copyright 2026 The bevsim Authors
// SPDX-License-Identifier: Apache-2.0

// Synthetic driving scenes: oriented boxes on a ground plane, seen by a
// pinhole camera rig and a spinning ray-cast LiDAR.
//
// Ego frame: x forward, y left, z up, origin at the sensor head. Camera
// frame: x right, y down, z forward. Pixel (u, v) covers [u, u+1) x [v, v+1).

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bevsim/json_util.hpp"
#include "bevsim/tensor.hpp"

namespace bevsim::scene {

using Vec3 = std::array<double, 3>;

struct Box3D {
  Vec3 center{};
  double length = 1.0;  // along the heading
  double width = 1.0;
  double height = 1.0;
  double yaw = 0.0;  // (-pi, pi], about +z
  int class_id = 0;

  // BEV corners, counter-clockwise.
  std::array<std::array<double, 2>, 4> bev_corners() const;
  // Point in box-local coordinates (x along heading).
  Vec3 to_local(const Vec3& p) const;
};

struct CameraView {
  std::string name;
  double fx = 0, fy = 0, cx = 0, cy = 0;
  std::array<double, 9> rotation{};  // row-major, ego -> camera
  Vec3 translation{};                // p_cam = R p_ego + t
  int height = 0;
  int width = 0;

  Vec3 to_camera(const Vec3& p_ego) const;
  Vec3 to_ego(const Vec3& p_cam) const;
  Vec3 center_ego() const;
};

struct CameraRig {
  std::vector<CameraView> views;
};

// Camera looking along ego yaw `heading` (radians) from `position`.
CameraView make_view(std::string name, double heading, const Vec3& position, int height, int width,
                     double hfov_deg);
CameraRig default_rig(int height = 64, int width = 128);

struct SizePrior {
  double length, width, height;
};

struct SceneConfig {
  int n_classes = 3;
  int min_boxes = 3;
  int max_boxes = 7;
  // Placement region for box centres (ego metres).
  double x_min = 3.0, x_max = 19.0, y_min = -19.0, y_max = 19.0;
  double max_azimuth_deg = 75.0;
  double min_gap = 0.3;  // clearance between BEV footprints
  double size_jitter = 0.1;
  std::vector<SizePrior> priors{{4.4, 1.9, 1.6}, {0.8, 0.8, 1.8}, {2.2, 0.5, 1.0}};
  double ground_z = -1.8;
  int max_attempts = 1000;
  int image_height = 64;
  int image_width = 128;
  double depth_jitter = 0.25;  // log-normal sigma of the per-view inverse-depth scale
};

struct LidarConfig {
  int n_beams = 8;
  double elev_min_deg = -16.0;
  double elev_max_deg = -1.0;
  double azimuth_step_deg = 1.0;
  double azimuth_start_deg = 0.0;
  int n_azimuth = 0;  // 0: full revolution at azimuth_step_deg
  double dropout = 0.2;
  double max_range = 40.0;
  bool ground = true;
  double target_occupancy = 0.30;  // expected occupied-cell fraction on the default grid
};

struct Point {
  double x, y, z, intensity;
};

struct Scene {
  uint64_t seed = 0;
  int requested_boxes = 0;
  std::vector<Box3D> boxes;
  CameraRig rig;
  std::vector<ad::Tensor> images;  // per view [C x H x W]
  std::vector<Point> points;
  double ground_z = -1.8;
  int n_classes = 3;
};

int image_channels(const SceneConfig& cfg);

// Boxes only; rendering and LiDAR are separate passes.
Scene sample_scene(uint64_t seed, const SceneConfig& cfg);
std::vector<ad::Tensor> render_views(const Scene& scene, const CameraRig& rig, const SceneConfig& cfg);
std::vector<Point> sample_lidar(const Scene& scene, const LidarConfig& cfg, uint64_t seed);

// Per-scene seed derived from the dataset seed and the scene index.
uint64_t scene_seed(uint64_t global_seed, uint64_t index);
Scene generate_scene(uint64_t global_seed, uint64_t index, const SceneConfig& scfg, const LidarConfig& lcfg,
                     const CameraRig& rig);

// Nearest ray hit against boxes; returns distance along `dir` and the outward
// normal (ego frame).
struct Hit {
  double t = 0.0;
  Vec3 normal{};
  int box = -1;
};
std::optional<Hit> intersect_box(const Box3D& box, const Vec3& origin, const Vec3& dir);
std::optional<Hit> intersect_boxes(const std::vector<Box3D>& boxes, const Vec3& origin, const Vec3& dir);

// True when the BEV footprints, each grown by margin/2, overlap.
bool footprints_overlap(const Box3D& a, const Box3D& b, double margin = 0.0);

// ------------------------------------------------------------------ datasets

struct DatasetInfo {
  json config;
  uint64_t seed = 0;
  size_t n_scenes = 0;
  size_t n_train = 0;
};

void write_scene(const std::filesystem::path& path, const Scene& scene);
Scene read_scene(const std::filesystem::path& path);

// Writes scene_%06d.bsd files plus manifest.json.
void write_dataset(const std::vector<Scene>& scenes, const std::filesystem::path& dir, const DatasetInfo& info);
std::vector<std::filesystem::path> list_scene_files(const std::filesystem::path& dir);
std::vector<Scene> read_dataset(const std::filesystem::path& dir);
DatasetInfo read_manifest(const std::filesystem::path& dir);

json to_json(const Box3D& b);
Box3D box_from_json(const json& j);
json to_json(const CameraView& v);
CameraView view_from_json(const json& j);

json to_json(const SceneConfig& c);
SceneConfig scene_config_from_json(const json& j);
json to_json(const LidarConfig& c);
LidarConfig lidar_config_from_json(const json& j);

}  // namespace bevsim::scene

// Copyright 2026 The bevsim Authors
// SPDX-License-Identifier: Apache-2.0

// Scene file: "BSDS", u8 version, u32 header length, UTF-8 JSON header,
// u32 block count, then BSDT blocks (one image per view, then the N x 4
// point array when N > 0).

#include <fmt/format.h>

#include <algorithm>
#include <bit>
#include <fstream>

#include "bevsim/bsdt.hpp"
#include "bevsim/scene.hpp"

namespace bevsim::scene {

namespace {

constexpr char kMagic[4] = {'B', 'S', 'D', 'S'};
constexpr uint8_t kVersion = 1;

// Doubles go through their bit patterns so the JSON roundtrip is exact.
json exact(double v) { return std::bit_cast<uint64_t>(v); }
double exact_from(const json& j) { return std::bit_cast<double>(j.get<uint64_t>()); }

json exact3(const Vec3& v) { return json::array({exact(v[0]), exact(v[1]), exact(v[2])}); }
Vec3 exact3_from(const json& j) { return {exact_from(j.at(0)), exact_from(j.at(1)), exact_from(j.at(2))}; }

}  // namespace

json to_json(const Box3D& b) {
  return {{"center", exact3(b.center)}, {"length", exact(b.length)}, {"width", exact(b.width)},
          {"height", exact(b.height)},  {"yaw", exact(b.yaw)},       {"class_id", b.class_id}};
}

Box3D box_from_json(const json& j) {
  Box3D b;
  b.center = exact3_from(j.at("center"));
  b.length = exact_from(j.at("length"));
  b.width = exact_from(j.at("width"));
  b.height = exact_from(j.at("height"));
  b.yaw = exact_from(j.at("yaw"));
  b.class_id = j.at("class_id").get<int>();
  return b;
}

json to_json(const CameraView& v) {
  json rot = json::array();
  for (double r : v.rotation) rot.push_back(exact(r));
  return {{"name", v.name},         {"fx", exact(v.fx)},       {"fy", exact(v.fy)},
          {"cx", exact(v.cx)},      {"cy", exact(v.cy)},       {"rotation", rot},
          {"translation", exact3(v.translation)}, {"height", v.height}, {"width", v.width}};
}

CameraView view_from_json(const json& j) {
  CameraView v;
  v.name = j.at("name").get<std::string>();
  v.fx = exact_from(j.at("fx"));
  v.fy = exact_from(j.at("fy"));
  v.cx = exact_from(j.at("cx"));
  v.cy = exact_from(j.at("cy"));
  for (int i = 0; i < 9; ++i) v.rotation[i] = exact_from(j.at("rotation").at(i));
  v.translation = exact3_from(j.at("translation"));
  v.height = j.at("height").get<int>();
  v.width = j.at("width").get<int>();
  return v;
}

json to_json(const SceneConfig& c) {
  json priors = json::array();
  for (const auto& p : c.priors) priors.push_back({p.length, p.width, p.height});
  return {{"n_classes", c.n_classes},
          {"min_boxes", c.min_boxes},
          {"max_boxes", c.max_boxes},
          {"x_range", {c.x_min, c.x_max}},
          {"y_range", {c.y_min, c.y_max}},
          {"max_azimuth_deg", c.max_azimuth_deg},
          {"min_gap", c.min_gap},
          {"size_jitter", c.size_jitter},
          {"priors", priors},
          {"ground_z", c.ground_z},
          {"max_attempts", c.max_attempts},
          {"image_height", c.image_height},
          {"image_width", c.image_width},
          {"depth_jitter", c.depth_jitter}};
}

SceneConfig scene_config_from_json(const json& j) {
  SceneConfig c;
  FieldReader r(j, "data.scene");
  r.get("n_classes", c.n_classes);
  r.get("min_boxes", c.min_boxes);
  r.get("max_boxes", c.max_boxes);
  std::array<double, 2> xr{c.x_min, c.x_max}, yr{c.y_min, c.y_max};
  r.get("x_range", xr);
  r.get("y_range", yr);
  c.x_min = xr[0];
  c.x_max = xr[1];
  c.y_min = yr[0];
  c.y_max = yr[1];
  r.get("max_azimuth_deg", c.max_azimuth_deg);
  r.get("min_gap", c.min_gap);
  r.get("size_jitter", c.size_jitter);
  if (r.has("priors")) {
    c.priors.clear();
    for (const auto& p : r.sub("priors")) {
      require(p.is_array() && p.size() == 3, "config key 'data.scene.priors': each prior is [length, width, height]");
      c.priors.push_back({p[0].get<double>(), p[1].get<double>(), p[2].get<double>()});
    }
  }
  r.get("ground_z", c.ground_z);
  r.get("max_attempts", c.max_attempts);
  r.get("image_height", c.image_height);
  r.get("image_width", c.image_width);
  r.get("depth_jitter", c.depth_jitter);
  r.finish();
  require(c.image_height > 0 && c.image_width > 0, "image size must be positive");
  return c;
}

json to_json(const LidarConfig& c) {
  return {{"n_beams", c.n_beams},
          {"elev_min_deg", c.elev_min_deg},
          {"elev_max_deg", c.elev_max_deg},
          {"azimuth_step_deg", c.azimuth_step_deg},
          {"azimuth_start_deg", c.azimuth_start_deg},
          {"n_azimuth", c.n_azimuth},
          {"dropout", c.dropout},
          {"max_range", c.max_range},
          {"ground", c.ground},
          {"target_occupancy", c.target_occupancy}};
}

LidarConfig lidar_config_from_json(const json& j) {
  LidarConfig c;
  FieldReader r(j, "data.lidar");
  r.get("n_beams", c.n_beams);
  r.get("elev_min_deg", c.elev_min_deg);
  r.get("elev_max_deg", c.elev_max_deg);
  r.get("azimuth_step_deg", c.azimuth_step_deg);
  r.get("azimuth_start_deg", c.azimuth_start_deg);
  r.get("n_azimuth", c.n_azimuth);
  r.get("dropout", c.dropout);
  r.get("max_range", c.max_range);
  r.get("ground", c.ground);
  r.get("target_occupancy", c.target_occupancy);
  r.finish();
  return c;
}

void write_scene(const std::filesystem::path& path, const Scene& scene) {
  json header;
  header["seed"] = scene.seed;
  header["requested_boxes"] = scene.requested_boxes;
  header["n_classes"] = scene.n_classes;
  header["ground_z"] = exact(scene.ground_z);
  header["boxes"] = json::array();
  for (const auto& b : scene.boxes) header["boxes"].push_back(to_json(b));
  header["rig"] = json::array();
  for (const auto& v : scene.rig.views) header["rig"].push_back(to_json(v));
  header["n_images"] = scene.images.size();
  header["n_points"] = scene.points.size();
  const std::string text = header.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(os.good(), "cannot open {} for writing", path.string());
  os.write(kMagic, 4);
  os.put(static_cast<char>(kVersion));
  io::put_u32(os, static_cast<uint32_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  const size_t n_blocks = scene.images.size() + (scene.points.empty() ? 0 : 1);
  io::put_u32(os, static_cast<uint32_t>(n_blocks));
  for (const auto& img : scene.images) io::write_tensor(os, img);
  if (!scene.points.empty()) {
    std::vector<double> flat;
    flat.reserve(scene.points.size() * 4);
    for (const auto& p : scene.points) flat.insert(flat.end(), {p.x, p.y, p.z, p.intensity});
    io::write_tensor(os, ad::Tensor({static_cast<int64_t>(scene.points.size()), 4}, std::move(flat)));
  }
  require(os.good(), "write to {} failed", path.string());
}

Scene read_scene(const std::filesystem::path& path) {
  const std::string origin = path.string();
  std::ifstream is(path, std::ios::binary);
  require(is.good(), "cannot open scene file {}", origin);
  char magic[4] = {};
  is.read(magic, 4);
  require(is.gcount() == 4 && std::equal(magic, magic + 4, kMagic), "{}: not a scene file (bad magic)", origin);
  const int version = is.get();
  require(version == kVersion, "{}: unsupported scene version {}", origin, version);
  const uint32_t len = io::get_u32(is, origin);
  std::string text(len, '\0');
  is.read(text.data(), len);
  require(static_cast<uint32_t>(is.gcount()) == len, "{}: truncated scene header", origin);

  Scene s;
  try {
    const json header = json::parse(text);
    s.seed = header.at("seed").get<uint64_t>();
    s.requested_boxes = header.at("requested_boxes").get<int>();
    s.n_classes = header.at("n_classes").get<int>();
    s.ground_z = exact_from(header.at("ground_z"));
    for (const auto& b : header.at("boxes")) s.boxes.push_back(box_from_json(b));
    for (const auto& v : header.at("rig")) s.rig.views.push_back(view_from_json(v));
    const size_t n_images = header.at("n_images").get<size_t>();
    const size_t n_points = header.at("n_points").get<size_t>();
    const uint32_t n_blocks = io::get_u32(is, origin);
    require(n_blocks == n_images + (n_points ? 1 : 0), "{}: block count {} disagrees with header", origin, n_blocks);
    for (size_t i = 0; i < n_images; ++i) s.images.push_back(io::read_tensor(is, origin));
    if (n_points) {
      const ad::Tensor pts = io::read_tensor(is, origin);
      require(pts.rank() == 2 && pts.dim(0) == static_cast<int64_t>(n_points) && pts.dim(1) == 4,
              "{}: point block has shape {}", origin, ad::to_string(pts.shape()));
      const auto d = pts.data();
      s.points.reserve(n_points);
      for (size_t i = 0; i < n_points; ++i) s.points.push_back({d[4 * i], d[4 * i + 1], d[4 * i + 2], d[4 * i + 3]});
    }
  } catch (const json::exception& e) {
    fail("{}: corrupt scene header: {}", origin, e.what());
  }
  return s;
}

void write_dataset(const std::vector<Scene>& scenes, const std::filesystem::path& dir, const DatasetInfo& info) {
  std::filesystem::create_directories(dir);
  for (size_t i = 0; i < scenes.size(); ++i) write_scene(dir / fmt::format("scene_{:06d}.bsd", i), scenes[i]);
  json manifest{{"config", info.config},
                {"seed", info.seed},
                {"n_scenes", scenes.size()},
                {"n_train", info.n_train}};
  std::ofstream os(dir / "manifest.json");
  require(os.good(), "cannot write {}", (dir / "manifest.json").string());
  os << manifest.dump(2) << "\n";
}

std::vector<std::filesystem::path> list_scene_files(const std::filesystem::path& dir) {
  require(std::filesystem::is_directory(dir), "dataset directory {} does not exist", dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (entry.is_regular_file() && name.rfind("scene_", 0) == 0 && entry.path().extension() == ".bsd")
      files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(),
            [](const auto& a, const auto& b) { return a.filename().string() < b.filename().string(); });
  return files;
}

std::vector<Scene> read_dataset(const std::filesystem::path& dir) {
  std::vector<Scene> scenes;
  for (const auto& f : list_scene_files(dir)) scenes.push_back(read_scene(f));
  return scenes;
}

DatasetInfo read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  std::ifstream is(path);
  require(is.good(), "missing {}", path.string());
  DatasetInfo info;
  try {
    const json j = json::parse(is);
    info.config = j.at("config");
    info.seed = j.at("seed").get<uint64_t>();
    info.n_scenes = j.at("n_scenes").get<size_t>();
    info.n_train = j.at("n_train").get<size_t>();
  } catch (const json::exception& e) {
    fail("{}: corrupt manifest: {}", path.string(), e.what());
  }
  return info;
}

}  // namespace bevsim::scene

// Copyright 2026 The bevsim Authors
// SPDX-License-Identifier: Apache-2.0

#include <fstream>
#include <map>

#include "bevsim/bsdt.hpp"
#include "bevsim/detnet.hpp"

namespace bevsim::detnet {

namespace {

// Independent parameter streams per component, so adding a block to one
// model does not shift the initialisation of the others.
enum Stream : uint64_t { kEncoder = 1, kCamera, kFuser, kHead, kPillars, kGcUv, kSim, kGcBev };

geom::PoolIndex build_pool(const ModelConfig& cfg) {
  cfg.validate();
  return geom::make_pool_index(geom::gen_frustum(cfg.rig, cfg.feat_h(), cfg.feat_w(), cfg.depth), cfg.grid);
}

}  // namespace

Detector::Detector(ModelKind kind, ModelConfig cfg) : kind_(kind), cfg_(std::move(cfg)), pool_(build_pool(cfg_)) {}

nn::ParamList Detector::params() const {
  nn::ParamList out;
  params(out);
  return out;
}

void Detector::fuser_head_params(nn::ParamList& out) const {
  fuser.params("fuser", out);
  head.params("head", out);
}

std::vector<Tensor> Detector::encode(const std::vector<Tensor>& images) const {
  require(images.size() == cfg_.rig.views.size(), "model expects {} camera images, got {}", cfg_.rig.views.size(),
          images.size());
  const ad::Shape want{cfg_.image_channels, cfg_.rig.views.front().height, cfg_.rig.views.front().width};
  std::vector<Tensor> out;
  out.reserve(images.size());
  for (const auto& im : images) {
    require(im.shape() == want, "image shape {} does not match the model's {}", ad::to_string(im.shape()),
            ad::to_string(want));
    out.push_back(encoder(im));
  }
  return out;
}

TeacherNet::TeacherNet(const ModelConfig& c, Rng& rng) : Detector(ModelKind::teacher, c) {
  Rng r_enc = rng.split(kEncoder), r_cam = rng.split(kCamera), r_fuse = rng.split(kFuser), r_head = rng.split(kHead),
      r_pil = rng.split(kPillars);
  encoder = Encoder2d(c.image_channels, c.encoder_channels, r_enc);
  camera_branch = LiftSplat(c.encoder_channels[2], c.head_hidden, c.depth.count, c.c_bev, r_cam);
  pillars = geom::PillarEncoder(c.pillar_hidden, c.c_lidar, c.grid, r_pil);
  fuser = Fuser(c.c_lidar + c.c_bev, c.c_fused, r_fuse);
  head = DetHead(c.c_fused, c.n_classes, r_head);
}

FeatureBundle TeacherNet::forward(const geom::PillarInput& lidar, const std::vector<Tensor>& images) const {
  FeatureBundle b;
  b.l_bev = pillars(lidar);
  b.c_bev = camera_branch(encode(images), pool_);
  b.u_bev = fuser({b.l_bev, b.c_bev});
  b.head = head(b.u_bev);
  return b;
}

void TeacherNet::params(nn::ParamList& out) const {
  encoder.params("encoder", out);
  camera_branch.params("camera", out);
  pillars.params("pillars", out);
  fuser_head_params(out);
}

CameraNet::CameraNet(const ModelConfig& c, Rng& rng) : Detector(ModelKind::camera, c) {
  Rng r_enc = rng.split(kEncoder), r_cam = rng.split(kCamera), r_fuse = rng.split(kFuser), r_head = rng.split(kHead);
  encoder = Encoder2d(c.image_channels, c.encoder_channels, r_enc);
  camera_branch = LiftSplat(c.encoder_channels[2], c.head_hidden, c.depth.count, c.c_bev, r_cam);
  fuser = Fuser(c.c_bev, c.c_fused, r_fuse);
  head = DetHead(c.c_fused, c.n_classes, r_head);
}

FeatureBundle CameraNet::forward(const std::vector<Tensor>& images) const {
  FeatureBundle b;
  b.c_bev = camera_branch(encode(images), pool_);
  b.u_bev = fuser({b.c_bev});
  b.head = head(b.u_bev);
  return b;
}

void CameraNet::params(nn::ParamList& out) const {
  encoder.params("encoder", out);
  camera_branch.params("camera", out);
  fuser_head_params(out);
}

StudentNet::StudentNet(const ModelConfig& c, Rng& rng) : Detector(ModelKind::student, c) {
  Rng r_enc = rng.split(kEncoder), r_cam = rng.split(kCamera), r_fuse = rng.split(kFuser), r_head = rng.split(kHead),
      r_uv = rng.split(kGcUv), r_sim = rng.split(kSim), r_bev = rng.split(kGcBev);
  encoder = Encoder2d(c.image_channels, c.encoder_channels, r_enc);
  camera_branch = LiftSplat(c.encoder_channels[2], c.head_hidden, c.depth.count, c.c_bev, r_cam);
  gc_uv = gcm::GcmStack(c.encoder_channels[2], c.gcm_uv, r_uv);
  if (!c.share_depth) sim_branch = LiftSplat(c.encoder_channels[2], c.head_hidden, c.depth.count, c.c_lidar, r_sim);
  gc_bev = gcm::GcmStack(c.c_lidar, c.gcm_bev, r_bev);
  fuser = Fuser(c.c_lidar + c.c_bev, c.c_fused, r_fuse);
  head = DetHead(c.c_fused, c.n_classes, r_head);
}

FeatureBundle StudentNet::forward(const std::vector<Tensor>& images, std::vector<gcm::AttentionTrace>* traces) const {
  const std::vector<Tensor> uv = encode(images);
  FeatureBundle b;
  b.c_bev = camera_branch(uv, pool_);
  std::vector<Tensor> uv_l;
  uv_l.reserve(uv.size());
  for (const auto& f : uv) uv_l.push_back(gc_uv(f, traces));
  const LiftSplat& sim = cfg_.share_depth ? camera_branch : sim_branch;
  b.l_bev = gc_bev(sim(uv_l, pool_), traces);
  b.u_bev = fuser({b.l_bev, b.c_bev});
  b.head = head(b.u_bev);
  return b;
}

void StudentNet::params(nn::ParamList& out) const {
  encoder.params("encoder", out);
  camera_branch.params("camera", out);
  gc_uv.params("gc_uv", out);
  if (!cfg_.share_depth) sim_branch.params("sim", out);
  gc_bev.params("gc_bev", out);
  fuser_head_params(out);
}

std::unique_ptr<Detector> make_detector(ModelKind kind, const ModelConfig& cfg, uint64_t seed) {
  Rng rng(seed);
  switch (kind) {
    case ModelKind::teacher:
      return std::make_unique<TeacherNet>(cfg, rng);
    case ModelKind::camera:
      return std::make_unique<CameraNet>(cfg, rng);
    case ModelKind::student:
      return std::make_unique<StudentNet>(cfg, rng);
  }
  fail("unknown model kind");
}

// ------------------------------------------------------------------ checkpoints

void save_checkpoint(const Detector& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json files = json::object();
  for (const auto& p : model.params()) {
    const std::string file = p.name + ".bsdt";
    io::save_tensor(dir / file, p.tensor);
    files[p.name] = file;
  }
  const json j{{"format", "bevsim-checkpoint"},
               {"version", 1},
               {"kind", to_string(model.kind())},
               {"config", checkpoint_config_json(model.config())},
               {"params", files}};
  std::ofstream os(dir / "model.json", std::ios::trunc);
  require(os.good(), "cannot write {}", (dir / "model.json").string());
  os << j.dump(2) << '\n';
  require(os.good(), "write to {} failed", (dir / "model.json").string());
}

std::unique_ptr<Detector> load_checkpoint(const std::filesystem::path& dir) {
  const auto path = dir / "model.json";
  std::ifstream is(path);
  require(is.good(), "no checkpoint at {} (missing model.json)", dir.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    fail("{}: {}", path.string(), e.what());
  }
  require(j.value("format", "") == "bevsim-checkpoint" && j.value("version", 0) == 1,
          "{}: not a version-1 bevsim checkpoint", path.string());
  auto model = make_detector(model_kind_from_string(j.at("kind").get<std::string>()),
                             checkpoint_config_from_json(j.at("config")), 0);
  const auto files = j.at("params").get<std::map<std::string, std::string>>();
  const auto params = model->params();
  require(files.size() == params.size(), "{}: {} parameter files for a model with {} parameters", path.string(),
          files.size(), params.size());
  for (auto p : params) {
    const auto it = files.find(p.name);
    require(it != files.end(), "{}: parameter '{}' missing", path.string(), p.name);
    const Tensor t = io::load_tensor(dir / it->second);
    require(t.shape() == p.tensor.shape(), "{}: parameter '{}' has shape {}, model expects {}", path.string(), p.name,
            ad::to_string(t.shape()), ad::to_string(p.tensor.shape()));
    std::copy(t.data().begin(), t.data().end(), p.tensor.mutable_data().begin());
  }
  return model;
}

}  // namespace bevsim::detnet

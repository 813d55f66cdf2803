// Copyright 2026 The bevsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "bevsim/detnet.hpp"

namespace bevsim::detnet {

std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::teacher:
      return "teacher";
    case ModelKind::camera:
      return "camera";
    case ModelKind::student:
      return "student";
  }
  return "?";
}

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "teacher") return ModelKind::teacher;
  if (s == "camera") return ModelKind::camera;
  if (s == "student") return ModelKind::student;
  fail("unknown model kind '{}' (expected teacher, camera or student)", s);
}

int ModelConfig::feat_h() const { return rig.views.empty() ? 0 : rig.views.front().height / 8; }
int ModelConfig::feat_w() const { return rig.views.empty() ? 0 : rig.views.front().width / 8; }

void ModelConfig::validate() const {
  grid.validate();
  depth.validate();
  require(!rig.views.empty(), "model needs at least one camera view");
  for (const auto& v : rig.views) {
    require(v.height == rig.views.front().height && v.width == rig.views.front().width,
            "camera views must share one image size");
    require(v.height % 8 == 0 && v.width % 8 == 0 && v.height >= 8 && v.width >= 8,
            "image size {}x{} must be a positive multiple of 8", v.height, v.width);
  }
  for (int c : encoder_channels) require(c > 0, "encoder channels must be positive");
  require(head_hidden > 0 && c_bev > 0 && c_lidar > 0 && c_fused > 0 && pillar_hidden > 0,
          "channel counts must be positive");
  require(n_classes > 0 && image_channels > 0, "model needs classes and image channels");
  require(encoder_channels[2] % gcm_uv.heads == 0, "UV-plane GCM: {} channels not divisible by {} heads",
          encoder_channels[2], gcm_uv.heads);
  require(c_lidar % gcm_bev.heads == 0, "BEV-plane GCM: {} channels not divisible by {} heads", c_lidar,
          gcm_bev.heads);
  require(!share_depth || c_bev == c_lidar, "share_depth needs c_bev == c_lidar");
}

ModelConfig micro_config() {
  ModelConfig c;
  c.grid.x_min = 0.0;
  c.grid.x_max = 16.0;
  c.grid.y_min = -8.0;
  c.grid.y_max = 8.0;
  c.grid.nx = c.grid.ny = 8;
  c.depth = {1.0, 17.0, 4};
  c.encoder_channels = {4, 4, 4};
  c.head_hidden = 4;
  c.c_bev = c.c_lidar = c.c_fused = c.pillar_hidden = 4;
  c.gcm_uv = c.gcm_bev = {2, 2, 1, 0.1};
  c.rig = scene::default_rig(16, 32);
  return c;
}

json to_json(const ModelConfig& c) {
  return json{{"grid", geom::to_json(c.grid)},
              {"depth", geom::to_json(c.depth)},
              {"encoder_channels", c.encoder_channels},
              {"head_hidden", c.head_hidden},
              {"c_bev", c.c_bev},
              {"c_lidar", c.c_lidar},
              {"c_fused", c.c_fused},
              {"pillar_hidden", c.pillar_hidden},
              {"gcm_uv", gcm::to_json(c.gcm_uv)},
              {"gcm_bev", gcm::to_json(c.gcm_bev)},
              {"share_depth", c.share_depth}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  FieldReader r(j, "model");
  if (r.has("grid")) c.grid = geom::grid_from_json(r.sub("grid"));
  if (r.has("depth")) c.depth = geom::bins_from_json(r.sub("depth"));
  r.get("encoder_channels", c.encoder_channels);
  r.get("head_hidden", c.head_hidden);
  r.get("c_bev", c.c_bev);
  r.get("c_lidar", c.c_lidar);
  r.get("c_fused", c.c_fused);
  r.get("pillar_hidden", c.pillar_hidden);
  if (r.has("gcm_uv")) c.gcm_uv = gcm::gcm_config_from_json(r.sub("gcm_uv"), "model.gcm_uv");
  if (r.has("gcm_bev")) c.gcm_bev = gcm::gcm_config_from_json(r.sub("gcm_bev"), "model.gcm_bev");
  r.get("share_depth", c.share_depth);
  r.finish();
  return c;
}

json checkpoint_config_json(const ModelConfig& c) {
  json j = to_json(c);
  j["n_classes"] = c.n_classes;
  j["image_channels"] = c.image_channels;
  json views = json::array();
  for (const auto& v : c.rig.views) views.push_back(scene::to_json(v));
  j["rig"] = views;
  return j;
}

ModelConfig checkpoint_config_from_json(const json& j) {
  json base = j;
  for (const char* k : {"n_classes", "image_channels", "rig"})
    require(j.contains(k), "checkpoint config lacks '{}'", k);
  base.erase("n_classes");
  base.erase("image_channels");
  base.erase("rig");
  ModelConfig c = model_config_from_json(base);
  c.n_classes = j.at("n_classes").get<int>();
  c.image_channels = j.at("image_channels").get<int>();
  c.rig.views.clear();
  for (const auto& v : j.at("rig")) c.rig.views.push_back(scene::view_from_json(v));
  c.validate();
  return c;
}

// ------------------------------------------------------------------ blocks

Encoder2d::Encoder2d(int64_t in, const std::array<int, 3>& channels, Rng& rng) {
  int64_t prev = in;
  for (size_t i = 0; i < stages.size(); ++i) {
    stages[i] = nn::Conv2d(prev, channels[i], 3, rng);
    prev = channels[i];
  }
}

Tensor Encoder2d::operator()(const Tensor& image) const {
  Tensor x = image;
  for (const auto& s : stages) x = ad::relu(s(ad::avg_pool2(x)));
  return x;
}

void Encoder2d::params(const std::string& prefix, nn::ParamList& out) const {
  for (size_t i = 0; i < stages.size(); ++i) stages[i].params(nn::join(prefix, "stage" + std::to_string(i)), out);
}

LiftSplat::LiftSplat(int64_t in, int64_t hidden, int64_t bins, int64_t out, Rng& rng)
    : depth(in, hidden, bins, rng), context(in, hidden, out, rng) {}

Tensor LiftSplat::operator()(const std::vector<Tensor>& uv, const geom::PoolIndex& index) const {
  std::vector<Tensor> ctx, logits;
  ctx.reserve(uv.size());
  logits.reserve(uv.size());
  for (const auto& f : uv) {
    logits.push_back(depth(f));
    ctx.push_back(context(f));
  }
  return geom::bev_pool(geom::lift(ctx, logits), index);
}

void LiftSplat::params(const std::string& prefix, nn::ParamList& out) const {
  depth.params(nn::join(prefix, "depth"), out);
  context.params(nn::join(prefix, "context"), out);
}

Fuser::Fuser(int64_t in, int64_t out, Rng& rng) : c1(in, out, 3, rng), c2(out, out, 3, rng) {}

Tensor Fuser::operator()(const std::vector<Tensor>& maps) const {
  const Tensor x = maps.size() == 1 ? maps.front() : ad::concat(maps, 0);
  return ad::relu(c2(ad::relu(c1(x))));
}

void Fuser::params(const std::string& prefix, nn::ParamList& out) const {
  c1.params(nn::join(prefix, "c1"), out);
  c2.params(nn::join(prefix, "c2"), out);
}

DetHead::DetHead(int64_t in, int64_t n_classes, Rng& rng) : cls(in, n_classes, 1, rng), reg(in, kRegChannels, 1, rng) {
  for (auto& b : cls.bias.mutable_data()) b = kClassBiasInit;
}

RawHead DetHead::operator()(const Tensor& u) const { return {cls(u), reg(u)}; }

void DetHead::params(const std::string& prefix, nn::ParamList& out) const {
  cls.params(nn::join(prefix, "cls"), out);
  reg.params(nn::join(prefix, "reg"), out);
}

FeatureBundle FeatureBundle::detach() const {
  auto d = [](const Tensor& t) { return t.defined() ? t.detach() : Tensor(); };
  return {d(c_bev), d(l_bev), d(u_bev), {d(head.cls), d(head.reg)}, true};
}

SceneInput make_input(const scene::Scene& s, const BevGrid& grid) {
  return {s.images, geom::prepare_pillars(s.points, grid)};
}

}  // namespace bevsim::detnet

// Copyright 2026 The bevsim Authors
// SPDX-License-Identifier: Apache-2.0

#include <fmt/format.h>

#include "bevsim/harness.hpp"

namespace bevsim::harness {

namespace {

DataConfig data_from_json(const json& j) {
  DataConfig c;
  FieldReader r(j, "data");
  if (r.has("scene")) c.scene = scene::scene_config_from_json(r.sub("scene"));
  if (r.has("lidar")) c.lidar = scene::lidar_config_from_json(r.sub("lidar"));
  r.get("n_scenes", c.n_scenes);
  r.get("n_train", c.n_train);
  r.get("seed", c.seed);
  r.finish();
  require(c.n_scenes > 0 && c.n_train >= 0 && c.n_train <= c.n_scenes,
          "data: need 0 <= n_train <= n_scenes and n_scenes > 0 (got {} / {})", c.n_train, c.n_scenes);
  return c;
}

json to_json(const DataConfig& c) {
  return json{{"scene", scene::to_json(c.scene)},
              {"lidar", scene::to_json(c.lidar)},
              {"n_scenes", c.n_scenes},
              {"n_train", c.n_train},
              {"seed", c.seed}};
}

void check_schedule(const std::string& s, const char* key) {
  require(s == "constant" || s == "cosine", "train.{}: unknown schedule '{}' (constant or cosine)", key, s);
}

TrainConfig train_from_json(const json& j) {
  TrainConfig c;
  FieldReader r(j, "train");
  r.get("teacher_epochs", c.teacher_epochs);
  r.get("student_epochs", c.student_epochs);
  r.get("batch", c.batch);
  r.get("lr", c.lr);
  r.get("teacher_schedule", c.teacher_schedule);
  r.get("student_schedule", c.student_schedule);
  r.get("beta1", c.beta1);
  r.get("beta2", c.beta2);
  r.get("adam_eps", c.adam_eps);
  r.get("seed", c.seed);
  r.get("seeds", c.seeds);
  r.get("workers", c.workers);
  r.finish();
  require(c.teacher_epochs >= 0 && c.student_epochs >= 0, "train: epochs must be >= 0");
  require(c.batch >= 1, "train.batch must be >= 1");
  require(c.lr > 0.0, "train.lr must be positive");
  require(c.workers >= 1, "train.workers must be >= 1");
  require(!c.seeds.empty(), "train.seeds must not be empty");
  check_schedule(c.teacher_schedule, "teacher_schedule");
  check_schedule(c.student_schedule, "student_schedule");
  return c;
}

json to_json(const TrainConfig& c) {
  return json{{"teacher_epochs", c.teacher_epochs},
              {"student_epochs", c.student_epochs},
              {"batch", c.batch},
              {"lr", c.lr},
              {"teacher_schedule", c.teacher_schedule},
              {"student_schedule", c.student_schedule},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"adam_eps", c.adam_eps},
              {"seed", c.seed},
              {"seeds", c.seeds},
              {"workers", c.workers}};
}

EvalConfig eval_from_json(const json& j) {
  EvalConfig c;
  FieldReader r(j, "eval");
  r.get("thresholds", c.thresholds);
  r.get("score_thresh", c.score_thresh);
  r.get("topk", c.topk);
  r.finish();
  require(!c.thresholds.empty(), "eval.thresholds must not be empty");
  for (double t : c.thresholds) require(t > 0.0, "eval.thresholds must be positive");
  require(c.topk >= 1, "eval.topk must be >= 1");
  return c;
}

json to_json(const EvalConfig& c) {
  return json{{"thresholds", c.thresholds}, {"score_thresh", c.score_thresh}, {"topk", c.topk}};
}

}  // namespace

std::string DistillConfig::describe() const {
  std::string s;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!s.empty()) s += "+";
    s += name;
  };
  add(imd, "IMD");
  add(cmd, "CMD");
  add(mmdf, "MMD-F");
  add(mmdp, "MMD-P");
  if (s.empty()) s = "none";
  if (cmd) s += oam ? " (OAM)" : " (global)";
  s += gcm ? ", GCM" : ", no GCM";
  return s;
}

json to_json(const DistillConfig& c) {
  return json{{"imd", c.imd},
              {"cmd", c.cmd},
              {"mmdf", c.mmdf},
              {"mmdp", c.mmdp},
              {"gcm", c.gcm},
              {"oam", c.oam},
              {"weights",
               {{"det", c.weights.det},
                {"imd", c.weights.imd},
                {"cmd", c.weights.cmd},
                {"mmdf", c.weights.mmdf},
                {"mmdp", c.weights.mmdp}}},
              {"quality_max_dist", c.quality_max_dist},
              {"qfl_beta", c.qfl_beta},
              {"teacher_score_thresh", c.teacher_score_thresh},
              {"teacher_topk", c.teacher_topk}};
}

DistillConfig distill_config_from_json(const json& j) {
  DistillConfig c;
  FieldReader r(j, "distill");
  r.get("imd", c.imd);
  r.get("cmd", c.cmd);
  r.get("mmdf", c.mmdf);
  r.get("mmdp", c.mmdp);
  r.get("gcm", c.gcm);
  r.get("oam", c.oam);
  if (r.has("weights")) {
    FieldReader w(r.sub("weights"), "distill.weights");
    w.get("det", c.weights.det);
    w.get("imd", c.weights.imd);
    w.get("cmd", c.weights.cmd);
    w.get("mmdf", c.weights.mmdf);
    w.get("mmdp", c.weights.mmdp);
    w.finish();
  }
  r.get("quality_max_dist", c.quality_max_dist);
  r.get("qfl_beta", c.qfl_beta);
  r.get("teacher_score_thresh", c.teacher_score_thresh);
  r.get("teacher_topk", c.teacher_topk);
  r.finish();
  for (double w : {c.weights.det, c.weights.imd, c.weights.cmd, c.weights.mmdf, c.weights.mmdp})
    require(w >= 0.0, "distill.weights must be non-negative");
  require(c.quality_max_dist > 0.0, "distill.quality_max_dist must be positive");
  require(c.teacher_topk >= 1, "distill.teacher_topk must be >= 1");
  return c;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  FieldReader r(j, "config");
  if (r.has("data")) c.data = data_from_json(r.sub("data"));
  if (r.has("model")) c.model = detnet::model_config_from_json(r.sub("model"));
  if (r.has("distill")) c.distill = distill_config_from_json(r.sub("distill"));
  if (r.has("train")) c.train = train_from_json(r.sub("train"));
  if (r.has("eval")) c.eval = eval_from_json(r.sub("eval"));
  r.finish();
  return c;
}

json to_json(const RunConfig& c) {
  return json{{"data", to_json(c.data)},
              {"model", detnet::to_json(c.model)},
              {"distill", to_json(c.distill)},
              {"train", to_json(c.train)},
              {"eval", to_json(c.eval)}};
}

detnet::ModelConfig resolve_model(const RunConfig& cfg, const Scene& sample, ModelKind kind) {
  detnet::ModelConfig m = cfg.model;
  require(!sample.images.empty(), "scene has no camera images");
  m.n_classes = sample.n_classes;
  m.image_channels = static_cast<int>(sample.images.front().dim(0));
  m.rig = sample.rig;
  if (kind == ModelKind::student && !cfg.distill.gcm) m.gcm_uv.layers = m.gcm_bev.layers = 0;
  m.validate();
  return m;
}

}  // namespace bevsim::harness

// Copyright 2026 The bevsim Authors
// SPDX-License-Identifier: Apache-2.0

// Training, distillation, evaluation, ablation and gradient audits.
//
// Every entry point is a pure function of (scenes, config, seed): scenes are
// visited in a seeded order, per-scene work that runs on worker threads is
// written to fixed slots, and all reductions happen in index order on the
// calling thread.

#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "bevsim/detnet.hpp"
#include "bevsim/distill.hpp"

namespace bevsim::harness {

using ad::Tensor;
using detnet::Detector;
using detnet::ModelKind;
using scene::Scene;

// ------------------------------------------------------------------ config

struct DataConfig {
  scene::SceneConfig scene;
  scene::LidarConfig lidar;
  int n_scenes = 640;
  int n_train = 512;  // the rest is the validation split
  uint64_t seed = 42;
};

struct TrainConfig {
  int teacher_epochs = 15;  // teacher and camera-only models
  int student_epochs = 15;
  int batch = 8;
  double lr = 1e-3;
  std::string teacher_schedule = "constant";  // constant | cosine
  std::string student_schedule = "cosine";
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  uint64_t seed = 42;
  std::vector<uint64_t> seeds{1, 2, 3};  // ablation / multi-seed runs
  int workers = 1;
};

struct LossWeights {
  double det = 1.0, imd = 1.0, cmd = 1.0, mmdf = 1.0, mmdp = 1.0;
};

struct DistillConfig {
  bool imd = true, cmd = true, mmdf = true, mmdp = true;
  bool gcm = true;  // false: the simulated branch has no GCM layers
  bool oam = true;  // false: CMD over the whole map
  LossWeights weights;
  double quality_max_dist = 2.0;
  double qfl_beta = 2.0;
  double teacher_score_thresh = 0.1;
  int teacher_topk = 50;

  bool any() const { return imd || cmd || mmdf || mmdp; }
  std::string describe() const;
};

struct EvalConfig {
  std::vector<double> thresholds{0.5, 1.0, 2.0, 4.0};
  double score_thresh = 0.05;
  int topk = 50;
};

struct RunConfig {
  DataConfig data;
  detnet::ModelConfig model;
  DistillConfig distill;
  TrainConfig train;
  EvalConfig eval;
};

// Sections data, model, distill, train, eval; all optional, unknown keys
// rejected with their dotted path.
RunConfig run_config_from_json(const json& j);
json to_json(const RunConfig& c);
json to_json(const DistillConfig& c);
DistillConfig distill_config_from_json(const json& j);

// Model config with the data-derived fields taken from a scene and the GCM
// switch applied.
detnet::ModelConfig resolve_model(const RunConfig& cfg, const Scene& sample, ModelKind kind);

// ------------------------------------------------------------------ data

// Runs fn(i) for i in [0, n) on up to `workers` threads. Exceptions are
// rethrown on the caller (the lowest failing index wins).
void parallel_for(size_t n, int workers, const std::function<void(size_t)>& fn);

std::vector<Scene> generate_scenes(const DataConfig& cfg, int workers);

struct Dataset {
  scene::DatasetInfo info;
  std::vector<Scene> scenes;

  std::vector<Scene> train() const;
  std::vector<Scene> val() const;
};
Dataset load_dataset(const std::filesystem::path& dir);

// ------------------------------------------------------------------ optimiser

class Adam {
 public:
  Adam(nn::ParamList params, double beta1, double beta2, double eps);
  // One update with the gradients currently held by the parameters, then
  // clears them.
  void step(double lr);
  int64_t steps() const { return t_; }

 private:
  nn::ParamList params_;
  std::vector<std::vector<double>> m_, v_;
  double beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

// Learning rate at step t of total (cosine decays to zero at the end).
double scheduled_lr(const std::string& schedule, double lr, int64_t t, int64_t total);

// ------------------------------------------------------------------ training

struct LogRow {
  int64_t step;
  std::string term;
  double value;
};
void write_loss_csv(const std::vector<LogRow>& rows, const std::filesystem::path& path);

struct TrainResult {
  std::unique_ptr<Detector> model;
  std::vector<LogRow> log;
  int64_t steps = 0;
};

// Teacher or camera-only model trained with the detection loss alone.
TrainResult train_detector(ModelKind kind, const std::vector<Scene>& train, const RunConfig& cfg);

// Frozen-teacher distillation into a fresh student. With every loss switch
// off this is plain student training on the detection loss.
TrainResult distill_student(const Detector& teacher, const std::vector<Scene>& train, const RunConfig& cfg);

// ------------------------------------------------------------------ evaluation

struct EvalReport {
  std::vector<double> thresholds;
  int n_classes = 0;
  std::vector<std::vector<double>> ap;  // [class][threshold]
  std::vector<double> class_ap;         // mean over thresholds
  std::vector<int> class_gt;
  double map = 0.0;  // mean class AP over classes with ground truth
  std::vector<int> tp, fp, fn;  // per threshold, summed over classes
  int n_scenes = 0;
  double wall_seconds = 0.0;
};

// Greedy confidence-ordered matching by BEV centre distance; all-point
// interpolated AP.
EvalReport evaluate_detections(const std::vector<std::vector<Detection>>& dets,
                               const std::vector<std::vector<scene::Box3D>>& gt, int n_classes,
                               const std::vector<double>& thresholds);
EvalReport evaluate(const Detector& model, const std::vector<Scene>& scenes, const EvalConfig& cfg, int workers);
// Without wall-clock time, so that reports are reproducible byte for byte.
json to_json(const EvalReport& r);

// ------------------------------------------------------------------ ablation

struct AblationRow {
  std::string id;
  std::string label;
  ModelKind kind = ModelKind::student;
  DistillConfig distill;
};
// Rows a, b, c, d, e, f, g, h, i, m.
std::vector<AblationRow> ablation_rows(const DistillConfig& base);

struct AblationResult {
  std::vector<AblationRow> rows;
  std::vector<uint64_t> seeds;
  std::vector<std::vector<EvalReport>> reports;  // [row][seed]
  std::vector<EvalReport> teacher;               // per seed
};

using ProgressFn = std::function<void(const std::string&)>;

// Trains one teacher per seed, then every row with that seed.
AblationResult ablate(const std::vector<Scene>& train, const std::vector<Scene>& val, const RunConfig& cfg,
                      const ProgressFn& progress = {});
void write_ablation_csv(const AblationResult& r, const std::filesystem::path& path);
std::string format_ablation_table(const AblationResult& r);

// ------------------------------------------------------------------ gradient audit

struct AuditEntry {
  std::string model;
  std::string term;
  std::string param;
  int64_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
  bool pass = false;
};

struct AuditReport {
  std::vector<AuditEntry> entries;
  bool pass = true;
  double seconds = 0.0;
};

inline constexpr double kAuditEps = 1e-5;
inline constexpr double kAuditTol = 1e-4;

// Scene matching micro_config(): 16x32 images, boxes inside x 2..15, y -7..7.
Scene micro_scene(uint64_t seed);

// Micro instances (8x8 grid, 16x32 images, 4 depth bins). `what` is teacher,
// camera, student or all. The student is audited on each distillation term
// and on the full objective.
AuditReport grad_audit(const std::string& what, int probes_per_term = 20, uint64_t seed = 1);
json to_json(const AuditReport& r);

}  // namespace bevsim::harness

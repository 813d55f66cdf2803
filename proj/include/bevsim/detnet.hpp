// Copyright 2026 The bevsim Authors
// SPDX-License-Identifier: Apache-2.0

// Detection networks on the shared BEV grid.
//
//   teacher   pillars(L) + lift-splat(images) -> fuser -> head
//   camera    lift-splat(images) -> fuser -> head
//   student   images only: a plain camera branch plus a simulated-LiDAR
//             branch (UV-plane GCM, own depth/context heads, BEV-plane GCM)
//
// All three share the same fuser and head architecture.

#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "bevsim/detection.hpp"
#include "bevsim/gcm.hpp"
#include "bevsim/geometry.hpp"

namespace bevsim::detnet {

using ad::Tensor;
using geom::BevGrid;
using scene::Box3D;

enum class ModelKind { teacher, camera, student };
std::string to_string(ModelKind k);
ModelKind model_kind_from_string(const std::string& s);

struct ModelConfig {
  BevGrid grid;
  geom::DepthBins depth;
  std::array<int, 3> encoder_channels{8, 16, 32};
  int head_hidden = 32;  // depth/context head width
  int c_bev = 16;        // camera BEV channels
  int c_lidar = 16;      // LiDAR (real or simulated) BEV channels
  int c_fused = 16;
  int pillar_hidden = 16;
  gcm::GcmConfig gcm_uv;
  gcm::GcmConfig gcm_bev;
  // Student only: reuse the camera branch's depth/context heads in the
  // simulated-LiDAR branch instead of separate ones.
  bool share_depth = false;

  // Taken from the data.
  int n_classes = 3;
  int image_channels = 4;
  scene::CameraRig rig = scene::default_rig();

  int feat_h() const;
  int feat_w() const;
  void validate() const;
};

// Tiny instance for gradient audits: 8x8 grid, 16x32 images, 4 depth bins,
// one GCM layer per plane.
ModelConfig micro_config();

// Everything except the data-derived fields comes from the "model" section.
json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const json& model_section);
// Full round-trip form used inside checkpoints.
json checkpoint_config_json(const ModelConfig& c);
ModelConfig checkpoint_config_from_json(const json& j);

// ------------------------------------------------------------------ blocks

// Three stages of 2x2 average pooling followed by conv3x3 + relu; output is
// 1/8 of the image in each dimension.
struct Encoder2d {
  std::array<nn::Conv2d, 3> stages;

  Encoder2d() = default;
  Encoder2d(int64_t in, const std::array<int, 3>& channels, Rng& rng);
  Tensor operator()(const Tensor& image) const;
  void params(const std::string& prefix, nn::ParamList& out) const;
};

// Depth distribution and context per feature pixel, lifted and pooled.
struct LiftSplat {
  geom::ConvHead depth;
  geom::ConvHead context;

  LiftSplat() = default;
  LiftSplat(int64_t in, int64_t hidden, int64_t bins, int64_t out, Rng& rng);
  Tensor operator()(const std::vector<Tensor>& uv_features, const geom::PoolIndex& index) const;
  void params(const std::string& prefix, nn::ParamList& out) const;
};

struct Fuser {
  nn::Conv2d c1, c2;

  Fuser() = default;
  Fuser(int64_t in, int64_t out, Rng& rng);
  // Concatenates the maps along channels, then two conv3x3 + relu.
  Tensor operator()(const std::vector<Tensor>& maps) const;
  void params(const std::string& prefix, nn::ParamList& out) const;
};

struct RawHead {
  Tensor cls;  // [n_classes x ny x nx] logits
  Tensor reg;  // [8 x ny x nx]
};

inline constexpr double kClassBiasInit = -2.19;  // sigmoid ~ 0.1

struct DetHead {
  nn::Conv2d cls, reg;

  DetHead() = default;
  DetHead(int64_t in, int64_t n_classes, Rng& rng);
  RawHead operator()(const Tensor& u_bev) const;
  void params(const std::string& prefix, nn::ParamList& out) const;
};

struct FeatureBundle {
  Tensor c_bev;
  Tensor l_bev;  // undefined for the camera-only model
  Tensor u_bev;
  RawHead head;
  bool detached = false;

  FeatureBundle detach() const;
};

// Network inputs for one scene. Only the teacher reads the pillars.
struct SceneInput {
  std::vector<Tensor> images;
  geom::PillarInput pillars;
};
SceneInput make_input(const scene::Scene& s, const BevGrid& grid);

// ------------------------------------------------------------------ models

class Detector {
 public:
  Detector(ModelKind kind, ModelConfig cfg);
  virtual ~Detector() = default;

  ModelKind kind() const { return kind_; }
  const ModelConfig& config() const { return cfg_; }
  const geom::PoolIndex& pool_index() const { return pool_; }

  virtual FeatureBundle run(const SceneInput& in) const = 0;
  virtual void params(nn::ParamList& out) const = 0;
  nn::ParamList params() const;

  void fuser_head_params(nn::ParamList& out) const;

 protected:
  std::vector<Tensor> encode(const std::vector<Tensor>& images) const;

  ModelKind kind_;
  ModelConfig cfg_;
  geom::PoolIndex pool_;

 public:
  Encoder2d encoder;
  LiftSplat camera_branch;
  Fuser fuser;
  DetHead head;
};

class TeacherNet : public Detector {
 public:
  TeacherNet(const ModelConfig& cfg, Rng& rng);
  FeatureBundle forward(const geom::PillarInput& lidar, const std::vector<Tensor>& images) const;
  FeatureBundle run(const SceneInput& in) const override { return forward(in.pillars, in.images); }
  using Detector::params;
  void params(nn::ParamList& out) const override;

  geom::PillarEncoder pillars;
};

class CameraNet : public Detector {
 public:
  CameraNet(const ModelConfig& cfg, Rng& rng);
  FeatureBundle forward(const std::vector<Tensor>& images) const;
  FeatureBundle run(const SceneInput& in) const override { return forward(in.images); }
  using Detector::params;
  void params(nn::ParamList& out) const override;
};

class StudentNet : public Detector {
 public:
  StudentNet(const ModelConfig& cfg, Rng& rng);
  FeatureBundle forward(const std::vector<Tensor>& images, std::vector<gcm::AttentionTrace>* traces = nullptr) const;
  FeatureBundle run(const SceneInput& in) const override { return forward(in.images); }
  using Detector::params;
  void params(nn::ParamList& out) const override;

  gcm::GcmStack gc_uv;
  LiftSplat sim_branch;  // unused when share_depth
  gcm::GcmStack gc_bev;
};

// Parameters are drawn from Rng(seed) split per component.
std::unique_ptr<Detector> make_detector(ModelKind kind, const ModelConfig& cfg, uint64_t seed);

// ------------------------------------------------------------------ targets, loss, decoding

// Regression vector for a box whose centre lies in cell (iy, ix).
struct EncodedBox {
  int iy = 0, ix = 0;
  std::array<double, kRegChannels> reg{};
};
EncodedBox encode_box(const Box3D& b, const BevGrid& grid);
Box3D decode_box(int iy, int ix, const std::array<double, kRegChannels>& reg, int class_id, const BevGrid& grid);

struct DetTargets {
  Tensor heat;                       // [n_classes x ny x nx] Gaussian sum
  std::vector<int64_t> positives;    // flat class*cells + cell of box centres
  std::vector<int64_t> reg_cells;    // flat cell per regressed box
  Tensor reg;                        // [n x 8], undefined when n = 0
};
// Boxes outside the grid are skipped; a second box in an occupied cell too.
DetTargets make_targets(const std::vector<Box3D>& boxes, int n_classes, const BevGrid& grid);

inline constexpr double kFocalAlpha = 2.0;
inline constexpr double kFocalBeta = 4.0;
inline constexpr double kRegWeight = 0.25;
inline constexpr double kFocalClip = 1e-4;

struct DetLoss {
  Tensor focal;
  Tensor l1;
  Tensor total;  // focal + 0.25 l1
};
// Penalty-reduced focal loss on the class heatmap, normalised by the
// positive count, plus L1 on the regression at box-centre cells.
DetLoss det_loss(const RawHead& head, const DetTargets& targets);

// 3x3 local maxima of the sigmoid class maps above score_thresh, highest
// confidence first, at most topk.
std::vector<Detection> decode(const RawHead& head, const BevGrid& grid, double score_thresh = 0.1, int topk = 50);

// ------------------------------------------------------------------ checkpoints

// Directory with model.json and one BSDT file per parameter.
void save_checkpoint(const Detector& model, const std::filesystem::path& dir);
std::unique_ptr<Detector> load_checkpoint(const std::filesystem::path& dir);

}  // namespace bevsim::detnet

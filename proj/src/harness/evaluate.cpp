// Copyright 2026 The bevsim Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "bevsim/harness.hpp"

namespace bevsim::harness {

namespace {

struct Ranked {
  double confidence;
  size_t scene;
  size_t index;
  const Detection* det;
};

// All-point interpolated area under the PR curve.
double pr_area(const std::vector<bool>& is_tp, int n_gt) {
  if (n_gt == 0 || is_tp.empty()) return 0.0;
  std::vector<double> precision(is_tp.size()), recall(is_tp.size());
  int tp = 0;
  for (size_t k = 0; k < is_tp.size(); ++k) {
    tp += is_tp[k] ? 1 : 0;
    precision[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
    recall[k] = static_cast<double>(tp) / static_cast<double>(n_gt);
  }
  for (size_t k = precision.size() - 1; k > 0; --k) precision[k - 1] = std::max(precision[k - 1], precision[k]);
  double area = 0.0, prev_recall = 0.0;
  for (size_t k = 0; k < recall.size(); ++k) {
    area += (recall[k] - prev_recall) * precision[k];
    prev_recall = recall[k];
  }
  return area;
}

}  // namespace

EvalReport evaluate_detections(const std::vector<std::vector<Detection>>& dets,
                               const std::vector<std::vector<scene::Box3D>>& gt, int n_classes,
                               const std::vector<double>& thresholds) {
  require(dets.size() == gt.size(), "{} detection lists for {} scenes", dets.size(), gt.size());
  require(n_classes > 0 && !thresholds.empty(), "evaluation needs classes and thresholds");
  EvalReport r;
  r.thresholds = thresholds;
  r.n_classes = n_classes;
  r.n_scenes = static_cast<int>(gt.size());
  const size_t nt = thresholds.size();
  r.ap.assign(static_cast<size_t>(n_classes), std::vector<double>(nt, 0.0));
  r.class_ap.assign(static_cast<size_t>(n_classes), 0.0);
  r.class_gt.assign(static_cast<size_t>(n_classes), 0);
  r.tp.assign(nt, 0);
  r.fp.assign(nt, 0);
  r.fn.assign(nt, 0);

  int classes_with_gt = 0;
  double ap_sum = 0.0;
  for (int c = 0; c < n_classes; ++c) {
    std::vector<Ranked> ranked;
    for (size_t s = 0; s < dets.size(); ++s)
      for (size_t k = 0; k < dets[s].size(); ++k)
        if (dets[s][k].class_id == c) ranked.push_back({dets[s][k].confidence, s, k, &dets[s][k]});
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const Ranked& a, const Ranked& b) { return a.confidence > b.confidence; });
    int n_gt = 0;
    for (const auto& boxes : gt)
      for (const auto& b : boxes) n_gt += b.class_id == c ? 1 : 0;
    r.class_gt[static_cast<size_t>(c)] = n_gt;

    for (size_t ti = 0; ti < nt; ++ti) {
      std::vector<std::vector<bool>> used(gt.size());
      for (size_t s = 0; s < gt.size(); ++s) used[s].assign(gt[s].size(), false);
      std::vector<bool> is_tp;
      is_tp.reserve(ranked.size());
      int tp = 0;
      for (const auto& d : ranked) {
        const auto& boxes = gt[d.scene];
        double best = std::numeric_limits<double>::infinity();
        size_t best_j = boxes.size();
        for (size_t j = 0; j < boxes.size(); ++j) {
          if (boxes[j].class_id != c || used[d.scene][j]) continue;
          const double dist = std::hypot(boxes[j].center[0] - d.det->box.center[0],
                                         boxes[j].center[1] - d.det->box.center[1]);
          if (dist < best) {
            best = dist;
            best_j = j;
          }
        }
        const bool hit = best_j < boxes.size() && best <= thresholds[ti];
        if (hit) {
          used[d.scene][best_j] = true;
          ++tp;
        }
        is_tp.push_back(hit);
      }
      r.ap[static_cast<size_t>(c)][ti] = pr_area(is_tp, n_gt);
      r.tp[ti] += tp;
      r.fp[ti] += static_cast<int>(ranked.size()) - tp;
      r.fn[ti] += n_gt - tp;
    }
    const auto& row = r.ap[static_cast<size_t>(c)];
    r.class_ap[static_cast<size_t>(c)] = std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(nt);
    if (n_gt > 0) {
      ++classes_with_gt;
      ap_sum += r.class_ap[static_cast<size_t>(c)];
    }
  }
  r.map = classes_with_gt > 0 ? ap_sum / classes_with_gt : 0.0;
  return r;
}

EvalReport evaluate(const Detector& model, const std::vector<Scene>& scenes, const EvalConfig& cfg, int workers) {
  const auto start = std::chrono::steady_clock::now();
  const auto& mc = model.config();
  std::vector<std::vector<Detection>> dets(scenes.size());
  std::vector<std::vector<scene::Box3D>> gt(scenes.size());
  parallel_for(scenes.size(), workers, [&](size_t i) {
    ad::NoGradGuard no_grad;
    const auto out = model.run(detnet::make_input(scenes[i], mc.grid));
    dets[i] = detnet::decode(out.head, mc.grid, cfg.score_thresh, cfg.topk);
    gt[i] = scenes[i].boxes;
  });
  EvalReport r = evaluate_detections(dets, gt, mc.n_classes, cfg.thresholds);
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

json to_json(const EvalReport& r) {
  json classes = json::array();
  for (int c = 0; c < r.n_classes; ++c) {
    const auto k = static_cast<size_t>(c);
    classes.push_back({{"class", c}, {"ap", r.class_ap[k]}, {"ap_per_threshold", r.ap[k]}, {"n_gt", r.class_gt[k]}});
  }
  json counts = json::array();
  for (size_t t = 0; t < r.thresholds.size(); ++t)
    counts.push_back({{"threshold", r.thresholds[t]}, {"tp", r.tp[t]}, {"fp", r.fp[t]}, {"fn", r.fn[t]}});
  return json{{"mAP", r.map},
              {"thresholds", r.thresholds},
              {"classes", classes},
              {"counts", counts},
              {"n_scenes", r.n_scenes}};
}

}  // namespace bevsim::harness

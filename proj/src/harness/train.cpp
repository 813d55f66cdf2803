// Copyright 2026 The bevsim Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <fstream>
#include <numeric>

#include <fmt/format.h>

#include "bevsim/harness.hpp"

namespace bevsim::harness {

namespace {

using Terms = std::vector<std::pair<std::string, Tensor>>;

std::vector<size_t> epoch_order(size_t n, uint64_t seed, int epoch) {
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  Rng rng = Rng(seed).split(0x5eed0000ULL + static_cast<uint64_t>(epoch));
  for (size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

// Shared minibatch loop. step_fn(i) returns the logged terms of scene i with
// the objective last under the name "total".
TrainResult run_loop(std::unique_ptr<Detector> model, size_t n_scenes, int epochs, const std::string& schedule,
                     const TrainConfig& tc, const std::function<Terms(size_t)>& step_fn) {
  TrainResult out;
  const auto params = model->params();
  Adam adam(params, tc.beta1, tc.beta2, tc.adam_eps);
  const size_t batch = static_cast<size_t>(tc.batch);
  const int64_t per_epoch = static_cast<int64_t>((n_scenes + batch - 1) / batch);
  const int64_t total_steps = per_epoch * epochs;
  int64_t step = 0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    const auto order = epoch_order(n_scenes, tc.seed, epoch);
    for (size_t b0 = 0; b0 < n_scenes; b0 += batch) {
      const size_t b1 = std::min(n_scenes, b0 + batch);
      const double scale = 1.0 / static_cast<double>(b1 - b0);
      std::vector<std::string> names;
      std::vector<double> sums;
      for (size_t k = b0; k < b1; ++k) {
        const size_t i = order[k];
        const Terms terms = step_fn(i);
        if (names.empty()) {
          for (const auto& t : terms) names.push_back(t.first);
          sums.assign(names.size(), 0.0);
        }
        for (size_t t = 0; t < terms.size(); ++t) {
          const double v = terms[t].second[0];
          require(std::isfinite(v), "non-finite {} loss at step {} (epoch {}, scene {})", terms[t].first, step,
                  epoch, i);
          sums[t] += v;
        }
        ad::backward(ad::mul(terms.back().second, scale));
      }
      for (size_t t = 0; t < names.size(); ++t) out.log.push_back({step, names[t], sums[t] * scale});
      adam.step(scheduled_lr(schedule, tc.lr, step, total_steps));
      ++step;
    }
  }
  // A finished model holds no gradient buffers; a teacher is frozen from here.
  for (auto p : params) p.tensor.clear_grad();
  out.steps = step;
  out.model = std::move(model);
  return out;
}

Tensor ones_like_grid(const geom::BevGrid& g) {
  return Tensor({g.ny, g.nx}, std::vector<double>(static_cast<size_t>(g.ny * g.nx), 1.0));
}

// Detached teacher outputs for one training scene, restricted to what the
// enabled losses read.
struct TeacherCache {
  Tensor c_bev, l_bev, u_bev;
  Tensor mask;
  std::vector<Detection> dets;
  std::vector<distill::QualityScore> scores;
};

void check_same_shape(const Tensor& t, const Tensor& s, const char* what) {
  require(t.defined(), "teacher provides no {} features", what);
  require(s.defined(), "student provides no {} features", what);
  require(t.shape() == s.shape(), "teacher and student {} features differ in shape: {} vs {}", what,
          ad::to_string(t.shape()), ad::to_string(s.shape()));
}

}  // namespace

void write_loss_csv(const std::vector<LogRow>& rows, const std::filesystem::path& path) {
  std::ofstream os(path);
  require(os.good(), "cannot write {}", path.string());
  os << "step,term,value\n";
  for (const auto& r : rows) os << fmt::format("{},{},{:.17g}\n", r.step, r.term, r.value);
}

TrainResult train_detector(ModelKind kind, const std::vector<Scene>& train, const RunConfig& cfg) {
  require(kind != ModelKind::student, "students are trained by distillation");
  require(!train.empty(), "training set is empty");
  const auto mcfg = resolve_model(cfg, train.front(), kind);
  auto model = make_detector(kind, mcfg, cfg.train.seed);

  std::vector<detnet::SceneInput> inputs(train.size());
  std::vector<detnet::DetTargets> targets(train.size());
  parallel_for(train.size(), cfg.train.workers, [&](size_t i) {
    inputs[i] = detnet::make_input(train[i], mcfg.grid);
    targets[i] = detnet::make_targets(train[i].boxes, mcfg.n_classes, mcfg.grid);
  });

  const Detector& net = *model;
  return run_loop(std::move(model), train.size(), cfg.train.teacher_epochs, cfg.train.teacher_schedule, cfg.train,
                  [&](size_t i) -> Terms {
                    const Tensor det = detnet::det_loss(net.run(inputs[i]).head, targets[i]).total;
                    return {{"det", det}, {"total", det}};
                  });
}

TrainResult distill_student(const Detector& teacher, const std::vector<Scene>& train, const RunConfig& cfg) {
  require(!train.empty(), "training set is empty");
  const DistillConfig& dc = cfg.distill;
  const auto mcfg = resolve_model(cfg, train.front(), ModelKind::student);
  const auto& tcfg = teacher.config();
  require(tcfg.grid.nx == mcfg.grid.nx && tcfg.grid.ny == mcfg.grid.ny && tcfg.grid.x_min == mcfg.grid.x_min &&
              tcfg.grid.y_min == mcfg.grid.y_min && tcfg.grid.x_max == mcfg.grid.x_max &&
              tcfg.grid.y_max == mcfg.grid.y_max,
          "teacher and student BEV grids differ");
  require(tcfg.n_classes == mcfg.n_classes, "teacher predicts {} classes, student {}", tcfg.n_classes,
          mcfg.n_classes);
  auto model = make_detector(ModelKind::student, mcfg, cfg.train.seed);
  const auto& student = dynamic_cast<const detnet::StudentNet&>(*model);

  std::vector<detnet::DetTargets> targets(train.size());
  std::vector<TeacherCache> cache(train.size());
  const Tensor ones = ones_like_grid(mcfg.grid);
  parallel_for(train.size(), cfg.train.workers, [&](size_t i) {
    ad::NoGradGuard no_grad;
    const auto& s = train[i];
    targets[i] = detnet::make_targets(s.boxes, mcfg.n_classes, mcfg.grid);
    if (!dc.any()) return;
    const auto t = teacher.run(detnet::make_input(s, tcfg.grid)).detach();
    auto& c = cache[i];
    if (dc.imd) c.c_bev = t.c_bev;
    if (dc.cmd) {
      c.l_bev = t.l_bev;
      c.mask = dc.oam ? distill::object_mask(s.boxes, mcfg.grid).mask : ones;
    }
    if (dc.mmdf) c.u_bev = t.u_bev;
    if (dc.mmdp) {
      c.dets = detnet::decode(t.head, tcfg.grid, dc.teacher_score_thresh, dc.teacher_topk);
      c.scores = distill::quality_score(c.dets, s.boxes, dc.quality_max_dist);
    }
  });

  if (dc.any()) {
    ad::NoGradGuard no_grad;
    const auto probe = student.forward(train.front().images);
    if (dc.imd) check_same_shape(cache[0].c_bev, probe.c_bev, "camera BEV");
    if (dc.cmd) check_same_shape(cache[0].l_bev, probe.l_bev, "LiDAR BEV");
    if (dc.mmdf) check_same_shape(cache[0].u_bev, probe.u_bev, "fused BEV");
  }

  const auto& w = dc.weights;
  return run_loop(std::move(model), train.size(), cfg.train.student_epochs, cfg.train.student_schedule, cfg.train,
                  [&](size_t i) -> Terms {
                    const auto sb = student.forward(train[i].images);
                    const auto& c = cache[i];
                    Terms terms;
                    const Tensor det = detnet::det_loss(sb.head, targets[i]).total;
                    terms.emplace_back("det", det);
                    Tensor total = ad::mul(det, w.det);
                    auto add = [&](const char* name, const Tensor& v, double weight) {
                      terms.emplace_back(name, v);
                      total = ad::add(total, ad::mul(v, weight));
                    };
                    if (dc.imd) add("imd", distill::imd_loss(c.c_bev, sb.c_bev), w.imd);
                    if (dc.cmd) add("cmd", distill::cmd_loss(c.l_bev, sb.l_bev, c.mask), w.cmd);
                    if (dc.mmdf) add("mmdf", distill::mmdf_loss(c.u_bev, sb.u_bev), w.mmdf);
                    if (dc.mmdp) add("mmdp", distill::mmdp_loss(c.dets, c.scores, sb.head.cls, sb.head.reg,
                                                                dc.qfl_beta),
                                     w.mmdp);
                    terms.emplace_back("total", total);
                    return terms;
                  });
}

}  // namespace bevsim::harness

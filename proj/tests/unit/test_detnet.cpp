// Copyright 2026 The bevsim Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstring>
#include <filesystem>
#include <random>
#include <type_traits>

#include "bevsim/detnet.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace bevsim;
using namespace bevsim::detnet;
using bevsim::testing::random_tensor;

namespace {

ModelConfig small_config() {
  ModelConfig c = micro_config();
  c.image_channels = 4;
  return c;
}

scene::Scene micro_scene(uint64_t seed) {
  scene::SceneConfig sc;
  sc.image_height = 16;
  sc.image_width = 32;
  sc.x_min = 2.0;
  sc.x_max = 15.0;
  sc.y_min = -7.0;
  sc.y_max = 7.0;
  sc.min_boxes = 2;
  sc.max_boxes = 3;
  return scene::generate_scene(seed, 0, sc, scene::LidarConfig{}, scene::default_rig(16, 32));
}

// Value equality; unlike memcmp, -0.0 and +0.0 compare equal.
bool same_values(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (int64_t i = 0; i < a.numel(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), sizeof(double) * a.numel()) == 0;
}

// Gradient of a scalar loss w.r.t. a random subset of parameter entries,
// compared against central differences.
void audit_params(const nn::ParamList& params, const std::function<Tensor()>& loss, int probes, uint64_t seed) {
  std::mt19937_64 g(seed);
  for (int i = 0; i < probes; ++i) {
    auto p = params[g() % params.size()];
    const auto r = ad::finite_diff_check([&](const Tensor&) { return loss(); }, p.tensor, 1e-5, 1e-4);
    CHECK_MESSAGE(r.pass, p.name << " max rel err " << r.max_rel_err);
  }
}

}  // namespace

TEST_CASE("encoder divides resolution by eight and shares weights across views") {
  Rng rng(1);
  Encoder2d enc(4, {8, 16, 32}, rng);
  std::mt19937_64 g(2);
  const auto im = random_tensor({4, 64, 128}, g, 0, 1, false);
  const Tensor f = enc(im);
  CHECK(f.shape() == ad::Shape{32, 8, 16});

  const auto cfg = small_config();
  auto model = make_detector(ModelKind::camera, cfg, 3);
  const auto im2 = random_tensor({4, 16, 32}, g, 0, 1, false);
  const Tensor a = model->encoder(im2), b = model->encoder(im2.clone());
  CHECK(bitwise_equal(a, b));

  Encoder2d small(2, {3, 3, 2}, rng);
  const auto x = random_tensor({2, 16, 16}, g);
  CHECK(testing::check([&](const Tensor& t) { return small(t); }, x).pass);
}

TEST_CASE("fuser and head shapes") {
  Rng rng(4);
  Fuser fuse(6, 5, rng);
  const Tensor z = Tensor::zeros({6, 7, 9});
  const Tensor out = fuse({Tensor::zeros({2, 7, 9}), Tensor::zeros({4, 7, 9})});
  CHECK(out.shape() == ad::Shape{5, 7, 9});
  CHECK(bitwise_equal(out, fuse({z})));
  // With zero input the output is the bias response: constant per channel in
  // the interior.
  for (int64_t c = 0; c < 5; ++c) CHECK(out[c * 63 + 3 * 9 + 4] == out[c * 63 + 4 * 9 + 5]);

  DetHead head(5, 3, rng);
  std::mt19937_64 g(5);
  const auto u = random_tensor({5, 4, 4}, g);
  const RawHead h = head(u);
  CHECK(h.cls.shape() == ad::Shape{3, 4, 4});
  CHECK(h.reg.shape() == ad::Shape{kRegChannels, 4, 4});
  for (double v : ad::sigmoid(h.cls).data()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  for (double b : head.cls.bias.data()) CHECK(b == kClassBiasInit);
  CHECK(testing::check([&](const Tensor& t) { return head(t).cls; }, u).pass);
  CHECK(testing::check([&](const Tensor& t) { return head(t).reg; }, u).pass);
}

TEST_CASE("teacher and student share fuser and head architecture") {
  ModelConfig cfg;
  auto t = make_detector(ModelKind::teacher, cfg, 1);
  auto s = make_detector(ModelKind::student, cfg, 1);
  nn::ParamList tp, sp;
  t->fuser_head_params(tp);
  s->fuser_head_params(sp);
  REQUIRE(tp.size() == sp.size());
  CHECK(nn::param_count(tp) == nn::param_count(sp));
  for (size_t i = 0; i < tp.size(); ++i) {
    CHECK(tp[i].name == sp[i].name);
    CHECK(tp[i].tensor.shape() == sp[i].tensor.shape());
  }
  // The student's forward takes images only.
  using StudentForward = FeatureBundle (StudentNet::*)(const std::vector<Tensor>&, std::vector<gcm::AttentionTrace>*)
      const;
  static_assert(std::is_same_v<decltype(&StudentNet::forward), StudentForward>);
}

TEST_CASE("teacher forward populates every feature") {
  const auto cfg = small_config();
  auto model = make_detector(ModelKind::teacher, cfg, 2);
  const auto s = micro_scene(3);
  const auto b = model->run(make_input(s, cfg.grid));
  CHECK(b.c_bev.shape() == ad::Shape{4, 8, 8});
  CHECK(b.l_bev.shape() == ad::Shape{4, 8, 8});
  CHECK(b.u_bev.shape() == ad::Shape{4, 8, 8});
  CHECK(b.head.cls.shape() == ad::Shape{3, 8, 8});
  CHECK(!b.detached);
  CHECK(b.detach().detached);

  SceneInput empty = make_input(s, cfg.grid);
  empty.pillars = geom::prepare_pillars({}, cfg.grid);
  const auto e = model->run(empty);
  for (double v : e.l_bev.data()) CHECK(v == 0.0);
  CHECK(bitwise_equal(e.c_bev, b.c_bev));
  CHECK(decode(e.head, cfg.grid, 0.0, 500).size() > 0);
}

TEST_CASE("student simulated branch equals the camera branch when GCM is fresh and heads match") {
  const auto cfg = small_config();
  auto model = make_detector(ModelKind::student, cfg, 4);
  auto& st = dynamic_cast<StudentNet&>(*model);
  nn::ParamList cam, sim;
  st.camera_branch.params("", cam);
  st.sim_branch.params("", sim);
  REQUIRE(cam.size() == sim.size());
  const auto s = micro_scene(5);
  const auto before = st.forward(s.images);
  bool differs = false;
  for (int64_t i = 0; i < before.l_bev.numel(); ++i) differs = differs || before.l_bev[i] != before.c_bev[i];
  CHECK(differs);
  for (size_t i = 0; i < cam.size(); ++i) {
    auto dst = sim[i].tensor.mutable_data();
    std::copy(cam[i].tensor.data().begin(), cam[i].tensor.data().end(), dst.begin());
  }
  const auto after = st.forward(s.images);
  CHECK(same_values(after.l_bev, after.c_bev));

  ModelConfig shared = cfg;
  shared.share_depth = true;
  auto sm = make_detector(ModelKind::student, shared, 4);
  const auto b = sm->run(make_input(s, cfg.grid));
  CHECK(same_values(b.l_bev, b.c_bev));
  CHECK(nn::param_count(sm->params()) < nn::param_count(model->params()));
}

TEST_CASE("detection loss") {
  const BevGrid grid = small_config().grid;
  scene::Box3D box;
  box.center = {5.0, 1.0, -1.0};
  box.length = 4.0;
  box.width = 2.0;
  box.height = 1.5;
  box.yaw = 0.4;
  box.class_id = 1;
  const DetTargets t = make_targets({box}, 3, grid);
  REQUIRE(t.positives.size() == 1);
  const int64_t cell = t.reg_cells[0];
  CHECK(t.positives[0] == 64 + cell);

  // Perfect prediction.
  std::vector<double> cls(3 * 64, -40.0);
  cls[t.positives[0]] = 40.0;
  std::vector<double> reg(kRegChannels * 64, 0.0);
  for (int k = 0; k < kRegChannels; ++k) reg[k * 64 + cell] = t.reg[k];
  const RawHead perfect{Tensor({3, 8, 8}, cls), Tensor({kRegChannels, 8, 8}, reg)};
  const DetLoss l = det_loss(perfect, t);
  CHECK(l.l1.item() == 0.0);
  CHECK(l.focal.item() < 1e-6);
  CHECK(l.focal.item() >= 0.0);

  // Empty scene: background-only focal term.
  const DetTargets none = make_targets({}, 3, grid);
  std::mt19937_64 g(6);
  const auto c = random_tensor({3, 8, 8}, g, -3, 1);
  const auto r = random_tensor({kRegChannels, 8, 8}, g);
  const DetLoss le = det_loss({c, r}, none);
  CHECK(std::isfinite(le.total.item()));
  CHECK(le.l1.item() == 0.0);
  CHECK(le.total.item() == le.focal.item());
  CHECK(le.total.item() > 0.0);

  // Hand value at one cell: positive with p = 0.5 contributes 0.25 ln 2.
  std::vector<double> half(3 * 64, -40.0);
  half[t.positives[0]] = 0.0;
  const DetLoss lh = det_loss({Tensor({3, 8, 8}, half), Tensor({kRegChannels, 8, 8}, reg)}, t);
  CHECK(lh.focal.item() == doctest::Approx(0.25 * std::log(2.0)).epsilon(1e-6));

  // Closed-form logit derivative of the focal term, every cell.
  const Tensor cl = c.detach().set_requires_grad(true);
  ad::backward(det_loss({cl, r.detach()}, t).total);
  for (int64_t i = 0; i < cl.numel(); ++i) {
    const double p = 1.0 / (1.0 + std::exp(-cl[i]));
    const bool positive = i == t.positives[0];
    const double w = positive ? 0.0 : std::pow(1.0 - std::min(t.heat[i], 1.0), 4.0);
    const double expect = positive ? -(std::pow(1 - p, 3) - 2 * p * (1 - p) * (1 - p) * std::log(p))
                                   : -w * (2 * p * p * (1 - p) * std::log(1 - p) - p * p * p);
    CHECK(cl.grad()[i] == doctest::Approx(expect).epsilon(1e-10).scale(0));
  }
  CHECK(ad::finite_diff_check([&](const Tensor& x) { return det_loss({x, r.detach()}, none).total; }, c, 1e-5, 1e-4)
            .pass);
  CHECK(ad::finite_diff_check([&](const Tensor& x) { return det_loss({c.detach(), x}, t).total; }, r, 1e-5, 1e-4).pass);
}

TEST_CASE("decode") {
  const BevGrid grid;
  RawHead h{Tensor::full({3, 40, 40}, -30.0), Tensor::zeros({kRegChannels, 40, 40})};
  CHECK(decode(h, grid).empty());

  scene::Box3D box;
  box.center = {3.5, -7.5, -0.9};
  box.length = 4.4;
  box.width = 1.9;
  box.height = 1.6;
  box.yaw = -2.1;
  box.class_id = 2;
  const EncodedBox e = encode_box(box, grid);
  CHECK(e.reg[0] == 0.0);
  CHECK(e.reg[1] == 0.0);
  auto cls = h.cls.clone();
  auto reg = h.reg.clone();
  cls.mutable_data()[2 * 1600 + e.iy * 40 + e.ix] = 3.0;
  for (int k = 0; k < kRegChannels; ++k) reg.mutable_data()[k * 1600 + e.iy * 40 + e.ix] = e.reg[k];
  const auto dets = decode({cls, reg}, grid);
  REQUIRE(dets.size() == 1);
  const auto& d = dets[0];
  CHECK(d.class_id == 2);
  CHECK(d.confidence == doctest::Approx(1.0 / (1.0 + std::exp(-3.0))));
  for (int i = 0; i < 3; ++i) CHECK(std::abs(d.box.center[i] - box.center[i]) < 1e-9);
  CHECK(std::abs(d.box.length - box.length) < 1e-9);
  CHECK(std::abs(d.box.width - box.width) < 1e-9);
  CHECK(std::abs(d.box.height - box.height) < 1e-9);
  CHECK(std::abs(d.box.yaw - box.yaw) < 1e-9);
  CHECK(d.class_probs.size() == 3);

  // Sub-cell offsets survive too.
  box.center = {-11.23, 4.71, -1.2};
  const EncodedBox e2 = encode_box(box, grid);
  const auto back = decode_box(e2.iy, e2.ix, e2.reg, 2, grid);
  CHECK(std::abs(back.center[0] - box.center[0]) < 1e-9);
  CHECK(std::abs(back.center[1] - box.center[1]) < 1e-9);

  // Random maps: sorted, local maxima, limited.
  std::mt19937_64 g(7);
  const auto rc = random_tensor({3, 40, 40}, g, -4, 2, false);
  const auto many = decode({rc, reg}, grid, 0.1, 30);
  CHECK(many.size() == 30);
  for (size_t i = 1; i < many.size(); ++i) CHECK(many[i - 1].confidence >= many[i].confidence);
  for (const auto& m : many) {
    const double v = rc[m.class_id * 1600 + m.iy * 40 + m.ix];
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int y = m.iy + dy, x = m.ix + dx;
        if (y >= 0 && y < 40 && x >= 0 && x < 40) CHECK(rc[m.class_id * 1600 + y * 40 + x] <= v);
      }
  }
}

TEST_CASE("checkpoint roundtrip") {
  const auto cfg = small_config();
  const auto dir = std::filesystem::temp_directory_path() / "bevsim_test_ckpt";
  std::filesystem::remove_all(dir);
  auto model = make_detector(ModelKind::student, cfg, 9);
  save_checkpoint(*model, dir);
  CHECK(std::filesystem::exists(dir / "model.json"));
  auto loaded = load_checkpoint(dir);
  CHECK(loaded->kind() == ModelKind::student);
  const auto a = model->params(), b = loaded->params();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].name == b[i].name);
    CHECK(bitwise_equal(a[i].tensor, b[i].tensor));
  }
  const auto s = micro_scene(1);
  CHECK(bitwise_equal(model->run(make_input(s, cfg.grid)).head.cls, loaded->run(make_input(s, cfg.grid)).head.cls));

  std::filesystem::remove(dir / "head.cls.weight.bsdt");
  CHECK_THROWS_WITH_AS(load_checkpoint(dir), doctest::Contains("head.cls.weight"), Error);
  CHECK_THROWS_WITH_AS(load_checkpoint(dir / "nowhere"), doctest::Contains("nowhere"), Error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("end-to-end gradients on micro instances") {
  const auto cfg = small_config();
  const auto s = micro_scene(11);
  const auto in = make_input(s, cfg.grid);
  const auto targets = make_targets(s.boxes, 3, cfg.grid);
  for (auto kind : {ModelKind::teacher, ModelKind::camera, ModelKind::student}) {
    auto model = make_detector(kind, cfg, 12);
    if (kind == ModelKind::student) {
      auto& st = dynamic_cast<StudentNet&>(*model);
      Rng r(13);
      st.gc_uv.randomize(r, 0.3);
      st.gc_bev.randomize(r, 0.3);
    }
    const auto params = model->params();
    auto loss = [&] { return det_loss(model->run(in).head, targets).total; };
    audit_params(params, loss, 12, 14);
  }
}

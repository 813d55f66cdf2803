// Copyright 2026 The bevsim Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "bevsim/distill.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace bevsim;
using namespace bevsim::distill;
using bevsim::testing::random_tensor;

namespace {

Box3D make_box(double x, double y, double l, double w, double yaw = 0.0, int cls = 0) {
  Box3D b;
  b.center = {x, y, -1.0};
  b.length = l;
  b.width = w;
  b.height = 1.5;
  b.yaw = yaw;
  b.class_id = cls;
  return b;
}

double interval_overlap(double a0, double a1, double b0, double b1) {
  return std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
}

double iou_rect(const std::array<double, 4>& a, const std::array<double, 4>& b) {
  const double inter = interval_overlap(a[0], a[2], b[0], b[2]) * interval_overlap(a[1], a[3], b[1], b[3]);
  const double ua = (a[2] - a[0]) * (a[3] - a[1]), ub = (b[2] - b[0]) * (b[3] - b[1]);
  return inter / (ua + ub - inter);
}

// Worst IoU over the three corner placements of a ground-truth box [0,w]x[0,h].
double worst_iou(double h, double w, double r) {
  const std::array<double, 4> gt{0, 0, w, h};
  const double shifted = iou_rect(gt, {r, r, w + r, h + r});
  const double inside = (w - 2 * r > 0 && h - 2 * r > 0) ? iou_rect(gt, {r, r, w - r, h - r}) : 0.0;
  const double outside = iou_rect(gt, {-r, -r, w + r, h + r});
  return std::min({shifted, inside, outside});
}

bool inside_polygon(const std::array<std::array<double, 2>, 4>& c, double x, double y) {
  bool pos = false, neg = false;
  for (int i = 0; i < 4; ++i) {
    const auto& a = c[i];
    const auto& b = c[(i + 1) % 4];
    const double cross = (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0]);
    pos = pos || cross > 1e-12;
    neg = neg || cross < -1e-12;
  }
  return !(pos && neg);
}

Detection make_det(const Box3D& b, double conf, int iy, int ix, int n_cls = 3) {
  Detection d;
  d.box = b;
  d.class_id = b.class_id;
  d.confidence = conf;
  d.iy = iy;
  d.ix = ix;
  for (int k = 0; k < kRegChannels; ++k) d.reg[k] = 0.1 * (k + 1) - 0.3;
  for (int c = 0; c < n_cls; ++c) d.class_probs.push_back(0.2 + 0.25 * c);
  return d;
}

}  // namespace

TEST_CASE("gaussian radius agrees with a direct overlap search") {
  const double r = gaussian_radius(10, 10, 0.1);
  CHECK(r == doctest::Approx(3.4189).epsilon(1e-4));
  for (const auto& [h, w, o] : std::vector<std::array<double, 3>>{
           {10, 10, 0.1}, {4, 2, 0.1}, {7, 3, 0.3}, {20, 5, 0.7}, {1, 1, 0.5}, {2.5, 9.5, 0.1}}) {
    const double radius = gaussian_radius(h, w, o);
    double best = 0.0;
    for (double t = 0.0; t <= std::max(h, w); t += 0.5)
      if (worst_iou(h, w, t) >= o) best = t;
    CHECK(std::floor(2 * radius) / 2 == best);
    CHECK(std::abs(worst_iou(h, w, radius) - o) < 1e-12);
  }
  CHECK(gaussian_radius(10, 10, 1 - 1e-12) < 1e-9);
  double prev = 0.0;
  for (double s = 1.0; s < 30.0; s += 0.5) {
    const double cur = gaussian_radius(s, 4.0, 0.1);
    CHECK(cur >= prev);
    prev = cur;
    CHECK(gaussian_radius(4.0, s, 0.1) == doctest::Approx(cur));
  }
}

TEST_CASE("heatmap values") {
  geom::BevGrid grid;
  const Box3D ped = make_box(0.5, 0.5, 0.8, 0.8, 0.3, 1);
  CHECK(heatmap_sigma(0.8, 0.8) == kMinSigma);
  const auto c = cell_coords(ped, grid);
  CHECK(c[0] == 20.0);
  CHECK(c[1] == 20.0);
  const Tensor h = heatmap({ped}, grid);
  CHECK(h[20 * 40 + 20] == 1.0);
  CHECK(h[20 * 40 + 22] == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
  CHECK(h[22 * 40 + 20] == doctest::Approx(0.60653).epsilon(1e-5));
  const Tensor empty = heatmap({}, grid);
  for (double v : empty.data()) CHECK(v == 0.0);

  // Overlapping objects: per-class maps stay unclipped, the sum is clipped.
  const Box3D other = make_box(1.5, 0.5, 0.8, 0.8, 0.0, 2);
  const Tensor per = class_heatmaps({ped, other}, 3, grid);
  CHECK(per.shape() == ad::Shape{3, 40, 40});
  CHECK(per[1600 + 20 * 40 + 20] == 1.0);
  CHECK(per[2 * 1600 + 20 * 40 + 21] == 1.0);
  for (int i = 0; i < 1600; ++i) CHECK(per[i] == 0.0);
  const Tensor both = heatmap({ped, other}, grid);
  for (double v : both.data()) CHECK(v <= 1.0);
  CHECK(both[20 * 40 + 20] == 1.0);
  const Tensor only1 = class_heatmap({ped, other}, 1, grid);
  CHECK(only1[20 * 40 + 21] == doctest::Approx(std::exp(-1.0 / 8.0)));
}

TEST_CASE("box binary map against point-in-polygon") {
  geom::BevGrid grid;
  const Tensor aligned = box_binary_map({make_box(0.0, 0.0, 4.0, 2.0)}, grid);
  int count = 0;
  for (int iy = 0; iy < 40; ++iy)
    for (int ix = 0; ix < 40; ++ix) {
      const double x = -19.5 + ix, y = -19.5 + iy;
      const bool in = std::abs(x) <= 2.0 && std::abs(y) <= 1.0;
      CHECK(aligned[iy * 40 + ix] == (in ? 1.0 : 0.0));
      count += in;
    }
  CHECK(count == 8);

  std::mt19937_64 g(1);
  std::uniform_real_distribution<double> pos(-18, 18), size(0.5, 6), yaw(-kPi, kPi);
  std::vector<Box3D> boxes;
  for (int i = 0; i < 6; ++i) boxes.push_back(make_box(pos(g), pos(g), size(g), size(g), yaw(g)));
  const Tensor b = box_binary_map(boxes, grid);
  for (int iy = 0; iy < 40; ++iy)
    for (int ix = 0; ix < 40; ++ix) {
      bool in = false;
      for (const auto& box : boxes) in = in || inside_polygon(box.bev_corners(), -19.5 + ix, -19.5 + iy);
      CHECK(b[iy * 40 + ix] == (in ? 1.0 : 0.0));
    }
  const Tensor no_boxes = box_binary_map({}, grid);
  for (double v : no_boxes.data()) CHECK(v == 0.0);
  const Tensor full = box_binary_map({make_box(0, 0, 41, 41)}, grid);
  for (double v : full.data()) CHECK(v == 1.0);
}

TEST_CASE("object mask") {
  geom::BevGrid grid;
  std::mt19937_64 g(2);
  const auto h = random_tensor({40, 40}, g, 0, 1, false);
  std::vector<double> bits(1600);
  for (auto& v : bits) v = (g() & 1) ? 1.0 : 0.0;
  const Tensor b({40, 40}, bits);
  const ObjectMask m = object_mask(h, b);
  for (int i = 0; i < 1600; ++i) CHECK(m.mask[i] == h[i] * b[i]);
  const ObjectMask ones = object_mask(Tensor::full({40, 40}, 1.0), b);
  for (int i = 0; i < 1600; ++i) CHECK(ones.mask[i] == b[i]);
  const ObjectMask none = object_mask(h, Tensor::zeros({40, 40}));
  for (double v : none.mask.data()) CHECK(v == 0.0);

  const std::vector<Box3D> boxes{make_box(5.5, 3.5, 4.4, 1.9, 0.4), make_box(-7.5, 9.5, 0.8, 0.8, 0.0, 1)};
  const ObjectMask om = object_mask(boxes, grid);
  double peak = 0.0;
  for (int i = 0; i < 1600; ++i) {
    if (om.binary[i] == 0.0) CHECK(om.mask[i] == 0.0);
    CHECK(om.mask[i] >= 0.0);
    peak = std::max(peak, om.mask[i]);
  }
  CHECK(peak == 1.0);
  CHECK(om.mask[(3 + 20) * 40 + 25] == 1.0);
}

TEST_CASE("feature losses") {
  CHECK(mse_loss(Tensor({2}, {1, 2}), Tensor({2}, {0, 0})).item() == 2.5);
  CHECK(imd_loss(Tensor::full({3, 2}, 1.0), Tensor::zeros({3, 2})).item() == 1.0);
  CHECK(mmdf_loss(Tensor({2}, {1, 2}), Tensor({2}, {1, 2})).item() == 0.0);
  CHECK_THROWS_WITH_AS(mse_loss(Tensor::zeros({2}), Tensor::zeros({3})), doctest::Contains("[3]"), Error);

  const Tensor t({1, 2, 2}, {2, 1, 1, 2});
  const Tensor s({1, 2, 2}, {0, 0, 0, 0});
  const Tensor mask({2, 2}, {1, 0, 0, 0.5});
  CHECK(std::abs(cmd_loss(t, s, mask).item() - 4.0) < 1e-12);
  CHECK(cmd_loss(t, s, Tensor::zeros({2, 2})).item() == 0.0);
  CHECK(cmd_loss(t, t, mask).item() == 0.0);

  // Growing the mask under a constant squared difference keeps the value fixed.
  const Tensor tc = Tensor::full({2, 3, 3}, 1.5);
  const Tensor sc = Tensor::zeros({2, 3, 3});
  double prev = -1.0;
  for (int k = 1; k <= 9; ++k) {
    std::vector<double> m(9, 0.0);
    for (int i = 0; i < k; ++i) m[i] = 0.5;
    const double v = cmd_loss(tc, sc, Tensor({3, 3}, m)).item();
    CHECK(v >= prev - 1e-15);
    prev = v;
  }

  std::mt19937_64 g(3);
  const auto teacher = random_tensor({3, 4, 5}, g);
  const auto student = random_tensor({3, 4, 5}, g);
  std::vector<double> mv(20);
  for (size_t i = 0; i < mv.size(); ++i) mv[i] = (i % 3 == 0) ? 0.0 : 0.1 * static_cast<double>(i % 7);
  const Tensor m2({4, 5}, mv);
  ad::backward(cmd_loss(teacher, student, m2));
  CHECK(!teacher.has_grad());
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 20; ++i)
      if (mv[i] == 0.0) CHECK(student.grad()[c * 20 + i] == 0.0);
  CHECK(testing::check([&](const Tensor& x) { return cmd_loss(teacher.detach(), x, m2); }, student.detach().set_requires_grad(true)).pass);
  const auto s2 = random_tensor({3, 4, 5}, g);
  CHECK(ad::finite_diff_check([&](const Tensor& x) { return mse_loss(teacher.detach(), x); }, s2, 1e-5, 1e-4).pass);
}

TEST_CASE("quality score") {
  const Box3D gt = make_box(1.0, 1.0, 2.0, 2.0);
  const Box3D shifted = make_box(2.0, 1.0, 2.0, 2.0);
  CHECK(derotated_bev_iou(shifted, gt) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(derotated_bev_iou(gt, gt) == 1.0);

  const auto q = quality_score({make_det(gt, 0.9, 0, 0), make_det(make_box(12, 1, 2, 2), 0.8, 0, 0)}, {gt});
  CHECK(q[0].s == 1.0);
  CHECK(q[0].match == size_t{0});
  CHECK(q[1].s == 0.0);
  CHECK(!q[1].match);

  // Higher confidence claims the ground truth first; class must agree.
  auto low = make_det(gt, 0.3, 0, 0);
  auto high = make_det(shifted, 0.7, 0, 0);
  auto wrong = make_det(make_box(1.0, 1.0, 2, 2, 0, 2), 0.95, 0, 0);
  const auto q2 = quality_score({low, high, wrong}, {gt});
  CHECK(q2[1].s == doctest::Approx(1.0 / 3.0));
  CHECK(q2[0].s == 0.0);
  CHECK(q2[2].s == 0.0);

  // Rotated pair: detection in the ground-truth frame.
  const Box3D rot = make_box(3.0, 4.0, 4.0, 2.0, 0.7);
  Box3D det = rot;
  det.yaw = -1.0;
  CHECK(derotated_bev_iou(det, rot) == 1.0);
}

TEST_CASE("quality focal loss") {
  CHECK(std::abs(qfl(Tensor::scalar(0.5), Tensor::scalar(1.0), 2.0).item() - 0.25 * std::log(2.0)) < 1e-12);
  CHECK(qfl(Tensor({3}, {0.2, 0.7, 0.9}), Tensor({3}, {0.2, 0.7, 0.9})).item() == 0.0);
  std::mt19937_64 g(4);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 200; ++i) CHECK(qfl(Tensor::scalar(u(g)), Tensor::scalar(u(g))).item() >= 0.0);
  CHECK(std::isfinite(qfl(Tensor::scalar(0.0), Tensor::scalar(1.0)).item()));
  const auto p = random_tensor({6}, g, 0.05, 0.95);
  const Tensor y({6}, {0.0, 1.0, 0.3, 0.5, 0.9, 0.1});
  CHECK(ad::finite_diff_check([&](const Tensor& x) { return qfl(x, y); }, p, 1e-5, 1e-4).pass);
}

TEST_CASE("prediction distillation") {
  const int n_cls = 3, ny = 6, nx = 5;
  const Box3D gt0 = make_box(1.0, 1.0, 2.0, 2.0, 0.0, 0);
  const Box3D gt1 = make_box(-3.0, 2.0, 1.0, 1.0, 0.0, 1);
  std::vector<Detection> dets{make_det(make_box(1.5, 1.0, 2.0, 2.0), 0.9, 2, 3),
                              make_det(make_box(-3.0, 2.0, 1.0, 1.0, 0.0, 1), 0.6, 4, 1),
                              make_det(make_box(9.0, 9.0, 1.0, 1.0, 0.0, 2), 0.5, 0, 0)};
  const auto scores = quality_score(dets, {gt0, gt1});
  CHECK(scores[0].s > 0.0);
  CHECK(scores[1].s == 1.0);
  CHECK(scores[2].s == 0.0);

  // Student identical to teacher at the detection cells.
  std::vector<double> cls(n_cls * ny * nx, -3.0), reg(kRegChannels * ny * nx, 0.7);
  for (const auto& d : dets) {
    for (int c = 0; c < n_cls; ++c) {
      const double p = d.class_probs[c];
      cls[(c * ny + d.iy) * nx + d.ix] = std::log(p / (1 - p));
    }
    for (int k = 0; k < kRegChannels; ++k) reg[(k * ny + d.iy) * nx + d.ix] = d.reg[k];
  }
  const Tensor cls_t({n_cls, ny, nx}, cls), reg_t({kRegChannels, ny, nx}, reg);
  CHECK(mmdp_loss(dets, scores, cls_t, reg_t).item() < 1e-20);
  CHECK(mmdp_loss({}, {}, cls_t, reg_t).item() == 0.0);
  std::vector<QualityScore> zero(3);
  CHECK(mmdp_loss(dets, zero, cls_t, reg_t).item() == 0.0);

  // Hand value: one detection, s = 0.5, one regression entry off by 2,
  // class logits equal to the teacher's.
  std::vector<double> reg2 = reg;
  reg2[(0 * ny + 2) * nx + 3] += 2.0;
  std::vector<QualityScore> half{{0.5, 0}, {0.0, {}}, {0.0, {}}};
  CHECK(std::abs(mmdp_loss(dets, half, cls_t, Tensor({kRegChannels, ny, nx}, reg2)).item() - 1.5) < 1e-12);

  std::mt19937_64 g(5);
  const auto sc = random_tensor({n_cls, ny, nx}, g, -2, 2);
  const auto sr = random_tensor({kRegChannels, ny, nx}, g, -2, 2);
  CHECK(ad::finite_diff_check([&](const Tensor& x) { return mmdp_loss(dets, scores, x, sr.detach()); }, sc, 1e-5, 1e-4)
            .pass);
  CHECK(ad::finite_diff_check([&](const Tensor& x) { return mmdp_loss(dets, scores, sc.detach(), x); }, sr, 1e-5, 1e-4)
            .pass);
}

TEST_CASE("mask dump writes scaled PGMs") {
  geom::BevGrid grid;
  const auto m = object_mask({make_box(0.5, 0.5, 4.0, 2.0)}, grid);
  const auto dir = std::filesystem::temp_directory_path() / "bevsim_test_masks";
  std::filesystem::remove_all(dir);
  dump_masks(m, dir, "scene0");
  std::ifstream is(dir / "scene0_mask.pgm", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(is)), {});
  const std::string header = "P5\n40 40\n255\n";
  REQUIRE(bytes.size() == header.size() + 1600);
  CHECK(bytes.substr(0, header.size()) == header);
  for (int i = 0; i < 1600; ++i)
    CHECK(static_cast<uint8_t>(bytes[header.size() + i]) == static_cast<int>(std::lround(255.0 * m.mask[i])));
  CHECK(std::filesystem::exists(dir / "scene0_heat.pgm"));
  CHECK(std::filesystem::exists(dir / "scene0_box.pgm"));
  std::filesystem::remove_all(dir);
}

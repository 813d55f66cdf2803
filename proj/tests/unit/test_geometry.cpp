// Copyright 2026 The bevsim Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <cstring>
#include <random>
#include <set>

#include "bevsim/geometry.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace bevsim;
using namespace bevsim::geom;
using bevsim::testing::random_tensor;

namespace {

scene::CameraView identity_view() {
  scene::CameraView v;
  v.fx = v.fy = 1.0;
  v.rotation = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  v.height = v.width = 8;
  return v;
}

}  // namespace

TEST_CASE("grid cell lookup") {
  BevGrid g;
  CHECK(g.cell_x() == 1.0);
  CHECK(g.cell_of(-20.0, -20.0) == 0);
  CHECK(g.cell_of(19.999, 19.999) == 1599);
  CHECK(g.cell_of(0.5, -19.5) == 20);
  CHECK(!g.cell_of(20.0, 0.0));
  CHECK(!g.cell_of(0.0, -20.1));
  const auto c = g.center(20, 0);
  CHECK(c[0] == 0.5);
  CHECK(c[1] == -19.5);
  BevGrid bad;
  bad.nx = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  DepthBins b;
  CHECK(b.center(0) == doctest::Approx(1.0 + 0.5 * 27.0 / 16.0));
  CHECK_THROWS_AS(grid_from_json(json{{"cells", 3}}), Error);
}

TEST_CASE("project_points") {
  const auto v = identity_view();
  const auto p = project_points(v, {{0, 0, 5}, {1, 2, -1}, {1, -2, 4}});
  CHECK(p.valid[0]);
  CHECK(p.uv[0][0] == 0.0);
  CHECK(p.uv[0][1] == 0.0);
  CHECK(p.depth[0] == 5.0);
  CHECK(!p.valid[1]);
  CHECK(p.uv[2][0] == doctest::Approx(0.25));
  CHECK(p.uv[2][1] == doctest::Approx(-0.5));

  const auto rig = scene::default_rig();
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> xy(-20, 20), z(-2, 1);
  for (const auto& view : rig.views) {
    std::vector<scene::Vec3> pts;
    for (int i = 0; i < 200; ++i) pts.push_back({xy(rng), xy(rng), z(rng)});
    const auto pr = project_points(view, pts);
    for (size_t i = 0; i < pts.size(); ++i) {
      if (!pr.valid[i]) continue;
      const auto back = unproject(view, pr.uv[i][0], pr.uv[i][1], pr.depth[i]);
      for (int k = 0; k < 3; ++k) CHECK(std::abs(back[k] - pts[i][k]) < 1e-9);
    }
  }
}

TEST_CASE("frustum count, bin depth and reprojection") {
  const auto rig = scene::default_rig();
  DepthBins bins;
  bins.count = 4;
  const Frustum f = gen_frustum(rig, 8, 16, bins);
  CHECK(f.points.size() == 1024);
  const auto& first = f.points[0];
  CHECK(first.view == 0);
  CHECK(first.bin == 0);
  CHECK(rig.views[0].to_camera(first.ego)[2] == doctest::Approx(bins.d_min + 0.5 * bins.width()).epsilon(1e-12));
  CHECK(f.points[1].bin == 1);
  CHECK(f.points[4].u == 1);
  CHECK(f.points[16 * 4].v == 1);
  CHECK(f.points[512].view == 1);
  for (const auto& p : f.points) {
    const auto pr = project_points(rig.views[p.view], {p.ego});
    REQUIRE(pr.valid[0]);
    CHECK(std::abs(pr.uv[0][0] - p.pixel_u) < 1e-9);
    CHECK(std::abs(pr.uv[0][1] - p.pixel_v) < 1e-9);
    CHECK(std::abs(pr.depth[0] - bins.center(p.bin)) < 1e-9);
  }
}

TEST_CASE("conv head keeps spatial size; zero last layer gives uniform depth") {
  Rng rng(1);
  ConvHead head(6, 8, 4, rng, true);
  std::mt19937_64 g(2);
  const auto x = random_tensor({6, 5, 7}, g);
  const Tensor logits = head(x);
  CHECK(logits.shape() == ad::Shape{4, 5, 7});
  const Tensor prob = ad::softmax(logits, 0);
  for (double p : prob.data()) CHECK(p == doctest::Approx(0.25).epsilon(1e-15));
  CHECK_THROWS_AS(head(random_tensor({5, 5, 7}, g)), Error);
}

TEST_CASE("lift splits context mass over depth bins") {
  {
    const Tensor ctx({1, 1, 1}, {2.0});
    const Tensor logits({2, 1, 1}, {0.0, 0.0});
    const Tensor pts = lift({ctx}, {logits});
    CHECK(pts.shape() == ad::Shape{2, 1});
    CHECK(pts[0] == 1.0);
    CHECK(pts[1] == 1.0);
  }
  {
    const Tensor ctx({2, 1, 1}, {3.0, -1.5});
    const Tensor logits({3, 1, 1}, {-50.0, 50.0, -50.0});
    const Tensor pts = lift({ctx}, {logits});
    CHECK(std::abs(pts[2] - 3.0) < 1e-12);
    CHECK(std::abs(pts[3] + 1.5) < 1e-12);
  }
  std::mt19937_64 g(3);
  const auto ctx = random_tensor({5, 10, 10}, g, -2, 2, false);
  const auto logits = random_tensor({6, 10, 10}, g, -3, 3, false);
  const auto ctx2 = random_tensor({5, 10, 10}, g, -2, 2, false);
  const auto logits2 = random_tensor({6, 10, 10}, g, -3, 3, false);
  const Tensor pts = lift({ctx, ctx2}, {logits, logits2});
  CHECK(pts.shape() == ad::Shape{2 * 100 * 6, 5});
  for (int view = 0; view < 2; ++view) {
    const Tensor& c = view == 0 ? ctx : ctx2;
    for (int pix = 0; pix < 100; ++pix)
      for (int ch = 0; ch < 5; ++ch) {
        double s = 0.0;
        for (int k = 0; k < 6; ++k) s += pts[((view * 100 + pix) * 6 + k) * 5 + ch];
        CHECK(s == doctest::Approx(c[ch * 100 + pix]).epsilon(1e-12));
      }
  }
}

TEST_CASE("bev_pool matches a per-cell loop") {
  BevGrid grid;
  {
    const Tensor f({1, 3}, {1.0, 2.0, 3.0});
    const Tensor m = bev_pool(f, {{0.5, 0.5, 0.0}}, grid);
    int nonzero = 0;
    for (int64_t i = 0; i < 1600; ++i)
      for (int c = 0; c < 3; ++c)
        if (m[c * 1600 + i] != 0.0) {
          ++nonzero;
          CHECK(i == 20 * 40 + 20);
          CHECK(m[c * 1600 + i] == f[c]);
        }
    CHECK(nonzero == 3);
    const Tensor z = bev_pool(f, {{50.0, 0.0, 0.0}}, grid);
    for (double v : z.data()) CHECK(v == 0.0);
  }
  std::mt19937_64 g(5);
  std::uniform_real_distribution<double> pos(-25, 25);
  const int n = 1000, c = 4;
  const auto feats = random_tensor({n, c}, g, -1, 1, false);
  std::vector<scene::Vec3> p(n);
  for (auto& q : p) q = {pos(g), pos(g), 0.0};
  const Tensor pooled = bev_pool(feats, p, grid);
  std::vector<double> brute(c * 1600, 0.0);
  for (int iy = 0; iy < 40; ++iy)
    for (int ix = 0; ix < 40; ++ix)
      for (int i = 0; i < n; ++i) {
        const double x0 = -20.0 + ix, y0 = -20.0 + iy;
        if (p[i][0] >= x0 && p[i][0] < x0 + 1 && p[i][1] >= y0 && p[i][1] < y0 + 1)
          for (int ch = 0; ch < c; ++ch) brute[ch * 1600 + iy * 40 + ix] += feats[i * c + ch];
      }
  CHECK(std::memcmp(brute.data(), pooled.data().data(), brute.size() * sizeof(double)) == 0);
}

TEST_CASE("lift and pool are differentiable end to end") {
  const auto rig = scene::default_rig(8, 16);
  DepthBins bins;
  bins.count = 4;
  BevGrid grid;
  grid.nx = grid.ny = 8;
  grid.x_min = -5;
  grid.x_max = 27;
  grid.y_min = -16;
  grid.y_max = 16;
  const Frustum f = gen_frustum(rig, 2, 4, bins);
  const PoolIndex idx = make_pool_index(f, grid);
  REQUIRE(!idx.point.empty());
  std::mt19937_64 g(6);
  const auto ctx0 = random_tensor({3, 2, 4}, g, -1, 1, false);
  const auto ctx1 = random_tensor({3, 2, 4}, g, -1, 1, false);
  const auto lg0 = random_tensor({4, 2, 4}, g);
  const auto lg1 = random_tensor({4, 2, 4}, g);
  auto r = testing::check([&](const Tensor& x) { return bev_pool(lift({ctx0, ctx1}, {x, lg1}), idx); }, lg0);
  CHECK(r.pass);
  auto r2 = testing::check([&](const Tensor& x) { return bev_pool(lift({x, ctx1}, {lg0, lg1}), idx); },
                           random_tensor({3, 2, 4}, g));
  CHECK(r2.pass);
}

TEST_CASE("conv head gradients") {
  Rng rng(7);
  ConvHead head(3, 4, 2, rng);
  std::mt19937_64 g(8);
  const auto x = random_tensor({3, 4, 5}, g);
  CHECK(testing::check([&](const Tensor& v) { return head(v); }, x).pass);
  nn::ParamList ps;
  head.params("head", ps);
  CHECK(ps.size() == 6);
  CHECK(ps[0].name == "head.c1.weight");
  for (auto& p : ps) {
    auto r = ad::finite_diff_check([&](const Tensor&) { return testing::probe_loss(head(x.detach())); }, p.tensor, 1e-5,
                                   1e-4);
    CHECK_MESSAGE(r.pass, p.name);
  }
}

TEST_CASE("pillarize") {
  BevGrid grid;
  Rng rng(9);
  PillarEncoder enc(8, 5, grid, rng);
  const Tensor empty = enc(prepare_pillars({}, grid));
  CHECK(empty.shape() == ad::Shape{5, 40, 40});
  for (double v : empty.data()) CHECK(v == 0.0);

  const auto one = prepare_pillars({{0.5, 3.5, -1.0, 0.25}}, grid);
  REQUIRE(one.encoding.defined());
  CHECK(one.encoding[0] == -1.0);
  CHECK(one.encoding[1] == 0.25);
  CHECK(one.encoding[2] == 0.0);
  CHECK(one.encoding[3] == 0.0);

  std::mt19937_64 g(10);
  std::uniform_real_distribution<double> pos(-22, 22), z(-2, 0), in(0, 1);
  std::vector<scene::Point> pts(1000);
  for (auto& p : pts) p = {pos(g), pos(g), z(g), in(g)};
  const auto pin = prepare_pillars(pts, grid);
  std::set<int64_t> brute;
  for (const auto& p : pts) {
    const int ix = static_cast<int>(std::floor(p.x + 20.0)), iy = static_cast<int>(std::floor(p.y + 20.0));
    if (ix >= 0 && ix < 40 && iy >= 0 && iy < 40) brute.insert(iy * 40 + ix);
  }
  CHECK(std::set<int64_t>(pin.pillar_cell.begin(), pin.pillar_cell.end()) == brute);
  CHECK(pin.pillar_cell.size() == brute.size());
  const Tensor map = enc(pin);
  for (int64_t cell = 0; cell < 1600; ++cell) {
    bool any = false;
    for (int c = 0; c < 5; ++c) any = any || map[c * 1600 + cell] != 0.0;
    if (!brute.count(cell)) CHECK(!any);
  }

  // Gradient through the encoder parameters on a small cloud.
  std::vector<scene::Point> few(pts.begin(), pts.begin() + 40);
  const auto pf = prepare_pillars(few, grid);
  nn::ParamList ps;
  enc.params("pillar", ps);
  for (auto& p : ps) {
    auto r = ad::finite_diff_check([&](const Tensor&) { return testing::probe_loss(enc(pf)); }, p.tensor, 1e-5, 1e-4);
    CHECK_MESSAGE(r.pass, p.name);
  }
}

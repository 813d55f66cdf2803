// Copyright 2026 The bevsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "bevsim/figures.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <fmt/format.h>

#include "bevsim/distill.hpp"
#include "bevsim/pnm.hpp"

namespace bevsim::figures {

std::vector<double> channel_mean(const ad::Tensor& t) {
  require(t.shape().size() == 3, "feature map must be [C x H x W], got {}", ad::to_string(t.shape()));
  const int64_t c = t.dim(0), hw = t.dim(1) * t.dim(2);
  std::vector<double> out(static_cast<size_t>(hw), 0.0);
  const auto d = t.data();
  for (int64_t k = 0; k < c; ++k)
    for (int64_t i = 0; i < hw; ++i) out[static_cast<size_t>(i)] += d[static_cast<size_t>(k * hw + i)];
  for (auto& v : out) v /= static_cast<double>(c);
  return out;
}

std::string write_feature_map(const ad::Tensor& t, const std::filesystem::path& path) {
  const auto mean = channel_mean(t);
  io::MinMax range;
  const auto gray = io::minmax_gray8(mean, &range);
  io::write_pgm(path, static_cast<int>(t.dim(2)), static_cast<int>(t.dim(1)), gray);
  if (!(range.hi > range.lo))
    return fmt::format("{}: mean of {} channels, constant {:.6g}, drawn as 128", path.filename().string(), t.dim(0),
                       range.lo);
  return fmt::format("{}: mean of {} channels, 0 = {:.6g}, 255 = {:.6g}", path.filename().string(), t.dim(0),
                     range.lo, range.hi);
}

namespace {

struct Canvas {
  int w, h;
  std::vector<uint8_t> rgb;

  Canvas(int width, int height) : w(width), h(height), rgb(static_cast<size_t>(3 * width * height), 0) {}

  void put(int x, int y, uint8_t r, uint8_t g, uint8_t b) {
    if (x < 0 || y < 0 || x >= w || y >= h) return;
    auto* p = &rgb[static_cast<size_t>(3 * (y * w + x))];
    p[0] = r;
    p[1] = g;
    p[2] = b;
  }

  void line(double x0, double y0, double x1, double y1, uint8_t r, uint8_t g, uint8_t b) {
    const int n = static_cast<int>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))) + 1;
    for (int i = 0; i <= n; ++i) {
      const double f = static_cast<double>(i) / n;
      put(static_cast<int>(std::floor(x0 + f * (x1 - x0))), static_cast<int>(std::floor(y0 + f * (y1 - y0))), r, g,
          b);
    }
  }
};

}  // namespace

void write_detections(const std::vector<scene::Box3D>& gt, const std::vector<Detection>& dets,
                      const geom::BevGrid& grid, const std::filesystem::path& path) {
  Canvas c(static_cast<int>(grid.nx) * kDetScale, static_cast<int>(grid.ny) * kDetScale);
  for (int y = 0; y < c.h; y += kDetScale)
    for (int x = 0; x < c.w; ++x) c.put(x, y, 40, 40, 40);
  for (int x = 0; x < c.w; x += kDetScale)
    for (int y = 0; y < c.h; ++y) c.put(x, y, 40, 40, 40);
  const double sx = kDetScale / grid.cell_x(), sy = kDetScale / grid.cell_y();
  auto px = [&](double x) { return (x - grid.x_min) * sx; };
  auto py = [&](double y) { return (y - grid.y_min) * sy; };
  auto outline = [&](const scene::Box3D& b, uint8_t r, uint8_t g, uint8_t bl) {
    const auto k = b.bev_corners();
    for (size_t i = 0; i < 4; ++i) {
      const auto& p = k[i];
      const auto& q = k[(i + 1) % 4];
      c.line(px(p[0]), py(p[1]), px(q[0]), py(q[1]), r, g, bl);
    }
  };
  for (const auto& b : gt) outline(b, 0, 220, 0);
  for (const auto& d : dets) {
    const auto v = static_cast<uint8_t>(std::clamp(std::round(80.0 + 175.0 * d.confidence), 0.0, 255.0));
    outline(d.box, v, 0, 0);
  }
  const int ox = static_cast<int>(std::floor(px(0.0))), oy = static_cast<int>(std::floor(py(0.0)));
  for (int dy = -2; dy <= 2; ++dy)
    for (int dx = -2; dx <= 2; ++dx) c.put(ox + dx, oy + dy, 60, 120, 255);
  io::write_ppm(path, c.w, c.h, c.rgb);
}

std::vector<std::string> export_figures(const detnet::Detector& model, const scene::Scene& s,
                                        const std::filesystem::path& dir, double score_thresh, int topk) {
  std::filesystem::create_directories(dir);
  const auto& grid = model.config().grid;
  detnet::FeatureBundle b;
  {
    ad::NoGradGuard no_grad;
    b = model.run(detnet::make_input(s, grid));
  }
  std::vector<std::string> written, legend;
  legend.push_back(fmt::format("model: {}", detnet::to_string(model.kind())));
  legend.push_back(fmt::format("grid: {} x {} cells, x [{}, {}] m left to right, y [{}, {}] m top to bottom",
                               grid.nx, grid.ny, grid.x_min, grid.x_max, grid.y_min, grid.y_max));
  auto feature = [&](const ad::Tensor& t, const char* name) {
    if (!t.defined()) {
      legend.push_back(fmt::format("{}: not produced by this model", name));
      return;
    }
    legend.push_back(write_feature_map(t, dir / name));
    written.push_back(name);
  };
  feature(b.c_bev, "bev_cam.pgm");
  feature(b.l_bev, "bev_simlidar.pgm");
  feature(b.u_bev, "bev_fused.pgm");

  const auto mask = distill::object_mask(s.boxes, grid);
  io::write_pgm(dir / "mask.pgm", static_cast<int>(grid.nx), static_cast<int>(grid.ny), io::to_gray8(mask.mask.data()));
  legend.push_back("mask.pgm: object-aware mask of the ground truth, pixel = round(255 M)");
  written.push_back("mask.pgm");

  const auto dets = detnet::decode(b.head, grid, score_thresh, topk);
  write_detections(s.boxes, dets, grid, dir / "dets.ppm");
  legend.push_back(fmt::format("dets.ppm: {} px per cell; green = ground truth ({}), red = detections ({}, score >= "
                               "{}), brighter = more confident; blue = ego origin",
                               kDetScale, s.boxes.size(), dets.size(), score_thresh));
  written.push_back("dets.ppm");

  std::ofstream os(dir / "legend.txt");
  require(os.good(), "cannot write {}", (dir / "legend.txt").string());
  for (const auto& line : legend) os << line << "\n";
  written.push_back("legend.txt");
  return written;
}

}  // namespace bevsim::figures

// Copyright 2026 The bevsim Authors
// SPDX-License-Identifier: Apache-2.0

// BEV feature maps and detections rendered as PGM/PPM images.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "bevsim/detnet.hpp"

namespace bevsim::figures {

// Mean over channels of a [C x H x W] map, row-major [H x W].
std::vector<double> channel_mean(const ad::Tensor& t);

// Channel mean, min-max scaled to 8 bits (constant maps become 128).
// Returns the scaling line for the legend.
std::string write_feature_map(const ad::Tensor& t, const std::filesystem::path& path);

inline constexpr int kDetScale = 8;  // pixels per BEV cell in dets.ppm

// Ground-truth footprints in green, detections in red (brightness grows with
// confidence), ego origin in blue; x grows to the right, y downwards.
void write_detections(const std::vector<scene::Box3D>& gt, const std::vector<Detection>& dets,
                      const geom::BevGrid& grid, const std::filesystem::path& path);

// bev_cam.pgm, bev_simlidar.pgm (real LiDAR features for a teacher),
// bev_fused.pgm, mask.pgm (object-aware mask of the ground truth), dets.ppm
// and legend.txt. A camera-only model has no LiDAR map; the legend says so.
std::vector<std::string> export_figures(const detnet::Detector& model, const scene::Scene& s,
                                        const std::filesystem::path& dir, double score_thresh, int topk);

}  // namespace bevsim::figures

// Copyright 2026 The bevsim Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

#include "bevsim/harness.hpp"

namespace bevsim::harness {

void parallel_for(size_t n, int workers, const std::function<void(size_t)>& fn) {
  const size_t threads = std::min<size_t>(n, static_cast<size_t>(std::max(workers, 1)));
  if (threads <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::mutex mu;
  size_t failed_at = n;
  std::exception_ptr error;
  auto work = [&] {
    for (size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (i < failed_at) {
          failed_at = i;
          error = std::current_exception();
        }
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(threads - 1);
  for (size_t t = 1; t < threads; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::vector<Scene> generate_scenes(const DataConfig& cfg, int workers) {
  const auto rig = scene::default_rig(cfg.scene.image_height, cfg.scene.image_width);
  std::vector<Scene> scenes(static_cast<size_t>(cfg.n_scenes));
  parallel_for(scenes.size(), workers,
               [&](size_t i) { scenes[i] = scene::generate_scene(cfg.seed, i, cfg.scene, cfg.lidar, rig); });
  return scenes;
}

std::vector<Scene> Dataset::train() const {
  const size_t n = std::min(info.n_train, scenes.size());
  return {scenes.begin(), scenes.begin() + static_cast<std::ptrdiff_t>(n)};
}

std::vector<Scene> Dataset::val() const {
  const size_t n = std::min(info.n_train, scenes.size());
  return {scenes.begin() + static_cast<std::ptrdiff_t>(n), scenes.end()};
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset d;
  d.info = scene::read_manifest(dir);
  d.scenes = scene::read_dataset(dir);
  require(d.scenes.size() == d.info.n_scenes, "{}: manifest lists {} scenes but {} scene files were found",
          dir.string(), d.info.n_scenes, d.scenes.size());
  require(d.info.n_train <= d.info.n_scenes, "{}: n_train {} exceeds n_scenes {}", dir.string(), d.info.n_train,
          d.info.n_scenes);
  return d;
}

}  // namespace bevsim::harness

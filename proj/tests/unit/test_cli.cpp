// Copyright 2026 The bevsim Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <unistd.h>

#include "bevsim/cli.hpp"
#include "bevsim/distill.hpp"
#include "bevsim/figures.hpp"
#include "bevsim/harness.hpp"
#include "doctest.h"

using namespace bevsim;
namespace fs = std::filesystem;

namespace {

const char* kTinyConfig = R"({
  "data": {"n_scenes": 5, "n_train": 3,
           "scene": {"image_height": 16, "image_width": 32, "x_range": [2.0, 15.0], "y_range": [-7.0, 7.0],
                     "min_boxes": 2, "max_boxes": 3}},
  "model": {"grid": {"x_range": [0, 16], "y_range": [-8, 8], "nx": 8, "ny": 8},
            "depth": {"d_min": 1, "d_max": 17, "count": 4},
            "encoder_channels": [4, 4, 4], "head_hidden": 4, "c_bev": 4, "c_lidar": 4, "c_fused": 4,
            "pillar_hidden": 4,
            "gcm_uv": {"heads": 2, "points": 2, "layers": 1}, "gcm_bev": {"heads": 2, "points": 2, "layers": 1}},
  "train": {"teacher_epochs": 2, "student_epochs": 2, "batch": 2, "seeds": [1]},
  "eval": {"score_thresh": 0.0}
})";

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

// Every regular file under dir, keyed by relative path.
std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  return out;
}

// Shared fixture: a tiny dataset and teacher, built once.
struct Workspace {
  fs::path root;
  fs::path config;
  fs::path data;
  fs::path teacher;

  Workspace() {
    root = fs::temp_directory_path() / fmt::format("bevsim_cli_{}", static_cast<long>(::getpid()));
    fs::remove_all(root);
    fs::create_directories(root);
    config = root / "tiny.json";
    std::ofstream(config) << kTinyConfig;
    data = root / "data";
    teacher = root / "teacher";
    REQUIRE(run({"gen", "--config", config.string(), "--out", data.string()}).code == 0);
    REQUIRE(run({"train-teacher", "--config", config.string(), "--data", data.string(), "--out", teacher.string()})
                .code == 0);
  }
  ~Workspace() { fs::remove_all(root); }
};

Workspace& ws() {
  static Workspace w;
  return w;
}

}  // namespace

TEST_CASE("gen writes scenes, a manifest and a lock, and is deterministic") {
  auto& w = ws();
  const auto files = tree(w.data);
  CHECK(files.count("manifest.json") == 1);
  CHECK(files.count("config.lock.json") == 1);
  int scenes = 0;
  for (const auto& [name, bytes] : files) scenes += name.rfind("scene_", 0) == 0 ? 1 : 0;
  CHECK(scenes == 5);

  const auto again = w.root / "data_again";
  REQUIRE(run({"gen", "--config", w.config.string(), "--out", again.string()}).code == 0);
  auto a = tree(w.data), b = tree(again);
  a.erase("config.lock.json");  // records its own output path
  b.erase("config.lock.json");
  CHECK(a == b);
}

TEST_CASE("invalid config keys and unknown flags fail loudly") {
  auto& w = ws();
  const auto bad = w.root / "bad.json";
  std::ofstream(bad) << R"({"train": {"epochz": 3}})";
  const auto r = run({"gen", "--config", bad.string(), "--out", (w.root / "never").string()});
  CHECK(r.code != 0);
  CHECK(r.err.find("train.epochz") != std::string::npos);

  const auto u = run({"eval", "--ckpt", w.teacher.string(), "--data", w.data.string(), "--fast"});
  CHECK(u.code != 0);
  CHECK(u.err.find("--fast") != std::string::npos);
}

TEST_CASE("help lists every flag of a command") {
  const auto r = run({"distill", "--help"});
  CHECK(r.code == 0);
  for (const char* flag : {"--teacher", "--data", "--out", "--loss", "--no-gcm", "--no-oam", "--config", "--seed",
                           "--workers"})
    CHECK_MESSAGE(r.out.find(flag) != std::string::npos, flag);
}

TEST_CASE("train-teacher writes a checkpoint, loss curves and a lock") {
  auto& w = ws();
  for (const char* f : {"model.json", "loss_curves.csv", "config.lock.json", "head.cls.weight.bsdt"})
    CHECK_MESSAGE(fs::exists(w.teacher / f), f);
  CHECK(slurp(w.teacher / "loss_curves.csv").rfind("step,term,value\n", 0) == 0);
  CHECK(detnet::load_checkpoint(w.teacher)->kind() == detnet::ModelKind::teacher);

  const auto cam = w.root / "camera";
  REQUIRE(run({"train-teacher", "--config", w.config.string(), "--data", w.data.string(), "--out", cam.string(),
               "--camera-only"})
              .code == 0);
  CHECK(detnet::load_checkpoint(cam)->kind() == detnet::ModelKind::camera);
}

TEST_CASE("distill flags map onto the ablation switches") {
  auto& w = ws();
  const auto out = w.root / "row_c";
  const auto r = run({"distill", "--config", w.config.string(), "--teacher", w.teacher.string(), "--data",
                      w.data.string(), "--out", out.string(), "--loss", "cmd", "--no-gcm", "--no-oam"});
  REQUIRE(r.code == 0);
  const json lock = json::parse(slurp(out / cli::kLockFile));
  const auto d = harness::distill_config_from_json(lock.at("distill"));
  const auto row_c = harness::ablation_rows(harness::DistillConfig{})[2];
  CHECK(row_c.id == "c");
  CHECK(harness::to_json(d) == harness::to_json(row_c.distill));

  // Without GCM the simulated branch has no attention layers.
  const auto model = detnet::load_checkpoint(out);
  CHECK(model->config().gcm_bev.layers == 0);
  CHECK(model->config().gcm_uv.layers == 0);

  const auto bad = run({"distill", "--config", w.config.string(), "--teacher", w.teacher.string(), "--data",
                        w.data.string(), "--out", (w.root / "x").string(), "--loss", "kd"});
  CHECK(bad.code != 0);
  CHECK(bad.err.find("kd") != std::string::npos);
}

TEST_CASE("eval emits a report with the mAP field") {
  auto& w = ws();
  const auto r = run({"eval", "--ckpt", w.teacher.string(), "--data", w.data.string()});
  REQUIRE(r.code == 0);
  const json report = json::parse(slurp(w.teacher / "eval" / "eval_report.json"));
  CHECK(report.contains("mAP"));
  CHECK(report.at("mAP").get<double>() >= 0.0);
  CHECK(report.at("n_scenes") == 2);
  CHECK(fs::exists(w.teacher / "eval" / "timing.json"));
}

TEST_CASE("commands are reproducible from their lock file alone and leave the dataset untouched") {
  auto& w = ws();
  const auto before = tree(w.data);
  const auto first = w.root / "student";
  REQUIRE(run({"distill", "--config", w.config.string(), "--teacher", w.teacher.string(), "--data",
               w.data.string(), "--out", first.string(), "--workers", "2"})
              .code == 0);
  const auto second = w.root / "student_replay";
  REQUIRE(run({"replay", (first / cli::kLockFile).string(), "--out", second.string()}).code == 0);
  auto a = tree(first), b = tree(second);
  CHECK(a.size() == b.size());
  for (const auto& [name, bytes] : a) {
    if (name == cli::kLockFile) continue;
    CHECK_MESSAGE(b[name] == bytes, name);
  }

  // The replayed run ignores BEVSIM_SEED; the lock already holds the seed.
  ::setenv(cli::kSeedEnv, "999", 1);
  const auto third = w.root / "student_env";
  REQUIRE(run({"replay", (first / cli::kLockFile).string(), "--out", third.string()}).code == 0);
  CHECK(slurp(third / "head.cls.weight.bsdt") == a["head.cls.weight.bsdt"]);
  ::unsetenv(cli::kSeedEnv);

  CHECK(tree(w.data) == before);
}

TEST_CASE("seed precedence: flag, then environment, then config") {
  auto& w = ws();
  auto seed_of = [&](const fs::path& dir) {
    return json::parse(slurp(dir / cli::kLockFile)).at("train").at("seed").get<uint64_t>();
  };
  const auto cfg_only = w.root / "gc_cfg";
  REQUIRE(run({"gradcheck", "--model", "camera", "--probes", "2", "--out", cfg_only.string()}).code == 0);
  CHECK(seed_of(cfg_only) == 42);

  ::setenv(cli::kSeedEnv, "17", 1);
  const auto env = w.root / "gc_env";
  REQUIRE(run({"gradcheck", "--model", "camera", "--probes", "2", "--out", env.string()}).code == 0);
  CHECK(seed_of(env) == 17);
  const auto flag = w.root / "gc_flag";
  REQUIRE(run({"gradcheck", "--model", "camera", "--probes", "2", "--out", flag.string(), "--seed", "5"}).code == 0);
  CHECK(seed_of(flag) == 5);
  ::setenv(cli::kSeedEnv, "not-a-number", 1);
  CHECK(run({"gradcheck", "--model", "camera", "--probes", "2"}).code != 0);
  ::unsetenv(cli::kSeedEnv);
}

TEST_CASE("gradcheck gates on the audit") {
  const auto r = run({"gradcheck", "--probes", "20"});
  CHECK(r.code == 0);
  CHECK(r.out.find("gradient audit passed") != std::string::npos);
  for (const char* term : {"teacher det", "camera det", "student imd", "student cmd", "student mmdf",
                           "student mmdp", "student total"})
    CHECK_MESSAGE(r.out.find(term) != std::string::npos, term);
}

TEST_CASE("export-figs writes the named images") {
  auto& w = ws();
  const auto student = w.root / "figs_student";
  REQUIRE(run({"distill", "--config", w.config.string(), "--teacher", w.teacher.string(), "--data",
               w.data.string(), "--out", student.string()})
              .code == 0);
  const auto scene_file = w.data / "scene_000004.bsd";
  const auto out = w.root / "figs";
  REQUIRE(run({"export-figs", "--ckpt", student.string(), "--scene", scene_file.string(), "--out", out.string()})
              .code == 0);
  for (const char* f : {"bev_cam.pgm", "bev_simlidar.pgm", "bev_fused.pgm", "mask.pgm", "dets.ppm", "legend.txt"})
    CHECK_MESSAGE(fs::exists(out / f), f);

  // mask.pgm pixels are round(255 M) of the scene's object-aware mask.
  const auto s = scene::read_scene(scene_file);
  const auto grid = detnet::load_checkpoint(student)->config().grid;
  const auto m = distill::object_mask(s.boxes, grid).mask;
  const std::string pgm = slurp(out / "mask.pgm");
  const std::string header = fmt::format("P5\n{} {}\n255\n", grid.nx, grid.ny);
  REQUIRE(pgm.rfind(header, 0) == 0);
  REQUIRE(pgm.size() == header.size() + static_cast<size_t>(m.numel()));
  for (int64_t i = 0; i < m.numel(); ++i)
    CHECK(static_cast<unsigned char>(pgm[header.size() + static_cast<size_t>(i)]) ==
          static_cast<int>(std::lround(255.0 * m[i])));

  const auto again = w.root / "figs_again";
  REQUIRE(run({"replay", (out / cli::kLockFile).string(), "--out", again.string()}).code == 0);
  for (const char* f : {"bev_cam.pgm", "bev_simlidar.pgm", "bev_fused.pgm", "mask.pgm", "dets.ppm", "legend.txt"})
    CHECK_MESSAGE(slurp(out / f) == slurp(again / f), f);
}

TEST_CASE("an all-zero feature map is drawn uniform mid-gray") {
  const auto dir = ws().root / "zero";
  fs::create_directories(dir);
  const ad::Tensor z({3, 4, 5}, std::vector<double>(60, 0.0));
  const std::string legend = figures::write_feature_map(z, dir / "z.pgm");
  CHECK(legend.find("constant") != std::string::npos);
  const std::string pgm = slurp(dir / "z.pgm");
  const std::string header = "P5\n5 4\n255\n";
  REQUIRE(pgm.size() == header.size() + 20);
  for (size_t i = header.size(); i < pgm.size(); ++i) CHECK(static_cast<unsigned char>(pgm[i]) == 128);

  const ad::Tensor ramp({2, 1, 3}, {0.0, 1.0, 2.0, 0.0, 1.0, 2.0});
  figures::write_feature_map(ramp, dir / "r.pgm");
  const std::string r = slurp(dir / "r.pgm");
  CHECK(static_cast<unsigned char>(r[r.size() - 3]) == 0);
  CHECK(static_cast<unsigned char>(r[r.size() - 2]) == 128);
  CHECK(static_cast<unsigned char>(r[r.size() - 1]) == 255);
}

TEST_CASE("ablate writes one row per configuration") {
  auto& w = ws();
  const auto out = w.root / "ablation";
  const auto r = run({"ablate", "--config", w.config.string(), "--data", w.data.string(), "--out", out.string()});
  REQUIRE(r.code == 0);
  const std::string csv = slurp(out / "ablation.csv");
  int rows = 0;
  std::istringstream is(csv);
  std::string line;
  std::getline(is, line);
  CHECK(line == "row,label,model,imd,cmd,mmdf,mmdp,gcm,oam,seed,mAP");
  while (std::getline(is, line)) rows += line.rfind("teacher", 0) == 0 ? 0 : 1;
  CHECK(rows == 10);
  CHECK(slurp(out / "ablation.txt").find("Improvement") != std::string::npos);
  CHECK(fs::exists(out / "reports" / "row_m_seed_1.json"));
}

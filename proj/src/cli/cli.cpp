// Copyright 2026 The bevsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "bevsim/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "bevsim/figures.hpp"
#include "bevsim/harness.hpp"

namespace bevsim::cli {

namespace fs = std::filesystem;
using harness::RunConfig;

namespace {

json read_json_file(const fs::path& path) {
  std::ifstream is(path);
  require(is.good(), "cannot read {}", path.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    fail("{}: invalid JSON: {}", path.string(), e.what());
  }
}

void write_json_file(const json& j, const fs::path& path) {
  std::ofstream os(path);
  require(os.good(), "cannot write {}", path.string());
  os << j.dump(2) << "\n";
}

std::string absolute(const std::string& p) { return fs::absolute(fs::path(p)).lexically_normal().string(); }

std::optional<uint64_t> parse_seed(const std::string& text, const char* origin) {
  try {
    size_t used = 0;
    const unsigned long long v = std::stoull(text, &used);
    require(used == text.size(), "");
    return static_cast<uint64_t>(v);
  } catch (...) {
    fail("{}: '{}' is not a non-negative integer seed", origin, text);
  }
}

// Options shared by every command. Replays ignore the environment so that
// the lock file alone decides the run.
struct Common {
  std::string config;
  std::optional<uint64_t> seed;
  std::optional<int> workers;
  bool ignore_env = false;
  json preloaded;  // config handed over by a replay
};

// Precedence for the seed: flag > BEVSIM_SEED > config > 42.
RunConfig load_config(const Common& c, const std::function<uint64_t&(RunConfig&)>& seed_field) {
  json j = json::object();
  if (!c.preloaded.is_null())
    j = c.preloaded;
  else if (!c.config.empty())
    j = read_json_file(c.config);
  require(j.is_object(), "config must be a JSON object");
  j.erase("invocation");  // lock files carry the command line next to the config
  RunConfig cfg = harness::run_config_from_json(j);
  if (seed_field) {
    if (c.seed) {
      seed_field(cfg) = *c.seed;
    } else if (const char* env = std::getenv(kSeedEnv); env && !c.ignore_env) {
      seed_field(cfg) = *parse_seed(env, kSeedEnv);
    }
  }
  if (c.workers) {
    require(*c.workers >= 1, "--workers must be >= 1");
    cfg.train.workers = *c.workers;
  }
  return cfg;
}

void write_lock(const RunConfig& cfg, const std::string& command, const json& args, const fs::path& dir) {
  fs::create_directories(dir);
  json lock = harness::to_json(cfg);
  lock["invocation"] = {{"command", command}, {"args", args}};
  write_json_file(lock, dir / kLockFile);
}

harness::Dataset load_data(const std::string& dir) {
  auto d = harness::load_dataset(dir);
  require(!d.scenes.empty(), "{}: dataset has no scenes", dir);
  return d;
}

std::vector<scene::Scene> split(const harness::Dataset& d, const std::string& which) {
  if (which == "train") return d.train();
  if (which == "val") return d.val();
  if (which == "all") return d.scenes;
  fail("unknown split '{}' (train, val or all)", which);
}

void print_report(std::ostream& out, const harness::EvalReport& r) {
  out << fmt::format("toy-mAP {:.4f} over {} scenes\n", r.map, r.n_scenes);
  for (int c = 0; c < r.n_classes; ++c) {
    const auto k = static_cast<size_t>(c);
    out << fmt::format("  class {}: AP {:.4f} ({} ground truths)\n", c, r.class_ap[k], r.class_gt[k]);
  }
}

uint64_t& train_seed(RunConfig& c) { return c.train.seed; }
uint64_t& data_seed(RunConfig& c) { return c.data.seed; }

// ------------------------------------------------------------------ commands

int cmd_gen(const Common& com, const std::string& out_dir, std::ostream& out) {
  const RunConfig cfg = load_config(com, data_seed);
  const auto scenes = harness::generate_scenes(cfg.data, cfg.train.workers);
  scene::DatasetInfo info;
  info.config = {{"scene", scene::to_json(cfg.data.scene)}, {"lidar", scene::to_json(cfg.data.lidar)}};
  info.seed = cfg.data.seed;
  info.n_scenes = scenes.size();
  info.n_train = static_cast<size_t>(cfg.data.n_train);
  scene::write_dataset(scenes, out_dir, info);
  write_lock(cfg, "gen", {{"out", absolute(out_dir)}}, out_dir);
  size_t boxes = 0, points = 0;
  for (const auto& s : scenes) {
    boxes += s.boxes.size();
    points += s.points.size();
  }
  out << fmt::format("wrote {} scenes ({} train, {} val) to {}\n", scenes.size(), info.n_train,
                     scenes.size() - info.n_train, out_dir);
  out << fmt::format("seed {}, {} classes, {} views of {}x{}, mean {:.2f} boxes and {:.0f} points per scene\n",
                     info.seed, cfg.data.scene.n_classes, scenes.front().rig.views.size(),
                     cfg.data.scene.image_width, cfg.data.scene.image_height,
                     static_cast<double>(boxes) / static_cast<double>(scenes.size()),
                     static_cast<double>(points) / static_cast<double>(scenes.size()));
  return 0;
}

void save_run(const harness::TrainResult& r, const fs::path& dir) {
  detnet::save_checkpoint(*r.model, dir);
  harness::write_loss_csv(r.log, dir / "loss_curves.csv");
}

double final_total(const harness::TrainResult& r) {
  for (auto it = r.log.rbegin(); it != r.log.rend(); ++it)
    if (it->term == "total") return it->value;
  return 0.0;
}

int cmd_train(const Common& com, const std::string& data, const std::string& out_dir, bool camera_only,
              std::ostream& out) {
  const RunConfig cfg = load_config(com, train_seed);
  const auto d = load_data(data);
  const auto kind = camera_only ? detnet::ModelKind::camera : detnet::ModelKind::teacher;
  write_lock(cfg, "train-teacher",
             {{"data", absolute(data)}, {"out", absolute(out_dir)}, {"camera_only", camera_only}}, out_dir);
  const auto r = harness::train_detector(kind, d.train(), cfg);
  save_run(r, out_dir);
  out << fmt::format("trained {} model: {} steps, final loss {:.4f}, saved to {}\n", detnet::to_string(kind), r.steps,
                     final_total(r), out_dir);
  return 0;
}

int cmd_distill(const Common& com, const std::string& teacher_dir, const std::string& data,
                const std::string& out_dir, const std::optional<std::string>& losses, bool no_gcm, bool no_oam,
                std::ostream& out) {
  RunConfig cfg = load_config(com, train_seed);
  if (losses) {
    auto& dc = cfg.distill;
    dc.imd = dc.cmd = dc.mmdf = dc.mmdp = false;
    std::stringstream ss(*losses);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item == "imd") dc.imd = true;
      else if (item == "cmd") dc.cmd = true;
      else if (item == "mmdf") dc.mmdf = true;
      else if (item == "mmdp") dc.mmdp = true;
      else if (item != "none") fail("--loss: unknown loss '{}' (imd, cmd, mmdf, mmdp or none)", item);
    }
  }
  if (no_gcm) cfg.distill.gcm = false;
  if (no_oam) cfg.distill.oam = false;
  const auto teacher = detnet::load_checkpoint(teacher_dir);
  require(teacher->kind() == detnet::ModelKind::teacher, "{} holds a {} model, not a teacher", teacher_dir,
          detnet::to_string(teacher->kind()));
  const auto d = load_data(data);
  write_lock(cfg, "distill", {{"teacher", absolute(teacher_dir)}, {"data", absolute(data)}, {"out", absolute(out_dir)}},
             out_dir);
  const auto r = harness::distill_student(*teacher, d.train(), cfg);
  save_run(r, out_dir);
  out << fmt::format("distilled student ({}): {} steps, final loss {:.4f}, saved to {}\n", cfg.distill.describe(),
                     r.steps, final_total(r), out_dir);
  return 0;
}

int cmd_eval(const Common& com, const std::string& ckpt, const std::string& data, std::string out_dir,
             const std::string& which, std::ostream& out) {
  const RunConfig cfg = load_config(com, {});
  if (out_dir.empty()) out_dir = (fs::path(ckpt) / "eval").string();
  const auto model = detnet::load_checkpoint(ckpt);
  const auto d = load_data(data);
  const auto scenes = split(d, which);
  require(!scenes.empty(), "split '{}' of {} is empty", which, data);
  write_lock(cfg, "eval",
             {{"ckpt", absolute(ckpt)}, {"data", absolute(data)}, {"out", absolute(out_dir)}, {"split", which}},
             out_dir);
  const auto r = harness::evaluate(*model, scenes, cfg.eval, cfg.train.workers);
  write_json_file(harness::to_json(r), fs::path(out_dir) / "eval_report.json");
  write_json_file({{"wall_seconds", r.wall_seconds}, {"workers", cfg.train.workers}},
                  fs::path(out_dir) / "timing.json");
  print_report(out, r);
  return 0;
}

int cmd_ablate(const Common& com, const std::string& data, const std::string& out_dir,
               const std::optional<std::vector<uint64_t>>& seeds, std::ostream& out) {
  RunConfig cfg = load_config(com, {});
  if (seeds) cfg.train.seeds = *seeds;
  require(!cfg.train.seeds.empty(), "ablation needs at least one seed");
  const auto d = load_data(data);
  write_lock(cfg, "ablate", {{"data", absolute(data)}, {"out", absolute(out_dir)}}, out_dir);
  const auto r = harness::ablate(d.train(), d.val(), cfg, [&](const std::string& s) { out << s << std::endl; });
  fs::create_directories(fs::path(out_dir) / "reports");
  for (size_t i = 0; i < r.rows.size(); ++i)
    for (size_t s = 0; s < r.seeds.size(); ++s)
      write_json_file(harness::to_json(r.reports[i][s]),
                      fs::path(out_dir) / "reports" / fmt::format("row_{}_seed_{}.json", r.rows[i].id, r.seeds[s]));
  for (size_t s = 0; s < r.teacher.size(); ++s)
    write_json_file(harness::to_json(r.teacher[s]),
                    fs::path(out_dir) / "reports" / fmt::format("teacher_seed_{}.json", r.seeds[s]));
  harness::write_ablation_csv(r, fs::path(out_dir) / "ablation.csv");
  const std::string table = harness::format_ablation_table(r);
  std::ofstream(fs::path(out_dir) / "ablation.txt") << table;
  out << table;
  return 0;
}

int cmd_gradcheck(const Common& com, const std::string& what, int probes, const std::string& out_dir,
                  std::ostream& out) {
  const RunConfig cfg = load_config(com, train_seed);
  const auto r = harness::grad_audit(what, probes, cfg.train.seed);
  if (!out_dir.empty()) {
    write_lock(cfg, "gradcheck", {{"model", what}, {"probes", probes}, {"out", absolute(out_dir)}}, out_dir);
    write_json_file(harness::to_json(r), fs::path(out_dir) / "grad_audit.json");
  }
  std::map<std::string, std::pair<int, double>> terms;  // probes, worst relative error
  std::vector<std::string> order;
  int failed = 0;
  for (const auto& e : r.entries) {
    const std::string key = e.model + " " + e.term;
    if (!terms.count(key)) order.push_back(key);
    auto& t = terms[key];
    ++t.first;
    t.second = std::max(t.second, e.rel_err);
    if (!e.pass) {
      ++failed;
      out << fmt::format("FAIL {} {} {}[{}]: analytic {:.6e}, numeric {:.6e}, rel err {:.3e}\n", e.model, e.term,
                         e.param, e.index, e.analytic, e.numeric, e.rel_err);
    }
  }
  for (const auto& k : order)
    out << fmt::format("{:<16} {:>3} probes, max rel err {:.3e}\n", k, terms[k].first, terms[k].second);
  out << fmt::format("gradient audit {}: {} probes, {} failed, eps {}, tolerance {} ({:.2f} s)\n",
                     r.pass ? "passed" : "FAILED", r.entries.size(), failed, harness::kAuditEps, harness::kAuditTol,
                     r.seconds);
  return r.pass ? 0 : 1;
}

int cmd_export(const Common& com, const std::string& ckpt, const std::string& scene_path, const std::string& out_dir,
               std::ostream& out) {
  const RunConfig cfg = load_config(com, {});
  const auto model = detnet::load_checkpoint(ckpt);
  const auto s = scene::read_scene(scene_path);
  write_lock(cfg, "export-figs", {{"ckpt", absolute(ckpt)}, {"scene", absolute(scene_path)}, {"out", absolute(out_dir)}},
             out_dir);
  const auto files = figures::export_figures(*model, s, out_dir, cfg.eval.score_thresh, cfg.eval.topk);
  for (const auto& f : files) out << (fs::path(out_dir) / f).string() << "\n";
  return 0;
}

// ------------------------------------------------------------------ parser

void add_common(CLI::App* app, Common& c, bool with_seed) {
  app->add_option("--config", c.config, "JSON run configuration (a config.lock.json also works)")
      ->check(CLI::ExistingFile);
  if (with_seed)
    app->add_option("--seed", c.seed,
                    fmt::format("seed override; precedence: flag > {} > config > 42", kSeedEnv));
  app->add_option("--workers", c.workers, "parallel scene workers");
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, const json* replay);

int cmd_replay(const std::string& lock_path, const std::string& out_override, std::ostream& out, std::ostream& err) {
  json lock = read_json_file(lock_path);
  require(lock.contains("invocation"), "{} has no invocation record", lock_path);
  const json inv = lock.at("invocation");
  const std::string command = inv.at("command").get<std::string>();
  std::vector<std::string> args{command};
  for (const auto& [key, value] : inv.at("args").items()) {
    std::string v = value.is_string() ? value.get<std::string>() : value.dump();
    if (key == "out" && !out_override.empty()) v = absolute(out_override);
    if (key == "camera_only") {
      if (value.get<bool>()) args.push_back("--camera-only");
      continue;
    }
    args.push_back("--" + key);
    args.push_back(v);
  }
  lock.erase("invocation");
  return dispatch(args, out, err, &lock);
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, const json* replay) {
  CLI::App app{"bevsim: synthetic BEV detection with simulated-LiDAR distillation"};
  app.name("bevsim");
  app.require_subcommand(1);
  Common com;
  if (replay) {
    com.preloaded = *replay;
    com.ignore_env = true;
  }
  std::string out_dir, data, ckpt, teacher, scene_path, which = "val", model = "all", lock;
  std::optional<std::string> losses;
  std::optional<std::vector<uint64_t>> seeds;
  bool camera_only = false, no_gcm = false, no_oam = false;
  int probes = 20;

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  add_common(gen, com, true);
  gen->add_option("--out", out_dir, "output dataset directory")->required();

  auto* tt = app.add_subcommand("train-teacher", "train the LiDAR-camera teacher (or a camera-only model)");
  add_common(tt, com, true);
  tt->add_option("--data", data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  tt->add_option("--out", out_dir, "checkpoint directory")->required();
  tt->add_flag("--camera-only", camera_only, "train the camera-only model instead");

  auto* ds = app.add_subcommand("distill", "distil a frozen teacher into an image-only student");
  add_common(ds, com, true);
  ds->add_option("--teacher", teacher, "teacher checkpoint directory")->required()->check(CLI::ExistingDirectory);
  ds->add_option("--data", data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  ds->add_option("--out", out_dir, "student checkpoint directory")->required();
  ds->add_option("--loss", losses, "comma-separated losses to enable: imd,cmd,mmdf,mmdp (or none)");
  ds->add_flag("--no-gcm", no_gcm, "build the simulated branch without GCM layers");
  ds->add_flag("--no-oam", no_oam, "distil CMD over the whole map instead of the object-aware mask");

  auto* ev = app.add_subcommand("eval", "toy-mAP of a checkpoint");
  add_common(ev, com, false);
  ev->add_option("--ckpt", ckpt, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--data", data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--out", out_dir, "report directory (default: CKPT/eval)");
  ev->add_option("--split", which, "val, train or all")->check(CLI::IsMember({"val", "train", "all"}));

  auto* ab = app.add_subcommand("ablate", "train and evaluate every ablation row for each seed");
  add_common(ab, com, false);
  ab->add_option("--data", data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  ab->add_option("--out", out_dir, "output directory")->required();
  ab->add_option("--seeds", seeds, "training seeds (default: train.seeds)")->delimiter(',');

  auto* gc = app.add_subcommand("gradcheck", "finite-difference audit of every loss term on micro models");
  add_common(gc, com, true);
  gc->add_option("--model", model, "teacher, camera, student or all")
      ->check(CLI::IsMember({"teacher", "camera", "student", "all"}));
  gc->add_option("--probes", probes, "probes per loss term")->check(CLI::PositiveNumber);
  gc->add_option("--out", out_dir, "write grad_audit.json and the lock file here");

  auto* ex = app.add_subcommand("export-figs", "BEV feature maps, mask and detections as images");
  add_common(ex, com, false);
  ex->add_option("--ckpt", ckpt, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
  ex->add_option("--scene", scene_path, "scene file (.bsd)")->required()->check(CLI::ExistingFile);
  ex->add_option("--out", out_dir, "figure directory")->required();

  auto* rp = app.add_subcommand("replay", "rerun a command from its config.lock.json");
  rp->add_option("lock", lock, "config.lock.json")->required()->check(CLI::ExistingFile);
  rp->add_option("--out", out_dir, "write to this directory instead of the recorded one");

  std::vector<const char*> argv{"bevsim"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*gen) return cmd_gen(com, out_dir, out);
    if (*tt) return cmd_train(com, data, out_dir, camera_only, out);
    if (*ds) return cmd_distill(com, teacher, data, out_dir, losses, no_gcm, no_oam, out);
    if (*ev) return cmd_eval(com, ckpt, data, out_dir, which, out);
    if (*ab) return cmd_ablate(com, data, out_dir, seeds, out);
    if (*gc) return cmd_gradcheck(com, model, probes, out_dir, out);
    if (*ex) return cmd_export(com, ckpt, scene_path, out_dir, out);
    if (*rp) {
      require(!replay, "a lock file cannot replay another replay");
      return cmd_replay(lock, out_dir, out, err);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  return dispatch(args, out, err, nullptr);
}

}  // namespace bevsim::cli

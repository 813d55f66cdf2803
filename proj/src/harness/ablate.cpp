// Copyright 2026 The bevsim Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <fstream>

#include <fmt/format.h>

#include "bevsim/harness.hpp"

namespace bevsim::harness {

std::vector<AblationRow> ablation_rows(const DistillConfig& base) {
  auto make = [&](const char* id, const char* label, ModelKind kind, bool imd, bool cmd, bool mmdf, bool mmdp,
                  bool gcm, bool oam) {
    AblationRow r;
    r.id = id;
    r.label = label;
    r.kind = kind;
    r.distill = base;
    r.distill.imd = imd;
    r.distill.cmd = cmd;
    r.distill.mmdf = mmdf;
    r.distill.mmdp = mmdp;
    r.distill.gcm = gcm;
    r.distill.oam = oam;
    return r;
  };
  const auto cam = ModelKind::camera;
  const auto stu = ModelKind::student;
  //          id   label                         kind imd    cmd    mmdf   mmdp   gcm    oam
  return {make("a", "camera-only baseline", cam, false, false, false, false, false, false),
          make("b", "simulated-LiDAR student", stu, false, false, false, false, false, false),
          make("c", "CMD without GCM and OAM", stu, false, true, false, false, false, false),
          make("d", "CMD without OAM", stu, false, true, false, false, true, false),
          make("e", "CMD without GCM", stu, false, true, false, false, false, true),
          make("f", "CMD", stu, false, true, false, false, true, true),
          make("g", "IMD", stu, true, false, false, false, false, false),
          make("h", "MMD-F only", stu, false, false, true, false, false, false),
          make("i", "MMD-P only", stu, false, false, false, true, false, false),
          make("m", "all losses", stu, true, true, true, true, true, true)};
}

AblationResult ablate(const std::vector<Scene>& train, const std::vector<Scene>& val, const RunConfig& cfg,
                      const ProgressFn& progress) {
  AblationResult out;
  out.rows = ablation_rows(cfg.distill);
  out.seeds = cfg.train.seeds;
  out.reports.assign(out.rows.size(), {});
  auto say = [&](const std::string& s) {
    if (progress) progress(s);
  };
  for (uint64_t seed : out.seeds) {
    RunConfig c = cfg;
    c.train.seed = seed;
    say(fmt::format("seed {}: teacher", seed));
    const auto teacher = train_detector(ModelKind::teacher, train, c);
    out.teacher.push_back(evaluate(*teacher.model, val, c.eval, c.train.workers));
    for (size_t r = 0; r < out.rows.size(); ++r) {
      const auto& row = out.rows[r];
      say(fmt::format("seed {}: row ({}) {}", seed, row.id, row.label));
      c.distill = row.distill;
      const auto trained = row.kind == ModelKind::student ? distill_student(*teacher.model, train, c)
                                                          : train_detector(row.kind, train, c);
      out.reports[r].push_back(evaluate(*trained.model, val, c.eval, c.train.workers));
    }
  }
  return out;
}

namespace {

struct Summary {
  double mean = 0.0, min = 0.0, max = 0.0;
};

Summary summarize(const std::vector<EvalReport>& reports) {
  Summary s;
  if (reports.empty()) return s;
  s.min = s.max = reports.front().map;
  for (const auto& r : reports) {
    s.mean += r.map;
    s.min = std::min(s.min, r.map);
    s.max = std::max(s.max, r.map);
  }
  s.mean /= static_cast<double>(reports.size());
  return s;
}

size_t baseline_row(const AblationResult& r) {
  for (size_t i = 0; i < r.rows.size(); ++i)
    if (r.rows[i].id == "b") return i;
  fail("ablation has no row (b)");
}

}  // namespace

void write_ablation_csv(const AblationResult& r, const std::filesystem::path& path) {
  std::ofstream os(path);
  require(os.good(), "cannot write {}", path.string());
  os << "row,label,model,imd,cmd,mmdf,mmdp,gcm,oam,seed,mAP\n";
  for (size_t i = 0; i < r.rows.size(); ++i) {
    const auto& row = r.rows[i];
    const auto& d = row.distill;
    for (size_t s = 0; s < r.reports[i].size(); ++s)
      os << fmt::format("{},{},{},{:d},{:d},{:d},{:d},{:d},{:d},{},{:.17g}\n", row.id, row.label,
                        detnet::to_string(row.kind), d.imd, d.cmd, d.mmdf, d.mmdp, d.gcm, d.oam, r.seeds[s],
                        r.reports[i][s].map);
  }
  for (size_t s = 0; s < r.teacher.size(); ++s)
    os << fmt::format("teacher,LiDAR-camera teacher,teacher,0,0,0,0,0,0,{},{:.17g}\n", r.seeds[s], r.teacher[s].map);
}

std::string format_ablation_table(const AblationResult& r) {
  const Summary base = summarize(r.reports[baseline_row(r)]);
  std::string out = fmt::format("{:<4} {:<28} {:>5} {:>5} {:>5} {:>5} {:>5} {:>5}  {:>8} {:>17}  {:>11}\n", "row",
                                "configuration", "IMD", "CMD", "MMD-F", "MMD-P", "GCM", "OAM", "mAP", "[min, max]",
                                "Improvement");
  auto mark = [](bool b) { return b ? "x" : ""; };
  for (size_t i = 0; i < r.rows.size(); ++i) {
    const auto& row = r.rows[i];
    const auto& d = row.distill;
    const Summary s = summarize(r.reports[i]);
    const std::string imp = row.id == "b" ? "-" : fmt::format("{:+.4f}", s.mean - base.mean);
    out += fmt::format("({}) {:<28} {:>5} {:>5} {:>5} {:>5} {:>5} {:>5}  {:>8.4f} [{:.4f}, {:.4f}]  {:>11}\n", row.id,
                       row.label, mark(d.imd), mark(d.cmd), mark(d.mmdf), mark(d.mmdp), mark(d.gcm), mark(d.oam),
                       s.mean, s.min, s.max, imp);
  }
  if (!r.teacher.empty()) {
    const Summary t = summarize(r.teacher);
    out += fmt::format("teacher {:<64}  {:>8.4f} [{:.4f}, {:.4f}]\n", "(LiDAR + camera)", t.mean, t.min, t.max);
  }
  out += fmt::format("mAP is the mean over {} seed(s); Improvement is relative to row (b).\n", r.seeds.size());
  return out;
}

}  // namespace bevsim::harness

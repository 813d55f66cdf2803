// Copyright 2026 The bevsim Authors
// SPDX-License-Identifier: Apache-2.0

// Python bindings: configuration, scene generation, checkpoints, toy-mAP,
// the gradient audit and the command line.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "bevsim/cli.hpp"
#include "bevsim/harness.hpp"

namespace py = pybind11;
using namespace bevsim;

namespace {

py::array_t<double> to_numpy(const ad::Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> a(shape);
  std::copy(t.data().begin(), t.data().end(), a.mutable_data());
  return a;
}

py::dict box_dict(const scene::Box3D& b) {
  py::dict d;
  d["center"] = py::make_tuple(b.center[0], b.center[1], b.center[2]);
  d["size"] = py::make_tuple(b.length, b.width, b.height);
  d["yaw"] = b.yaw;
  d["class_id"] = b.class_id;
  return d;
}

py::dict scene_dict(const scene::Scene& s) {
  py::dict d;
  d["seed"] = s.seed;
  py::list boxes, images;
  for (const auto& b : s.boxes) boxes.append(box_dict(b));
  for (const auto& im : s.images) images.append(to_numpy(im));
  py::array_t<double> pts(std::vector<py::ssize_t>{static_cast<py::ssize_t>(s.points.size()), 4});
  auto* p = pts.mutable_data();
  for (const auto& q : s.points) {
    *p++ = q.x;
    *p++ = q.y;
    *p++ = q.z;
    *p++ = q.intensity;
  }
  d["boxes"] = boxes;
  d["images"] = images;
  d["points"] = pts;
  return d;
}

class Model {
 public:
  explicit Model(const std::string& path) : model_(detnet::load_checkpoint(path)) {}

  std::string kind() const { return detnet::to_string(model_->kind()); }
  int64_t n_params() const { return nn::param_count(model_->params()); }
  std::vector<std::string> param_names() const {
    std::vector<std::string> out;
    for (const auto& p : model_->params()) out.push_back(p.name);
    return out;
  }

  py::list detect(const std::string& scene_file, double score_thresh, int topk) const {
    const auto s = scene::read_scene(scene_file);
    std::vector<Detection> dets;
    {
      py::gil_scoped_release release;
      ad::NoGradGuard no_grad;
      const auto out = model_->run(detnet::make_input(s, model_->config().grid));
      dets = detnet::decode(out.head, model_->config().grid, score_thresh, topk);
    }
    py::list l;
    for (const auto& d : dets) {
      py::dict x = box_dict(d.box);
      x["confidence"] = d.confidence;
      l.append(x);
    }
    return l;
  }

 private:
  std::unique_ptr<detnet::Detector> model_;
};

}  // namespace

PYBIND11_MODULE(_bevsim, m) {
  m.doc() = "bevsim native module";

  py::register_exception<Error>(m, "BevsimError", PyExc_ValueError);

  m.def("default_config", [] { return harness::to_json(harness::RunConfig{}).dump(); },
        "Default run configuration as a JSON string.");

  m.def("validate_config", [](const std::string& text) {
    return harness::to_json(harness::run_config_from_json(json::parse(text))).dump();
  });

  m.def(
      "generate_scene",
      [](uint64_t seed, uint64_t index, const std::string& config) {
        const auto cfg = harness::run_config_from_json(json::parse(config));
        const auto rig = scene::default_rig(cfg.data.scene.image_height, cfg.data.scene.image_width);
        scene::Scene s;
        {
          py::gil_scoped_release release;
          s = scene::generate_scene(seed, index, cfg.data.scene, cfg.data.lidar, rig);
        }
        return scene_dict(s);
      },
      py::arg("seed"), py::arg("index") = 0, py::arg("config") = "{}");

  m.def(
      "toy_map",
      [](const std::vector<std::vector<std::tuple<int, double, double, double>>>& detections,
         const std::vector<std::vector<std::tuple<int, double, double>>>& ground_truth, int n_classes,
         const std::vector<double>& thresholds) {
        std::vector<std::vector<Detection>> dets(detections.size());
        std::vector<std::vector<scene::Box3D>> gt(ground_truth.size());
        for (size_t s = 0; s < detections.size(); ++s)
          for (const auto& [c, conf, x, y] : detections[s]) {
            Detection d;
            d.class_id = c;
            d.confidence = conf;
            d.box.center = {x, y, 0.0};
            dets[s].push_back(d);
          }
        for (size_t s = 0; s < ground_truth.size(); ++s)
          for (const auto& [c, x, y] : ground_truth[s]) {
            scene::Box3D b;
            b.class_id = c;
            b.center = {x, y, 0.0};
            gt[s].push_back(b);
          }
        return harness::to_json(harness::evaluate_detections(dets, gt, n_classes, thresholds)).dump();
      },
      py::arg("detections"), py::arg("ground_truth"), py::arg("n_classes"),
      py::arg("thresholds") = std::vector<double>{0.5, 1.0, 2.0, 4.0});

  m.def(
      "grad_audit",
      [](const std::string& what, int probes, uint64_t seed) {
        harness::AuditReport r;
        {
          py::gil_scoped_release release;
          r = harness::grad_audit(what, probes, seed);
        }
        return harness::to_json(r).dump();
      },
      py::arg("model") = "all", py::arg("probes") = 20, py::arg("seed") = 1);

  m.def("run_cli", [](const std::vector<std::string>& args) {
    std::ostringstream out, err;
    int code;
    {
      py::gil_scoped_release release;
      code = cli::run(args, out, err);
    }
    return py::make_tuple(code, out.str(), err.str());
  });

  py::class_<Model>(m, "Model")
      .def(py::init<const std::string&>(), py::arg("path"))
      .def_property_readonly("kind", &Model::kind)
      .def_property_readonly("n_params", &Model::n_params)
      .def("param_names", &Model::param_names)
      .def("detect", &Model::detect, py::arg("scene_file"), py::arg("score_thresh") = 0.05, py::arg("topk") = 50);
}

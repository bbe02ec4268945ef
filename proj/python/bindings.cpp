#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "bodyfit/errors.hpp"
#include "bodyfit/io.hpp"
#include "bodyfit/pipeline.hpp"
#include "bodyfit/robust_optim.hpp"
#include "bodyfit/silhouette.hpp"

namespace py = pybind11;
using namespace bodyfit;

namespace {

using Mask = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

SilhouetteMask to_mask(const Mask& a) {
  if (a.ndim() != 2) throw DimensionError("mask must be a 2-D array");
  SilhouetteMask m = SilhouetteMask::empty(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
  const std::uint8_t* p = a.data();
  for (size_t i = 0; i < m.bits.size(); ++i) m.bits[i] = p[i] ? 1 : 0;
  return m;
}

Mask from_mask(const SilhouetteMask& m) {
  Mask a({m.height, m.width});
  std::copy(m.bits.begin(), m.bits.end(), a.mutable_data());
  return a;
}

PoseParams to_pose(const BodyModel& model, const std::optional<Eigen::MatrixXd>& theta) {
  PoseParams p = PoseParams::zeros(model.num_joints());
  if (!theta) return p;
  if (theta->rows() != model.num_joints() || theta->cols() != 3)
    throw DimensionError("theta must be K x 3 with K = " + std::to_string(model.num_joints()));
  p.theta = *theta;
  return p;
}

ShapeParams to_shape(const BodyModel& model, const std::optional<Eigen::VectorXd>& beta) {
  if (!beta) return ShapeParams::zeros(model.num_shape());
  if (beta->size() != model.num_shape())
    throw DimensionError("beta must have " + std::to_string(model.num_shape()) + " entries");
  return ShapeParams{*beta};
}

py::list schedule_to_list(const StageSchedule& s) {
  py::list out;
  for (const auto& st : s.stages) {
    py::dict d;
    d["weights"] = st.weights;
    d["sigma"] = st.sigma;
    d["max_iterations"] = st.max_iterations;
    d["relative_tolerance"] = st.relative_tolerance;
    out.append(d);
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multi-view body shape fitting";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<FitError>(m, "FitError", base.ptr());
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);

  py::class_<BodyModel>(m, "BodyModel")
      .def_property_readonly("num_vertices", &BodyModel::num_vertices)
      .def_property_readonly("num_joints", &BodyModel::num_joints)
      .def_property_readonly("num_shape", &BodyModel::num_shape)
      .def_readonly("template_vertices", &BodyModel::template_vertices)
      .def_readonly("faces", &BodyModel::faces)
      .def_readonly("skin_weights", &BodyModel::skin_weights)
      .def_readonly("parent", &BodyModel::parent)
      .def_readonly("joint_names", &BodyModel::joint_names)
      .def("audit", &audit_model)
      .def("save", &save_model_file, py::arg("path"));

  m.def("load_model", &load_model_file, py::arg("path"));
  m.def("make_toy_model", &make_toy_model, py::arg("seed") = 0, py::arg("num_vertices") = 2500,
        py::arg("num_joints") = 24, py::arg("num_shape") = 10);

  m.def(
      "skin",
      [](const BodyModel& model, std::optional<Eigen::MatrixXd> theta, std::optional<Eigen::VectorXd> beta,
         std::optional<Points3> d) {
        VertexOffsets off = VertexOffsets::zeros(model.num_vertices());
        if (d) {
          if (d->rows() != model.num_vertices()) throw DimensionError("d must be V x 3");
          off.d = *d;
        }
        return skin(model, to_pose(model, theta), to_shape(model, beta), off).vertices;
      },
      py::arg("model"), py::arg("theta") = py::none(), py::arg("beta") = py::none(), py::arg("d") = py::none(),
      "Posed vertices (V x 3).");
  m.def(
      "joints_rest",
      [](const BodyModel& model, std::optional<Eigen::VectorXd> beta) {
        return joints_rest(model, to_shape(model, beta));
      },
      py::arg("model"), py::arg("beta") = py::none());

  py::class_<CameraParams>(m, "Camera")
      .def(py::init([](double focal, Vec2 pp, Vec3 r, Vec3 t, int w, int h) {
             CameraParams c{focal, pp, r, t, w, h};
             c.validate();
             return c;
           }),
           py::arg("focal"), py::arg("principal_point"), py::arg("rotation") = Vec3::Zero().eval(),
           py::arg("translation") = Vec3::Zero().eval(), py::arg("width"), py::arg("height"))
      .def_readwrite("focal", &CameraParams::focal)
      .def_readwrite("principal_point", &CameraParams::principal_point)
      .def_readwrite("rotation", &CameraParams::rotation)
      .def_readwrite("translation", &CameraParams::translation)
      .def_readwrite("width", &CameraParams::width)
      .def_readwrite("height", &CameraParams::height);

  m.def("project", &project, py::arg("camera"), py::arg("point"));
  m.def(
      "rasterize",
      [](const Points3& vertices, const Faces& faces, const CameraParams& camera) {
        return from_mask(rasterize_silhouette(Mesh{vertices, faces, {}}, camera).mask);
      },
      py::arg("vertices"), py::arg("faces"), py::arg("camera"), "Binary silhouette (H x W, uint8).");
  m.def(
      "iou", [](const Mask& a, const Mask& b) { return iou(to_mask(a), to_mask(b)); }, py::arg("a"), py::arg("b"));
  m.def(
      "load_mask", [](const std::string& path) { return from_mask(load_mask_file(path)); }, py::arg("path"));

  m.def("geman_mcclure", &geman_mcclure, py::arg("squared_norm"), py::arg("sigma"));
  m.def("default_pose_schedule", [] { return schedule_to_list(default_pose_schedule()); });
  m.def("default_shape_schedule", [] { return schedule_to_list(default_shape_schedule()); });

  m.def(
      "synth_generate",
      [](const BodyModel& model, const std::string& out_dir, int num_subjects, std::uint64_t seed,
         double perturb_beta, int image_size) {
        SynthOptions o;
        o.num_subjects = num_subjects;
        o.seed = seed;
        o.perturb_beta = perturb_beta;
        o.ring.image_size = image_size;
        return synth_generate(model, o, out_dir);
      },
      py::arg("model"), py::arg("out_dir"), py::arg("num_subjects") = 10, py::arg("seed") = 0,
      py::arg("perturb_beta") = 0.0, py::arg("image_size") = 512, "Returns the run config paths.");

  py::class_<RunResult>(m, "FitResult")
      .def_property_readonly("theta", [](const RunResult& r) { return r.pose.theta.theta; })
      .def_property_readonly("beta", [](const RunResult& r) { return r.shape.beta.beta; })
      .def_property_readonly("pose_beta", [](const RunResult& r) { return r.pose.beta.beta; })
      .def_property_readonly("cameras", [](const RunResult& r) { return r.pose.cameras; })
      .def_property_readonly("iou_pose_only", [](const RunResult& r) { return r.report.mean("pose_only"); })
      .def_property_readonly("iou_after_shape", [](const RunResult& r) { return r.report.mean("after_shape"); })
      .def_property_readonly("pose_trace",
                             [](const RunResult& r) {
                               std::vector<std::vector<double>> e;
                               for (const auto& t : r.pose.trace) e.push_back(t.energies);
                               return e;
                             })
      .def_readonly("artifacts", &RunResult::artifacts);

  m.def(
      "run_fit", [](const std::string& config_path) { return run_fit(load_run_config(config_path)); },
      py::arg("config_path"), py::call_guard<py::gil_scoped_release>(),
      "Runs pose then shape fitting for one run config and writes its outputs.");

  m.def("sha256_hex", [](const py::bytes& b) { return sha256_hex(std::string(b)); }, py::arg("data"));
}

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

#include "teleop/calibration.hpp"
#include "teleop/config.hpp"
#include "teleop/error.hpp"
#include "teleop/kinematics.hpp"
#include "teleop/protocol.hpp"
#include "teleop/session.hpp"
#include "teleop/tasks.hpp"

namespace py = pybind11;
using namespace teleop;

namespace {

using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

std::vector<Vec3> rows(const Points& p) {
  std::vector<Vec3> out;
  for (Eigen::Index i = 0; i < p.rows(); ++i) out.emplace_back(p.row(i).transpose());
  return out;
}

Eigen::Vector4d wxyz(const Quat& q) { return {q.w(), q.x(), q.y(), q.z()}; }

nlohmann::json parse(const std::string& text) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::kMalformedJson, e.what());
  }
}

Quat quat(const Eigen::Vector4d& v) { return Quat(v[0], v[1], v[2], v[3]).normalized(); }

py::dict pose_dict(const Pose& p) {
  py::dict d;
  d["position_mm"] = Vec3(p.position);
  d["orientation_wxyz"] = wxyz(p.orientation);
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Camera-arm teleoperation core";

  // raised with args (code, detail)
  static py::exception<Error> error(m, "TeleopError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      PyErr_SetObject(error.ptr(), py::make_tuple(std::string(to_string(e.code())), e.detail()).ptr());
    }
  });

  m.def("home", [] { return TeleopConfig::default_home(); });

  m.def(
      "forward_kinematics",
      [](const JointVector& q) {
        const ArmPoses p = forward_kinematics(ArmModel::kuka_like(), q);
        py::dict d;
        d["tip"] = pose_dict(p.tip);
        d["flange"] = pose_dict(p.flange);
        return d;
      },
      py::arg("q"));

  m.def("jacobian", [](const JointVector& q) -> Eigen::MatrixXd {
    return jacobian(ArmModel::kuka_like(), q);
  }, py::arg("q"));

  m.def("manipulability", [](const JointVector& q) {
    return manipulability(jacobian(ArmModel::kuka_like(), q));
  }, py::arg("q"));

  m.def(
      "inverse_kinematics",
      [](const Vec3& position_mm, const Eigen::Vector4d& orientation_wxyz, const JointVector& seed) {
        const IkResult r =
            inverse_kinematics(ArmModel::kuka_like(), Pose{position_mm, quat(orientation_wxyz)}, seed);
        py::dict d;
        d["q"] = r.q;
        d["iterations"] = r.iterations;
        d["position_error_mm"] = r.position_error_mm;
        d["orientation_error_rad"] = r.orientation_error_rad;
        return d;
      },
      py::arg("position_mm"), py::arg("orientation_wxyz"), py::arg("seed"));

  m.def(
      "register_points",
      [](const Points& src_mm, const Points& dst_mm) {
        const auto src = rows(src_mm), dst = rows(dst_mm);
        const Registration r = register_points(src, dst);
        py::dict d;
        d["rotation_wxyz"] = wxyz(r.transform.rotation);
        d["translation_mm"] = Vec3(r.transform.translation_mm);
        d["residual_rms_mm"] = r.residual_rms_mm;
        d["residual_max_mm"] = r.residual_max_mm;
        return d;
      },
      py::arg("src_mm"), py::arg("dst_mm"));

  // Messages cross the boundary as JSON text; the wrapper converts to dicts.
  m.def("encode", [](const std::string& message_json) {
    return encode(from_json(parse(message_json)));
  }, py::arg("message_json"));
  m.def("decode", [](const std::string& line) { return to_json(decode(line)).dump(); },
        py::arg("line"));

  m.def(
      "rcm_constrain",
      [](const Vec3& trocar_mm, const Vec3& desired_tip_mm) {
        TrocarState t;
        t.trocar_mm = trocar_mm;
        const TrocarState r = rcm_constrain(t, desired_tip_mm);
        py::dict d;
        d["theta_x"] = r.theta_x;
        d["theta_y"] = r.theta_y;
        d["depth_mm"] = r.depth_mm;
        d["direction"] = r.direction();
        d["tip_mm"] = r.tip_mm();
        return d;
      },
      py::arg("trocar_mm"), py::arg("desired_tip_mm"));

  m.def("gen_task", [](int task, std::uint64_t seed) { return serialize_script(gen_task(task, seed)); },
        py::arg("task"), py::arg("seed") = 1);

  m.def(
      "replay",
      [](const std::string& script_json) {
        const TaskScript s = script_from_json(parse(script_json));
        TaskReport r;
        {
          py::gil_scoped_release nogil;
          r = replay(s).report;
        }
        return to_json(r).dump();
      },
      py::arg("script_json"));
}

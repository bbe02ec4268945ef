#include "bodyfit/io.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>
#include <openssl/evp.h>

#include "bodyfit/errors.hpp"

namespace bodyfit {

using nlohmann::json;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw IoError("failed writing '" + path + "'");
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 computation failed");
  }
  std::ostringstream ss;
  for (unsigned int i = 0; i < len; ++i) ss << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return ss.str();
}

namespace {

// Malformed fields surface as ParseError rather than library exceptions.
template <class F>
auto guarded(const char* what, F&& body) {
  try {
    return body();
  } catch (const json::exception& e) {
    throw ParseError(std::string(what) + ": " + e.what());
  }
}

json parse_json(std::string_view text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string(what) + ": " + e.what());
  }
}

template <int N>
Eigen::Matrix<double, N, 1> fixed_vector(const json& j, const char* what) {
  if (!j.is_array() || j.size() != N) {
    throw ParseError(std::string(what) + " must be an array of " + std::to_string(N) + " numbers");
  }
  Eigen::Matrix<double, N, 1> v;
  for (int i = 0; i < N; ++i) {
    if (!j[i].is_number()) throw ParseError(std::string(what) + " must contain numbers");
    v(i) = j[i].get<double>();
  }
  return v;
}

double number(const json& obj, const char* key, const char* what) {
  if (!obj.contains(key) || !obj.at(key).is_number()) {
    throw ParseError(std::string(what) + ": missing numeric field '" + key + "'");
  }
  return obj.at(key).get<double>();
}

json camera_json(const CameraParams& c, bool with_extrinsics) {
  json j = {{"focal", c.focal},
            {"principal_point", {c.principal_point.x(), c.principal_point.y()}},
            {"width", c.width},
            {"height", c.height}};
  if (with_extrinsics) {
    j["rotation"] = {c.rotation.x(), c.rotation.y(), c.rotation.z()};
    j["translation"] = {c.translation.x(), c.translation.y(), c.translation.z()};
  }
  return j;
}

CameraParams camera_from_json(const json& j, bool& extrinsics) {
  if (!j.is_object()) throw ParseError("camera entry must be an object");
  CameraParams c;
  c.focal = number(j, "focal", "camera");
  c.principal_point = fixed_vector<2>(j.at("principal_point"), "camera principal_point");
  c.width = static_cast<int>(number(j, "width", "camera"));
  c.height = static_cast<int>(number(j, "height", "camera"));
  extrinsics = j.contains("rotation") && j.contains("translation");
  if (j.contains("rotation")) c.rotation = fixed_vector<3>(j.at("rotation"), "camera rotation");
  if (j.contains("translation")) c.translation = fixed_vector<3>(j.at("translation"), "camera translation");
  return c;
}

Stage stage_from_json(const json& j) {
  if (!j.is_object()) throw ParseError("schedule stage must be an object");
  Stage s;
  for (const auto& [key, value] : j.items()) {
    if (!value.is_number()) throw ParseError("schedule field '" + key + "' must be a number");
    if (key == "sigma") {
      s.sigma = value.get<double>();
    } else if (key == "max_iters") {
      s.max_iterations = value.get<int>();
    } else if (key == "rel_tol") {
      s.relative_tolerance = value.get<double>();
    } else {
      s.weights[key] = value.get<double>();
    }
  }
  if (!j.contains("sigma")) throw ParseError("schedule stage is missing 'sigma'");
  return s;
}

json stage_json(const Stage& s) {
  json j;
  for (const auto& [k, v] : s.weights) j[k] = v;
  j["sigma"] = s.sigma;
  j["max_iters"] = s.max_iterations;
  j["rel_tol"] = s.relative_tolerance;
  return j;
}

}  // namespace

namespace {
std::vector<CameraParams> parse_cameras_unguarded(std::string_view text, bool* has_extrinsics) {
  const json doc = parse_json(text, "cameras");
  if (!doc.is_array() || doc.empty()) throw ParseError("cameras: expected a non-empty array");
  std::vector<CameraParams> out;
  bool all = true;
  for (const auto& j : doc) {
    bool ext = false;
    out.push_back(camera_from_json(j, ext));
    all = all && ext;
    try {
      out.back().validate();
    } catch (const Error& e) {
      throw ParseError(std::string("cameras: ") + e.what());
    }
  }
  if (has_extrinsics) *has_extrinsics = all;
  return out;
}
}  // namespace

std::vector<CameraParams> parse_cameras(std::string_view text, bool* has_extrinsics) {
  return guarded("cameras", [&] { return parse_cameras_unguarded(text, has_extrinsics); });
}

std::string format_cameras(const std::vector<CameraParams>& cameras, bool with_extrinsics) {
  json doc = json::array();
  for (const auto& c : cameras) doc.push_back(camera_json(c, with_extrinsics));
  return doc.dump(2) + "\n";
}

namespace {
JointObservations parse_joints_unguarded(std::string_view text) {
  const json doc = parse_json(text, "joints");
  if (!doc.is_array()) throw ParseError("joints: expected an array with one entry per view");
  JointObservations obs;
  for (const auto& view : doc) {
    if (!view.is_array()) throw ParseError("joints: each view must be an array");
    std::vector<JointObservation> list;
    for (const auto& o : view) {
      if (!o.is_object() || !o.contains("joint_name") || !o.at("joint_name").is_string()) {
        throw ParseError("joints: entries need a string 'joint_name'");
      }
      JointObservation jo;
      jo.joint_name = o.at("joint_name").get<std::string>();
      jo.u = number(o, "u", "joints");
      jo.v = number(o, "v", "joints");
      jo.confidence = o.contains("confidence") ? number(o, "confidence", "joints") : 1.0;
      list.push_back(jo);
    }
    obs.views.push_back(std::move(list));
  }
  return obs;
}
}  // namespace

JointObservations parse_joints(std::string_view text) {
  return guarded("joints", [&] { return parse_joints_unguarded(text); });
}

std::string format_joints(const JointObservations& obs) {
  json doc = json::array();
  for (const auto& view : obs.views) {
    json list = json::array();
    for (const auto& o : view) {
      list.push_back({{"joint_name", o.joint_name}, {"u", o.u}, {"v", o.v}, {"confidence", o.confidence}});
    }
    doc.push_back(list);
  }
  return doc.dump(1) + "\n";
}

namespace {
JointMapping parse_mapping_unguarded(std::string_view text) {
  const json doc = parse_json(text, "mapping");
  if (!doc.is_object()) throw ParseError("mapping: expected an object of name -> index");
  JointMapping m;
  for (const auto& [name, idx] : doc.items()) {
    if (!idx.is_number_integer()) throw ParseError("mapping: index for '" + name + "' must be an integer");
    m.index[name] = idx.get<int>();
  }
  return m;
}
}  // namespace

JointMapping parse_mapping(std::string_view text) {
  return guarded("mapping", [&] { return parse_mapping_unguarded(text); });
}

namespace {
ScheduleSet parse_schedule_unguarded(std::string_view text, DatasetKind kind) {
  const json doc = parse_json(text, "schedule");
  if (!doc.is_object()) throw ParseError("schedule: expected an object");
  ScheduleSet out{default_pose_schedule(), default_shape_schedule(kind)};
  auto read = [&](const char* key, StageSchedule& target) {
    if (!doc.contains(key)) return;
    const json& list = doc.at(key);
    if (!list.is_array()) throw ParseError(std::string("schedule: '") + key + "' must be an array");
    target.stages.clear();
    for (const auto& s : list) target.stages.push_back(stage_from_json(s));
    try {
      target.validate();
    } catch (const Error& e) {
      throw ParseError(std::string("schedule: ") + e.what());
    }
  };
  read("pose_stages", out.pose);
  read("shape_stages", out.shape);
  return out;
}
}  // namespace

ScheduleSet parse_schedule(std::string_view text, DatasetKind kind) {
  return guarded("schedule", [&] { return parse_schedule_unguarded(text, kind); });
}

std::string format_schedule(const ScheduleSet& schedules) {
  json doc;
  doc["pose_stages"] = json::array();
  for (const auto& s : schedules.pose.stages) doc["pose_stages"].push_back(stage_json(s));
  doc["shape_stages"] = json::array();
  for (const auto& s : schedules.shape.stages) doc["shape_stages"].push_back(stage_json(s));
  return doc.dump(2) + "\n";
}

std::string format_params(const FittedParams& params) {
  json doc;
  json theta = json::array();
  for (int k = 0; k < params.theta.num_joints(); ++k) {
    theta.push_back({params.theta.theta(k, 0), params.theta.theta(k, 1), params.theta.theta(k, 2)});
  }
  doc["theta"] = theta;
  doc["beta"] = std::vector<double>(params.beta.beta.data(), params.beta.beta.data() + params.beta.beta.size());
  doc["d_norm"] = params.d_norm;
  doc["cameras"] = json::array();
  for (const auto& c : params.cameras) doc["cameras"].push_back(camera_json(c, true));
  return doc.dump(2) + "\n";
}

namespace {
FittedParams parse_params_unguarded(std::string_view text) {
  const json doc = parse_json(text, "params");
  FittedParams p;
  if (!doc.contains("theta") || !doc.at("theta").is_array()) throw ParseError("params: missing theta");
  const json& theta = doc.at("theta");
  p.theta = PoseParams::zeros(static_cast<int>(theta.size()));
  for (size_t k = 0; k < theta.size(); ++k) {
    p.theta.theta.row(static_cast<Eigen::Index>(k)) = fixed_vector<3>(theta[k], "params theta").transpose();
  }
  if (!doc.contains("beta") || !doc.at("beta").is_array()) throw ParseError("params: missing beta");
  const auto beta = doc.at("beta").get<std::vector<double>>();
  p.beta.beta = Eigen::Map<const Eigen::VectorXd>(beta.data(), static_cast<Eigen::Index>(beta.size()));
  p.d_norm = doc.contains("d_norm") ? number(doc, "d_norm", "params") : 0.0;
  if (doc.contains("cameras")) {
    for (const auto& c : doc.at("cameras")) {
      bool ext = false;
      p.cameras.push_back(camera_from_json(c, ext));
    }
  }
  return p;
}
}  // namespace

FittedParams parse_params(std::string_view text) {
  return guarded("params", [&] { return parse_params_unguarded(text); });
}

std::string format_trace(const std::vector<StageTrace>& trace) {
  json doc = json::array();
  for (size_t i = 0; i < trace.size(); ++i) {
    const auto& t = trace[i];
    doc.push_back({{"stage", i},
                   {"applied", stage_json(t.stage)},
                   {"energies", t.energies},
                   {"radii", t.radii},
                   {"iterations", t.iterations},
                   {"accepted", t.accepted},
                   {"rejected", t.rejected},
                   {"termination", t.termination}});
  }
  return doc.dump(1) + "\n";
}

std::string format_obj(const Points3& vertices, const Faces& faces) {
  std::string out;
  char buf[128];
  for (Eigen::Index i = 0; i < vertices.rows(); ++i) {
    std::snprintf(buf, sizeof buf, "v %.9g %.9g %.9g\n", vertices(i, 0), vertices(i, 1), vertices(i, 2));
    out += buf;
  }
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    std::snprintf(buf, sizeof buf, "f %d %d %d\n", faces(f, 0) + 1, faces(f, 1) + 1, faces(f, 2) + 1);
    out += buf;
  }
  return out;
}

Mesh parse_obj(std::string_view text) {
  std::vector<Vec3> verts;
  std::vector<Eigen::Vector3i> faces;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "v") {
      Vec3 v;
      if (!(ls >> v.x() >> v.y() >> v.z())) throw ParseError("OBJ line " + std::to_string(lineno) + ": bad vertex");
      verts.push_back(v);
    } else if (tag == "f") {
      Eigen::Vector3i f;
      for (int k = 0; k < 3; ++k) {
        std::string tok;
        if (!(ls >> tok)) throw ParseError("OBJ line " + std::to_string(lineno) + ": bad face");
        f(k) = std::stoi(tok.substr(0, tok.find('/'))) - 1;
      }
      faces.push_back(f);
    }
  }
  Mesh m;
  m.vertices.resize(static_cast<Eigen::Index>(verts.size()), 3);
  for (size_t i = 0; i < verts.size(); ++i) m.vertices.row(static_cast<Eigen::Index>(i)) = verts[i].transpose();
  m.faces.resize(static_cast<Eigen::Index>(faces.size()), 3);
  for (size_t i = 0; i < faces.size(); ++i) {
    if (faces[i].minCoeff() < 0 || faces[i].maxCoeff() >= static_cast<int>(verts.size())) {
      throw ParseError("OBJ face " + std::to_string(i) + " references a missing vertex");
    }
    m.faces.row(static_cast<Eigen::Index>(i)) = faces[i].transpose();
  }
  return m;
}

}  // namespace bodyfit

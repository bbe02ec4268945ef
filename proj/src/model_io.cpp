#include <fstream>
#include <sstream>

#include <json.hpp>

#include "bodyfit/body_model.hpp"
#include "bodyfit/errors.hpp"

namespace bodyfit {

namespace {

using nlohmann::json;

constexpr int kModelFormatVersion = 1;

const json& field(const json& doc, const char* name) {
  if (!doc.contains(name)) throw ParseError(std::string("model document is missing field '") + name + "'");
  return doc.at(name);
}

int count_field(const json& doc, const char* name) {
  const json& f = field(doc, name);
  if (!f.is_number_integer() || f.get<long long>() < 0) {
    throw ParseError(std::string("model field '") + name + "' must be a non-negative integer");
  }
  return f.get<int>();
}

double real_at(const json& v, const char* name, size_t idx) {
  if (!v.is_number()) {
    throw ParseError(std::string("model field '") + name + "' entry " + std::to_string(idx) +
                     " is not a number");
  }
  return v.get<double>();
}

// rows x cols nested array of numbers.
Eigen::MatrixXd nested_matrix(const json& doc, const char* name, int rows, int cols) {
  const json& a = field(doc, name);
  if (!a.is_array() || static_cast<int>(a.size()) != rows) {
    throw ParseError(std::string("model field '") + name + "' must have " + std::to_string(rows) + " rows");
  }
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    const json& row = a[r];
    if (!row.is_array() || static_cast<int>(row.size()) != cols) {
      throw ParseError(std::string("model field '") + name + "' row " + std::to_string(r) +
                       " must have " + std::to_string(cols) + " entries");
    }
    for (int c = 0; c < cols; ++c) m(r, c) = real_at(row[c], name, r * cols + c);
  }
  return m;
}

Eigen::MatrixXd flat_matrix(const json& doc, const char* name, int rows, int cols, bool allow_empty) {
  const json& a = field(doc, name);
  if (!a.is_array()) throw ParseError(std::string("model field '") + name + "' must be an array");
  if (allow_empty && a.empty()) return Eigen::MatrixXd(rows, 0);
  if (static_cast<long long>(a.size()) != static_cast<long long>(rows) * cols) {
    throw ParseError(std::string("model field '") + name + "' must have " +
                     std::to_string(static_cast<long long>(rows) * cols) + " entries, found " +
                     std::to_string(a.size()));
  }
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const size_t idx = static_cast<size_t>(r) * cols + c;
      m(r, c) = real_at(a[idx], name, idx);
    }
  return m;
}

json nested(const Eigen::MatrixXd& m) {
  json a = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    a.push_back(std::move(row));
  }
  return a;
}

json flat(const Eigen::MatrixXd& m) {
  json a = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) a.push_back(m(r, c));
  return a;
}

}  // namespace

BodyModel load_model(std::string_view document) {
  json doc;
  try {
    doc = json::parse(document.begin(), document.end());
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("model document is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ParseError("model document must be a JSON object");
  if (doc.contains("version") && doc.at("version") != kModelFormatVersion) {
    throw ParseError("unsupported model format version " + doc.at("version").dump());
  }
  const int v = count_field(doc, "V");
  const int k = count_field(doc, "K");
  const int s = count_field(doc, "S");
  if (v < 1 || k < 1) throw ParseError("model must have V >= 1 and K >= 1");

  BodyModel model;
  model.template_vertices = nested_matrix(doc, "template", v, 3);

  const json& faces = field(doc, "faces");
  if (!faces.is_array()) throw ParseError("model field 'faces' must be an array");
  model.faces.resize(static_cast<Eigen::Index>(faces.size()), 3);
  for (size_t f = 0; f < faces.size(); ++f) {
    if (!faces[f].is_array() || faces[f].size() != 3) {
      throw ParseError("model face " + std::to_string(f) + " must have 3 indices");
    }
    for (int c = 0; c < 3; ++c) {
      if (!faces[f][c].is_number_integer()) {
        throw ParseError("model face " + std::to_string(f) + " has a non-integer index");
      }
      model.faces(static_cast<Eigen::Index>(f), c) = faces[f][c].get<int>();
    }
  }

  model.shape_dirs = flat_matrix(doc, "shape_dirs", 3 * v, s, false);
  model.pose_dirs = flat_matrix(doc, "pose_dirs", 3 * v, 9 * (k - 1), true);
  model.joint_regressor = nested_matrix(doc, "joint_regressor", k, v);
  model.skin_weights = nested_matrix(doc, "skin_weights", v, k);

  const json& parent = field(doc, "parent");
  if (!parent.is_array() || static_cast<int>(parent.size()) != k) {
    throw ParseError("model field 'parent' must have K entries");
  }
  for (const auto& p : parent) {
    if (!p.is_number_integer()) throw ParseError("model field 'parent' must hold integers");
    model.parent.push_back(p.get<int>());
  }
  const json& names = field(doc, "joint_names");
  if (!names.is_array() || static_cast<int>(names.size()) != k) {
    throw ParseError("model field 'joint_names' must have K entries");
  }
  for (const auto& n : names) {
    if (!n.is_string()) throw ParseError("model field 'joint_names' must hold strings");
    model.joint_names.push_back(n.get<std::string>());
  }

  check_model(model);
  return model;
}

std::string save_model(const BodyModel& model) {
  json doc;
  doc["version"] = kModelFormatVersion;
  doc["V"] = model.num_vertices();
  doc["K"] = model.num_joints();
  doc["S"] = model.num_shape();
  doc["template"] = nested(model.template_vertices);
  json faces = json::array();
  for (Eigen::Index f = 0; f < model.faces.rows(); ++f) {
    faces.push_back({model.faces(f, 0), model.faces(f, 1), model.faces(f, 2)});
  }
  doc["faces"] = std::move(faces);
  doc["shape_dirs"] = flat(model.shape_dirs);
  doc["pose_dirs"] = flat(model.pose_dirs);
  doc["joint_regressor"] = nested(model.joint_regressor);
  doc["skin_weights"] = nested(model.skin_weights);
  doc["parent"] = model.parent;
  doc["joint_names"] = model.joint_names;
  return doc.dump();
}

BodyModel load_model_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return load_model(ss.str());
}

void save_model_file(const BodyModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write model file " + path);
  out << save_model(model);
  if (!out) throw IoError("failed writing model file " + path);
}

}  // namespace bodyfit

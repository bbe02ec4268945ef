#include "bodyfit/body_model.hpp"

#include <cmath>
#include <queue>
#include <sstream>

#include <Eigen/SVD>

#include "bodyfit/errors.hpp"

namespace bodyfit {

namespace {

void require_shape(const BodyModel& model, const ShapeParams& beta) {
  if (beta.beta.size() != model.num_shape()) {
    throw DimensionError("shape parameter count " + std::to_string(beta.beta.size()) +
                         " does not match model S=" + std::to_string(model.num_shape()));
  }
}

void require_pose(const BodyModel& model, const PoseParams& theta) {
  if (theta.num_joints() != model.num_joints()) {
    throw DimensionError("pose joint count " + std::to_string(theta.num_joints()) +
                         " does not match model K=" + std::to_string(model.num_joints()));
  }
}

void require_offsets(const BodyModel& model, const VertexOffsets& d) {
  if (d.d.rows() != model.num_vertices()) {
    throw DimensionError("vertex offset count " + std::to_string(d.d.rows()) +
                         " does not match model V=" + std::to_string(model.num_vertices()));
  }
}

Points3 unflatten(const Eigen::VectorXd& flat) {
  return Eigen::Map<const Points3>(flat.data(), flat.size() / 3, 3);
}

}  // namespace

int BodyModel::joint_index(std::string_view name) const {
  for (size_t k = 0; k < joint_names.size(); ++k) {
    if (joint_names[k] == name) return static_cast<int>(k);
  }
  return -1;
}

PoseParams PoseParams::zeros(int num_joints) {
  PoseParams p;
  p.theta.setZero(num_joints, 3);
  return p;
}

std::vector<std::string> audit_model(const BodyModel& model) {
  std::vector<std::string> problems;
  const int v = model.num_vertices();
  const int k = model.num_joints();
  auto dims = [&](bool ok, const std::string& what) {
    if (!ok) problems.push_back("dimension mismatch: " + what);
    return ok;
  };
  if (k < 1) problems.push_back("model has no joints");
  if (v < 1) problems.push_back("model has no vertices");
  const bool shape_ok = dims(model.shape_dirs.rows() == 3 * v, "shape_dirs rows != 3V");
  const bool pose_ok = dims(model.pose_dirs.cols() == 0 ||
                                (model.pose_dirs.rows() == 3 * v &&
                                 model.pose_dirs.cols() == 9 * (k - 1)),
                            "pose_dirs must be empty or 3V x 9(K-1)");
  const bool reg_ok = dims(model.joint_regressor.rows() == k && model.joint_regressor.cols() == v,
                           "joint_regressor must be K x V");
  const bool skin_ok = dims(model.skin_weights.rows() == v && model.skin_weights.cols() == k,
                            "skin_weights must be V x K");
  dims(static_cast<int>(model.joint_names.size()) == k, "joint_names must have K entries");
  if (!problems.empty() && (k < 1 || v < 1)) return problems;

  if (!model.template_vertices.allFinite()) problems.push_back("template has non-finite values");
  if (shape_ok && !model.shape_dirs.allFinite()) problems.push_back("shape_dirs has non-finite values");
  if (pose_ok && !model.pose_dirs.allFinite()) problems.push_back("pose_dirs has non-finite values");

  if (skin_ok) {
    for (int i = 0; i < v; ++i) {
      const auto row = model.skin_weights.row(i);
      if (row.minCoeff() < 0.0) {
        problems.push_back("skin_weights row " + std::to_string(i) + " has a negative weight");
      }
      const double sum = row.sum();
      if (!(std::abs(sum - 1.0) <= 1e-6)) {
        std::ostringstream os;
        os << "skin_weights row " << i << " sums to " << sum;
        problems.push_back(os.str());
      }
    }
  }
  if (reg_ok) {
    for (int j = 0; j < k; ++j) {
      const double sum = model.joint_regressor.row(j).sum();
      if (!(std::abs(sum - 1.0) <= 1e-6)) {
        std::ostringstream os;
        os << "joint_regressor row " << j << " sums to " << sum;
        problems.push_back(os.str());
      }
    }
  }

  // Kinematic tree: joint 0 is the unique root, every chain reaches it.
  if (k >= 1) {
    if (model.parent[0] != kRootParent) problems.push_back("joint 0 must be the root (parent -1)");
    bool tree_ok = true;
    for (int j = 1; j < k; ++j) {
      const int p = model.parent[j];
      if (p < 0 || p >= k || p == j) {
        problems.push_back("joint " + std::to_string(j) + " has invalid parent " + std::to_string(p));
        tree_ok = false;
      }
    }
    if (tree_ok) {
      for (int j = 1; j < k; ++j) {
        int cur = j;
        int steps = 0;
        while (cur != 0 && steps <= k) {
          cur = model.parent[cur];
          ++steps;
        }
        if (cur != 0) {
          problems.push_back("joint " + std::to_string(j) + " is on a cycle");
          break;
        }
      }
    }
  }

  for (Eigen::Index f = 0; f < model.faces.rows(); ++f) {
    for (int c = 0; c < 3; ++c) {
      const int idx = model.faces(f, c);
      if (idx < 0 || idx >= v) {
        problems.push_back("face " + std::to_string(f) + " references vertex " +
                           std::to_string(idx) + " outside [0, " + std::to_string(v) + ")");
        break;
      }
    }
  }
  return problems;
}

void check_model(const BodyModel& model) {
  const auto problems = audit_model(model);
  if (!problems.empty()) throw InvariantError(problems.front());
}

Points3 shape_blend(const BodyModel& model, const ShapeParams& beta) {
  require_shape(model, beta);
  return unflatten(model.shape_dirs * beta.beta);
}

Eigen::VectorXd pose_features(const PoseParams& theta) {
  const int k = theta.num_joints();
  Eigen::VectorXd feat(9 * std::max(0, k - 1));
  for (int j = 1; j < k; ++j) {
    const Mat3 r = rodrigues(theta.joint(j)) - Mat3::Identity();
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) feat(9 * (j - 1) + 3 * a + b) = r(a, b);
  }
  return feat;
}

Points3 pose_blend(const BodyModel& model, const PoseParams& theta) {
  require_pose(model, theta);
  if (!model.has_pose_dirs()) return Points3::Zero(model.num_vertices(), 3);
  return unflatten(model.pose_dirs * pose_features(theta));
}

Points3 joints_rest(const BodyModel& model, const ShapeParams& beta) {
  const Points3 shaped = model.template_vertices + shape_blend(model, beta);
  return model.joint_regressor * shaped;
}

Eigen::Isometry3d Kinematics::relative_transform(int k) const {
  Eigen::Isometry3d g = Eigen::Isometry3d::Identity();
  g.linear() = world_rotations[k];
  g.translation() = world_translations[k];
  return g;
}

std::vector<int> kinematic_order(const std::vector<int>& parent) {
  const int k = static_cast<int>(parent.size());
  std::vector<std::vector<int>> children(k);
  for (int j = 1; j < k; ++j) children[parent[j]].push_back(j);
  std::vector<int> order;
  order.reserve(k);
  std::queue<int> q;
  q.push(0);
  while (!q.empty()) {
    const int j = q.front();
    q.pop();
    order.push_back(j);
    for (int c : children[j]) q.push(c);
  }
  return order;
}

Kinematics forward_kinematics(const BodyModel& model, const PoseParams& theta,
                              const ShapeParams& beta) {
  require_pose(model, theta);
  const int k = model.num_joints();
  Kinematics kin;
  kin.rest_joints = joints_rest(model, beta);
  kin.posed_joints.resize(k, 3);
  kin.local_rotations.resize(k);
  kin.world_rotations.resize(k);
  kin.world_translations.resize(k);
  for (int j : kinematic_order(model.parent)) {
    const Mat3 r = rodrigues(theta.joint(j));
    const Vec3 c = kin.rest_joints.row(j).transpose();
    const Vec3 t = c - r * c;
    kin.local_rotations[j] = r;
    const int p = model.parent[j];
    if (p == kRootParent) {
      kin.world_rotations[j] = r;
      kin.world_translations[j] = t;
    } else {
      kin.world_rotations[j] = kin.world_rotations[p] * r;
      kin.world_translations[j] = kin.world_rotations[p] * t + kin.world_translations[p];
    }
    kin.posed_joints.row(j) = (kin.world_rotations[j] * c + kin.world_translations[j]).transpose();
  }
  return kin;
}

std::vector<Eigen::Isometry3d> global_transforms(const BodyModel& model, const PoseParams& theta,
                                                 const ShapeParams& beta) {
  const Kinematics kin = forward_kinematics(model, theta, beta);
  std::vector<Eigen::Isometry3d> out(model.num_joints());
  for (int j = 0; j < model.num_joints(); ++j) out[j] = kin.relative_transform(j);
  return out;
}

Eigen::Affine3d blended_transform(const BodyModel& model,
                                  const std::vector<Eigen::Isometry3d>& transforms, int vertex) {
  Eigen::Matrix<double, 3, 4> acc = Eigen::Matrix<double, 3, 4>::Zero();
  Eigen::Matrix<double, 3, 4> identity = Eigen::Matrix<double, 3, 4>::Zero();
  identity.leftCols<3>().setIdentity();
  for (int j = 0; j < model.num_joints(); ++j) {
    const double w = model.skin_weights(vertex, j);
    if (w != 0.0) acc += w * (transforms[j].affine() - identity);
  }
  Eigen::Affine3d out = Eigen::Affine3d::Identity();
  out.affine() = acc + identity;
  return out;
}

BlendedTransforms blend_transforms(const BodyModel& model,
                                   const std::vector<Eigen::Isometry3d>& transforms) {
  const int k = model.num_joints();
  Eigen::Matrix<double, Eigen::Dynamic, 12, Eigen::RowMajor> stacked(k, 12);
  for (int j = 0; j < k; ++j) {
    const Eigen::Matrix<double, 3, 4> a = transforms[j].affine();
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) stacked(j, 4 * r + c) = a(r, c) - (r == c ? 1.0 : 0.0);
  }
  // I + sum_k w_k (G_k - I): exact identity when every G_k is.
  BlendedTransforms out = model.skin_weights * stacked;
  out.col(0).array() += 1.0;
  out.col(5).array() += 1.0;
  out.col(10).array() += 1.0;
  return out;
}

Eigen::Affine3d PosedBody::vertex_transform(int vertex) const {
  Eigen::Affine3d out = Eigen::Affine3d::Identity();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) out.matrix()(r, c) = blended(vertex, 4 * r + c);
  return out;
}

Points3 compute_vertex_normals(const Points3& vertices, const Faces& faces) {
  Points3 normals = Points3::Zero(vertices.rows(), 3);
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    const Vec3 a = vertices.row(faces(f, 0));
    const Vec3 b = vertices.row(faces(f, 1));
    const Vec3 c = vertices.row(faces(f, 2));
    const Vec3 n = (b - a).cross(c - a);  // area weighted
    for (int i = 0; i < 3; ++i) normals.row(faces(f, i)) += n.transpose();
  }
  for (Eigen::Index i = 0; i < normals.rows(); ++i) {
    const double len = normals.row(i).norm();
    if (len > 0.0) {
      normals.row(i) /= len;
    } else {
      normals.row(i) = Vec3::UnitZ().transpose();
    }
  }
  return normals;
}

PosedBody pose_body(const BodyModel& model, const PoseParams& theta, const ShapeParams& beta,
                    const VertexOffsets& d) {
  require_pose(model, theta);
  require_shape(model, beta);
  require_offsets(model, d);
  PosedBody body;
  body.kinematics = forward_kinematics(model, theta, beta);
  body.transforms.resize(model.num_joints());
  for (int j = 0; j < model.num_joints(); ++j) {
    body.transforms[j] = body.kinematics.relative_transform(j);
  }
  body.blended = blend_transforms(model, body.transforms);
  body.canonical = model.template_vertices + shape_blend(model, beta) + d.d;
  body.pose_offsets = pose_blend(model, theta);

  const int v = model.num_vertices();
  body.mesh.vertices.resize(v, 3);
  for (int i = 0; i < v; ++i) {
    const Vec3 x = (body.canonical.row(i) + body.pose_offsets.row(i)).transpose();
    const auto row = body.blended.row(i);
    for (int r = 0; r < 3; ++r) {
      body.mesh.vertices(i, r) =
          row(4 * r) * x.x() + row(4 * r + 1) * x.y() + row(4 * r + 2) * x.z() + row(4 * r + 3);
    }
  }
  body.mesh.faces = model.faces;
  body.mesh.normals = compute_vertex_normals(body.mesh.vertices, body.mesh.faces);
  return body;
}

Mesh skin(const BodyModel& model, const PoseParams& theta, const ShapeParams& beta,
          const VertexOffsets& d) {
  return pose_body(model, theta, beta, d).mesh;
}

Eigen::Affine3d invert_skinning_transform(const Eigen::Affine3d& transform) {
  const Eigen::JacobiSVD<Mat3> svd(transform.linear());
  const auto& s = svd.singularValues();
  if (!(s(2) > 0.0) || s(0) / s(2) > kMaxSkinningCondition) {
    throw DegenerateSkinningError("blended skinning transform is singular (condition " +
                                  std::to_string(s(2) > 0.0 ? s(0) / s(2) : INFINITY) + ")");
  }
  return transform.inverse(Eigen::Affine);
}

Ray unpose_ray(const BodyModel& model, const PoseParams& theta, const ShapeParams& beta,
               int vertex, const Ray& ray) {
  if (vertex < 0 || vertex >= model.num_vertices()) {
    throw DimensionError("vertex index " + std::to_string(vertex) + " out of range");
  }
  const auto transforms = global_transforms(model, theta, beta);
  const Eigen::Affine3d inv = invert_skinning_transform(blended_transform(model, transforms, vertex));
  Vec3 offset = Vec3::Zero();
  if (model.has_pose_dirs()) {
    offset = model.pose_dirs.middleRows(3 * vertex, 3) * pose_features(theta);
  }
  Ray out;
  out.origin = inv * ray.origin - offset;
  out.direction = (inv.linear() * ray.direction).normalized();
  return out;
}

Ray unpose_ray(const PosedBody& body, int vertex, const Ray& ray) {
  if (vertex < 0 || vertex >= body.blended.rows()) {
    throw DimensionError("vertex index " + std::to_string(vertex) + " out of range");
  }
  const Eigen::Affine3d inv = invert_skinning_transform(body.vertex_transform(vertex));
  Ray out;
  out.origin = inv * ray.origin - body.pose_offsets.row(vertex).transpose();
  out.direction = (inv.linear() * ray.direction).normalized();
  return out;
}

}  // namespace bodyfit

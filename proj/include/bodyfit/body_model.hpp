#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "bodyfit/camera.hpp"

namespace bodyfit {

using Points3 = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Faces = Eigen::Matrix<int, Eigen::Dynamic, 3, Eigen::RowMajor>;

/// SMPL-style parametric body.
///
/// Vertex-major 3-tensors are stored as (3V x n) matrices whose row 3*i + c
/// holds coordinate c of vertex i, which is the row-major flattening used by
/// the model file.
struct BodyModel {
  Points3 template_vertices;        // V x 3, meters
  Faces faces;                      // F x 3
  Eigen::MatrixXd shape_dirs;       // 3V x S
  Eigen::MatrixXd pose_dirs;        // 3V x 9(K-1), or 3V x 0 when absent
  Eigen::MatrixXd joint_regressor;  // K x V
  Eigen::MatrixXd skin_weights;     // V x K
  std::vector<int> parent;          // parent[0] == -1
  std::vector<std::string> joint_names;

  int num_vertices() const { return static_cast<int>(template_vertices.rows()); }
  int num_joints() const { return static_cast<int>(parent.size()); }
  int num_shape() const { return static_cast<int>(shape_dirs.cols()); }
  int num_pose_features() const { return static_cast<int>(pose_dirs.cols()); }
  bool has_pose_dirs() const { return pose_dirs.cols() > 0; }

  /// Index of a named joint, or -1.
  int joint_index(std::string_view name) const;
};

inline constexpr int kRootParent = -1;

struct PoseParams {
  Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> theta;  // K x 3 axis-angle

  static PoseParams zeros(int num_joints);
  int num_joints() const { return static_cast<int>(theta.rows()); }
  Vec3 joint(int k) const { return theta.row(k).transpose(); }
  /// Flat 3K view in joint-major order.
  Eigen::Map<Eigen::VectorXd> flat() { return {theta.data(), theta.size()}; }
  Eigen::Map<const Eigen::VectorXd> flat() const { return {theta.data(), theta.size()}; }
};

struct ShapeParams {
  Eigen::VectorXd beta;

  static ShapeParams zeros(int num_shape) { return {Eigen::VectorXd::Zero(num_shape)}; }
};

struct VertexOffsets {
  Points3 d;  // V x 3, zero-pose space

  static VertexOffsets zeros(int num_vertices) { return {Points3::Zero(num_vertices, 3)}; }
  Eigen::Map<Eigen::VectorXd> flat() { return {d.data(), d.size()}; }
  Eigen::Map<const Eigen::VectorXd> flat() const { return {d.data(), d.size()}; }
};

struct Mesh {
  Points3 vertices;
  Faces faces;
  Points3 normals;  // empty, or V x 3 unit normals

  bool has_normals() const { return normals.rows() == vertices.rows() && normals.rows() > 0; }
};

// ---------------------------------------------------------------------------
// Validation and I/O
// ---------------------------------------------------------------------------

/// All invariant violations found in the model (empty when valid).
std::vector<std::string> audit_model(const BodyModel& model);

/// Throws InvariantError describing the first violation.
void check_model(const BodyModel& model);

BodyModel load_model(std::string_view document);
std::string save_model(const BodyModel& model);
BodyModel load_model_file(const std::string& path);
void save_model_file(const BodyModel& model, const std::string& path);

/// Deterministic low-poly humanoid (y up, facing +z, pelvis at the origin,
/// arms out in a T) for use in place of a licensed asset.
/// Requires V >= 8, 1 <= K <= 24, S >= 1.
BodyModel make_toy_model(std::uint64_t seed, int num_vertices, int num_joints, int num_shape);

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

Points3 shape_blend(const BodyModel& model, const ShapeParams& beta);

/// Concatenated vec(R(theta_k) - I), row-major, for k = 1..K-1.
Eigen::VectorXd pose_features(const PoseParams& theta);
Points3 pose_blend(const BodyModel& model, const PoseParams& theta);

Points3 joints_rest(const BodyModel& model, const ShapeParams& beta);

/// Forward kinematics along the kinematic tree.
struct Kinematics {
  std::vector<Mat3> local_rotations;  // R(theta_k)
  std::vector<Mat3> world_rotations;  // composed along the chain
  std::vector<Vec3> world_translations;  // translation part of G'_k
  Points3 rest_joints;                // J(beta)
  Points3 posed_joints;               // world joint positions

  /// G'_k: world transform relative to the rest pose.
  Eigen::Isometry3d relative_transform(int k) const;
};

/// Joints ordered so that every parent precedes its children.
std::vector<int> kinematic_order(const std::vector<int>& parent);

Kinematics forward_kinematics(const BodyModel& model, const PoseParams& theta,
                              const ShapeParams& beta);

std::vector<Eigen::Isometry3d> global_transforms(const BodyModel& model, const PoseParams& theta,
                                                 const ShapeParams& beta);

/// Sum_k w_{k,i} G'_k for one vertex, evaluated as I + Sum_k w_{k,i} (G'_k - I).
Eigen::Affine3d blended_transform(const BodyModel& model,
                                  const std::vector<Eigen::Isometry3d>& transforms, int vertex);

Points3 compute_vertex_normals(const Points3& vertices, const Faces& faces);

Mesh skin(const BodyModel& model, const PoseParams& theta, const ShapeParams& beta,
          const VertexOffsets& d);

/// Condition number above which a blended transform is treated as singular.
inline constexpr double kMaxSkinningCondition = 1e8;

/// Maps a world-space ray at `vertex` into the canonical (zero-pose) frame:
/// inverse blended transform on origin and direction, then the vertex's pose
/// blendshape offset subtracted from the origin. Direction is unit length.
Ray unpose_ray(const BodyModel& model, const PoseParams& theta, const ShapeParams& beta,
               int vertex, const Ray& ray);

/// Per-vertex blended transforms Sum_k w_{k,i} G'_k, one row per vertex
/// holding the 3x4 matrix [A | b] in row-major order.
using BlendedTransforms = Eigen::Matrix<double, Eigen::Dynamic, 12, Eigen::RowMajor>;

BlendedTransforms blend_transforms(const BodyModel& model,
                                   const std::vector<Eigen::Isometry3d>& transforms);

/// Everything derived from one (theta, beta, d) evaluation, shared by the
/// correspondence and shape-fitting code.
struct PosedBody {
  Kinematics kinematics;
  std::vector<Eigen::Isometry3d> transforms;  // G'_k
  BlendedTransforms blended;
  Points3 canonical;     // template + B_S(beta) + d
  Points3 pose_offsets;  // B_P(theta)
  Mesh mesh;             // posed, with normals

  Eigen::Affine3d vertex_transform(int vertex) const;
};

PosedBody pose_body(const BodyModel& model, const PoseParams& theta, const ShapeParams& beta,
                    const VertexOffsets& d);

/// unpose_ray against an already evaluated body.
Ray unpose_ray(const PosedBody& body, int vertex, const Ray& ray);

/// Inverse of an affine transform; throws DegenerateSkinningError when the
/// linear part's condition number exceeds kMaxSkinningCondition.
Eigen::Affine3d invert_skinning_transform(const Eigen::Affine3d& transform);

}  // namespace bodyfit

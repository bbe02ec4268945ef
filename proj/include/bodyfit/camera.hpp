#pragma once

#include <array>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace bodyfit {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// ---------------------------------------------------------------------------
// Rotations (axis-angle / Rodrigues)
// ---------------------------------------------------------------------------

/// Axis-angle norms below this use the second-order Taylor expansion.
inline constexpr double kSmallAngle = 1e-8;

Mat3 skew(const Vec3& v);

Mat3 rodrigues(const Vec3& axis_angle);

/// Inverse of rodrigues. Throws NotARotationError unless `rotation` is
/// orthonormal with determinant +1 (both within 1e-8).
Vec3 rodrigues_inv(const Mat3& rotation);

/// Left Jacobian of SO(3): rodrigues(w + dw) ~ rodrigues(J_l(w) dw) * rodrigues(w).
Mat3 left_jacobian(const Vec3& axis_angle);

/// Partial derivatives dR/dw_a, a = 0..2.
std::array<Mat3, 3> rodrigues_derivatives(const Vec3& axis_angle);

// ---------------------------------------------------------------------------
// Pinhole camera
// ---------------------------------------------------------------------------

/// Pinhole camera with square pixels and no skew or distortion.
/// Extrinsics map world points to camera coordinates: X_c = R X + t.
/// Image frame: origin top-left, +x right, +y down.
struct CameraParams {
  double focal = 1.0;
  Vec2 principal_point = Vec2::Zero();
  Vec3 rotation = Vec3::Zero();  // axis-angle
  Vec3 translation = Vec3::Zero();
  int width = 1;
  int height = 1;

  Mat3 rotation_matrix() const { return rodrigues(rotation); }
  Vec3 to_camera(const Vec3& world) const { return rotation_matrix() * world + translation; }
  void validate() const;
};

/// Depth below which a camera-space point counts as behind the camera.
inline constexpr double kMinDepth = 1e-6;

Vec2 project(const CameraParams& camera, const Vec3& point);

/// Projection plus its derivatives w.r.t. the world point and the
/// extrinsics laid out as (rotation[3], translation[3]). Either output may be null.
Vec2 project_with_jacobian(const CameraParams& camera, const Vec3& point,
                           Eigen::Matrix<double, 2, 3>* d_point,
                           Eigen::Matrix<double, 2, 6>* d_extrinsics);

Vec3 camera_center(const CameraParams& camera);

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();
};

/// Ray from the camera center through `pixel`, unit direction.
Ray pixel_ray(const CameraParams& camera, const Vec2& pixel);

/// Line as (unit direction n, moment m = p x n).
struct PluckerLine {
  Vec3 direction = Vec3::UnitZ();
  Vec3 moment = Vec3::Zero();
};

PluckerLine plucker_from_ray(const Ray& ray);

/// d = V x n - m. Its norm is the distance from `point` to the line.
Vec3 point_line_residual(const Vec3& point, const PluckerLine& line);

}  // namespace bodyfit

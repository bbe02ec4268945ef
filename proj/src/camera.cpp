#include "bodyfit/camera.hpp"

#include <cmath>
#include <string>

#include "bodyfit/errors.hpp"

namespace bodyfit {

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),  //
      v.z(), 0.0, -v.x(),   //
      -v.y(), v.x(), 0.0;
  return m;
}

Mat3 rodrigues(const Vec3& axis_angle) {
  const double angle = axis_angle.norm();
  const Mat3 k = skew(axis_angle);
  if (angle < kSmallAngle) {
    return Mat3::Identity() + k + 0.5 * k * k;
  }
  const double a = std::sin(angle) / angle;
  const double b = (1.0 - std::cos(angle)) / (angle * angle);
  return Mat3::Identity() + a * k + b * k * k;
}

Vec3 rodrigues_inv(const Mat3& rotation) {
  if (!rotation.allFinite()) throw NotARotationError("rodrigues_inv: non-finite matrix");
  const double ortho = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
  const double det = rotation.determinant();
  if (ortho > 1e-8 || std::abs(det - 1.0) > 1e-8) {
    throw NotARotationError("rodrigues_inv: matrix is not a proper rotation (orthonormality error " +
                            std::to_string(ortho) + ", det " + std::to_string(det) + ")");
  }
  const Eigen::AngleAxisd aa(rotation);
  return aa.angle() * aa.axis();
}

Mat3 left_jacobian(const Vec3& axis_angle) {
  const double angle = axis_angle.norm();
  const Mat3 k = skew(axis_angle);
  double a, b;
  if (angle < 1e-4) {
    const double t2 = angle * angle;
    a = 0.5 - t2 / 24.0;
    b = 1.0 / 6.0 - t2 / 120.0;
  } else {
    a = (1.0 - std::cos(angle)) / (angle * angle);
    b = (angle - std::sin(angle)) / (angle * angle * angle);
  }
  return Mat3::Identity() + a * k + b * k * k;
}

std::array<Mat3, 3> rodrigues_derivatives(const Vec3& axis_angle) {
  const Mat3 r = rodrigues(axis_angle);
  const Mat3 jl = left_jacobian(axis_angle);
  std::array<Mat3, 3> out;
  for (int a = 0; a < 3; ++a) out[a] = skew(jl.col(a)) * r;
  return out;
}

void CameraParams::validate() const {
  if (!(focal > 0.0) || !std::isfinite(focal)) throw ConfigError("camera focal must be positive");
  if (width <= 0 || height <= 0) throw ConfigError("camera image size must be positive");
  if (!principal_point.allFinite() || !rotation.allFinite() || !translation.allFinite()) {
    throw ConfigError("camera parameters must be finite");
  }
}

Vec2 project(const CameraParams& camera, const Vec3& point) {
  return project_with_jacobian(camera, point, nullptr, nullptr);
}

Vec2 project_with_jacobian(const CameraParams& camera, const Vec3& point,
                           Eigen::Matrix<double, 2, 3>* d_point,
                           Eigen::Matrix<double, 2, 6>* d_extrinsics) {
  const Mat3 r = camera.rotation_matrix();
  const Vec3 rotated = r * point;
  const Vec3 pc = rotated + camera.translation;
  if (!(pc.z() > kMinDepth)) {
    throw BehindCameraError("point projects at depth " + std::to_string(pc.z()));
  }
  const double f = camera.focal;
  const double iz = 1.0 / pc.z();
  const Vec2 pixel(f * pc.x() * iz + camera.principal_point.x(),
                   f * pc.y() * iz + camera.principal_point.y());
  if (d_point || d_extrinsics) {
    Eigen::Matrix<double, 2, 3> dpc;
    dpc << f * iz, 0.0, -f * pc.x() * iz * iz,  //
        0.0, f * iz, -f * pc.y() * iz * iz;
    if (d_point) *d_point = dpc * r;
    if (d_extrinsics) {
      d_extrinsics->leftCols<3>() = -dpc * skew(rotated) * left_jacobian(camera.rotation);
      d_extrinsics->rightCols<3>() = dpc;
    }
  }
  return pixel;
}

Vec3 camera_center(const CameraParams& camera) {
  return -camera.rotation_matrix().transpose() * camera.translation;
}

Ray pixel_ray(const CameraParams& camera, const Vec2& pixel) {
  const Vec3 dir_cam((pixel.x() - camera.principal_point.x()) / camera.focal,
                     (pixel.y() - camera.principal_point.y()) / camera.focal, 1.0);
  Ray ray;
  ray.origin = camera_center(camera);
  ray.direction = (camera.rotation_matrix().transpose() * dir_cam).normalized();
  return ray;
}

PluckerLine plucker_from_ray(const Ray& ray) {
  const double len = ray.direction.norm();
  if (!(len > 0.0) || !std::isfinite(len)) throw NumericError("plucker_from_ray: zero direction");
  PluckerLine line;
  line.direction = ray.direction / len;
  line.moment = ray.origin.cross(line.direction);
  // Remove the round-off component along n so that m . n = 0 holds tightly.
  line.moment -= line.moment.dot(line.direction) * line.direction;
  return line;
}

Vec3 point_line_residual(const Vec3& point, const PluckerLine& line) {
  return point.cross(line.direction) - line.moment;
}

}  // namespace bodyfit

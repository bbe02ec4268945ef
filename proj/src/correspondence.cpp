#include "bodyfit/correspondence.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "bodyfit/errors.hpp"

namespace bodyfit {

void PairingConfig::validate() const {
  if (!(distance_threshold > 0.0) || !(normal_epsilon > 0.0) || max_pairs_per_vertex < 1 ||
      !(max_pixel_distance > 0.0) || !(depth_tolerance > 0.0) || !(quantization_limit > 0.0)) {
    throw ConfigError("pairing config values must all be positive");
  }
}

std::vector<int> contour_vertices(const Mesh& mesh, const CameraParams& camera,
                                  const DepthMap& depth, const PairingConfig& cfg) {
  if (!mesh.has_normals()) throw DimensionError("contour_vertices: mesh has no normals");
  if (depth.width != camera.width || depth.height != camera.height) {
    throw DimensionError("contour_vertices: depth map does not match the camera");
  }
  const Mat3 R = camera.rotation_matrix();
  const Vec3 center = camera_center(camera);
  std::vector<int> out;
  for (Eigen::Index i = 0; i < mesh.vertices.rows(); ++i) {
    const Vec3 X = mesh.vertices.row(i).transpose();
    const Vec3 c = R * X + camera.translation;
    if (c.z() <= kMinDepth) continue;
    const Vec3 dir = (X - center).normalized();
    if (std::abs(mesh.normals.row(i).dot(dir.transpose())) >= cfg.normal_epsilon) continue;

    const double u = camera.focal * c.x() / c.z() + camera.principal_point.x();
    const double v = camera.focal * c.y() / c.z() + camera.principal_point.y();
    const int px = static_cast<int>(std::floor(u));
    const int py = static_cast<int>(std::floor(v));
    double stored = -std::numeric_limits<double>::infinity();
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const int x = px + dx;
        const int y = py + dy;
        if (x < 0 || y < 0 || x >= depth.width || y >= depth.height) continue;
        const double z = depth.at(x, y);
        if (std::isfinite(z)) stored = std::max(stored, z);
      }
    }
    if (std::isfinite(stored) && c.z() <= stored + cfg.depth_tolerance) {
      out.push_back(static_cast<int>(i));
    }
  }
  return out;
}

Vec3 backproject_boundary(const PosedBody& body, const CameraParams& camera,
                          const Vec2& boundary_point, int matched_vertex) {
  if (matched_vertex < 0 || matched_vertex >= body.mesh.vertices.rows()) {
    throw DimensionError("backproject_boundary: vertex index out of range");
  }
  const Vec3 X = body.mesh.vertices.row(matched_vertex).transpose();
  if (camera.to_camera(X).z() <= kMinDepth) {
    throw BehindCameraError("backproject_boundary: matched vertex is behind the camera");
  }
  const Vec3 center = camera_center(camera);
  const Ray ray = pixel_ray(camera, boundary_point);
  const Vec3 world = center + (X - center).norm() * ray.direction;
  const Eigen::Affine3d inv = invert_skinning_transform(body.vertex_transform(matched_vertex));
  return inv * world - body.pose_offsets.row(matched_vertex).transpose();
}

Vec3 backproject_boundary(const BodyModel& model, const PoseParams& theta, const ShapeParams& beta,
                          const CameraParams& camera, const Vec2& boundary_point,
                          int matched_vertex, const Mesh& posed_mesh) {
  PosedBody body = pose_body(model, theta, beta, VertexOffsets::zeros(model.num_vertices()));
  if (posed_mesh.vertices.rows() != body.mesh.vertices.rows()) {
    throw DimensionError("backproject_boundary: posed mesh does not match the model");
  }
  body.mesh.vertices = posed_mesh.vertices;
  return backproject_boundary(body, camera, boundary_point, matched_vertex);
}

namespace {

double bbox_diagonal(const Points3& vertices) {
  return (vertices.colwise().maxCoeff() - vertices.colwise().minCoeff()).norm();
}

// Indices of the k nearest points to q, ties broken by lower index.
std::vector<int> nearest(const std::vector<Vec2>& points, const Vec2& q, int k) {
  std::vector<std::pair<double, int>> d;
  d.reserve(points.size());
  for (size_t i = 0; i < points.size(); ++i) {
    d.emplace_back((points[i] - q).squaredNorm(), static_cast<int>(i));
  }
  const size_t n = std::min(d.size(), static_cast<size_t>(k));
  std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(n), d.end());
  std::vector<int> out;
  for (size_t i = 0; i < n; ++i) out.push_back(d[i].second);
  return out;
}

}  // namespace

CorrespondenceSet build_correspondences(const BodyModel& model, const PoseParams& theta,
                                        const ShapeParams& beta, const VertexOffsets& d,
                                        const std::vector<CameraParams>& cameras,
                                        const std::vector<SilhouetteMask>& masks,
                                        const PairingConfig& cfg) {
  cfg.validate();
  if (cameras.size() != masks.size()) {
    throw DimensionError("build_correspondences: " + std::to_string(masks.size()) + " masks for " +
                         std::to_string(cameras.size()) + " cameras");
  }
  const PosedBody body = pose_body(model, theta, beta, d);
  const double threshold = cfg.distance_threshold * bbox_diagonal(body.mesh.vertices);
  CorrespondenceSet out;

  for (size_t v = 0; v < cameras.size(); ++v) {
    const CameraParams& cam = cameras[v];
    const SilhouetteMask& mask = masks[v];
    if (mask.width != cam.width || mask.height != cam.height) {
      throw DimensionError("view " + std::to_string(v) + ": mask size does not match the camera");
    }
    const std::vector<Vec2> target_boundary = boundary_points(mask);
    if (target_boundary.empty()) {
      out.warnings.push_back("view " + std::to_string(v) + ": empty mask, no pairs");
      continue;
    }
    const Rasterization own = rasterize_silhouette(body.mesh, cam);
    const std::vector<Vec2> own_boundary = boundary_points(own.mask);
    if (own_boundary.empty()) {
      out.warnings.push_back("view " + std::to_string(v) + ": model not visible, no pairs");
      continue;
    }
    const Vec3 center = camera_center(cam);
    const std::vector<int> contour = contour_vertices(body.mesh, cam, own.depth, cfg);
    if (contour.empty()) {
      out.warnings.push_back("view " + std::to_string(v) + ": no contour vertices");
    }

    for (int i : contour) {
      const Vec3 X = body.mesh.vertices.row(i).transpose();
      const Vec2 pix = project(cam, X);
      const Vec2 snapped = own_boundary[nearest(own_boundary, pix, 1).front()];
      const Vec2 quantization = snapped - pix;
      if (quantization.norm() > cfg.quantization_limit) continue;

      Ray ray{center, (X - center).normalized()};
      PluckerLine line;
      try {
        line = plucker_from_ray(unpose_ray(body, i, ray));
      } catch (const DegenerateSkinningError&) {
        continue;
      }
      for (int b : nearest(target_boundary, pix, cfg.max_pairs_per_vertex)) {
        const Vec2& bp = target_boundary[b];
        if ((bp - pix).norm() > cfg.max_pixel_distance) break;
        const Vec2 target = bp - quantization;
        out.pairs2d.push_back({i, static_cast<int>(v), bp, target});

        Vec3 V;
        try {
          V = backproject_boundary(body, cam, target, i);
        } catch (const DegenerateSkinningError&) {
          continue;
        }
        const double r = point_line_residual(V, line).norm();
        if (r <= threshold) out.pairs3d.push_back({i, static_cast<int>(v), line, V, r});
      }
    }
  }
  return out;
}

CorrespondenceSet build_correspondences(const BodyModel& model, const PoseParams& theta,
                                        const ShapeParams& beta,
                                        const std::vector<CameraParams>& cameras,
                                        const std::vector<SilhouetteMask>& masks,
                                        const PairingConfig& cfg) {
  return build_correspondences(model, theta, beta, VertexOffsets::zeros(model.num_vertices()),
                               cameras, masks, cfg);
}

std::string correspondences_to_json(const CorrespondenceSet& set, const PosedBody& body,
                                    const std::vector<CameraParams>& cameras) {
  nlohmann::json j;
  j["pairs3d"] = nlohmann::json::array();
  for (const auto& p : set.pairs3d) {
    const Vec2 uv = project(cameras.at(p.view), body.mesh.vertices.row(p.vertex).transpose());
    j["pairs3d"].push_back({{"view", p.view},
                            {"vertex", p.vertex},
                            {"boundary_uv", {uv.x(), uv.y()}},
                            {"residual", p.residual}});
  }
  j["pairs2d"] = nlohmann::json::array();
  for (const auto& p : set.pairs2d) {
    const Vec2 uv = project(cameras.at(p.view), body.mesh.vertices.row(p.vertex).transpose());
    j["pairs2d"].push_back({{"view", p.view},
                            {"vertex", p.vertex},
                            {"boundary_uv", {p.boundary_point.x(), p.boundary_point.y()}},
                            {"residual", (p.target - uv).norm()}});
  }
  j["warnings"] = set.warnings;
  return j.dump(1);
}

}  // namespace bodyfit

#pragma once

#include <string>
#include <vector>

#include "bodyfit/body_model.hpp"
#include "bodyfit/camera.hpp"
#include "bodyfit/silhouette.hpp"

namespace bodyfit {

struct PairingConfig {
  double distance_threshold = 0.02;  // fraction of the posed bounding-box diagonal
  double normal_epsilon = 0.15;
  int max_pairs_per_vertex = 1;
  double max_pixel_distance = 20.0;
  double depth_tolerance = 1e-3;  // meters
  /// Contour vertices farther than this (pixels) from their own rendered
  /// boundary are dropped.
  double quantization_limit = 1.5;

  void validate() const;
};

struct Correspondence3D {
  int vertex = 0;
  int view = 0;
  PluckerLine canonical_line;
  Vec3 canonical_point = Vec3::Zero();
  double residual = 0.0;  // |V x n - m| when built
};

struct Correspondence2D {
  int vertex = 0;
  int view = 0;
  Vec2 boundary_point = Vec2::Zero();  // on the view's mask boundary
  /// Pixel the vertex projection is pulled towards: boundary_point minus the
  /// offset between the vertex projection and the model's own rendered
  /// boundary, which removes the half-pixel bias of pixel-centre sampling.
  Vec2 target = Vec2::Zero();
};

struct CorrespondenceSet {
  std::vector<Correspondence3D> pairs3d;
  std::vector<Correspondence2D> pairs2d;
  std::vector<std::string> warnings;
};

/// Vertices with |n . view direction| < normal_epsilon that pass the depth
/// test (depth <= max depth of the 3x3 pixel neighbourhood + tolerance).
std::vector<int> contour_vertices(const Mesh& mesh, const CameraParams& camera,
                                  const DepthMap& depth, const PairingConfig& cfg);

/// Canonical point V for a boundary pixel: the pixel ray at the matched
/// vertex's distance from the camera, unposed with that vertex's transform.
Vec3 backproject_boundary(const PosedBody& body, const CameraParams& camera,
                          const Vec2& boundary_point, int matched_vertex);
Vec3 backproject_boundary(const BodyModel& model, const PoseParams& theta, const ShapeParams& beta,
                          const CameraParams& camera, const Vec2& boundary_point,
                          int matched_vertex, const Mesh& posed_mesh);

/// Pairs ordered by (view, vertex). Empty masks produce a warning and no pairs.
CorrespondenceSet build_correspondences(const BodyModel& model, const PoseParams& theta,
                                        const ShapeParams& beta, const VertexOffsets& d,
                                        const std::vector<CameraParams>& cameras,
                                        const std::vector<SilhouetteMask>& masks,
                                        const PairingConfig& cfg);
CorrespondenceSet build_correspondences(const BodyModel& model, const PoseParams& theta,
                                        const ShapeParams& beta,
                                        const std::vector<CameraParams>& cameras,
                                        const std::vector<SilhouetteMask>& masks,
                                        const PairingConfig& cfg);

/// Debug dump: {"pairs3d": [{view, vertex, boundary_uv, residual}], "pairs2d": [...]}.
std::string correspondences_to_json(const CorrespondenceSet& set, const PosedBody& body,
                                    const std::vector<CameraParams>& cameras);

}  // namespace bodyfit

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "bodyfit/correspondence.hpp"
#include "bodyfit/errors.hpp"
#include "bodyfit/pipeline.hpp"
#include "support/test_support.hpp"

using namespace bodyfit;
using bodyfit::testing::Rng;

namespace {

struct SphereRig {
  BodyModel model;
  std::vector<CameraParams> cameras;
  std::vector<SilhouetteMask> masks;
};

SphereRig sphere_rig(int views = 3) {
  SphereRig rig;
  rig.model = bodyfit::testing::rigid_model(bodyfit::testing::sphere_mesh(0.5, 24, 48));
  for (int v = 0; v < views; ++v) {
    const double a = 2.0 * 3.141592653589793 * v / views;
    rig.cameras.push_back(
        bodyfit::testing::look_at(Vec3(4.0 * std::sin(a), 0.3, 4.0 * std::cos(a)), Vec3::Zero(), 400, 160, 160));
  }
  const Mesh mesh = skin(rig.model, PoseParams::zeros(1), ShapeParams::zeros(1), VertexOffsets::zeros(rig.model.num_vertices()));
  for (const auto& c : rig.cameras) rig.masks.push_back(rasterize_silhouette(mesh, c).mask);
  return rig;
}

bool same_pairs(const CorrespondenceSet& a, const CorrespondenceSet& b) {
  if (a.pairs2d.size() != b.pairs2d.size() || a.pairs3d.size() != b.pairs3d.size()) return false;
  for (size_t i = 0; i < a.pairs2d.size(); ++i) {
    if (a.pairs2d[i].vertex != b.pairs2d[i].vertex || a.pairs2d[i].view != b.pairs2d[i].view ||
        a.pairs2d[i].boundary_point != b.pairs2d[i].boundary_point || a.pairs2d[i].target != b.pairs2d[i].target) {
      return false;
    }
  }
  for (size_t i = 0; i < a.pairs3d.size(); ++i) {
    if (a.pairs3d[i].vertex != b.pairs3d[i].vertex || a.pairs3d[i].view != b.pairs3d[i].view ||
        a.pairs3d[i].canonical_point != b.pairs3d[i].canonical_point ||
        a.pairs3d[i].canonical_line.moment != b.pairs3d[i].canonical_line.moment) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST_SUITE("correspondence") {

TEST_CASE("sphere contour vertices lie near the great circle facing away from the view") {
  const double radius = 0.5;
  const Mesh sphere = bodyfit::testing::sphere_mesh(radius, 40, 80);
  const CameraParams cam = bodyfit::testing::look_at(Vec3(0, 0, 20), Vec3::Zero(), 2000, 200, 200);
  const Rasterization r = rasterize_silhouette(sphere, cam);
  PairingConfig cfg;
  const auto contour = contour_vertices(sphere, cam, r.depth, cfg);
  CHECK(contour.size() >= 40);
  for (int i : contour) CHECK(std::abs(sphere.vertices(i, 2)) <= 2.0 * cfg.normal_epsilon * radius);
}

TEST_CASE("occluded vertices are excluded") {
  const Mesh sphere = bodyfit::testing::sphere_mesh(0.5, 20, 40);
  const CameraParams cam = bodyfit::testing::look_at(Vec3(0, 0, 5), Vec3::Zero(), 400, 120, 120);
  Mesh scene = sphere;
  const int n = static_cast<int>(sphere.vertices.rows());
  scene.vertices.conservativeResize(n + 4, 3);
  scene.vertices.bottomRows(4) << -2, -2, 2, 2, -2, 2, 2, 2, 2, -2, 2, 2;
  scene.faces.conservativeResize(sphere.faces.rows() + 2, 3);
  scene.faces.bottomRows(2) << n, n + 1, n + 2, n, n + 2, n + 3;
  scene.normals = compute_vertex_normals(scene.vertices, scene.faces);
  scene.normals.topRows(n) = sphere.normals;
  const Rasterization r = rasterize_silhouette(scene, cam);
  const auto contour = contour_vertices(scene, cam, r.depth, PairingConfig{});
  CHECK(std::none_of(contour.begin(), contour.end(), [&](int i) { return i < n; }));
  CHECK_FALSE(contour_vertices(sphere, cam, rasterize_silhouette(sphere, cam).depth, PairingConfig{}).empty());
}

TEST_CASE("a permissive normal test keeps every visible vertex") {
  const Mesh sphere = bodyfit::testing::sphere_mesh(0.5, 12, 24);
  const CameraParams cam = bodyfit::testing::look_at(Vec3(0, 0, 5), Vec3::Zero(), 400, 120, 120);
  DepthMap far{cam.width, cam.height, std::vector<double>(static_cast<size_t>(cam.width * cam.height), 1e9)};
  PairingConfig cfg;
  cfg.normal_epsilon = 2.0;
  CHECK(contour_vertices(sphere, cam, far, cfg).size() == static_cast<size_t>(sphere.vertices.rows()));
}

TEST_CASE("backprojecting a vertex's own projection returns its canonical position") {
  const BodyModel& m = bodyfit::testing::toy_body();
  const SyntheticScene s = bodyfit::testing::toy_scene(101);
  Rng rng(101);
  PoseParams theta = s.theta;
  for (int k = 1; k < m.num_joints(); ++k) theta.theta.row(k) += rng.vec3(0.3).transpose();
  const PosedBody body = pose_body(m, theta, s.beta, VertexOffsets::zeros(m.num_vertices()));
  for (int t = 0; t < 200; ++t) {
    const int i = rng.integer(0, m.num_vertices() - 1);
    const CameraParams& cam = s.cameras[t % s.cameras.size()];
    const Vec3 X = body.mesh.vertices.row(i).transpose();
    const Vec2 u = project(cam, X);
    const Vec3 V = backproject_boundary(body, cam, u, i);
    CHECK((V - body.canonical.row(i).transpose()).norm() < 1e-9);
    const Vec3 W = backproject_boundary(m, theta, s.beta, cam, u, i, body.mesh);
    CHECK((V - W).norm() < 1e-12);
  }
}

TEST_CASE("backprojection at zero pose lies on the pixel ray at the vertex distance") {
  const BodyModel& m = bodyfit::testing::toy_body();
  const PosedBody body = pose_body(m, PoseParams::zeros(m.num_joints()), ShapeParams::zeros(m.num_shape()),
                                   VertexOffsets::zeros(m.num_vertices()));
  const CameraParams cam = bodyfit::testing::look_at(Vec3(0.3, 0.1, 5), Vec3::Zero(), 500, 256, 256);
  Rng rng(102);
  for (int t = 0; t < 50; ++t) {
    const int i = rng.integer(0, m.num_vertices() - 1);
    const Vec3 X = body.mesh.vertices.row(i).transpose();
    const Vec2 u = project(cam, X) + Vec2(rng.uniform(-3, 3), rng.uniform(-3, 3));
    const Vec3 V = backproject_boundary(body, cam, u, i);
    const Ray ray = pixel_ray(cam, u);
    CHECK(point_line_residual(V, plucker_from_ray(ray)).norm() < 1e-12);
    CHECK(std::abs((V - ray.origin).norm() - (X - ray.origin).norm()) < 1e-12);
  }
}

TEST_CASE("re-posing a backprojected point reprojects onto its boundary pixel") {
  const BodyModel& m = bodyfit::testing::toy_body();
  const SyntheticScene s = bodyfit::testing::toy_scene(103);
  Rng rng(103);
  const PosedBody body = pose_body(m, s.theta, s.beta, VertexOffsets::zeros(m.num_vertices()));
  for (int t = 0; t < 200; ++t) {
    const int i = rng.integer(0, m.num_vertices() - 1);
    const CameraParams& cam = s.cameras[t % s.cameras.size()];
    const Vec2 u = project(cam, body.mesh.vertices.row(i).transpose()) + Vec2(rng.uniform(-5, 5), rng.uniform(-5, 5));
    const Vec3 V = backproject_boundary(body, cam, u, i);
    const Vec3 world = body.vertex_transform(i) * (V + body.pose_offsets.row(i).transpose());
    CHECK((project(cam, world) - u).norm() < 1e-6);
  }
}

TEST_CASE("self-correspondence is exact") {
  const BodyModel& m = bodyfit::testing::toy_body();
  const SyntheticScene s = bodyfit::testing::toy_scene(104);
  const CorrespondenceSet c = build_correspondences(m, s.theta, s.beta, s.cameras, s.masks, PairingConfig{});
  REQUIRE(c.pairs3d.size() > 100);
  REQUIRE(c.pairs2d.size() >= c.pairs3d.size());
  const PosedBody body = pose_body(m, s.theta, s.beta, VertexOffsets::zeros(m.num_vertices()));
  for (const auto& p : c.pairs3d) {
    CHECK(p.residual < 1e-6);
    CHECK(point_line_residual(p.canonical_point, p.canonical_line).norm() < 1e-6);
  }
  for (const auto& p : c.pairs2d) {
    const Vec2 u = project(s.cameras[p.view], body.mesh.vertices.row(p.vertex).transpose());
    CHECK((p.target - u).norm() < 1.0);
    CHECK((p.boundary_point - u).norm() <= 20.0);
  }
  CHECK(c.warnings.empty());
}

TEST_CASE("every pair satisfies the structural invariants") {
  const BodyModel& m = bodyfit::testing::toy_body();
  const SyntheticScene truth = bodyfit::testing::toy_scene(105);
  Rng rng(105);
  const ShapeParams beta{truth.beta.beta + rng.vector(m.num_shape(), 0.5)};
  const PairingConfig cfg;
  const CorrespondenceSet c = build_correspondences(m, truth.theta, beta, truth.cameras, truth.masks, cfg);
  std::vector<std::set<std::pair<double, double>>> boundary(truth.masks.size());
  for (size_t v = 0; v < truth.masks.size(); ++v)
    for (const auto& p : boundary_points(truth.masks[v])) boundary[v].insert({p.x(), p.y()});
  for (const auto& p : c.pairs2d) CHECK(boundary[p.view].count({p.boundary_point.x(), p.boundary_point.y()}) == 1);
  const PosedBody body = pose_body(m, truth.theta, beta, VertexOffsets::zeros(m.num_vertices()));
  const Vec3 extent = body.mesh.vertices.colwise().maxCoeff() - body.mesh.vertices.colwise().minCoeff();
  for (const auto& p : c.pairs3d) {
    CHECK(std::abs(p.canonical_line.direction.norm() - 1.0) < 1e-12);
    CHECK(std::abs(p.canonical_line.direction.dot(p.canonical_line.moment)) < 1e-12);
    CHECK(p.residual <= cfg.distance_threshold * extent.norm() + 1e-15);
  }
  for (size_t i = 1; i < c.pairs2d.size(); ++i) {
    const auto& a = c.pairs2d[i - 1];
    const auto& b = c.pairs2d[i];
    CHECK(std::make_pair(a.view, a.vertex) < std::make_pair(b.view, b.vertex));
  }
  const CorrespondenceSet again = build_correspondences(m, truth.theta, beta, truth.cameras, truth.masks, cfg);
  CHECK(same_pairs(c, again));
}

TEST_CASE("an empty mask contributes no pairs for its view") {
  const BodyModel& m = bodyfit::testing::toy_body();
  SyntheticScene s = bodyfit::testing::toy_scene(106);
  s.masks[2] = SilhouetteMask::empty(s.masks[2].width, s.masks[2].height);
  const CorrespondenceSet c = build_correspondences(m, s.theta, s.beta, s.cameras, s.masks, PairingConfig{});
  CHECK(std::none_of(c.pairs2d.begin(), c.pairs2d.end(), [](const auto& p) { return p.view == 2; }));
  CHECK(std::none_of(c.pairs3d.begin(), c.pairs3d.end(), [](const auto& p) { return p.view == 2; }));
  CHECK(std::any_of(c.pairs3d.begin(), c.pairs3d.end(), [](const auto& p) { return p.view == 1; }));
  REQUIRE(c.warnings.size() == 1);
  CHECK(c.warnings[0].find("view 2") != std::string::npos);
}

TEST_CASE("a sphere against its own render pairs most contour vertices") {
  const SphereRig rig = sphere_rig();
  const PairingConfig cfg;
  const CorrespondenceSet c = build_correspondences(rig.model, PoseParams::zeros(1), ShapeParams::zeros(1),
                                                    rig.cameras, rig.masks, cfg);
  const Mesh mesh = skin(rig.model, PoseParams::zeros(1), ShapeParams::zeros(1), VertexOffsets::zeros(rig.model.num_vertices()));
  for (size_t v = 0; v < rig.cameras.size(); ++v) {
    const auto contour = contour_vertices(mesh, rig.cameras[v], rasterize_silhouette(mesh, rig.cameras[v]).depth, cfg);
    const auto pairs = std::count_if(c.pairs3d.begin(), c.pairs3d.end(), [&](const auto& p) { return p.view == static_cast<int>(v); });
    CHECK(static_cast<double>(pairs) >= 0.8 * contour.size());
    CHECK(static_cast<double>(pairs) <= 1.2 * contour.size());
  }
}

TEST_CASE("pairing is local") {
  const BodyModel& m = bodyfit::testing::toy_body();
  const SyntheticScene s = bodyfit::testing::toy_scene(107);
  const PairingConfig cfg;
  const CorrespondenceSet a = build_correspondences(m, s.theta, s.beta, s.cameras, s.masks, cfg);
  std::vector<SilhouetteMask> masks = s.masks;
  const int bx = 5, by = 5, size = 12;
  for (int y = by; y < by + size; ++y)
    for (int x = bx; x < bx + size; ++x) masks[0].set(x, y, true);
  const CorrespondenceSet b = build_correspondences(m, s.theta, s.beta, s.cameras, masks, cfg);
  const PosedBody body = pose_body(m, s.theta, s.beta, VertexOffsets::zeros(m.num_vertices()));
  auto far = [&](const Correspondence2D& p) {
    if (p.view != 0) return true;
    const Vec2 u = project(s.cameras[0], body.mesh.vertices.row(p.vertex).transpose());
    const double dx = std::max({bx - u.x(), 0.0, u.x() - (bx + size)});
    const double dy = std::max({by - u.y(), 0.0, u.y() - (by + size)});
    return std::hypot(dx, dy) > 20.0;
  };
  CorrespondenceSet fa, fb;
  for (const auto& p : a.pairs2d) if (far(p)) fa.pairs2d.push_back(p);
  for (const auto& p : b.pairs2d) if (far(p)) fb.pairs2d.push_back(p);
  CHECK(fa.pairs2d.size() > 100);
  CHECK(same_pairs(fa, fb));
}

TEST_CASE("pairing config validation") {
  PairingConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.distance_threshold = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.max_pairs_per_vertex = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("debug dump lists every pair") {
  const BodyModel& m = bodyfit::testing::toy_body();
  const SyntheticScene s = bodyfit::testing::toy_scene(108);
  const CorrespondenceSet c = build_correspondences(m, s.theta, s.beta, s.cameras, s.masks, PairingConfig{});
  const PosedBody body = pose_body(m, s.theta, s.beta, VertexOffsets::zeros(m.num_vertices()));
  const std::string dump = correspondences_to_json(c, body, s.cameras);
  CHECK(dump.find("\"pairs3d\"") != std::string::npos);
  CHECK(dump.find("\"boundary_uv\"") != std::string::npos);
}

}  // TEST_SUITE

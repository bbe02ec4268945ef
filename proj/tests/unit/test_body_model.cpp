#include <doctest.h>

#include <cmath>
#include <numbers>

#include "bodyfit/body_model.hpp"
#include "bodyfit/errors.hpp"
#include "support/oracles.hpp"
#include "support/test_support.hpp"

using namespace bodyfit;
using bodyfit::testing::Rng;

namespace {

const char* kMinimalModel = R"({
  "version": 1, "V": 4, "K": 1, "S": 1,
  "template": [[0,0,0],[1,0,0],[0,1,0],[0,0,1]],
  "faces": [[0,1,2],[0,2,3],[0,3,1],[1,3,2]],
  "shape_dirs": [0,0,0, 0.1,0,0, 0,0.1,0, 0,0,0.1],
  "pose_dirs": [],
  "joint_regressor": [[0.25,0.25,0.25,0.25]],
  "skin_weights": [[1],[1],[1],[1]],
  "parent": [-1],
  "joint_names": ["root"]
})";

}  // namespace

TEST_SUITE("body_model") {

TEST_CASE("minimal four-vertex single-joint document loads") {
  const BodyModel m = load_model(kMinimalModel);
  CHECK(m.num_vertices() == 4);
  CHECK(m.num_joints() == 1);
  CHECK(m.num_shape() == 1);
  CHECK_FALSE(m.has_pose_dirs());
}

TEST_CASE("skin weight row summing to 0.8 is rejected") {
  std::string doc = kMinimalModel;
  doc.replace(doc.find("[[1],[1],[1],[1]]"), 17, "[[1],[0.8],[1],[1]]");
  CHECK_THROWS_AS(load_model(doc), InvariantError);
  try {
    load_model(doc);
  } catch (const InvariantError& e) {
    CHECK(std::string(e.what()).find('1') != std::string::npos);
  }
}

TEST_CASE("schema violations are parse errors") {
  CHECK_THROWS_AS(load_model("not json"), ParseError);
  CHECK_THROWS_AS(load_model("[1,2]"), ParseError);
  std::string doc = kMinimalModel;
  doc.replace(doc.find("\"parent\": [-1]"), 14, "\"parent\": []");
  CHECK_THROWS_AS(load_model(doc), ParseError);
}

TEST_CASE("face index out of range and cyclic parents are invariant errors") {
  BodyModel m = load_model(kMinimalModel);
  m.faces(0, 1) = 4;
  CHECK_THROWS_AS(check_model(m), InvariantError);
  BodyModel c = bodyfit::testing::chain_model();
  c.parent = {1, 0};
  CHECK_THROWS_AS(check_model(c), InvariantError);
  CHECK_FALSE(audit_model(c).empty());
}

TEST_CASE("toy model round-trips through save and load bit-identically") {
  const BodyModel m = make_toy_model(1, 600, 16, 10);
  const std::string text = save_model(m);
  const BodyModel back = load_model(text);
  CHECK(back.template_vertices == m.template_vertices);
  CHECK(back.faces == m.faces);
  CHECK(back.shape_dirs == m.shape_dirs);
  CHECK(back.pose_dirs == m.pose_dirs);
  CHECK(back.joint_regressor == m.joint_regressor);
  CHECK(back.skin_weights == m.skin_weights);
  CHECK(back.parent == m.parent);
  CHECK(back.joint_names == m.joint_names);
  CHECK(save_model(back) == text);
}

TEST_CASE("toy model is deterministic and valid") {
  const BodyModel a = make_toy_model(1, 600, 16, 10);
  const BodyModel b = make_toy_model(1, 600, 16, 10);
  CHECK(save_model(a) == save_model(b));
  CHECK(audit_model(a).empty());
  CHECK(audit_model(bodyfit::testing::toy_body()).empty());
  for (const char* name : {"left_elbow", "right_elbow", "left_knee", "right_knee"}) {
    CHECK(a.joint_index(name) >= 0);
  }
  CHECK(save_model(make_toy_model(2, 600, 16, 10)) != save_model(a));
}

TEST_CASE("single-joint toy model is rigid") {
  const BodyModel m = make_toy_model(1, 8, 1, 1);
  CHECK(audit_model(m).empty());
  CHECK(m.num_joints() == 1);
  CHECK((m.skin_weights.array() == 1.0).all());
}

TEST_CASE("toy model parameter bounds") {
  CHECK_THROWS(make_toy_model(1, 4, 1, 1));
  CHECK_THROWS(make_toy_model(1, 600, 25, 10));
  CHECK_THROWS(make_toy_model(1, 600, 16, 0));
}

TEST_CASE("shape blend is linear with basis columns as directions") {
  const BodyModel& m = bodyfit::testing::toy_body();
  Rng rng(31);
  CHECK(shape_blend(m, ShapeParams::zeros(m.num_shape())).isZero(0.0));
  for (int i = 0; i < m.num_shape(); ++i) {
    ShapeParams e = ShapeParams::zeros(m.num_shape());
    e.beta(i) = 1.0;
    const Points3 b = shape_blend(m, e);
    const Eigen::VectorXd flat = Eigen::Map<const Eigen::VectorXd>(b.data(), b.size());
    CHECK(flat == m.shape_dirs.col(i));
  }
  for (int t = 0; t < 20; ++t) {
    const ShapeParams a{rng.vector(m.num_shape(), 2)}, b{rng.vector(m.num_shape(), 2)};
    const Points3 sum = shape_blend(m, ShapeParams{a.beta + b.beta});
    CHECK((sum - shape_blend(m, a) - shape_blend(m, b)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((shape_blend(m, ShapeParams{3.0 * a.beta}) - 3.0 * shape_blend(m, a)).cwiseAbs().maxCoeff() < 1e-12);
  }
  CHECK_THROWS_AS(shape_blend(m, ShapeParams::zeros(m.num_shape() + 1)), DimensionError);
}

TEST_CASE("pose blend equals the explicit feature product") {
  const BodyModel m = bodyfit::testing::chain_model();
  CHECK(pose_blend(m, PoseParams::zeros(2)).isZero(0.0));
  Rng rng(32);
  for (int t = 0; t < 50; ++t) {
    const PoseParams theta = rng.pose(2, 2.5);
    const Mat3 r = Eigen::AngleAxisd(theta.joint(1).norm(), theta.joint(1).normalized()).toRotationMatrix();
    Eigen::VectorXd f(9);
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) f(3 * a + b) = r(a, b) - (a == b ? 1.0 : 0.0);
    const Eigen::VectorXd expected = m.pose_dirs * f;
    const Points3 got = pose_blend(m, theta);
    CHECK((Eigen::Map<const Eigen::VectorXd>(got.data(), got.size()) - expected).cwiseAbs().maxCoeff() < 1e-12);
  }
  PoseParams root_only = PoseParams::zeros(2);
  root_only.theta.row(0) << 0.4, -1.0, 2.0;
  CHECK(pose_blend(m, root_only).isZero(0.0));
  const BodyModel flat = bodyfit::testing::chain_model(2, false);
  CHECK(pose_blend(flat, rng.pose(2, 2.0)).isZero(0.0));
  CHECK_THROWS_AS(pose_blend(m, PoseParams::zeros(3)), DimensionError);
}

TEST_CASE("rest joints match the brute-force regressor sum") {
  const BodyModel& m = bodyfit::testing::toy_body();
  Rng rng(33);
  const Points3 j0 = joints_rest(m, ShapeParams::zeros(m.num_shape()));
  CHECK((j0 - Points3(m.joint_regressor * m.template_vertices)).cwiseAbs().maxCoeff() < 1e-12);
  for (int t = 0; t < 10; ++t) {
    const ShapeParams beta{rng.vector(m.num_shape(), 2)};
    const Points3 shaped = m.template_vertices + shape_blend(m, beta);
    const Points3 j = joints_rest(m, beta);
    for (int k = 0; k < m.num_joints(); ++k) {
      Vec3 acc = Vec3::Zero();
      for (int i = 0; i < m.num_vertices(); ++i) acc += m.joint_regressor(k, i) * shaped.row(i).transpose();
      CHECK((j.row(k).transpose() - acc).norm() < 1e-12);
    }
  }
  const Mesh cube = bodyfit::testing::cube_mesh(0.5, Vec3(1, 2, 3));
  const BodyModel rigid = bodyfit::testing::rigid_model(cube);
  const Points3 c = joints_rest(rigid, ShapeParams{Eigen::VectorXd::Constant(1, 1.0)});
  CHECK((c.row(0).transpose() - 1.1 * Vec3(1, 2, 3)).norm() < 1e-12);
}

TEST_CASE("zero pose gives identity transforms") {
  const BodyModel& m = bodyfit::testing::toy_body();
  Rng rng(34);
  for (const auto& g : global_transforms(m, PoseParams::zeros(m.num_joints()), ShapeParams{rng.vector(m.num_shape(), 2)})) {
    CHECK(g.matrix() == Eigen::Matrix4d::Identity());
  }
}

TEST_CASE("two-link chain with the child turned a quarter about z") {
  const BodyModel m = bodyfit::testing::chain_model(2, false);
  const ShapeParams beta = ShapeParams::zeros(2);
  PoseParams theta = PoseParams::zeros(2);
  theta.theta.row(1) << 0, 0, std::numbers::pi / 2;
  const auto g = global_transforms(m, theta, beta);
  const Points3 rest = joints_rest(m, beta);
  const Vec3 c = rest.row(1).transpose();
  const Vec3 p = c + Vec3(1, 0, 0);
  CHECK((g[1] * p - (c + Vec3(0, 1, 0))).norm() < 1e-14);
  CHECK((g[1] * c - c).norm() < 1e-14);
  CHECK(g[0].matrix() == Eigen::Matrix4d::Identity());
}

TEST_CASE("global transforms equal the product of per-link transforms and stay rigid") {
  const BodyModel& m = bodyfit::testing::toy_body();
  Rng rng(35);
  for (int t = 0; t < 20; ++t) {
    const ShapeParams beta{rng.vector(m.num_shape(), 2)};
    const PoseParams theta = rng.pose(m.num_joints(), 2.0);
    const auto g = global_transforms(m, theta, beta);
    const Points3 rest = joints_rest(m, beta);
    for (int k = 0; k < m.num_joints(); ++k) {
      CHECK((g[k].matrix() - bodyfit::testing::chain_transform_oracle(m, theta, rest, k)).cwiseAbs().maxCoeff() < 1e-12);
      const Mat3 r = g[k].linear();
      CHECK((r * r.transpose() - Mat3::Identity()).norm() < 1e-12);
      CHECK(r.determinant() == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("kinematic order puts parents first") {
  const BodyModel& m = bodyfit::testing::toy_body();
  const auto order = kinematic_order(m.parent);
  std::vector<int> pos(order.size());
  for (size_t i = 0; i < order.size(); ++i) pos[order[i]] = static_cast<int>(i);
  CHECK(order.size() == m.parent.size());
  for (int k = 1; k < m.num_joints(); ++k) CHECK(pos[m.parent[k]] < pos[k]);
}

TEST_CASE("zero configuration reproduces the template exactly") {
  for (const BodyModel* m : {&bodyfit::testing::toy_body()}) {
    const Mesh mesh = skin(*m, PoseParams::zeros(m->num_joints()), ShapeParams::zeros(m->num_shape()),
                           VertexOffsets::zeros(m->num_vertices()));
    CHECK(mesh.vertices == m->template_vertices);
    CHECK(mesh.faces == m->faces);
  }
  const BodyModel c = bodyfit::testing::chain_model();
  CHECK(skin(c, PoseParams::zeros(2), ShapeParams::zeros(2), VertexOffsets::zeros(10)).vertices == c.template_vertices);
}

TEST_CASE("zero pose returns template plus shape plus offsets") {
  const BodyModel& m = bodyfit::testing::toy_body();
  Rng rng(36);
  const ShapeParams beta{rng.vector(m.num_shape(), 2)};
  VertexOffsets d{Points3(m.num_vertices(), 3)};
  for (int i = 0; i < m.num_vertices(); ++i) d.d.row(i) = rng.vec3(0.01).transpose();
  const Mesh mesh = skin(m, PoseParams::zeros(m.num_joints()), beta, d);
  CHECK((mesh.vertices - (m.template_vertices + shape_blend(m, beta) + d.d)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("skinning matches the per-vertex brute-force sum") {
  Rng rng(37);
  const BodyModel& toy = bodyfit::testing::toy_body();
  for (int t = 0; t < 100; ++t) {
    const BodyModel chain = bodyfit::testing::chain_model(3, true, 100 + t);
    const BodyModel& m = t % 2 ? toy : chain;
    const ShapeParams beta{rng.vector(m.num_shape(), 2)};
    const PoseParams theta = rng.pose(m.num_joints(), 2.5);
    VertexOffsets d{Points3(m.num_vertices(), 3)};
    for (int i = 0; i < m.num_vertices(); ++i) d.d.row(i) = rng.vec3(0.02).transpose();
    const Mesh mesh = skin(m, theta, beta, d);
    CHECK((mesh.vertices - bodyfit::testing::brute_force_skin(m, theta, beta, d)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("rigid model rotates about its joint") {
  const Mesh cube = bodyfit::testing::cube_mesh(0.5, Vec3(0.2, 0.1, -0.3));
  const BodyModel m = bodyfit::testing::rigid_model(cube);
  Rng rng(38);
  for (int t = 0; t < 20; ++t) {
    PoseParams theta = PoseParams::zeros(1);
    theta.theta.row(0) = rng.rotation(3.0).transpose();
    const Mat3 r = rodrigues(theta.joint(0));
    const Vec3 c = joints_rest(m, ShapeParams::zeros(1)).row(0).transpose();
    const Mesh mesh = skin(m, theta, ShapeParams::zeros(1), VertexOffsets::zeros(8));
    for (int i = 0; i < 8; ++i) {
      const Vec3 expected = r * (m.template_vertices.row(i).transpose() - c) + c;
      CHECK((mesh.vertices.row(i).transpose() - expected).norm() < 1e-12);
    }
  }
}

TEST_CASE("pre-rotating the root equals rotating the skinned mesh about the root joint") {
  const BodyModel& m = bodyfit::testing::toy_body();
  Rng rng(39);
  for (int t = 0; t < 20; ++t) {
    const ShapeParams beta{rng.vector(m.num_shape(), 2)};
    PoseParams theta = rng.pose(m.num_joints(), 1.0);
    const Mat3 r = rodrigues(rng.rotation(3.0));
    const Vec3 root = joints_rest(m, beta).row(0).transpose();
    const Mesh base = skin(m, theta, beta, VertexOffsets::zeros(m.num_vertices()));
    theta.theta.row(0) = rodrigues_inv(r * rodrigues(theta.joint(0))).transpose();
    const Mesh turned = skin(m, theta, beta, VertexOffsets::zeros(m.num_vertices()));
    double worst = 0.0;
    for (int i = 0; i < m.num_vertices(); ++i) {
      const Vec3 expected = r * (base.vertices.row(i).transpose() - root) + root;
      worst = std::max(worst, (turned.vertices.row(i).transpose() - expected).norm());
    }
    CHECK(worst < 1e-9);
  }
}

TEST_CASE("skinning is affine in the offsets") {
  const BodyModel& m = bodyfit::testing::toy_body();
  Rng rng(40);
  const ShapeParams beta{rng.vector(m.num_shape(), 1)};
  const PoseParams theta = rng.pose(m.num_joints(), 1.0);
  VertexOffsets d1{Points3(m.num_vertices(), 3)}, d2{Points3(m.num_vertices(), 3)};
  for (int i = 0; i < m.num_vertices(); ++i) {
    d1.d.row(i) = rng.vec3(0.02).transpose();
    d2.d.row(i) = rng.vec3(0.02).transpose();
  }
  const Points3 s0 = skin(m, theta, beta, VertexOffsets::zeros(m.num_vertices())).vertices;
  const Points3 s1 = skin(m, theta, beta, d1).vertices;
  const Points3 s2 = skin(m, theta, beta, d2).vertices;
  const Points3 s12 = skin(m, theta, beta, VertexOffsets{d1.d + d2.d}).vertices;
  CHECK((s12 - (s1 + s2 - s0)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("skinned normals are unit length") {
  const BodyModel& m = bodyfit::testing::toy_body();
  Rng rng(41);
  const Mesh mesh = skin(m, rng.pose(m.num_joints(), 0.5), ShapeParams::zeros(m.num_shape()),
                         VertexOffsets::zeros(m.num_vertices()));
  REQUIRE(mesh.has_normals());
  CHECK((mesh.normals.rowwise().norm().array() - 1.0).abs().maxCoeff() < 1e-12);
}

TEST_CASE("unposing at zero pose leaves the ray unchanged") {
  const BodyModel& m = bodyfit::testing::toy_body();
  const Ray r{Vec3(0.1, 0.2, 3.0), Vec3(0.0, 0.6, -0.8)};
  for (int i : {0, 17, m.num_vertices() - 1}) {
    const Ray u = unpose_ray(m, PoseParams::zeros(m.num_joints()), ShapeParams::zeros(m.num_shape()), i, r);
    CHECK((u.origin - r.origin).norm() < 1e-15);
    CHECK((u.direction - r.direction).norm() < 1e-15);
  }
}

TEST_CASE("rigid model unposes by the inverse rotation") {
  const Mesh cube = bodyfit::testing::cube_mesh(0.5);
  const BodyModel m = bodyfit::testing::rigid_model(cube);
  Rng rng(42);
  PoseParams theta = PoseParams::zeros(1);
  theta.theta.row(0) = rng.rotation().transpose();
  const Mat3 r = rodrigues(theta.joint(0));
  const Ray ray{rng.vec3(), rng.unit()};
  const Ray u = unpose_ray(m, theta, ShapeParams::zeros(1), 3, ray);
  CHECK((u.direction - r.transpose() * ray.direction).norm() < 1e-12);
  CHECK((u.origin - r.transpose() * ray.origin).norm() < 1e-12);
}

TEST_CASE("unpose then re-pose round trip") {
  const BodyModel& m = bodyfit::testing::toy_body();
  Rng rng(43);
  for (int t = 0; t < 20; ++t) {
    const ShapeParams beta{rng.vector(m.num_shape(), 2)};
    const PoseParams theta = rng.pose(m.num_joints(), 1.0);
    const PosedBody body = pose_body(m, theta, beta, VertexOffsets::zeros(m.num_vertices()));
    for (int s = 0; s < 20; ++s) {
      const int i = rng.integer(0, m.num_vertices() - 1);
      const Ray ray{rng.vec3(3), rng.unit()};
      Ray u;
      try {
        u = unpose_ray(m, theta, beta, i, ray);
      } catch (const DegenerateSkinningError&) {
        continue;
      }
      const Ray v = unpose_ray(body, i, ray);
      CHECK((u.origin - v.origin).norm() < 1e-12);
      const Eigen::Affine3d a = body.vertex_transform(i);
      const Vec3 origin = a * (u.origin + body.pose_offsets.row(i).transpose());
      const Vec3 dir = (a.linear() * u.direction).normalized();
      CHECK((origin - ray.origin).norm() < 1e-9);
      CHECK((dir - ray.direction).norm() < 1e-9);
      CHECK(std::abs(u.direction.norm() - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("singular blended transforms are rejected") {
  Eigen::Affine3d a = Eigen::Affine3d::Identity();
  a.linear() = Mat3::Zero();
  CHECK_THROWS_AS(invert_skinning_transform(a), DegenerateSkinningError);
  a.linear() = Eigen::Vector3d(1, 1, 1e-10).asDiagonal();
  CHECK_THROWS_AS(invert_skinning_transform(a), DegenerateSkinningError);
  // Opposite half-turns blended 50/50 collapse to a projection.
  BodyModel m = bodyfit::testing::chain_model(2, false);
  m.skin_weights.row(0) << 0.5, 0.5;
  PoseParams theta = PoseParams::zeros(2);
  theta.theta.row(1) << 0, 0, std::numbers::pi;
  CHECK_THROWS_AS(unpose_ray(m, theta, ShapeParams::zeros(2), 0, Ray{}), DegenerateSkinningError);
}

}  // TEST_SUITE

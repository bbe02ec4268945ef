#include "bodyfit/shape_fit.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "bodyfit/errors.hpp"

namespace bodyfit {

namespace {

constexpr double kClampFactor = 10.0;

// Fixed summation order, so equal inputs give bit-equal outputs.
Points3 apply_laplacian(const LaplacianOperator& laplacian, const Points3& x) {
  Points3 out = Points3::Zero(x.rows(), 3);
  for (int k = 0; k < laplacian.matrix.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(laplacian.matrix, k); it; ++it) {
      out.row(it.row()) += it.value() * x.row(it.col());
    }
  }
  return out;
}

void require_offsets(const BodyModel& model, const VertexOffsets& d) {
  if (d.d.rows() != model.num_vertices()) {
    throw DimensionError("offsets have " + std::to_string(d.d.rows()) + " rows, model has " +
                         std::to_string(model.num_vertices()) + " vertices");
  }
}

}  // namespace

LaplacianOperator build_laplacian(const Faces& faces, int num_vertices) {
  std::vector<std::set<int>> nbrs(num_vertices);
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    for (int e = 0; e < 3; ++e) {
      const int a = faces(f, e);
      const int b = faces(f, (e + 1) % 3);
      if (a < 0 || b < 0 || a >= num_vertices || b >= num_vertices) {
        throw DimensionError("build_laplacian: face index out of range");
      }
      if (a == b) continue;
      nbrs[a].insert(b);
      nbrs[b].insert(a);
    }
  }
  LaplacianOperator L;
  std::vector<Eigen::Triplet<double>> t;
  for (int i = 0; i < num_vertices; ++i) {
    if (nbrs[i].empty()) {
      L.isolated.push_back(i);
      continue;
    }
    const double inv = 1.0 / static_cast<double>(nbrs[i].size());
    t.emplace_back(i, i, 1.0);
    for (int j : nbrs[i]) t.emplace_back(i, j, -inv);
  }
  L.matrix.resize(num_vertices, num_vertices);
  L.matrix.setFromTriplets(t.begin(), t.end());
  return L;
}

LaplacianOperator build_laplacian(const Mesh& mesh) {
  return build_laplacian(mesh.faces, static_cast<int>(mesh.vertices.rows()));
}

// ---------------------------------------------------------------------------
// ShapeEnergy
// ---------------------------------------------------------------------------

ShapeEnergy::ShapeEnergy(const BodyModel& model, const PoseParams& theta,
                         std::vector<CameraParams> cameras)
    : model_(&model), cameras_(std::move(cameras)) {
  const int V = model.num_vertices();
  const int K = model.num_joints();
  const int S = model.num_shape();
  const ShapeParams zero = ShapeParams::zeros(S);
  const PosedBody body = pose_body(model, theta, zero, VertexOffsets::zeros(V));

  for (const auto& c : cameras_) centers_.push_back(camera_center(c));
  linear_.resize(V);
  inverse_.resize(V);
  translation0_.resize(V, 3);
  for (int i = 0; i < V; ++i) {
    const Eigen::Affine3d A = body.vertex_transform(i);
    linear_[i] = A.linear();
    inverse_[i] = invert_skinning_transform(A).linear();
    translation0_.row(i) = A.translation().transpose();
  }
  pose_offsets_ = body.pose_offsets;

  // Joint and transform translations are linear in beta once theta is fixed.
  Eigen::MatrixXd joint_dirs = Eigen::MatrixXd::Zero(3 * K, S);
  for (int k = 0; k < K; ++k) {
    for (int i = 0; i < V; ++i) {
      const double w = model.joint_regressor(k, i);
      if (w != 0.0) joint_dirs.middleRows(3 * k, 3) += w * model.shape_dirs.middleRows(3 * i, 3);
    }
  }
  const auto& Rw = body.kinematics.world_rotations;
  Eigen::MatrixXd posed_dirs(3 * K, S);
  Eigen::MatrixXd tau_dirs(3 * K, S);
  for (int k : kinematic_order(model.parent)) {
    const int p = model.parent[k];
    if (p == kRootParent) {
      posed_dirs.middleRows(3 * k, 3) = joint_dirs.middleRows(3 * k, 3);
    } else {
      posed_dirs.middleRows(3 * k, 3) =
          posed_dirs.middleRows(3 * p, 3) +
          Rw[p] * (joint_dirs.middleRows(3 * k, 3) - joint_dirs.middleRows(3 * p, 3));
    }
    tau_dirs.middleRows(3 * k, 3) = posed_dirs.middleRows(3 * k, 3) - Rw[k] * joint_dirs.middleRows(3 * k, 3);
  }
  translation_dirs_ = Eigen::MatrixXd::Zero(3 * V, S);
  for (int i = 0; i < V; ++i) {
    for (int k = 0; k < K; ++k) {
      const double w = model.skin_weights(i, k);
      if (w != 0.0) translation_dirs_.middleRows(3 * i, 3) += w * tau_dirs.middleRows(3 * k, 3);
    }
  }
}

Eigen::VectorXd ShapeEnergy::pack(const ShapeParams& beta, const VertexOffsets& d) const {
  if (beta.beta.size() != shape_size() || d.d.rows() != num_vertices()) {
    throw DimensionError("ShapeEnergy::pack: parameter sizes do not match the model");
  }
  Eigen::VectorXd x(num_parameters());
  x.head(shape_size()) = beta.beta;
  x.tail(3 * num_vertices()) = d.flat();
  return x;
}

void ShapeEnergy::unpack(const Eigen::VectorXd& x, ShapeParams& beta, VertexOffsets& d) const {
  if (x.size() != num_parameters()) throw DimensionError("ShapeEnergy::unpack: wrong vector size");
  beta.beta = x.head(shape_size());
  d = VertexOffsets::zeros(num_vertices());
  d.flat() = x.tail(3 * num_vertices());
}

Vec3 ShapeEnergy::canonical_vertex(const Eigen::VectorXd& x, int i) const {
  return model_->template_vertices.row(i).transpose() +
         model_->shape_dirs.middleRows(3 * i, 3) * x.head(shape_size()) +
         x.segment<3>(shape_size() + 3 * i);
}

Vec3 ShapeEnergy::translation(const Eigen::VectorXd& x, int i) const {
  return translation0_.row(i).transpose() +
         translation_dirs_.middleRows(3 * i, 3) * x.head(shape_size());
}

void ShapeEnergy::add_silhouette_residuals(const Eigen::VectorXd& x,
                                           const std::vector<Correspondence3D>& p3,
                                           const std::vector<Correspondence2D>& p2,
                                           double sigma_3d, double sigma_2d, double data_scale,
                                           ResidualBuilder& out, bool with_jacobian) const {
  const int S = shape_size();
  const int V = num_vertices();
  auto check = [&](int vertex, int view) {
    if (vertex < 0 || vertex >= V || view < 0 || view >= static_cast<int>(cameras_.size())) {
      throw DimensionError("correspondence references an invalid vertex or view");
    }
  };
  auto columns = [&](int vertex) {
    std::vector<int> cols(S + 3);
    for (int s = 0; s < S; ++s) cols[s] = s;
    for (int c = 0; c < 3; ++c) cols[S + c] = S + 3 * vertex + c;
    return cols;
  };

  for (const auto& p : p3) {
    check(p.vertex, p.view);
    const int i = p.vertex;
    const Vec3 xi = canonical_vertex(x, i);
    const Vec3 tau = translation(x, i);
    const Vec3 c = inverse_[i] * (centers_[p.view] - tau) - pose_offsets_.row(i).transpose();
    const Vec3 u = xi - c;
    const double len = u.norm();
    if (len == 0.0) throw NumericError("silhouette term: vertex coincides with the camera centre");
    const Vec3 n = u / len;
    const Vec3 a = p.canonical_point - c;
    Eigen::VectorXd r = a.cross(n);
    if (!with_jacobian) {
      Eigen::MatrixXd none(3, 0);
      robustify_group(r, none, data_scale, sigma_3d);
      out.add_constant(r);
      continue;
    }
    // r = (V - c') x n with n = normalize(x - c').
    const Mat3 P = (Mat3::Identity() - n * n.transpose()) / len;
    Eigen::MatrixXd dc(3, S + 3), dx(3, S + 3);
    dc.leftCols(S) = -inverse_[i] * translation_dirs_.middleRows(3 * i, 3);
    dc.rightCols(3).setZero();
    dx.leftCols(S) = model_->shape_dirs.middleRows(3 * i, 3);
    dx.rightCols(3).setIdentity();
    const Eigen::MatrixXd dn = P * (dx - dc);
    Eigen::MatrixXd J = skew(n) * dc + skew(a) * dn;
    robustify_group(r, J, data_scale, sigma_3d);
    out.add(r, J, columns(i));
  }

  for (const auto& p : p2) {
    check(p.vertex, p.view);
    const int i = p.vertex;
    const CameraParams& cam = cameras_[p.view];
    const Vec3 X = linear_[i] * (canonical_vertex(x, i) + pose_offsets_.row(i).transpose()) +
                   translation(x, i);
    if (cam.to_camera(X).z() <= kMinDepth) {
      Eigen::VectorXd e = Vec2(kClampFactor * sigma_2d, 0.0);
      Eigen::MatrixXd none(2, 0);
      robustify_group(e, none, data_scale, sigma_2d);
      out.add_constant(e);
      continue;
    }
    Eigen::Matrix<double, 2, 3> dp;
    Eigen::VectorXd e = p.target - project_with_jacobian(cam, X, with_jacobian ? &dp : nullptr, nullptr);
    if (!with_jacobian) {
      Eigen::MatrixXd none(2, 0);
      robustify_group(e, none, data_scale, sigma_2d);
      out.add_constant(e);
      continue;
    }
    Eigen::MatrixXd J(2, S + 3);
    J.leftCols(S) = -dp * (linear_[i] * model_->shape_dirs.middleRows(3 * i, 3) +
                           translation_dirs_.middleRows(3 * i, 3));
    J.rightCols(3) = -dp * linear_[i];
    robustify_group(e, J, data_scale, sigma_2d);
    out.add(e, J, columns(i));
  }
}

void ShapeEnergy::add_laplacian_residuals(const Eigen::VectorXd& x,
                                          const LaplacianOperator& laplacian, double weight,
                                          ResidualBuilder& out, bool with_jacobian) const {
  if (weight <= 0.0) return;
  const int V = num_vertices();
  const int S = shape_size();
  if (laplacian.matrix.rows() != V) throw DimensionError("Laplacian size does not match the model");
  const double scale = std::sqrt(weight);
  Points3 with_d(V, 3), without_d(V, 3);
  for (int i = 0; i < V; ++i) {
    const Vec3 xi = canonical_vertex(x, i);
    with_d.row(i) = xi.transpose();
    without_d.row(i) = (xi - x.segment<3>(S + 3 * i)).transpose();
  }
  const Points3 diff = apply_laplacian(laplacian, with_d) - apply_laplacian(laplacian, without_d);
  Eigen::VectorXd r(3 * V);
  for (int i = 0; i < V; ++i) r.segment<3>(3 * i) = scale * diff.row(i).transpose();
  const int row0 = out.append_rows(r);
  if (!with_jacobian) return;
  // beta cancels between the two terms; only D has a derivative.
  for (int k = 0; k < laplacian.matrix.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(laplacian.matrix, k); it; ++it) {
      for (int c = 0; c < 3; ++c) {
        out.add_entry(row0 + 3 * static_cast<int>(it.row()) + c, S + 3 * static_cast<int>(it.col()) + c,
                      scale * it.value());
      }
    }
  }
}

void ShapeEnergy::add_body_residuals(const Eigen::VectorXd& x, double weight, ResidualBuilder& out,
                                     bool with_jacobian) const {
  if (weight <= 0.0) return;
  const int S = shape_size();
  const double scale = std::sqrt(weight);
  const int n = 3 * num_vertices();
  const int row0 = out.append_rows(scale * x.tail(n));
  if (!with_jacobian) return;
  for (int j = 0; j < n; ++j) out.add_entry(row0 + j, S + j, scale);
}

// ---------------------------------------------------------------------------
// Term functions
// ---------------------------------------------------------------------------

SilhouetteTermResult silhouette_term(const BodyModel& model, const PoseParams& theta,
                                     const ShapeParams& beta, const VertexOffsets& d,
                                     const std::vector<Correspondence3D>& pairs3d,
                                     const std::vector<Correspondence2D>& pairs2d,
                                     const std::vector<CameraParams>& cameras,
                                     const ShapeEnergyWeights& weights) {
  require_offsets(model, d);
  const ShapeEnergy energy(model, theta, cameras);
  const Eigen::VectorXd x = energy.pack(beta, d);
  SilhouetteTermResult out;
  for (const auto& p : pairs3d) {
    ResidualBuilder b(energy.num_parameters());
    energy.add_silhouette_residuals(x, {p}, {}, weights.sigma_3d, weights.sigma_2d, 1.0, b, false);
    out.values3d.push_back(b.residuals().squaredNorm());
    out.energy += out.values3d.back();
  }
  for (const auto& p : pairs2d) {
    ResidualBuilder b(energy.num_parameters());
    energy.add_silhouette_residuals(x, {}, {p}, weights.sigma_3d, weights.sigma_2d, 1.0, b, false);
    out.values2d.push_back(b.residuals().squaredNorm());
    out.energy += out.values2d.back();
  }
  return out;
}

double laplacian_term(const BodyModel& model, const ShapeParams& beta, const VertexOffsets& d,
                      const LaplacianOperator& laplacian) {
  require_offsets(model, d);
  const Points3 base = model.template_vertices + shape_blend(model, beta);
  const Points3 with_d = base + d.d;
  const Points3 diff = apply_laplacian(laplacian, with_d) - apply_laplacian(laplacian, base);
  return diff.squaredNorm();
}

double body_term(const BodyModel& model, const ShapeParams& beta, const VertexOffsets& d) {
  require_offsets(model, d);
  const Points3 base = model.template_vertices + shape_blend(model, beta);
  return ((base + d.d) - base).squaredNorm();
}

std::vector<double> view_ious(const Mesh& mesh, const std::vector<CameraParams>& cameras,
                              const std::vector<SilhouetteMask>& masks) {
  if (cameras.size() != masks.size()) throw DimensionError("view_ious: masks do not match cameras");
  std::vector<double> out;
  for (size_t v = 0; v < cameras.size(); ++v) {
    out.push_back(iou(rasterize_silhouette(mesh, cameras[v]).mask, masks[v]));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fitting
// ---------------------------------------------------------------------------

namespace {

class ShapeFitProblem : public LeastSquaresProblem {
 public:
  ShapeFitProblem(const BodyModel& model, const PoseParams& theta,
                  const std::vector<CameraParams>& cameras, const std::vector<SilhouetteMask>& masks,
                  const PairingConfig& cfg, const ShapeFitOptions& options)
      : model_(model),
        theta_(theta),
        masks_(masks),
        cfg_(cfg),
        options_(options),
        energy_(model, theta, cameras),
        laplacian_(build_laplacian(model.faces, model.num_vertices())) {
    if (model.num_shape() > 0) blocks_.push_back({"beta", 0, model.num_shape(), false});
    blocks_.push_back({"offsets", model.num_shape(), 3 * model.num_vertices(), !options.optimize_offsets});
  }

  const ShapeEnergy& energy() const { return energy_; }
  const std::vector<ParameterBlock>& blocks() const override { return blocks_; }

  void begin_stage(const Stage& stage, const Eigen::VectorXd& x) override {
    w_L_ = stage.weight("w_L");
    w_B_ = stage.weight("w_B");
    sigma_3d_ = stage.sigma;
    ShapeParams beta;
    VertexOffsets d;
    energy_.unpack(x, beta, d);
    CorrespondenceSet set =
        build_correspondences(model_, theta_, beta, d, energy_.cameras(), masks_, cfg_);
    if (set.pairs3d.empty() && set.pairs2d.empty()) {
      std::string detail;
      for (const auto& w : set.warnings) detail += "; " + w;
      throw FitError("no silhouette correspondences in any view" + detail);
    }
    pairs3d_ = std::move(set.pairs3d);
    pairs2d_ = std::move(set.pairs2d);
    counts3d.push_back(static_cast<int>(pairs3d_.size()));
    counts2d.push_back(static_cast<int>(pairs2d_.size()));
    warnings.insert(warnings.end(), set.warnings.begin(), set.warnings.end());
  }

  Eigen::VectorXd residuals(const Eigen::VectorXd& x) const override {
    ResidualBuilder b(energy_.num_parameters());
    build(x, b, false);
    return b.residuals();
  }

  void evaluate(const Eigen::VectorXd& x, Eigen::VectorXd& r, SparseMatrix& J) const override {
    ResidualBuilder b(energy_.num_parameters());
    build(x, b, true);
    r = b.residuals();
    J = b.jacobian();
  }

  std::vector<int> counts3d;
  std::vector<int> counts2d;
  std::vector<std::string> warnings;

 private:
  void build(const Eigen::VectorXd& x, ResidualBuilder& b, bool jac) const {
    energy_.add_silhouette_residuals(x, pairs3d_, pairs2d_, sigma_3d_, options_.sigma_2d,
                                     options_.data_scale, b, jac);
    energy_.add_laplacian_residuals(x, laplacian_, w_L_, b, jac);
    energy_.add_body_residuals(x, w_B_, b, jac);
  }

  const BodyModel& model_;
  const PoseParams& theta_;
  const std::vector<SilhouetteMask>& masks_;
  PairingConfig cfg_;
  ShapeFitOptions options_;
  ShapeEnergy energy_;
  LaplacianOperator laplacian_;
  std::vector<ParameterBlock> blocks_;
  std::vector<Correspondence3D> pairs3d_;
  std::vector<Correspondence2D> pairs2d_;
  double w_L_ = 0.0;
  double w_B_ = 0.0;
  double sigma_3d_ = 1.0;
};

}  // namespace

ShapeFitResult fit_shape(const BodyModel& model, const PoseParams& theta,
                         const std::vector<CameraParams>& cameras,
                         const std::vector<SilhouetteMask>& masks, const ShapeParams& beta0,
                         const StageSchedule& schedule, const PairingConfig& cfg,
                         const ShapeFitOptions& options) {
  schedule.validate();
  cfg.validate();
  if (cameras.size() != masks.size()) {
    throw DimensionError("fit_shape: " + std::to_string(masks.size()) + " masks for " +
                         std::to_string(cameras.size()) + " cameras");
  }
  for (size_t v = 0; v < cameras.size(); ++v) {
    cameras[v].validate();
    if (masks[v].width != cameras[v].width || masks[v].height != cameras[v].height) {
      throw DimensionError("view " + std::to_string(v) + ": mask size does not match the camera");
    }
  }
  const VertexOffsets d0 = options.initial_offsets.value_or(VertexOffsets::zeros(model.num_vertices()));
  require_offsets(model, d0);

  ShapeFitProblem problem(model, theta, cameras, masks, cfg, options);
  const Eigen::VectorXd x0 = problem.energy().pack(beta0, d0);

  ShapeFitResult out;
  out.iou_before = view_ious(skin(model, theta, beta0, d0), cameras, masks);
  Eigen::VectorXd x = x0;
  try {
    for (size_t si = 0; si < schedule.stages.size(); ++si) {
      const StageSchedule single{{schedule.stages[si]}};
      for (int round = 0; round < std::max(1, options.rounds_per_stage); ++round) {
        SolveResult r = dogleg_minimize(problem, x, single, options.solver);
        const double moved = (r.x - x).cwiseAbs().maxCoeff();
        x = r.x;
        out.final_energy = r.final_energy;
        out.trace.push_back(std::move(r.stages.front()));
        out.trace_stage.push_back(static_cast<int>(si));
        if (moved <= options.round_tolerance) break;
      }
    }
  } catch (const NumericError& e) {
    throw FitError(std::string("shape fit failed: ") + e.what());
  }
  problem.energy().unpack(x, out.beta, out.d);
  if (!options.optimize_offsets) out.d = d0;
  out.pairs3d_per_stage = problem.counts3d;
  out.pairs2d_per_stage = problem.counts2d;
  out.warnings = problem.warnings;
  out.iou_after = view_ious(skin(model, theta, out.beta, out.d), cameras, masks);
  return out;
}

}  // namespace bodyfit

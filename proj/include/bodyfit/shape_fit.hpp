#pragma once

#include <optional>
#include <string>
#include <vector>

#include "bodyfit/body_model.hpp"
#include "bodyfit/camera.hpp"
#include "bodyfit/correspondence.hpp"
#include "bodyfit/robust_optim.hpp"
#include "bodyfit/silhouette.hpp"

namespace bodyfit {

struct ShapeEnergyWeights {
  double w_L = 0.0;
  double w_B = 0.0;
  double sigma_3d = 1.0;   // model units
  double sigma_2d = 10.0;  // pixels
};

/// Uniform umbrella operator: (L x)_i = x_i - mean of the edge neighbours of i.
struct LaplacianOperator {
  SparseMatrix matrix;           // V x V
  std::vector<int> isolated;     // vertices with no edges (zero rows)
};

LaplacianOperator build_laplacian(const Faces& faces, int num_vertices);
LaplacianOperator build_laplacian(const Mesh& mesh);

struct SilhouetteTermResult {
  double energy = 0.0;
  std::vector<double> values3d;  // rho per 3D pair
  std::vector<double> values2d;  // rho per 2D pair
};

SilhouetteTermResult silhouette_term(const BodyModel& model, const PoseParams& theta,
                                     const ShapeParams& beta, const VertexOffsets& d,
                                     const std::vector<Correspondence3D>& pairs3d,
                                     const std::vector<Correspondence2D>& pairs2d,
                                     const std::vector<CameraParams>& cameras,
                                     const ShapeEnergyWeights& weights);

/// sum_i |L(t(beta, D))_i - L(t(beta, 0))_i|^2.
double laplacian_term(const BodyModel& model, const ShapeParams& beta, const VertexOffsets& d,
                      const LaplacianOperator& laplacian);

/// sum_i |t_i(beta, D) - t_i(beta, 0)|^2.
double body_term(const BodyModel& model, const ShapeParams& beta, const VertexOffsets& d);

/// Shape energy with pose and cameras held fixed. Parameter vector:
/// beta (S) | D (3V, row-major per vertex).
class ShapeEnergy {
 public:
  ShapeEnergy(const BodyModel& model, const PoseParams& theta, std::vector<CameraParams> cameras);

  int num_parameters() const { return shape_size() + 3 * num_vertices(); }
  int shape_size() const { return model_->num_shape(); }
  int num_vertices() const { return model_->num_vertices(); }

  Eigen::VectorXd pack(const ShapeParams& beta, const VertexOffsets& d) const;
  void unpack(const Eigen::VectorXd& x, ShapeParams& beta, VertexOffsets& d) const;

  void add_silhouette_residuals(const Eigen::VectorXd& x, const std::vector<Correspondence3D>& p3,
                                const std::vector<Correspondence2D>& p2, double sigma_3d,
                                double sigma_2d, double data_scale, ResidualBuilder& out,
                                bool with_jacobian) const;
  void add_laplacian_residuals(const Eigen::VectorXd& x, const LaplacianOperator& laplacian,
                               double weight, ResidualBuilder& out, bool with_jacobian) const;
  void add_body_residuals(const Eigen::VectorXd& x, double weight, ResidualBuilder& out,
                          bool with_jacobian) const;

  const std::vector<CameraParams>& cameras() const { return cameras_; }

 private:
  Vec3 canonical_vertex(const Eigen::VectorXd& x, int i) const;
  Vec3 translation(const Eigen::VectorXd& x, int i) const;

  const BodyModel* model_;
  std::vector<CameraParams> cameras_;
  std::vector<Vec3> centers_;
  std::vector<Mat3> linear_;      // M_i
  std::vector<Mat3> inverse_;     // M_i^-1
  Points3 translation0_;          // tau_i at beta = 0
  Eigen::MatrixXd translation_dirs_;  // 3V x S, d tau_i / d beta
  Points3 pose_offsets_;
};

struct ShapeFitOptions {
  bool optimize_offsets = false;
  std::optional<VertexOffsets> initial_offsets;
  double sigma_2d = 10.0;
  double data_scale = 1.0;
  /// Correspondence rebuilds per stage. Each round is one trace entry; a
  /// stage ends early once a round moves no parameter by more than
  /// round_tolerance.
  int rounds_per_stage = 10;
  double round_tolerance = 1e-7;
  DoglegOptions solver;
};

struct ShapeFitResult {
  ShapeParams beta;
  VertexOffsets d;
  std::vector<StageTrace> trace;  // one entry per correspondence round
  std::vector<int> trace_stage;   // schedule stage of each trace entry
  std::vector<int> pairs3d_per_stage;  // per trace entry
  std::vector<int> pairs2d_per_stage;
  std::vector<std::string> warnings;
  std::vector<double> iou_before;
  std::vector<double> iou_after;
  double final_energy = 0.0;
};

/// Per stage and round: rebuild correspondences at the current (beta, D),
/// then minimise E_silh + w_L E_L + w_B E_B over beta (and D when enabled).
/// Throws FitError when no view yields a correspondence.
ShapeFitResult fit_shape(const BodyModel& model, const PoseParams& theta,
                         const std::vector<CameraParams>& cameras,
                         const std::vector<SilhouetteMask>& masks, const ShapeParams& beta0,
                         const StageSchedule& schedule, const PairingConfig& cfg,
                         const ShapeFitOptions& options = {});

/// Per-view IoU of the rendered model against the masks.
std::vector<double> view_ious(const Mesh& mesh, const std::vector<CameraParams>& cameras,
                              const std::vector<SilhouetteMask>& masks);

}  // namespace bodyfit

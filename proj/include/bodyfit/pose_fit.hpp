#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bodyfit/body_model.hpp"
#include "bodyfit/camera.hpp"
#include "bodyfit/robust_optim.hpp"

namespace bodyfit {

struct JointObservation {
  std::string joint_name;
  double u = 0.0;
  double v = 0.0;
  double confidence = 1.0;
};

struct JointObservations {
  std::vector<std::vector<JointObservation>> views;

  int num_views() const { return static_cast<int>(views.size()); }
};

/// Checks confidences are finite and pixels lie within the image (10% margin).
void validate_observations(const JointObservations& obs, const std::vector<CameraParams>& cameras);

/// Observation joint name -> model joint index. Unmapped names are ignored.
struct JointMapping {
  std::map<std::string, int> index;

  /// Maps every model joint name to itself.
  static JointMapping identity(const BodyModel& model);
  int lookup(const std::string& name) const;
  void validate(const BodyModel& model) const;
};

/// alpha * sum_i exp(sign_i * theta_flat[index_i]).
struct PosePriorSpec {
  std::vector<int> indices;
  std::vector<double> signs;  // +1 when empty or missing
  double alpha = 10.0;

  /// Elbows and knees of the 24-joint SMPL layout: {55, 58, 15, 12}, alpha 10.
  static PosePriorSpec smpl_default();
  /// Elbow/knee flexion components looked up by joint name, signed so that
  /// hyperextension is the penalised direction.
  static PosePriorSpec from_joint_names(const BodyModel& model);
  /// from_joint_names when the names exist, otherwise smpl_default for K = 24.
  static PosePriorSpec for_model(const BodyModel& model);

  double sign(size_t i) const { return i < signs.size() ? signs[i] : 1.0; }
  void validate(int num_joints) const;
};

/// Root rotation that stands a y-up model upright in a y-down camera frame.
Vec3 upright_root_rotation();

Points3 model_joints_3d(const BodyModel& model, const PoseParams& theta, const ShapeParams& beta);

struct JointGroup {
  int view = 0;
  int joint = 0;
  Vec2 residual = Vec2::Zero();  // observed minus projected pixel
  double confidence = 1.0;
  double value = 0.0;  // confidence * rho
  bool clamped = false;
};

struct JointTermResult {
  double energy = 0.0;
  std::vector<JointGroup> groups;
};

/// sum over (view, mapped joint) of confidence * rho(|J2d - Pi(J3d)|^2).
/// Joints behind a camera contribute a clamped constant residual.
JointTermResult joint_term(const BodyModel& model, const PoseParams& theta, const ShapeParams& beta,
                           const std::vector<CameraParams>& cameras, const JointObservations& obs,
                           const JointMapping& mapping, double sigma);

double pose_prior_term(const PoseParams& theta, const PosePriorSpec& spec);

/// Sum of squared shape coefficients.
double shape_prior_term(const ShapeParams& beta);

struct CameraInitOptions {
  std::optional<PoseParams> theta;  // default: zero pose, upright root
  std::optional<ShapeParams> beta;  // default: zero shape
  std::optional<Vec2> principal_point;  // default: image centre
};

/// Identity rotation per view; translation from the ratio of model torso
/// length to observed torso pixel length, centred on the observed torso.
std::vector<CameraParams> init_cameras(const BodyModel& model, const JointObservations& obs,
                                       const JointMapping& mapping, double focal, int width,
                                       int height, const CameraInitOptions& options = {});

/// Parameter vector layout: theta (3K) | beta (S) | per view [rotation(3) translation(3)].
class PoseEnergy {
 public:
  PoseEnergy(const BodyModel& model, const JointObservations& obs, const JointMapping& mapping,
             std::vector<CameraParams> cameras, PosePriorSpec prior);

  int num_parameters() const { return theta_size() + shape_size() + 6 * num_views(); }
  int theta_size() const { return 3 * model_->num_joints(); }
  int shape_size() const { return model_->num_shape(); }
  int num_views() const { return static_cast<int>(cameras_.size()); }
  int camera_offset(int view) const { return theta_size() + shape_size() + 6 * view; }

  Eigen::VectorXd pack(const PoseParams& theta, const ShapeParams& beta,
                       const std::vector<CameraParams>& cameras) const;
  void unpack(const Eigen::VectorXd& x, PoseParams& theta, ShapeParams& beta,
              std::vector<CameraParams>& cameras) const;

  /// Views whose joint groups enter the energy (all by default).
  void set_active_views(std::vector<bool> active) { active_views_ = std::move(active); }

  /// Robustified joint residuals: each group scaled so that its squared norm
  /// is data_scale * confidence * rho.
  void add_joint_residuals(const Eigen::VectorXd& x, double sigma, double data_scale,
                           ResidualBuilder& out, bool with_jacobian) const;
  void add_pose_prior_residuals(const Eigen::VectorXd& x, double weight, ResidualBuilder& out,
                                bool with_jacobian) const;
  void add_shape_prior_residuals(const Eigen::VectorXd& x, double weight, ResidualBuilder& out,
                                 bool with_jacobian) const;
  /// weight * |theta_k|^2 summed over non-root joints.
  void add_joint_l2_residuals(const Eigen::VectorXd& x, double weight, ResidualBuilder& out,
                              bool with_jacobian) const;

  const PosePriorSpec& prior() const { return prior_; }

 private:
  const BodyModel* model_;
  const JointObservations* obs_;
  std::vector<std::vector<std::pair<int, double>>> mapped_;  // per view: (model joint, confidence)
  std::vector<std::vector<Vec2>> observed_;
  std::vector<CameraParams> cameras_;
  PosePriorSpec prior_;
  Eigen::MatrixXd joint_shape_dirs_;  // 3K x S
  std::vector<std::vector<int>> chains_;  // ancestors of each joint, root first, self last
  std::vector<bool> active_views_;
};

struct PoseFitOptions {
  std::optional<PoseParams> initial_theta;  // default: zero pose, upright root
  std::optional<ShapeParams> initial_beta;  // default: zero shape
  /// Multiplier on the robust joint energy; non-positive means sigma^2 of the
  /// current stage.
  double data_scale = 0.0;
  bool freeze_reference_rotation = true;
  /// Quadratic penalty on non-root joint rotations, weighted by this ratio
  /// times the stage's w_theta. Zero gives the bare three-term energy.
  double joint_l2_ratio = 1.0;
  /// Coarse search over rotations about the vertical (y) axis before the
  /// staged solve: the root for view 0, the camera for the other views.
  bool orientation_sweep = true;
  int sweep_candidates = 8;
  int sweep_iterations = 15;
  DoglegOptions solver;
};

struct PoseFitResult {
  PoseParams theta;
  ShapeParams beta;
  std::vector<CameraParams> cameras;
  std::vector<StageTrace> trace;
  double final_energy = 0.0;
};

/// Minimises E_jt + w_theta E_theta + w_beta E_beta over (theta, beta, R_i, t_i)
/// with view 0's rotation held at its initial value.
PoseFitResult fit_pose(const BodyModel& model, const JointObservations& obs,
                       const JointMapping& mapping, const std::vector<CameraParams>& cameras0,
                       const StageSchedule& schedule, const PosePriorSpec& prior,
                       const PoseFitOptions& options = {});

}  // namespace bodyfit

#include "bodyfit/pose_fit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "bodyfit/errors.hpp"

namespace bodyfit {

namespace {

constexpr double kClampFactor = 10.0;

std::vector<std::vector<int>> joint_chains(const std::vector<int>& parent) {
  std::vector<std::vector<int>> chains(parent.size());
  for (size_t k = 0; k < parent.size(); ++k) {
    for (int j = static_cast<int>(k); j != kRootParent; j = parent[j]) chains[k].push_back(j);
    std::reverse(chains[k].begin(), chains[k].end());
  }
  return chains;
}

Mat3 rotation_y(double angle) {
  return Eigen::AngleAxisd(angle, Vec3::UnitY()).toRotationMatrix();
}

}  // namespace

void validate_observations(const JointObservations& obs, const std::vector<CameraParams>& cameras) {
  if (obs.views.size() != cameras.size()) {
    throw ConfigError("joint observations have " + std::to_string(obs.views.size()) +
                      " views but " + std::to_string(cameras.size()) + " cameras were given");
  }
  for (size_t v = 0; v < obs.views.size(); ++v) {
    const double w = cameras[v].width;
    const double h = cameras[v].height;
    for (const auto& o : obs.views[v]) {
      if (!std::isfinite(o.confidence) || o.confidence < 0.0) {
        throw ConfigError("view " + std::to_string(v) + ", joint '" + o.joint_name +
                          "': confidence must be finite and non-negative");
      }
      if (!std::isfinite(o.u) || !std::isfinite(o.v) || o.u < -0.1 * w || o.u > 1.1 * w ||
          o.v < -0.1 * h || o.v > 1.1 * h) {
        throw ConfigError("view " + std::to_string(v) + ", joint '" + o.joint_name +
                          "': pixel outside the image bounds");
      }
    }
  }
}

JointMapping JointMapping::identity(const BodyModel& model) {
  JointMapping m;
  for (int k = 0; k < model.num_joints(); ++k) m.index[model.joint_names[k]] = k;
  return m;
}

int JointMapping::lookup(const std::string& name) const {
  auto it = index.find(name);
  return it == index.end() ? -1 : it->second;
}

void JointMapping::validate(const BodyModel& model) const {
  for (const auto& [name, k] : index) {
    if (k < 0 || k >= model.num_joints()) {
      throw ConfigError("joint mapping '" + name + "' -> " + std::to_string(k) +
                        " is outside [0, " + std::to_string(model.num_joints()) + ")");
    }
  }
}

PosePriorSpec PosePriorSpec::smpl_default() {
  PosePriorSpec s;
  s.indices = {55, 58, 15, 12};
  s.signs = {1.0, 1.0, 1.0, 1.0};
  s.alpha = 10.0;
  return s;
}

PosePriorSpec PosePriorSpec::from_joint_names(const BodyModel& model) {
  struct Entry {
    const char* name;
    int component;
    double sign;
  };
  static const Entry kEntries[] = {
      {"left_elbow", 1, 1.0},
      {"right_elbow", 1, -1.0},
      {"left_knee", 0, -1.0},
      {"right_knee", 0, -1.0},
  };
  PosePriorSpec s;
  for (const auto& e : kEntries) {
    const int k = model.joint_index(e.name);
    if (k < 0) continue;
    s.indices.push_back(3 * k + e.component);
    s.signs.push_back(e.sign);
  }
  return s;
}

PosePriorSpec PosePriorSpec::for_model(const BodyModel& model) {
  PosePriorSpec s = from_joint_names(model);
  if (s.indices.empty() && model.num_joints() == 24) return smpl_default();
  return s;
}

void PosePriorSpec::validate(int num_joints) const {
  if (!std::isfinite(alpha) || alpha < 0.0) throw ConfigError("pose prior alpha must be >= 0");
  for (int i : indices) {
    if (i < 0 || i >= 3 * num_joints) {
      throw ConfigError("pose prior index " + std::to_string(i) + " is outside the pose vector");
    }
  }
  if (!signs.empty() && signs.size() != indices.size()) {
    throw ConfigError("pose prior signs must match the indices");
  }
}

Vec3 upright_root_rotation() { return Vec3(std::numbers::pi, 0.0, 0.0); }

Points3 model_joints_3d(const BodyModel& model, const PoseParams& theta, const ShapeParams& beta) {
  return forward_kinematics(model, theta, beta).posed_joints;
}

JointTermResult joint_term(const BodyModel& model, const PoseParams& theta, const ShapeParams& beta,
                           const std::vector<CameraParams>& cameras, const JointObservations& obs,
                           const JointMapping& mapping, double sigma) {
  if (obs.views.size() != cameras.size()) {
    throw DimensionError("joint_term: observation views do not match cameras");
  }
  const Points3 joints = model_joints_3d(model, theta, beta);
  JointTermResult out;
  bool any_mapped = false;
  for (size_t v = 0; v < obs.views.size(); ++v) {
    for (const auto& o : obs.views[v]) {
      const int k = mapping.lookup(o.joint_name);
      if (k < 0 || k >= model.num_joints()) continue;
      any_mapped = true;
      JointGroup g;
      g.view = static_cast<int>(v);
      g.joint = k;
      g.confidence = o.confidence;
      const Vec3 X = joints.row(k).transpose();
      if (cameras[v].to_camera(X).z() <= kMinDepth) {
        g.clamped = true;
        g.residual = Vec2(kClampFactor * sigma, 0.0);
      } else {
        g.residual = Vec2(o.u, o.v) - project(cameras[v], X);
      }
      g.value = o.confidence * geman_mcclure(g.residual.squaredNorm(), sigma);
      out.energy += g.value;
      out.groups.push_back(g);
    }
  }
  if (!any_mapped) throw ConfigError("no observed joint maps to a model joint");
  return out;
}

double pose_prior_term(const PoseParams& theta, const PosePriorSpec& spec) {
  double e = 0.0;
  for (size_t i = 0; i < spec.indices.size(); ++i) {
    const int idx = spec.indices[i];
    e += std::exp(spec.sign(i) * theta.joint(idx / 3)(idx % 3));
  }
  return spec.alpha * e;
}

double shape_prior_term(const ShapeParams& beta) { return beta.beta.squaredNorm(); }

std::vector<CameraParams> init_cameras(const BodyModel& model, const JointObservations& obs,
                                       const JointMapping& mapping, double focal, int width,
                                       int height, const CameraInitOptions& options) {
  PoseParams theta = options.theta.value_or(PoseParams::zeros(model.num_joints()));
  if (!options.theta) theta.theta.row(0) = upright_root_rotation().transpose();
  const ShapeParams beta = options.beta.value_or(ShapeParams::zeros(model.num_shape()));
  const Points3 joints = model_joints_3d(model, theta, beta);

  // Torso endpoints as (top, bottom) joint sets; each end is the mean of its set.
  const std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>> candidates = {
      {{"neck"}, {"pelvis"}},
      {{"left_shoulder", "right_shoulder"}, {"left_hip", "right_hip"}},
  };

  std::vector<CameraParams> cameras;
  for (size_t v = 0; v < obs.views.size(); ++v) {
    std::map<int, Vec2> seen;
    for (const auto& o : obs.views[v]) {
      const int k = mapping.lookup(o.joint_name);
      if (k >= 0 && o.confidence > 0.0) seen[k] = Vec2(o.u, o.v);
    }
    bool found = false;
    std::string missing;
    for (const auto& [top, bottom] : candidates) {
      auto mean_of = [&](const std::vector<std::string>& names, Vec3& model_pt, Vec2& px) {
        model_pt.setZero();
        px.setZero();
        for (const auto& n : names) {
          const int k = model.joint_index(n);
          if (k < 0 || !seen.count(k)) {
            missing += (missing.empty() ? "" : ", ") + n;
            return false;
          }
          model_pt += joints.row(k).transpose();
          px += seen[k];
        }
        model_pt /= static_cast<double>(names.size());
        px /= static_cast<double>(names.size());
        return true;
      };
      Vec3 top3, bot3;
      Vec2 top2, bot2;
      if (!mean_of(top, top3, top2) || !mean_of(bottom, bot3, bot2)) continue;
      const double model_len = (top3 - bot3).norm();
      const double pixel_len = (top2 - bot2).norm();
      if (model_len <= 0.0 || pixel_len <= 1e-9) continue;

      CameraParams cam;
      cam.focal = focal;
      cam.width = width;
      cam.height = height;
      cam.principal_point = options.principal_point.value_or(Vec2(0.5 * width, 0.5 * height));
      const double z = focal * model_len / pixel_len;
      const Vec2 mid = 0.5 * (top2 + bot2);
      const Vec3 target((mid.x() - cam.principal_point.x()) * z / focal,
                        (mid.y() - cam.principal_point.y()) * z / focal, z);
      cam.translation = target - 0.5 * (top3 + bot3);
      cameras.push_back(cam);
      found = true;
      break;
    }
    if (!found) {
      throw ConfigError("camera initialization for view " + std::to_string(v) +
                        " needs torso joints; missing: " + missing);
    }
  }
  return cameras;
}

// ---------------------------------------------------------------------------
// PoseEnergy
// ---------------------------------------------------------------------------

PoseEnergy::PoseEnergy(const BodyModel& model, const JointObservations& obs,
                       const JointMapping& mapping, std::vector<CameraParams> cameras,
                       PosePriorSpec prior)
    : model_(&model), obs_(&obs), cameras_(std::move(cameras)), prior_(std::move(prior)) {
  if (obs.views.size() != cameras_.size()) {
    throw DimensionError("PoseEnergy: observation views do not match cameras");
  }
  prior_.validate(model.num_joints());
  const int K = model.num_joints();
  const int S = model.num_shape();
  bool any = false;
  mapped_.resize(obs.views.size());
  observed_.resize(obs.views.size());
  for (size_t v = 0; v < obs.views.size(); ++v) {
    for (const auto& o : obs.views[v]) {
      const int k = mapping.lookup(o.joint_name);
      if (k < 0 || k >= K) continue;
      any = true;
      mapped_[v].emplace_back(k, o.confidence);
      observed_[v].emplace_back(o.u, o.v);
    }
  }
  if (!any) throw ConfigError("no observed joint maps to a model joint");

  joint_shape_dirs_ = Eigen::MatrixXd::Zero(3 * K, S);
  for (int k = 0; k < K; ++k) {
    for (int i = 0; i < model.num_vertices(); ++i) {
      const double w = model.joint_regressor(k, i);
      if (w == 0.0) continue;
      joint_shape_dirs_.middleRows(3 * k, 3) += w * model.shape_dirs.middleRows(3 * i, 3);
    }
  }
  chains_ = joint_chains(model.parent);
  active_views_.assign(obs.views.size(), true);
}

Eigen::VectorXd PoseEnergy::pack(const PoseParams& theta, const ShapeParams& beta,
                                 const std::vector<CameraParams>& cameras) const {
  if (theta.num_joints() != model_->num_joints() || beta.beta.size() != shape_size() ||
      static_cast<int>(cameras.size()) != num_views()) {
    throw DimensionError("PoseEnergy::pack: parameter sizes do not match the problem");
  }
  Eigen::VectorXd x(num_parameters());
  x.head(theta_size()) = theta.flat();
  x.segment(theta_size(), shape_size()) = beta.beta;
  for (int v = 0; v < num_views(); ++v) {
    x.segment<3>(camera_offset(v)) = cameras[v].rotation;
    x.segment<3>(camera_offset(v) + 3) = cameras[v].translation;
  }
  return x;
}

void PoseEnergy::unpack(const Eigen::VectorXd& x, PoseParams& theta, ShapeParams& beta,
                        std::vector<CameraParams>& cameras) const {
  if (x.size() != num_parameters()) throw DimensionError("PoseEnergy::unpack: wrong vector size");
  theta = PoseParams::zeros(model_->num_joints());
  theta.flat() = x.head(theta_size());
  beta.beta = x.segment(theta_size(), shape_size());
  cameras = cameras_;
  for (int v = 0; v < num_views(); ++v) {
    cameras[v].rotation = x.segment<3>(camera_offset(v));
    cameras[v].translation = x.segment<3>(camera_offset(v) + 3);
  }
}

void PoseEnergy::add_joint_residuals(const Eigen::VectorXd& x, double sigma, double data_scale,
                                     ResidualBuilder& out, bool with_jacobian) const {
  PoseParams theta;
  ShapeParams beta;
  std::vector<CameraParams> cams;
  unpack(x, theta, beta, cams);
  const Kinematics kin = forward_kinematics(*model_, theta, beta);
  const int K = model_->num_joints();
  const int S = shape_size();

  // Shape derivatives of posed joints: dt_k = dt_p + R^w_p (dJ_k - dJ_p).
  Eigen::MatrixXd dt_dbeta(3 * K, S);
  std::vector<Mat3> jl(K);
  if (with_jacobian) {
    for (int k : kinematic_order(model_->parent)) {
      const int p = model_->parent[k];
      if (p == kRootParent) {
        dt_dbeta.middleRows(3 * k, 3) = joint_shape_dirs_.middleRows(3 * k, 3);
      } else {
        dt_dbeta.middleRows(3 * k, 3) =
            dt_dbeta.middleRows(3 * p, 3) +
            kin.world_rotations[p] *
                (joint_shape_dirs_.middleRows(3 * k, 3) - joint_shape_dirs_.middleRows(3 * p, 3));
      }
      jl[k] = left_jacobian(theta.joint(k));
    }
  }

  for (int v = 0; v < num_views(); ++v) {
    if (!active_views_[v]) continue;
    for (size_t n = 0; n < mapped_[v].size(); ++n) {
      const auto [k, conf] = mapped_[v][n];
      const double weight = conf * data_scale;
      if (weight <= 0.0) continue;
      const Vec3 X = kin.posed_joints.row(k).transpose();
      if (cams[v].to_camera(X).z() <= kMinDepth) {
        Eigen::VectorXd e = Vec2(kClampFactor * sigma, 0.0);
        Eigen::MatrixXd none(2, 0);
        robustify_group(e, none, weight, sigma);
        out.add_constant(e);
        continue;
      }
      Eigen::Matrix<double, 2, 3> d_point;
      Eigen::Matrix<double, 2, 6> d_ext;
      const Vec2 pix = project_with_jacobian(cams[v], X, with_jacobian ? &d_point : nullptr,
                                             with_jacobian ? &d_ext : nullptr);
      Eigen::VectorXd e = observed_[v][n] - pix;
      if (!with_jacobian) {
        Eigen::MatrixXd none(2, 0);
        robustify_group(e, none, weight, sigma);
        out.add_constant(e);
        continue;
      }
      const auto& chain = chains_[k];
      const int n_theta = 3 * static_cast<int>(chain.size() - 1);
      Eigen::MatrixXd J(2, n_theta + S + 6);
      std::vector<int> cols;
      cols.reserve(J.cols());
      int c = 0;
      for (size_t ci = 0; ci + 1 < chain.size(); ++ci) {
        const int j = chain[ci];
        const int p = model_->parent[j];
        const Mat3 Rp = p == kRootParent ? Mat3::Identity() : kin.world_rotations[p];
        const Vec3 lever = X - kin.posed_joints.row(j).transpose();
        for (int a = 0; a < 3; ++a) {
          const Vec3 omega = Rp * jl[j].col(a);
          J.col(c++) = -d_point * omega.cross(lever);
          cols.push_back(3 * j + a);
        }
      }
      J.middleCols(c, S) = -d_point * dt_dbeta.middleRows(3 * k, 3);
      for (int s = 0; s < S; ++s) cols.push_back(theta_size() + s);
      c += S;
      J.middleCols(c, 6) = -d_ext;
      for (int i = 0; i < 6; ++i) cols.push_back(camera_offset(v) + i);
      robustify_group(e, J, weight, sigma);
      out.add(e, J, cols);
    }
  }
}

void PoseEnergy::add_pose_prior_residuals(const Eigen::VectorXd& x, double weight,
                                          ResidualBuilder& out, bool with_jacobian) const {
  if (weight <= 0.0 || prior_.alpha <= 0.0) return;
  const double scale = std::sqrt(weight * prior_.alpha);
  for (size_t i = 0; i < prior_.indices.size(); ++i) {
    const int idx = prior_.indices[i];
    const int joint = idx / 3;
    const int c = idx % 3;
    const double s = prior_.sign(i);
    const double r = scale * std::exp(0.5 * s * x(3 * joint + c));
    const int row = out.append_rows(Eigen::VectorXd::Constant(1, r));
    if (with_jacobian) out.add_entry(row, 3 * joint + c, 0.5 * s * r);
  }
}

void PoseEnergy::add_joint_l2_residuals(const Eigen::VectorXd& x, double weight,
                                        ResidualBuilder& out, bool with_jacobian) const {
  const int n = theta_size() - 3;
  if (weight <= 0.0 || n <= 0) return;
  const double scale = std::sqrt(weight);
  const int row0 = out.append_rows(scale * x.segment(3, n));
  if (with_jacobian) {
    for (int i = 0; i < n; ++i) out.add_entry(row0 + i, 3 + i, scale);
  }
}

void PoseEnergy::add_shape_prior_residuals(const Eigen::VectorXd& x, double weight,
                                           ResidualBuilder& out, bool with_jacobian) const {
  if (weight <= 0.0 || shape_size() == 0) return;
  const double scale = std::sqrt(weight);
  const int row0 = out.append_rows(scale * x.segment(theta_size(), shape_size()));
  if (with_jacobian) {
    for (int s = 0; s < shape_size(); ++s) out.add_entry(row0 + s, theta_size() + s, scale);
  }
}

// ---------------------------------------------------------------------------
// Fitting
// ---------------------------------------------------------------------------

namespace {

class PoseFitProblem : public LeastSquaresProblem {
 public:
  PoseFitProblem(const PoseEnergy& energy, int num_joints, double data_scale, double l2_ratio)
      : energy_(energy), data_scale_(data_scale), l2_ratio_(l2_ratio) {
    const int T = energy.theta_size();
    blocks_.push_back({"theta_root", 0, 3, false});
    if (num_joints > 1) blocks_.push_back({"theta", 3, T - 3, false});
    if (energy.shape_size() > 0) blocks_.push_back({"beta", T, energy.shape_size(), false});
    for (int v = 0; v < energy.num_views(); ++v) {
      blocks_.push_back({"camera_" + std::to_string(v) + "_rotation", energy.camera_offset(v), 3, false});
      blocks_.push_back(
          {"camera_" + std::to_string(v) + "_translation", energy.camera_offset(v) + 3, 3, false});
    }
  }

  const std::vector<ParameterBlock>& blocks() const override { return blocks_; }

  void set_only_free(const std::vector<std::string>& names) {
    for (auto& b : blocks_) {
      b.frozen = std::find(names.begin(), names.end(), b.name) == names.end();
    }
  }
  void freeze(const std::string& name) {
    for (auto& b : blocks_) {
      if (b.name == name) b.frozen = true;
    }
  }

  void begin_stage(const Stage& stage, const Eigen::VectorXd&) override {
    w_theta_ = stage.weight("w_theta");
    w_beta_ = stage.weight("w_beta");
    sigma_ = stage.sigma;
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

 private:
  void build(const Eigen::VectorXd& x, ResidualBuilder& b, bool jac) const {
    const double scale = data_scale_ > 0.0 ? data_scale_ : sigma_ * sigma_;
    energy_.add_joint_residuals(x, sigma_, scale, b, jac);
    energy_.add_pose_prior_residuals(x, w_theta_, b, jac);
    energy_.add_shape_prior_residuals(x, w_beta_, b, jac);
    energy_.add_joint_l2_residuals(x, l2_ratio_ * w_theta_, b, jac);
  }

  const PoseEnergy& energy_;
  double data_scale_;
  double l2_ratio_;
  std::vector<ParameterBlock> blocks_;
  double w_theta_ = 0.0;
  double w_beta_ = 0.0;
  double sigma_ = 1.0;
};

Vec3 joint_centroid(const BodyModel& model, const Eigen::VectorXd& x, int theta_size, int shape_size) {
  PoseParams theta = PoseParams::zeros(model.num_joints());
  theta.flat() = x.head(theta_size);
  ShapeParams beta{x.segment(theta_size, shape_size)};
  return model_joints_3d(model, theta, beta).colwise().mean().transpose();
}

/// Tries yaw candidates for one view and keeps the best after a short local
/// refinement. Only strictly better candidates replace the input.
Eigen::VectorXd sweep_view(const BodyModel& model, PoseEnergy& energy, const Eigen::VectorXd& x0,
                           int view, const Stage& stage, const PoseFitOptions& options) {
  std::vector<bool> active(energy.num_views(), false);
  active[view] = true;
  energy.set_active_views(active);

  PoseFitProblem problem(energy, model.num_joints(), options.data_scale, options.joint_l2_ratio);
  const std::string rot = "camera_" + std::to_string(view) + "_rotation";
  const std::string trans = "camera_" + std::to_string(view) + "_translation";
  if (view == 0) {
    problem.set_only_free({"theta_root", trans});
  } else {
    problem.set_only_free({rot, trans});
  }
  Stage short_stage;
  short_stage.weights = {{"w_theta", 0.0}, {"w_beta", 0.0}};
  short_stage.sigma = stage.sigma;
  short_stage.max_iterations = options.sweep_iterations;
  short_stage.relative_tolerance = stage.relative_tolerance;
  const StageSchedule schedule{{short_stage}};

  const int off = energy.camera_offset(view);
  const Vec3 center = joint_centroid(model, x0, energy.theta_size(), energy.shape_size());

  Eigen::VectorXd best;
  double best_energy = std::numeric_limits<double>::infinity();
  for (int c = 0; c < options.sweep_candidates; ++c) {
    const double angle = 2.0 * std::numbers::pi * c / options.sweep_candidates;
    Eigen::VectorXd x = x0;
    if (c > 0) {
      const Mat3 Rc = rodrigues(x0.segment<3>(off));
      if (view == 0) {
        x.head<3>() = rodrigues_inv(rotation_y(angle) * rodrigues(x0.head<3>()));
        const Vec3 moved = joint_centroid(model, x, energy.theta_size(), energy.shape_size());
        x.segment<3>(off + 3) += Rc * (center - moved);
      } else {
        const Mat3 Rn = Rc * rotation_y(angle);
        x.segment<3>(off) = rodrigues_inv(Rn);
        x.segment<3>(off + 3) += Rc * center - Rn * center;
      }
    }
    SolveResult r;
    try {
      r = dogleg_minimize(problem, x, schedule, options.solver);
    } catch (const NumericError&) {
      continue;
    }
    if (c == 0) {
      best = r.x;
      best_energy = r.final_energy;
    } else if (r.final_energy < best_energy * (1.0 - 1e-9)) {
      best = r.x;
      best_energy = r.final_energy;
    }
  }
  energy.set_active_views(std::vector<bool>(energy.num_views(), true));
  return best.size() ? best : x0;
}

}  // namespace

PoseFitResult fit_pose(const BodyModel& model, const JointObservations& obs,
                       const JointMapping& mapping, const std::vector<CameraParams>& cameras0,
                       const StageSchedule& schedule, const PosePriorSpec& prior,
                       const PoseFitOptions& options) {
  schedule.validate();
  mapping.validate(model);
  for (const auto& c : cameras0) c.validate();
  validate_observations(obs, cameras0);
  if (!(options.joint_l2_ratio >= 0.0) || !std::isfinite(options.joint_l2_ratio)) {
    throw ConfigError("fit_pose: joint_l2_ratio must be finite and non-negative");
  }

  PoseParams theta0 = options.initial_theta.value_or(PoseParams::zeros(model.num_joints()));
  if (!options.initial_theta) theta0.theta.row(0) = upright_root_rotation().transpose();
  const ShapeParams beta0 = options.initial_beta.value_or(ShapeParams::zeros(model.num_shape()));
  if (theta0.num_joints() != model.num_joints() || beta0.beta.size() != model.num_shape()) {
    throw DimensionError("fit_pose: initial parameters do not match the model");
  }

  PoseEnergy energy(model, obs, mapping, cameras0, prior);
  Eigen::VectorXd x = energy.pack(theta0, beta0, cameras0);

  if (options.orientation_sweep && options.sweep_candidates > 1 && !schedule.stages.empty()) {
    for (int v = 0; v < energy.num_views(); ++v) {
      x = sweep_view(model, energy, x, v, schedule.stages.front(), options);
    }
  }

  PoseFitProblem problem(energy, model.num_joints(), options.data_scale, options.joint_l2_ratio);
  if (options.freeze_reference_rotation) problem.freeze("camera_0_rotation");
  SolveResult solved;
  try {
    solved = dogleg_minimize(problem, x, schedule, options.solver);
  } catch (const NumericError& e) {
    throw FitError(std::string("pose fit failed: ") + e.what());
  }

  PoseFitResult out;
  energy.unpack(solved.x, out.theta, out.beta, out.cameras);
  out.trace = std::move(solved.stages);
  out.final_energy = solved.final_energy;
  return out;
}

}  // namespace bodyfit

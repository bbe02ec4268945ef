#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

namespace bodyfit {

/// Geman-McClure: s / (sigma^2 + s), where s is a squared residual norm.
double geman_mcclure(double squared_norm, double sigma);

/// Replaces a residual group e (and its Jacobian rows) by
/// sqrt(weight / (sigma^2 + |e|^2)) * e, whose squared norm equals
/// weight * geman_mcclure(|e|^2, sigma). The map is smooth at e = 0, so the
/// least-squares objective is exactly the robust energy.
void robustify_group(Eigen::Ref<Eigen::VectorXd> residual, Eigen::Ref<Eigen::MatrixXd> jacobian,
                     double weight, double sigma);

// ---------------------------------------------------------------------------
// Stage schedules
// ---------------------------------------------------------------------------

struct Stage {
  std::map<std::string, double> weights;
  double sigma = 1.0;
  int max_iterations = 30;
  double relative_tolerance = 1e-4;

  double weight(const std::string& name) const;
};

struct StageSchedule {
  std::vector<Stage> stages;

  void validate() const;
};

enum class DatasetKind { Synthetic, Real };

/// Pose stages: weights "w_theta", "w_beta".
StageSchedule default_pose_schedule();
/// Shape stages: weights "w_L", "w_B"; sigma is the 3D (model-unit) scale.
StageSchedule default_shape_schedule(DatasetKind kind = DatasetKind::Synthetic);

// ---------------------------------------------------------------------------
// Least-squares problems
// ---------------------------------------------------------------------------

struct ParameterBlock {
  std::string name;
  int offset = 0;
  int size = 0;
  bool frozen = false;
};

using SparseMatrix = Eigen::SparseMatrix<double>;

/// Sum-of-squares objective E(x) = |r(x)|^2 over a vector laid out in named
/// blocks. Frozen blocks are held fixed by the solver.
class LeastSquaresProblem {
 public:
  virtual ~LeastSquaresProblem() = default;

  virtual const std::vector<ParameterBlock>& blocks() const = 0;
  int num_parameters() const;

  /// Called before each stage of a schedule with the current parameters.
  virtual void begin_stage(const Stage& /*stage*/, const Eigen::VectorXd& /*x*/) {}

  virtual Eigen::VectorXd residuals(const Eigen::VectorXd& x) const = 0;

  /// Residuals and Jacobian. The default uses central differences.
  virtual void evaluate(const Eigen::VectorXd& x, Eigen::VectorXd& residuals,
                        SparseMatrix& jacobian) const;
};

/// Adapter wrapping plain callables.
class FunctionProblem : public LeastSquaresProblem {
 public:
  using ResidualFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
  using JacobianFn = std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>;

  FunctionProblem(int num_parameters, ResidualFn residual, JacobianFn jacobian = nullptr);

  const std::vector<ParameterBlock>& blocks() const override { return blocks_; }
  std::vector<ParameterBlock>& mutable_blocks() { return blocks_; }
  Eigen::VectorXd residuals(const Eigen::VectorXd& x) const override { return residual_(x); }
  void evaluate(const Eigen::VectorXd& x, Eigen::VectorXd& residuals,
                SparseMatrix& jacobian) const override;

 private:
  std::vector<ParameterBlock> blocks_;
  ResidualFn residual_;
  JacobianFn jacobian_;
};

/// Central differences: column j = (f(x + h e_j) - f(x - h e_j)) / 2h.
Eigen::MatrixXd numeric_jacobian(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                                 const Eigen::VectorXd& x, double h = 1e-6);

// ---------------------------------------------------------------------------
// Dogleg driver
// ---------------------------------------------------------------------------

struct StageTrace {
  Stage stage;                  // the stage exactly as applied
  std::vector<double> energies; // initial energy, then one entry per accepted step
  std::vector<double> radii;    // trust radius after every iteration
  int iterations = 0;
  int accepted = 0;
  int rejected = 0;
  std::string termination;
};

struct SolveResult {
  Eigen::VectorXd x;
  std::vector<StageTrace> stages;
  double final_energy = 0.0;
};

struct DoglegOptions {
  double initial_radius = 1.0;
  double min_radius = 1e-12;
  double max_radius = 1e6;
  double gradient_tolerance = 1e-12;
  double step_tolerance = 1e-14;
  /// Normal equations with min/max pivot ratio below this get Levenberg damping.
  double singular_ratio = 1e-12;
  double damping = 1e-6;
};

/// Powell's dogleg on the Gauss-Newton model, stage by stage. Accepted steps
/// never increase the energy. Throws NumericError when r(x0) is not finite.
SolveResult dogleg_minimize(LeastSquaresProblem& problem, const Eigen::VectorXd& x0,
                            const StageSchedule& schedule, const DoglegOptions& options = {});

/// Sparse Jacobian assembly helper.
class ResidualBuilder {
 public:
  explicit ResidualBuilder(int num_parameters) : num_parameters_(num_parameters) {}

  /// Appends a dense block of residual rows whose Jacobian columns are
  /// given by `columns` (one index per column of `jacobian`).
  void add(const Eigen::VectorXd& residual, const Eigen::MatrixXd& jacobian,
           const std::vector<int>& columns);
  /// Appends a residual row block without derivatives (constant in x).
  void add_constant(const Eigen::VectorXd& residual);
  void add_entry(int row, int col, double value) { triplets_.emplace_back(row, col, value); }
  int append_rows(const Eigen::VectorXd& residual);

  int rows() const { return static_cast<int>(values_.size()); }
  Eigen::VectorXd residuals() const;
  SparseMatrix jacobian() const;

 private:
  int num_parameters_;
  std::vector<double> values_;
  std::vector<Eigen::Triplet<double>> triplets_;
};

}  // namespace bodyfit

#include "bodyfit/robust_optim.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Cholesky>
#include <Eigen/SparseCholesky>

#include "bodyfit/errors.hpp"

namespace bodyfit {

double geman_mcclure(double squared_norm, double sigma) {
  if (squared_norm <= 0.0) return 0.0;
  // 1 / (1 + sigma^2 / s) rounds monotonically in s.
  return 1.0 / (1.0 + sigma * sigma / squared_norm);
}

void robustify_group(Eigen::Ref<Eigen::VectorXd> residual, Eigen::Ref<Eigen::MatrixXd> jacobian,
                     double weight, double sigma) {
  const double denom = sigma * sigma + residual.squaredNorm();
  const double scale = std::sqrt(weight / denom);
  if (jacobian.size() > 0) {
    const Eigen::RowVectorXd et_j = residual.transpose() * jacobian;
    jacobian = scale * (jacobian - residual * et_j / denom);
  }
  residual *= scale;
}

double Stage::weight(const std::string& name) const {
  const auto it = weights.find(name);
  if (it == weights.end()) throw ConfigError("stage has no weight named '" + name + "'");
  return it->second;
}

void StageSchedule::validate() const {
  if (stages.empty()) throw ConfigError("schedule must contain at least one stage");
  for (size_t i = 0; i < stages.size(); ++i) {
    const Stage& s = stages[i];
    for (const auto& [name, w] : s.weights) {
      if (!std::isfinite(w)) throw ConfigError("stage " + std::to_string(i) + " weight " + name + " is not finite");
    }
    if (!(s.sigma > 0.0)) throw ConfigError("stage " + std::to_string(i) + " sigma must be positive");
    if (s.max_iterations < 0) throw ConfigError("stage " + std::to_string(i) + " max_iterations is negative");
    if (!(s.relative_tolerance > 0.0)) {
      throw ConfigError("stage " + std::to_string(i) + " relative_tolerance must be positive");
    }
  }
}

StageSchedule default_pose_schedule() {
  const double w_theta[] = {91.0, 91.0, 47.4, 4.78};
  const double w_beta[] = {100.0, 50.0, 10.0, 5.0};
  StageSchedule s;
  for (int k = 0; k < 4; ++k) {
    Stage st;
    st.weights = {{"w_theta", w_theta[k]}, {"w_beta", w_beta[k]}};
    st.sigma = 100.0;
    s.stages.push_back(st);
  }
  return s;
}

StageSchedule default_shape_schedule(DatasetKind kind) {
  const double w_l[] = {6.5, 5.25, 4.0};
  const double w_b[] = {0.9, 0.75, 0.6};
  const double sigma_synthetic[] = {0.05, 0.03, 0.01};
  const double sigma_real[] = {0.08, 0.04, 0.03};
  StageSchedule s;
  for (int k = 0; k < 3; ++k) {
    Stage st;
    st.weights = {{"w_L", w_l[k]}, {"w_B", w_b[k]}};
    st.sigma = kind == DatasetKind::Synthetic ? sigma_synthetic[k] : sigma_real[k];
    s.stages.push_back(st);
  }
  return s;
}

int LeastSquaresProblem::num_parameters() const {
  int n = 0;
  for (const auto& b : blocks()) n = std::max(n, b.offset + b.size);
  return n;
}

void LeastSquaresProblem::evaluate(const Eigen::VectorXd& x, Eigen::VectorXd& r,
                                   SparseMatrix& jacobian) const {
  r = residuals(x);
  jacobian = numeric_jacobian([this](const Eigen::VectorXd& p) { return residuals(p); }, x).sparseView();
}

FunctionProblem::FunctionProblem(int num_parameters, ResidualFn residual, JacobianFn jacobian)
    : blocks_{{"x", 0, num_parameters, false}},
      residual_(std::move(residual)),
      jacobian_(std::move(jacobian)) {}

void FunctionProblem::evaluate(const Eigen::VectorXd& x, Eigen::VectorXd& r,
                               SparseMatrix& jacobian) const {
  if (!jacobian_) {
    LeastSquaresProblem::evaluate(x, r, jacobian);
    return;
  }
  r = residual_(x);
  jacobian = jacobian_(x).sparseView();
}

Eigen::MatrixXd numeric_jacobian(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                                 const Eigen::VectorXd& x, double h) {
  Eigen::VectorXd probe = x;
  Eigen::MatrixXd jac;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    probe(j) = x(j) + h;
    const Eigen::VectorXd fp = f(probe);
    probe(j) = x(j) - h;
    const Eigen::VectorXd fm = f(probe);
    probe(j) = x(j);
    if (!fp.allFinite() || !fm.allFinite()) {
      throw NumericError("numeric_jacobian: non-finite evaluation in column " + std::to_string(j));
    }
    if (j == 0) jac.resize(fp.size(), x.size());
    jac.col(j) = (fp - fm) / (2.0 * h);
  }
  return jac;
}

// ---------------------------------------------------------------------------

namespace {

// Solves (A + lambda I) h = b with a pivoting LDL^T; adds Levenberg damping
// when the pivots reveal a (near) rank deficiency.
Eigen::VectorXd solve_normal_equations(const SparseMatrix& a, const Eigen::VectorXd& b,
                                       const DoglegOptions& options) {
  const Eigen::Index n = a.rows();
  auto degenerate = [&](const Eigen::VectorXd& d) {
    if (d.size() == 0) return false;
    const double mx = d.cwiseAbs().maxCoeff();
    return !(d.minCoeff() > options.singular_ratio * mx) || !(mx > 0.0);
  };
  const double lambda = options.damping * std::max(a.diagonal().sum(), 1e-300);
  if (n <= 400) {
    Eigen::MatrixXd dense(a);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(dense);
    if (ldlt.info() != Eigen::Success || degenerate(ldlt.vectorD())) {
      dense.diagonal().array() += lambda;
      ldlt.compute(dense);
    }
    return ldlt.solve(b);
  }
  Eigen::SimplicialLDLT<SparseMatrix> ldlt(a);
  if (ldlt.info() != Eigen::Success || degenerate(ldlt.vectorD())) {
    SparseMatrix damped = a;
    for (Eigen::Index i = 0; i < n; ++i) damped.coeffRef(i, i) += lambda;
    ldlt.compute(damped);
  }
  return ldlt.solve(b);
}

}  // namespace

SolveResult dogleg_minimize(LeastSquaresProblem& problem, const Eigen::VectorXd& x0,
                            const StageSchedule& schedule, const DoglegOptions& options) {
  schedule.validate();
  const int n = problem.num_parameters();
  if (x0.size() != n) throw DimensionError("dogleg_minimize: x0 has the wrong size");
  if (!x0.allFinite()) throw NumericError("dogleg_minimize: x0 is not finite");

  std::vector<int> free_index;
  for (const auto& b : problem.blocks()) {
    if (b.frozen) continue;
    for (int i = 0; i < b.size; ++i) free_index.push_back(b.offset + i);
  }
  std::sort(free_index.begin(), free_index.end());
  const int nf = static_cast<int>(free_index.size());
  SparseMatrix select(n, nf);
  {
    std::vector<Eigen::Triplet<double>> t;
    for (int j = 0; j < nf; ++j) t.emplace_back(free_index[j], j, 1.0);
    select.setFromTriplets(t.begin(), t.end());
  }

  SolveResult result;
  result.x = x0;
  double radius = std::clamp(options.initial_radius, options.min_radius, options.max_radius);

  Eigen::VectorXd r;
  SparseMatrix jac;
  for (size_t si = 0; si < schedule.stages.size(); ++si) {
    const Stage& stage = schedule.stages[si];
    problem.begin_stage(stage, result.x);
    StageTrace trace;
    trace.stage = stage;

    problem.evaluate(result.x, r, jac);
    if (!r.allFinite() || (jac.nonZeros() > 0 && !Eigen::Map<const Eigen::VectorXd>(jac.valuePtr(), jac.nonZeros()).allFinite())) {
      throw NumericError("dogleg_minimize: non-finite residual or Jacobian at stage " + std::to_string(si) + " start");
    }
    double energy = r.squaredNorm();
    trace.energies.push_back(energy);

    bool need_linearization = true;
    SparseMatrix jf;
    Eigen::VectorXd g, h_gn, h_sd;
    double g_norm = 0.0;
    while (trace.iterations < stage.max_iterations) {
      if (energy == 0.0) {
        trace.termination = "zero_energy";
        break;
      }
      if (need_linearization) {
        jf = jac * select;
        g = jf.transpose() * r;
        if (nf == 0 || g.lpNorm<Eigen::Infinity>() <= options.gradient_tolerance) {
          trace.termination = "gradient";
          break;
        }
        const SparseMatrix normal = (jf.transpose() * jf).pruned();
        h_gn = solve_normal_equations(normal, -g, options);
        const Eigen::VectorXd jg = jf * g;
        const double jg2 = jg.squaredNorm();
        g_norm = g.norm();
        const double alpha = jg2 > 0.0 ? g_norm * g_norm / jg2 : 1.0;
        h_sd = -alpha * g;
        need_linearization = false;
      }

      // Dogleg step within the current trust radius.
      Eigen::VectorXd step;
      const double gn_norm = h_gn.norm();
      const double sd_norm = h_sd.norm();
      if (h_gn.allFinite() && gn_norm <= radius) {
        step = h_gn;
      } else if (sd_norm >= radius || !h_gn.allFinite()) {
        step = (radius / sd_norm) * h_sd;
      } else {
        const Eigen::VectorXd diff = h_gn - h_sd;
        const double a = diff.squaredNorm();
        const double b = 2.0 * h_sd.dot(diff);
        const double c = sd_norm * sd_norm - radius * radius;
        const double t = (-b + std::sqrt(std::max(0.0, b * b - 4.0 * a * c))) / (2.0 * a);
        step = h_sd + t * diff;
      }
      const double step_norm = step.norm();
      if (step_norm <= options.step_tolerance * (result.x.norm() + options.step_tolerance)) {
        trace.termination = "step";
        break;
      }

      ++trace.iterations;
      const Eigen::VectorXd x_new = result.x + select * step;
      const Eigen::VectorXd r_new = problem.residuals(x_new);
      const double energy_new = r_new.allFinite() ? r_new.squaredNorm() : INFINITY;
      const double predicted = -2.0 * g.dot(step) - (jf * step).squaredNorm();
      const double gain = predicted > 0.0 ? (energy - energy_new) / predicted : -1.0;

      if (gain > 0.0 && energy_new <= energy) {
        const double previous = energy;
        result.x = x_new;
        energy = energy_new;
        ++trace.accepted;
        trace.energies.push_back(energy);
        if (gain > 0.75) radius = std::max(radius, 3.0 * step_norm);
        if (gain < 0.25) radius *= 0.5;
        radius = std::clamp(radius, options.min_radius, options.max_radius);
        trace.radii.push_back(radius);
        problem.evaluate(result.x, r, jac);
        need_linearization = true;
        if ((previous - energy) <= stage.relative_tolerance * previous) {
          trace.termination = "relative_tolerance";
          break;
        }
      } else {
        ++trace.rejected;
        radius = std::clamp(0.5 * std::min(radius, step_norm), options.min_radius, options.max_radius);
        trace.radii.push_back(radius);
        if (radius <= options.min_radius) {
          trace.termination = "radius";
          break;
        }
      }
    }
    if (trace.termination.empty()) trace.termination = "max_iterations";
    result.stages.push_back(std::move(trace));
  }
  result.final_energy = problem.residuals(result.x).squaredNorm();
  return result;
}

// ---------------------------------------------------------------------------

void ResidualBuilder::add(const Eigen::VectorXd& residual, const Eigen::MatrixXd& jacobian,
                          const std::vector<int>& columns) {
  const int row0 = rows();
  for (Eigen::Index i = 0; i < residual.size(); ++i) values_.push_back(residual(i));
  for (size_t c = 0; c < columns.size(); ++c) {
    for (Eigen::Index i = 0; i < jacobian.rows(); ++i) {
      const double v = jacobian(i, static_cast<Eigen::Index>(c));
      if (v != 0.0) triplets_.emplace_back(row0 + static_cast<int>(i), columns[c], v);
    }
  }
}

void ResidualBuilder::add_constant(const Eigen::VectorXd& residual) {
  for (Eigen::Index i = 0; i < residual.size(); ++i) values_.push_back(residual(i));
}

int ResidualBuilder::append_rows(const Eigen::VectorXd& residual) {
  const int row0 = rows();
  add_constant(residual);
  return row0;
}

Eigen::VectorXd ResidualBuilder::residuals() const {
  return Eigen::Map<const Eigen::VectorXd>(values_.data(), static_cast<Eigen::Index>(values_.size()));
}

SparseMatrix ResidualBuilder::jacobian() const {
  SparseMatrix j(rows(), num_parameters_);
  j.setFromTriplets(triplets_.begin(), triplets_.end());
  return j;
}

}  // namespace bodyfit

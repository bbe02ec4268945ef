#include <doctest.h>

#include <cmath>
#include <limits>

#include "bodyfit/errors.hpp"
#include "bodyfit/robust_optim.hpp"
#include "support/test_support.hpp"

using namespace bodyfit;
using bodyfit::testing::Rng;

namespace {

StageSchedule single_stage(int iterations = 100, double tol = 1e-15) {
  Stage s;
  s.max_iterations = iterations;
  s.relative_tolerance = tol;
  return StageSchedule{{s}};
}

FunctionProblem rosenbrock() {
  return FunctionProblem(
      2,
      [](const Eigen::VectorXd& x) {
        Eigen::VectorXd r(2);
        r << 10.0 * (x(1) - x(0) * x(0)), 1.0 - x(0);
        return r;
      },
      [](const Eigen::VectorXd& x) {
        Eigen::MatrixXd j(2, 2);
        j << -20.0 * x(0), 10.0, -1.0, 0.0;
        return j;
      });
}

// Records the stage handed to begin_stage so the schedule can be audited.
class RecordingProblem : public LeastSquaresProblem {
 public:
  explicit RecordingProblem(Eigen::VectorXd target) : target_(std::move(target)) {
    blocks_.push_back({"a", 0, 2, false});
    blocks_.push_back({"b", 2, static_cast<int>(target_.size()) - 2, true});
  }
  const std::vector<ParameterBlock>& blocks() const override { return blocks_; }
  void begin_stage(const Stage& stage, const Eigen::VectorXd&) override {
    seen.push_back(stage);
    weight = stage.weight("w");
  }
  Eigen::VectorXd residuals(const Eigen::VectorXd& x) const override {
    Eigen::VectorXd r = x - target_;
    r.head(2) *= std::sqrt(weight);
    for (Eigen::Index i = 0; i < r.size(); ++i) r(i) += 0.1 * std::sin(x(i));
    return r;
  }
  std::vector<Stage> seen;
  double weight = 1.0;

 private:
  std::vector<ParameterBlock> blocks_;
  Eigen::VectorXd target_;
};

}  // namespace

TEST_SUITE("robust_optim") {

TEST_CASE("Geman-McClure closed-form values") {
  CHECK(geman_mcclure(0.0, 100.0) == 0.0);
  CHECK(geman_mcclure(1e4, 100.0) == 0.5);
  CHECK(geman_mcclure(4.0, 2.0) == 0.5);
  const double far = geman_mcclure(1e4 * 1e4, 100.0);
  CHECK(far == doctest::Approx(1e4 / (1.0 + 1e4)).epsilon(1e-15));
  CHECK(far > 0.9999);
  CHECK(geman_mcclure(25.0, 100.0) == doctest::Approx(25.0 / 10025.0).epsilon(1e-15));
}

TEST_CASE("Geman-McClure is monotone and bounded by one") {
  Rng rng(51);
  for (double sigma : {0.01, 1.0, 100.0}) {
    double prev = -1.0;
    for (int i = 0; i <= 2000; ++i) {
      const double s = std::pow(10.0, -8.0 + 0.01 * i);
      const double v = geman_mcclure(s, sigma);
      CHECK(v >= prev);
      CHECK(v <= 1.0);
      CHECK(v >= 0.0);
      prev = v;
    }
    const double a = rng.uniform(0, 10), b = a + rng.uniform(0, 10);
    CHECK(geman_mcclure(a, sigma) <= geman_mcclure(b, sigma));
  }
}

TEST_CASE("robustified group squares to the weighted loss") {
  Rng rng(52);
  for (int t = 0; t < 100; ++t) {
    const Eigen::VectorXd e = rng.vector(3, 5.0);
    const double sigma = rng.uniform(0.1, 10), w = rng.uniform(0.1, 5);
    Eigen::VectorXd r = e;
    Eigen::MatrixXd j(3, 0);
    robustify_group(r, j, w, sigma);
    CHECK(r.squaredNorm() == doctest::Approx(w * geman_mcclure(e.squaredNorm(), sigma)).epsilon(1e-13));
  }
}

TEST_CASE("robustified Jacobian matches finite differences") {
  Rng rng(53);
  for (int t = 0; t < 50; ++t) {
    const Eigen::MatrixXd a = Eigen::MatrixXd::Random(2, 3);
    const Eigen::VectorXd b = rng.vector(2, 3.0);
    const double sigma = rng.uniform(0.5, 3), w = rng.uniform(0.5, 2);
    auto f = [&](const Eigen::VectorXd& x) {
      Eigen::VectorXd r = a * x + b;
      Eigen::MatrixXd none(2, 0);
      robustify_group(r, none, w, sigma);
      return r;
    };
    const Eigen::VectorXd x = rng.vector(3, 2.0);
    Eigen::VectorXd r = a * x + b;
    Eigen::MatrixXd j = a;
    robustify_group(r, j, w, sigma);
    CHECK(bodyfit::testing::relative_error(j, bodyfit::testing::central_differences(f, x)) < 1e-7);
  }
}

TEST_CASE("numeric Jacobian of a linear map and of sine") {
  Rng rng(54);
  const Eigen::MatrixXd a = Eigen::MatrixXd::Random(4, 3);
  const Eigen::MatrixXd j = numeric_jacobian([&](const Eigen::VectorXd& x) { return Eigen::VectorXd(a * x); },
                                             rng.vector(3), 1e-6);
  CHECK((j - a).cwiseAbs().maxCoeff() < 1e-10);
  const Eigen::MatrixXd s = numeric_jacobian(
      [](const Eigen::VectorXd& x) { return Eigen::VectorXd(x.array().sin()); }, Eigen::VectorXd::Zero(1), 1e-6);
  CHECK(std::abs(s(0, 0) - 1.0) < 1e-10);
  CHECK_THROWS_AS(numeric_jacobian([](const Eigen::VectorXd& x) { return Eigen::VectorXd(x.array().log()); },
                                   Eigen::VectorXd::Zero(1)),
                  NumericError);
}

TEST_CASE("linear residual converges in at most five iterations") {
  Rng rng(55);
  const Eigen::VectorXd a = rng.vector(6, 10.0);
  FunctionProblem p(6, [&](const Eigen::VectorXd& x) { return Eigen::VectorXd(x - a); },
                    [](const Eigen::VectorXd& x) { return Eigen::MatrixXd::Identity(x.size(), x.size()).eval(); });
  DoglegOptions o;
  o.initial_radius = 100.0;
  const SolveResult r = dogleg_minimize(p, Eigen::VectorXd::Zero(6), single_stage(), o);
  CHECK((r.x - a).norm() < 1e-10);
  CHECK(r.stages[0].iterations <= 5);
}

TEST_CASE("Rosenbrock from (-1.2, 1) reaches (1, 1)") {
  FunctionProblem p = rosenbrock();
  const SolveResult r = dogleg_minimize(p, Eigen::Vector2d(-1.2, 1.0), single_stage(200));
  CHECK((r.x - Eigen::Vector2d(1, 1)).norm() < 1e-6);
  CHECK(bodyfit::testing::monotone(r.stages));
  FunctionProblem numeric(2, [](const Eigen::VectorXd& x) {
    Eigen::VectorXd v(2);
    v << 10.0 * (x(1) - x(0) * x(0)), 1.0 - x(0);
    return v;
  });
  const SolveResult rn = dogleg_minimize(numeric, Eigen::Vector2d(-1.2, 1.0), single_stage(200));
  CHECK((rn.x - Eigen::Vector2d(1, 1)).norm() < 1e-6);
}

TEST_CASE("an optimal start returns immediately") {
  FunctionProblem p = rosenbrock();
  const Eigen::VectorXd x0 = Eigen::Vector2d(1, 1);
  const SolveResult r = dogleg_minimize(p, x0, single_stage());
  CHECK(r.x == x0);
  CHECK(r.stages[0].accepted == 0);
  CHECK(r.final_energy == 0.0);
}

TEST_CASE("energy never increases across random problems") {
  Rng rng(56);
  for (int t = 0; t < 30; ++t) {
    const Eigen::MatrixXd a = Eigen::MatrixXd::Random(8, 4);
    const Eigen::VectorXd b = rng.vector(8, 3.0);
    FunctionProblem p(4, [&](const Eigen::VectorXd& x) {
      Eigen::VectorXd r = a * x.array().sin().matrix() + b + 0.3 * x.array().square().matrix().replicate(2, 1);
      return r;
    });
    const SolveResult r = dogleg_minimize(p, rng.vector(4, 3.0), default_pose_schedule());
    CHECK(bodyfit::testing::monotone(r.stages));
    CHECK(r.final_energy <= r.stages.front().energies.front());
    for (const auto& s : r.stages) {
      for (double radius : s.radii) {
        CHECK(radius >= 1e-12);
        CHECK(radius <= 1e6);
      }
    }
  }
}

TEST_CASE("rank-deficient problems are damped rather than failing") {
  FunctionProblem p(3, [](const Eigen::VectorXd& x) {
    Eigen::VectorXd r(2);
    r << x(0) + x(1) - 2.0, 0.5 * (x(0) + x(1)) - 1.0;
    return r;
  });
  const SolveResult r = dogleg_minimize(p, Eigen::Vector3d(5, -1, 7), single_stage());
  CHECK(std::abs(r.x(0) + r.x(1) - 2.0) < 1e-6);
  CHECK(r.x.allFinite());
}

TEST_CASE("frozen blocks are bit-identical and stage weights are applied as scheduled") {
  Rng rng(57);
  RecordingProblem p(rng.vector(5, 2.0));
  StageSchedule s;
  for (double w : {4.0, 0.25, 9.0}) {
    Stage st;
    st.weights = {{"w", w}, {"unused", 1.5 * w}};
    st.sigma = w;
    s.stages.push_back(st);
  }
  const Eigen::VectorXd x0 = rng.vector(5, 2.0);
  const SolveResult r = dogleg_minimize(p, x0, s);
  CHECK(r.x.tail(3) == x0.tail(3));
  CHECK(r.x.head(2) != x0.head(2));
  REQUIRE(p.seen.size() == 3);
  REQUIRE(r.stages.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    CHECK(p.seen[i].weights == s.stages[i].weights);
    CHECK(r.stages[i].stage.weights == s.stages[i].weights);
    CHECK(r.stages[i].stage.sigma == s.stages[i].sigma);
  }
}

TEST_CASE("non-finite start is a numeric error") {
  FunctionProblem p(1, [](const Eigen::VectorXd& x) { return Eigen::VectorXd(x.array().sqrt()); });
  CHECK_THROWS_AS(dogleg_minimize(p, Eigen::VectorXd::Constant(1, -1.0), single_stage()), NumericError);
  CHECK_THROWS_AS(
      dogleg_minimize(p, Eigen::VectorXd::Constant(1, std::numeric_limits<double>::quiet_NaN()), single_stage()),
      NumericError);
  CHECK_THROWS_AS(dogleg_minimize(p, Eigen::VectorXd::Zero(2), single_stage()), DimensionError);
}

TEST_CASE("default schedules carry the tabulated values") {
  const StageSchedule pose = default_pose_schedule();
  REQUIRE(pose.stages.size() == 4);
  const double wt[] = {91.0, 91.0, 47.4, 4.78}, wb[] = {100, 50, 10, 5};
  for (int k = 0; k < 4; ++k) {
    CHECK(pose.stages[k].weight("w_theta") == wt[k]);
    CHECK(pose.stages[k].weight("w_beta") == wb[k]);
    CHECK(pose.stages[k].sigma == 100.0);
    CHECK(pose.stages[k].max_iterations == 30);
    CHECK(pose.stages[k].relative_tolerance == 1e-4);
  }
  const StageSchedule syn = default_shape_schedule(DatasetKind::Synthetic);
  const StageSchedule real = default_shape_schedule(DatasetKind::Real);
  REQUIRE(syn.stages.size() == 3);
  const double wl[] = {6.5, 5.25, 4.0}, wbb[] = {0.9, 0.75, 0.6}, ss[] = {0.05, 0.03, 0.01}, sr[] = {0.08, 0.04, 0.03};
  for (int k = 0; k < 3; ++k) {
    CHECK(syn.stages[k].weight("w_L") == wl[k]);
    CHECK(syn.stages[k].weight("w_B") == wbb[k]);
    CHECK(syn.stages[k].sigma == ss[k]);
    CHECK(real.stages[k].sigma == sr[k]);
  }
  CHECK_THROWS_AS(pose.stages[0].weight("w_L"), ConfigError);
}

TEST_CASE("schedule validation") {
  StageSchedule s;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = default_pose_schedule();
  CHECK_NOTHROW(s.validate());
  s.stages[1].weights["w_theta"] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = default_pose_schedule();
  s.stages[0].relative_tolerance = 0.0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = default_pose_schedule();
  s.stages[0].sigma = -1.0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("residual builder assembles sparse rows") {
  ResidualBuilder b(4);
  b.add(Eigen::Vector2d(1, 2), (Eigen::MatrixXd(2, 2) << 1, 2, 3, 4).finished(), {1, 3});
  b.add_constant(Eigen::VectorXd::Constant(1, 5.0));
  const int row = b.append_rows(Eigen::VectorXd::Constant(1, 6.0));
  b.add_entry(row, 0, 7.0);
  CHECK(b.rows() == 4);
  const Eigen::MatrixXd j(b.jacobian());
  Eigen::MatrixXd expected = Eigen::MatrixXd::Zero(4, 4);
  expected(0, 1) = 1;
  expected(0, 3) = 2;
  expected(1, 1) = 3;
  expected(1, 3) = 4;
  expected(3, 0) = 7;
  CHECK(j == expected);
  CHECK(b.residuals() == Eigen::Vector4d(1, 2, 5, 6));
}

}  // TEST_SUITE

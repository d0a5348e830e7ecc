#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "helpers.hpp"
#include "rvdock/nlp.hpp"
#include "rvdock/transcription.hpp"

using namespace rvdock;

namespace {

NLPProblem unconstrained(int n, std::function<double(const Eigen::VectorXd&)> f) {
  NLPProblem p;
  p.n = n;
  p.evaluate = [f = std::move(f)](const Eigen::VectorXd& z) {
    NLPEvaluation e;
    e.objective = f(z);
    e.eq.resize(0);
    e.ineq.resize(0);
    return e;
  };
  return p;
}

/// min z1 + z2 on the circle z1^2 + z2^2 = 2; optimum (-1,-1), multiplier -1/2.
NLPProblem circle_problem() {
  NLPProblem p;
  p.n = 2;
  p.num_eq = 1;
  p.evaluate = [](const Eigen::VectorXd& z) {
    NLPEvaluation e;
    e.objective = z[0] + z[1];
    e.eq.resize(1);
    e.eq[0] = z[0] * z[0] + z[1] * z[1] - 2.0;
    e.ineq.resize(0);
    return e;
  };
  return p;
}

/// min z^2 subject to z >= 1; optimum z = 1 with multiplier 2.
NLPProblem halfline_problem() {
  NLPProblem p;
  p.n = 1;
  p.num_ineq = 1;
  p.evaluate = [](const Eigen::VectorXd& z) {
    NLPEvaluation e;
    e.objective = z[0] * z[0];
    e.eq.resize(0);
    e.ineq.resize(1);
    e.ineq[0] = z[0] - 1.0;
    return e;
  };
  return p;
}

SQPSettings central(double kkt = 1e-9, double feas = 1e-9) {
  SQPSettings s;
  s.gradient = GradientMode::CentralDifference;
  s.kkt_tol = kkt;
  s.feas_tol = feas;
  return s;
}

struct LogRow {
  int iter;
  double objective, merit, step, kkt, viol;
};

/// Data rows start with an integer iteration index; penalty notices and the
/// header do not.
std::vector<LogRow> parse_log(const std::string& text, std::vector<int>* penalty_before = nullptr) {
  std::vector<LogRow> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    LogRow r{};
    if (ls >> r.iter >> r.objective >> r.merit >> r.step >> r.kkt >> r.viol) {
      rows.push_back(r);
    } else if (penalty_before && line.find("penalty") != std::string::npos) {
      penalty_before->push_back(static_cast<int>(rows.size()));
    }
  }
  return rows;
}

}  // namespace

TEST_CASE("solve: unconstrained quadratic lands on the analytic minimum", "[nlp]") {
  const NLPProblem p = unconstrained(2, [](const Eigen::VectorXd& z) {
    return (z[0] - 1.0) * (z[0] - 1.0) + (z[1] - 2.0) * (z[1] - 2.0);
  });
  const SolveReport r = solve(p, Eigen::VectorXd::Zero(2), central(1e-10, 1e-10));
  REQUIRE(r.status == SQPStatus::Converged);
  CHECK(std::abs(r.z[0] - 1.0) < 1e-8);
  CHECK(std::abs(r.z[1] - 2.0) < 1e-8);
  CHECK(r.kkt_stationarity <= 1e-10);
}

TEST_CASE("solve: equality-constrained optimum on the circle", "[nlp]") {
  const NLPProblem p = circle_problem();
  Eigen::VectorXd z0(2);
  z0 << -2.0, -1.0;
  const SolveReport r = solve(p, z0, central());
  REQUIRE(r.status == SQPStatus::Converged);
  CHECK(std::abs(r.z[0] + 1.0) < 1e-8);
  CHECK(std::abs(r.z[1] + 1.0) < 1e-8);
  // Stationarity (1,1) = lambda * (2 z1, 2 z2) at (-1,-1) gives lambda = -1/2.
  CHECK(r.multipliers.eq[0] == Catch::Approx(-0.5).margin(1e-6));
}

TEST_CASE("solve: active inequality with hand-checked multiplier", "[nlp]") {
  const NLPProblem p = halfline_problem();
  Eigen::VectorXd z0(1);
  z0 << 3.0;
  const SolveReport r = solve(p, z0, central());
  REQUIRE(r.status == SQPStatus::Converged);
  CHECK(std::abs(r.z[0] - 1.0) < 1e-8);
  CHECK(r.multipliers.ineq[0] == Catch::Approx(2.0).margin(1e-6));
  CHECK(r.max_constraint_violation <= 1e-9);
}

TEST_CASE("solve: infeasible start still reaches the bound optimum", "[nlp]") {
  const NLPProblem p = halfline_problem();
  const SolveReport r = solve(p, Eigen::VectorXd::Zero(1), central());
  REQUIRE(r.status == SQPStatus::Converged);
  CHECK(std::abs(r.z[0] - 1.0) < 1e-8);
}

TEST_CASE("solve: inconsistent cold-start linearization recovers by relaxation", "[nlp]") {
  // min (z2 - 1)^2 subject to z1 + z2^2 = 10 and z1 <= 8. At the origin the
  // linearized equality demands d1 = 10 while the inequality, satisfied with
  // slack 8, caps d1 at 8; no full-correction step exists until the equality
  // right-hand side is scaled back. Optimum: z1 = 8, z2 = sqrt(2).
  NLPProblem p;
  p.n = 2;
  p.num_eq = 1;
  p.num_ineq = 1;
  p.evaluate = [](const Eigen::VectorXd& z) {
    NLPEvaluation e;
    e.objective = (z[1] - 1.0) * (z[1] - 1.0);
    e.eq.resize(1);
    e.eq[0] = z[0] + z[1] * z[1] - 10.0;
    e.ineq.resize(1);
    e.ineq[0] = 8.0 - z[0];
    return e;
  };
  std::ostringstream log;
  SQPSettings s = central();
  s.log = &log;
  const SolveReport r = solve(p, Eigen::VectorXd::Zero(2), s);
  REQUIRE(r.status == SQPStatus::Converged);
  CHECK(std::abs(r.z[0] - 8.0) < 1e-7);
  CHECK(std::abs(r.z[1] - std::sqrt(2.0)) < 1e-7);
  const double f_star = (std::sqrt(2.0) - 1.0) * (std::sqrt(2.0) - 1.0);
  CHECK(r.objective == Catch::Approx(f_star).margin(1e-8));
  // Stationarity (0, 2(z2-1)) = y (1, 2 z2) + lam (-1, 0) gives
  // y = lam = 1 - 1/sqrt(2) at the optimum; both constraints are active.
  const double y_star = 1.0 - 1.0 / std::sqrt(2.0);
  CHECK(r.multipliers.eq[0] == Catch::Approx(y_star).margin(1e-6));
  CHECK(r.multipliers.ineq[0] == Catch::Approx(y_star).margin(1e-6));
  CHECK(log.str().find("relaxed constraint correction") != std::string::npos);
}

TEST_CASE("gradient: quadratic scalar slope at z = 3", "[nlp]") {
  const auto f = [](const Eigen::VectorXd& z) { return z[0] * z[0]; };
  Eigen::VectorXd z(1);
  z << 3.0;
  SQPSettings fwd;
  CHECK(gradient(f, z, fwd)[0] == Catch::Approx(6.0).margin(1e-6));
  SQPSettings ctr;
  ctr.gradient = GradientMode::CentralDifference;
  CHECK(gradient(f, z, ctr)[0] == Catch::Approx(6.0).margin(1e-9));
}

TEST_CASE("gradient: docking objective slope along the final time is unity", "[nlp]") {
  OCPDefinition ocp;
  ocp.x0 = testutil::tumbling_case_state();
  ocp.params = testutil::tumbling_case_params();
  ocp.N = 3;
  ocp.t_max = 60.0;
  ocp.weights.w_t = 1.0;
  ocp.integrator.jacobian_mode = JacobianMode::Analytic;
  const auto f = [&ocp](const Eigen::VectorXd& z) {
    return evaluate_objective(DecisionVector::from_flat(z, ocp.N), ocp);
  };
  // Zero thrust keeps the energy terms at zero for any tf, so dJ/dtf = w_t.
  const Eigen::VectorXd z = initial_guess(ocp).to_flat();
  const Eigen::VectorXd g = gradient(f, z, SQPSettings{});
  CHECK(g[g.size() - 1] == Catch::Approx(1.0).margin(1e-8));
}

TEST_CASE("gradient: directional derivative matches a central oracle on the docking problem",
          "[nlp]") {
  OCPDefinition ocp;
  ocp.x0 = testutil::tumbling_case_state();
  ocp.params = testutil::tumbling_case_params();
  ocp.N = 4;
  ocp.t_max = 60.0;
  ocp.integrator.jacobian_mode = JacobianMode::Analytic;
  DecisionVector zd = initial_guess(ocp);
  for (int i = 0; i < ocp.N; ++i) {
    zd.u[i].thrust = {0.02 * std::sin(i + 1.0), -0.01, 0.015 * std::cos(i * 0.5)};
    zd.u[i].torque = {0.1, -0.05 * std::sin(i * 1.1), 0.08};
  }
  const auto f = [&ocp](const Eigen::VectorXd& z) {
    return evaluate_objective(DecisionVector::from_flat(z, ocp.N), ocp);
  };
  const Eigen::VectorXd z = zd.to_flat();
  const Eigen::VectorXd g = gradient(f, z, SQPSettings{});

  Eigen::VectorXd dir(z.size());
  for (int i = 0; i < dir.size(); ++i) dir[i] = testutil::uniform(-1.0, 1.0);
  dir.normalize();
  const double eps = 1e-4;
  const double oracle = (f(z + eps * dir) - f(z - eps * dir)) / (2.0 * eps);
  CHECK(g.dot(dir) == Catch::Approx(oracle).epsilon(1e-5));
}

TEST_CASE("kkt_residuals: quadratic minimum with zero multipliers", "[nlp]") {
  const NLPProblem p = unconstrained(1, [](const Eigen::VectorXd& z) {
    return (z[0] - 1.0) * (z[0] - 1.0);
  });
  Eigen::VectorXd z(1);
  z << 1.0;
  const KKTResiduals r = kkt_residuals(p, z, Multipliers{}, central());
  CHECK(r.stationarity <= 1e-12);
  CHECK(r.feasibility <= 1e-12);
  CHECK(r.complementarity <= 1e-12);
}

TEST_CASE("kkt_residuals: exact KKT point of the half-line problem", "[nlp]") {
  const NLPProblem p = halfline_problem();
  Multipliers m;
  m.ineq.resize(1);
  m.ineq << 2.0;
  Eigen::VectorXd z(1);
  z << 1.0;
  const KKTResiduals at_opt = kkt_residuals(p, z, m, central());
  CHECK(at_opt.stationarity <= 1e-10);
  CHECK(at_opt.feasibility == 0.0);
  CHECK(at_opt.complementarity <= 1e-12);

  z << 1.1;  // feasible but not stationary: grad L = 2z - lambda = 0.2
  const KKTResiduals off = kkt_residuals(p, z, m, central());
  CHECK(off.feasibility == 0.0);
  CHECK(off.stationarity == Catch::Approx(0.2).margin(1e-9));
  CHECK(off.complementarity == Catch::Approx(0.2).margin(1e-9));
}

TEST_CASE("kkt_residuals: multiplier size mismatch is rejected", "[nlp]") {
  const NLPProblem p = halfline_problem();
  Eigen::VectorXd z(1);
  z << 1.0;
  Multipliers m;
  m.ineq.resize(2);
  m.ineq << 1.0, 1.0;
  CHECK_THROWS_AS(kkt_residuals(p, z, m), DimensionMismatch);
}

TEST_CASE("solve: variable bounds carry their own multipliers", "[nlp]") {
  NLPProblem p = unconstrained(1, [](const Eigen::VectorXd& z) {
    return (z[0] - 3.0) * (z[0] - 3.0);
  });
  p.lower = Eigen::VectorXd::Constant(1, -std::numeric_limits<double>::infinity());
  p.upper = Eigen::VectorXd::Constant(1, 1.0);
  Eigen::VectorXd z0(1);
  z0 << 0.0;
  const SolveReport r = solve(p, z0, central());
  REQUIRE(r.status == SQPStatus::Converged);
  CHECK(std::abs(r.z[0] - 1.0) < 1e-8);
  CHECK(r.multipliers.upper[0] == Catch::Approx(4.0).margin(1e-6));

  NLPProblem q = unconstrained(1, [](const Eigen::VectorXd& z) {
    return (z[0] + 3.0) * (z[0] + 3.0);
  });
  q.lower = Eigen::VectorXd::Constant(1, -1.0);
  const SolveReport rq = solve(q, z0, central());
  REQUIRE(rq.status == SQPStatus::Converged);
  CHECK(std::abs(rq.z[0] + 1.0) < 1e-8);
  CHECK(rq.multipliers.lower[0] == Catch::Approx(4.0).margin(1e-6));
}

TEST_CASE("solve: report residuals agree with the public KKT evaluation", "[nlp]") {
  const NLPProblem p = halfline_problem();
  Eigen::VectorXd z0(1);
  z0 << 3.0;
  const SQPSettings s = central();
  const SolveReport r = solve(p, z0, s);
  REQUIRE(r.status == SQPStatus::Converged);
  const KKTResiduals k = kkt_residuals(p, r.z, r.multipliers, s);
  CHECK(k.stationarity <= s.kkt_tol);
  CHECK(k.feasibility <= s.feas_tol);
  CHECK(k.complementarity <= s.kkt_tol);
}

TEST_CASE("solve: convex quadratic programs finish within five iterations", "[nlp]") {
  SECTION("well-scaled unconstrained quadratic") {
    const NLPProblem p = unconstrained(2, [](const Eigen::VectorXd& z) {
      return (z[0] - 1.0) * (z[0] - 1.0) + (z[1] - 2.0) * (z[1] - 2.0);
    });
    const SolveReport r = solve(p, Eigen::VectorXd::Zero(2), central(1e-10, 1e-10));
    REQUIRE(r.status == SQPStatus::Converged);
    CHECK(r.iterations <= 5);
    CHECK(r.kkt_stationarity <= 1e-10);
  }
  SECTION("equality-constrained quadratic") {
    NLPProblem p;
    p.n = 2;
    p.num_eq = 1;
    p.evaluate = [](const Eigen::VectorXd& z) {
      NLPEvaluation e;
      e.objective = z[0] * z[0] + 0.5 * z[1] * z[1] - z[0] - 2.0 * z[1];
      e.eq.resize(1);
      e.eq[0] = z[0] + z[1] - 1.0;
      e.ineq.resize(0);
      return e;
    };
    const SolveReport r = solve(p, Eigen::VectorXd::Zero(2), central(1e-10, 1e-10));
    REQUIRE(r.status == SQPStatus::Converged);
    CHECK(r.iterations <= 5);
    // Lagrange conditions by hand: 2 z1 - 1 = z2 - 2 = lambda with z1 + z2 = 1
    // gives z = (0, 1), lambda = -1.
    CHECK(std::abs(r.z[0]) < 1e-9);
    CHECK(std::abs(r.z[1] - 1.0) < 1e-9);
    CHECK(r.multipliers.eq[0] == Catch::Approx(-1.0).margin(1e-8));
  }
  SECTION("with an active linear constraint") {
    NLPProblem p;
    p.n = 2;
    p.num_ineq = 1;
    p.evaluate = [](const Eigen::VectorXd& z) {
      NLPEvaluation e;
      e.objective = z[0] * z[0] + 0.5 * z[1] * z[1];
      e.eq.resize(0);
      e.ineq.resize(1);
      e.ineq[0] = z[0] + z[1] - 1.0;  // z1 + z2 >= 1 binds at the optimum
      return e;
    };
    const SolveReport r = solve(p, Eigen::VectorXd::Zero(2), central(1e-10, 1e-10));
    REQUIRE(r.status == SQPStatus::Converged);
    CHECK(r.iterations <= 5);
    // Analytic optimum: minimize on the line -> z = (1/3, 2/3).
    CHECK(std::abs(r.z[0] - 1.0 / 3.0) < 1e-9);
    CHECK(std::abs(r.z[1] - 2.0 / 3.0) < 1e-9);
  }
}

TEST_CASE("solve: correlated curvature still reaches tight stationarity", "[nlp]") {
  Eigen::MatrixXd H(2, 2);
  H << 2.0, 0.3, 0.3, 1.0;
  Eigen::VectorXd g(2);
  g << -1.0, -2.0;
  const NLPProblem p = unconstrained(2, [H, g](const Eigen::VectorXd& z) {
    return 0.5 * z.dot(H * z) + g.dot(z);
  });
  const SolveReport r = solve(p, Eigen::VectorXd::Zero(2), central(1e-10, 1e-10));
  REQUIRE(r.status == SQPStatus::Converged);
  CHECK(r.kkt_stationarity <= 1e-10);
  const Eigen::Vector2d opt = H.ldlt().solve(-g);
  CHECK((r.z - opt).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("solve: solutions are insensitive to a tenfold objective scaling", "[nlp]") {
  const NLPProblem p = circle_problem();
  NLPProblem scaled = p;
  scaled.evaluate = [inner = p.evaluate](const Eigen::VectorXd& z) {
    NLPEvaluation e = inner(z);
    e.objective *= 10.0;
    return e;
  };
  Eigen::VectorXd z0(2);
  z0 << -2.0, -1.0;
  const SQPSettings s = central(1e-6, 1e-8);
  const SolveReport a = solve(p, z0, s);
  const SolveReport b = solve(scaled, z0, s);
  REQUIRE(a.status == SQPStatus::Converged);
  REQUIRE(b.status == SQPStatus::Converged);
  CHECK((a.z - b.z).cwiseAbs().maxCoeff() < 10.0 * s.kkt_tol);
}

TEST_CASE("solve: merit column is monotone between penalty updates", "[nlp]") {
  std::ostringstream log;
  SQPSettings s = central();
  s.log = &log;
  Eigen::VectorXd z0(2);
  z0 << -2.0, -1.0;
  const SolveReport r = solve(circle_problem(), z0, s);
  REQUIRE(r.status == SQPStatus::Converged);

  std::vector<int> penalty_before;
  const std::vector<LogRow> rows = parse_log(log.str(), &penalty_before);
  REQUIRE(rows.size() >= 2);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const bool mu_changed = std::find(penalty_before.begin(), penalty_before.end(),
                                      static_cast<int>(i)) != penalty_before.end();
    if (!mu_changed) CHECK(rows[i].merit <= rows[i - 1].merit + 1e-12);
  }
}

TEST_CASE("solve: iteration log keeps the fixed column order", "[nlp]") {
  std::ostringstream log;
  SQPSettings s = central(1e-10, 1e-10);
  s.log = &log;
  const NLPProblem p = unconstrained(2, [](const Eigen::VectorXd& z) {
    return (z[0] - 1.0) * (z[0] - 1.0) + (z[1] - 2.0) * (z[1] - 2.0);
  });
  solve(p, Eigen::VectorXd::Zero(2), s);

  const std::string text = log.str();
  CHECK(text.find("iter") != std::string::npos);
  CHECK(text.find("objective") != std::string::npos);
  CHECK(text.find("merit") != std::string::npos);
  CHECK(text.find("step") != std::string::npos);
  CHECK(text.find("kkt_stat") != std::string::npos);
  CHECK(text.find("max_viol") != std::string::npos);
  const std::vector<LogRow> rows = parse_log(text);
  REQUIRE(!rows.empty());
  for (std::size_t i = 0; i < rows.size(); ++i) CHECK(rows[i].iter == static_cast<int>(i + 1));
  CHECK(rows.back().kkt <= 1e-10);  // converged row reports the final residual
}

TEST_CASE("solve: Hessian model stays positive definite under damping", "[nlp]") {
  double min_eig = std::numeric_limits<double>::infinity();
  SQPSettings s = central(1e-5, 1e-8);
  s.hessian_observer = [&min_eig](int, const Eigen::MatrixXd& B) {
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(B);
    min_eig = std::min(min_eig, es.eigenvalues().minCoeff());
  };
  // Rosenbrock curvature is indefinite away from the valley, so the damping
  // branch is exercised.
  const NLPProblem p = unconstrained(2, [](const Eigen::VectorXd& z) {
    const double a = z[1] - z[0] * z[0];
    const double b = 1.0 - z[0];
    return 100.0 * a * a + b * b;
  });
  Eigen::VectorXd z0(2);
  z0 << -1.2, 1.0;
  const SolveReport r = solve(p, z0, s);
  REQUIRE(r.status == SQPStatus::Converged);
  CHECK(min_eig >= 1e-12);
  CHECK(std::abs(r.z[0] - 1.0) < 1e-3);
  CHECK(std::abs(r.z[1] - 1.0) < 1e-3);
}

TEST_CASE("solve: failure statuses are reported, not thrown", "[nlp]") {
  SECTION("iteration cap") {
    SQPSettings s = central();
    s.max_iterations = 1;
    Eigen::VectorXd z0(2);
    z0 << -2.0, -1.0;
    const SolveReport r = solve(circle_problem(), z0, s);
    CHECK(r.status == SQPStatus::MaxIterations);
    CHECK(r.iterations == 1);
  }
  SECTION("inconsistent linearized constraints fail the QP") {
    NLPProblem p;
    p.n = 1;
    p.num_eq = 2;
    p.evaluate = [](const Eigen::VectorXd& z) {
      NLPEvaluation e;
      e.objective = z[0] * z[0];
      e.eq.resize(2);
      e.eq << z[0], z[0] - 1.0;  // z = 0 and z = 1 cannot both hold
      e.ineq.resize(0);
      return e;
    };
    const SolveReport r = solve(p, Eigen::VectorXd::Zero(1), central());
    CHECK(r.status == SQPStatus::QPFailure);
  }
  SECTION("a hidden discontinuity defeats the line search") {
    // The forward difference sees the +1 jump and reports a huge slope the
    // merit can never follow.
    const NLPProblem p = unconstrained(1, [](const Eigen::VectorXd& z) {
      return z[0] * z[0] + (z[0] == 3.0 ? 0.0 : 1.0);
    });
    Eigen::VectorXd z0(1);
    z0 << 3.0;
    SQPSettings s;  // forward differences
    const SolveReport r = solve(p, z0, s);
    CHECK(r.status == SQPStatus::LineSearchFailure);
  }
}

TEST_CASE("solve and gradient: non-finite evaluations raise EvaluatorFailure", "[nlp]") {
  const NLPProblem p = unconstrained(1, [](const Eigen::VectorXd& z) {
    return std::sqrt(z[0]);  // NaN for negative arguments
  });
  Eigen::VectorXd bad(1);
  bad << -1.0;
  CHECK_THROWS_AS(solve(p, bad, SQPSettings{}), EvaluatorFailure);
  Eigen::VectorXd edge(1);
  edge << 0.0;
  SQPSettings ctr;
  ctr.gradient = GradientMode::CentralDifference;  // probes z = -h
  CHECK_THROWS_AS(gradient([](const Eigen::VectorXd& z) { return std::sqrt(z[0]); }, edge, ctr),
                  EvaluatorFailure);
}

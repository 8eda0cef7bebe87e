#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "hvacreg/barrier.hpp"

namespace hvacreg {
namespace {

ConvexProgram globals_only(int n) {
  ConvexProgram p;
  p.num_globals = static_cast<std::size_t>(n);
  p.objective = Eigen::VectorXd::Zero(n);
  p.x0 = Eigen::VectorXd::Zero(n);
  return p;
}

ProgramRow linear_row(std::vector<std::pair<int, double>> lin, double constant) {
  ProgramRow r;
  r.linear = std::move(lin);
  r.constant = constant;
  return r;
}

TEST(Barrier, SecondOrderConeToy) {
  // min −x − y  s.t. ‖(x, y)‖ ≤ 1  →  (√2/2, √2/2).
  auto p = globals_only(2);
  p.objective << -1.0, -1.0;
  p.x0 << 0.1, 0.1;
  ProgramRow r;
  r.kappa = 1.0;
  r.soc = {{0, 1.0}, {1, 1.0}};
  r.constant = -1.0;
  p.rows.push_back(r);
  const auto res = solve_barrier(p);
  ASSERT_EQ(res.status, SolveStatus::optimal) << res.message;
  EXPECT_NEAR(res.x[0], std::numbers::sqrt2 / 2, 1e-6);
  EXPECT_NEAR(res.x[1], std::numbers::sqrt2 / 2, 1e-6);
  EXPECT_NEAR(res.objective, -std::numbers::sqrt2, 1e-7);
  EXPECT_LT(res.kkt.stationarity, 1e-6);
  EXPECT_LT(res.kkt.primal, 1e-9);
  EXPECT_LT(res.kkt.gap, 1e-6);
}

TEST(Barrier, ExponentialRow) {
  // min −y  s.t. e^y ≤ 2.
  auto p = globals_only(1);
  p.objective << -1.0;
  p.groups.push_back({-1, 1.0, 0.0});
  ProgramRow r;
  r.group = 0;
  r.y_idx = 0;
  r.lambda = 1.0;
  r.constant = -2.0;
  p.rows.push_back(r);
  const auto res = solve_barrier(p);
  ASSERT_EQ(res.status, SolveStatus::optimal);
  EXPECT_NEAR(res.x[0], std::log(2.0), 1e-7);
}

TEST(Barrier, LogSumExpNormGroup) {
  // min −ρ  s.t. √(1 + e^{2ρ}) ≤ 2  →  ρ = ½ ln 3.
  auto p = globals_only(1);
  p.objective << -1.0;
  p.groups.push_back({0, 1.0, 1.0});
  ProgramRow r;
  r.group = 0;
  r.constant = -2.0;
  p.rows.push_back(r);
  const auto res = solve_barrier(p);
  ASSERT_EQ(res.status, SolveStatus::optimal);
  EXPECT_NEAR(res.x[0], 0.5 * std::log(3.0), 1e-7);
}

TEST(Barrier, PhaseOneFindsInteriorFromInfeasibleStart) {
  // min x  s.t. 2 ≤ x ≤ 5, starting at 0.
  auto p = globals_only(1);
  p.objective << 1.0;
  p.rows.push_back(linear_row({{0, -1.0}}, 2.0));
  p.rows.push_back(linear_row({{0, 1.0}}, -5.0));
  const auto res = solve_barrier(p);
  ASSERT_EQ(res.status, SolveStatus::optimal);
  EXPECT_GT(res.phase1_iterations, 0);
  EXPECT_NEAR(res.x[0], 2.0, 1e-7);
}

TEST(Barrier, DetectsInfeasibility) {
  auto p = globals_only(1);
  p.objective << 1.0;
  p.rows.push_back(linear_row({{0, 1.0}}, 1.0));   // x ≤ −1
  p.rows.push_back(linear_row({{0, -1.0}}, 1.0));  // x ≥ 1
  EXPECT_EQ(solve_barrier(p).status, SolveStatus::infeasible);
}

TEST(Barrier, BlockVariablesAndDimensionCheck) {
  // Global g coupling two one-variable blocks: min g/2 − a − b, a ≤ g, b ≤ 3, g ≤ 1.5, a, b, g ≥ 0.
  // Optimum a = g = 1.5, b = 3, objective −3.75.
  ConvexProgram p;
  p.num_globals = 1;
  p.block_sizes = {1, 1};
  p.objective = Eigen::Vector3d(0.5, -1.0, -1.0);
  p.x0 = Eigen::Vector3d(1.0, 0.1, 0.1);
  p.rows.push_back(linear_row({{1, 1.0}, {0, -1.0}}, 0.0));
  p.rows.push_back(linear_row({{2, 1.0}}, -3.0));
  p.rows.push_back(linear_row({{0, 1.0}}, -1.5));
  for (int i = 0; i < 3; ++i) p.rows.push_back(linear_row({{i, -1.0}}, 0.0));
  const auto res = solve_barrier(p);
  ASSERT_EQ(res.status, SolveStatus::optimal);
  EXPECT_NEAR(res.objective, -3.75, 1e-7);
  EXPECT_NEAR(res.x[1], 1.5, 1e-6);
  EXPECT_NEAR(res.x[2], 3.0, 1e-6);
  auto coupled = p;
  coupled.rows.push_back(linear_row({{1, 1.0}, {2, 1.0}}, -10.0));
  EXPECT_THROW(solve_barrier(coupled), ParameterError);
  p.x0 = Eigen::VectorXd::Zero(2);
  EXPECT_THROW(solve_barrier(p), ParameterError);
}

TEST(Barrier, SolverConfigValidation) {
  SolverConfig c;
  c.growth = 1.0;
  EXPECT_THROW(c.validate(), ParameterError);
  c = {};
  c.ls_alpha = 0.7;
  EXPECT_THROW(c.validate(), ParameterError);
}

TEST(Barrier, StatusStrings) {
  for (auto s : {SolveStatus::optimal, SolveStatus::infeasible, SolveStatus::numerical_failure})
    EXPECT_EQ(parse_solve_status(to_string(s)), s);
  EXPECT_THROW(parse_solve_status("maybe"), ParseError);
}

}  // namespace
}  // namespace hvacreg

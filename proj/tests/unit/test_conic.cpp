#include <cmath>
#include <random>
#include <stdexcept>

#include <doctest.h>

#include "gridarb/conic.hpp"

using namespace gridarb::conic;

TEST_SUITE("conic") {

TEST_CASE("minimize x^2 subject to x >= 1") {
  ConicProgram p;
  int x = p.add_variable("x", 1.0, kInf);
  p.add_quad_cost(x, 1.0);
  SolveResult r = solve_conic(p);
  REQUIRE(r.status == SolveStatus::optimal);
  CHECK(r.x[0] == doctest::Approx(1.0).epsilon(1e-7));
  CHECK(r.objective == doctest::Approx(1.0).epsilon(1e-7));
  CHECK(r.mu_lower[0] == doctest::Approx(2.0).epsilon(1e-6));

  KktReport k = check_kkt(p, r);
  CHECK(k.stationarity <= 1e-8);
  CHECK(k.primal_feasibility <= 1e-8);
  CHECK(k.dual_cone_feasibility <= 1e-8);
  CHECK(k.complementarity <= 1e-8);

  SUBCASE("perturbed primal shows up in the stationarity residual") {
    SolveResult bad = r;
    bad.x[0] = 1.1;
    KktReport kb = check_kkt(p, bad);
    CHECK(kb.primal_feasibility <= 1e-12);
    CHECK(kb.stationarity == doctest::Approx(0.2).epsilon(1e-6));
  }
}

TEST_CASE("linear objective over the unit disc") {
  ConicProgram p;
  int z = p.add_variable("z");
  int x = p.add_variable("x");
  int y = p.add_variable("y");
  p.add_equality({{z, 1.0}}, 1.0, "fix_head");
  p.add_soc({z, x, y}, "disc");
  p.add_lin_cost(x, 1.0);
  p.add_lin_cost(y, 1.0);
  SolveResult r = solve_conic(p);
  REQUIRE(r.status == SolveStatus::optimal);
  const double s2 = std::sqrt(2.0) / 2.0;
  CHECK(r.x[1] == doctest::Approx(-s2).epsilon(1e-6));
  CHECK(r.x[2] == doctest::Approx(-s2).epsilon(1e-6));
  // cone multiplier from stationarity: z_K = (sqrt(2), 1, 1)
  CHECK(r.cone_duals[0][0] == doctest::Approx(std::sqrt(2.0)).epsilon(1e-6));
  CHECK(r.cone_duals[0][1] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(r.cone_duals[0][2] == doctest::Approx(1.0).epsilon(1e-6));
  // self-duality: the multiplier satisfies the same cone inequality
  double tail = std::hypot(r.cone_duals[0][1], r.cone_duals[0][2]);
  CHECK(tail <= r.cone_duals[0][0] + 1e-9);
  KktReport k = check_kkt(p, r);
  CHECK(k.stationarity <= 1e-7);
  CHECK(k.complementarity <= 1e-7);

  SUBCASE("warm start from the optimum stays cheap") {
    WarmStart w;
    w.x = r.x;
    w.y = r.y;
    w.mu_lower = r.mu_lower;
    w.mu_upper = r.mu_upper;
    w.cone_duals = r.cone_duals;
    SolveResult r2 = solve_conic(p, {}, &w);
    REQUIRE(r2.status == SolveStatus::optimal);
    CHECK(r2.iterations <= 2 * std::max(1, r.iterations));
    CHECK(r2.x[1] == doctest::Approx(-s2).epsilon(1e-6));
  }

  SUBCASE("scaling the objective scales the multipliers") {
    ConicProgram q = p;
    q.lin_cost[1] *= 7.0;
    q.lin_cost[2] *= 7.0;
    SolveResult r7 = solve_conic(q);
    REQUIRE(r7.status == SolveStatus::optimal);
    CHECK(r7.x[1] == doctest::Approx(r.x[1]).epsilon(1e-7));
    CHECK(r7.cone_duals[0][0] ==
          doctest::Approx(7.0 * r.cone_duals[0][0]).epsilon(1e-6));
    CHECK(r7.y[0] == doctest::Approx(7.0 * r.y[0]).epsilon(1e-6));
  }
}

TEST_CASE("random bounded program matches a projected-gradient oracle") {
  std::mt19937 rng(20240817);
  std::uniform_real_distribution<double> uq(0.5, 2.0), uc(-1.0, 1.0);
  const int n = 10;
  ConicProgram p;
  for (int i = 0; i < n; ++i) p.add_variable("v" + std::to_string(i), -1.0, 1.0);
  for (int i = 0; i < n; ++i) {
    p.add_quad_cost(i, uq(rng));
    p.add_lin_cost(i, uc(rng));
  }
  p.add_squared_cost(0.7, {{0, 1.0}, {3, -2.0}, {7, 0.5}}, 0.3);
  p.add_squared_cost(1.3, {{1, 1.0}, {2, 1.0}, {8, -1.0}}, -0.2);

  SolveResult r = solve_conic(p);
  REQUIRE(r.status == SolveStatus::optimal);

  // projected gradient with a safe step; box projection is exact
  std::vector<double> x(n, 0.0);
  double lip = 0.0;
  for (int i = 0; i < n; ++i) lip = std::max(lip, 2.0 * p.quad_diag[i]);
  lip += 2.0 * 0.7 * (1.0 + 4.0 + 0.25) + 2.0 * 1.3 * 3.0;
  double step = 1.0 / lip;
  for (int it = 0; it < 400000; ++it) {
    auto g = p.objective_gradient(x);
    for (int i = 0; i < n; ++i)
      x[i] = std::clamp(x[i] - step * g[i], -1.0, 1.0);
  }
  CHECK(r.objective == doctest::Approx(p.objective_value(x)).epsilon(1e-6));
}

TEST_CASE("equality-constrained quadratic has a direct path") {
  ConicProgram p;
  int x = p.add_variable("x");
  int y = p.add_variable("y");
  p.add_quad_cost(x, 1.0);
  p.add_quad_cost(y, 1.0);
  p.add_lin_cost(x, -2.0);  // (x-1)^2 + (y-2)^2 up to constants
  p.add_lin_cost(y, -4.0);
  p.cost_constant = 5.0;
  p.add_equality({{x, 1.0}, {y, 1.0}}, 1.0);
  SolveResult r = solve_conic(p);
  REQUIRE(r.status == SolveStatus::optimal);
  CHECK(r.iterations == 0);
  CHECK(r.x[0] == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(r.x[1] == doctest::Approx(1.0).epsilon(1e-9));
  // stationarity: 2x - 2 + y_eq = 0 at x = 0 -> y_eq = 2
  CHECK(r.y[0] == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("infeasible bounds produce a certificate") {
  ConicProgram p;
  int x = p.add_variable("x", -kInf, 0.0);
  int y = p.add_variable("y", 1.0, kInf);
  p.add_equality({{x, 1.0}, {y, -1.0}}, 0.0);  // x = y but x <= 0 < 1 <= y
  SolveResult r = solve_conic(p);
  CHECK(r.status == SolveStatus::infeasible);
}

TEST_CASE("squared cost pushes against a bound") {
  ConicProgram p;
  int x = p.add_variable("x", -kInf, 2.0);
  p.add_squared_cost(1.0, {{x, 1.0}}, -3.0);  // (x-3)^2
  SolveResult r = solve_conic(p);
  REQUIRE(r.status == SolveStatus::optimal);
  CHECK(r.x[0] == doctest::Approx(2.0).epsilon(1e-7));
  CHECK(r.mu_upper[0] == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(r.objective == doctest::Approx(1.0).epsilon(1e-7));
}

TEST_CASE("program invariants are enforced") {
  ConicProgram p;
  int x = p.add_variable("x", 1.0, 1.0);  // lower == upper
  p.add_quad_cost(x, 1.0);
  CHECK(!p.check_invariants().empty());
  CHECK_THROWS_AS(solve_conic(p), std::invalid_argument);

  ConicProgram q;
  int a = q.add_variable("a");
  int b = q.add_variable("b");
  q.add_soc({a, b});
  q.add_soc({a, b});  // head reused
  CHECK(!q.check_invariants().empty());
}

TEST_CASE("dump is a readable program listing") {
  ConicProgram p;
  int z = p.add_variable("z");
  int x = p.add_variable("x", -1.0, kInf);
  p.add_quad_cost(x, 2.0);
  p.add_equality({{z, 1.0}}, 1.0, "head");
  p.add_soc({z, x}, "cone0");
  std::string d = p.dump();
  CHECK(d.find("conic-program v1") != std::string::npos);
  CHECK(d.find("vars 2") != std::string::npos);
  CHECK(d.find("soc 2 0 1") != std::string::npos);
  CHECK(d.find("eq 1 1 0 1") != std::string::npos);
}

}  // TEST_SUITE

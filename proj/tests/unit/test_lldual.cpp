#include "gridarb/lldual.hpp"

#include <cmath>
#include <string>

#include "doctest.h"
#include "gridarb/cpsota.hpp"
#include "gridarb/netcase.hpp"
#include "gridarb/pfexact.hpp"
#include "gridarb/presolve.hpp"
#include "test_paths.hpp"

using namespace gridarb;

namespace {

struct Fixture {
  net::NetworkCase c;
  net::IndexSets s;
  pf::OpfResult opf;
  cps::OperatingCoeffs oc;
};

Fixture triangle_at(int t, double p_es, double q_es) {
  Fixture f;
  f.c = net::load_case(data_path("case3_triangle.json"));
  f.s = net::build_index_sets(f.c);
  f.opf = pf::solve_exact_opf(f.c, f.s, t, p_es, q_es);
  REQUIRE(f.opf.converged);
  f.oc = cps::compute_operating_coeffs(
      f.c, f.s, cps::OperatingPoint{f.opf.v, f.opf.theta});
  return f;
}

// Largest absolute residual over the program's equality rows at x, with the
// worst row's name for diagnostics.
double worst_row_residual(const conic::ConicProgram& p,
                          const std::vector<double>& x, std::string* name) {
  double worst = 0.0;
  for (const auto& row : p.rows) {
    double acc = -row.rhs;
    for (const auto& [v, a] : row.coeffs) acc += a * x[static_cast<size_t>(v)];
    if (std::abs(acc) > worst) {
      worst = std::abs(acc);
      if (name != nullptr) *name = row.name;
    }
  }
  return worst;
}

double worst_cone_violation(const conic::ConicProgram& p,
                            const std::vector<double>& x) {
  double worst = 0.0;
  for (const auto& cone : p.cones) {
    double tail = 0.0;
    for (size_t m = 1; m < cone.members.size(); ++m) {
      const double v = x[static_cast<size_t>(cone.members[m])];
      tail += v * v;
    }
    const double head = x[static_cast<size_t>(cone.members[0])];
    worst = std::max(worst, std::sqrt(tail) - head);
  }
  return worst;
}

}  // namespace

TEST_SUITE("lldual") {
  TEST_CASE("transferred multipliers satisfy every stationarity row") {
    const Fixture f = triangle_at(0, 0.0, 0.0);
    const psv::PeriodPresolve pre =
        psv::presolve_period(f.c, f.s, f.oc, f.opf, 0, 0.0, 0.0);

    for (const bool quad : {true, false}) {
      const cps::FlagSlice flags =
          quad ? pre.flags : cps::all_linear_flags(f.s);
      CAPTURE(quad);
      const cps::LlPrimal ll =
          cps::build_ll_primal(f.c, f.s, f.oc, flags, 0, 0.0, 0.0);
      const conic::WarmStart ws =
          psv::transfer_warm_start(f.c, f.s, f.oc, ll, f.opf);
      const lld::LlDual d =
          lld::build_ll_dual(f.c, f.s, f.oc, flags, 0, 0.0, 0.0);
      const std::vector<double> x =
          lld::dual_start_from_primal(ll, ws, d).x;

      std::string worst_name;
      const double worst = worst_row_residual(d.prog, x, &worst_name);
      CAPTURE(worst_name);
      CHECK(worst <= 1e-7);
      CHECK(worst_cone_violation(d.prog, x) <= 1e-9);
      for (int var = 0; var < d.prog.n_vars(); ++var)
        if (d.prog.lower[static_cast<size_t>(var)] == 0.0)
          CHECK(x[static_cast<size_t>(var)] >= -1e-10);
    }
  }

  TEST_CASE("dual value at the transferred point equals the exact cost") {
    const Fixture f = triangle_at(0, 0.0, 0.0);
    const psv::PeriodPresolve pre =
        psv::presolve_period(f.c, f.s, f.oc, f.opf, 0, 0.0, 0.0);
    for (const bool quad : {true, false}) {
      const cps::FlagSlice flags =
          quad ? pre.flags : cps::all_linear_flags(f.s);
      const cps::LlPrimal ll =
          cps::build_ll_primal(f.c, f.s, f.oc, flags, 0, 0.0, 0.0);
      const conic::WarmStart ws =
          psv::transfer_warm_start(f.c, f.s, f.oc, ll, f.opf);
      const lld::LlDual d =
          lld::build_ll_dual(f.c, f.s, f.oc, flags, 0, 0.0, 0.0);
      const double value =
          lld::dual_objective(d, lld::dual_start_from_primal(ll, ws, d).x);
      CHECK(value == doctest::Approx(f.opf.cost).epsilon(1e-6));
    }
  }

  TEST_CASE("solved dual matches the solved primal") {
    auto both_sides = [](const Fixture& f, const cps::FlagSlice& flags, int t,
                         double p_es, double q_es) {
      const cps::LlPrimal ll =
          cps::build_ll_primal(f.c, f.s, f.oc, flags, t, p_es, q_es);
      const conic::SolveResult rp = conic::solve_conic(ll.prog);
      REQUIRE(rp.status == conic::SolveStatus::optimal);

      const lld::LlDual d =
          lld::build_ll_dual(f.c, f.s, f.oc, flags, t, p_es, q_es);
      const conic::WarmStart ws =
          psv::transfer_warm_start(f.c, f.s, f.oc, ll, f.opf);
      const conic::WarmStart dw = lld::dual_start_from_primal(ll, ws, d);
      const conic::SolveResult rd = conic::solve_conic(d.prog, {}, &dw);
      REQUIRE(rd.status == conic::SolveStatus::optimal);

      const double primal = rp.objective;
      const double dual = -rd.objective;
      CHECK(std::abs(dual - primal) <= 1e-6 * std::max(1.0, std::abs(primal)));
    };

    SUBCASE("presolve flags") {
      const Fixture f = triangle_at(0, 0.0, 0.0);
      const psv::PeriodPresolve pre =
          psv::presolve_period(f.c, f.s, f.oc, f.opf, 0, 0.0, 0.0);
      both_sides(f, pre.flags, 0, 0.0, 0.0);
    }
    SUBCASE("all rows pinned") {
      const Fixture f = triangle_at(0, 0.0, 0.0);
      both_sides(f, cps::all_linear_flags(f.s), 0, 0.0, 0.0);
    }
    SUBCASE("mixed flags") {
      const Fixture f = triangle_at(0, 0.0, 0.0);
      cps::FlagSlice flags = cps::all_linear_flags(f.s);
      flags.quad_voltage[1] = 1;
      flags.quad_cosine[0] = 1;
      flags.quad_cosine[2] = 1;
      both_sides(f, flags, 0, 0.0, 0.0);
    }
    SUBCASE("limits imposed") {
      const Fixture f = triangle_at(1, 0.0, 0.0);
      const psv::PeriodPresolve pre =
          psv::presolve_period(f.c, f.s, f.oc, f.opf, 1, 0.0, 0.0);
      cps::FlagSlice flags = pre.flags;
      for (size_t a = 0; a < flags.limit_on.size(); ++a)
        flags.limit_on[a] = 1;
      both_sides(f, flags, 1, 0.0, 0.0);
    }
    SUBCASE("storage draw") {
      const Fixture f = triangle_at(1, 0.25, 0.05);
      const psv::PeriodPresolve pre =
          psv::presolve_period(f.c, f.s, f.oc, f.opf, 1, 0.25, 0.05);
      both_sides(f, pre.flags, 1, 0.25, 0.05);
    }
  }

  TEST_CASE("nominal-voltage shunt pricing breaks the match") {
    const Fixture f = triangle_at(0, 0.0, 0.0);
    const psv::PeriodPresolve pre =
        psv::presolve_period(f.c, f.s, f.oc, f.opf, 0, 0.0, 0.0);
    const cps::LlPrimal ll =
        cps::build_ll_primal(f.c, f.s, f.oc, pre.flags, 0, 0.0, 0.0);
    const conic::SolveResult rp = conic::solve_conic(ll.prog);
    REQUIRE(rp.status == conic::SolveStatus::optimal);

    lld::DualOptions literal;
    literal.shunt_literal = true;
    const lld::LlDual d =
        lld::build_ll_dual(f.c, f.s, f.oc, pre.flags, 0, 0.0, 0.0, literal);
    const conic::WarmStart ws =
        psv::transfer_warm_start(f.c, f.s, f.oc, ll, f.opf);
    const conic::WarmStart dw = lld::dual_start_from_primal(ll, ws, d);
    const conic::SolveResult rd = conic::solve_conic(d.prog, {}, &dw);
    REQUIRE(rd.status == conic::SolveStatus::optimal);
    CHECK(std::abs(-rd.objective - rp.objective) >
          1e-5 * std::abs(rp.objective));
  }

  TEST_CASE("zero-curvature generators close through an explicit row") {
    Fixture f;
    f.c = net::load_case(data_path("case3_triangle.json"));
    f.c.generators[1].c2 = 0.0;
    f.s = net::build_index_sets(f.c);
    f.opf = pf::solve_exact_opf(f.c, f.s, 0, 0.0, 0.0);
    REQUIRE(f.opf.converged);
    f.oc = cps::compute_operating_coeffs(
        f.c, f.s, cps::OperatingPoint{f.opf.v, f.opf.theta});

    const psv::PeriodPresolve pre =
        psv::presolve_period(f.c, f.s, f.oc, f.opf, 0, 0.0, 0.0);
    const cps::LlPrimal ll =
        cps::build_ll_primal(f.c, f.s, f.oc, pre.flags, 0, 0.0, 0.0);
    const conic::WarmStart ws =
        psv::transfer_warm_start(f.c, f.s, f.oc, ll, f.opf);
    const lld::LlDual d =
        lld::build_ll_dual(f.c, f.s, f.oc, pre.flags, 0, 0.0, 0.0);
    CHECK(d.row_pg[0] == -1);
    CHECK(d.row_pg[1] >= 0);

    const std::vector<double> x = lld::dual_start_from_primal(ll, ws, d).x;
    std::string worst_name;
    const double worst = worst_row_residual(d.prog, x, &worst_name);
    CAPTURE(worst_name);
    CHECK(worst <= 1e-7);

    const conic::SolveResult rp = conic::solve_conic(ll.prog);
    REQUIRE(rp.status == conic::SolveStatus::optimal);
    const conic::WarmStart dw = lld::dual_start_from_primal(ll, ws, d);
    const conic::SolveResult rd = conic::solve_conic(d.prog, {}, &dw);
    REQUIRE(rd.status == conic::SolveStatus::optimal);
    CHECK(-rd.objective == doctest::Approx(rp.objective).epsilon(1e-6));
  }
}

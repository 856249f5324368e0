#include "gridarb/presolve.hpp"

#include <cmath>

#include "doctest.h"
#include "gridarb/cpsota.hpp"
#include "gridarb/netcase.hpp"
#include "gridarb/pfexact.hpp"
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

conic::KktReport kkt_of(const cps::LlPrimal& ll, const conic::SolveResult& r) {
  return conic::check_kkt(ll.prog, r);
}

}  // namespace

TEST_SUITE("presolve") {
  TEST_CASE("pin marginals carry the nodal prices") {
    const Fixture f = triangle_at(0, 0.0, 0.0);
    const psv::PeriodPresolve pre =
        psv::presolve_period(f.c, f.s, f.oc, f.opf, 0, 0.0, 0.0);

    // No rating sits anywhere near its limit, so the head-room marginal is
    // the average sending-bus price of the two directions.
    for (int e = 0; e < f.s.n_branch; ++e) {
      const auto& tf = f.s.fwd[static_cast<size_t>(e)];
      const double expected =
          0.5 * (f.opf.price_p[tf.i] + f.opf.price_p[tf.j]);
      CHECK(pre.voltage_marginal[e] ==
            doctest::Approx(expected).epsilon(1e-6));
      CHECK(pre.voltage_marginal[e] > 0.0);
    }
    for (int pr = 0; pr < f.s.n_pair; ++pr)
      CHECK(pre.cosine_marginal[pr] < 0.0);

    const cps::FlagCensus fc = cps::census(pre.flags);
    CHECK(fc.voltage_quad == f.s.n_branch);
    CHECK(fc.cosine_quad == f.s.n_pair);
    CHECK(fc.limits == 0);
    CHECK(pre.forced_linear.empty());
  }

  TEST_CASE("transferred start passes the solver unchanged") {
    const Fixture f = triangle_at(0, 0.0, 0.0);
    const psv::PeriodPresolve pre =
        psv::presolve_period(f.c, f.s, f.oc, f.opf, 0, 0.0, 0.0);

    SUBCASE("presolve flags") {
      const cps::LlPrimal ll =
          cps::build_ll_primal(f.c, f.s, f.oc, pre.flags, 0, 0.0, 0.0);
      const conic::WarmStart ws =
          psv::transfer_warm_start(f.c, f.s, f.oc, ll, f.opf);
      const conic::SolveResult r = conic::solve_conic(ll.prog, {}, &ws);
      CHECK(r.status == conic::SolveStatus::optimal);
      CHECK(r.iterations == 0);

      const cps::LlSolution sol = cps::unpack_solution(ll, r);
      CHECK(sol.v_delta.lpNorm<Eigen::Infinity>() <= 1e-12);
      CHECK(sol.th_delta.lpNorm<Eigen::Infinity>() <= 1e-12);
      CHECK(sol.cost ==
            doctest::Approx(f.opf.cost).epsilon(1e-8));

      const conic::KktReport rep = kkt_of(ll, r);
      CHECK(rep.stationarity <= 1e-7);
      CHECK(rep.primal_feasibility <= 1e-8);
      CHECK(rep.dual_cone_feasibility <= 1e-8);
      CHECK(rep.complementarity <= 1e-7);
    }

    SUBCASE("all rows pinned") {
      const cps::FlagSlice pinned = cps::all_linear_flags(f.s);
      const cps::LlPrimal ll =
          cps::build_ll_primal(f.c, f.s, f.oc, pinned, 0, 0.0, 0.0);
      const conic::WarmStart ws =
          psv::transfer_warm_start(f.c, f.s, f.oc, ll, f.opf);
      const conic::SolveResult r = conic::solve_conic(ll.prog, {}, &ws);
      CHECK(r.status == conic::SolveStatus::optimal);
      CHECK(r.iterations == 0);
      CHECK(cps::unpack_solution(ll, r).cost ==
            doctest::Approx(f.opf.cost).epsilon(1e-8));
    }

    SUBCASE("mixed flags") {
      cps::FlagSlice mixed = cps::all_linear_flags(f.s);
      mixed.quad_voltage[0] = 1;
      mixed.quad_cosine[1] = 1;
      const cps::LlPrimal ll =
          cps::build_ll_primal(f.c, f.s, f.oc, mixed, 0, 0.0, 0.0);
      const conic::WarmStart ws =
          psv::transfer_warm_start(f.c, f.s, f.oc, ll, f.opf);
      const conic::SolveResult r = conic::solve_conic(ll.prog, {}, &ws);
      CHECK(r.status == conic::SolveStatus::optimal);
      CHECK(r.iterations == 0);
      const conic::KktReport rep = kkt_of(ll, r);
      CHECK(rep.stationarity <= 1e-7);
      CHECK(rep.dual_cone_feasibility <= 1e-8);
    }
  }

  TEST_CASE("flag selection is idempotent and deterministic") {
    const Fixture f = triangle_at(1, 0.0, 0.0);
    const psv::PeriodPresolve a =
        psv::presolve_period(f.c, f.s, f.oc, f.opf, 1, 0.0, 0.0);
    const psv::PeriodPresolve b =
        psv::presolve_period(f.c, f.s, f.oc, f.opf, 1, 0.0, 0.0);
    CHECK(a.flags.quad_voltage == b.flags.quad_voltage);
    CHECK(a.flags.quad_cosine == b.flags.quad_cosine);
    CHECK(a.flags.limit_on == b.flags.limit_on);
    CHECK((a.voltage_marginal - b.voltage_marginal).norm() == 0.0);
    CHECK((a.cosine_marginal - b.cosine_marginal).norm() == 0.0);
  }

  TEST_CASE("storage draw keeps the transfer exact") {
    const Fixture f = triangle_at(1, 0.3, 0.1);
    const psv::PeriodPresolve pre =
        psv::presolve_period(f.c, f.s, f.oc, f.opf, 1, 0.3, 0.1);
    const cps::LlPrimal ll =
        cps::build_ll_primal(f.c, f.s, f.oc, pre.flags, 1, 0.3, 0.1);
    const conic::WarmStart ws =
        psv::transfer_warm_start(f.c, f.s, f.oc, ll, f.opf);
    const conic::SolveResult r = conic::solve_conic(ll.prog, {}, &ws);
    CHECK(r.status == conic::SolveStatus::optimal);
    CHECK(r.iterations == 0);
    CHECK(cps::unpack_solution(ll, r).cost ==
          doctest::Approx(f.opf.cost).epsilon(1e-8));
  }
}

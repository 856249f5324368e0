#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <complex>

#include "gridarb/netcase.hpp"
#include "gridarb/pfexact.hpp"
#include "test_paths.hpp"

using namespace gridarb;

namespace {

net::NetworkCase two_bus_lossless() {
  net::NetworkCase c;
  c.name = "two_bus";
  c.horizon = 1;
  c.buses = {{1, 0.8, 1.2, true}, {2, 0.8, 1.2, false}};
  net::Branch br;
  br.id = 1;
  br.from_bus = 1;
  br.to_bus = 2;
  br.g = 0.0;
  br.b = -10.0;
  c.branches = {br};
  net::normalize_case(c);
  return c;
}

}  // namespace

TEST_SUITE("pfexact") {
  TEST_CASE("single bus dispatch matches the cost gradient") {
    auto c = net::load_case(data_path("case1_single.json"));
    net::require_valid(c);
    auto s = net::build_index_sets(c);
    auto r = pf::solve_exact_opf(c, s, 0, 0.0, 0.0);
    REQUIRE(r.converged);
    CHECK(r.pg[0] == doctest::Approx(0.8).epsilon(1e-8));
    CHECK(r.qg[0] == doctest::Approx(0.0).epsilon(1e-8));
    CHECK(r.price_p[0] == doctest::Approx(21.0).epsilon(1e-6));
    CHECK(std::abs(r.price_q[0]) < 1e-6);
    CHECK(r.cost == doctest::Approx(10.0 * 0.64 + 5.0 * 0.8).epsilon(1e-8));
    CHECK(r.max_balance_violation < 1e-9);
  }

  TEST_CASE("two bus lossless network has a closed form") {
    auto c = two_bus_lossless();
    net::require_valid(c);
    auto s = net::build_index_sets(c);
    auto y = pf::build_admittance_matrix(c, s);

    pf::PowerFlowSpec spec;
    spec.kind = {pf::BusKind::slack, pf::BusKind::pq};
    spec.p_set = Eigen::VectorXd::Zero(2);
    spec.q_set = Eigen::VectorXd::Zero(2);
    spec.v_set = Eigen::VectorXd::Ones(2);
    spec.p_set[1] = -0.5;

    auto r = pf::solve_power_flow(y, spec);
    REQUIRE(r.converged);
    CHECK(r.iterations <= 6);

    // Zero reactive load pins v2 = cos(th2); the active equation then reads
    // 5 sin(2 th2) = -0.5.
    const double th2 = 0.5 * std::asin(-0.1);
    CHECK(r.theta[1] == doctest::Approx(th2).epsilon(1e-10));
    CHECK(r.v[1] == doctest::Approx(std::cos(th2)).epsilon(1e-10));

    auto flows = pf::all_branch_flows(c, s, r.v, r.theta);
    CHECK(flows[0].p + flows[1].p == doctest::Approx(0.0).epsilon(1e-10));
    CHECK(flows[1].p == doctest::Approx(-0.5).epsilon(1e-8));

    SUBCASE("already satisfied start returns zero iterations") {
      pf::PowerFlowSpec flat;
      flat.kind = {pf::BusKind::slack, pf::BusKind::pv};
      flat.p_set = Eigen::VectorXd::Zero(2);
      flat.q_set = Eigen::VectorXd::Zero(2);
      flat.v_set = Eigen::VectorXd::Ones(2);
      auto r0 = pf::solve_power_flow(y, flat);
      REQUIRE(r0.converged);
      CHECK(r0.iterations == 0);
    }
  }

  TEST_CASE("newton power flow matches complex injection arithmetic") {
    auto c = net::load_case(data_path("mesh14.m"));
    net::require_valid(c);
    auto s = net::build_index_sets(c);
    auto y = pf::build_admittance_matrix(c, s);

    // Per-bus net load at t = 0.
    Eigen::VectorXd pd = Eigen::VectorXd::Zero(s.n_bus);
    Eigen::VectorXd qd = Eigen::VectorXd::Zero(s.n_bus);
    for (const auto& l : c.loads) {
      pd[s.bus_index.at(l.bus)] += l.p_d[0];
      qd[s.bus_index.at(l.bus)] += l.q_d[0];
    }

    pf::PowerFlowSpec spec;
    spec.kind.assign(static_cast<size_t>(s.n_bus), pf::BusKind::pq);
    spec.kind[static_cast<size_t>(s.ref_bus)] = pf::BusKind::slack;
    spec.p_set = -pd;
    spec.q_set = -qd;
    spec.v_set = Eigen::VectorXd::Ones(s.n_bus);
    for (const auto& g : c.generators) {
      const int i = s.bus_index.at(g.bus);
      if (i == s.ref_bus) continue;
      spec.kind[static_cast<size_t>(i)] = pf::BusKind::pv;
      spec.p_set[i] += 0.6;
    }

    auto r = pf::solve_power_flow(y, spec);
    REQUIRE(r.converged);
    CHECK(r.iterations <= 6);

    // Quadratic tail: once the mismatch is small, one step squares it.
    bool window_seen = false;
    for (size_t k = 0; k + 1 < r.mismatch_history.size(); ++k) {
      const double h = r.mismatch_history[k];
      if (h >= 1e-6 && h <= 1e-2) {
        window_seen = true;
        CHECK(r.mismatch_history[k + 1] <= 10.0 * h * h);
      }
    }
    CHECK(window_seen);

    // Independent evaluator: complex nodal injections from a Ybus rebuilt
    // here from raw case data.
    Eigen::MatrixXcd yb = Eigen::MatrixXcd::Zero(s.n_bus, s.n_bus);
    for (const auto& br : c.branches) {
      const int i = s.bus_index.at(br.from_bus);
      const int j = s.bus_index.at(br.to_bus);
      const std::complex<double> ys(br.g, br.b);
      const std::complex<double> sh = std::polar(1.0, br.sigma);
      yb(i, i) += (ys + std::complex<double>(br.g_fr, br.b_fr)) / (br.tau * br.tau);
      yb(j, j) += ys + std::complex<double>(br.g_to, br.b_to);
      yb(i, j) -= ys * sh / br.tau;
      yb(j, i) -= ys * std::conj(sh) / br.tau;
    }
    for (const auto& sh : c.shunts)
      yb(s.bus_index.at(sh.bus), s.bus_index.at(sh.bus)) +=
          std::complex<double>(sh.g_sh, sh.b_sh);

    Eigen::VectorXcd volt(s.n_bus);
    for (int i = 0; i < s.n_bus; ++i) volt[i] = std::polar(r.v[i], r.theta[i]);
    const Eigen::VectorXcd inj = volt.cwiseProduct((yb * volt).conjugate());
    for (int i = 0; i < s.n_bus; ++i) {
      if (i != s.ref_bus) CHECK(std::abs(inj[i].real() - spec.p_set[i]) < 2e-8);
      if (spec.kind[static_cast<size_t>(i)] == pf::BusKind::pq)
        CHECK(std::abs(inj[i].imag() - spec.q_set[i]) < 2e-8);
    }

    // Sent branch flows plus local shunt draw reproduce the same injections.
    auto flows = pf::all_branch_flows(c, s, r.v, r.theta);
    for (int i = 0; i < s.n_bus; ++i) {
      double p = 0.0, q = 0.0;
      for (int a : s.tuples_at[static_cast<size_t>(i)]) {
        p += flows[static_cast<size_t>(a)].p;
        q += flows[static_cast<size_t>(a)].q;
      }
      for (int k : s.shunts_at[static_cast<size_t>(i)]) {
        p += r.v[i] * r.v[i] * c.shunts[static_cast<size_t>(k)].g_sh;
        q -= r.v[i] * r.v[i] * c.shunts[static_cast<size_t>(k)].b_sh;
      }
      CHECK(std::abs(p - inj[i].real()) < 1e-9);
      CHECK(std::abs(q - inj[i].imag()) < 1e-9);
    }
  }

  TEST_CASE("triangle dispatch survives a feasibility-restored grid search") {
    auto c = net::load_case(data_path("case3_triangle.json"));
    net::require_valid(c);
    auto s = net::build_index_sets(c);
    auto y = pf::build_admittance_matrix(c, s);
    const int t = 0;
    auto opf = pf::solve_exact_opf(c, s, t, 0.0, 0.0);
    REQUIRE(opf.converged);
    CHECK(opf.relaxed_ratings.empty());
    CHECK(opf.max_balance_violation < 1e-9);

    const int b1 = s.bus_index.at(1), b2 = s.bus_index.at(2), b3 = s.bus_index.at(3);
    const auto& g1 = c.generators[0];
    const auto& g3 = c.generators[1];
    REQUIRE(s.bus_index.at(g1.bus) == b1);
    REQUIRE(s.bus_index.at(g3.bus) == b3);

    // Fix voltages at the dispatch optimum, restore feasibility with a power
    // flow per grid point, keep points inside every box and rating, and
    // compare the cheapest against the solver.
    pf::PowerFlowSpec spec;
    spec.kind = {pf::BusKind::slack, pf::BusKind::pq, pf::BusKind::pv};
    spec.v_set = Eigen::VectorXd::Zero(3);
    spec.v_set[b1] = opf.v[b1];
    spec.v_set[b3] = opf.v[b3];
    spec.p_set = Eigen::VectorXd::Zero(3);
    spec.q_set = Eigen::VectorXd::Zero(3);
    spec.p_set[b2] = -c.loads[0].p_d[t];
    spec.q_set[b2] = -c.loads[0].q_d[t];

    double best = 1e30;
    for (double pg3 = g3.p_min; pg3 <= g3.p_max + 1e-12; pg3 += 1e-3) {
      spec.p_set[b3] = pg3;
      auto r = pf::solve_power_flow(y, spec);
      if (!r.converged) continue;
      Eigen::VectorXcd volt(3);
      for (int i = 0; i < 3; ++i) volt[i] = std::polar(r.v[i], r.theta[i]);
      const Eigen::VectorXcd inj =
          volt.cwiseProduct((pf::build_admittance_matrix(c, s) * volt).conjugate());
      const double pg1 = inj[b1].real();
      const double qg1 = inj[b1].imag();
      const double qg3 = inj[b3].imag();
      if (pg1 < g1.p_min || pg1 > g1.p_max) continue;
      if (qg1 < g1.q_min || qg1 > g1.q_max) continue;
      if (qg3 < g3.q_min || qg3 > g3.q_max) continue;
      if (r.v[b2] < c.buses[static_cast<size_t>(b2)].v_min ||
          r.v[b2] > c.buses[static_cast<size_t>(b2)].v_max)
        continue;
      auto flows = pf::all_branch_flows(c, s, r.v, r.theta);
      bool rated_ok = true;
      for (int a = 0; a < 2 * s.n_branch; ++a) {
        const double smax = c.branches[static_cast<size_t>(s.tuple(a).e)].s_max;
        if (smax > 0.0 && flows[static_cast<size_t>(a)].apparent() > smax + 1e-9)
          rated_ok = false;
      }
      if (!rated_ok) continue;
      const double cost = g1.c2 * pg1 * pg1 + g1.c1 * pg1 + g1.c0 +
                          g3.c2 * pg3 * pg3 + g3.c1 * pg3 + g3.c0;
      best = std::min(best, cost);
    }
    REQUIRE(best < 1e29);
    CHECK(best >= opf.cost - 1e-4);
    CHECK(best <= opf.cost + 1e-2);

    SUBCASE("active price matches the load perturbation quotient") {
      const double h = 1e-5;
      auto cp = c;
      cp.loads[0].p_d[t] += h;
      auto rp = pf::solve_exact_opf(cp, s, t, 0.0, 0.0);
      auto cm = c;
      cm.loads[0].p_d[t] -= h;
      auto rm = pf::solve_exact_opf(cm, s, t, 0.0, 0.0);
      REQUIRE(rp.converged);
      REQUIRE(rm.converged);
      const double fd = (rp.cost - rm.cost) / (2.0 * h);
      CHECK(std::abs(fd - opf.price_p[b2]) < 5e-2 * std::max(1.0, opf.price_p[b2]));
    }
  }

  TEST_CASE("storage draw shifts dispatch and prices") {
    auto c = net::load_case(data_path("case3_triangle.json"));
    net::require_valid(c);
    auto s = net::build_index_sets(c);
    auto base = pf::solve_exact_opf(c, s, 0, 0.0, 0.0);
    auto charged = pf::solve_exact_opf(c, s, 0, 0.3, 0.0);
    REQUIRE(base.converged);
    REQUIRE(charged.converged);
    CHECK(charged.cost > base.cost);
    CHECK(charged.price_p[s.storage_bus] > base.price_p[s.storage_bus]);

    Eigen::VectorXd rp, rq;
    pf::balance_residual(c, s, 0, charged.v, charged.theta, charged.pg,
                         charged.qg, 0.3, 0.0, rp, rq);
    CHECK(rp.lpNorm<Eigen::Infinity>() < 1e-8);
    CHECK(rq.lpNorm<Eigen::Infinity>() < 1e-8);
  }

  TEST_CASE("branch loading flags respect ratings and threshold") {
    auto c = net::load_case(data_path("case3_triangle.json"));
    net::require_valid(c);
    auto s = net::build_index_sets(c);
    std::vector<pf::BranchFlow> flows(static_cast<size_t>(2 * s.n_branch),
                                      pf::BranchFlow{0.3, 0.0});
    // Branch 2 is rated 1.0: 0.3 stays off, 0.85 turns on.
    auto off = pf::select_phi_flags(c, s, flows, 0.8);
    for (bool f : off) CHECK_FALSE(f);
    flows[1] = pf::BranchFlow{0.85, 0.0};
    auto on = pf::select_phi_flags(c, s, flows, 0.8);
    CHECK(on[1]);
    CHECK_FALSE(on[static_cast<size_t>(1 + s.n_branch)]);

    auto unrated = c;
    for (auto& br : unrated.branches) br.s_max = 0.0;
    auto none = pf::select_phi_flags(unrated, s, flows, 0.8);
    for (bool f : none) CHECK_FALSE(f);
  }

  TEST_CASE("series solve warm starts and reproduces cold costs") {
    auto c = net::load_case(data_path("case3_triangle.json"));
    net::require_valid(c);
    auto s = net::build_index_sets(c);
    auto series = pf::solve_exact_series(c, s, pf::zero_schedule(c));
    REQUIRE(series.converged);
    REQUIRE(series.periods.size() == 2);
    CHECK(series.total_cost ==
          doctest::Approx(series.periods[0].cost + series.periods[1].cost));
    // Period 2 carries the heavier load.
    CHECK(series.periods[1].cost > series.periods[0].cost);

    auto cold = pf::solve_exact_opf(c, s, 1, 0.0, 0.0);
    REQUIRE(cold.converged);
    CHECK(series.periods[1].cost == doctest::Approx(cold.cost).epsilon(1e-8));

    pf::OpfWarmStart warm{cold.v, cold.theta, cold.pg, cold.qg};
    pf::OpfOptions o;
    o.mu_init = 1e-4;
    auto rewarm = pf::solve_exact_opf(c, s, 1, 0.0, 0.0, o, &warm);
    REQUIRE(rewarm.converged);
    CHECK(rewarm.cost == doctest::Approx(cold.cost).epsilon(1e-8));
    CHECK(rewarm.iterations <= cold.iterations);
  }
}

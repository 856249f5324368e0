#include "gridarb/cpsota.hpp"

#include <cmath>
#include <random>

#include "doctest.h"
#include "gridarb/netcase.hpp"
#include "gridarb/pfexact.hpp"
#include "test_paths.hpp"

using namespace gridarb;

namespace {

cps::OperatingPoint op_from(const pf::OpfResult& r) {
  return cps::OperatingPoint{r.v, r.theta};
}

// Independent head-room factorization by completing the square of
//   A vdi^2 - B vdi vdj + C vdj^2  with  (p1 vdi - p2 vdj)^2 + (p3 vdi)^2.
void expect_factor(const net::Branch& br, double angle_op) {
  const double d = angle_op - br.sigma;
  const double A = (br.g + br.g_fr) / (br.tau * br.tau);
  const double B = 2.0 * br.g * std::cos(d) / br.tau;
  const double C = br.g + br.g_to;

  net::NetworkCase c;
  c.name = "pair";
  c.horizon = 1;
  c.buses.push_back({1, 0.9, 1.1, true});
  c.buses.push_back({2, 0.9, 1.1, false});
  c.branches.push_back(br);
  c.generators.push_back({1, 1, 0.0, 1.0, 0.0, 0.0, 1.0, -1.0, 1.0});
  net::normalize_case(c);
  const auto s = net::build_index_sets(c);
  cps::OperatingPoint op;
  op.v_op = Eigen::VectorXd::Ones(2);
  op.theta_op = Eigen::VectorXd::Zero(2);
  op.theta_op[0] = angle_op;
  const auto oc = cps::compute_operating_coeffs(c, s, op);
  const cps::VoltageFactor& vf = oc.factors[0];

  REQUIRE(vf.defined);
  CHECK(vf.p2 == doctest::Approx(std::sqrt(C)).epsilon(1e-12));
  CHECK(vf.p1 == doctest::Approx(B / (2.0 * std::sqrt(C))).epsilon(1e-12));
  CHECK(vf.p3 ==
        doctest::Approx(std::sqrt(A - B * B / (4.0 * C))).epsilon(1e-12));

  std::mt19937 rng(7);
  std::uniform_real_distribution<double> unif(-0.2, 0.2);
  for (int k = 0; k < 200; ++k) {
    const double vdi = unif(rng), vdj = unif(rng);
    const double quad = A * vdi * vdi - B * vdi * vdj + C * vdj * vdj;
    const double w2 = vf.p1 * vdi - vf.p2 * vdj;
    const double w3 = vf.p3 * vdi;
    CHECK(w2 * w2 + w3 * w3 == doctest::Approx(quad).epsilon(1e-10));
    CHECK(cps::voltage_quad(c, s, op, 0, vdi, vdj) ==
          doctest::Approx(quad).epsilon(1e-12));
  }
}

}  // namespace

TEST_SUITE("cpsota") {

TEST_CASE("head-room factor matches completing the square") {
  net::Branch br;
  br.id = 1;
  br.from_bus = 1;
  br.to_bus = 2;
  SUBCASE("lossy asymmetric shifted") {
    br.g = 0.5;
    br.b = -1.2;
    br.g_fr = 0.03;
    br.g_to = 0.01;
    br.tau = 1.04;
    br.sigma = 0.1;
    expect_factor(br, 0.05);
  }
  SUBCASE("symmetric conductances") {
    br.g = 0.5;
    br.b = -1.2;
    br.g_fr = 0.01;
    br.g_to = 0.01;
    br.sigma = 0.1;
    expect_factor(br, 0.05);
    // Worked values: the diagonal coefficient keeps a positive sign.
    const double d = 0.05 - 0.1;
    CHECK(0.5 * std::cos(d) / std::sqrt(0.51) > 0.0);
  }
  SUBCASE("round conductance numbers") {
    br.g = 3.0;
    br.b = -8.0;
    br.g_fr = 1.0;
    br.g_to = 1.0;
    expect_factor(br, 0.0);
    net::NetworkCase c;
    c.name = "pair";
    c.horizon = 1;
    c.buses.push_back({1, 0.9, 1.1, true});
    c.buses.push_back({2, 0.9, 1.1, false});
    c.branches.push_back(br);
    c.generators.push_back({1, 1, 0.0, 1.0, 0.0, 0.0, 1.0, -1.0, 1.0});
    net::normalize_case(c);
    const auto s = net::build_index_sets(c);
    cps::OperatingPoint op;
    op.v_op = Eigen::VectorXd::Ones(2);
    op.theta_op = Eigen::VectorXd::Zero(2);
    const auto oc = cps::compute_operating_coeffs(c, s, op);
    CHECK(oc.factors[0].p2 == doctest::Approx(2.0).epsilon(1e-14));
  }
}

TEST_CASE("undefined factor forces the pinned head-room row") {
  net::NetworkCase c;
  c.name = "reactive";
  c.horizon = 1;
  c.buses.push_back({1, 0.9, 1.1, true});
  c.buses.push_back({2, 0.9, 1.1, false});
  net::Branch br;
  br.id = 1;
  br.from_bus = 1;
  br.to_bus = 2;
  br.g = 0.0;
  br.b = -10.0;
  c.branches.push_back(br);
  c.generators.push_back({1, 1, 1.0, 1.0, 0.0, 0.0, 1.0, -1.0, 1.0});
  c.loads.push_back({1, 2, {0.1}, {0.0}});
  net::normalize_case(c);
  const auto s = net::build_index_sets(c);
  cps::OperatingPoint op;
  op.v_op = Eigen::VectorXd::Ones(2);
  op.theta_op = Eigen::VectorXd::Zero(2);
  const auto oc = cps::compute_operating_coeffs(c, s, op);
  CHECK_FALSE(oc.factors[0].defined);

  auto flags = cps::all_linear_flags(s);
  flags.quad_voltage[0] = 1;
  const auto ll = cps::build_ll_primal(c, s, oc, flags, 0, 0.0, 0.0);
  REQUIRE(ll.forced_pin.size() == 1);
  CHECK(ll.forced_pin[0] == 0);
  CHECK(ll.flags.quad_voltage[0] == 0);
  CHECK(ll.row_vchk_pin[0] >= 0);
  CHECK(ll.w0[0] == -1);
  CHECK(ll.prog.check_invariants().empty());

  const auto r = conic::solve_conic(ll.prog);
  CHECK(r.status == conic::SolveStatus::optimal);
}

TEST_CASE("model rows reproduce exact flows at the expansion point") {
  auto c = net::load_case(data_path("case3_triangle.json"));
  net::require_valid(c);
  const auto s = net::build_index_sets(c);
  const auto opf = pf::solve_exact_opf(c, s, 0, 0.0, 0.0);
  REQUIRE(opf.converged);
  const auto oc = cps::compute_operating_coeffs(c, s, op_from(opf));

  SUBCASE("tuple projections match flow values and derivatives") {
    for (int a = 0; a < 2 * s.n_branch; ++a) {
      const net::FlowTuple& tp = s.tuple(a);
      const net::Branch& br = c.branches[static_cast<size_t>(tp.e)];
      const bool fwd = a < s.n_branch;
      const double self_g =
          fwd ? (br.g + br.g_fr) / (br.tau * br.tau) : br.g + br.g_to;
      const double vij = opf.v[tp.i] * opf.v[tp.j] / br.tau;
      const double model_p =
          opf.v[tp.i] * opf.v[tp.i] * self_g - oc.tuples[a].mutual_p * vij;
      CHECK(model_p == doctest::Approx(opf.flows[a].p).epsilon(1e-12));
      const double self_b =
          fwd ? (br.b + br.b_fr) / (br.tau * br.tau) : br.b + br.b_to;
      const double model_q =
          -opf.v[tp.i] * opf.v[tp.i] * self_b + oc.tuples[a].mutual_q * vij;
      CHECK(model_q == doctest::Approx(opf.flows[a].q).epsilon(1e-12));
    }
  }

  SUBCASE("every equality row is satisfied by the frozen dispatch") {
    auto flags = cps::all_linear_flags(s);
    flags.limit_on = [&] {
      std::vector<char> on;
      for (bool b : pf::select_phi_flags(c, s, opf.flows, 0.8))
        on.push_back(b ? 1 : 0);
      return on;
    }();
    const auto ll = cps::build_ll_primal(c, s, oc, flags, 0, 0.0, 0.0);
    REQUIRE(ll.prog.check_invariants().empty());

    std::vector<double> x(static_cast<size_t>(ll.prog.n_vars()), 0.0);
    for (int a = 0; a < 2 * s.n_branch; ++a) {
      x[static_cast<size_t>(ll.p_flow[a])] = opf.flows[a].p;
      x[static_cast<size_t>(ll.q_flow[a])] = opf.flows[a].q;
    }
    for (int k = 0; k < s.n_gen; ++k) {
      x[static_cast<size_t>(ll.pg[k])] = opf.pg[k];
      x[static_cast<size_t>(ll.qg[k])] = opf.qg[k];
    }
    for (int pr = 0; pr < s.n_pair; ++pr)
      x[static_cast<size_t>(ll.cos_hat[pr])] = 1.0;

    for (const auto& row : ll.prog.rows) {
      double lhs = 0.0;
      for (auto [v, coef] : row.coeffs) lhs += coef * x[static_cast<size_t>(v)];
      const bool balance = row.name.rfind("bal", 0) == 0;
      CHECK(std::abs(lhs - row.rhs) <= (balance ? 1e-7 : 1e-10));
    }
  }
}

TEST_CASE("frozen dispatch is the optimum when rows are pinned") {
  auto c = net::load_case(data_path("case3_triangle.json"));
  net::require_valid(c);
  const auto s = net::build_index_sets(c);
  const auto opf = pf::solve_exact_opf(c, s, 0, 0.0, 0.0);
  REQUIRE(opf.converged);
  const auto oc = cps::compute_operating_coeffs(c, s, op_from(opf));

  auto flags = cps::all_linear_flags(s);
  const auto ll = cps::build_ll_primal(c, s, oc, flags, 0, 0.0, 0.0);
  const auto r = conic::solve_conic(ll.prog);
  REQUIRE(r.status == conic::SolveStatus::optimal);
  const auto sol = cps::unpack_solution(ll, r);

  // Reactive dispatch is costless, so the pinned program has a flat optimal
  // face; a cold solve may land anywhere on it. Cost is pinned, position only
  // loosely.
  CHECK(std::abs(sol.cost - opf.cost) / std::abs(opf.cost) <= 1e-6);
  CHECK(sol.v_delta.lpNorm<Eigen::Infinity>() <= 5e-3);
  CHECK(sol.th_delta.lpNorm<Eigen::Infinity>() <= 5e-3);

  const auto err = cps::flow_approximation_errors(c, s, op_from(opf), sol);
  CHECK(err.max_dp <= 1e-4);
  CHECK(err.max_dq <= 1e-4);

  SUBCASE("quadratic head-rooms keep the frozen dispatch feasible") {
    auto qflags = cps::all_linear_flags(s);
    for (auto& v : qflags.quad_voltage) v = 1;
    for (auto& v : qflags.quad_cosine) v = 1;
    const auto qll = cps::build_ll_primal(c, s, oc, qflags, 0, 0.0, 0.0);
    REQUIRE(qll.forced_pin.empty());
    REQUIRE(qll.prog.check_invariants().empty());
    const auto qr = conic::solve_conic(qll.prog);
    REQUIRE(qr.status == conic::SolveStatus::optimal);
    CHECK(qr.objective <= opf.cost + 1e-6);
    const auto cs = cps::census(qll.flags);
    CHECK(cs.voltage_quad == s.n_branch);
    CHECK(cs.cosine_quad == s.n_pair);
    CHECK(cs.limits == 0);
  }
}

TEST_CASE("cone memberships agree with the quadratic tests") {
  auto c = net::load_case(data_path("case3_triangle.json"));
  net::require_valid(c);
  const auto s = net::build_index_sets(c);
  const auto opf = pf::solve_exact_opf(c, s, 0, 0.0, 0.0);
  REQUIRE(opf.converged);
  const auto oc = cps::compute_operating_coeffs(c, s, op_from(opf));

  std::mt19937 rng(11);
  std::uniform_real_distribution<double> unif(-0.25, 0.25);

  for (int e = 0; e < s.n_branch; ++e) {
    const cps::VoltageFactor& vf = oc.factors[e];
    REQUIRE(vf.defined);
    for (int k = 0; k < 1000; ++k) {
      const double vdi = unif(rng), vdj = unif(rng);
      const double vchk = unif(rng) + 0.05;
      const double quad_margin =
          vchk - cps::voltage_quad(c, s, op_from(opf), e, vdi, vdj);
      const double w0 = 0.5 * (1.0 + vchk);
      const double w1 = 0.5 * (1.0 - vchk);
      const double w2 = vf.p1 * vdi - vf.p2 * vdj;
      const double w3 = vf.p3 * vdi;
      const double cone_margin = w0 * w0 - w1 * w1 - w2 * w2 - w3 * w3;
      CHECK(std::abs(cone_margin - quad_margin) <= 1e-9);
      if (quad_margin > 1e-9) {
        CHECK(cone_margin > 0.0);
        CHECK(w0 > 0.0);
      }
      if (quad_margin < -1e-9) CHECK(cone_margin < 0.0);
    }
  }

  for (int k = 0; k < 3000; ++k) {
    const double thd = unif(rng);
    const double ch = 1.0 + unif(rng);
    const double quad_margin = 1.0 - 0.5 * thd * thd - ch;
    const double f0 = -ch + 1.25;
    const double f1 = thd / std::sqrt(2.0);
    const double f2 = ch - 0.75;
    const double cone_margin = f0 * f0 - f1 * f1 - f2 * f2;
    CHECK(std::abs(cone_margin - quad_margin) <= 1e-12);
    // The cone encodes the quadratic bound plus the head sign.
    const bool quad_ok = ch <= 1.0 - 0.5 * thd * thd + 1e-15;
    const bool cone_ok = cone_margin >= -1e-15 && f0 >= 0.0;
    if (std::abs(cone_margin) > 1e-9) CHECK(quad_ok == cone_ok);
  }
}

TEST_CASE("storage draw shifts the balance right side") {
  auto c = net::load_case(data_path("case3_triangle.json"));
  net::require_valid(c);
  const auto s = net::build_index_sets(c);
  const auto opf = pf::solve_exact_opf(c, s, 0, 0.0, 0.0);
  REQUIRE(opf.converged);
  const auto oc = cps::compute_operating_coeffs(c, s, op_from(opf));
  const auto flags = cps::all_linear_flags(s);

  const auto base = cps::build_ll_primal(c, s, oc, flags, 0, 0.0, 0.0);
  const auto drawn = cps::build_ll_primal(c, s, oc, flags, 0, 0.25, 0.1);
  const int bp = base.row_bal_p[static_cast<size_t>(s.storage_bus)];
  const int bq = base.row_bal_q[static_cast<size_t>(s.storage_bus)];
  CHECK(drawn.prog.rows[static_cast<size_t>(bp)].rhs -
            base.prog.rows[static_cast<size_t>(bp)].rhs ==
        doctest::Approx(0.25).epsilon(1e-14));
  CHECK(drawn.prog.rows[static_cast<size_t>(bq)].rhs -
            base.prog.rows[static_cast<size_t>(bq)].rhs ==
        doctest::Approx(0.1).epsilon(1e-14));

  const auto rb = conic::solve_conic(base.prog);
  const auto rd = conic::solve_conic(drawn.prog);
  REQUIRE(rb.status == conic::SolveStatus::optimal);
  REQUIRE(rd.status == conic::SolveStatus::optimal);
  CHECK(rd.objective > rb.objective);

  // A draw on a storage-free case is rejected.
  net::NetworkCase bare = c;
  bare.storage.reset();
  const auto bs = net::build_index_sets(bare);
  const auto boc = cps::compute_operating_coeffs(bare, bs, op_from(opf));
  CHECK_THROWS_AS(
      cps::build_ll_primal(bare, bs, boc, cps::all_linear_flags(bs), 0, 0.1, 0.0),
      std::invalid_argument);
}

}  // TEST_SUITE

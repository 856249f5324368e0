#include "gridarb/lldual.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

namespace gridarb::lld {

using net::IndexSets;
using net::NetworkCase;

namespace {

constexpr double kSqrt2 = 1.4142135623730951;

std::string tag(const char* stem, int k) {
  return std::string(stem) + "#" + std::to_string(k);
}

}  // namespace

LlDual build_ll_dual(const NetworkCase& c, const IndexSets& s,
                     const cps::OperatingCoeffs& oc,
                     const cps::FlagSlice& flags, int t, double p_es,
                     double q_es, const DualOptions& opts) {
  if (t < 0 || t >= c.horizon)
    throw std::invalid_argument("market dual: period out of range");
  if (s.storage_bus < 0 && (p_es != 0.0 || q_es != 0.0))
    throw std::invalid_argument(
        "market dual: storage draw on a case without storage");

  LlDual d;
  d.flags = flags;
  const Eigen::VectorXd& v = oc.op.v_op;
  const int nb = s.n_bus, ng = s.n_gen, na = 2 * s.n_branch;

  for (int e = 0; e < s.n_branch; ++e)
    if (flags.quad_voltage[static_cast<size_t>(e)] &&
        !oc.factors[static_cast<size_t>(e)].defined) {
      d.flags.quad_voltage[static_cast<size_t>(e)] = 0;
      d.forced_pin.push_back(e);
    }

  conic::ConicProgram& p = d.prog;

  for (int i = 0; i < nb; ++i)
    d.lam_bal_p.push_back(p.add_variable(tag("ybalp", i)));
  for (int i = 0; i < nb; ++i)
    d.lam_bal_q.push_back(p.add_variable(tag("ybalq", i)));
  for (int a = 0; a < na; ++a)
    d.lam_flow_p.push_back(p.add_variable(tag("yflowp", a)));
  for (int a = 0; a < na; ++a)
    d.lam_flow_q.push_back(p.add_variable(tag("yflowq", a)));

  d.pin_chk.assign(static_cast<size_t>(s.n_branch), -1);
  d.chk0.assign(static_cast<size_t>(s.n_branch), -1);
  d.chk1.assign(static_cast<size_t>(s.n_branch), -1);
  d.chk2.assign(static_cast<size_t>(s.n_branch), -1);
  d.chk3.assign(static_cast<size_t>(s.n_branch), -1);
  for (int e = 0; e < s.n_branch; ++e) {
    const size_t se = static_cast<size_t>(e);
    if (d.flags.quad_voltage[se]) {
      d.chk0[se] = p.add_variable(tag("zchk0_", e));
      d.chk1[se] = p.add_variable(tag("zchk1_", e));
      d.chk2[se] = p.add_variable(tag("zchk2_", e));
      d.chk3[se] = p.add_variable(tag("zchk3_", e));
    } else {
      d.pin_chk[se] = p.add_variable(tag("ychk", e));
    }
  }
  d.pin_cos.assign(static_cast<size_t>(s.n_pair), -1);
  d.cos0.assign(static_cast<size_t>(s.n_pair), -1);
  d.cos1.assign(static_cast<size_t>(s.n_pair), -1);
  d.cos2.assign(static_cast<size_t>(s.n_pair), -1);
  for (int pr = 0; pr < s.n_pair; ++pr) {
    const size_t sp = static_cast<size_t>(pr);
    if (d.flags.quad_cosine[sp]) {
      d.cos0[sp] = p.add_variable(tag("zcos0_", pr));
      d.cos1[sp] = p.add_variable(tag("zcos1_", pr));
      d.cos2[sp] = p.add_variable(tag("zcos2_", pr));
    } else {
      d.pin_cos[sp] = p.add_variable(tag("ycos", pr));
    }
  }
  for (int k = 0; k < ng; ++k) {
    d.mu_pg_lo.push_back(p.add_variable(tag("mupglo", k), 0.0));
    d.mu_pg_hi.push_back(p.add_variable(tag("mupghi", k), 0.0));
    d.mu_qg_lo.push_back(p.add_variable(tag("muqglo", k), 0.0));
    d.mu_qg_hi.push_back(p.add_variable(tag("muqghi", k), 0.0));
  }
  d.rate0.assign(static_cast<size_t>(na), -1);
  d.rate1.assign(static_cast<size_t>(na), -1);
  d.rate2.assign(static_cast<size_t>(na), -1);
  for (int a = 0; a < na; ++a)
    if (d.flags.limit_on[static_cast<size_t>(a)]) {
      d.rate0[static_cast<size_t>(a)] = p.add_variable(tag("zrate0_", a));
      d.rate1[static_cast<size_t>(a)] = p.add_variable(tag("zrate1_", a));
      d.rate2[static_cast<size_t>(a)] = p.add_variable(tag("zrate2_", a));
    }
  for (int i = 0; i < nb; ++i)
    d.mu_v_lo.push_back(p.add_variable(tag("muvlo", i), 0.0));
  for (int i = 0; i < nb; ++i)
    d.mu_v_hi.push_back(p.add_variable(tag("muvhi", i), 0.0));
  d.lam_ref = p.add_variable("yref");

  // Objective, as the minimization of the negated dual value. Linear parts
  // are the negated products of each multiplier with its constraint's
  // constant side; generators with curvature contribute the square that
  // completes their absorbed stationarity row.
  for (int k = 0; k < ng; ++k) {
    const net::Generator& g = c.generators[static_cast<size_t>(k)];
    const int bi = s.bus_index.at(g.bus);
    p.cost_constant -= g.c0;
    p.add_lin_cost(d.mu_pg_hi[static_cast<size_t>(k)], g.p_max);
    p.add_lin_cost(d.mu_pg_lo[static_cast<size_t>(k)], -g.p_min);
    p.add_lin_cost(d.mu_qg_hi[static_cast<size_t>(k)], g.q_max);
    p.add_lin_cost(d.mu_qg_lo[static_cast<size_t>(k)], -g.q_min);
    if (g.c2 > 0.0) {
      p.add_squared_cost(1.0 / (4.0 * g.c2),
                         {{d.mu_pg_hi[static_cast<size_t>(k)], 1.0},
                          {d.mu_pg_lo[static_cast<size_t>(k)], -1.0},
                          {d.lam_bal_p[static_cast<size_t>(bi)], 1.0}},
                         g.c1);
    }
  }
  for (int i = 0; i < nb; ++i) {
    const net::Bus& b = c.buses[static_cast<size_t>(i)];
    p.add_lin_cost(d.mu_v_hi[static_cast<size_t>(i)], b.v_max - v[i]);
    p.add_lin_cost(d.mu_v_lo[static_cast<size_t>(i)], v[i] - b.v_min);
    double pd = 0.0, qd = 0.0;
    for (int l : s.loads_at[static_cast<size_t>(i)]) {
      pd += c.loads[static_cast<size_t>(l)].p_d[static_cast<size_t>(t)];
      qd += c.loads[static_cast<size_t>(l)].q_d[static_cast<size_t>(t)];
    }
    if (i == s.storage_bus) {
      pd += p_es;
      qd += q_es;
    }
    double gsh = 0.0, bsh = 0.0;
    for (int sh : s.shunts_at[static_cast<size_t>(i)]) {
      gsh += c.shunts[static_cast<size_t>(sh)].g_sh;
      bsh += c.shunts[static_cast<size_t>(sh)].b_sh;
    }
    const double scale = opts.shunt_literal ? 1.0 : v[i] * v[i];
    if (pd != 0.0 || gsh != 0.0)
      p.add_lin_cost(d.lam_bal_p[static_cast<size_t>(i)], pd + scale * gsh);
    if (qd != 0.0 || bsh != 0.0)
      p.add_lin_cost(d.lam_bal_q[static_cast<size_t>(i)], qd - scale * bsh);
  }
  p.add_lin_cost(d.lam_ref, -oc.op.theta_op[s.ref_bus]);
  for (int a = 0; a < na; ++a) {
    const net::FlowTuple& tp = s.tuple(a);
    const net::Branch& br = c.branches[static_cast<size_t>(tp.e)];
    const bool forward = a < s.n_branch;
    const double inv_tau = 1.0 / br.tau;
    const double self_g =
        forward ? (br.g + br.g_fr) * inv_tau * inv_tau : br.g + br.g_to;
    const double self_b =
        forward ? (br.b + br.b_fr) * inv_tau * inv_tau : br.b + br.b_to;
    p.add_lin_cost(d.lam_flow_p[static_cast<size_t>(a)],
                   v[tp.i] * v[tp.i] * self_g);
    p.add_lin_cost(d.lam_flow_q[static_cast<size_t>(a)],
                   -v[tp.i] * v[tp.i] * self_b);
    if (d.rate0[static_cast<size_t>(a)] >= 0)
      p.add_lin_cost(d.rate0[static_cast<size_t>(a)], br.s_max);
  }
  for (int e = 0; e < s.n_branch; ++e)
    if (d.chk0[static_cast<size_t>(e)] >= 0) {
      p.add_lin_cost(d.chk0[static_cast<size_t>(e)], 0.5);
      p.add_lin_cost(d.chk1[static_cast<size_t>(e)], 0.5);
    }
  for (int pr = 0; pr < s.n_pair; ++pr) {
    if (d.cos0[static_cast<size_t>(pr)] >= 0) {
      p.add_lin_cost(d.cos0[static_cast<size_t>(pr)], 1.25);
      p.add_lin_cost(d.cos2[static_cast<size_t>(pr)], -0.75);
    } else {
      p.add_lin_cost(d.pin_cos[static_cast<size_t>(pr)], 1.0);
    }
  }

  // Stationarity of each primal variable, assembled per structure. Angle and
  // magnitude rows accumulate over incident addresses.
  std::vector<std::vector<std::pair<int, double>>> th_acc(
      static_cast<size_t>(nb)),
      v_acc(static_cast<size_t>(nb));
  for (int i = 0; i < nb; ++i) {
    double gsh = 0.0, bsh = 0.0;
    for (int sh : s.shunts_at[static_cast<size_t>(i)]) {
      gsh += c.shunts[static_cast<size_t>(sh)].g_sh;
      bsh += c.shunts[static_cast<size_t>(sh)].b_sh;
    }
    if (gsh != 0.0)
      v_acc[static_cast<size_t>(i)].push_back(
          {d.lam_bal_p[static_cast<size_t>(i)], -2.0 * v[i] * gsh});
    if (bsh != 0.0)
      v_acc[static_cast<size_t>(i)].push_back(
          {d.lam_bal_q[static_cast<size_t>(i)], 2.0 * v[i] * bsh});
    v_acc[static_cast<size_t>(i)].push_back(
        {d.mu_v_hi[static_cast<size_t>(i)], 1.0});
    v_acc[static_cast<size_t>(i)].push_back(
        {d.mu_v_lo[static_cast<size_t>(i)], -1.0});
  }
  for (int a = 0; a < na; ++a) {
    const net::FlowTuple& tp = s.tuple(a);
    const net::Branch& br = c.branches[static_cast<size_t>(tp.e)];
    const bool forward = a < s.n_branch;
    const double inv_tau = 1.0 / br.tau;
    const double self_g =
        forward ? (br.g + br.g_fr) * inv_tau * inv_tau : br.g + br.g_to;
    const double self_b =
        forward ? (br.b + br.b_fr) * inv_tau * inv_tau : br.b + br.b_to;
    const cps::TupleCoeffs& tc = oc.tuples[static_cast<size_t>(a)];
    const double mp = tc.mutual_p * inv_tau;
    const double mq = tc.mutual_q * inv_tau;
    const double vij = v[tp.i] * v[tp.j];
    const int yp = d.lam_flow_p[static_cast<size_t>(a)];
    const int yq = d.lam_flow_q[static_cast<size_t>(a)];

    th_acc[static_cast<size_t>(tp.i)].push_back({yp, mq * vij});
    th_acc[static_cast<size_t>(tp.i)].push_back({yq, mp * vij});
    th_acc[static_cast<size_t>(tp.j)].push_back({yp, -mq * vij});
    th_acc[static_cast<size_t>(tp.j)].push_back({yq, -mp * vij});

    v_acc[static_cast<size_t>(tp.i)].push_back(
        {yp, -2.0 * v[tp.i] * self_g + mp * v[tp.j]});
    v_acc[static_cast<size_t>(tp.i)].push_back(
        {yq, 2.0 * v[tp.i] * self_b - mq * v[tp.j]});
    v_acc[static_cast<size_t>(tp.j)].push_back({yp, mp * v[tp.i]});
    v_acc[static_cast<size_t>(tp.j)].push_back({yq, -mq * v[tp.i]});
  }
  for (int e = 0; e < s.n_branch; ++e) {
    const size_t se = static_cast<size_t>(e);
    if (d.chk2[se] < 0) continue;
    const net::FlowTuple& tp = s.fwd[se];
    const cps::VoltageFactor& vf = oc.factors[se];
    v_acc[static_cast<size_t>(tp.i)].push_back({d.chk2[se], -vf.p1});
    v_acc[static_cast<size_t>(tp.i)].push_back({d.chk3[se], -vf.p3});
    v_acc[static_cast<size_t>(tp.j)].push_back({d.chk2[se], vf.p2});
  }
  for (int pr = 0; pr < s.n_pair; ++pr) {
    const size_t sp = static_cast<size_t>(pr);
    if (d.cos1[sp] < 0) continue;
    const auto [pi, pj] = s.pairs[sp];
    th_acc[static_cast<size_t>(pi)].push_back({d.cos1[sp], -1.0 / kSqrt2});
    th_acc[static_cast<size_t>(pj)].push_back({d.cos1[sp], 1.0 / kSqrt2});
  }
  th_acc[static_cast<size_t>(s.ref_bus)].push_back({d.lam_ref, 1.0});
  for (int i = 0; i < nb; ++i) {
    d.row_th.push_back(p.add_equality(std::move(th_acc[static_cast<size_t>(i)]),
                                      0.0, tag("stat_th", i)));
    d.row_v.push_back(p.add_equality(std::move(v_acc[static_cast<size_t>(i)]),
                                     0.0, tag("stat_v", i)));
  }

  for (int a = 0; a < na; ++a) {
    const net::FlowTuple& tp = s.tuple(a);
    std::vector<std::pair<int, double>> rp{
        {d.lam_bal_p[static_cast<size_t>(tp.i)], -1.0},
        {d.lam_flow_p[static_cast<size_t>(a)], 1.0}};
    std::vector<std::pair<int, double>> rq{
        {d.lam_bal_q[static_cast<size_t>(tp.i)], -1.0},
        {d.lam_flow_q[static_cast<size_t>(a)], 1.0}};
    if (d.rate1[static_cast<size_t>(a)] >= 0) {
      rp.push_back({d.rate1[static_cast<size_t>(a)], -1.0});
      rq.push_back({d.rate2[static_cast<size_t>(a)], -1.0});
    }
    d.row_p.push_back(p.add_equality(std::move(rp), 0.0, tag("stat_p", a)));
    d.row_q.push_back(p.add_equality(std::move(rq), 0.0, tag("stat_q", a)));
  }

  for (int k = 0; k < ng; ++k) {
    const net::Generator& g = c.generators[static_cast<size_t>(k)];
    const int bi = s.bus_index.at(g.bus);
    if (g.c2 > 0.0) {
      d.row_pg.push_back(-1);
    } else {
      d.row_pg.push_back(
          p.add_equality({{d.mu_pg_hi[static_cast<size_t>(k)], 1.0},
                          {d.mu_pg_lo[static_cast<size_t>(k)], -1.0},
                          {d.lam_bal_p[static_cast<size_t>(bi)], 1.0}},
                         -g.c1, tag("stat_pg", k)));
    }
    d.row_qg.push_back(
        p.add_equality({{d.mu_qg_hi[static_cast<size_t>(k)], 1.0},
                        {d.mu_qg_lo[static_cast<size_t>(k)], -1.0},
                        {d.lam_bal_q[static_cast<size_t>(bi)], 1.0}},
                       0.0, tag("stat_qg", k)));
  }

  std::vector<std::vector<std::pair<int, double>>> cos_acc(
      static_cast<size_t>(s.n_pair));
  for (int a = 0; a < na; ++a) {
    const net::FlowTuple& tp = s.tuple(a);
    const net::Branch& br = c.branches[static_cast<size_t>(tp.e)];
    const cps::TupleCoeffs& tc = oc.tuples[static_cast<size_t>(a)];
    const double mp = tc.mutual_p / br.tau;
    const double mq = tc.mutual_q / br.tau;
    const double vij = v[tp.i] * v[tp.j];
    cos_acc[static_cast<size_t>(tp.pair)].push_back(
        {d.lam_flow_p[static_cast<size_t>(a)], mp * vij});
    cos_acc[static_cast<size_t>(tp.pair)].push_back(
        {d.lam_flow_q[static_cast<size_t>(a)], -mq * vij});
  }
  for (int pr = 0; pr < s.n_pair; ++pr) {
    const size_t sp = static_cast<size_t>(pr);
    auto row = std::move(cos_acc[sp]);
    if (d.cos0[sp] >= 0) {
      row.push_back({d.cos0[sp], 1.0});
      row.push_back({d.cos2[sp], -1.0});
    } else {
      row.push_back({d.pin_cos[sp], 1.0});
    }
    d.row_cos.push_back(p.add_equality(std::move(row), 0.0, tag("stat_cos", pr)));
  }

  for (int e = 0; e < s.n_branch; ++e) {
    const size_t se = static_cast<size_t>(e);
    std::vector<std::pair<int, double>> row{
        {d.lam_flow_p[se], -0.5},
        {d.lam_flow_p[static_cast<size_t>(e + s.n_branch)], -0.5}};
    if (d.chk0[se] >= 0) {
      row.push_back({d.chk1[se], 0.5});
      row.push_back({d.chk0[se], -0.5});
    } else {
      row.push_back({d.pin_chk[se], 1.0});
    }
    d.row_chk.push_back(p.add_equality(std::move(row), 0.0, tag("stat_chk", e)));
  }

  for (int e = 0; e < s.n_branch; ++e)
    if (d.chk0[static_cast<size_t>(e)] >= 0)
      p.add_soc({d.chk0[static_cast<size_t>(e)], d.chk1[static_cast<size_t>(e)],
                 d.chk2[static_cast<size_t>(e)], d.chk3[static_cast<size_t>(e)]},
                tag("dvcone", e));
  for (int pr = 0; pr < s.n_pair; ++pr)
    if (d.cos0[static_cast<size_t>(pr)] >= 0)
      p.add_soc({d.cos0[static_cast<size_t>(pr)], d.cos1[static_cast<size_t>(pr)],
                 d.cos2[static_cast<size_t>(pr)]},
                tag("dccone", pr));
  for (int a = 0; a < na; ++a)
    if (d.rate0[static_cast<size_t>(a)] >= 0)
      p.add_soc({d.rate0[static_cast<size_t>(a)], d.rate1[static_cast<size_t>(a)],
                 d.rate2[static_cast<size_t>(a)]},
                tag("dscone", a));
  return d;
}

double dual_objective(const LlDual& d, const std::vector<double>& x) {
  return -d.prog.objective_value(x);
}

conic::WarmStart dual_start_from_primal(const cps::LlPrimal& ll,
                                        const conic::WarmStart& ws,
                                        const LlDual& d) {
  conic::WarmStart out;
  out.x.assign(static_cast<size_t>(d.prog.n_vars()), 0.0);
  auto put = [&](int var, double value) {
    if (var >= 0) out.x[static_cast<size_t>(var)] = value;
  };
  const size_t nb = ll.th.size();
  for (size_t i = 0; i < nb; ++i) {
    put(d.lam_bal_p[i], ws.y[static_cast<size_t>(ll.row_bal_p[i])]);
    put(d.lam_bal_q[i], ws.y[static_cast<size_t>(ll.row_bal_q[i])]);
    put(d.mu_v_lo[i], ws.mu_lower[static_cast<size_t>(ll.vd[i])]);
    put(d.mu_v_hi[i], ws.mu_upper[static_cast<size_t>(ll.vd[i])]);
  }
  for (size_t a = 0; a < ll.p_flow.size(); ++a) {
    put(d.lam_flow_p[a], ws.y[static_cast<size_t>(ll.row_flow_p[a])]);
    put(d.lam_flow_q[a], ws.y[static_cast<size_t>(ll.row_flow_q[a])]);
    if (d.rate0[a] >= 0 && ll.cone_s[a] >= 0) {
      const auto& zc = ws.cone_duals[static_cast<size_t>(ll.cone_s[a])];
      put(d.rate0[a], zc[0]);
      put(d.rate1[a], zc[1]);
      put(d.rate2[a], zc[2]);
    }
  }
  for (size_t k = 0; k < ll.pg.size(); ++k) {
    put(d.mu_pg_lo[k], ws.mu_lower[static_cast<size_t>(ll.pg[k])]);
    put(d.mu_pg_hi[k], ws.mu_upper[static_cast<size_t>(ll.pg[k])]);
    put(d.mu_qg_lo[k], ws.mu_lower[static_cast<size_t>(ll.qg[k])]);
    put(d.mu_qg_hi[k], ws.mu_upper[static_cast<size_t>(ll.qg[k])]);
  }
  for (size_t e = 0; e < ll.v_chk.size(); ++e) {
    if (d.chk0[e] >= 0 && ll.cone_v[e] >= 0) {
      const auto& zc = ws.cone_duals[static_cast<size_t>(ll.cone_v[e])];
      put(d.chk0[e], zc[0]);
      put(d.chk1[e], zc[1]);
      put(d.chk2[e], zc[2]);
      put(d.chk3[e], zc[3]);
    } else if (d.pin_chk[e] >= 0 && ll.row_vchk_pin[e] >= 0) {
      put(d.pin_chk[e], ws.y[static_cast<size_t>(ll.row_vchk_pin[e])]);
    }
  }
  for (size_t pr = 0; pr < ll.cos_hat.size(); ++pr) {
    if (d.cos0[pr] >= 0 && ll.cone_c[pr] >= 0) {
      const auto& zc = ws.cone_duals[static_cast<size_t>(ll.cone_c[pr])];
      put(d.cos0[pr], zc[0]);
      put(d.cos1[pr], zc[1]);
      put(d.cos2[pr], zc[2]);
    } else if (d.pin_cos[pr] >= 0 && ll.row_cos_pin[pr] >= 0) {
      put(d.pin_cos[pr], ws.y[static_cast<size_t>(ll.row_cos_pin[pr])]);
    }
  }
  put(d.lam_ref, ws.y[static_cast<size_t>(ll.row_ref)]);
  return out;
}

}  // namespace gridarb::lld

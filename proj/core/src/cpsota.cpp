#include "gridarb/cpsota.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "gridarb/pfexact.hpp"

namespace gridarb::cps {

namespace {

constexpr double kSqrt2 = 1.4142135623730951;

std::string tag(const char* stem, int k) {
  return std::string(stem) + std::to_string(k);
}

}  // namespace

OperatingCoeffs compute_operating_coeffs(const net::NetworkCase& c,
                                         const net::IndexSets& s,
                                         const OperatingPoint& op) {
  OperatingCoeffs oc;
  oc.op = op;
  oc.tuples.resize(static_cast<size_t>(2 * s.n_branch));
  oc.factors.resize(static_cast<size_t>(s.n_branch));

  for (int a = 0; a < 2 * s.n_branch; ++a) {
    const net::FlowTuple& tp = s.tuple(a);
    const net::Branch& br = c.branches[static_cast<size_t>(tp.e)];
    const double d = op.theta_op[tp.i] - op.theta_op[tp.j] +
                     (a < s.n_branch ? -br.sigma : br.sigma);
    oc.tuples[static_cast<size_t>(a)].mutual_p =
        br.g * std::cos(d) + br.b * std::sin(d);
    oc.tuples[static_cast<size_t>(a)].mutual_q =
        br.b * std::cos(d) - br.g * std::sin(d);
  }

  for (int e = 0; e < s.n_branch; ++e) {
    const net::Branch& br = c.branches[static_cast<size_t>(e)];
    const net::FlowTuple& tp = s.fwd[static_cast<size_t>(e)];
    VoltageFactor& vf = oc.factors[static_cast<size_t>(e)];
    const double ct = br.g + br.g_to;
    if (ct <= 0.0) continue;
    const double d = op.theta_op[tp.i] - op.theta_op[tp.j] - br.sigma;
    const double sd = std::sin(d);
    const double rad =
        br.g * br.g * sd * sd + br.g * (br.g_fr + br.g_to) + br.g_fr * br.g_to;
    if (rad < 0.0) continue;
    vf.p2 = std::sqrt(ct);
    vf.p1 = br.g * std::cos(d) / (br.tau * vf.p2);
    vf.p3 = std::sqrt(rad) / (br.tau * vf.p2);
    vf.defined = true;
  }
  return oc;
}

double voltage_quad(const net::NetworkCase& c, const net::IndexSets& s,
                    const OperatingPoint& op, int e, double vdi, double vdj) {
  const net::Branch& br = c.branches[static_cast<size_t>(e)];
  const net::FlowTuple& tp = s.fwd[static_cast<size_t>(e)];
  const double d = op.theta_op[tp.i] - op.theta_op[tp.j] - br.sigma;
  const double inv_tau = 1.0 / br.tau;
  return (br.g + br.g_fr) * inv_tau * inv_tau * vdi * vdi -
         2.0 * br.g * std::cos(d) * inv_tau * vdi * vdj +
         (br.g + br.g_to) * vdj * vdj;
}

FlagSlice all_linear_flags(const net::IndexSets& s) {
  FlagSlice f;
  f.quad_voltage.assign(static_cast<size_t>(s.n_branch), 0);
  f.quad_cosine.assign(static_cast<size_t>(s.n_pair), 0);
  f.limit_on.assign(static_cast<size_t>(2 * s.n_branch), 0);
  return f;
}

FlagCensus census(const FlagSlice& f) {
  FlagCensus out;
  for (char v : f.quad_voltage) out.voltage_quad += v ? 1 : 0;
  for (char v : f.quad_cosine) out.cosine_quad += v ? 1 : 0;
  for (char v : f.limit_on) out.limits += v ? 1 : 0;
  return out;
}

LlPrimal build_ll_primal(const net::NetworkCase& c, const net::IndexSets& s,
                         const OperatingCoeffs& oc, const FlagSlice& flags,
                         int t, double p_es, double q_es) {
  if (t < 0 || t >= c.horizon)
    throw std::invalid_argument("market approximation: period out of range");
  if (s.storage_bus < 0 && (p_es != 0.0 || q_es != 0.0))
    throw std::invalid_argument(
        "market approximation: storage draw on a case without storage");

  LlPrimal ll;
  ll.flags = flags;
  const Eigen::VectorXd& v = oc.op.v_op;

  for (int e = 0; e < s.n_branch; ++e)
    if (flags.quad_voltage[static_cast<size_t>(e)] &&
        !oc.factors[static_cast<size_t>(e)].defined) {
      ll.flags.quad_voltage[static_cast<size_t>(e)] = 0;
      ll.forced_pin.push_back(e);
    }

  conic::ConicProgram& p = ll.prog;
  const int nb = s.n_bus, ng = s.n_gen, na = 2 * s.n_branch;

  for (int i = 0; i < nb; ++i) ll.th.push_back(p.add_variable(tag("thd", i)));
  for (int i = 0; i < nb; ++i) {
    const net::Bus& b = c.buses[static_cast<size_t>(i)];
    ll.vd.push_back(
        p.add_variable(tag("vd", i), b.v_min - v[i], b.v_max - v[i]));
  }
  for (int a = 0; a < na; ++a) ll.p_flow.push_back(p.add_variable(tag("P", a)));
  for (int a = 0; a < na; ++a) ll.q_flow.push_back(p.add_variable(tag("Q", a)));
  for (int k = 0; k < ng; ++k) {
    const net::Generator& g = c.generators[static_cast<size_t>(k)];
    ll.pg.push_back(p.add_variable(tag("pg", k), g.p_min, g.p_max));
  }
  for (int k = 0; k < ng; ++k) {
    const net::Generator& g = c.generators[static_cast<size_t>(k)];
    ll.qg.push_back(p.add_variable(tag("qg", k), g.q_min, g.q_max));
  }
  for (int pr = 0; pr < s.n_pair; ++pr)
    ll.cos_hat.push_back(p.add_variable(tag("cosh", pr)));
  for (int e = 0; e < s.n_branch; ++e)
    ll.v_chk.push_back(p.add_variable(tag("vchk", e)));

  ll.w0.assign(static_cast<size_t>(s.n_branch), -1);
  ll.w1.assign(static_cast<size_t>(s.n_branch), -1);
  ll.w2.assign(static_cast<size_t>(s.n_branch), -1);
  ll.w3.assign(static_cast<size_t>(s.n_branch), -1);
  for (int e = 0; e < s.n_branch; ++e)
    if (ll.flags.quad_voltage[static_cast<size_t>(e)]) {
      ll.w0[static_cast<size_t>(e)] = p.add_variable(tag("w0_", e));
      ll.w1[static_cast<size_t>(e)] = p.add_variable(tag("w1_", e));
      ll.w2[static_cast<size_t>(e)] = p.add_variable(tag("w2_", e));
      ll.w3[static_cast<size_t>(e)] = p.add_variable(tag("w3_", e));
    }
  ll.f0.assign(static_cast<size_t>(s.n_pair), -1);
  ll.f1.assign(static_cast<size_t>(s.n_pair), -1);
  ll.f2.assign(static_cast<size_t>(s.n_pair), -1);
  for (int pr = 0; pr < s.n_pair; ++pr)
    if (ll.flags.quad_cosine[static_cast<size_t>(pr)]) {
      ll.f0[static_cast<size_t>(pr)] = p.add_variable(tag("f0_", pr));
      ll.f1[static_cast<size_t>(pr)] = p.add_variable(tag("f1_", pr));
      ll.f2[static_cast<size_t>(pr)] = p.add_variable(tag("f2_", pr));
    }
  ll.u.assign(static_cast<size_t>(na), -1);
  for (int a = 0; a < na; ++a)
    if (ll.flags.limit_on[static_cast<size_t>(a)])
      ll.u[static_cast<size_t>(a)] = p.add_variable(tag("u", a));

  for (int k = 0; k < ng; ++k) {
    const net::Generator& g = c.generators[static_cast<size_t>(k)];
    p.add_quad_cost(ll.pg[static_cast<size_t>(k)], g.c2);
    p.add_lin_cost(ll.pg[static_cast<size_t>(k)], g.c1);
    p.cost_constant += g.c0;
  }

  // Bus balances. The quadratic shunt term is linearized around the
  // operating magnitude.
  for (int i = 0; i < nb; ++i) {
    double gsh = 0.0, bsh = 0.0;
    for (int sh : s.shunts_at[static_cast<size_t>(i)]) {
      gsh += c.shunts[static_cast<size_t>(sh)].g_sh;
      bsh += c.shunts[static_cast<size_t>(sh)].b_sh;
    }
    double pd = 0.0, qd = 0.0;
    for (int l : s.loads_at[static_cast<size_t>(i)]) {
      pd += c.loads[static_cast<size_t>(l)].p_d[static_cast<size_t>(t)];
      qd += c.loads[static_cast<size_t>(l)].q_d[static_cast<size_t>(t)];
    }
    if (i == s.storage_bus) {
      pd += p_es;
      qd += q_es;
    }

    std::vector<std::pair<int, double>> rp, rq;
    for (int k : s.gens_at[static_cast<size_t>(i)]) {
      rp.push_back({ll.pg[static_cast<size_t>(k)], 1.0});
      rq.push_back({ll.qg[static_cast<size_t>(k)], 1.0});
    }
    for (int a : s.tuples_at[static_cast<size_t>(i)]) {
      rp.push_back({ll.p_flow[static_cast<size_t>(a)], -1.0});
      rq.push_back({ll.q_flow[static_cast<size_t>(a)], -1.0});
    }
    if (gsh != 0.0) rp.push_back({ll.vd[static_cast<size_t>(i)], -2.0 * v[i] * gsh});
    if (bsh != 0.0) rq.push_back({ll.vd[static_cast<size_t>(i)], 2.0 * v[i] * bsh});
    ll.row_bal_p.push_back(
        p.add_equality(std::move(rp), pd + v[i] * v[i] * gsh, tag("balp", i)));
    ll.row_bal_q.push_back(
        p.add_equality(std::move(rq), qd - v[i] * v[i] * bsh, tag("balq", i)));
  }

  // Flow definitions per tuple address.
  for (int a = 0; a < na; ++a) {
    const net::FlowTuple& tp = s.tuple(a);
    const net::Branch& br = c.branches[static_cast<size_t>(tp.e)];
    const bool forward = a < s.n_branch;
    const double inv_tau = 1.0 / br.tau;
    const double self_g =
        forward ? (br.g + br.g_fr) * inv_tau * inv_tau : br.g + br.g_to;
    const double self_b =
        forward ? (br.b + br.b_fr) * inv_tau * inv_tau : br.b + br.b_to;
    const TupleCoeffs& tc = oc.tuples[static_cast<size_t>(a)];
    const double mp = tc.mutual_p * inv_tau;
    const double mq = tc.mutual_q * inv_tau;
    const double vij = v[tp.i] * v[tp.j];

    std::vector<std::pair<int, double>> rp{
        {ll.p_flow[static_cast<size_t>(a)], 1.0},
        {ll.vd[static_cast<size_t>(tp.i)], -2.0 * v[tp.i] * self_g + mp * v[tp.j]},
        {ll.vd[static_cast<size_t>(tp.j)], mp * v[tp.i]},
        {ll.v_chk[static_cast<size_t>(tp.e)], -0.5},
        {ll.cos_hat[static_cast<size_t>(tp.pair)], mp * vij},
        {ll.th[static_cast<size_t>(tp.i)], mq * vij},
        {ll.th[static_cast<size_t>(tp.j)], -mq * vij}};
    ll.row_flow_p.push_back(
        p.add_equality(std::move(rp), v[tp.i] * v[tp.i] * self_g, tag("flowp", a)));

    std::vector<std::pair<int, double>> rq{
        {ll.q_flow[static_cast<size_t>(a)], 1.0},
        {ll.vd[static_cast<size_t>(tp.i)], 2.0 * v[tp.i] * self_b - mq * v[tp.j]},
        {ll.vd[static_cast<size_t>(tp.j)], -mq * v[tp.i]},
        {ll.cos_hat[static_cast<size_t>(tp.pair)], -mq * vij},
        {ll.th[static_cast<size_t>(tp.i)], mp * vij},
        {ll.th[static_cast<size_t>(tp.j)], -mp * vij}};
    ll.row_flow_q.push_back(p.add_equality(
        std::move(rq), -v[tp.i] * v[tp.i] * self_b, tag("flowq", a)));
  }

  // Head-room rows: a cone when quadratic, a pin otherwise.
  ll.row_vchk_pin.assign(static_cast<size_t>(s.n_branch), -1);
  ll.row_w0.assign(static_cast<size_t>(s.n_branch), -1);
  ll.row_w1.assign(static_cast<size_t>(s.n_branch), -1);
  ll.row_w2.assign(static_cast<size_t>(s.n_branch), -1);
  ll.row_w3.assign(static_cast<size_t>(s.n_branch), -1);
  ll.cone_v.assign(static_cast<size_t>(s.n_branch), -1);
  for (int e = 0; e < s.n_branch; ++e) {
    const size_t se = static_cast<size_t>(e);
    if (!ll.flags.quad_voltage[se]) {
      ll.row_vchk_pin[se] =
          p.add_equality({{ll.v_chk[se], 1.0}}, 0.0, tag("vchk0_", e));
      continue;
    }
    const net::FlowTuple& tp = s.fwd[se];
    const VoltageFactor& vf = oc.factors[se];
    ll.row_w1[se] = p.add_equality({{ll.w1[se], 1.0}, {ll.v_chk[se], 0.5}}, 0.5,
                                   tag("w1row", e));
    ll.row_w2[se] = p.add_equality(
        {{ll.w2[se], 1.0},
         {ll.vd[static_cast<size_t>(tp.i)], -vf.p1},
         {ll.vd[static_cast<size_t>(tp.j)], vf.p2}},
        0.0, tag("w2row", e));
    ll.row_w3[se] = p.add_equality(
        {{ll.w3[se], 1.0}, {ll.vd[static_cast<size_t>(tp.i)], -vf.p3}}, 0.0,
        tag("w3row", e));
    ll.row_w0[se] = p.add_equality({{ll.w0[se], 1.0}, {ll.v_chk[se], -0.5}}, 0.5,
                                   tag("w0row", e));
    ll.cone_v[se] =
        p.add_soc({ll.w0[se], ll.w1[se], ll.w2[se], ll.w3[se]}, tag("vcone", e));
  }

  ll.row_cos_pin.assign(static_cast<size_t>(s.n_pair), -1);
  ll.row_f0.assign(static_cast<size_t>(s.n_pair), -1);
  ll.row_f1.assign(static_cast<size_t>(s.n_pair), -1);
  ll.row_f2.assign(static_cast<size_t>(s.n_pair), -1);
  ll.cone_c.assign(static_cast<size_t>(s.n_pair), -1);
  for (int pr = 0; pr < s.n_pair; ++pr) {
    const size_t sp = static_cast<size_t>(pr);
    if (!ll.flags.quad_cosine[sp]) {
      ll.row_cos_pin[sp] =
          p.add_equality({{ll.cos_hat[sp], 1.0}}, 1.0, tag("cos1_", pr));
      continue;
    }
    const auto [pi, pj] = s.pairs[sp];
    ll.row_f1[sp] = p.add_equality(
        {{ll.f1[sp], 1.0},
         {ll.th[static_cast<size_t>(pi)], -1.0 / kSqrt2},
         {ll.th[static_cast<size_t>(pj)], 1.0 / kSqrt2}},
        0.0, tag("f1row", pr));
    ll.row_f2[sp] = p.add_equality({{ll.f2[sp], 1.0}, {ll.cos_hat[sp], -1.0}},
                                   -0.75, tag("f2row", pr));
    ll.row_f0[sp] = p.add_equality({{ll.f0[sp], 1.0}, {ll.cos_hat[sp], 1.0}},
                                   1.25, tag("f0row", pr));
    ll.cone_c[sp] = p.add_soc({ll.f0[sp], ll.f1[sp], ll.f2[sp]}, tag("ccone", pr));
  }

  ll.row_u.assign(static_cast<size_t>(na), -1);
  ll.cone_s.assign(static_cast<size_t>(na), -1);
  for (int a = 0; a < na; ++a) {
    const size_t sa = static_cast<size_t>(a);
    if (!ll.flags.limit_on[sa]) continue;
    const double smax = c.branches[static_cast<size_t>(s.tuple(a).e)].s_max;
    ll.row_u[sa] = p.add_equality({{ll.u[sa], 1.0}}, smax, tag("urow", a));
    ll.cone_s[sa] =
        p.add_soc({ll.u[sa], ll.p_flow[sa], ll.q_flow[sa]}, tag("scone", a));
  }

  ll.row_ref = p.add_equality({{ll.th[static_cast<size_t>(s.ref_bus)], 1.0}},
                              -oc.op.theta_op[s.ref_bus], "refrow");
  return ll;
}

LlSolution unpack_solution(const LlPrimal& ll, const conic::SolveResult& r) {
  auto gather = [&](const std::vector<int>& ids) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(ids.size()));
    for (size_t k = 0; k < ids.size(); ++k)
      out[static_cast<Eigen::Index>(k)] = r.x[static_cast<size_t>(ids[k])];
    return out;
  };
  LlSolution s;
  s.th_delta = gather(ll.th);
  s.v_delta = gather(ll.vd);
  s.p_flow = gather(ll.p_flow);
  s.q_flow = gather(ll.q_flow);
  s.pg = gather(ll.pg);
  s.qg = gather(ll.qg);
  s.cos_hat = gather(ll.cos_hat);
  s.v_chk = gather(ll.v_chk);
  s.cost = r.objective;
  return s;
}

ApproxErrors flow_approximation_errors(const net::NetworkCase& c,
                                       const net::IndexSets& s,
                                       const OperatingPoint& op,
                                       const LlSolution& sol) {
  const Eigen::VectorXd v = op.v_op + sol.v_delta;
  const Eigen::VectorXd th = op.theta_op + sol.th_delta;
  ApproxErrors out;
  for (int a = 0; a < 2 * s.n_branch; ++a) {
    const pf::BranchFlow f = pf::branch_flow(c, s, a, v, th);
    out.max_dp = std::max(out.max_dp, std::abs(f.p - sol.p_flow[a]));
    out.max_dq = std::max(out.max_dq, std::abs(f.q - sol.q_flow[a]));
  }
  return out;
}

}  // namespace gridarb::cps

#include "gridarb/presolve.hpp"

#include <cstddef>

namespace gridarb::psv {

using net::IndexSets;
using net::NetworkCase;

namespace {

// Value a single remaining unit-coefficient row on var must carry to close
// the variable's stationarity, given every other multiplier in y. Pass the
// row being solved for as skip, or -1 when its multiplier is still zero.
double closing_multiplier(const conic::ConicProgram& p,
                          const std::vector<double>& y, int var, int skip) {
  double acc = 0.0;
  for (int r = 0; r < p.n_rows(); ++r) {
    if (r == skip) continue;
    for (const auto& [v, a] : p.rows[static_cast<size_t>(r)].coeffs)
      if (v == var) acc -= a * y[static_cast<size_t>(r)];
  }
  return acc;
}

}  // namespace

conic::WarmStart transfer_warm_start(const NetworkCase& c, const IndexSets& s,
                                     const cps::OperatingCoeffs& oc,
                                     const cps::LlPrimal& ll,
                                     const pf::OpfResult& opf) {
  (void)oc;
  const conic::ConicProgram& p = ll.prog;
  conic::WarmStart ws;
  ws.x.assign(static_cast<size_t>(p.n_vars()), 0.0);
  ws.y.assign(static_cast<size_t>(p.n_rows()), 0.0);
  ws.mu_lower.assign(static_cast<size_t>(p.n_vars()), 0.0);
  ws.mu_upper.assign(static_cast<size_t>(p.n_vars()), 0.0);
  ws.cone_duals.assign(static_cast<size_t>(p.n_cones()), {});
  for (int k = 0; k < p.n_cones(); ++k)
    ws.cone_duals[static_cast<size_t>(k)].assign(
        p.cones[static_cast<size_t>(k)].members.size(), 0.0);

  // Primal point: the exact dispatch with zero deviations. Cone auxiliaries
  // take their linked values; all three cones sit exactly on their boundary.
  for (int a = 0; a < 2 * s.n_branch; ++a) {
    ws.x[static_cast<size_t>(ll.p_flow[static_cast<size_t>(a)])] =
        opf.flows[static_cast<size_t>(a)].p;
    ws.x[static_cast<size_t>(ll.q_flow[static_cast<size_t>(a)])] =
        opf.flows[static_cast<size_t>(a)].q;
    if (ll.u[static_cast<size_t>(a)] >= 0)
      ws.x[static_cast<size_t>(ll.u[static_cast<size_t>(a)])] =
          c.branches[static_cast<size_t>(s.tuple(a).e)].s_max;
  }
  for (int k = 0; k < s.n_gen; ++k) {
    ws.x[static_cast<size_t>(ll.pg[static_cast<size_t>(k)])] = opf.pg[k];
    ws.x[static_cast<size_t>(ll.qg[static_cast<size_t>(k)])] = opf.qg[k];
  }
  for (int pr = 0; pr < s.n_pair; ++pr) {
    ws.x[static_cast<size_t>(ll.cos_hat[static_cast<size_t>(pr)])] = 1.0;
    if (ll.f0[static_cast<size_t>(pr)] >= 0) {
      ws.x[static_cast<size_t>(ll.f0[static_cast<size_t>(pr)])] = 0.25;
      ws.x[static_cast<size_t>(ll.f2[static_cast<size_t>(pr)])] = 0.25;
    }
  }
  for (int e = 0; e < s.n_branch; ++e)
    if (ll.w0[static_cast<size_t>(e)] >= 0) {
      ws.x[static_cast<size_t>(ll.w0[static_cast<size_t>(e)])] = 0.5;
      ws.x[static_cast<size_t>(ll.w1[static_cast<size_t>(e)])] = 0.5;
    }

  // Balance rows carry the exact nodal duals. Flow rows inherit the duals of
  // the sending bus, bent by the rating multiplier where the exact limit was
  // active; the bend reappears as the limit cone's tail dual below, so every
  // flow variable's stationarity closes.
  for (int i = 0; i < s.n_bus; ++i) {
    ws.y[static_cast<size_t>(ll.row_bal_p[static_cast<size_t>(i)])] =
        -opf.price_p[i];
    ws.y[static_cast<size_t>(ll.row_bal_q[static_cast<size_t>(i)])] =
        -opf.price_q[i];
  }
  for (int a = 0; a < 2 * s.n_branch; ++a) {
    const int i = s.tuple(a).i;
    const double zr = opf.mu_rating[a];
    ws.y[static_cast<size_t>(ll.row_flow_p[static_cast<size_t>(a)])] =
        -opf.price_p[i] - 2.0 * opf.flows[static_cast<size_t>(a)].p * zr;
    ws.y[static_cast<size_t>(ll.row_flow_q[static_cast<size_t>(a)])] =
        -opf.price_q[i] - 2.0 * opf.flows[static_cast<size_t>(a)].q * zr;
  }

  // Head-room rows. A pinned branch gets the closing multiplier outright.
  // A quadratic branch splits the same value m across its link rows and cone
  // dual as (w0, w1) duals (-m, m): feasible whenever m <= 0, which is what
  // the presolve sign rule guarantees.
  for (int e = 0; e < s.n_branch; ++e) {
    const int var = ll.v_chk[static_cast<size_t>(e)];
    const int pin = ll.row_vchk_pin[static_cast<size_t>(e)];
    if (pin >= 0) {
      ws.y[static_cast<size_t>(pin)] = closing_multiplier(p, ws.y, var, pin);
      continue;
    }
    const double m = closing_multiplier(p, ws.y, var, -1);
    ws.y[static_cast<size_t>(ll.row_w1[static_cast<size_t>(e)])] = m;
    ws.y[static_cast<size_t>(ll.row_w0[static_cast<size_t>(e)])] = -m;
    auto& zc = ws.cone_duals[static_cast<size_t>(ll.cone_v[static_cast<size_t>(e)])];
    zc[0] = -m;
    zc[1] = m;
  }

  // Cosine rows, same pattern: pin value m maps to (f0, f2) duals
  // (m/2, -m/2), feasible whenever m >= 0.
  for (int pr = 0; pr < s.n_pair; ++pr) {
    const int var = ll.cos_hat[static_cast<size_t>(pr)];
    const int pin = ll.row_cos_pin[static_cast<size_t>(pr)];
    if (pin >= 0) {
      ws.y[static_cast<size_t>(pin)] = closing_multiplier(p, ws.y, var, pin);
      continue;
    }
    const double m = closing_multiplier(p, ws.y, var, -1);
    ws.y[static_cast<size_t>(ll.row_f0[static_cast<size_t>(pr)])] = 0.5 * m;
    ws.y[static_cast<size_t>(ll.row_f2[static_cast<size_t>(pr)])] = -0.5 * m;
    auto& zc = ws.cone_duals[static_cast<size_t>(ll.cone_c[static_cast<size_t>(pr)])];
    zc[0] = 0.5 * m;
    zc[2] = -0.5 * m;
  }

  // Limit cones: dual scaled off the exact rating multiplier. The head dual
  // dominates the tail because the exact flow respects the rating.
  for (int a = 0; a < 2 * s.n_branch; ++a) {
    if (ll.u[static_cast<size_t>(a)] < 0) continue;
    const double zr = opf.mu_rating[a];
    const double smax = c.branches[static_cast<size_t>(s.tuple(a).e)].s_max;
    ws.y[static_cast<size_t>(ll.row_u[static_cast<size_t>(a)])] =
        2.0 * smax * zr;
    auto& zc = ws.cone_duals[static_cast<size_t>(ll.cone_s[static_cast<size_t>(a)])];
    zc[0] = 2.0 * smax * zr;
    zc[1] = -2.0 * opf.flows[static_cast<size_t>(a)].p * zr;
    zc[2] = -2.0 * opf.flows[static_cast<size_t>(a)].q * zr;
  }

  // Reference row closes the reference angle's stationarity.
  ws.y[static_cast<size_t>(ll.row_ref)] = closing_multiplier(
      p, ws.y, ll.th[static_cast<size_t>(s.ref_bus)], ll.row_ref);

  // Box multipliers carried over one to one.
  for (int i = 0; i < s.n_bus; ++i) {
    ws.mu_lower[static_cast<size_t>(ll.vd[static_cast<size_t>(i)])] =
        opf.mu_v_lo[i];
    ws.mu_upper[static_cast<size_t>(ll.vd[static_cast<size_t>(i)])] =
        opf.mu_v_hi[i];
  }
  for (int k = 0; k < s.n_gen; ++k) {
    ws.mu_lower[static_cast<size_t>(ll.pg[static_cast<size_t>(k)])] =
        opf.mu_pg_lo[k];
    ws.mu_upper[static_cast<size_t>(ll.pg[static_cast<size_t>(k)])] =
        opf.mu_pg_hi[k];
    ws.mu_lower[static_cast<size_t>(ll.qg[static_cast<size_t>(k)])] =
        opf.mu_qg_lo[k];
    ws.mu_upper[static_cast<size_t>(ll.qg[static_cast<size_t>(k)])] =
        opf.mu_qg_hi[k];
  }
  return ws;
}

PeriodPresolve presolve_period(const NetworkCase& c, const IndexSets& s,
                               const cps::OperatingCoeffs& oc,
                               const pf::OpfResult& opf, int t, double p_es,
                               double q_es, const PresolveOptions& opts) {
  cps::FlagSlice pinned = cps::all_linear_flags(s);
  const std::vector<bool> phi =
      pf::select_phi_flags(c, s, opf.flows, opts.phi_threshold);
  for (int a = 0; a < 2 * s.n_branch; ++a)
    pinned.limit_on[static_cast<size_t>(a)] = phi[static_cast<size_t>(a)] ? 1 : 0;

  const cps::LlPrimal ll = cps::build_ll_primal(c, s, oc, pinned, t, p_es, q_es);
  const conic::WarmStart ws = transfer_warm_start(c, s, oc, ll, opf);

  PeriodPresolve out;
  out.flags = pinned;
  out.voltage_marginal.resize(s.n_branch);
  out.cosine_marginal.resize(s.n_pair);
  for (int e = 0; e < s.n_branch; ++e)
    out.voltage_marginal[e] =
        -ws.y[static_cast<size_t>(ll.row_vchk_pin[static_cast<size_t>(e)])];
  for (int pr = 0; pr < s.n_pair; ++pr)
    out.cosine_marginal[pr] =
        -ws.y[static_cast<size_t>(ll.row_cos_pin[static_cast<size_t>(pr)])];

  for (int e = 0; e < s.n_branch; ++e) {
    if (!(out.voltage_marginal[e] > opts.marginal_tol)) continue;
    if (oc.factors[static_cast<size_t>(e)].defined)
      out.flags.quad_voltage[static_cast<size_t>(e)] = 1;
    else
      out.forced_linear.push_back(e);
  }
  for (int pr = 0; pr < s.n_pair; ++pr)
    if (out.cosine_marginal[pr] < -opts.marginal_tol)
      out.flags.quad_cosine[static_cast<size_t>(pr)] = 1;
  return out;
}

}  // namespace gridarb::psv

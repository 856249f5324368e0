#include "gridarb/pfexact.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace gridarb::pf {

namespace {

using net::IndexSets;
using net::NetworkCase;

// Sending-end flow of one tuple address with derivatives in the local order
// (vi, vj, thi, thj). With A the self conductance term, C the self susceptance
// term, d the shifted angle difference, B = g cos d + b sin d and
// D = b cos d - g sin d:
//   p = A vi^2 - (vi vj / tau) B(d)
//   q = -C vi^2 + (vi vj / tau) D(d)
struct FlowEval {
  double p = 0.0;
  double q = 0.0;
  Eigen::Vector4d dp = Eigen::Vector4d::Zero();
  Eigen::Vector4d dq = Eigen::Vector4d::Zero();
  Eigen::Matrix4d hp = Eigen::Matrix4d::Zero();
  Eigen::Matrix4d hq = Eigen::Matrix4d::Zero();
};

FlowEval eval_flow(const net::Branch& br, bool forward, double vi, double vj,
                   double thi, double thj, bool second_order) {
  const double inv_tau = 1.0 / br.tau;
  const double A = forward ? (br.g + br.g_fr) * inv_tau * inv_tau : br.g + br.g_to;
  const double C = forward ? (br.b + br.b_fr) * inv_tau * inv_tau : br.b + br.b_to;
  const double d = thi - thj + (forward ? -br.sigma : br.sigma);
  const double cd = std::cos(d);
  const double sd = std::sin(d);
  const double B = br.g * cd + br.b * sd;
  const double Bp = -br.g * sd + br.b * cd;
  const double D = br.b * cd - br.g * sd;
  const double Dp = -br.b * sd - br.g * cd;
  const double m = vi * vj * inv_tau;

  FlowEval f;
  f.p = A * vi * vi - m * B;
  f.q = -C * vi * vi + m * D;

  f.dp << 2.0 * A * vi - vj * B * inv_tau, -vi * B * inv_tau, -m * Bp, m * Bp;
  f.dq << -2.0 * C * vi + vj * D * inv_tau, vi * D * inv_tau, m * Dp, -m * Dp;

  if (second_order) {
    f.hp(0, 0) = 2.0 * A;
    f.hp(0, 1) = f.hp(1, 0) = -B * inv_tau;
    f.hp(0, 2) = f.hp(2, 0) = -vj * Bp * inv_tau;
    f.hp(0, 3) = f.hp(3, 0) = vj * Bp * inv_tau;
    f.hp(1, 2) = f.hp(2, 1) = -vi * Bp * inv_tau;
    f.hp(1, 3) = f.hp(3, 1) = vi * Bp * inv_tau;
    f.hp(2, 2) = f.hp(3, 3) = m * B;
    f.hp(2, 3) = f.hp(3, 2) = -m * B;

    f.hq(0, 0) = -2.0 * C;
    f.hq(0, 1) = f.hq(1, 0) = D * inv_tau;
    f.hq(0, 2) = f.hq(2, 0) = vj * Dp * inv_tau;
    f.hq(0, 3) = f.hq(3, 0) = -vj * Dp * inv_tau;
    f.hq(1, 2) = f.hq(2, 1) = vi * Dp * inv_tau;
    f.hq(1, 3) = f.hq(3, 1) = -vi * Dp * inv_tau;
    f.hq(2, 2) = f.hq(3, 3) = -m * D;
    f.hq(2, 3) = f.hq(3, 2) = m * D;
  }
  return f;
}

}  // namespace

double BranchFlow::apparent() const { return std::hypot(p, q); }

Eigen::MatrixXcd build_admittance_matrix(const NetworkCase& c,
                                         const IndexSets& s) {
  using cx = std::complex<double>;
  Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(s.n_bus, s.n_bus);
  for (int e = 0; e < s.n_branch; ++e) {
    const net::Branch& br = c.branches[static_cast<size_t>(e)];
    const int i = s.bus_index.at(br.from_bus);
    const int j = s.bus_index.at(br.to_bus);
    const cx ys(br.g, br.b);
    const cx shift = std::polar(1.0, br.sigma);
    y(i, i) += (ys + cx(br.g_fr, br.b_fr)) / (br.tau * br.tau);
    y(j, j) += ys + cx(br.g_to, br.b_to);
    y(i, j) += -ys * shift / br.tau;
    y(j, i) += -ys * std::conj(shift) / br.tau;
  }
  for (const net::Shunt& sh : c.shunts) {
    const int i = s.bus_index.at(sh.bus);
    y(i, i) += cx(sh.g_sh, sh.b_sh);
  }
  return y;
}

BranchFlow branch_flow(const NetworkCase& c, const IndexSets& s, int a,
                       const Eigen::VectorXd& v, const Eigen::VectorXd& theta) {
  const net::FlowTuple& tp = s.tuple(a);
  const bool forward = a < s.n_branch;
  const FlowEval f =
      eval_flow(c.branches[static_cast<size_t>(tp.e)], forward, v[tp.i], v[tp.j],
                theta[tp.i], theta[tp.j], false);
  return BranchFlow{f.p, f.q};
}

std::vector<BranchFlow> all_branch_flows(const NetworkCase& c,
                                         const IndexSets& s,
                                         const Eigen::VectorXd& v,
                                         const Eigen::VectorXd& theta) {
  std::vector<BranchFlow> out(static_cast<size_t>(2 * s.n_branch));
  for (int a = 0; a < 2 * s.n_branch; ++a)
    out[static_cast<size_t>(a)] = branch_flow(c, s, a, v, theta);
  return out;
}

PowerFlowResult solve_power_flow(const Eigen::MatrixXcd& ybus,
                                 const PowerFlowSpec& spec,
                                 const PowerFlowOptions& opts) {
  const int n = static_cast<int>(ybus.rows());
  const Eigen::MatrixXd G = ybus.real();
  const Eigen::MatrixXd B = ybus.imag();

  PowerFlowResult res;
  res.v = Eigen::VectorXd::Ones(n);
  res.theta = Eigen::VectorXd::Constant(n, spec.theta_ref);
  for (int i = 0; i < n; ++i)
    if (spec.kind[static_cast<size_t>(i)] != BusKind::pq) res.v[i] = spec.v_set[i];

  std::vector<int> ang, mag;
  for (int i = 0; i < n; ++i) {
    if (spec.kind[static_cast<size_t>(i)] != BusKind::slack) ang.push_back(i);
    if (spec.kind[static_cast<size_t>(i)] == BusKind::pq) mag.push_back(i);
  }
  const int na = static_cast<int>(ang.size());
  const int nm = static_cast<int>(mag.size());
  const int nr = na + nm;

  Eigen::VectorXd pcalc(n), qcalc(n);
  auto evaluate = [&](Eigen::VectorXd& r) {
    for (int i = 0; i < n; ++i) {
      double pi = 0.0, qi = 0.0;
      for (int j = 0; j < n; ++j) {
        const double th = res.theta[i] - res.theta[j];
        const double ct = std::cos(th), st = std::sin(th);
        pi += res.v[j] * (G(i, j) * ct + B(i, j) * st);
        qi += res.v[j] * (G(i, j) * st - B(i, j) * ct);
      }
      pcalc[i] = res.v[i] * pi;
      qcalc[i] = res.v[i] * qi;
    }
    for (int k = 0; k < na; ++k) r[k] = spec.p_set[ang[static_cast<size_t>(k)]] -
                                        pcalc[ang[static_cast<size_t>(k)]];
    for (int k = 0; k < nm; ++k)
      r[na + k] = spec.q_set[mag[static_cast<size_t>(k)]] -
                  qcalc[mag[static_cast<size_t>(k)]];
  };

  Eigen::VectorXd r(nr);
  for (int it = 0;; ++it) {
    evaluate(r);
    res.max_mismatch = nr > 0 ? r.lpNorm<Eigen::Infinity>() : 0.0;
    res.mismatch_history.push_back(res.max_mismatch);
    if (res.max_mismatch <= opts.tol) {
      res.converged = true;
      res.iterations = it;
      return res;
    }
    if (it >= opts.max_iter) {
      res.iterations = it;
      return res;
    }

    Eigen::MatrixXd jac(nr, nr);
    for (int r0 = 0; r0 < na; ++r0) {
      const int i = ang[static_cast<size_t>(r0)];
      for (int c0 = 0; c0 < na; ++c0) {
        const int j = ang[static_cast<size_t>(c0)];
        if (i == j)
          jac(r0, c0) = -qcalc[i] - B(i, i) * res.v[i] * res.v[i];
        else {
          const double th = res.theta[i] - res.theta[j];
          jac(r0, c0) = res.v[i] * res.v[j] *
                        (G(i, j) * std::sin(th) - B(i, j) * std::cos(th));
        }
      }
      for (int c0 = 0; c0 < nm; ++c0) {
        const int j = mag[static_cast<size_t>(c0)];
        if (i == j)
          jac(r0, na + c0) = pcalc[i] / res.v[i] + G(i, i) * res.v[i];
        else {
          const double th = res.theta[i] - res.theta[j];
          jac(r0, na + c0) =
              res.v[i] * (G(i, j) * std::cos(th) + B(i, j) * std::sin(th));
        }
      }
    }
    for (int r0 = 0; r0 < nm; ++r0) {
      const int i = mag[static_cast<size_t>(r0)];
      for (int c0 = 0; c0 < na; ++c0) {
        const int j = ang[static_cast<size_t>(c0)];
        if (i == j)
          jac(na + r0, c0) = pcalc[i] - G(i, i) * res.v[i] * res.v[i];
        else {
          const double th = res.theta[i] - res.theta[j];
          jac(na + r0, c0) = -res.v[i] * res.v[j] *
                             (G(i, j) * std::cos(th) + B(i, j) * std::sin(th));
        }
      }
      for (int c0 = 0; c0 < nm; ++c0) {
        const int j = mag[static_cast<size_t>(c0)];
        if (i == j)
          jac(na + r0, na + c0) = qcalc[i] / res.v[i] - B(i, i) * res.v[i];
        else {
          const double th = res.theta[i] - res.theta[j];
          jac(na + r0, na + c0) =
              res.v[i] * (G(i, j) * std::sin(th) - B(i, j) * std::cos(th));
        }
      }
    }

    const Eigen::VectorXd dx = jac.partialPivLu().solve(r);
    if (!dx.allFinite()) {
      res.iterations = it;
      return res;
    }
    for (int k = 0; k < na; ++k) res.theta[ang[static_cast<size_t>(k)]] += dx[k];
    for (int k = 0; k < nm; ++k) res.v[mag[static_cast<size_t>(k)]] += dx[na + k];
  }
}

void balance_residual(const NetworkCase& c, const IndexSets& s, int t,
                      const Eigen::VectorXd& v, const Eigen::VectorXd& theta,
                      const Eigen::VectorXd& pg, const Eigen::VectorXd& qg,
                      double p_es, double q_es, Eigen::VectorXd& rp,
                      Eigen::VectorXd& rq) {
  rp = Eigen::VectorXd::Zero(s.n_bus);
  rq = Eigen::VectorXd::Zero(s.n_bus);
  for (int i = 0; i < s.n_bus; ++i) {
    for (int k : s.gens_at[static_cast<size_t>(i)]) {
      rp[i] += pg[k];
      rq[i] += qg[k];
    }
    for (int l : s.loads_at[static_cast<size_t>(i)]) {
      rp[i] -= c.loads[static_cast<size_t>(l)].p_d[static_cast<size_t>(t)];
      rq[i] -= c.loads[static_cast<size_t>(l)].q_d[static_cast<size_t>(t)];
    }
    for (int sh : s.shunts_at[static_cast<size_t>(i)]) {
      rp[i] -= v[i] * v[i] * c.shunts[static_cast<size_t>(sh)].g_sh;
      rq[i] += v[i] * v[i] * c.shunts[static_cast<size_t>(sh)].b_sh;
    }
    for (int a : s.tuples_at[static_cast<size_t>(i)]) {
      const BranchFlow f = branch_flow(c, s, a, v, theta);
      rp[i] -= f.p;
      rq[i] -= f.q;
    }
  }
  if (s.storage_bus >= 0) {
    rp[s.storage_bus] -= p_es;
    rq[s.storage_bus] -= q_es;
  }
}

namespace {

// Interior-point state for one economic dispatch. Unknowns are stacked as
// [theta without the reference bus; v; pg; qg]; equality rows as
// [active balance per bus; reactive balance per bus].
struct OpfWork {
  const NetworkCase& c;
  const IndexSets& s;
  int t;
  double p_es, q_es;

  int nb, ng, nx, nc;
  std::vector<int> th_pos;  // -1 at the reference bus
  int v_off, pg_off, qg_off;

  Eigen::VectorXd pd, qd;       // per bus, period t, storage folded in
  Eigen::VectorXd gsh, bsh;     // per bus
  std::vector<char> rating_on;  // per tuple address

  OpfWork(const NetworkCase& cc, const IndexSets& ss, int tt, double pe,
          double qe)
      : c(cc), s(ss), t(tt), p_es(pe), q_es(qe) {
    nb = s.n_bus;
    ng = s.n_gen;
    th_pos.assign(static_cast<size_t>(nb), -1);
    int pos = 0;
    for (int i = 0; i < nb; ++i)
      if (i != s.ref_bus) th_pos[static_cast<size_t>(i)] = pos++;
    v_off = nb - 1;
    pg_off = v_off + nb;
    qg_off = pg_off + ng;
    nx = qg_off + ng;
    nc = 2 * nb;

    pd = Eigen::VectorXd::Zero(nb);
    qd = Eigen::VectorXd::Zero(nb);
    for (const net::Load& l : c.loads) {
      const int i = s.bus_index.at(l.bus);
      pd[i] += l.p_d[static_cast<size_t>(t)];
      qd[i] += l.q_d[static_cast<size_t>(t)];
    }
    if (s.storage_bus >= 0) {
      pd[s.storage_bus] += p_es;
      qd[s.storage_bus] += q_es;
    }
    gsh = Eigen::VectorXd::Zero(nb);
    bsh = Eigen::VectorXd::Zero(nb);
    for (const net::Shunt& sh : c.shunts) {
      gsh[s.bus_index.at(sh.bus)] += sh.g_sh;
      bsh[s.bus_index.at(sh.bus)] += sh.b_sh;
    }
    rating_on.assign(static_cast<size_t>(2 * s.n_branch), 0);
    for (int a = 0; a < 2 * s.n_branch; ++a)
      if (c.branches[static_cast<size_t>(s.tuple(a).e)].s_max > 0.0)
        rating_on[static_cast<size_t>(a)] = 1;
  }

  void unpack(const Eigen::VectorXd& x, Eigen::VectorXd& v,
              Eigen::VectorXd& th) const {
    v = x.segment(v_off, nb);
    th = Eigen::VectorXd::Zero(nb);
    for (int i = 0; i < nb; ++i)
      if (th_pos[static_cast<size_t>(i)] >= 0)
        th[i] = x[th_pos[static_cast<size_t>(i)]];
  }

  void scatter_grad(int i, int j, const Eigen::Vector4d& gl,
                    Eigen::VectorXd& row, double w) const {
    row[v_off + i] += w * gl[0];
    row[v_off + j] += w * gl[1];
    const int ti = th_pos[static_cast<size_t>(i)];
    const int tj = th_pos[static_cast<size_t>(j)];
    if (ti >= 0) row[ti] += w * gl[2];
    if (tj >= 0) row[tj] += w * gl[3];
  }

  void scatter_hess(int i, int j, const Eigen::Matrix4d& hl, Eigen::MatrixXd& h,
                    double w) const {
    const int gl[4] = {v_off + i, v_off + j, th_pos[static_cast<size_t>(i)],
                       th_pos[static_cast<size_t>(j)]};
    for (int r = 0; r < 4; ++r) {
      if (gl[r] < 0) continue;
      for (int cc = 0; cc < 4; ++cc) {
        if (gl[cc] < 0) continue;
        h(gl[r], gl[cc]) += w * hl(r, cc);
      }
    }
  }
};

// One inequality g(x) >= 0. Kinds: variable above a lower bound, variable
// below an upper bound, rating head-room at a tuple address.
struct Ineq {
  enum Kind { above, below, rating } kind;
  int idx = -1;   // variable, for above/below
  int addr = -1;  // tuple address, for rating
  double bound = 0.0;
};

}  // namespace

Schedule zero_schedule(const NetworkCase& c) {
  Schedule s;
  s.p_es = Eigen::VectorXd::Zero(c.horizon);
  s.q_es = Eigen::VectorXd::Zero(c.horizon);
  return s;
}

OpfResult solve_exact_opf(const NetworkCase& c, const IndexSets& s, int t,
                          double p_es, double q_es, const OpfOptions& opts,
                          const OpfWarmStart* warm) {
  OpfWork w(c, s, t, p_es, q_es);
  OpfResult res;

  struct Box {
    int idx;
    double lo, hi;
  };
  std::vector<Box> boxes;
  for (int i = 0; i < w.nb; ++i)
    boxes.push_back({w.v_off + i, c.buses[static_cast<size_t>(i)].v_min,
                     c.buses[static_cast<size_t>(i)].v_max});
  for (int k = 0; k < w.ng; ++k) {
    const net::Generator& g = c.generators[static_cast<size_t>(k)];
    boxes.push_back({w.pg_off + k, g.p_min, g.p_max});
    boxes.push_back({w.qg_off + k, g.q_min, g.q_max});
  }

  auto interior = [&](Eigen::VectorXd& x, double margin) {
    for (const Box& bt : boxes) {
      const double span = bt.hi - bt.lo;
      const double lo = bt.lo + margin * span;
      const double hi = bt.hi - margin * span;
      x[bt.idx] = std::min(std::max(x[bt.idx], lo), std::max(lo, hi));
    }
  };

  Eigen::VectorXd x = Eigen::VectorXd::Zero(w.nx);
  if (warm != nullptr) {
    for (int i = 0; i < w.nb; ++i)
      if (w.th_pos[static_cast<size_t>(i)] >= 0)
        x[w.th_pos[static_cast<size_t>(i)]] = warm->theta[i];
    x.segment(w.v_off, w.nb) = warm->v;
    x.segment(w.pg_off, w.ng) = warm->pg;
    x.segment(w.qg_off, w.ng) = warm->qg;
    interior(x, 1e-3);
  } else {
    for (int i = 0; i < w.nb; ++i) {
      const net::Bus& b = c.buses[static_cast<size_t>(i)];
      x[w.v_off + i] =
          (b.v_min < 1.0 && 1.0 < b.v_max) ? 1.0 : 0.5 * (b.v_min + b.v_max);
    }
    for (int k = 0; k < w.ng; ++k) {
      const net::Generator& g = c.generators[static_cast<size_t>(k)];
      x[w.pg_off + k] = 0.5 * (g.p_min + g.p_max);
      x[w.qg_off + k] = 0.5 * (g.q_min + g.q_max);
    }
  }

  // Ratings already violated at the start point get no barrier.
  {
    Eigen::VectorXd v, th;
    w.unpack(x, v, th);
    for (int a = 0; a < 2 * s.n_branch; ++a) {
      if (!w.rating_on[static_cast<size_t>(a)]) continue;
      const BranchFlow f = branch_flow(c, s, a, v, th);
      const double smax = c.branches[static_cast<size_t>(s.tuple(a).e)].s_max;
      if (smax * smax - f.p * f.p - f.q * f.q <= 1e-8) {
        w.rating_on[static_cast<size_t>(a)] = 0;
        res.relaxed_ratings.push_back(a);
      }
    }
  }

  std::vector<Ineq> ineqs;
  for (const Box& bt : boxes) {
    ineqs.push_back({Ineq::above, bt.idx, -1, bt.lo});
    ineqs.push_back({Ineq::below, bt.idx, -1, bt.hi});
  }
  for (int a = 0; a < 2 * s.n_branch; ++a)
    if (w.rating_on[static_cast<size_t>(a)]) {
      const double smax = c.branches[static_cast<size_t>(s.tuple(a).e)].s_max;
      ineqs.push_back({Ineq::rating, -1, a, smax * smax});
    }
  const int ni = static_cast<int>(ineqs.size());

  double mu = opts.mu_init;
  Eigen::VectorXd y = Eigen::VectorXd::Zero(w.nc);
  Eigen::VectorXd z = Eigen::VectorXd::Zero(ni);
  Eigen::VectorXd slack = Eigen::VectorXd::Zero(ni);
  std::vector<Eigen::VectorXd> igrad(static_cast<size_t>(ni));
  double rho = 0.0;
  double nu_pen = 10.0;
  const double c_tol = 1e-10;

  Eigen::VectorXd v, th, cres(w.nc), gphi(w.nx), gf(w.nx);
  Eigen::MatrixXd jac(w.nc, w.nx), hess(w.nx, w.nx);
  double phi = 0.0;

  // Residuals, barrier value/gradient, Jacobian, and the primal-dual Hessian
  // at (xx, yy, zz). Returns false when any inequality slack is non-positive.
  auto evaluate = [&](const Eigen::VectorXd& xx, const Eigen::VectorXd& yy,
                      const Eigen::VectorXd& zz, bool with_matrices) -> bool {
    w.unpack(xx, v, th);
    for (const Ineq& q : ineqs) {
      double sl = 0.0;
      if (q.kind == Ineq::above) sl = xx[q.idx] - q.bound;
      if (q.kind == Ineq::below) sl = q.bound - xx[q.idx];
      if (q.kind != Ineq::rating && sl <= 0.0) return false;
    }
    cres.setZero();
    phi = 0.0;
    gphi.setZero();
    gf.setZero();
    if (with_matrices) {
      jac.setZero();
      hess.setZero();
    }

    for (int k = 0; k < w.ng; ++k) {
      const net::Generator& g = c.generators[static_cast<size_t>(k)];
      const double pg = xx[w.pg_off + k];
      phi += g.c2 * pg * pg + g.c1 * pg + g.c0;
      gf[w.pg_off + k] += 2.0 * g.c2 * pg + g.c1;
      if (with_matrices) hess(w.pg_off + k, w.pg_off + k) += 2.0 * g.c2;
      const int i = s.bus_index.at(g.bus);
      cres[i] += pg;
      cres[w.nb + i] += xx[w.qg_off + k];
      if (with_matrices) {
        jac(i, w.pg_off + k) = 1.0;
        jac(w.nb + i, w.qg_off + k) = 1.0;
      }
    }

    for (int i = 0; i < w.nb; ++i) {
      cres[i] -= w.pd[i] + v[i] * v[i] * w.gsh[i];
      cres[w.nb + i] += -w.qd[i] + v[i] * v[i] * w.bsh[i];
      if (with_matrices) {
        jac(i, w.v_off + i) -= 2.0 * v[i] * w.gsh[i];
        jac(w.nb + i, w.v_off + i) += 2.0 * v[i] * w.bsh[i];
        hess(w.v_off + i, w.v_off + i) +=
            yy[i] * (-2.0 * w.gsh[i]) + yy[w.nb + i] * 2.0 * w.bsh[i];
      }
    }

    std::vector<FlowEval> fcache(static_cast<size_t>(2 * s.n_branch));
    for (int a = 0; a < 2 * s.n_branch; ++a) {
      const net::FlowTuple& tp = s.tuple(a);
      const net::Branch& br = c.branches[static_cast<size_t>(tp.e)];
      const FlowEval f = eval_flow(br, a < s.n_branch, v[tp.i], v[tp.j],
                                   th[tp.i], th[tp.j], true);
      fcache[static_cast<size_t>(a)] = f;
      cres[tp.i] -= f.p;
      cres[w.nb + tp.i] -= f.q;
      if (with_matrices) {
        Eigen::VectorXd row = Eigen::VectorXd::Zero(w.nx);
        w.scatter_grad(tp.i, tp.j, f.dp, row, -1.0);
        jac.row(tp.i) += row.transpose();
        row.setZero();
        w.scatter_grad(tp.i, tp.j, f.dq, row, -1.0);
        jac.row(w.nb + tp.i) += row.transpose();
        w.scatter_hess(tp.i, tp.j, f.hp, hess, -yy[tp.i]);
        w.scatter_hess(tp.i, tp.j, f.hq, hess, -yy[w.nb + tp.i]);
      }
    }

    gphi = gf;
    for (int j = 0; j < ni; ++j) {
      const Ineq& q = ineqs[static_cast<size_t>(j)];
      if (q.kind == Ineq::above) {
        const double sl = xx[q.idx] - q.bound;
        slack[j] = sl;
        phi -= mu * std::log(sl);
        gphi[q.idx] -= mu / sl;
        if (with_matrices) hess(q.idx, q.idx) += zz[j] / sl;
      } else if (q.kind == Ineq::below) {
        const double sl = q.bound - xx[q.idx];
        slack[j] = sl;
        phi -= mu * std::log(sl);
        gphi[q.idx] += mu / sl;
        if (with_matrices) hess(q.idx, q.idx) += zz[j] / sl;
      } else {
        const net::FlowTuple& tp = s.tuple(q.addr);
        const FlowEval& f = fcache[static_cast<size_t>(q.addr)];
        const double sl = q.bound - f.p * f.p - f.q * f.q;
        slack[j] = sl;
        if (sl <= 0.0) return false;
        phi -= mu * std::log(sl);
        Eigen::VectorXd dg = Eigen::VectorXd::Zero(w.nx);
        w.scatter_grad(tp.i, tp.j, f.dp, dg, -2.0 * f.p);
        w.scatter_grad(tp.i, tp.j, f.dq, dg, -2.0 * f.q);
        igrad[static_cast<size_t>(j)] = dg;
        gphi += (-mu / sl) * dg;
        if (with_matrices) {
          hess += (zz[j] / sl) * dg * dg.transpose();
          const Eigen::Matrix4d d2g_neg =
              2.0 * (f.dp * f.dp.transpose() + f.p * f.hp +
                     f.dq * f.dq.transpose() + f.q * f.hq);
          w.scatter_hess(tp.i, tp.j, d2g_neg, hess, zz[j]);
        }
      }
    }
    return true;
  };

  if (!evaluate(x, y, z, false)) {
    interior(x, 1e-2);
    if (!evaluate(x, y, z, false)) return res;
  }
  for (int j = 0; j < ni; ++j) z[j] = std::max(1e-6, mu / slack[j]);
  evaluate(x, y, z, true);

  auto dual_stationarity = [&]() {
    Eigen::VectorXd zg = Eigen::VectorXd::Zero(w.nx);
    for (int j = 0; j < ni; ++j) {
      const Ineq& q = ineqs[static_cast<size_t>(j)];
      if (q.kind == Ineq::above) zg[q.idx] += z[j];
      else if (q.kind == Ineq::below) zg[q.idx] -= z[j];
      else zg += z[j] * igrad[static_cast<size_t>(j)];
    }
    return (gf + jac.transpose() * y - zg).eval();
  };

  int it = 0;
  while (it < opts.max_iter) {
    const Eigen::VectorXd stat = dual_stationarity();
    const double stat_inf = stat.lpNorm<Eigen::Infinity>();
    const double c_inf = cres.lpNorm<Eigen::Infinity>();
    double comp_inf = 0.0;
    for (int j = 0; j < ni; ++j)
      comp_inf = std::max(comp_inf, std::abs(slack[j] * z[j] - mu));
    res.kkt_residual = std::max(stat_inf, c_inf);

    const bool at_final_mu = mu <= opts.mu_min * 1.0001;
    if (at_final_mu && stat_inf <= opts.tol && c_inf <= c_tol) break;
    if (!at_final_mu &&
        std::max(std::max(stat_inf, c_inf), comp_inf) <= 10.0 * mu) {
      mu = std::max(opts.mu_min, mu * opts.mu_shrink);
      evaluate(x, y, z, true);
      continue;
    }

    ++it;
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(w.nx + w.nc, w.nx + w.nc);
    kkt.topLeftCorner(w.nx, w.nx) =
        hess + rho * Eigen::MatrixXd::Identity(w.nx, w.nx);
    kkt.topRightCorner(w.nx, w.nc) = jac.transpose();
    kkt.bottomLeftCorner(w.nc, w.nx) = jac;
    kkt.bottomRightCorner(w.nc, w.nc) =
        -1e-10 * Eigen::MatrixXd::Identity(w.nc, w.nc);
    Eigen::VectorXd rhs(w.nx + w.nc);
    rhs.head(w.nx) = -(gphi + jac.transpose() * y);
    rhs.tail(w.nc) = -cres;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(kkt);
    const Eigen::VectorXd sol = lu.solve(rhs);
    if (!sol.allFinite()) {
      rho = std::max(1e-8, rho * 10.0);
      if (rho > 1e6) break;
      continue;
    }
    const Eigen::VectorXd dx = sol.head(w.nx);
    const Eigen::VectorXd dy = sol.tail(w.nc);

    Eigen::VectorXd gdot(ni), dz(ni);
    for (int j = 0; j < ni; ++j) {
      const Ineq& q = ineqs[static_cast<size_t>(j)];
      if (q.kind == Ineq::above) gdot[j] = dx[q.idx];
      else if (q.kind == Ineq::below) gdot[j] = -dx[q.idx];
      else gdot[j] = igrad[static_cast<size_t>(j)].dot(dx);
      dz[j] = mu / slack[j] - z[j] - (z[j] / slack[j]) * gdot[j];
    }

    nu_pen = std::max(nu_pen, 2.0 * (y + dy).lpNorm<Eigen::Infinity>() + 1.0);
    const double merit0 = phi + nu_pen * cres.lpNorm<1>();
    const double descent = gphi.dot(dx) - nu_pen * cres.lpNorm<1>();
    if (descent >= 0.0 && cres.lpNorm<1>() > 1e-14) {
      rho = std::max(1e-8, rho * 10.0);
      if (rho > 1e6) break;
      continue;
    }

    const double tau_fb = std::max(0.99, 1.0 - 10.0 * mu);
    double alpha = 1.0;
    double alpha_z = 1.0;
    for (int j = 0; j < ni; ++j) {
      if (gdot[j] < 0.0)
        alpha = std::min(alpha, -tau_fb * slack[j] / gdot[j]);
      if (dz[j] < 0.0) alpha_z = std::min(alpha_z, -tau_fb * z[j] / dz[j]);
    }

    bool accepted = false;
    bool tried_correction = false;
    for (int ls = 0; ls < 40; ++ls) {
      const Eigen::VectorXd xt = x + alpha * dx;
      const Eigen::VectorXd yt = y + alpha * dy;
      if (evaluate(xt, yt, z, false)) {
        const double merit = phi + nu_pen * cres.lpNorm<1>();
        if (merit <= merit0 + 1e-4 * alpha * descent) {
          x = xt;
          y = yt;
          accepted = true;
          break;
        }
        // Re-solving for the trial point's constraint violation removes the
        // second-order infeasibility a large step induces.
        if (!tried_correction) {
          tried_correction = true;
          Eigen::VectorXd rhs2 = Eigen::VectorXd::Zero(w.nx + w.nc);
          rhs2.tail(w.nc) = -cres;
          const Eigen::VectorXd corr = lu.solve(rhs2);
          if (corr.allFinite()) {
            const Eigen::VectorXd xt2 = xt + corr.head(w.nx);
            if (evaluate(xt2, yt, z, false)) {
              const double merit2 = phi + nu_pen * cres.lpNorm<1>();
              if (merit2 <= merit0 + 1e-4 * alpha * descent) {
                x = xt2;
                y = yt;
                accepted = true;
                break;
              }
            }
          }
        }
      }
      alpha *= 0.5;
      if (alpha < 1e-12) break;
    }
    if (!accepted) {
      rho = std::max(1e-8, rho * 10.0);
      if (rho > 1e6) break;
      evaluate(x, y, z, true);
      continue;
    }
    z += alpha_z * dz;
    for (int j = 0; j < ni; ++j)
      z[j] = std::min(std::max(z[j], 1e-12), 1e12);
    rho *= 0.5;
    if (rho < 1e-12) rho = 0.0;
    evaluate(x, y, z, true);
    if (opts.verbose)
      std::printf("opf it %d mu %.1e stat %.2e c %.2e alpha %.2e az %.2e\n", it,
                  mu, dual_stationarity().lpNorm<Eigen::Infinity>(),
                  cres.lpNorm<Eigen::Infinity>(), alpha, alpha_z);
  }

  evaluate(x, y, z, true);
  const Eigen::VectorXd stat = dual_stationarity();
  res.iterations = it;
  res.kkt_residual = std::max(stat.lpNorm<Eigen::Infinity>(),
                              cres.lpNorm<Eigen::Infinity>());
  res.max_balance_violation = cres.lpNorm<Eigen::Infinity>();
  res.converged = mu <= opts.mu_min * 1.0001 &&
                  stat.lpNorm<Eigen::Infinity>() <= opts.tol &&
                  res.max_balance_violation <= 1e-8;
  w.unpack(x, res.v, res.theta);
  res.pg = x.segment(w.pg_off, w.ng);
  res.qg = x.segment(w.qg_off, w.ng);
  res.price_p = -y.head(w.nb);
  res.price_q = -y.tail(w.nb);
  res.mu_v_lo = Eigen::VectorXd::Zero(w.nb);
  res.mu_v_hi = Eigen::VectorXd::Zero(w.nb);
  res.mu_pg_lo = Eigen::VectorXd::Zero(w.ng);
  res.mu_pg_hi = Eigen::VectorXd::Zero(w.ng);
  res.mu_qg_lo = Eigen::VectorXd::Zero(w.ng);
  res.mu_qg_hi = Eigen::VectorXd::Zero(w.ng);
  res.mu_rating = Eigen::VectorXd::Zero(2 * s.n_branch);
  for (int j = 0; j < ni; ++j) {
    const Ineq& q = ineqs[static_cast<size_t>(j)];
    if (q.kind == Ineq::rating) {
      res.mu_rating[q.addr] = z[j];
      continue;
    }
    Eigen::VectorXd* lo = nullptr;
    Eigen::VectorXd* hi = nullptr;
    int pos = -1;
    if (q.idx >= w.qg_off) {
      lo = &res.mu_qg_lo, hi = &res.mu_qg_hi, pos = q.idx - w.qg_off;
    } else if (q.idx >= w.pg_off) {
      lo = &res.mu_pg_lo, hi = &res.mu_pg_hi, pos = q.idx - w.pg_off;
    } else {
      lo = &res.mu_v_lo, hi = &res.mu_v_hi, pos = q.idx - w.v_off;
    }
    ((q.kind == Ineq::above) ? *lo : *hi)[pos] = z[j];
  }
  res.cost = 0.0;
  for (int k = 0; k < w.ng; ++k) {
    const net::Generator& g = c.generators[static_cast<size_t>(k)];
    res.cost += g.c2 * res.pg[k] * res.pg[k] + g.c1 * res.pg[k] + g.c0;
  }
  res.flows = all_branch_flows(c, s, res.v, res.theta);
  return res;
}

SeriesResult solve_exact_series(const NetworkCase& c, const IndexSets& s,
                                const Schedule& sched, const OpfOptions& opts) {
  SeriesResult out;
  out.converged = true;
  OpfWarmStart warm;
  bool have_warm = false;
  for (int t = 0; t < c.horizon; ++t) {
    OpfOptions o = opts;
    if (have_warm) o.mu_init = std::min(opts.mu_init, 1e-4);
    OpfResult r = solve_exact_opf(c, s, t, sched.p_es[t], sched.q_es[t], o,
                                  have_warm ? &warm : nullptr);
    if (!r.converged && have_warm)
      r = solve_exact_opf(c, s, t, sched.p_es[t], sched.q_es[t], opts, nullptr);
    if (!r.converged) out.converged = false;
    warm.v = r.v;
    warm.theta = r.theta;
    warm.pg = r.pg;
    warm.qg = r.qg;
    have_warm = true;
    out.total_cost += r.cost;
    out.periods.push_back(std::move(r));
  }
  return out;
}

std::vector<bool> select_phi_flags(const NetworkCase& c, const IndexSets& s,
                                   const std::vector<BranchFlow>& flows,
                                   double threshold) {
  std::vector<bool> on(static_cast<size_t>(2 * s.n_branch), false);
  for (int a = 0; a < 2 * s.n_branch; ++a) {
    const double smax = c.branches[static_cast<size_t>(s.tuple(a).e)].s_max;
    if (smax <= 0.0) continue;
    on[static_cast<size_t>(a)] =
        flows[static_cast<size_t>(a)].apparent() / smax >= threshold;
  }
  return on;
}

}  // namespace gridarb::pf

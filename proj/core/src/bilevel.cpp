#include "gridarb/bilevel.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

namespace gridarb::blv {

namespace {

std::vector<double> spread_grid(double half_width, int points) {
  if (points <= 1 || half_width <= 0.0) return {0.0};
  std::vector<double> out;
  out.reserve(static_cast<size_t>(points) + 1);
  const double step = 2.0 * half_width / (points - 1);
  for (int i = 0; i < points; ++i) {
    double v = -half_width + i * step;
    if (std::abs(v) < 1e-12 * half_width) v = 0.0;
    out.push_back(v);
  }
  if (std::find(out.begin(), out.end(), 0.0) == out.end()) {
    out.push_back(0.0);
    std::sort(out.begin(), out.end());
  }
  return out;
}

conic::WarmStart warm_from(const conic::SolveResult& r) {
  conic::WarmStart w;
  w.x = r.x;
  w.y = r.y;
  w.mu_lower = r.mu_lower;
  w.mu_upper = r.mu_upper;
  w.cone_duals = r.cone_duals;
  return w;
}

struct PeriodState {
  conic::SolveResult sol;
  double lam1 = 0.0;
  double lam2 = 0.0;
  double contrib = 0.0;
  double cost = 0.0;
};

}  // namespace

double smoothed_complementarity(double x, double y, double eps) {
  return x + y - std::sqrt(x * x + y * y + 2.0 * eps * eps);
}

Eigen::Vector2d smoothed_complementarity_gradient(double x, double y,
                                                  double eps) {
  const double r = std::sqrt(x * x + y * y + 2.0 * eps * eps);
  return {1.0 - x / r, 1.0 - y / r};
}

StorageSchedule expand_schedule(const pf::Schedule& sched,
                                const net::StorageUnit& unit) {
  const Eigen::Index T = sched.p_es.size();
  if (sched.q_es.size() != T)
    throw std::invalid_argument("schedule series lengths differ");
  StorageSchedule out;
  out.p_es = sched.p_es;
  out.q_es = sched.q_es;
  out.p_ch = sched.p_es.cwiseMax(0.0);
  out.p_dis = (-sched.p_es).cwiseMax(0.0);
  out.soe = Eigen::VectorXd::Zero(T);
  double level = unit.soe_init;
  for (Eigen::Index t = 0; t < T; ++t) {
    level += out.p_ch[t] * unit.eta_ch - out.p_dis[t] / unit.eta_dis;
    out.soe[t] = level;
  }
  return out;
}

std::vector<std::string> storage_feasible(const StorageSchedule& sched,
                                          const net::StorageUnit& unit,
                                          double tol) {
  std::vector<std::string> out;
  const Eigen::Index T = sched.p_es.size();
  if (sched.q_es.size() != T || sched.p_ch.size() != T ||
      sched.p_dis.size() != T || sched.soe.size() != T) {
    out.push_back("schedule series lengths differ");
    return out;
  }
  if (!sched.x_p.empty() && static_cast<Eigen::Index>(sched.x_p.size()) != T) {
    out.push_back("x_p length differs from the horizon");
    return out;
  }
  auto tag = [](Eigen::Index t) { return "t=" + std::to_string(t) + ": "; };
  double level = unit.soe_init;
  for (Eigen::Index t = 0; t < T; ++t) {
    if (sched.p_ch[t] < -tol)
      out.push_back(tag(t) + "negative charge rate " +
                    std::to_string(sched.p_ch[t]));
    if (sched.p_dis[t] < -tol)
      out.push_back(tag(t) + "negative discharge rate " +
                    std::to_string(sched.p_dis[t]));
    if (std::abs(sched.p_es[t] - (sched.p_ch[t] - sched.p_dis[t])) > tol)
      out.push_back(tag(t) + "net draw off its charge/discharge split");
    level += sched.p_ch[t] * unit.eta_ch - sched.p_dis[t] / unit.eta_dis;
    if (std::abs(sched.soe[t] - level) > tol)
      out.push_back(tag(t) + "state of energy off the balance recursion by " +
                    std::to_string(sched.soe[t] - level));
    level = sched.soe[t];
    if (sched.soe[t] < -tol)
      out.push_back(tag(t) + "state of energy " + std::to_string(sched.soe[t]) +
                    " below empty");
    if (sched.soe[t] > unit.soe_max + tol)
      out.push_back(tag(t) + "state of energy " + std::to_string(sched.soe[t]) +
                    " above capacity " + std::to_string(unit.soe_max));
    if (std::hypot(sched.p_es[t], sched.q_es[t]) > unit.s_max + tol)
      out.push_back(tag(t) + "apparent draw exceeds the rating " +
                    std::to_string(unit.s_max));
    if (!sched.x_p.empty()) {
      const char x = sched.x_p[static_cast<size_t>(t)];
      if (x != 0 && x != 1) {
        out.push_back(tag(t) + "x_p is not binary");
        continue;
      }
      if (sched.p_ch[t] > unit.s_max * x + tol)
        out.push_back(tag(t) + "charging while x_p marks discharge");
      if (sched.p_dis[t] > unit.s_max * (1 - x) + tol)
        out.push_back(tag(t) + "discharging while x_p marks charge");
    }
  }
  return out;
}

double evaluate_profit(const pf::Schedule& sched, const Eigen::VectorXd& lam1,
                       const Eigen::VectorXd& lam2,
                       const ProfitOptions& opts) {
  const Eigen::Index T = sched.p_es.size();
  if (sched.q_es.size() != T || lam1.size() != T || lam2.size() != T)
    throw std::invalid_argument("profit series lengths differ");
  const double sign = opts.literal_prices ? -1.0 : 1.0;
  double profit = 0.0;
  for (Eigen::Index t = 0; t < T; ++t)
    profit += sign * (sched.p_es[t] * lam1[t] + sched.q_es[t] * lam2[t]);
  return profit;
}

std::vector<double> candidate_grid(double s_max, int points) {
  return spread_grid(s_max, points);
}

std::vector<double> reactive_grid(double s_max, int points) {
  return spread_grid(s_max / std::sqrt(2.0), points);
}

SearchResult discretized_search(const net::NetworkCase& c,
                                const net::IndexSets& s,
                                const std::vector<cps::OperatingCoeffs>& coeffs,
                                const std::vector<cps::FlagSlice>& flags,
                                const pf::Schedule& initial,
                                const std::vector<conic::WarmStart>& starts,
                                const SearchOptions& opts) {
  if (!c.storage) throw std::invalid_argument("case has no storage unit");
  const int T = c.horizon;
  if (static_cast<int>(coeffs.size()) != T ||
      static_cast<int>(flags.size()) != T)
    throw std::invalid_argument("per-period inputs do not cover the horizon");
  if (initial.p_es.size() != T || initial.q_es.size() != T)
    throw std::invalid_argument("initial schedule does not cover the horizon");
  if (!starts.empty() && static_cast<int>(starts.size()) != T)
    throw std::invalid_argument("warm starts do not cover the horizon");
  const net::StorageUnit& unit = *c.storage;
  const int beta = s.storage_bus;

  {
    const auto violations =
        storage_feasible(expand_schedule(initial, unit), unit);
    if (!violations.empty())
      throw std::invalid_argument("initial schedule infeasible: " +
                                  violations.front());
  }

  const double sign = opts.profit.literal_prices ? -1.0 : 1.0;

  SearchResult res;
  res.schedule = initial;

  std::vector<PeriodState> periods(static_cast<size_t>(T));
  auto clear_period = [&](int t, double p, double q,
                          const conic::WarmStart* warm, PeriodState& out) {
    const cps::LlPrimal ll = cps::build_ll_primal(
        c, s, coeffs[static_cast<size_t>(t)], flags[static_cast<size_t>(t)],
        t, p, q);
    out.sol = conic::solve_conic(ll.prog, opts.solver, warm);
    if (out.sol.status != conic::SolveStatus::optimal) return false;
    out.lam1 = out.sol.y[static_cast<size_t>(
        ll.row_bal_p[static_cast<size_t>(beta)])];
    out.lam2 = out.sol.y[static_cast<size_t>(
        ll.row_bal_q[static_cast<size_t>(beta)])];
    out.cost = out.sol.objective;
    out.contrib = sign * (p * out.lam1 + q * out.lam2);
    return true;
  };

  for (int t = 0; t < T; ++t) {
    const conic::WarmStart* warm =
        starts.empty() ? nullptr : &starts[static_cast<size_t>(t)];
    if (!clear_period(t, initial.p_es[t], initial.q_es[t], warm,
                      periods[static_cast<size_t>(t)]))
      throw std::runtime_error("period " + std::to_string(t) +
                               " failed to clear at the initial schedule");
  }
  double profit = 0.0;
  for (const PeriodState& ps : periods) profit += ps.contrib;

  const std::vector<double> pgrid = candidate_grid(unit.s_max,
                                                   opts.grid_points);
  const std::vector<double> qgrid = reactive_grid(unit.s_max,
                                                  opts.q_grid_points);

  for (int sweep = 1; sweep <= opts.max_sweeps; ++sweep) {
    bool improved = false;
    for (int t = 0; t < T; ++t) {
      int best_rec = -1;
      double best_profit = profit + opts.profit_tol;
      PeriodState best_state;
      double best_p = 0.0, best_q = 0.0;
      for (const double p : pgrid) {
        for (const double q : qgrid) {
          if (p == res.schedule.p_es[t] && q == res.schedule.q_es[t]) continue;
          CandidateRecord rec;
          rec.sweep = sweep;
          rec.t = t;
          rec.p_es = p;
          rec.q_es = q;
          pf::Schedule cand = res.schedule;
          cand.p_es[t] = p;
          cand.q_es[t] = q;
          rec.feasible =
              storage_feasible(expand_schedule(cand, unit), unit).empty();
          if (rec.feasible) {
            const conic::WarmStart warm =
                warm_from(periods[static_cast<size_t>(t)].sol);
            PeriodState st;
            rec.solved = clear_period(t, p, q, &warm, st);
            if (!rec.solved) {
              ++res.skipped_solves;
            } else {
              rec.profit =
                  profit - periods[static_cast<size_t>(t)].contrib +
                  st.contrib;
              // Strict comparison keeps the lowest-index candidate on ties.
              if (rec.profit > best_profit) {
                best_profit = rec.profit;
                best_rec = static_cast<int>(res.trace.size());
                best_state = std::move(st);
                best_p = p;
                best_q = q;
              }
            }
          }
          res.trace.push_back(rec);
        }
      }
      if (best_rec >= 0) {
        res.trace[static_cast<size_t>(best_rec)].accepted = true;
        res.schedule.p_es[t] = best_p;
        res.schedule.q_es[t] = best_q;
        periods[static_cast<size_t>(t)] = std::move(best_state);
        profit = best_profit;
        improved = true;
      }
    }
    res.sweep_profit.push_back(profit);
    res.sweeps = sweep;
    if (!improved) break;
    if (sweep == opts.max_sweeps) res.hit_sweep_limit = true;
  }

  res.profit = profit;
  res.lam1 = Eigen::VectorXd::Zero(T);
  res.lam2 = Eigen::VectorXd::Zero(T);
  res.ll_cost = Eigen::VectorXd::Zero(T);
  for (int t = 0; t < T; ++t) {
    const PeriodState& ps = periods[static_cast<size_t>(t)];
    res.lam1[t] = ps.lam1;
    res.lam2[t] = ps.lam2;
    res.ll_cost[t] = ps.cost;
  }
  return res;
}

}  // namespace gridarb::blv

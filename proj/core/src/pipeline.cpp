#include "gridarb/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gridarb/lldual.hpp"

namespace gridarb::ppl {
namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
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

// Apparent-power violations beyond this are overloads.
constexpr double kOverloadTol = 1e-9;

// Keeps a branch rating only where the period's clearing imposed it.
net::NetworkCase mask_ratings(const net::NetworkCase& c,
                              const net::IndexSets& s,
                              const cps::FlagSlice& flags) {
  net::NetworkCase m = c;
  for (int e = 0; e < s.n_branch; ++e) {
    const bool imposed = flags.limit_on[static_cast<size_t>(e)] ||
                         flags.limit_on[static_cast<size_t>(e + s.n_branch)];
    if (!imposed) m.branches[static_cast<size_t>(e)].s_max = 0.0;
  }
  return m;
}

struct VerifyDetail {
  VerificationRecord record;
  std::vector<pf::OpfResult> periods;
};

VerifyDetail verify_detail(const net::NetworkCase& c, const net::IndexSets& s,
                           const pf::Schedule& schedule,
                           const std::vector<cps::FlagSlice>& flags,
                           const pf::OpfOptions& opts,
                           const blv::ProfitOptions& profit,
                           const std::vector<pf::OpfWarmStart>* warm) {
  const int T = c.horizon;
  if (schedule.p_es.size() != T || schedule.q_es.size() != T)
    throw std::invalid_argument("schedule length does not match the horizon");
  if (static_cast<int>(flags.size()) != T)
    throw std::invalid_argument("one flag slice per period is required");
  if (warm != nullptr && static_cast<int>(warm->size()) != T)
    throw std::invalid_argument("one warm start per period is required");

  VerifyDetail out;
  VerificationRecord& rec = out.record;
  rec.cost.resize(static_cast<size_t>(T), 0.0);
  rec.price_p.resize(static_cast<size_t>(T));
  rec.price_q.resize(static_cast<size_t>(T));
  rec.flows.resize(static_cast<size_t>(T));
  out.periods.resize(static_cast<size_t>(T));

  for (int t = 0; t < T; ++t) {
    const net::NetworkCase masked =
        mask_ratings(c, s, flags[static_cast<size_t>(t)]);
    pf::OpfOptions o = opts;
    const pf::OpfWarmStart* w =
        warm != nullptr ? &(*warm)[static_cast<size_t>(t)] : nullptr;
    if (w != nullptr) o.mu_init = std::min(opts.mu_init, 1e-4);
    pf::OpfResult r = pf::solve_exact_opf(masked, s, t, schedule.p_es[t],
                                          schedule.q_es[t], o, w);
    if (!r.converged && w != nullptr)
      r = pf::solve_exact_opf(masked, s, t, schedule.p_es[t], schedule.q_es[t],
                              opts, nullptr);
    // A warm start sitting on a rating boundary loses that rating's barrier;
    // if the freed flow ends up past the rating, certify from flat start
    // where every rating is kept.
    if (r.converged && !r.relaxed_ratings.empty()) {
      bool freed_overload = false;
      for (int a : r.relaxed_ratings) {
        const int e = s.tuple(a).e;
        const double rating = masked.branches[static_cast<size_t>(e)].s_max;
        if (rating <= 0.0) continue;
        const double app = std::max(
            r.flows[static_cast<size_t>(e)].apparent(),
            r.flows[static_cast<size_t>(e + s.n_branch)].apparent());
        if (app > rating + kOverloadTol) {
          freed_overload = true;
          break;
        }
      }
      if (freed_overload) {
        pf::OpfResult cold = pf::solve_exact_opf(
            masked, s, t, schedule.p_es[t], schedule.q_es[t], opts, nullptr);
        if (cold.converged) r = std::move(cold);
      }
    }
    if (!r.converged) {
      rec.converged = false;
      rec.failures.push_back("period " + std::to_string(t + 1) +
                             ": dispatch with the schedule fixed did not "
                             "converge");
    }
    rec.cost[static_cast<size_t>(t)] = r.cost;
    rec.total_cost += r.cost;
    rec.price_p[static_cast<size_t>(t)] = r.price_p;
    rec.price_q[static_cast<size_t>(t)] = r.price_q;
    rec.flows[static_cast<size_t>(t)] = r.flows;

    // Overloads are judged against the full ratings, worst direction kept.
    for (int e = 0; e < s.n_branch; ++e) {
      const double rating = c.branches[static_cast<size_t>(e)].s_max;
      if (rating <= 0.0) continue;
      const double app = std::max(
          r.flows[static_cast<size_t>(e)].apparent(),
          r.flows[static_cast<size_t>(e + s.n_branch)].apparent());
      if (app > rating + kOverloadTol)
        rec.overloads.push_back({t, e, app, rating});
    }
    out.periods[static_cast<size_t>(t)] = std::move(r);
  }

  if (s.storage_bus >= 0 && rec.converged) {
    Eigen::VectorXd lam1(T), lam2(T);
    for (int t = 0; t < T; ++t) {
      lam1[t] = -rec.price_p[static_cast<size_t>(t)][s.storage_bus];
      lam2[t] = -rec.price_q[static_cast<size_t>(t)][s.storage_bus];
    }
    rec.profit_exact = blv::evaluate_profit(schedule, lam1, lam2, profit);
  }
  return out;
}

double schedule_change(const pf::Schedule& a, const pf::Schedule& b) {
  const double dp = (a.p_es - b.p_es).cwiseAbs().maxCoeff();
  const double dq = (a.q_es - b.q_es).cwiseAbs().maxCoeff();
  return std::max(dp, dq);
}

}  // namespace

VerificationRecord verify_solution(const net::NetworkCase& c,
                                   const net::IndexSets& s,
                                   const pf::Schedule& schedule,
                                   const std::vector<cps::FlagSlice>& flags,
                                   const pf::OpfOptions& opts,
                                   const blv::ProfitOptions& profit,
                                   const std::vector<pf::OpfWarmStart>* warm) {
  return verify_detail(c, s, schedule, flags, opts, profit, warm).record;
}

RunReport run_pipeline(const net::NetworkCase& c, const PipelineConfig& cfg) {
  const auto run_start = Clock::now();
  net::require_valid(c);
  const net::IndexSets s = net::build_index_sets(c);
  if (cfg.loop_max < 1) throw std::invalid_argument("loop_max must be >= 1");
  if (cfg.max_phi_retries < 0)
    throw std::invalid_argument("max_phi_retries must be >= 0");

  RunReport rep;
  rep.config = cfg;
  rep.case_name = c.name;
  rep.n_bus = s.n_bus;
  rep.n_branch = s.n_branch;
  rep.n_gen = s.n_gen;
  rep.horizon = c.horizon;
  rep.storage_bus_id = c.storage ? c.storage->bus : -1;
  for (const auto& b : c.buses) rep.bus_ids.push_back(b.id);
  for (const auto& br : c.branches) {
    rep.branch_labels.push_back(std::to_string(br.id) + ":" +
                                std::to_string(br.from_bus) + "-" +
                                std::to_string(br.to_bus));
    rep.branch_ratings.push_back(br.s_max);
  }
  for (const auto& pr : s.pairs)
    rep.pair_labels.push_back(
        std::to_string(c.buses[static_cast<size_t>(pr.first)].id) + "-" +
        std::to_string(c.buses[static_cast<size_t>(pr.second)].id));
  for (int a = 0; a < 2 * s.n_branch; ++a)
    rep.address_labels.push_back(
        rep.branch_labels[static_cast<size_t>(a % s.n_branch)] +
        (a < s.n_branch ? ":fwd" : ":rev"));

  const int T = c.horizon;
  const int beta = s.storage_bus;
  pf::Schedule current = pf::zero_schedule(c);
  rep.final_schedule = current;

  std::vector<pf::OpfResult> reuse;
  bool have_reuse = false;

  for (int loop = 1; loop <= cfg.loop_max; ++loop) {
    LoopRecord lr;
    lr.loop = loop;
    lr.schedule_in = current;

    // Exact dispatch at the fixed schedule, full ratings. A clean previous
    // verification solved this very problem: its masked optimum satisfies
    // every dropped rating, so its KKT point carries over unchanged.
    auto t0 = Clock::now();
    std::vector<pf::OpfResult> op_results;
    if (have_reuse) {
      op_results = std::move(reuse);
      have_reuse = false;
      lr.operating_point.reused = true;
      lr.operating_point.converged = true;
    } else {
      pf::SeriesResult series = pf::solve_exact_series(c, s, current, cfg.opf);
      lr.operating_point.converged = series.converged;
      op_results = std::move(series.periods);
    }
    for (const auto& r : op_results) {
      lr.operating_point.cost.push_back(r.cost);
      lr.operating_point.total_cost += r.cost;
      lr.operating_point.iterations += r.iterations;
      lr.operating_point.price_beta_p.push_back(beta >= 0 ? r.price_p[beta]
                                                          : 0.0);
      lr.operating_point.price_beta_q.push_back(beta >= 0 ? r.price_q[beta]
                                                          : 0.0);
    }
    lr.operating_point.time_ms = ms_since(t0);
    if (!lr.operating_point.converged) {
      lr.ok = false;
      lr.failed_stage = "operating_point";
      rep.loops.push_back(std::move(lr));
      break;
    }

    // Expansion coefficients depend only on the operating point, so the
    // limit-threshold retries below reuse them.
    std::vector<cps::OperatingCoeffs> coeffs;
    coeffs.reserve(static_cast<size_t>(T));
    for (int t = 0; t < T; ++t) {
      const auto& r = op_results[static_cast<size_t>(t)];
      coeffs.push_back(
          cps::compute_operating_coeffs(c, s, cps::OperatingPoint{r.v, r.theta}));
    }

    double threshold = cfg.presolve.phi_threshold;
    int retries = 0;
    bool loop_failed = false;
    std::string stage = "flags";
    for (;;) try {
      lr.flags = {};
      lr.clearing = {};
      lr.dual = {};
      lr.search = {};
      lr.verify = {};
      stage = "flags";

      // Flag selection and the dual transfer onto the chosen program.
      t0 = Clock::now();
      psv::PresolveOptions popts = cfg.presolve;
      popts.phi_threshold = threshold;
      std::vector<cps::FlagSlice> slices;
      std::vector<cps::LlPrimal> programs;
      std::vector<conic::WarmStart> starts;
      slices.reserve(static_cast<size_t>(T));
      programs.reserve(static_cast<size_t>(T));
      starts.reserve(static_cast<size_t>(T));
      for (int t = 0; t < T; ++t) {
        const auto& r = op_results[static_cast<size_t>(t)];
        const auto& oc = coeffs[static_cast<size_t>(t)];
        psv::PeriodPresolve pre = psv::presolve_period(
            c, s, oc, r, t, current.p_es[t], current.q_es[t], popts);
        lr.flags.counts.push_back(cps::census(pre.flags));
        lr.flags.forced_linear += static_cast<int>(pre.forced_linear.size());
        programs.push_back(cps::build_ll_primal(c, s, oc, pre.flags, t,
                                                current.p_es[t],
                                                current.q_es[t]));
        starts.push_back(psv::transfer_warm_start(c, s, oc, programs.back(), r));
        slices.push_back(std::move(pre.flags));
      }
      lr.flags.slices = slices;
      lr.flags.time_ms = ms_since(t0);

      // Market clearing per period, warm-started from the transfer.
      stage = "clearing";
      t0 = Clock::now();
      lr.clearing.ok = true;
      std::vector<conic::SolveResult> cleared(static_cast<size_t>(T));
      for (int t = 0; t < T; ++t) {
        const auto& ll = programs[static_cast<size_t>(t)];
        conic::SolveResult r =
            conic::solve_conic(ll.prog, cfg.conic, &starts[static_cast<size_t>(t)]);
        if (r.status != conic::SolveStatus::optimal) lr.clearing.ok = false;
        cps::LlSolution sol = cps::unpack_solution(ll, r);
        lr.clearing.cost.push_back(sol.cost);
        lr.clearing.total_cost += sol.cost;
        lr.clearing.iterations += r.iterations;
        lr.clearing.max_delta_v =
            std::max(lr.clearing.max_delta_v, sol.v_delta.cwiseAbs().maxCoeff());
        lr.clearing.max_delta_th = std::max(
            lr.clearing.max_delta_th, sol.th_delta.cwiseAbs().maxCoeff());
        const cps::ApproxErrors err = cps::flow_approximation_errors(
            c, s, coeffs[static_cast<size_t>(t)].op, sol);
        lr.clearing.max_dp = std::max(lr.clearing.max_dp, err.max_dp);
        lr.clearing.max_dq = std::max(lr.clearing.max_dq, err.max_dq);
        cleared[static_cast<size_t>(t)] = std::move(r);
      }
      lr.clearing.time_ms = ms_since(t0);
      if (!lr.clearing.ok) {
        lr.failed_stage = "clearing";
        loop_failed = true;
        break;
      }

      // Explicit dual per period, started from the clearing multipliers.
      stage = "dual";
      t0 = Clock::now();
      lr.dual.ok = true;
      for (int t = 0; t < T; ++t) {
        const auto& ll = programs[static_cast<size_t>(t)];
        lld::LlDual d =
            lld::build_ll_dual(c, s, coeffs[static_cast<size_t>(t)], ll.flags,
                               t, current.p_es[t], current.q_es[t]);
        const conic::WarmStart ws = warm_from(cleared[static_cast<size_t>(t)]);
        conic::WarmStart dstart = lld::dual_start_from_primal(ll, ws, d);
        conic::SolveResult r = conic::solve_conic(d.prog, cfg.conic, &dstart);
        if (r.status != conic::SolveStatus::optimal) lr.dual.ok = false;
        const double value = -r.objective;
        lr.dual.value.push_back(value);
        lr.dual.total_value += value;
        lr.dual.iterations += r.iterations;
        const double cost = lr.clearing.cost[static_cast<size_t>(t)];
        lr.dual.max_gap_rel =
            std::max(lr.dual.max_gap_rel,
                     std::abs(cost - value) / std::max(1.0, std::abs(cost)));
      }
      lr.dual.time_ms = ms_since(t0);
      if (!lr.dual.ok) {
        lr.failed_stage = "dual";
        loop_failed = true;
        break;
      }

      // Schedule search over the fixed per-period programs.
      stage = "search";
      t0 = Clock::now();
      pf::Schedule proposed = current;
      if (!cfg.run_search) {
        lr.search.note = "search disabled by configuration";
      } else if (!c.storage) {
        lr.search.note = "case has no storage unit";
      } else {
        lr.search.result = blv::discretized_search(c, s, coeffs, slices,
                                                   current, starts, cfg.search);
        lr.search.ran = true;
        proposed = lr.search.result.schedule;
      }
      double predicted = 0.0;
      if (lr.search.ran) {
        predicted = lr.search.result.profit;
      } else if (beta >= 0) {
        Eigen::VectorXd lam1(T), lam2(T);
        for (int t = 0; t < T; ++t) {
          const auto& ll = programs[static_cast<size_t>(t)];
          const auto& y = cleared[static_cast<size_t>(t)].y;
          lam1[t] = y[static_cast<size_t>(ll.row_bal_p[beta])];
          lam2[t] = y[static_cast<size_t>(ll.row_bal_q[beta])];
        }
        predicted =
            blv::evaluate_profit(current, lam1, lam2, cfg.search.profit);
      }
      lr.search.time_ms = ms_since(t0);

      pf::Schedule next = proposed;
      if (cfg.loop_damping != 1.0 && c.storage) {
        next.p_es =
            current.p_es + cfg.loop_damping * (proposed.p_es - current.p_es);
        next.q_es =
            current.q_es + cfg.loop_damping * (proposed.q_es - current.q_es);
        const auto violations =
            blv::storage_feasible(blv::expand_schedule(next, *c.storage),
                                  *c.storage);
        if (!violations.empty()) {
          next = proposed;
          lr.note = "damped schedule left the storage envelope; kept the "
                    "undamped one";
        }
      }
      lr.schedule_out = next;

      // Exact verification of the outgoing schedule under the chosen limits.
      stage = "verify";
      t0 = Clock::now();
      std::vector<pf::OpfWarmStart> vwarm;
      vwarm.reserve(static_cast<size_t>(T));
      for (const auto& r : op_results)
        vwarm.push_back({r.v, r.theta, r.pg, r.qg});
      VerifyDetail vd = verify_detail(c, s, next, slices, cfg.opf,
                                      cfg.search.profit, &vwarm);
      lr.verify.record = std::move(vd.record);
      lr.verify.profit_predicted = predicted;
      lr.verify.profit_gap_rel =
          std::abs(predicted - lr.verify.record.profit_exact) /
          std::max(std::abs(lr.verify.record.profit_exact), 1e-9);
      lr.verify.time_ms = ms_since(t0);
      if (!lr.verify.record.converged) {
        lr.failed_stage = "verify";
        loop_failed = true;
        break;
      }

      if (!lr.verify.record.overloads.empty() && retries < cfg.max_phi_retries) {
        threshold *= 0.5;
        ++retries;
        continue;
      }

      if (lr.verify.record.overloads.empty()) {
        reuse = std::move(vd.periods);
        have_reuse = true;
      }
      break;
    } catch (const std::exception& e) {
      lr.failed_stage = stage;
      lr.note = e.what();
      loop_failed = true;
      break;
    }
    lr.phi_threshold_used = threshold;
    lr.phi_retries = retries;
    if (loop_failed) {
      lr.ok = false;
      rep.loops.push_back(std::move(lr));
      break;
    }

    lr.schedule_change = schedule_change(lr.schedule_out, lr.schedule_in);
    rep.converged = lr.schedule_change <= cfg.loop_tol;
    current = lr.schedule_out;
    rep.final_schedule = current;
    rep.final_profit_predicted = lr.verify.profit_predicted;
    rep.final_profit_exact = lr.verify.record.profit_exact;
    rep.final_profit_gap_rel = lr.verify.profit_gap_rel;
    rep.loops.push_back(std::move(lr));
    if (rep.converged) break;
  }

  rep.final_soe = c.storage
                      ? blv::expand_schedule(rep.final_schedule, *c.storage).soe
                      : Eigen::VectorXd::Zero(T);
  rep.total_time_ms = ms_since(run_start);
  return rep;
}

}  // namespace gridarb::ppl

#pragma once

#include <vector>

#include "gridarb/conic.hpp"
#include "gridarb/cpsota.hpp"
#include "gridarb/netcase.hpp"
#include "gridarb/pfexact.hpp"

namespace gridarb::lld {

struct DualOptions {
  // Price the shunt draw in the objective at nominal voltage instead of at
  // the squared operating magnitude. Breaks strong duality whenever a shunt
  // bus operates away from 1.0; kept as a switch for comparison runs.
  bool shunt_literal = false;
};

// Explicit dual of one period of the market-clearing approximation: one
// multiplier variable per primal row, bound, and cone; one equality row per
// primal variable's stationarity; the primal cone constraints reappear as
// dual cones. Solved as a minimization of the negated dual objective.
struct LlDual {
  conic::ConicProgram prog;

  std::vector<int> lam_bal_p, lam_bal_q;    // per bus
  std::vector<int> lam_flow_p, lam_flow_q;  // per tuple address
  std::vector<int> pin_chk;                 // per branch, -1 when quadratic
  std::vector<int> chk0, chk1, chk2, chk3;  // per branch, -1 unless quadratic
  std::vector<int> pin_cos;                 // per pair, -1 when quadratic
  std::vector<int> cos0, cos1, cos2;        // per pair, -1 unless quadratic
  std::vector<int> mu_pg_lo, mu_pg_hi;      // per generator
  std::vector<int> mu_qg_lo, mu_qg_hi;      // per generator
  std::vector<int> rate0, rate1, rate2;     // per address, -1 unless limited
  std::vector<int> mu_v_lo, mu_v_hi;        // per bus
  int lam_ref = -1;

  std::vector<int> row_th, row_v;    // per bus
  std::vector<int> row_p, row_q;     // per address
  std::vector<int> row_pg, row_qg;   // per generator; row_pg is -1 when the
                                     // curvature completion absorbs it
  std::vector<int> row_cos;          // per pair
  std::vector<int> row_chk;          // per branch

  cps::FlagSlice flags;          // switches actually applied
  std::vector<int> forced_pin;   // branches pinned for lack of a factor
};

LlDual build_ll_dual(const net::NetworkCase& c, const net::IndexSets& s,
                     const cps::OperatingCoeffs& oc,
                     const cps::FlagSlice& flags, int t, double p_es,
                     double q_es, const DualOptions& opts = {});

// Objective of the maximization form at a point of the dual program.
double dual_objective(const LlDual& d, const std::vector<double>& x);

// Maps the multiplier side of a primal warm start (or of a primal solve
// result repackaged as one) onto the dual program's variables. The primal
// program must have been built with the same flags.
conic::WarmStart dual_start_from_primal(const cps::LlPrimal& ll,
                                        const conic::WarmStart& ws,
                                        const LlDual& d);

}  // namespace gridarb::lld

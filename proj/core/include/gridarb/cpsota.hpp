#pragma once

#include <Eigen/Dense>
#include <vector>

#include "gridarb/conic.hpp"
#include "gridarb/netcase.hpp"

namespace gridarb::cps {

// Voltage magnitudes and angles the approximation is expanded around.
struct OperatingPoint {
  Eigen::VectorXd v_op, theta_op;  // per bus
};

// Admittance projections at the operating angle of one tuple address:
// mutual_p scales the V_i V_j mutual term of the active flow, mutual_q the
// reactive one. The shift angle enters with opposite sign per direction.
struct TupleCoeffs {
  double mutual_p = 0.0;
  double mutual_q = 0.0;
};

// Sum-of-squares factor of the voltage head-room quadratic of one branch,
//   quad(vdi, vdj) = (p1 vdi - p2 vdj)^2 + (p3 vdi)^2,
// taken in the branch's forward orientation. defined is false when the
// factorization does not exist; such branches must use the pinned form.
struct VoltageFactor {
  double p1 = 0.0, p2 = 0.0, p3 = 0.0;
  bool defined = false;
};

struct OperatingCoeffs {
  OperatingPoint op;
  std::vector<TupleCoeffs> tuples;     // per tuple address
  std::vector<VoltageFactor> factors;  // per branch
};

OperatingCoeffs compute_operating_coeffs(const net::NetworkCase& c,
                                         const net::IndexSets& s,
                                         const OperatingPoint& op);

// Voltage head-room requirement of one branch evaluated at a magnitude
// deviation pair, forward orientation.
double voltage_quad(const net::NetworkCase& c, const net::IndexSets& s,
                    const OperatingPoint& op, int e, double vdi, double vdj);

// Per-period switches: quadratic head-room rows versus pinned ones, and
// which directed branch limits are imposed.
struct FlagSlice {
  std::vector<char> quad_voltage;  // per branch
  std::vector<char> quad_cosine;   // per pair
  std::vector<char> limit_on;      // per tuple address
};

FlagSlice all_linear_flags(const net::IndexSets& s);

struct FlagCensus {
  int voltage_quad = 0;
  int cosine_quad = 0;
  int limits = 0;
};

FlagCensus census(const FlagSlice& f);

// One period of the market-clearing approximation as a conic program,
// with variable and row handles for dual extraction. Variable order is
// angles, magnitudes, active flows, reactive flows, active and reactive
// generation, pair cosines, branch head-rooms, then cone auxiliaries.
struct LlPrimal {
  conic::ConicProgram prog;

  std::vector<int> th, vd;              // per bus
  std::vector<int> p_flow, q_flow;      // per tuple address
  std::vector<int> pg, qg;              // per generator
  std::vector<int> cos_hat;             // per pair
  std::vector<int> v_chk;               // per branch

  std::vector<int> w0, w1, w2, w3;      // per branch, -1 unless quadratic
  std::vector<int> f0, f1, f2;          // per pair, -1 unless quadratic
  std::vector<int> u;                   // per address, -1 unless limited

  std::vector<int> row_bal_p, row_bal_q;    // per bus
  std::vector<int> row_flow_p, row_flow_q;  // per address
  std::vector<int> row_vchk_pin;            // per branch, -1 when quadratic
  std::vector<int> row_cos_pin;             // per pair, -1 when quadratic
  std::vector<int> row_w1, row_w2, row_w3, row_w0;  // per branch
  std::vector<int> row_f1, row_f2, row_f0;          // per pair
  std::vector<int> row_u;                           // per address
  std::vector<int> cone_v;                          // per branch
  std::vector<int> cone_c;                          // per pair
  std::vector<int> cone_s;                          // per address
  int row_ref = -1;

  FlagSlice flags;  // switches actually applied
  std::vector<int> forced_pin;  // branches whose quadratic row was dropped
};

// The storage draw is folded into the storage bus balance; it must be zero
// when the case has no storage.
LlPrimal build_ll_primal(const net::NetworkCase& c, const net::IndexSets& s,
                         const OperatingCoeffs& oc, const FlagSlice& flags,
                         int t, double p_es, double q_es);

struct LlSolution {
  Eigen::VectorXd th_delta, v_delta;  // per bus
  Eigen::VectorXd p_flow, q_flow;     // per tuple address
  Eigen::VectorXd pg, qg;             // per generator
  Eigen::VectorXd cos_hat;            // per pair
  Eigen::VectorXd v_chk;              // per branch
  double cost = 0.0;
};

LlSolution unpack_solution(const LlPrimal& ll, const conic::SolveResult& r);

// Largest absolute gaps between the model flows and the exact flows
// evaluated at the shifted voltages.
struct ApproxErrors {
  double max_dp = 0.0;
  double max_dq = 0.0;
};

ApproxErrors flow_approximation_errors(const net::NetworkCase& c,
                                       const net::IndexSets& s,
                                       const OperatingPoint& op,
                                       const LlSolution& sol);

}  // namespace gridarb::cps

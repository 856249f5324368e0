#pragma once

#include <Eigen/Dense>
#include <complex>
#include <vector>

#include "gridarb/netcase.hpp"

namespace gridarb::pf {

// Bus admittance matrix: pi-model branches (series y/tau^2 and end shunts on
// the diagonal, -y e^{+-j sigma}/tau off-diagonal) plus bus shunt devices.
Eigen::MatrixXcd build_admittance_matrix(const net::NetworkCase& c,
                                         const net::IndexSets& s);

struct BranchFlow {
  double p = 0.0;
  double q = 0.0;
  double apparent() const;
};

// Sending-end flow for tuple address a at polar voltages (v, theta).
BranchFlow branch_flow(const net::NetworkCase& c, const net::IndexSets& s, int a,
                       const Eigen::VectorXd& v, const Eigen::VectorXd& theta);

// All 2E sending-end flows, indexed by tuple address.
std::vector<BranchFlow> all_branch_flows(const net::NetworkCase& c,
                                         const net::IndexSets& s,
                                         const Eigen::VectorXd& v,
                                         const Eigen::VectorXd& theta);

enum class BusKind { slack, pv, pq };

// Net injection targets are generation minus load in per unit. v_set is read
// for slack and pv buses, p_set for pv and pq buses, q_set for pq buses.
struct PowerFlowSpec {
  std::vector<BusKind> kind;
  Eigen::VectorXd p_set;
  Eigen::VectorXd q_set;
  Eigen::VectorXd v_set;
  double theta_ref = 0.0;
};

struct PowerFlowOptions {
  double tol = 1e-8;
  int max_iter = 20;
};

struct PowerFlowResult {
  bool converged = false;
  int iterations = 0;
  Eigen::VectorXd v;
  Eigen::VectorXd theta;
  double max_mismatch = 0.0;
  // Infinity-norm mismatch before each Newton step, then at the final point.
  std::vector<double> mismatch_history;
};

// Polar Newton-Raphson with a dense Jacobian and flat start for unset
// magnitudes. Returns iterations == 0 when the start point already meets tol.
PowerFlowResult solve_power_flow(const Eigen::MatrixXcd& ybus,
                                 const PowerFlowSpec& spec,
                                 const PowerFlowOptions& opts = {});

// Residuals of the period-t nodal balance at the given primal point:
// generation minus load, storage draw, shunt draw, and sent line flows.
// Zero at any physically consistent operating point.
void balance_residual(const net::NetworkCase& c, const net::IndexSets& s, int t,
                      const Eigen::VectorXd& v, const Eigen::VectorXd& theta,
                      const Eigen::VectorXd& pg, const Eigen::VectorXd& qg,
                      double p_es, double q_es, Eigen::VectorXd& rp,
                      Eigen::VectorXd& rq);

struct OpfOptions {
  double tol = 1e-6;
  double mu_init = 1.0;
  double mu_shrink = 0.2;
  double mu_min = 1e-9;
  int max_iter = 400;
  bool verbose = false;
};

struct OpfWarmStart {
  Eigen::VectorXd v;
  Eigen::VectorXd theta;
  Eigen::VectorXd pg;
  Eigen::VectorXd qg;
};

struct OpfResult {
  bool converged = false;
  int iterations = 0;
  Eigen::VectorXd v;
  Eigen::VectorXd theta;
  Eigen::VectorXd pg;
  Eigen::VectorXd qg;
  // Nodal prices: marginal cost of one extra unit of load at the bus.
  Eigen::VectorXd price_p;
  Eigen::VectorXd price_q;
  // Multipliers of the active inequality constraints at the solution, all
  // nonnegative. mu_rating is indexed by tuple address and is zero for
  // unrated or relaxed branches.
  Eigen::VectorXd mu_v_lo, mu_v_hi;
  Eigen::VectorXd mu_pg_lo, mu_pg_hi;
  Eigen::VectorXd mu_qg_lo, mu_qg_hi;
  Eigen::VectorXd mu_rating;
  double cost = 0.0;
  double max_balance_violation = 0.0;
  double kkt_residual = 0.0;
  std::vector<BranchFlow> flows;
  // Branches whose rating barrier was dropped because the start point already
  // violated it; empty in normal operation.
  std::vector<int> relaxed_ratings;
};

// Single-period economic dispatch over (theta, v, pg, qg) with nodal balance
// equalities, generator and voltage boxes, and apparent-power branch limits.
// Interior-point log-barrier method with exact second derivatives. Storage
// appears as a fixed draw (p_es, q_es) at its bus.
OpfResult solve_exact_opf(const net::NetworkCase& c, const net::IndexSets& s,
                          int t, double p_es, double q_es,
                          const OpfOptions& opts = {},
                          const OpfWarmStart* warm = nullptr);

// Fixed storage dispatch per period; rows are zero when the case has none.
struct Schedule {
  Eigen::VectorXd p_es;
  Eigen::VectorXd q_es;
};

Schedule zero_schedule(const net::NetworkCase& c);

struct SeriesResult {
  bool converged = false;
  std::vector<OpfResult> periods;
  double total_cost = 0.0;
};

// Solves every period with the given storage schedule, warm-starting each
// period from the previous solution.
SeriesResult solve_exact_series(const net::NetworkCase& c,
                                const net::IndexSets& s, const Schedule& sched,
                                const OpfOptions& opts = {});

// Flags tuple addresses whose loading |S|/s_max is at or above threshold.
// Unrated branches are never flagged.
std::vector<bool> select_phi_flags(const net::NetworkCase& c,
                                   const net::IndexSets& s,
                                   const std::vector<BranchFlow>& flows,
                                   double threshold);

}  // namespace gridarb::pf

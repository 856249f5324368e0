#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "gridarb/conic.hpp"
#include "gridarb/cpsota.hpp"
#include "gridarb/netcase.hpp"
#include "gridarb/pfexact.hpp"

namespace gridarb::blv {

// Single differentiable residual standing in for the perpendicular pair
// x >= 0, y >= 0, x*y = 0: returns x + y - sqrt(x^2 + y^2 + 2 eps^2).
// At eps = 0 the residual is zero exactly on that pair's feasible set.
double smoothed_complementarity(double x, double y, double eps);

// Gradient (d/dx, d/dy) of the eps > 0 form, defined everywhere.
Eigen::Vector2d smoothed_complementarity_gradient(double x, double y,
                                                  double eps);

// Charge/discharge split of a net draw series together with the implied
// state-of-energy path. p_es positive charges the unit.
struct StorageSchedule {
  Eigen::VectorXd p_es, q_es;
  Eigen::VectorXd p_ch, p_dis;  // nonnegative split, p_es = p_ch - p_dis
  Eigen::VectorXd soe;          // state of energy after each period
  std::vector<char> x_p;        // charge indicator, empty = not enforced
};

// Splits the net series and integrates the state of energy from soe_init.
StorageSchedule expand_schedule(const pf::Schedule& sched,
                                const net::StorageUnit& unit);

// Empty iff the balance recursion, energy bounds, apparent-power cap, and
// any x_p exclusivity all hold within tol.
std::vector<std::string> storage_feasible(const StorageSchedule& sched,
                                          const net::StorageUnit& unit,
                                          double tol = 1e-9);

struct ProfitOptions {
  // The default multiplies the draw by the raw balance-row dual, which is
  // the negative of the nodal price, so discharging at a positive price
  // earns revenue. The literal variant feeds the positive price instead
  // and is kept only for comparison runs.
  bool literal_prices = false;
};

// lam1/lam2 are the raw active/reactive balance-row duals at the storage
// bus, one entry per period.
double evaluate_profit(const pf::Schedule& sched, const Eigen::VectorXd& lam1,
                       const Eigen::VectorXd& lam2,
                       const ProfitOptions& opts = {});

// Net active draw candidates: `points` values spanning [-s_max, s_max],
// always containing exactly 0. points <= 1 collapses to {0}.
std::vector<double> candidate_grid(double s_max, int points);

// Reactive draw candidates span [-s_max/sqrt(2), s_max/sqrt(2)] so that
// combining extremes with an active extreme stays on the apparent-power
// boundary. points <= 1 collapses to {0}.
std::vector<double> reactive_grid(double s_max, int points);

struct SearchOptions {
  int grid_points = 7;    // active draw candidates per period
  int q_grid_points = 1;  // 1 keeps the reactive draw at zero
  double profit_tol = 1e-6;  // smallest accepted improvement
  int max_sweeps = 20;
  ProfitOptions profit;
  conic::SolverOptions solver;
};

struct CandidateRecord {
  int sweep = 0;
  int t = 0;
  double p_es = 0.0;
  double q_es = 0.0;
  double profit = 0.0;    // total profit if accepted; 0 when not solved
  bool feasible = false;  // storage path stays within its envelope
  bool solved = false;    // market clearing reached optimality
  bool accepted = false;
};

struct SearchResult {
  pf::Schedule schedule;
  double profit = 0.0;
  // Raw storage-bus duals and clearing cost per period, at the final
  // schedule.
  Eigen::VectorXd lam1, lam2, ll_cost;
  std::vector<double> sweep_profit;  // after each sweep, nondecreasing
  std::vector<CandidateRecord> trace;
  int sweeps = 0;
  bool hit_sweep_limit = false;
  int skipped_solves = 0;  // candidates dropped for clearing failures
};

// Coordinate descent over periods: each step re-clears one period at every
// grid candidate, keeping the best feasible improvement above profit_tol,
// the lowest candidate index winning ties. Coefficients and flags are per
// period and stay fixed throughout. starts may be empty or hold one warm
// start per period for the initial clearing.
SearchResult discretized_search(const net::NetworkCase& c,
                                const net::IndexSets& s,
                                const std::vector<cps::OperatingCoeffs>& coeffs,
                                const std::vector<cps::FlagSlice>& flags,
                                const pf::Schedule& initial,
                                const std::vector<conic::WarmStart>& starts,
                                const SearchOptions& opts = {});

}  // namespace gridarb::blv

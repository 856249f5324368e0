#pragma once

#include <limits>
#include <string>
#include <utility>
#include <vector>

namespace gridarb::conic {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Convex program
//   min  sum_v quad_diag[v] x_v^2 + sum_m weight_m (a_m.x + offset_m)^2
//        + lin_cost.x + cost_constant
//   s.t. rows:  a.x = rhs
//        bounds: lower <= x <= upper  (entries may be infinite; lower < upper)
//        cones:  ||x_tail|| <= x_head for each SOC block, head >= 0
//
// Multiplier conventions, with L = obj + sum_rows y (a.x - rhs):
//   stationarity  grad obj + A^T y + mu_upper - mu_lower - sum_K E_K^T z_K = 0
//   mu >= 0, z_K in the (self-dual) cone, complementarity <x_K, z_K> = 0.
struct ConicProgram {
  struct RankTerm {
    double weight = 0.0;
    std::vector<std::pair<int, double>> coeffs;
    double offset = 0.0;
  };
  struct Row {
    std::vector<std::pair<int, double>> coeffs;
    double rhs = 0.0;
    std::string name;
  };
  struct Cone {
    std::vector<int> members;  // members[0] is the head
    std::string name;
  };

  std::vector<std::string> var_names;
  std::vector<double> lower, upper;
  std::vector<double> quad_diag, lin_cost;
  double cost_constant = 0.0;
  std::vector<RankTerm> rank_terms;
  std::vector<Row> rows;
  std::vector<Cone> cones;

  int add_variable(const std::string& name, double lo = -kInf, double hi = kInf);
  void add_quad_cost(int v, double coeff);
  void add_lin_cost(int v, double coeff);
  void add_squared_cost(double weight, std::vector<std::pair<int, double>> coeffs,
                        double offset);
  int add_equality(std::vector<std::pair<int, double>> coeffs, double rhs,
                   std::string name = {});
  int add_soc(std::vector<int> members, std::string name = {});

  int n_vars() const { return static_cast<int>(var_names.size()); }
  int n_rows() const { return static_cast<int>(rows.size()); }
  int n_cones() const { return static_cast<int>(cones.size()); }

  double objective_value(const std::vector<double>& x) const;
  std::vector<double> objective_gradient(const std::vector<double>& x) const;

  std::vector<std::string> check_invariants() const;  // empty when well formed
  std::string dump() const;  // portable text form, see docs/program-dump.md
};

// Any member may be empty (treated as absent); present vectors must have the
// matching full length.
struct WarmStart {
  std::vector<double> x, y, mu_lower, mu_upper;
  std::vector<std::vector<double>> cone_duals;
};

enum class SolveStatus { optimal, infeasible, max_iter };
const char* to_string(SolveStatus s);

// Relative termination metrics of the last iterate.
struct Residuals {
  double primal = kInf;
  double dual = kInf;
  double gap = kInf;
};

struct SolverOptions {
  double tol = 1e-8;
  int max_iter = 200;
  bool verbose = false;
};

struct SolveResult {
  SolveStatus status = SolveStatus::max_iter;
  std::vector<double> x, y, mu_lower, mu_upper;
  std::vector<std::vector<double>> cone_duals;  // aligned with cone members
  double objective = 0.0;
  int iterations = 0;
  Residuals residuals;
};

SolveResult solve_conic(const ConicProgram& p, const SolverOptions& opts = {},
                        const WarmStart* warm = nullptr);

// Absolute infinity-norm KKT residuals of (p, r), independent of solver internals.
struct KktReport {
  double stationarity = 0.0;
  double primal_feasibility = 0.0;
  double dual_cone_feasibility = 0.0;
  double complementarity = 0.0;
};

KktReport check_kkt(const ConicProgram& p, const SolveResult& r);

}  // namespace gridarb::conic

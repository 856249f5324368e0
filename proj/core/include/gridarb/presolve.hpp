#pragma once

#include <Eigen/Dense>
#include <vector>

#include "gridarb/conic.hpp"
#include "gridarb/cpsota.hpp"
#include "gridarb/netcase.hpp"
#include "gridarb/pfexact.hpp"

namespace gridarb::psv {

struct PresolveOptions {
  // Marginals within this band of zero keep the linear form.
  double marginal_tol = 1e-7;
  // Loading fraction at which a directed branch limit is imposed.
  double phi_threshold = 0.8;
};

// One period's flag choice together with the pin marginals that produced it.
struct PeriodPresolve {
  cps::FlagSlice flags;
  // Shadow value of relaxing the pinned head-room equality, per branch.
  // A positive marginal selects the quadratic head-room form.
  Eigen::VectorXd voltage_marginal;
  // Shadow value of relaxing the pinned cosine equality, per pair. A
  // negative marginal selects the quadratic cosine form.
  Eigen::VectorXd cosine_marginal;
  // Branches whose marginal asked for the quadratic form but whose voltage
  // factor is undefined; they stay pinned.
  std::vector<int> forced_linear;
};

// KKT point of the market approximation assembled in closed form from the
// exact dispatch solution. Requires the operating point inside oc to be the
// opf solution itself. Every row multiplier, bound multiplier, and cone dual
// is filled; for flags chosen by presolve the transferred cone duals are
// feasible and the point passes every solver tolerance unchanged, so the
// solve returns it without moving.
conic::WarmStart transfer_warm_start(const net::NetworkCase& c,
                                     const net::IndexSets& s,
                                     const cps::OperatingCoeffs& oc,
                                     const cps::LlPrimal& ll,
                                     const pf::OpfResult& opf);

// Flag selection for one period from the exact dispatch KKT point: imposes
// limits by loading, builds the all-pinned approximation, transfers the
// exact dual onto it, and reads the pin-row marginals.
PeriodPresolve presolve_period(const net::NetworkCase& c,
                               const net::IndexSets& s,
                               const cps::OperatingCoeffs& oc,
                               const pf::OpfResult& opf, int t, double p_es,
                               double q_es, const PresolveOptions& opts = {});

}  // namespace gridarb::psv

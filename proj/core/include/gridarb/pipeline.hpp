#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "gridarb/bilevel.hpp"
#include "gridarb/conic.hpp"
#include "gridarb/cpsota.hpp"
#include "gridarb/netcase.hpp"
#include "gridarb/pfexact.hpp"
#include "gridarb/presolve.hpp"

namespace gridarb::ppl {

struct PipelineConfig {
  pf::OpfOptions opf;
  conic::SolverOptions conic;
  psv::PresolveOptions presolve;
  blv::SearchOptions search;
  bool run_search = true;
  int loop_max = 1;
  // Largest per-period schedule change regarded as converged.
  double loop_tol = 1e-4;
  // Next loop's schedule = old + damping * (new - old).
  double loop_damping = 1.0;
  // Overloads found by the verification halve the limit threshold and
  // re-run the flagged stages, at most this many times per loop.
  int max_phi_retries = 5;
  // Echoed into the report; reserved for sampling utilities.
  unsigned seed = 0;
};

struct Overload {
  int t = 0;
  int branch = 0;  // dense branch index
  double apparent = 0.0;
  double rating = 0.0;
};

// Exact re-solve with the schedule fixed. Branch limits are enforced only
// where the clearing imposed them, so a draw that overloads an unmodeled
// branch shows up as an overload instead of silently shifting dispatch.
// Overloads are measured against the full ratings. Pure in its inputs.
struct VerificationRecord {
  bool converged = true;
  double total_cost = 0.0;
  std::vector<double> cost;                       // per period
  std::vector<Eigen::VectorXd> price_p, price_q;  // per period, per bus
  std::vector<std::vector<pf::BranchFlow>> flows;  // per period, per address
  double profit_exact = 0.0;  // schedule repriced at the exact duals
  std::vector<Overload> overloads;
  std::vector<std::string> failures;  // per-period solver failures
};

VerificationRecord verify_solution(
    const net::NetworkCase& c, const net::IndexSets& s,
    const pf::Schedule& schedule, const std::vector<cps::FlagSlice>& flags,
    const pf::OpfOptions& opts = {}, const blv::ProfitOptions& profit = {},
    const std::vector<pf::OpfWarmStart>* warm = nullptr);

struct OperatingPointStage {
  bool converged = false;
  double total_cost = 0.0;
  std::vector<double> cost;          // per period
  std::vector<double> price_beta_p;  // storage-bus price per period
  std::vector<double> price_beta_q;
  int iterations = 0;  // summed over periods
  bool reused = false;  // carried from the previous loop's verification
  double time_ms = 0.0;
};

struct FlagStage {
  std::vector<cps::FlagSlice> slices;    // per period
  std::vector<cps::FlagCensus> counts;   // per period
  int forced_linear = 0;  // branches whose quadratic form was undefined
  double time_ms = 0.0;
};

struct ClearingStage {
  bool ok = false;
  double total_cost = 0.0;
  std::vector<double> cost;  // per period
  double max_delta_v = 0.0;
  double max_delta_th = 0.0;
  double max_dp = 0.0;  // worst flow-model gap at the shifted voltages
  double max_dq = 0.0;
  int iterations = 0;
  double time_ms = 0.0;
};

struct DualStage {
  bool ok = false;
  double total_value = 0.0;
  std::vector<double> value;  // per period
  double max_gap_rel = 0.0;   // against the clearing cost, per period
  int iterations = 0;
  double time_ms = 0.0;
};

struct SearchStage {
  bool ran = false;
  std::string note;  // why it did not run, when it did not
  blv::SearchResult result;
  double time_ms = 0.0;
};

struct VerifyStage {
  VerificationRecord record;
  double profit_predicted = 0.0;
  double profit_gap_rel = 0.0;
  double time_ms = 0.0;
};

struct LoopRecord {
  int loop = 0;  // 1-based
  pf::Schedule schedule_in, schedule_out;
  double schedule_change = 0.0;  // infinity norm over both series
  double phi_threshold_used = 0.0;
  int phi_retries = 0;
  OperatingPointStage operating_point;
  FlagStage flags;
  ClearingStage clearing;
  DualStage dual;
  SearchStage search;
  VerifyStage verify;
  bool ok = true;
  std::string failed_stage;  // empty unless a stage failed
  std::string note;          // irregularities that did not fail the loop
};

struct RunReport {
  int schema_version = 1;
  PipelineConfig config;
  std::string case_name;
  int n_bus = 0, n_branch = 0, n_gen = 0, horizon = 0;
  int storage_bus_id = -1;  // original bus id, -1 without storage
  // Labels aligned with dense indices, used by the CSV extracts.
  std::vector<int> bus_ids;
  std::vector<std::string> branch_labels;   // per branch
  std::vector<std::string> pair_labels;     // per unordered pair
  std::vector<std::string> address_labels;  // per directed address
  std::vector<double> branch_ratings;       // per branch, 0 when unrated
  std::vector<LoopRecord> loops;
  bool converged = false;  // schedule change reached loop_tol
  pf::Schedule final_schedule;
  Eigen::VectorXd final_soe;  // after each period; zero without storage
  double final_profit_predicted = 0.0;
  double final_profit_exact = 0.0;
  double final_profit_gap_rel = 0.0;
  double total_time_ms = 0.0;
};

// Runs the full chain: exact operating point, flag selection with warm
// starts, clearing and its dual, the schedule search, and the exact
// verification, looping up to loop_max times with the schedule fixed into
// the next operating point. Stage failures mark the report instead of
// throwing; only invalid inputs throw.
RunReport run_pipeline(const net::NetworkCase& c,
                       const PipelineConfig& cfg = {});

// Deterministic serialization; every timing lives in a key ending in
// "_ms" so byte comparisons can strip them.
std::string report_json(const RunReport& report);

// CSV extracts of the final loop record. Headers documented in the repo.
std::string schedule_csv(const RunReport& report);
std::string prices_csv(const RunReport& report);
std::string flows_csv(const RunReport& report);
std::string flags_csv(const RunReport& report);
std::string search_trace_csv(const RunReport& report);

// Writes report.json plus the five CSV extracts into out_dir.
// Throws std::runtime_error naming the path on I/O failure.
void write_report_files(const RunReport& report, const std::string& out_dir);

// Schedule series as CSV rows "t,p_es,q_es" with a 1-based period column;
// extra columns are ignored, '#' starts a comment, a header row is
// allowed. Every period in [1, horizon] must be covered exactly once.
pf::Schedule read_schedule_csv_text(const std::string& text,
                                    const std::string& origin, int horizon);
pf::Schedule read_schedule_csv_file(const std::string& path, int horizon);

}  // namespace gridarb::ppl

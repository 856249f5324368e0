#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace gridarb::net {

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ValidationError : std::runtime_error {
  explicit ValidationError(std::vector<std::string> v);
  std::vector<std::string> violations;
};

struct Bus {
  int id = 0;
  double v_min = 0.9;
  double v_max = 1.1;
  bool is_reference = false;
};

// Pi-model branch, per unit. Series admittance g + jb, shunt admittances at each
// end, off-nominal tap tau and phase shift sigma on the from side. s_max == 0
// means unrated.
struct Branch {
  int id = 0;
  int from_bus = 0;
  int to_bus = 0;
  double g = 0.0;
  double b = 0.0;
  double g_fr = 0.0;
  double b_fr = 0.0;
  double g_to = 0.0;
  double b_to = 0.0;
  double tau = 1.0;
  double sigma = 0.0;
  double s_max = 0.0;
};

// Quadratic cost c2*Pg^2 + c1*Pg + c0, per-unit power.
struct Generator {
  int id = 0;
  int bus = 0;
  double c2 = 0.0;
  double c1 = 0.0;
  double c0 = 0.0;
  double p_min = 0.0;
  double p_max = 0.0;
  double q_min = 0.0;
  double q_max = 0.0;
};

// p_d/q_d have one entry per period; length == case horizon after validation.
struct Load {
  int id = 0;
  int bus = 0;
  std::vector<double> p_d;
  std::vector<double> q_d;
};

struct Shunt {
  int id = 0;
  int bus = 0;
  double g_sh = 0.0;
  double b_sh = 0.0;
};

// Single storage unit: energy capacity soe_max, apparent-power rating s_max,
// one-way efficiencies, initial state of energy.
struct StorageUnit {
  int bus = 0;
  double soe_max = 0.0;
  double s_max = 0.0;
  double eta_ch = 1.0;
  double eta_dis = 1.0;
  double soe_init = 0.0;
};

struct NetworkCase {
  std::string name;
  double base_mva = 100.0;
  int horizon = 1;
  std::vector<Bus> buses;
  std::vector<Branch> branches;
  std::vector<Generator> generators;
  std::vector<Load> loads;
  std::vector<Shunt> shunts;
  std::optional<StorageUnit> storage;
};

enum class CaseFormat { native_json, matpower_subset };

// Sorts every entity vector by id. Loaders call this; programmatic builders
// should too before build_index_sets.
void normalize_case(NetworkCase& c);

NetworkCase parse_native_json(const std::string& text, const std::string& origin);
NetworkCase parse_matpower(const std::string& text, const std::string& origin);
NetworkCase load_case(const std::string& path, CaseFormat format);
NetworkCase load_case(const std::string& path);  // format from extension: .m / .json

std::string serialize_case(const NetworkCase& c);  // native JSON, round-trips exactly

// Overlays per-period loads from CSV rows "load_id,t,p_d,q_d" with t in 1..T.
// Extends the case horizon to the max t seen; loads absent from the CSV keep
// their period-1 value broadcast over the new horizon.
void apply_load_series_csv(NetworkCase& c, const std::string& csv_text,
                           const std::string& origin);
void apply_load_series_file(NetworkCase& c, const std::string& path);

std::vector<std::string> validate_case(const NetworkCase& c);
void require_valid(const NetworkCase& c);  // throws ValidationError with all violations

// Directed flow tuple. e is the dense branch index, i/j dense bus indices of
// the sending/receiving end for this direction, pair the dense index of the
// unordered-pair entry whose ordered form is (i, j).
struct FlowTuple {
  int e = -1;
  int i = -1;
  int j = -1;
  int pair = -1;
};

// Dense index maps over a validated, normalized case. Tuple address a in
// [0, 2E): a < E is forward tuple a, a >= E is reverse tuple a - E.
struct IndexSets {
  int n_bus = 0;
  int n_branch = 0;
  int n_gen = 0;
  int n_load = 0;
  int n_shunt = 0;
  int n_pair = 0;
  int ref_bus = -1;      // dense index
  int storage_bus = -1;  // dense index, -1 when no storage

  std::map<int, int> bus_index;
  std::map<int, int> branch_index;
  std::map<int, int> gen_index;
  std::map<int, int> load_index;
  std::map<int, int> shunt_index;

  std::vector<FlowTuple> fwd;  // per branch, in branch order
  std::vector<FlowTuple> rev;

  std::vector<std::pair<int, int>> pairs;          // ordered (from, to) of first branch
  std::vector<std::vector<int>> branches_of_pair;  // dense branch indices

  std::vector<std::vector<int>> tuples_at;  // per bus: tuple addresses sent from it
  std::vector<std::vector<int>> gens_at;
  std::vector<std::vector<int>> loads_at;
  std::vector<std::vector<int>> shunts_at;

  const FlowTuple& tuple(int a) const {
    return a < n_branch ? fwd[static_cast<size_t>(a)]
                        : rev[static_cast<size_t>(a - n_branch)];
  }
  int reverse_address(int a) const {
    return a < n_branch ? a + n_branch : a - n_branch;
  }
};

IndexSets build_index_sets(const NetworkCase& c);  // pre: require_valid passed

}  // namespace gridarb::net

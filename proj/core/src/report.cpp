#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gridarb/pipeline.hpp"

namespace gridarb::ppl {
namespace {

using ordered_json = nlohmann::ordered_json;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

ordered_json vec_json(const Eigen::VectorXd& v) {
  ordered_json a = ordered_json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

template <typename T>
ordered_json arr_json(const std::vector<T>& v) {
  ordered_json a = ordered_json::array();
  for (const auto& x : v) a.push_back(x);
  return a;
}

ordered_json schedule_json(const pf::Schedule& s) {
  return {{"p_es", vec_json(s.p_es)}, {"q_es", vec_json(s.q_es)}};
}

ordered_json loop_json(const LoopRecord& lr) {
  ordered_json j;
  j["loop"] = lr.loop;
  j["phi_threshold_used"] = lr.phi_threshold_used;
  j["phi_retries"] = lr.phi_retries;
  j["schedule_in"] = schedule_json(lr.schedule_in);
  j["schedule_out"] = schedule_json(lr.schedule_out);
  j["schedule_change"] = lr.schedule_change;

  ordered_json op;
  op["converged"] = lr.operating_point.converged;
  op["reused"] = lr.operating_point.reused;
  op["total_cost"] = lr.operating_point.total_cost;
  op["cost"] = arr_json(lr.operating_point.cost);
  op["price_beta_p"] = arr_json(lr.operating_point.price_beta_p);
  op["price_beta_q"] = arr_json(lr.operating_point.price_beta_q);
  op["iterations"] = lr.operating_point.iterations;
  op["time_ms"] = lr.operating_point.time_ms;
  j["operating_point"] = std::move(op);

  ordered_json fl;
  ordered_json counts = ordered_json::array();
  for (const auto& cns : lr.flags.counts)
    counts.push_back({{"voltage_quad", cns.voltage_quad},
                      {"cosine_quad", cns.cosine_quad},
                      {"limits", cns.limits}});
  fl["counts"] = std::move(counts);
  fl["forced_linear"] = lr.flags.forced_linear;
  fl["time_ms"] = lr.flags.time_ms;
  j["flags"] = std::move(fl);

  ordered_json cl;
  cl["ok"] = lr.clearing.ok;
  cl["total_cost"] = lr.clearing.total_cost;
  cl["cost"] = arr_json(lr.clearing.cost);
  cl["max_delta_v"] = lr.clearing.max_delta_v;
  cl["max_delta_th"] = lr.clearing.max_delta_th;
  cl["max_flow_gap_p"] = lr.clearing.max_dp;
  cl["max_flow_gap_q"] = lr.clearing.max_dq;
  cl["iterations"] = lr.clearing.iterations;
  cl["time_ms"] = lr.clearing.time_ms;
  j["clearing"] = std::move(cl);

  ordered_json du;
  du["ok"] = lr.dual.ok;
  du["total_value"] = lr.dual.total_value;
  du["value"] = arr_json(lr.dual.value);
  du["max_gap_rel"] = lr.dual.max_gap_rel;
  du["iterations"] = lr.dual.iterations;
  du["time_ms"] = lr.dual.time_ms;
  j["dual"] = std::move(du);

  ordered_json se;
  se["ran"] = lr.search.ran;
  se["note"] = lr.search.note;
  if (lr.search.ran) {
    const auto& r = lr.search.result;
    se["profit"] = r.profit;
    se["sweeps"] = r.sweeps;
    se["hit_sweep_limit"] = r.hit_sweep_limit;
    se["skipped_solves"] = r.skipped_solves;
    se["sweep_profit"] = arr_json(r.sweep_profit);
    se["schedule"] = schedule_json(r.schedule);
    ordered_json trace = ordered_json::array();
    for (const auto& c : r.trace)
      trace.push_back({{"sweep", c.sweep},
                       {"t", c.t + 1},
                       {"p_es", c.p_es},
                       {"q_es", c.q_es},
                       {"profit", c.profit},
                       {"feasible", c.feasible},
                       {"solved", c.solved},
                       {"accepted", c.accepted}});
    se["trace"] = std::move(trace);
  }
  se["time_ms"] = lr.search.time_ms;
  j["search"] = std::move(se);

  ordered_json ve;
  ve["converged"] = lr.verify.record.converged;
  ve["total_cost"] = lr.verify.record.total_cost;
  ve["cost"] = arr_json(lr.verify.record.cost);
  ve["profit_predicted"] = lr.verify.profit_predicted;
  ve["profit_exact"] = lr.verify.record.profit_exact;
  ve["profit_gap_rel"] = lr.verify.profit_gap_rel;
  ordered_json ovl = ordered_json::array();
  for (const auto& o : lr.verify.record.overloads)
    ovl.push_back({{"t", o.t + 1},
                   {"branch", o.branch},
                   {"apparent", o.apparent},
                   {"rating", o.rating}});
  ve["overloads"] = std::move(ovl);
  ve["failures"] = arr_json(lr.verify.record.failures);
  ve["time_ms"] = lr.verify.time_ms;
  j["verify"] = std::move(ve);

  j["ok"] = lr.ok;
  j["failed_stage"] = lr.failed_stage;
  j["note"] = lr.note;
  return j;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << text;
  out.flush();
  if (!out) throw std::runtime_error("write to " + path + " failed");
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw net::ParseError(path + ": cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

[[noreturn]] void fail(const std::string& origin, const std::string& what) {
  throw net::ParseError(origin + ": " + what);
}

}  // namespace

std::string report_json(const RunReport& rep) {
  ordered_json j;
  j["schema_version"] = rep.schema_version;
  j["case"] = {{"name", rep.case_name},
               {"n_bus", rep.n_bus},
               {"n_branch", rep.n_branch},
               {"n_gen", rep.n_gen},
               {"horizon", rep.horizon},
               {"storage_bus_id", rep.storage_bus_id}};
  const PipelineConfig& c = rep.config;
  j["config"] = {{"opf_tol", c.opf.tol},
                 {"conic_tol", c.conic.tol},
                 {"phi_threshold", c.presolve.phi_threshold},
                 {"marginal_tol", c.presolve.marginal_tol},
                 {"grid_points", c.search.grid_points},
                 {"q_grid_points", c.search.q_grid_points},
                 {"profit_tol", c.search.profit_tol},
                 {"max_sweeps", c.search.max_sweeps},
                 {"literal_prices", c.search.profit.literal_prices},
                 {"run_search", c.run_search},
                 {"loop_max", c.loop_max},
                 {"loop_tol", c.loop_tol},
                 {"loop_damping", c.loop_damping},
                 {"max_phi_retries", c.max_phi_retries},
                 {"seed", c.seed}};
  j["labels"] = {{"bus_ids", arr_json(rep.bus_ids)},
                 {"branches", arr_json(rep.branch_labels)},
                 {"pairs", arr_json(rep.pair_labels)},
                 {"addresses", arr_json(rep.address_labels)},
                 {"branch_ratings", arr_json(rep.branch_ratings)}};
  ordered_json loops = ordered_json::array();
  for (const auto& lr : rep.loops) loops.push_back(loop_json(lr));
  j["loops"] = std::move(loops);
  ordered_json res;
  res["converged"] = rep.converged;
  res["loops"] = static_cast<int>(rep.loops.size());
  res["final_profit_predicted"] = rep.final_profit_predicted;
  res["final_profit_exact"] = rep.final_profit_exact;
  res["final_profit_gap_rel"] = rep.final_profit_gap_rel;
  ordered_json sched = schedule_json(rep.final_schedule);
  sched["soe"] = vec_json(rep.final_soe);
  res["schedule"] = std::move(sched);
  j["result"] = std::move(res);
  j["total_time_ms"] = rep.total_time_ms;
  return j.dump(2) + "\n";
}

std::string schedule_csv(const RunReport& rep) {
  std::string out = "t,p_es,q_es,soe\n";
  const pf::Schedule& s = rep.final_schedule;
  for (Eigen::Index t = 0; t < s.p_es.size(); ++t) {
    const double soe = t < rep.final_soe.size() ? rep.final_soe[t] : 0.0;
    out += std::to_string(t + 1) + "," + fmt(s.p_es[t]) + "," +
           fmt(s.q_es[t]) + "," + fmt(soe) + "\n";
  }
  return out;
}

std::string prices_csv(const RunReport& rep) {
  std::string out = "t,bus,price_p,price_q\n";
  if (rep.loops.empty()) return out;
  const VerificationRecord& rec = rep.loops.back().verify.record;
  for (size_t t = 0; t < rec.price_p.size(); ++t) {
    const Eigen::VectorXd& pp = rec.price_p[t];
    const Eigen::VectorXd& pq = rec.price_q[t];
    for (Eigen::Index b = 0; b < pp.size(); ++b)
      out += std::to_string(t + 1) + "," +
             std::to_string(rep.bus_ids[static_cast<size_t>(b)]) + "," +
             fmt(pp[b]) + "," + fmt(pq[b]) + "\n";
  }
  return out;
}

std::string flows_csv(const RunReport& rep) {
  std::string out = "t,address,p,q,apparent,rating\n";
  if (rep.loops.empty()) return out;
  const VerificationRecord& rec = rep.loops.back().verify.record;
  const int E = rep.n_branch;
  for (size_t t = 0; t < rec.flows.size(); ++t) {
    const auto& flows = rec.flows[t];
    for (size_t a = 0; a < flows.size(); ++a)
      out += std::to_string(t + 1) + "," + rep.address_labels[a] + "," +
             fmt(flows[a].p) + "," + fmt(flows[a].q) + "," +
             fmt(flows[a].apparent()) + "," +
             fmt(rep.branch_ratings[a % static_cast<size_t>(E)]) + "\n";
  }
  return out;
}

std::string flags_csv(const RunReport& rep) {
  std::string out = "t,kind,label,value\n";
  if (rep.loops.empty()) return out;
  const auto& slices = rep.loops.back().flags.slices;
  for (size_t t = 0; t < slices.size(); ++t) {
    const cps::FlagSlice& f = slices[t];
    const std::string ts = std::to_string(t + 1);
    for (size_t e = 0; e < f.quad_voltage.size(); ++e)
      out += ts + ",quad_voltage," + rep.branch_labels[e] + "," +
             std::to_string(static_cast<int>(f.quad_voltage[e])) + "\n";
    for (size_t p = 0; p < f.quad_cosine.size(); ++p)
      out += ts + ",quad_cosine," + rep.pair_labels[p] + "," +
             std::to_string(static_cast<int>(f.quad_cosine[p])) + "\n";
    for (size_t a = 0; a < f.limit_on.size(); ++a)
      out += ts + ",limit_on," + rep.address_labels[a] + "," +
             std::to_string(static_cast<int>(f.limit_on[a])) + "\n";
  }
  return out;
}

std::string search_trace_csv(const RunReport& rep) {
  std::string out = "sweep,t,p_es,q_es,profit,feasible,solved,accepted\n";
  if (rep.loops.empty() || !rep.loops.back().search.ran) return out;
  for (const auto& c : rep.loops.back().search.result.trace)
    out += std::to_string(c.sweep) + "," + std::to_string(c.t + 1) + "," +
           fmt(c.p_es) + "," + fmt(c.q_es) + "," + fmt(c.profit) + "," +
           std::to_string(static_cast<int>(c.feasible)) + "," +
           std::to_string(static_cast<int>(c.solved)) + "," +
           std::to_string(static_cast<int>(c.accepted)) + "\n";
  return out;
}

void write_report_files(const RunReport& rep, const std::string& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec)
    throw std::runtime_error("cannot create directory " + out_dir + ": " +
                             ec.message());
  const std::filesystem::path dir(out_dir);
  write_text_file((dir / "report.json").string(), report_json(rep));
  write_text_file((dir / "schedule.csv").string(), schedule_csv(rep));
  write_text_file((dir / "prices.csv").string(), prices_csv(rep));
  write_text_file((dir / "flows.csv").string(), flows_csv(rep));
  write_text_file((dir / "flags.csv").string(), flags_csv(rep));
  write_text_file((dir / "search_trace.csv").string(), search_trace_csv(rep));
}

pf::Schedule read_schedule_csv_text(const std::string& text,
                                    const std::string& origin, int horizon) {
  if (horizon < 1) throw std::invalid_argument("horizon must be >= 1");
  std::map<int, std::pair<double, double>> rows;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r,") == std::string::npos) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    std::string a, p, q;
    if (!(ls >> a >> p >> q))
      fail(origin, "line " + std::to_string(lineno) + ": expected at least 3 fields");
    if (lineno == 1 && !std::isdigit(static_cast<unsigned char>(a[0])) &&
        a[0] != '-')
      continue;  // header row
    try {
      const int t = std::stoi(a);
      if (t < 1 || t > horizon)
        fail(origin, "line " + std::to_string(lineno) + ": period " +
                         std::to_string(t) + " outside 1.." +
                         std::to_string(horizon));
      if (!rows.emplace(t, std::make_pair(std::stod(p), std::stod(q))).second)
        fail(origin, "line " + std::to_string(lineno) + ": duplicate period " +
                         std::to_string(t));
    } catch (const net::ParseError&) {
      throw;
    } catch (const std::exception&) {
      fail(origin, "line " + std::to_string(lineno) + ": malformed number");
    }
  }
  pf::Schedule s;
  s.p_es = Eigen::VectorXd::Zero(horizon);
  s.q_es = Eigen::VectorXd::Zero(horizon);
  for (int t = 1; t <= horizon; ++t) {
    auto it = rows.find(t);
    if (it == rows.end())
      fail(origin, "missing period " + std::to_string(t));
    s.p_es[t - 1] = it->second.first;
    s.q_es[t - 1] = it->second.second;
  }
  return s;
}

pf::Schedule read_schedule_csv_file(const std::string& path, int horizon) {
  return read_schedule_csv_text(read_text_file(path), path, horizon);
}

}  // namespace gridarb::ppl
